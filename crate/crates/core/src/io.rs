//! Sequence directories and KITTI-style text files.
//!
//! A sequence directory holds:
//!
//! * `calib.txt`: `P2:` with the 12 entries of the 3x4 projection matrix,
//!   optional `image_size: W H` and optional `ground: nx ny nz d` (world
//!   frame, normal pointing up, `n . X + d = 0`).
//! * `poses.txt`: one camera-to-world 3x4 matrix per frame, row-major.
//! * `times.txt` (optional): one timestamp per frame in seconds.
//! * `detections.txt`: KITTI tracking lines with a trailing score and an
//!   optional appearance histogram after it.
//! * `proposals.txt` (optional, see [`PROPOSAL_HEADER`]).
//! * `labels.txt` (optional): KITTI tracking ground truth.
//!
//! 3D locations in all files are bottom centers in the camera frame of the
//! respective frame; they are converted to world coordinates on read.
//! Orientation is not estimated, so `alpha` and `rotation_y` are written as 0.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{BBox2D, CameraIntrinsics, EgoPose, GroundPlane, Size3};
use crate::metrics::{GtFrame, GtTrajectory};
use crate::observations::{Category, Detection2D, FrameContext, Observation, Proposal3D};
use crate::tracker::{FrameReport, ReportedTrack};

pub const CALIB_FILE: &str = "calib.txt";
pub const POSES_FILE: &str = "poses.txt";
pub const TIMES_FILE: &str = "times.txt";
pub const DETECTIONS_FILE: &str = "detections.txt";
pub const PROPOSALS_FILE: &str = "proposals.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const RESULTS_FILE: &str = "results.txt";

/// First line of a proposal file. Each following line reads
/// `frame x y z vx vy vz w h l score n id_1 .. id_n`, location in camera
/// coordinates; velocity components are `nan` when scene flow is missing.
pub const PROPOSAL_HEADER: &str = "# proposals v1";

const DEFAULT_IMAGE_SIZE: (f64, f64) = (1242.0, 375.0);
const DEFAULT_CAMERA_HEIGHT: f64 = 1.65;

/// Everything the tracker consumes for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub contexts: Vec<FrameContext>,
    pub detections: Vec<Vec<Detection2D>>,
    /// `None` when the sequence has no proposal file; every observation is
    /// then partial.
    pub proposals: Option<Vec<Vec<Proposal3D>>>,
}

impl Sequence {
    pub fn frames(&self) -> usize {
        self.contexts.len()
    }

    pub fn proposals_at(&self, frame: usize) -> &[Proposal3D] {
        self.proposals.as_ref().map_or(&[], |p| &p[frame])
    }
}

fn fmt(v: f64) -> String {
    // avoid "-0.000000" so equal values always print equally
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_owned()
    } else {
        s
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Whitespace-separated fields of one line with positioned error reporting.
struct Fields<'a> {
    path: &'a Path,
    line: usize,
    tokens: Vec<&'a str>,
    next: usize,
}

impl<'a> Fields<'a> {
    fn new(path: &'a Path, line: usize, text: &'a str) -> Self {
        Self {
            path,
            line,
            tokens: text.split_whitespace().collect(),
            next: 0,
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn remaining(&self) -> usize {
        self.tokens.len() - self.next
    }

    fn token(&mut self, what: &str) -> Result<&'a str> {
        let t = self
            .tokens
            .get(self.next)
            .copied()
            .ok_or_else(|| self.error(format!("missing field `{what}`")))?;
        self.next += 1;
        Ok(t)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let t = self.token(what)?;
        t.parse().map_err(|_| self.error(format!("`{what}` is not a number: `{t}`")))
    }

    fn finite(&mut self, what: &str) -> Result<f64> {
        let v = self.f64(what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.error(format!("`{what}` must be finite")))
        }
    }

    fn int<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let t = self.token(what)?;
        t.parse().map_err(|_| self.error(format!("`{what}` is not an integer: `{t}`")))
    }

    fn end(&self) -> Result<()> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(self.error(format!("{} unexpected trailing fields", self.remaining())))
        }
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub intrinsics: CameraIntrinsics,
    /// Ground plane in world coordinates.
    pub plane: GroundPlane,
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = read_text(path)?;
    let mut p2 = None;
    let mut size = DEFAULT_IMAGE_SIZE;
    let mut plane = GroundPlane::below_camera(DEFAULT_CAMERA_HEIGHT);
    for (line, content) in content_lines(&text) {
        let mut f = Fields::new(path, line, content);
        match f.token("key")? {
            "P2:" => {
                let mut m = [0.0; 12];
                for (i, v) in m.iter_mut().enumerate() {
                    *v = f.finite(&format!("P2[{i}]"))?;
                }
                f.end()?;
                if m[0] != m[5] {
                    return Err(f.error("fx and fy must be equal"));
                }
                p2 = Some((m[0], m[2], m[6], line));
            }
            "image_size:" => {
                size = (f.finite("width")?, f.finite("height")?);
                f.end()?;
            }
            "ground:" => {
                let n = Vector3::new(f.finite("nx")?, f.finite("ny")?, f.finite("nz")?);
                let d = f.finite("d")?;
                f.end()?;
                plane = GroundPlane::new(n, d).map_err(|e| f.error(e.to_string()))?;
            }
            // other KITTI keys (P0, R_rect, Tr_velo_cam, ...) are irrelevant here
            _ => {}
        }
    }
    let (focal, u0, v0, line) = p2.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "missing `P2:` entry".into(),
    })?;
    let intrinsics = CameraIntrinsics::new(focal, u0, v0, size.0, size.1).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    })?;
    Ok(Calibration { intrinsics, plane })
}

pub fn write_calibration(path: &Path, calib: &Calibration) -> Result<()> {
    let k = &calib.intrinsics;
    let p2 = [k.f, 0.0, k.u0, 0.0, 0.0, k.f, k.v0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let n = calib.plane.normal;
    let text = format!(
        "P2: {}\nimage_size: {} {}\nground: {} {} {} {}\n",
        p2.map(fmt).join(" "),
        fmt(k.image_width),
        fmt(k.image_height),
        fmt(n.x),
        fmt(n.y),
        fmt(n.z),
        fmt(calib.plane.offset)
    );
    write_text(path, &text)
}

/// Camera-to-world poses, one 3x4 row-major matrix per line.
pub fn read_poses(path: &Path) -> Result<Vec<EgoPose>> {
    let text = read_text(path)?;
    content_lines(&text)
        .map(|(line, content)| {
            let mut f = Fields::new(path, line, content);
            let mut m = [0.0; 12];
            for (i, v) in m.iter_mut().enumerate() {
                *v = f.finite(&format!("pose[{i}]"))?;
            }
            f.end()?;
            let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
            let c = Vector3::new(m[3], m[7], m[11]);
            if (r.transpose() * r - Matrix3::identity()).amax() > ROTATION_TOLERANCE || r.determinant() <= 0.0 {
                return Err(f.error("rotation must be orthonormal with determinant +1"));
            }
            let pose = EgoPose::from_camera_to_world(nearest_rotation(&r), c);
            pose.validate().map_err(|e| f.error(e.to_string()))?;
            Ok(pose)
        })
        .collect()
}

/// Rotations in text files carry rounding error; anything closer than this
/// to orthonormal is projected back onto a rotation.
const ROTATION_TOLERANCE: f64 = 1e-4;

fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    u * v_t
}

pub fn write_poses(path: &Path, poses: &[EgoPose]) -> Result<()> {
    let mut text = String::new();
    for pose in poses {
        let inv = pose.inverse();
        let (r, c) = (inv.rotation, inv.translation);
        let vals = [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            c.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            c.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            c.z,
        ];
        text.push_str(&vals.map(fmt).join(" "));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_times(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    content_lines(&text)
        .map(|(line, content)| {
            let mut f = Fields::new(path, line, content);
            let t = f.finite("timestamp")?;
            f.end()?;
            Ok(t)
        })
        .collect()
}

/// Camera contexts for every frame of a sequence directory. Without
/// `times.txt` frames are assumed to be 0.1 s apart.
pub fn read_contexts(dir: &Path) -> Result<Vec<FrameContext>> {
    let calib = read_calibration(&dir.join(CALIB_FILE))?;
    let poses = read_poses(&dir.join(POSES_FILE))?;
    let times_path = dir.join(TIMES_FILE);
    let times = if times_path.exists() {
        let t = read_times(&times_path)?;
        if t.len() != poses.len() {
            return Err(Error::FrameMisalignment(format!(
                "{} timestamps for {} poses",
                t.len(),
                poses.len()
            )));
        }
        t
    } else {
        (0..poses.len()).map(|i| i as f64 * 0.1).collect()
    };
    if let Some(w) = times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::Parse {
            path: times_path,
            line: w + 2,
            message: "timestamps must be strictly increasing".into(),
        });
    }
    Ok(poses
        .into_iter()
        .zip(times)
        .enumerate()
        .map(|(i, (ego, timestamp))| FrameContext {
            frame: i as u32,
            timestamp,
            intrinsics: calib.intrinsics,
            ego,
            plane: calib.plane,
        })
        .collect())
}

pub fn write_contexts(dir: &Path, contexts: &[FrameContext]) -> Result<()> {
    let first = contexts
        .first()
        .ok_or_else(|| Error::invalid("contexts", "a sequence needs at least one frame"))?;
    write_calibration(
        &dir.join(CALIB_FILE),
        &Calibration {
            intrinsics: first.intrinsics,
            plane: first.plane,
        },
    )?;
    let poses: Vec<EgoPose> = contexts.iter().map(|c| c.ego).collect();
    write_poses(&dir.join(POSES_FILE), &poses)?;
    let times: String = contexts.iter().map(|c| format!("{}\n", fmt(c.timestamp))).collect();
    write_text(&dir.join(TIMES_FILE), &times)
}

fn frame_index(f: &Fields<'_>, frame: i64, frames: usize) -> Result<usize> {
    usize::try_from(frame)
        .ok()
        .filter(|&i| i < frames)
        .ok_or_else(|| f.error(format!("frame {frame} outside the sequence (0..{frames})")))
}

/// The common KITTI prefix: frame, id, type, truncated, occluded, alpha,
/// box corners, dimensions (h w l), location, rotation_y.
struct KittiLine {
    frame: i64,
    id: i64,
    category: Option<Category>,
    truncated: f64,
    occluded: f64,
    bbox: BBox2D,
    size: Size3,
    location: Vector3<f64>,
}

fn parse_kitti(f: &mut Fields<'_>) -> Result<KittiLine> {
    let frame = f.int("frame")?;
    let id = f.int("id")?;
    // DontCare, Van, Truck, ... are not tracked
    let category = f.token("type")?.parse().ok();
    let truncated = f.finite("truncated")?;
    let occluded = f.finite("occluded")?;
    f.finite("alpha")?;
    let (l, t, r, b) = (f.finite("left")?, f.finite("top")?, f.finite("right")?, f.finite("bottom")?);
    let (h, w, len) = (f.finite("height")?, f.finite("width")?, f.finite("length")?);
    let location = Vector3::new(f.finite("x")?, f.finite("y")?, f.finite("z")?);
    f.finite("rotation_y")?;
    let bbox = BBox2D::from_corners(l, t, r, b);
    if category.is_some() && !bbox.is_valid() {
        return Err(f.error("box corners must satisfy left < right and top < bottom"));
    }
    Ok(KittiLine {
        frame,
        id,
        category,
        truncated,
        occluded,
        bbox,
        size: Size3::new(w, h, len),
        location,
    })
}

fn kitti_line(
    frame: u32,
    id: i64,
    category: Category,
    truncated: &str,
    occluded: &str,
    bbox: &BBox2D,
    size: &Size3,
    location: &Vector3<f64>,
) -> String {
    format!(
        "{frame} {id} {} {truncated} {occluded} 0 {} {} {} {} {} {} {} {} {} {} 0",
        category.kitti_name(),
        fmt(bbox.left()),
        fmt(bbox.top()),
        fmt(bbox.right()),
        fmt(bbox.bottom()),
        fmt(size.h),
        fmt(size.w),
        fmt(size.l),
        fmt(location.x),
        fmt(location.y),
        fmt(location.z),
    )
}

pub fn read_detections(path: &Path, frames: usize) -> Result<Vec<Vec<Detection2D>>> {
    let text = read_text(path)?;
    let mut out = vec![Vec::new(); frames];
    for (line, content) in content_lines(&text) {
        let mut f = Fields::new(path, line, content);
        let k = parse_kitti(&mut f)?;
        let score = f.finite("score")?;
        let appearance = (f.remaining() > 0)
            .then(|| (0..f.remaining()).map(|i| f.finite(&format!("appearance[{i}]"))).collect::<Result<Vec<_>>>())
            .transpose()?;
        let Some(category) = k.category else { continue };
        let frame = frame_index(&f, k.frame, frames)?;
        let mut det = Detection2D::new(k.bbox, category, score);
        det.appearance = appearance;
        det.validate().map_err(|e| f.error(e.to_string()))?;
        out[frame].push(det);
    }
    Ok(out)
}

pub fn write_detections(path: &Path, detections: &[Vec<Detection2D>]) -> Result<()> {
    let mut text = String::new();
    for (frame, dets) in detections.iter().enumerate() {
        for d in dets {
            let line = kitti_line(
                frame as u32,
                -1,
                d.category,
                "-1",
                "-1",
                &d.bbox,
                &Size3::new(-1.0, -1.0, -1.0),
                &Vector3::new(-1000.0, -1000.0, -1000.0),
            );
            text.push_str(&line);
            write!(text, " {}", fmt(d.score)).expect("writing to a string");
            for a in d.appearance.iter().flatten() {
                write!(text, " {}", fmt(*a)).expect("writing to a string");
            }
            text.push('\n');
        }
    }
    write_text(path, &text)
}

pub fn read_proposals(path: &Path, contexts: &[FrameContext]) -> Result<Vec<Vec<Proposal3D>>> {
    let text = read_text(path)?;
    let header = text.lines().next().map(str::trim);
    if header != Some(PROPOSAL_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{PROPOSAL_HEADER}`"),
        });
    }
    let mut out = vec![Vec::new(); contexts.len()];
    for (line, content) in content_lines(&text) {
        let mut f = Fields::new(path, line, content);
        let frame: i64 = f.int("frame")?;
        let frame = frame_index(&f, frame, contexts.len())?;
        let ctx = &contexts[frame];
        let cam = Vector3::new(f.finite("x")?, f.finite("y")?, f.finite("z")?);
        let vel = Vector3::new(f.f64("vx")?, f.f64("vy")?, f.f64("vz")?);
        let velocity = if vel.iter().all(|v| v.is_nan()) {
            None
        } else if vel.iter().all(|v| v.is_finite()) {
            Some(ctx.ego.rotation.transpose() * vel)
        } else {
            return Err(f.error("velocity must be three numbers or three `nan`"));
        };
        let size = Size3::new(f.finite("w")?, f.finite("h")?, f.finite("l")?);
        let score = f.finite("score")?;
        let n: usize = f.int("point count")?;
        let points = (0..n).map(|i| f.int(&format!("point[{i}]"))).collect::<Result<Vec<u32>>>()?;
        f.end()?;
        let prop = Proposal3D::new(ctx.ego.camera_to_world(&cam), velocity, size, score, points);
        prop.validate(&ctx.plane).map_err(|e| f.error(e.to_string()))?;
        out[frame].push(prop);
    }
    Ok(out)
}

pub fn write_proposals(path: &Path, proposals: &[Vec<Proposal3D>], contexts: &[FrameContext]) -> Result<()> {
    let mut text = format!("{PROPOSAL_HEADER}\n");
    for ((frame, props), ctx) in proposals.iter().enumerate().zip(contexts) {
        for p in props {
            let cam = ctx.ego.world_to_camera(&p.position);
            let vel = match p.velocity {
                Some(v) => (ctx.ego.rotation * v).map(fmt).iter().cloned().collect::<Vec<_>>().join(" "),
                None => "nan nan nan".to_owned(),
            };
            let ids: Vec<String> = p.points().iter().map(u32::to_string).collect();
            writeln!(
                text,
                "{frame} {} {} {} {vel} {} {} {} {} {}{}{}",
                fmt(cam.x),
                fmt(cam.y),
                fmt(cam.z),
                fmt(p.size.w),
                fmt(p.size.h),
                fmt(p.size.l),
                fmt(p.score),
                ids.len(),
                if ids.is_empty() { "" } else { " " },
                ids.join(" ")
            )
            .expect("writing to a string");
        }
    }
    write_text(path, &text)
}

/// Reads a sequence directory. A missing proposal file yields
/// `proposals = None`; a missing detection file counts as empty.
pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let contexts = read_contexts(dir)?;
    let det_path = dir.join(DETECTIONS_FILE);
    let detections = if det_path.exists() {
        read_detections(&det_path, contexts.len())?
    } else {
        vec![Vec::new(); contexts.len()]
    };
    let prop_path = dir.join(PROPOSALS_FILE);
    let proposals = prop_path
        .exists()
        .then(|| read_proposals(&prop_path, &contexts))
        .transpose()?;
    Ok(Sequence {
        contexts,
        detections,
        proposals,
    })
}

pub fn write_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_contexts(dir, &seq.contexts)?;
    write_detections(&dir.join(DETECTIONS_FILE), &seq.detections)?;
    if let Some(props) = &seq.proposals {
        write_proposals(&dir.join(PROPOSALS_FILE), props, &seq.contexts)?;
    }
    Ok(())
}

/// Ground truth. Boxes with `truncated >= 0.5` or `occluded >= 2` are read as
/// invisible (ignored by evaluation).
pub fn read_labels(path: &Path, contexts: &[FrameContext]) -> Result<Vec<GtTrajectory>> {
    let text = read_text(path)?;
    let mut tracks: Vec<GtTrajectory> = Vec::new();
    for (line, content) in content_lines(&text) {
        let mut f = Fields::new(path, line, content);
        let k = parse_kitti(&mut f)?;
        f.end()?;
        let Some(category) = k.category else { continue };
        let frame = frame_index(&f, k.frame, contexts.len())?;
        let id = u64::try_from(k.id).map_err(|_| f.error("ground truth ids must be non-negative"))?;
        let gt = GtFrame {
            frame: frame as u32,
            bbox: k.bbox,
            position: contexts[frame].ego.camera_to_world(&k.location),
            depth: k.location.z,
            visible: k.truncated < 0.5 && k.occluded < 2.0,
        };
        match tracks.iter_mut().find(|t| t.id == id) {
            Some(t) if t.category != category => return Err(f.error(format!("track {id} changes category"))),
            Some(t) => t.frames.push(gt),
            None => tracks.push(GtTrajectory {
                id,
                category,
                frames: vec![gt],
            }),
        }
    }
    for t in &mut tracks {
        t.frames.sort_by_key(|g| g.frame);
        if t.frames.windows(2).any(|w| w[0].frame == w[1].frame) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("track {} has two boxes in one frame", t.id),
            });
        }
    }
    tracks.sort_by_key(|t| t.id);
    Ok(tracks)
}

/// Writes ground truth. `sizes[i]` is the box size of `gt[i]`; missing
/// entries are written as zero.
pub fn write_labels(path: &Path, gt: &[GtTrajectory], sizes: &[Size3], contexts: &[FrameContext]) -> Result<()> {
    let mut rows: Vec<(u32, u64, String)> = Vec::new();
    for (i, t) in gt.iter().enumerate() {
        let size = sizes.get(i).copied().unwrap_or(Size3::new(0.0, 0.0, 0.0));
        for g in &t.frames {
            let ctx = contexts
                .get(g.frame as usize)
                .ok_or_else(|| Error::FrameMisalignment(format!("label frame {} has no pose", g.frame)))?;
            let cam = ctx.ego.world_to_camera(&g.position);
            let (truncated, occluded) = if g.visible { ("0", "0") } else { ("1", "2") };
            let line = kitti_line(g.frame, t.id as i64, t.category, truncated, occluded, &g.bbox, &size, &cam);
            rows.push((g.frame, t.id, line));
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let text: String = rows.into_iter().map(|r| r.2 + "\n").collect();
    write_text(path, &text)
}

/// One KITTI results line per reported track and frame, ordered by frame and
/// track id; the last field is the track score.
pub fn write_results(path: &Path, reports: &[FrameReport], contexts: &[FrameContext]) -> Result<()> {
    let mut text = String::new();
    for report in reports {
        let ctx = contexts
            .iter()
            .find(|c| c.frame == report.frame)
            .ok_or_else(|| Error::FrameMisalignment(format!("report frame {} has no pose", report.frame)))?;
        let mut tracks: Vec<&ReportedTrack> = report.tracks.iter().collect();
        tracks.sort_by_key(|t| (t.track_id, t.hypothesis_id));
        for t in tracks {
            let cam = ctx.ego.world_to_camera(&t.position);
            let line = kitti_line(report.frame, t.track_id as i64, t.category, "-1", "-1", &t.bbox, &t.size, &cam);
            writeln!(text, "{line} {}", fmt(t.score)).expect("writing to a string");
        }
    }
    write_text(path, &text)
}

/// Reads a results file into one report per context frame.
pub fn read_results(path: &Path, contexts: &[FrameContext]) -> Result<Vec<FrameReport>> {
    let text = read_text(path)?;
    let mut reports: Vec<FrameReport> = contexts
        .iter()
        .map(|c| FrameReport {
            frame: c.frame,
            tracks: Vec::new(),
        })
        .collect();
    for (line, content) in content_lines(&text) {
        let mut f = Fields::new(path, line, content);
        let k = parse_kitti(&mut f)?;
        let score = f.finite("score")?;
        f.end()?;
        let Some(category) = k.category else { continue };
        let frame = frame_index(&f, k.frame, contexts.len())?;
        let id = u64::try_from(k.id).map_err(|_| f.error("track ids must be non-negative"))?;
        reports[frame].tracks.push(ReportedTrack {
            hypothesis_id: id,
            track_id: id,
            category,
            bbox: k.bbox,
            position: contexts[frame].ego.camera_to_world(&k.location),
            size: k.size,
            score,
            observation: None,
        });
    }
    Ok(reports)
}

/// `frame detection proposal` per observation, proposal `-1` when partial.
pub fn write_observations(path: &Path, observations: &[Vec<Observation>]) -> Result<()> {
    let mut text = String::from("frame detection proposal\n");
    for (frame, obs) in observations.iter().enumerate() {
        for o in obs {
            let p = o.proposal_index.map_or(-1, |p| p as i64);
            writeln!(text, "{frame} {} {p}", o.detection_index).expect("writing to a string");
        }
    }
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_y;

    fn contexts(n: u32) -> Vec<FrameContext> {
        let intr = CameraIntrinsics::new(721.5, 609.6, 172.9, 1242.0, 375.0).unwrap();
        (0..n)
            .map(|i| FrameContext {
                frame: i,
                timestamp: f64::from(i) * 0.1,
                intrinsics: intr,
                ego: EgoPose::from_camera_to_world(
                    rotation_y(0.02 * f64::from(i)),
                    Vector3::new(0.1 * f64::from(i), 0.0, 1.0 * f64::from(i)),
                ),
                plane: GroundPlane::below_camera(1.65),
            })
            .collect()
    }

    fn sample_sequence() -> Sequence {
        let ctx = contexts(3);
        let det = |x: f64| Detection2D::new(BBox2D::new(x, 200.0, 40.0, 30.0), Category::Car, 0.8);
        let plane = ctx[0].plane;
        let prop = |x: f64, vel: Option<Vector3<f64>>| {
            Proposal3D::new(plane.project(&Vector3::new(x, 0.0, 15.0)), vel, Size3::new(1.6, 1.5, 3.9), 0.7, vec![1, 2, 3])
        };
        Sequence {
            contexts: ctx,
            detections: vec![
                vec![det(300.0), det(500.0).with_appearance(vec![0.25; 4])],
                vec![],
                vec![det(310.0)],
            ],
            proposals: Some(vec![
                vec![prop(1.0, Some(Vector3::new(0.5, 0.0, 1.0)))],
                vec![prop(2.0, None)],
                vec![],
            ]),
        }
    }

    fn assert_close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }

    #[test]
    fn corners_convert_to_center_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        fs::write(&path, "0 -1 Car 0 0 0 0 0 10 20 -1 -1 -1 -1000 -1000 -1000 0 0.9\n").unwrap();
        let dets = read_detections(&path, 1).unwrap();
        assert_eq!(dets[0][0].bbox, BBox2D::new(5.0, 10.0, 10.0, 20.0));
    }

    #[test]
    fn sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seq = sample_sequence();
        write_sequence(dir.path(), &seq).unwrap();
        let back = read_sequence(dir.path()).unwrap();
        assert_eq!(back.frames(), 3);
        for (a, b) in seq.contexts.iter().zip(&back.contexts) {
            assert_close(a.timestamp, b.timestamp);
            assert!((a.ego.rotation - b.ego.rotation).amax() < 1e-6);
            assert!((a.ego.translation - b.ego.translation).amax() < 1e-5);
            assert_eq!(a.intrinsics, b.intrinsics);
        }
        for (fa, fb) in seq.detections.iter().zip(&back.detections) {
            assert_eq!(fa.len(), fb.len());
            for (a, b) in fa.iter().zip(fb) {
                assert_close(a.bbox.x, b.bbox.x);
                assert_close(a.bbox.h, b.bbox.h);
                assert_eq!(a.appearance.is_some(), b.appearance.is_some());
            }
        }
        let (pa, pb) = (seq.proposals.unwrap(), back.proposals.unwrap());
        for (fa, fb) in pa.iter().zip(&pb) {
            assert_eq!(fa.len(), fb.len());
            for (a, b) in fa.iter().zip(fb) {
                assert!((a.position - b.position).amax() < 1e-5);
                assert_eq!(a.velocity.is_some(), b.velocity.is_some());
                if let (Some(va), Some(vb)) = (a.velocity, b.velocity) {
                    assert!((va - vb).amax() < 1e-5);
                }
                assert_eq!(a.points(), b.points());
            }
        }
    }

    #[test]
    fn reread_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &sample_sequence()).unwrap();
        let once = read_sequence(dir.path()).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        write_sequence(dir2.path(), &once).unwrap();
        for file in [CALIB_FILE, POSES_FILE, TIMES_FILE, DETECTIONS_FILE, PROPOSALS_FILE] {
            assert_eq!(
                fs::read_to_string(dir.path().join(file)).unwrap(),
                fs::read_to_string(dir2.path().join(file)).unwrap(),
                "{file}"
            );
        }
    }

    #[test]
    fn missing_proposals_and_empty_detections() {
        let dir = tempfile::tempdir().unwrap();
        let mut seq = sample_sequence();
        seq.proposals = None;
        seq.detections = vec![vec![]; 3];
        write_sequence(dir.path(), &seq).unwrap();
        let back = read_sequence(dir.path()).unwrap();
        assert!(back.proposals.is_none());
        assert!(back.detections.iter().all(Vec::is_empty));
        assert!(back.proposals_at(1).is_empty());
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &sample_sequence()).unwrap();
        let path = dir.path().join(DETECTIONS_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("2 -1 Car 0 0 0 1 2 three 4 -1 -1 -1 0 0 0 0 0.5\n");
        fs::write(&path, text).unwrap();
        match read_sequence(dir.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("right"));
            }
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&path, "7 -1 Car 0 0 0 1 2 3 4 -1 -1 -1 0 0 0 0 0.5\n").unwrap();
        assert!(matches!(read_sequence(dir.path()), Err(Error::Parse { line: 1, .. })));
        fs::write(dir.path().join(PROPOSALS_FILE), "0 1 2 3\n").unwrap();
        fs::write(&path, "").unwrap();
        assert!(matches!(read_sequence(dir.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn rounded_rotations_are_repaired_and_skewed_ones_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(POSES_FILE);
        fs::write(&path, "0.999998 0 0.001999 1 0 1 0 0 -0.001999 0 0.999998 2\n").unwrap();
        let pose = read_poses(&path).unwrap()[0];
        assert!((pose.rotation.transpose() * pose.rotation - Matrix3::identity()).amax() < 1e-12);
        fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1.1 0\n").unwrap();
        assert!(matches!(read_poses(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn unknown_types_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        fs::write(&path, "0 -1 DontCare -1 -1 -10 0 0 10 20 -1 -1 -1 -1000 -1000 -1000 -10 0.1\n").unwrap();
        assert!(read_detections(&path, 1).unwrap()[0].is_empty());
    }

    fn report(frame: u32, ids: &[u64]) -> FrameReport {
        FrameReport {
            frame,
            tracks: ids
                .iter()
                .map(|&id| ReportedTrack {
                    hypothesis_id: id + 100,
                    track_id: id,
                    category: Category::Pedestrian,
                    bbox: BBox2D::new(100.0 + id as f64, 150.0, 20.5, 50.25),
                    position: Vector3::new(id as f64, 1.65, 12.0 + f64::from(frame)),
                    size: Size3::new(0.6, 1.75, 0.8),
                    score: -0.3125,
                    observation: None,
                })
                .collect(),
        }
    }

    #[test]
    fn results_round_trip_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RESULTS_FILE);
        let ctx = contexts(2);
        let reports = vec![report(0, &[5, 2]), report(1, &[2])];
        write_results(&path, &reports, &ctx).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let ids: Vec<&str> = text.lines().map(|l| l.split(' ').nth(1).unwrap()).collect();
        assert_eq!(ids, ["2", "5", "2"]);
        assert!(text.lines().all(|l| l.split_whitespace().count() == 18));
        let back = read_results(&path, &ctx).unwrap();
        for (a, b) in reports.iter().zip(&back) {
            for b_track in &b.tracks {
                let a_track = a.tracks.iter().find(|t| t.track_id == b_track.track_id).unwrap();
                assert!((a_track.position - b_track.position).amax() < 1e-5);
                assert_close(a_track.bbox.w, b_track.bbox.w);
                assert_close(a_track.score, b_track.score);
                assert_eq!(a_track.size, b_track.size);
            }
        }
    }

    #[test]
    fn empty_report_gives_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RESULTS_FILE);
        write_results(&path, &[], &contexts(1)).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn results_match_golden_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RESULTS_FILE);
        let ctx = contexts(1);
        let mut r = report(0, &[3]);
        r.tracks[0].position = Vector3::new(-1.5, 1.65, 20.0);
        write_results(&path, &[r], &ctx).unwrap();
        let golden = include_str!("../tests/fixtures/results_golden.txt");
        assert_eq!(fs::read_to_string(&path).unwrap(), golden);
    }

    #[test]
    fn labels_round_trip_with_visibility() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LABELS_FILE);
        let ctx = contexts(2);
        let frame = |f: u32, visible: bool| GtFrame {
            frame: f,
            bbox: BBox2D::new(400.0, 200.0, 50.0, 40.0),
            position: Vector3::new(1.0, 1.65, 12.0),
            depth: ctx[f as usize].depth_of(&Vector3::new(1.0, 1.65, 12.0)),
            visible,
        };
        let gt = vec![GtTrajectory {
            id: 4,
            category: Category::Cyclist,
            frames: vec![frame(0, true), frame(1, false)],
        }];
        write_labels(&path, &gt, &[Size3::new(0.6, 1.7, 1.8)], &ctx).unwrap();
        let back = read_labels(&path, &ctx).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].id, 4);
        assert!(back[0].frames[0].visible && !back[0].frames[1].visible);
        for (a, b) in gt[0].frames.iter().zip(&back[0].frames) {
            assert!((a.position - b.position).amax() < 1e-5);
            assert_close(a.depth, b.depth);
        }
    }
}
