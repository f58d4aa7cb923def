//! Synthetic street scenes with ground truth, ego motion and noisy
//! detections / proposals.
//!
//! Objects stand on a flat ground plane as upright boxes aligned with the
//! world axes. The world frame is the first camera frame, so the ground is
//! `y = camera_height` (y points down).

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_box_hull, rotation_y, BBox2D, CameraIntrinsics, EgoPose, GroundPlane, Size3};
use crate::io::Sequence;
use crate::metrics::{GtFrame, GtTrajectory};
use crate::observations::{normalize_histogram, Category, Detection2D, FrameContext, Proposal3D, SizeStats};

/// Corners closer than this to the camera plane make an object invisible.
const MIN_CORNER_DEPTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub frames: u32,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default)]
    pub ego: EgoPath,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub detection: DetectionNoise,
    #[serde(default)]
    pub proposal: ProposalNoise,
    /// Length of the synthetic appearance histograms; 0 disables appearance.
    #[serde(default = "default_appearance_bins")]
    pub appearance_bins: usize,
    /// Hide objects whose box is mostly covered by a nearer object's box.
    #[serde(default)]
    pub occlusion: bool,
}

fn default_frame_rate() -> f64 {
    10.0
}

fn default_appearance_bins() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub f: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: f64,
    pub height: f64,
    /// Height of the camera above the ground, meters.
    pub mount_height: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            f: 721.5,
            u0: 609.6,
            v0: 172.9,
            width: 1242.0,
            height: 375.0,
            mount_height: 1.65,
        }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.f, self.u0, self.v0, self.width, self.height)
    }

    pub fn ground(&self) -> GroundPlane {
        GroundPlane::below_camera(self.mount_height)
    }
}

/// Camera trajectory. Yaw turns the camera about its vertical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EgoPath {
    #[default]
    Static,
    Straight {
        speed: f64,
    },
    Curve {
        speed: f64,
        yaw_rate: f64,
    },
    /// One ground position `[x, z]` and yaw per frame.
    Waypoints {
        positions: Vec<[f64; 2]>,
        yaws: Vec<f64>,
    },
}

impl EgoPath {
    pub fn pose_at(&self, frame: u32, t: f64) -> Result<EgoPose> {
        let (x, z, yaw) = match self {
            EgoPath::Static => (0.0, 0.0, 0.0),
            EgoPath::Straight { speed } => (0.0, speed * t, 0.0),
            EgoPath::Curve { speed, yaw_rate } => {
                let yaw = yaw_rate * t;
                if yaw_rate.abs() < 1e-12 {
                    (0.0, speed * t, 0.0)
                } else {
                    (speed / yaw_rate * (1.0 - yaw.cos()), speed / yaw_rate * yaw.sin(), yaw)
                }
            }
            EgoPath::Waypoints { positions, yaws } => {
                let i = frame as usize;
                match (positions.get(i), yaws.get(i)) {
                    (Some(p), Some(y)) => (p[0], p[1], *y),
                    _ => return Err(Error::invalid("ego.positions", format!("no waypoint for frame {frame}"))),
                }
            }
        };
        Ok(EgoPose::from_camera_to_world(rotation_y(yaw), Vector3::new(x, 0.0, z)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    #[default]
    Constant,
    /// Velocity direction rotates at `yaw_rate` rad/s.
    Turn { yaw_rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub category: Category,
    /// Initial footprint center `[x, z]` on the ground, world frame.
    pub position: [f64; 2],
    /// Initial ground velocity `[vx, vz]`, m/s.
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub motion: Motion,
    /// `[w, h, l]`; defaults to the category mean.
    #[serde(default)]
    pub size: Option<[f64; 3]>,
    #[serde(default)]
    pub appearance: Option<Vec<f64>>,
    #[serde(default)]
    pub start_frame: u32,
    /// Last frame (inclusive) the object exists.
    #[serde(default)]
    pub end_frame: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionNoise {
    /// Standard deviation of box center and size, pixels.
    pub bbox_sigma: f64,
    pub miss_base: f64,
    /// Increase of the miss probability per meter of depth.
    pub miss_slope: f64,
    /// Mean number of clutter detections per frame.
    pub false_positives: f64,
    /// Probability that a detection reports a wrong class.
    pub confusion: f64,
    pub true_score: [f64; 2],
    pub false_score: [f64; 2],
    /// Additive noise on the appearance histogram before renormalization.
    pub appearance_sigma: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        Self {
            bbox_sigma: 2.0,
            miss_base: 0.05,
            miss_slope: 0.002,
            false_positives: 0.5,
            confusion: 0.02,
            true_score: [0.6, 1.0],
            false_score: [0.0, 0.25],
            appearance_sigma: 0.02,
        }
    }
}

impl DetectionNoise {
    pub fn none() -> Self {
        Self {
            bbox_sigma: 0.0,
            miss_base: 0.0,
            miss_slope: 0.0,
            false_positives: 0.0,
            confusion: 0.0,
            appearance_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn miss_probability(&self, depth: f64) -> f64 {
        (self.miss_base + self.miss_slope * depth).clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bbox_sigma", self.bbox_sigma),
            ("miss_slope", self.miss_slope),
            ("false_positives", self.false_positives),
            ("appearance_sigma", self.appearance_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("detection.{name}"), "must be finite and non-negative"));
            }
        }
        for (name, p) in [("miss_base", self.miss_base), ("confusion", self.confusion)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("detection.{name}"), "must be a probability"));
            }
        }
        for (name, r) in [("true_score", self.true_score), ("false_score", self.false_score)] {
            if !(r[0] <= r[1]) {
                return Err(Error::invalid(format!("detection.{name}"), "range must be ordered"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalNoise {
    /// Lateral standard deviation in the camera frame, meters.
    pub lateral_sigma: f64,
    /// Depth standard deviation is `k * z^2`.
    pub k: f64,
    /// Relative standard deviation of each size component.
    pub size_sigma: f64,
    /// Proposals are available with probability `1 - z / z_max`.
    pub z_max: f64,
    pub points: u32,
    pub velocity_sigma: f64,
    /// Attach scene-flow velocities.
    pub flow: bool,
    /// Probability of an extra, overlapping proposal sharing half the points.
    pub duplicate_rate: f64,
}

impl Default for ProposalNoise {
    fn default() -> Self {
        Self {
            lateral_sigma: 0.1,
            k: 0.005,
            size_sigma: 0.05,
            z_max: 30.0,
            points: 50,
            velocity_sigma: 0.3,
            flow: true,
            duplicate_rate: 0.0,
        }
    }
}

impl ProposalNoise {
    pub fn none() -> Self {
        Self {
            lateral_sigma: 0.0,
            k: 0.0,
            size_sigma: 0.0,
            z_max: f64::INFINITY,
            velocity_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn depth_sigma(&self, depth: f64) -> f64 {
        self.k * depth * depth
    }

    pub fn availability(&self, depth: f64) -> f64 {
        (1.0 - depth / self.z_max).clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lateral_sigma", self.lateral_sigma),
            ("k", self.k),
            ("size_sigma", self.size_sigma),
            ("velocity_sigma", self.velocity_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("proposal.{name}"), "must be finite and non-negative"));
            }
        }
        if !(self.z_max > 0.0) {
            return Err(Error::invalid("proposal.z_max", "must be positive"));
        }
        if self.points < 1 {
            return Err(Error::invalid("proposal.points", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) {
            return Err(Error::invalid("proposal.duplicate_rate", "must be a probability"));
        }
        Ok(())
    }
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 1 {
            return Err(Error::invalid("frames", "must be at least 1"));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::invalid("frame_rate", "must be positive"));
        }
        self.camera.intrinsics()?;
        if !(self.camera.mount_height > 0.0) {
            return Err(Error::invalid("camera.mount_height", "must be positive"));
        }
        if let EgoPath::Waypoints { positions, yaws } = &self.ego {
            if positions.len() < self.frames as usize || yaws.len() < self.frames as usize {
                return Err(Error::invalid("ego.positions", "need one waypoint and yaw per frame"));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if let Some(s) = o.size {
                if s.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::invalid(format!("objects[{i}].size"), "components must be positive"));
                }
            }
            if let Some(a) = &o.appearance {
                if a.len() != self.appearance_bins {
                    return Err(Error::invalid(
                        format!("objects[{i}].appearance"),
                        "length must equal appearance_bins",
                    ));
                }
            }
        }
        self.detection.validate()?;
        self.proposal.validate()
    }

    pub fn timestamp(&self, frame: u32) -> f64 {
        f64::from(frame) / self.frame_rate
    }
}

/// State of one object in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState {
    pub frame: u32,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Image hull, when the whole box is in front of the camera.
    pub bbox: Option<BBox2D>,
    pub depth: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTruth {
    pub id: u64,
    pub category: Category,
    pub size: Size3,
    pub appearance: Option<Vec<f64>>,
    pub states: Vec<ObjectState>,
}

impl ObjectTruth {
    pub fn state_at(&self, frame: u32) -> Option<&ObjectState> {
        self.states.iter().find(|s| s.frame == frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub contexts: Vec<FrameContext>,
    pub objects: Vec<ObjectTruth>,
}

impl Scene {
    /// Ground truth for evaluation; only frames where the box is in front of
    /// the camera are listed.
    pub fn gt_trajectories(&self) -> Vec<GtTrajectory> {
        self.objects
            .iter()
            .map(|o| GtTrajectory {
                id: o.id,
                category: o.category,
                frames: o
                    .states
                    .iter()
                    .filter_map(|s| {
                        s.bbox.map(|bbox| GtFrame {
                            frame: s.frame,
                            bbox,
                            position: s.position,
                            depth: s.depth,
                            visible: s.visible,
                        })
                    })
                    .collect(),
            })
            .filter(|t| !t.frames.is_empty())
            .collect()
    }
}

fn object_kinematics(o: &ObjectSpec, t: f64, ground_y: f64) -> (Vector3<f64>, Vector3<f64>) {
    let p0 = Vector3::new(o.position[0], ground_y, o.position[1]);
    let v0 = Vector3::new(o.velocity[0], 0.0, o.velocity[1]);
    match o.motion {
        Motion::Constant => (p0 + v0 * t, v0),
        Motion::Turn { yaw_rate } if yaw_rate.abs() > 1e-12 => {
            let theta = yaw_rate * t;
            let s = theta.sin() / yaw_rate;
            let c = (1.0 - theta.cos()) / yaw_rate;
            let integral = Matrix3::new(s, 0.0, c, 0.0, t, 0.0, -c, 0.0, s);
            (p0 + integral * v0, rotation_y(theta) * v0)
        }
        Motion::Turn { .. } => (p0 + v0 * t, v0),
    }
}

fn random_histogram(rng: &mut ChaCha8Rng, bins: usize) -> Vec<f64> {
    // a few dominant colors make objects distinguishable
    let mut h: Vec<f64> = (0..bins).map(|_| rng.random::<f64>().powi(3)).collect();
    if bins > 0 {
        let peak = rng.random_range(0..bins);
        h[peak] += 1.0;
    }
    normalize_histogram(h)
}

/// Ground-truth trajectories and per-frame camera contexts.
pub fn generate(spec: &ScenarioSpec) -> Result<Scene> {
    spec.validate()?;
    let intr = spec.camera.intrinsics()?;
    let plane = spec.camera.ground();
    let stats = SizeStats::default();
    let contexts = (0..spec.frames)
        .map(|f| {
            Ok(FrameContext {
                frame: f,
                timestamp: spec.timestamp(f),
                intrinsics: intr,
                ego: spec.ego.pose_at(f, spec.timestamp(f))?,
                plane,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut appearance_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    appearance_rng.set_stream(u64::MAX);
    let mut objects: Vec<ObjectTruth> = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let size = o.size.map_or_else(|| stats.get(o.category).mean_size(), |s| Size3::new(s[0], s[1], s[2]));
            let generated = random_histogram(&mut appearance_rng, spec.appearance_bins);
            let appearance = (spec.appearance_bins > 0)
                .then(|| o.appearance.clone().map_or(generated, normalize_histogram));
            let last = o.end_frame.unwrap_or(u32::MAX).min(spec.frames - 1);
            let states = (o.start_frame..=last)
                .map(|f| {
                    let ctx = &contexts[f as usize];
                    let (position, velocity) = object_kinematics(o, ctx.timestamp - spec.timestamp(o.start_frame), spec.camera.mount_height);
                    let in_front = crate::geometry::box_corners(&position, &size, &plane)
                        .iter()
                        .all(|c| ctx.ego.world_to_camera(c).z > MIN_CORNER_DEPTH);
                    let bbox = if in_front {
                        project_box_hull(&position, &size, &plane, &ctx.ego, &intr).ok()
                    } else {
                        None
                    };
                    let visible = bbox.is_some_and(|b| {
                        b.left() >= 0.0 && b.top() >= 0.0 && b.right() <= intr.image_width && b.bottom() <= intr.image_height
                    });
                    ObjectState {
                        frame: f,
                        position,
                        velocity,
                        bbox,
                        depth: ctx.depth_of(&position),
                        visible,
                    }
                })
                .collect();
            ObjectTruth {
                id: i as u64,
                category: o.category,
                size,
                appearance,
                states,
            }
        })
        .collect();

    if spec.occlusion {
        apply_occlusion(&mut objects, spec.frames);
    }
    Ok(Scene { contexts, objects })
}

/// Marks objects invisible when more than half of their box is covered by a
/// nearer visible object's box.
fn apply_occlusion(objects: &mut [ObjectTruth], frames: u32) {
    for f in 0..frames {
        let snapshot: Vec<(usize, BBox2D, f64)> = objects
            .iter()
            .enumerate()
            .filter_map(|(i, o)| {
                let s = o.state_at(f)?;
                s.visible.then(|| (i, s.bbox.expect("visible objects have boxes"), s.depth))
            })
            .collect();
        for &(i, b, d) in &snapshot {
            let covered = snapshot.iter().any(|&(j, other, dj)| {
                if j == i || dj >= d {
                    return false;
                }
                let iw = b.right().min(other.right()) - b.left().max(other.left());
                let ih = b.bottom().min(other.bottom()) - b.top().max(other.top());
                iw > 0.0 && ih > 0.0 && iw * ih > 0.5 * b.area()
            });
            if covered {
                if let Some(s) = objects[i].states.iter_mut().find(|s| s.frame == f) {
                    s.visible = false;
                }
            }
        }
    }
}

fn frame_rng(seed: u64, frame: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(frame));
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
    } else {
        0.0
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Noisy detections and proposals for one frame. Deterministic given the
/// scenario seed and the frame index.
pub fn observe(scene: &Scene, spec: &ScenarioSpec, frame: u32) -> (Vec<Detection2D>, Vec<Proposal3D>) {
    let ctx = &scene.contexts[frame as usize];
    let dn = &spec.detection;
    let pn = &spec.proposal;
    let mut rng = frame_rng(spec.seed, frame);
    let mut detections = Vec::new();
    let mut proposals = Vec::new();

    for obj in &scene.objects {
        let Some(state) = obj.state_at(frame).filter(|s| s.visible) else {
            continue;
        };
        let bbox = state.bbox.expect("visible objects have boxes");
        let z = state.depth;

        // draw every random number unconditionally so streams stay aligned
        let miss_draw: f64 = rng.random();
        let noise = [
            gaussian(&mut rng, dn.bbox_sigma),
            gaussian(&mut rng, dn.bbox_sigma),
            gaussian(&mut rng, dn.bbox_sigma),
            gaussian(&mut rng, dn.bbox_sigma),
        ];
        let confuse_draw: f64 = rng.random();
        let wrong_class = rng.random_range(1..3usize);
        let score = uniform(&mut rng, dn.true_score);
        let appearance = obj.appearance.as_ref().map(|a| {
            normalize_histogram(a.iter().map(|v| v + gaussian(&mut rng, dn.appearance_sigma)).collect())
        });
        if miss_draw >= dn.miss_probability(z) {
            let noisy = BBox2D::new(
                bbox.x + noise[0],
                bbox.y + noise[1],
                (bbox.w + noise[2]).max(1.0),
                (bbox.h + noise[3]).max(1.0),
            );
            let category = if confuse_draw < dn.confusion {
                Category::from_index((obj.category.index() + wrong_class) % 3).expect("three categories")
            } else {
                obj.category
            };
            let mut det = Detection2D::new(noisy, category, score);
            det.appearance = appearance;
            detections.push(det);
        }

        let avail_draw: f64 = rng.random();
        let lateral = gaussian(&mut rng, pn.lateral_sigma);
        let depth_err = gaussian(&mut rng, pn.depth_sigma(z));
        let size_err = [
            gaussian(&mut rng, pn.size_sigma),
            gaussian(&mut rng, pn.size_sigma),
            gaussian(&mut rng, pn.size_sigma),
        ];
        let vel_err = Vector3::new(
            gaussian(&mut rng, pn.velocity_sigma),
            gaussian(&mut rng, pn.velocity_sigma),
            gaussian(&mut rng, pn.velocity_sigma),
        );
        let dup_draw: f64 = rng.random();
        let dup_shift = Vector3::new(gaussian(&mut rng, 0.3), 0.0, gaussian(&mut rng, 0.3));
        if avail_draw < pn.availability(z) {
            let mut cam = ctx.ego.world_to_camera(&state.position);
            cam.x += lateral;
            cam.z += depth_err;
            let position = ctx.plane.project(&ctx.ego.camera_to_world(&cam));
            let size = Size3::new(
                (obj.size.w * (1.0 + size_err[0])).max(0.1),
                (obj.size.h * (1.0 + size_err[1])).max(0.1),
                (obj.size.l * (1.0 + size_err[2])).max(0.1),
            );
            let velocity = pn.flow.then(|| {
                let v = state.velocity + vel_err;
                v - ctx.plane.normal * ctx.plane.normal.dot(&v)
            });
            let m = pn.points;
            let base = obj.id as u32 * m;
            let ids: Vec<u32> = (base..base + m).collect();
            let prop_score = 0.5 + 0.5 * pn.availability(z);
            if dup_draw < pn.duplicate_rate {
                let half: Vec<u32> = ids[(m / 2) as usize..].to_vec();
                proposals.push(Proposal3D::new(
                    ctx.plane.project(&(position + dup_shift)),
                    velocity,
                    size,
                    prop_score * 0.8,
                    half,
                ));
            }
            proposals.push(Proposal3D::new(position, velocity, size, prop_score, ids));
        }
    }

    let clutter = if dn.false_positives > 0.0 {
        Poisson::new(dn.false_positives).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    let intr = &ctx.intrinsics;
    for _ in 0..clutter {
        let w = rng.random_range(20.0..120.0f64).min(intr.image_width);
        let h = rng.random_range(20.0..120.0f64).min(intr.image_height);
        let x = rng.random_range(w / 2.0..=intr.image_width - w / 2.0);
        let y = rng.random_range(h / 2.0..=intr.image_height - h / 2.0);
        let category = Category::from_index(rng.random_range(0..3)).expect("three categories");
        let score = uniform(&mut rng, dn.false_score);
        let mut det = Detection2D::new(BBox2D::new(x, y, w, h), category, score);
        if spec.appearance_bins > 0 {
            det.appearance = Some(random_histogram(&mut rng, spec.appearance_bins));
        }
        detections.push(det);
    }
    (detections, proposals)
}

/// A scenario rendered into per-frame inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub scene: Scene,
    pub detections: Vec<Vec<Detection2D>>,
    pub proposals: Vec<Vec<Proposal3D>>,
}

impl Simulation {
    /// The tracker inputs, as they would be read back from disk.
    pub fn sequence(&self) -> Sequence {
        Sequence {
            contexts: self.scene.contexts.clone(),
            detections: self.detections.clone(),
            proposals: Some(self.proposals.clone()),
        }
    }
}

pub fn simulate(spec: &ScenarioSpec) -> Result<Simulation> {
    let scene = generate(spec)?;
    let (detections, proposals) = (0..spec.frames).map(|f| observe(&scene, spec, f)).unzip();
    Ok(Simulation {
        scene,
        detections,
        proposals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(objects: Vec<ObjectSpec>) -> ScenarioSpec {
        ScenarioSpec {
            frames: 20,
            frame_rate: 10.0,
            seed: 1,
            camera: CameraSpec::default(),
            ego: EgoPath::Static,
            objects,
            detection: DetectionNoise::none(),
            proposal: ProposalNoise::none(),
            appearance_bins: 8,
            occlusion: false,
        }
    }

    fn car(x: f64, z: f64, vx: f64, vz: f64) -> ObjectSpec {
        ObjectSpec {
            category: Category::Car,
            position: [x, z],
            velocity: [vx, vz],
            motion: Motion::Constant,
            size: None,
            appearance: None,
            start_frame: 0,
            end_frame: None,
        }
    }

    #[test]
    fn static_scene_has_constant_boxes() {
        let scene = generate(&quiet(vec![car(1.0, 15.0, 0.0, 0.0)])).unwrap();
        let states = &scene.objects[0].states;
        assert_eq!(states.len(), 20);
        assert!(states.iter().all(|s| s.bbox == states[0].bbox && s.visible));
    }

    #[test]
    fn centered_object_projects_to_principal_point() {
        let mut spec = quiet(vec![ObjectSpec {
            size: Some([1.0, 1.6, 1.0]),
            ..car(0.0, 12.0, 0.0, 0.0)
        }]);
        // camera at half the object height puts the box center on the optical axis
        spec.camera.mount_height = 0.8;
        let scene = generate(&spec).unwrap();
        let c = scene.objects[0].states[0].bbox.unwrap().center();
        assert!((c.x - spec.camera.u0).abs() < 1e-9);
        assert!((c.y - spec.camera.v0).abs() < 1e-9);
    }

    #[test]
    fn constant_velocity_positions_are_collinear() {
        let scene = generate(&quiet(vec![car(-4.0, 10.0, 0.7, 1.3)])).unwrap();
        let states = &scene.objects[0].states;
        let p0 = states[0].position;
        let dir = (states[19].position - p0).normalize();
        for s in states {
            let d = s.position - p0;
            let off = (d - dir * d.dot(&dir)).norm();
            assert!(off < 1e-12);
        }
    }

    #[test]
    fn turning_objects_keep_speed() {
        let mut o = car(0.0, 15.0, 0.0, 3.0);
        o.motion = Motion::Turn { yaw_rate: 0.3 };
        let scene = generate(&quiet(vec![o])).unwrap();
        let states = &scene.objects[0].states;
        for w in states.windows(2) {
            assert!((w[0].velocity.norm() - 3.0).abs() < 1e-12);
            let mid_speed = (w[1].position - w[0].position).norm() / 0.1;
            assert!((mid_speed - 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn noise_free_observations_equal_ground_truth() {
        let spec = quiet(vec![car(-2.0, 12.0, 0.5, 1.0), car(3.0, 25.0, 0.0, -1.0)]);
        let sim = simulate(&spec).unwrap();
        for f in 0..spec.frames {
            let dets = &sim.detections[f as usize];
            let props = &sim.proposals[f as usize];
            assert_eq!(dets.len(), 2);
            assert_eq!(props.len(), 2);
            for (i, obj) in sim.scene.objects.iter().enumerate() {
                let s = obj.state_at(f).unwrap();
                assert_eq!(dets[i].bbox, s.bbox.unwrap());
                assert!((props[i].position - s.position).norm() < 1e-9);
                assert!((props[i].velocity.unwrap() - s.velocity).norm() < 1e-12);
                assert_eq!(props[i].size, obj.size);
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let mut spec = quiet(vec![car(-2.0, 12.0, 0.5, 1.0), car(3.0, 25.0, 0.0, -1.0)]);
        spec.detection = DetectionNoise::default();
        spec.proposal = ProposalNoise::default();
        assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 2;
        assert_ne!(simulate(&spec).unwrap().detections, simulate(&other).unwrap().detections);
    }

    #[test]
    fn depth_sigma_formula() {
        let pn = ProposalNoise { k: 0.01, ..ProposalNoise::default() };
        assert!((pn.depth_sigma(20.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn far_objects_never_get_proposals() {
        let mut spec = quiet(vec![car(0.0, 40.0, 0.0, 0.0)]);
        spec.frames = 1;
        spec.proposal.z_max = 30.0;
        let scene = generate(&spec).unwrap();
        for seed in 0..1000 {
            spec.seed = seed;
            assert!(observe(&scene, &spec, 0).1.is_empty());
        }
    }

    #[test]
    fn depth_error_matches_quadratic_model() {
        for z in [10.0, 20.0] {
            let mut spec = quiet(vec![car(0.0, z, 0.0, 0.0)]);
            spec.frames = 1;
            spec.proposal = ProposalNoise {
                k: 0.005,
                z_max: f64::INFINITY,
                ..ProposalNoise::none()
            };
            let scene = generate(&spec).unwrap();
            let truth = scene.objects[0].states[0].position.z;
            let n = 10_000;
            let errs: Vec<f64> = (0..n)
                .map(|seed| {
                    spec.seed = seed;
                    observe(&scene, &spec, 0).1[0].position.z - truth
                })
                .collect();
            let mean = errs.iter().sum::<f64>() / n as f64;
            let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            let expected = 0.005 * z * z;
            assert!((sd - expected).abs() < 0.1 * expected, "z={z}: sd {sd} vs {expected}");
        }
    }

    #[test]
    fn miss_and_clutter_rates() {
        let mut spec = quiet(vec![car(0.0, 20.0, 0.0, 0.0)]);
        spec.frames = 1;
        spec.detection.miss_base = 0.1;
        spec.detection.miss_slope = 0.005;
        spec.detection.false_positives = 0.5;
        spec.detection.true_score = [0.9, 1.0];
        let scene = generate(&spec).unwrap();
        let n = 10_000u64;
        let (mut hits, mut clutter) = (0u64, 0u64);
        for seed in 0..n {
            spec.seed = seed;
            let dets = observe(&scene, &spec, 0).0;
            hits += dets.iter().filter(|d| d.score >= 0.9).count() as u64;
            clutter += dets.iter().filter(|d| d.score < 0.9).count() as u64;
        }
        let p_miss = 0.2;
        let misses = (n - hits) as f64;
        let sd = (n as f64 * p_miss * (1.0 - p_miss)).sqrt();
        assert!((misses - n as f64 * p_miss).abs() < 3.0 * sd);
        let clutter_sd = (n as f64 * 0.5).sqrt();
        assert!((clutter as f64 - n as f64 * 0.5).abs() < 3.0 * clutter_sd);
    }

    #[test]
    fn objects_behind_or_outside_are_invisible() {
        let spec = quiet(vec![car(0.0, -10.0, 0.0, 0.0), car(30.0, 10.0, 0.0, 0.0), car(0.0, 10.0, 0.0, 0.0)]);
        let scene = generate(&spec).unwrap();
        assert!(scene.objects[0].states[0].bbox.is_none());
        assert!(!scene.objects[1].states[0].visible);
        assert!(scene.objects[2].states[0].visible);
        assert_eq!(scene.gt_trajectories().len(), 2);
    }

    #[test]
    fn occlusion_hides_covered_objects() {
        let mut spec = quiet(vec![car(0.0, 10.0, 0.0, 0.0), car(0.2, 20.0, 0.0, 0.0)]);
        spec.occlusion = true;
        let scene = generate(&spec).unwrap();
        assert!(scene.objects[0].states[0].visible);
        assert!(!scene.objects[1].states[0].visible);
    }

    #[test]
    fn curved_ego_path_is_smooth() {
        let path = EgoPath::Curve { speed: 10.0, yaw_rate: 0.2 };
        let a = path.pose_at(10, 1.0).unwrap();
        let b = path.pose_at(11, 1.1).unwrap();
        assert!(((b.center() - a.center()).norm() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn scenario_toml_round_trip() {
        let text = r#"
            frames = 5
            seed = 3

            [ego]
            kind = "curve"
            speed = 5.0
            yaw_rate = 0.1

            [[objects]]
            category = "pedestrian"
            position = [1.0, 12.0]
            velocity = [0.5, 0.0]
            motion = { kind = "turn", yaw_rate = 0.2 }

            [proposal]
            z_max = inf
            flow = false
        "#;
        let spec = ScenarioSpec::from_toml(text).unwrap();
        assert_eq!(spec.proposal.z_max, f64::INFINITY);
        assert!(!spec.proposal.flow);
        assert_eq!(spec.objects[0].motion, Motion::Turn { yaw_rate: 0.2 });
        assert!(ScenarioSpec::from_toml("frames = 0").is_err());
        assert!(ScenarioSpec::from_toml("frames = 3\nbogus = 1").is_err());
    }
}
