//! CLEAR-MOT evaluation in the image and on the ground.

mod assignment;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use assignment::{max_score_pairs, solve_square};

use crate::error::{Error, Result};
use crate::geometry::{iou_2d, BBox2D};
use crate::observations::Category;
use crate::tracker::FrameReport;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtFrame {
    pub frame: u32,
    pub bbox: BBox2D,
    /// Footprint center in world coordinates.
    pub position: Vector3<f64>,
    /// Depth in the camera of this frame, used for the range breakdown.
    pub depth: f64,
    /// Invisible entries are ignored: they count neither as misses nor, when
    /// a track overlaps them, as false positives.
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtTrajectory {
    pub id: u64,
    pub category: Category,
    /// Strictly increasing frames.
    pub frames: Vec<GtFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub iou_threshold: f64,
    /// Lower edges of the distance ranges; the last range is unbounded.
    pub range_edges: Vec<f64>,
    pub mostly_tracked: f64,
    pub mostly_lost: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            range_edges: vec![0.0, 10.0, 20.0, 30.0, 50.0],
            mostly_tracked: 0.8,
            mostly_lost: 0.2,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::invalid("metrics.iou_threshold", "must lie in (0, 1)"));
        }
        if self.range_edges.is_empty() || self.range_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("metrics.range_edges", "must be non-empty and strictly increasing"));
        }
        if !(0.0..=1.0).contains(&self.mostly_lost)
            || !(0.0..=1.0).contains(&self.mostly_tracked)
            || self.mostly_lost >= self.mostly_tracked
        {
            return Err(Error::invalid(
                "metrics.mostly_tracked",
                "need 0 <= mostly_lost < mostly_tracked <= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatching {
    /// `(gt index, track index, IoU)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

/// Maximum-total-IoU matching of boxes with IoU at or above the threshold.
pub fn match_frame(gt: &[BBox2D], tracks: &[BBox2D], iou_threshold: f64) -> FrameMatching {
    match_frame_with_carry(gt, tracks, iou_threshold, &[])
}

/// Like [`match_frame`], but first keeps the `carried` pairs (matches from the
/// previous frame) that still pass the threshold.
pub fn match_frame_with_carry(
    gt: &[BBox2D],
    tracks: &[BBox2D],
    iou_threshold: f64,
    carried: &[(usize, usize)],
) -> FrameMatching {
    let mut gt_used = vec![false; gt.len()];
    let mut tr_used = vec![false; tracks.len()];
    let mut pairs = Vec::new();
    for &(g, t) in carried {
        if g >= gt.len() || t >= tracks.len() || gt_used[g] || tr_used[t] {
            continue;
        }
        let iou = iou_2d(&gt[g], &tracks[t]);
        if iou >= iou_threshold {
            gt_used[g] = true;
            tr_used[t] = true;
            pairs.push((g, t, iou));
        }
    }
    let free_gt: Vec<usize> = (0..gt.len()).filter(|&g| !gt_used[g]).collect();
    let free_tr: Vec<usize> = (0..tracks.len()).filter(|&t| !tr_used[t]).collect();
    let score = |r: usize, c: usize| {
        let iou = iou_2d(&gt[free_gt[r]], &tracks[free_tr[c]]);
        (iou >= iou_threshold).then_some(iou)
    };
    for (r, c) in max_score_pairs(free_gt.len(), free_tr.len(), score) {
        let (g, t) = (free_gt[r], free_tr[c]);
        gt_used[g] = true;
        tr_used[t] = true;
        pairs.push((g, t, iou_2d(&gt[g], &tracks[t])));
    }
    pairs.sort_by_key(|p| p.0);
    FrameMatching {
        pairs,
        unmatched_gt: (0..gt.len()).filter(|&g| !gt_used[g]).collect(),
        unmatched_tracks: (0..tracks.len()).filter(|&t| !tr_used[t]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RangeStats {
    pub min: f64,
    pub max: f64,
    pub tp: usize,
    pub iou_sum: f64,
    pub distance_sum: f64,
}

impl RangeStats {
    pub fn motp2d(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    pub fn motp3d(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.distance_sum / self.tp as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotReport {
    pub mota: f64,
    pub motp2d: f64,
    pub motp3d: f64,
    pub gt_boxes: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub fragmentations: usize,
    pub mostly_tracked: usize,
    pub partly_tracked: usize,
    pub mostly_lost: usize,
    pub ranges: Vec<RangeStats>,
}

impl MotReport {
    /// TP-weighted MOTP-3D over ranges whose upper edge is at most `max_depth`.
    pub fn motp3d_within(&self, max_depth: f64) -> f64 {
        let (tp, sum) = self
            .ranges
            .iter()
            .filter(|r| r.max <= max_depth)
            .fold((0, 0.0), |(n, s), r| (n + r.tp, s + r.distance_sum));
        if tp == 0 {
            0.0
        } else {
            sum / tp as f64
        }
    }

    /// Two-column `metric,value` table.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let rows: [(&str, String); 13] = [
            ("mota", format!("{:.6}", self.mota)),
            ("motp2d", format!("{:.6}", self.motp2d)),
            ("motp3d", format!("{:.6}", self.motp3d)),
            ("gt", self.gt_boxes.to_string()),
            ("tp", self.tp.to_string()),
            ("fp", self.fp.to_string()),
            ("fn", self.fn_.to_string()),
            ("id_switches", self.id_switches.to_string()),
            ("fragmentations", self.fragmentations.to_string()),
            ("mostly_tracked", self.mostly_tracked.to_string()),
            ("partly_tracked", self.partly_tracked.to_string()),
            ("mostly_lost", self.mostly_lost.to_string()),
            ("trajectories", (self.mostly_tracked + self.partly_tracked + self.mostly_lost).to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    /// Per-range MOTP table.
    pub fn ranges_csv(&self) -> String {
        let mut out = String::from("range_min,range_max,tp,motp2d,motp3d\n");
        for r in &self.ranges {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6}",
                r.min,
                r.max,
                r.tp,
                r.motp2d(),
                r.motp3d()
            );
        }
        out
    }
}

#[derive(Default)]
struct GtProgress {
    visible: usize,
    matched: usize,
    last_track: Option<u64>,
    /// Matched at some point and unmatched since.
    interrupted: bool,
}

struct FrameEntry<'a> {
    traj: usize,
    gt: &'a GtFrame,
}

/// CLEAR-MOT metrics of `reports` against `gt`. Every ground-truth frame must
/// have a report row with the same frame index.
pub fn evaluate(gt: &[GtTrajectory], reports: &[FrameReport], cfg: &MetricsConfig) -> Result<MotReport> {
    cfg.validate()?;
    let mut by_frame: BTreeMap<u32, Vec<FrameEntry>> = BTreeMap::new();
    for (ti, traj) in gt.iter().enumerate() {
        if traj.frames.windows(2).any(|w| w[0].frame >= w[1].frame) {
            return Err(Error::invalid("gt", format!("trajectory {} frames must increase", traj.id)));
        }
        for g in &traj.frames {
            by_frame.entry(g.frame).or_default().push(FrameEntry { traj: ti, gt: g });
        }
    }
    let mut report_frames = HashMap::new();
    for (i, r) in reports.iter().enumerate() {
        if report_frames.insert(r.frame, i).is_some() {
            return Err(Error::FrameMisalignment(format!("frame {} reported twice", r.frame)));
        }
    }
    if let Some(missing) = by_frame.keys().find(|f| !report_frames.contains_key(f)) {
        return Err(Error::FrameMisalignment(format!("no report row for frame {missing}")));
    }

    let mut ranges: Vec<RangeStats> = cfg
        .range_edges
        .iter()
        .enumerate()
        .map(|(i, &min)| RangeStats {
            min,
            max: cfg.range_edges.get(i + 1).copied().unwrap_or(f64::INFINITY),
            ..RangeStats::default()
        })
        .collect();
    let mut progress: Vec<GtProgress> = gt.iter().map(|_| GtProgress::default()).collect();
    let mut out = MotReport::default();
    let mut iou_total = 0.0;
    let mut dist_total = 0.0;
    // gt trajectory index -> track id matched in the previous frame
    let mut previous: HashMap<usize, u64> = HashMap::new();

    let mut frames: Vec<u32> = report_frames.keys().copied().collect();
    frames.sort_unstable();
    for f in frames {
        let report = &reports[report_frames[&f]];
        let entries = by_frame.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let visible: Vec<&FrameEntry> = entries.iter().filter(|e| e.gt.visible).collect();
        let ignored: Vec<&FrameEntry> = entries.iter().filter(|e| !e.gt.visible).collect();
        let gt_boxes: Vec<BBox2D> = visible.iter().map(|e| e.gt.bbox).collect();
        let tr_boxes: Vec<BBox2D> = report.tracks.iter().map(|t| t.bbox).collect();

        let carried: Vec<(usize, usize)> = visible
            .iter()
            .enumerate()
            .filter_map(|(gi, e)| {
                let id = previous.get(&e.traj)?;
                let ti = report.tracks.iter().position(|t| t.track_id == *id)?;
                Some((gi, ti))
            })
            .collect();
        let m = match_frame_with_carry(&gt_boxes, &tr_boxes, cfg.iou_threshold, &carried);

        let mut current = HashMap::new();
        for &(gi, ti, iou) in &m.pairs {
            let e = visible[gi];
            let track = &report.tracks[ti];
            let p = &mut progress[e.traj];
            if p.last_track.is_some_and(|id| id != track.track_id) {
                out.id_switches += 1;
            }
            if p.interrupted {
                out.fragmentations += 1;
                p.interrupted = false;
            }
            p.last_track = Some(track.track_id);
            p.matched += 1;
            current.insert(e.traj, track.track_id);

            let dist = (track.position - e.gt.position).norm();
            out.tp += 1;
            iou_total += iou;
            dist_total += dist;
            if let Some(r) = ranges.iter_mut().find(|r| e.gt.depth >= r.min && e.gt.depth < r.max) {
                r.tp += 1;
                r.iou_sum += iou;
                r.distance_sum += dist;
            }
        }
        for &gi in &m.unmatched_gt {
            let p = &mut progress[visible[gi].traj];
            if p.last_track.is_some() {
                p.interrupted = true;
            }
        }
        for e in &visible {
            progress[e.traj].visible += 1;
        }
        out.gt_boxes += visible.len();
        out.fn_ += m.unmatched_gt.len();
        out.fp += m
            .unmatched_tracks
            .iter()
            .filter(|&&ti| {
                !ignored
                    .iter()
                    .any(|e| iou_2d(&e.gt.bbox, &report.tracks[ti].bbox) >= cfg.iou_threshold)
            })
            .count();
        previous = current;
    }

    for p in progress.iter().filter(|p| p.visible > 0) {
        let ratio = p.matched as f64 / p.visible as f64;
        if ratio >= cfg.mostly_tracked {
            out.mostly_tracked += 1;
        } else if ratio <= cfg.mostly_lost {
            out.mostly_lost += 1;
        } else {
            out.partly_tracked += 1;
        }
    }
    out.mota = 1.0 - (out.fn_ + out.fp + out.id_switches) as f64 / out.gt_boxes.max(1) as f64;
    if out.tp > 0 {
        out.motp2d = iou_total / out.tp as f64;
        out.motp3d = dist_total / out.tp as f64;
    }
    out.ranges = ranges;
    Ok(out)
}

/// Ground truth rendered as a perfect tracker output, one row per frame in
/// `frames`.
pub fn gt_as_reports(gt: &[GtTrajectory], frames: impl IntoIterator<Item = u32>) -> Vec<FrameReport> {
    use crate::tracker::ReportedTrack;
    frames
        .into_iter()
        .map(|f| FrameReport {
            frame: f,
            tracks: gt
                .iter()
                .filter_map(|traj| {
                    let g = traj.frames.iter().find(|g| g.frame == f && g.visible)?;
                    Some(ReportedTrack {
                        hypothesis_id: traj.id,
                        track_id: traj.id,
                        category: traj.category,
                        bbox: g.bbox,
                        position: g.position,
                        size: crate::geometry::Size3::new(1.0, 1.0, 1.0),
                        score: 1.0,
                        observation: None,
                    })
                })
                .collect(),
        })
        .collect()
}
