//! Hypothesize-and-select multi-object tracker.
//!
//! Every frame each hypothesis is predicted, extended with its best
//! observation (branching when several observations are nearly
//! indistinguishable), new hypotheses are spawned from unclaimed observations,
//! and a consistent subset is selected by minimizing a pairwise energy.

mod hypothesis;
mod scoring;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use hypothesis::{Inlier, ObservationKey, TrackHypothesis};
pub use scoring::{
    affinity, affinity_terms, categories_compatible, hypothesis_pairwise, hypothesis_unary, observation_ground,
    AffinityTerms,
};

use crate::crf::{solve_multibranch, EnergyGraph};
use crate::error::{Error, Result};
use crate::geometry::{BBox2D, Size3};
use crate::kalman::{self, CouplingWeights, NoiseConfig};
use crate::observations::{Category, FrameContext, Observation, SizeStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub w_h_min: f64,
    /// Temporal decay of inlier support, 1/frames.
    pub tau: f64,
    /// Appearance weight of the affinity.
    pub w_c: f64,
    /// Distance decay of the motion weight, 1/m.
    pub gamma: f64,
    pub w_h_ol: f64,
    pub w_h_sh: f64,
    /// Observations below this affinity are never associated.
    pub min_affinity: f64,
    /// An observation must overlap the predicted box or lie within this squared
    /// ground-plane Mahalanobis distance of the predicted position.
    pub gate_chi2: f64,
    pub branch_image_px: f64,
    pub branch_ground_m: f64,
    pub branch_appearance: f64,
    pub t_extrap: u32,
    pub n_prune: u32,
    pub w_spawn: u32,
    /// Selected hypotheses unobserved for longer than this are not reported.
    pub max_report_gap: u32,
    /// Below this many inliers a hypothesis accepts detections of any class.
    pub immature_inliers: usize,
    pub appearance_rate: f64,
    /// `confusion[true][detected]`, rows sum to one.
    pub confusion: [[f64; 3]; 3],
    /// Include the motion (Kalman prediction) term in the affinity.
    pub use_motion: bool,
    pub branches: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            w_h_min: 0.3,
            tau: 0.1,
            w_c: 0.4,
            gamma: 0.04,
            w_h_ol: 1.0,
            w_h_sh: 2.0,
            min_affinity: 0.1,
            gate_chi2: 9.21,
            branch_image_px: 15.0,
            branch_ground_m: 1.0,
            branch_appearance: 0.7,
            t_extrap: 10,
            n_prune: 15,
            w_spawn: 3,
            max_report_gap: 2,
            immature_inliers: 3,
            appearance_rate: 0.1,
            confusion: [[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]],
            use_motion: true,
            branches: crate::crf::DEFAULT_BRANCHES,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, ok: bool, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("tracker.{name}"), reason))
            }
        };
        check("w_c", (0.0..=1.0).contains(&self.w_c), "must lie in [0, 1]")?;
        check("tau", self.tau >= 0.0, "must be non-negative")?;
        check("gamma", self.gamma >= 0.0, "must be non-negative")?;
        check("w_h_min", self.w_h_min.is_finite(), "must be finite")?;
        check("w_h_ol", self.w_h_ol >= 0.0, "must be non-negative")?;
        check("w_h_sh", self.w_h_sh >= 0.0, "must be non-negative")?;
        check("min_affinity", (0.0..=1.0).contains(&self.min_affinity), "must lie in [0, 1]")?;
        check("gate_chi2", self.gate_chi2 > 0.0, "must be positive")?;
        check("branch_image_px", self.branch_image_px >= 0.0, "must be non-negative")?;
        check("branch_ground_m", self.branch_ground_m >= 0.0, "must be non-negative")?;
        check("branch_appearance", (0.0..=1.0).contains(&self.branch_appearance), "must lie in [0, 1]")?;
        check("t_extrap", self.t_extrap >= 1, "must be at least 1")?;
        check("n_prune", self.n_prune >= 1, "must be at least 1")?;
        check("w_spawn", self.w_spawn >= 1, "must be at least 1")?;
        check("appearance_rate", (0.0..=1.0).contains(&self.appearance_rate), "must lie in [0, 1]")?;
        check("branches", self.branches >= 1, "must be at least 1")?;
        for row in &self.confusion {
            check(
                "confusion",
                row.iter().all(|v| *v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-6,
                "rows must be non-negative and sum to 1",
            )?;
        }
        Ok(())
    }
}

/// Everything the tracker needs besides its own state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackerSettings {
    pub tracker: TrackerConfig,
    pub coupling: CouplingWeights,
    pub noise: NoiseConfig,
    pub size_stats: SizeStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportedTrack {
    pub hypothesis_id: u64,
    pub track_id: u64,
    pub category: Category,
    pub bbox: BBox2D,
    pub position: Vector3<f64>,
    pub size: Size3,
    /// Negated selection unary; larger is better.
    pub score: f64,
    /// Detection index claimed in this frame, if any.
    pub observation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameReport {
    pub frame: u32,
    pub tracks: Vec<ReportedTrack>,
}

struct BufferedFrame {
    ctx: FrameContext,
    observations: Vec<Observation>,
}

/// Cached pairwise terms accumulated over the frames before `next`.
#[derive(Clone, Copy)]
struct PairTerms {
    next: u32,
    iou_sq: f64,
    shared: usize,
}

pub struct Tracker {
    settings: TrackerSettings,
    hypotheses: Vec<TrackHypothesis>,
    buffer: VecDeque<BufferedFrame>,
    spawned: HashSet<ObservationKey>,
    pair_cache: HashMap<(u64, u64), PairTerms>,
    next_id: u64,
}

impl Tracker {
    pub fn new(settings: TrackerSettings) -> Result<Self> {
        settings.tracker.validate()?;
        settings.coupling.validate()?;
        settings.noise.validate()?;
        settings.size_stats.validate()?;
        Ok(Self {
            settings,
            hypotheses: Vec::new(),
            buffer: VecDeque::new(),
            spawned: HashSet::new(),
            pair_cache: HashMap::new(),
            next_id: 0,
        })
    }

    pub fn settings(&self) -> &TrackerSettings {
        &self.settings
    }

    pub fn hypotheses(&self) -> &[TrackHypothesis] {
        &self.hypotheses
    }

    /// Processes one frame of observations and returns the selected tracks.
    pub fn advance_frame(&mut self, observations: Vec<Observation>, ctx: &FrameContext) -> Result<FrameReport> {
        let t = ctx.frame;
        if let Some(prev) = self.buffer.back() {
            if ctx.frame <= prev.ctx.frame || !(ctx.timestamp > prev.ctx.timestamp) {
                return Err(Error::invalid("frame", "frames and timestamps must increase"));
            }
            let prev_ctx = prev.ctx;
            for h in &mut self.hypotheses {
                predict_hypothesis(h, &prev_ctx, ctx, &self.settings);
            }
        }

        self.extend(&observations, ctx);
        self.buffer.push_back(BufferedFrame { ctx: *ctx, observations });
        while self.buffer.len() > self.settings.tracker.w_spawn as usize {
            self.buffer.pop_front();
        }
        self.spawn();

        let selection = self.select(t);
        for &i in &selection {
            self.hypotheses[i].last_selected = Some(t);
        }
        let report = self.report(t, &selection);
        self.prune(t, &selection);
        Ok(report)
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Extends every in-frustum hypothesis with its best observation,
    /// branching over near-identical alternatives.
    fn extend(&mut self, observations: &[Observation], ctx: &FrameContext) {
                let ground: Vec<_> = observations
            .iter()
            .map(|o| observation_ground(o, ctx, &self.settings.noise))
            .collect();
        let mut branches = Vec::new();
        for hi in 0..self.hypotheses.len() {
            let h = &self.hypotheses[hi];
            if h.extrapolating {
                continue;
            }
            let candidates = candidates_for(h, observations, &ground, ctx, &self.settings);
            let Some(&(best, best_aff)) = candidates.first() else {
                continue;
            };
            for &(j, aff) in &candidates[1..] {
                if near_identical(&observations[best], &observations[j], &ground[best], &ground[j], &self.settings.tracker) {
                    let mut clone = self.hypotheses[hi].clone();
                    clone.id = self.fresh_id();
                    clone.last_selected = None;
                    apply_observation(&mut clone, &observations[j], j, aff, ctx, &self.settings);
                    branches.push(clone);
                }
            }
            apply_observation(&mut self.hypotheses[hi], &observations[best], best, best_aff, ctx, &self.settings);
        }
        self.hypotheses.extend(branches);
    }

    /// Starts hypotheses from buffered observations that no hypothesis claims
    /// and that have not seeded one before, rolling each forward to the
    /// current frame.
    fn spawn(&mut self) {
        let Some(oldest) = self.buffer.front().map(|b| b.ctx.frame) else {
            return;
        };
        self.spawned.retain(|k| k.frame >= oldest);
        let mut claimed: HashSet<ObservationKey> = HashSet::new();
        for h in &self.hypotheses {
            for (&f, inl) in h.inliers.range(oldest..) {
                claimed.insert(ObservationKey {
                    frame: f,
                    detection: inl.detection,
                });
            }
        }

        for bi in 0..self.buffer.len() {
            let frame = &self.buffer[bi];
            for (j, obs) in frame.observations.iter().enumerate() {
                let key = ObservationKey {
                    frame: frame.ctx.frame,
                    detection: j,
                };
                if claimed.contains(&key) || self.spawned.contains(&key) {
                    continue;
                }
                self.spawned.insert(key);
                let Ok(state) = kalman::init_state(obs, &frame.ctx, &self.settings.size_stats, &self.settings.noise)
                else {
                    continue;
                };
                let id = self.next_id;
                self.next_id += 1;
                let mut h = TrackHypothesis {
                    id,
                    track_id: id,
                    state,
                    born: key.frame,
                    last_update: key.frame,
                    inliers: BTreeMap::new(),
                    boxes: Vec::new(),
                    category_dist: [1.0 / 3.0; 3],
                    appearance: None,
                    extrapolating: false,
                    extrapolated_frames: 0,
                    last_selected: None,
                };
                record_inlier(&mut h, obs, j, 1.0, key.frame, &self.settings);
                h.record_box(key.frame, Some(h.state.bbox()));

                let mut alive = true;
                let mut prev_ctx = frame.ctx;
                for later in self.buffer.range(bi + 1..) {
                    predict_hypothesis(&mut h, &prev_ctx, &later.ctx, &self.settings);
                    prev_ctx = later.ctx;
                    if h.extrapolating {
                        alive = false;
                        break;
                    }
                    let ground: Vec<_> = later
                        .observations
                        .iter()
                        .map(|o| observation_ground(o, &later.ctx, &self.settings.noise))
                        .collect();
                    let candidates = candidates_for(&h, &later.observations, &ground, &later.ctx, &self.settings);
                    if let Some(&(best, aff)) = candidates.first() {
                        apply_observation(&mut h, &later.observations[best], best, aff, &later.ctx, &self.settings);
                    }
                }
                if !alive {
                    continue;
                }
                for (&f, inl) in &h.inliers {
                    claimed.insert(ObservationKey {
                        frame: f,
                        detection: inl.detection,
                    });
                }
                self.hypotheses.push(h);
            }
        }
    }

    fn pair_terms(&mut self, i: usize, j: usize) -> Option<(f64, usize)> {
        let (a, b) = (&self.hypotheses[i], &self.hypotheses[j]);
        let (from, to) = scoring::common_frames(a, b)?;
        let key = (a.id.min(b.id), a.id.max(b.id));
        // frames before the newest one never change, so their sum is cached
        let (start, mut iou_sq, mut shared) = match self.pair_cache.get(&key) {
            Some(c) if c.next >= from && c.next <= to => (c.next, c.iou_sq, c.shared),
            _ => (from, 0.0, 0),
        };
        let (di, ds) = scoring::overlap_terms(a, b, start, to);
        iou_sq += di;
        shared += ds;
        self.pair_cache.insert(
            key,
            PairTerms {
                next: to,
                iou_sq,
                shared,
            },
        );
        let (di, ds) = scoring::overlap_terms(a, b, to, to + 1);
        Some((iou_sq + di, shared + ds))
    }

    /// Builds and solves the selection problem, returning selected indices.
    fn select(&mut self, t: u32) -> Vec<usize> {
        let n = self.hypotheses.len();
        if n == 0 {
            return Vec::new();
        }
        let cfg = self.settings.tracker.clone();
        let unaries = self.hypotheses.iter().map(|h| hypothesis_unary(h, t, &cfg)).collect();
        let mut graph = EnergyGraph::new(unaries);
        for i in 0..n {
            for j in i + 1..n {
                if let Some((iou_sq, shared)) = self.pair_terms(i, j) {
                    let value = cfg.w_h_ol * iou_sq + cfg.w_h_sh * shared as f64;
                    if value > 0.0 {
                        graph.add_pairwise(i, j, value);
                    }
                }
                let (a, b) = (&self.hypotheses[i], &self.hypotheses[j]);
                let same_lineage = a.track_id == b.track_id;
                let same_current = matches!(
                    (a.observation_at(t), b.observation_at(t)),
                    (Some(x), Some(y)) if x == y
                );
                if same_lineage || same_current {
                    graph.add_exclusion(i, j);
                }
            }
        }
        solve_multibranch(&graph, cfg.branches).indices()
    }

    fn report(&self, t: u32, selection: &[usize]) -> FrameReport {
        let cfg = &self.settings.tracker;
        let mut tracks: Vec<ReportedTrack> = selection
            .iter()
            .map(|&i| &self.hypotheses[i])
            .filter(|h| !h.extrapolating && t - h.last_update <= cfg.max_report_gap)
            .map(|h| ReportedTrack {
                hypothesis_id: h.id,
                track_id: h.track_id,
                category: h.category(),
                bbox: h.state.bbox(),
                position: h.state.position(),
                size: h.state.size(),
                score: -hypothesis_unary(h, t, cfg),
                observation: h.observation_at(t).map(|k| k.detection),
            })
            .collect();
        tracks.sort_by_key(|r| r.track_id);
        FrameReport { frame: t, tracks }
    }

    fn prune(&mut self, t: u32, selection: &[usize]) {
        let cfg = self.settings.tracker.clone();
        let n_prune = cfg.n_prune;
        let selected: HashSet<usize> = selection.iter().copied().collect();

        // exact duplicates: keep the selected one, else the lower unary, else the older
        let mut keep = vec![true; self.hypotheses.len()];
        let mut by_inliers: HashMap<Vec<(u32, usize)>, usize> = HashMap::new();
        for i in 0..self.hypotheses.len() {
            let key: Vec<(u32, usize)> = self.hypotheses[i].inliers.iter().map(|(&f, inl)| (f, inl.detection)).collect();
            match by_inliers.get(&key).copied() {
                None => {
                    by_inliers.insert(key, i);
                }
                Some(other) => {
                    let rank = |k: usize| {
                        (
                            !selected.contains(&k),
                            hypothesis_unary(&self.hypotheses[k], t, &cfg),
                            self.hypotheses[k].id,
                        )
                    };
                    let (ri, ro) = (rank(i), rank(other));
                    let i_better = (ri.0, ri.1, ri.2) < (ro.0, ro.1, ro.2);
                    if i_better {
                        keep[other] = false;
                        by_inliers.insert(key, i);
                    } else {
                        keep[i] = false;
                    }
                }
            }
        }

        let mut idx = 0;
        self.hypotheses.retain(|h| {
            let k = keep[idx];
            idx += 1;
            let unselected_for = t - h.last_selected.unwrap_or(h.born).max(h.born);
            k && unselected_for < n_prune
                && t - h.last_update < n_prune
                && !(h.extrapolating && h.extrapolated_frames > cfg.t_extrap)
        });
        let alive: HashSet<u64> = self.hypotheses.iter().map(|h| h.id).collect();
        self.pair_cache.retain(|(a, b), _| alive.contains(a) && alive.contains(b));
    }
}

/// Predicts a hypothesis into `ctx`, switching it to extrapolation when it
/// leaves the camera frustum.
fn predict_hypothesis(h: &mut TrackHypothesis, prev: &FrameContext, ctx: &FrameContext, settings: &TrackerSettings) {
    let dt = ctx.timestamp - prev.timestamp;
    if !h.extrapolating {
        match kalman::predict(
            &h.state,
            dt,
            &ctx.intrinsics,
            &prev.ego,
            &ctx.ego,
            &settings.coupling,
            &settings.noise,
        ) {
            Ok(s) if ctx.intrinsics.contains(&s.bbox().center()) => {
                h.state = s;
                h.record_box(ctx.frame, Some(h.state.bbox()));
                return;
            }
            _ => h.extrapolating = true,
        }
    }
    h.state = kalman::predict_extrapolate(&h.state, dt, &settings.noise);
    h.extrapolated_frames += 1;
    h.record_box(ctx.frame, None);
}

/// Gated candidate observations ordered by decreasing affinity.
fn candidates_for(
    h: &TrackHypothesis,
    observations: &[Observation],
    ground: &[Option<(Vector3<f64>, nalgebra::Matrix3<f64>)>],
    ctx: &FrameContext,
    settings: &TrackerSettings,
) -> Vec<(usize, f64)> {
    let cfg = &settings.tracker;
    let mut out: Vec<(usize, f64)> = observations
        .iter()
        .enumerate()
        .filter(|(_, o)| categories_compatible(o, h, cfg))
        .filter_map(|(j, o)| {
            let terms = affinity_terms(o, ground[j].as_ref(), h, ctx);
            if terms.overlap <= 0.0 && !(terms.mahalanobis_sq <= cfg.gate_chi2) {
                return None;
            }
            let a = terms.combine(cfg);
            (a >= cfg.min_affinity).then_some((j, a))
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Two observations too similar to decide between, in image space, on the
/// ground and in appearance.
fn near_identical(
    a: &Observation,
    b: &Observation,
    ga: &Option<(Vector3<f64>, nalgebra::Matrix3<f64>)>,
    gb: &Option<(Vector3<f64>, nalgebra::Matrix3<f64>)>,
    cfg: &TrackerConfig,
) -> bool {
    if (a.detection.bbox.center() - b.detection.bbox.center()).norm() > cfg.branch_image_px {
        return false;
    }
    match (ga, gb) {
        (Some((pa, _)), Some((pb, _))) if (pa - pb).norm() <= cfg.branch_ground_m => {}
        _ => return false,
    }
    match (&a.detection.appearance, &b.detection.appearance) {
        (Some(x), Some(y)) => crate::observations::histogram_intersection(x, y) >= cfg.branch_appearance,
        _ => true,
    }
}

fn record_inlier(h: &mut TrackHypothesis, obs: &Observation, detection: usize, affinity: f64, frame: u32, settings: &TrackerSettings) {
    h.inliers.insert(
        frame,
        Inlier {
            detection,
            score: obs.detection.score,
            affinity,
        },
    );
    h.last_update = frame;
    h.update_category(obs.detection.category, &settings.tracker.confusion);
    h.update_appearance(obs.detection.appearance.as_ref(), settings.tracker.appearance_rate);
}

fn apply_observation(
    h: &mut TrackHypothesis,
    obs: &Observation,
    detection: usize,
    affinity: f64,
    ctx: &FrameContext,
    settings: &TrackerSettings,
) {
    h.state = kalman::update(&h.state, obs, ctx, &settings.size_stats, &settings.noise);
    record_inlier(h, obs, detection, affinity, ctx.frame, settings);
    h.record_box(ctx.frame, Some(h.state.bbox()));
}
