//! Observation-to-hypothesis affinity and the hypothesis selection energy.

use nalgebra::{Matrix3, Vector3};

use super::hypothesis::TrackHypothesis;
use super::{TrackerConfig, TrackerSettings};
use crate::fusion::ground_mahalanobis_sq;
use crate::geometry::{backproject_to_ground, iou_2d};
use crate::kalman::NoiseConfig;
use crate::observations::{histogram_intersection, FrameContext, Observation};

/// Ground position of an observation with its measurement covariance: the
/// proposal for fused observations, the back-projected footpoint otherwise.
pub fn observation_ground(
    obs: &Observation,
    ctx: &FrameContext,
    noise: &NoiseConfig,
) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    match &obs.proposal {
        Some(p) => Some((p.position, noise.fused_position.covariance(&p.position, &ctx.ego))),
        None => backproject_to_ground(&obs.detection.bbox.footpoint(), &ctx.intrinsics, &ctx.ego, &ctx.plane)
            .ok()
            .map(|g| (g, noise.partial_position.covariance(&g, &ctx.ego))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityTerms {
    /// Histogram intersection, when both sides carry an appearance model.
    pub appearance: Option<f64>,
    /// `exp(-m/2)` of the ground-plane Mahalanobis distance `m`.
    pub motion: f64,
    pub overlap: f64,
    /// Distance of the observation from the camera, meters.
    pub distance: f64,
    pub mahalanobis_sq: f64,
}

impl AffinityTerms {
    /// Weighted combination. The motion weight decays with distance and the
    /// overlap term takes the remainder.
    pub fn combine(&self, cfg: &TrackerConfig) -> f64 {
        let w_c = if self.appearance.is_some() { cfg.w_c } else { 0.0 };
        let w_m = if cfg.use_motion {
            (1.0 - w_c) * (-cfg.gamma * self.distance).exp()
        } else {
            0.0
        };
        let w_p = 1.0 - w_c - w_m;
        w_c * self.appearance.unwrap_or(0.0) + w_m * self.motion + w_p * self.overlap
    }
}

pub fn affinity_terms(
    obs: &Observation,
    ground: Option<&(Vector3<f64>, Matrix3<f64>)>,
    hyp: &TrackHypothesis,
    ctx: &FrameContext,
) -> AffinityTerms {
    let predicted = hyp.state.position();
    let (mahalanobis_sq, distance) = match ground {
        Some((g, cov)) => {
            let m = ground_mahalanobis_sq(g, &predicted, &(cov + hyp.state.position_covariance()), &ctx.plane);
            (m, ctx.depth_of(g).max(0.0))
        }
        None => (f64::INFINITY, ctx.depth_of(&predicted).max(0.0)),
    };
    let appearance = match (&obs.detection.appearance, &hyp.appearance) {
        (Some(a), Some(b)) if a.len() == b.len() => Some(histogram_intersection(a, b)),
        _ => None,
    };
    AffinityTerms {
        appearance,
        motion: (-0.5 * mahalanobis_sq).exp(),
        overlap: iou_2d(&hyp.state.bbox(), &obs.detection.bbox),
        distance,
        mahalanobis_sq,
    }
}

/// Immature hypotheses accept any category; afterwards the detection class
/// must match the most likely category.
pub fn categories_compatible(obs: &Observation, hyp: &TrackHypothesis, cfg: &TrackerConfig) -> bool {
    hyp.inliers.len() < cfg.immature_inliers || obs.detection.category == hyp.category()
}

/// Affinity in `[0, 1]` between an observation and a hypothesis predicted to
/// the observation's frame.
pub fn affinity(obs: &Observation, hyp: &TrackHypothesis, ctx: &FrameContext, settings: &TrackerSettings) -> f64 {
    if !categories_compatible(obs, hyp, &settings.tracker) {
        return 0.0;
    }
    let ground = observation_ground(obs, ctx, &settings.noise);
    affinity_terms(obs, ground.as_ref(), hyp, ctx).combine(&settings.tracker)
}

/// `w_h_min` minus the time-decayed, score-weighted affinities of all inliers.
pub fn hypothesis_unary(hyp: &TrackHypothesis, t_n: u32, cfg: &TrackerConfig) -> f64 {
    let support: f64 = hyp
        .inliers
        .iter()
        .map(|(&t, inl)| (-cfg.tau * f64::from(t_n.saturating_sub(t))).exp() * inl.score * inl.affinity)
        .sum();
    cfg.w_h_min - support
}

/// Sum of squared box IoU and number of shared observations over the frames
/// `from..to`.
pub(crate) fn overlap_terms(a: &TrackHypothesis, b: &TrackHypothesis, from: u32, to: u32) -> (f64, usize) {
    let mut iou_sq = 0.0;
    let mut shared = 0;
    for t in from..to {
        if let (Some(ba), Some(bb)) = (a.box_at(t), b.box_at(t)) {
            let iou = iou_2d(&ba, &bb);
            iou_sq += iou * iou;
        }
        if let (Some(ia), Some(ib)) = (a.inliers.get(&t), b.inliers.get(&t)) {
            if ia.detection == ib.detection {
                shared += 1;
            }
        }
    }
    (iou_sq, shared)
}

/// Common lifetime of two hypotheses, if any.
pub(crate) fn common_frames(a: &TrackHypothesis, b: &TrackHypothesis) -> Option<(u32, u32)> {
    let from = a.born.max(b.born);
    let to = a.last_frame()?.min(b.last_frame()?);
    (from <= to).then_some((from, to))
}

/// Overlap and shared-observation penalty between two hypotheses.
pub fn hypothesis_pairwise(a: &TrackHypothesis, b: &TrackHypothesis, cfg: &TrackerConfig) -> f64 {
    match common_frames(a, b) {
        Some((from, to)) => {
            let (iou_sq, shared) = overlap_terms(a, b, from, to + 1);
            cfg.w_h_ol * iou_sq + cfg.w_h_sh * shared as f64
        }
        None => 0.0,
    }
}
