//! Early fusion of image detections with 3D proposals.
//!
//! Every gated (detection, proposal) pair becomes a node of a binary CRF.
//! The unary rewards plausible size, ground-plane agreement and image
//! overlap; the pairwise term penalizes proposals sharing 3D points and
//! forbids two selected pairs from claiming the same detection or proposal.
//! Detections left unassociated are emitted as partial observations.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::crf::{solve_multibranch, EnergyGraph, DEFAULT_BRANCHES};
use crate::error::{Error, Result};
use crate::geometry::{backproject_to_ground, iou_2d, project_box_hull, BBox2D};
use crate::observations::{Detection2D, DepthNoise, FrameContext, Observation, Proposal3D, SizeStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionWeights {
    /// Size plausibility weight.
    pub w1: f64,
    /// Ground-plane agreement weight.
    pub w2: f64,
    /// Image overlap weight.
    pub w3: f64,
    /// Minimal support an association must exceed.
    pub w4: f64,
    /// Shared-point overlap penalty.
    pub w5: f64,
    pub gate_distance: f64,
    pub gate_iou: f64,
    /// Uncertainty of a back-projected detection footpoint.
    pub detection_noise: DepthNoise,
    /// Uncertainty of a proposal position.
    pub proposal_noise: DepthNoise,
    pub branches: usize,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 2.0,
            w4: 1.5,
            w5: 2.0,
            gate_distance: 3.0,
            gate_iou: 0.1,
            detection_noise: DepthNoise { sigma0: 0.1, k: 0.005 },
            proposal_noise: DepthNoise { sigma0: 0.1, k: 0.005 },
            branches: DEFAULT_BRANCHES,
        }
    }
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("w4", self.w4),
            ("w5", self.w5),
            ("gate_distance", self.gate_distance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("fusion.{name}"), "must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.gate_iou) {
            return Err(Error::invalid("fusion.gate_iou", "must lie in [0, 1]"));
        }
        if self.branches == 0 {
            return Err(Error::invalid("fusion.branches", "must be at least 1"));
        }
        self.detection_noise.validate("fusion.detection_noise")?;
        self.proposal_noise.validate("fusion.proposal_noise")
    }
}

/// The three association cues of a (detection, proposal) pair, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationTerms {
    pub size: f64,
    pub position: f64,
    pub projection: f64,
    /// Ground-plane Mahalanobis distance behind `position`.
    pub mahalanobis: f64,
}

impl AssociationTerms {
    pub fn unary(&self, w: &FusionWeights) -> f64 {
        -w.w1 * self.size - w.w2 * self.position - w.w3 * self.projection + w.w4
    }
}

fn footpoint_on_ground(det: &Detection2D, ctx: &FrameContext) -> Option<Vector3<f64>> {
    backproject_to_ground(&det.bbox.footpoint(), &ctx.intrinsics, &ctx.ego, &ctx.plane).ok()
}

/// Image hull of the proposal's upright box, if it lies fully in front of the camera.
pub fn projected_proposal_box(prop: &Proposal3D, ctx: &FrameContext) -> Option<BBox2D> {
    project_box_hull(&prop.position, &prop.size, &ctx.plane, &ctx.ego, &ctx.intrinsics).ok()
}

/// Pairs whose ground-plane distance and projected-box overlap pass both gates.
pub fn gate_pairs(
    dets: &[Detection2D],
    props: &[Proposal3D],
    ctx: &FrameContext,
    w: &FusionWeights,
) -> Vec<(usize, usize)> {
    if props.is_empty() {
        return Vec::new();
    }
    let prop_boxes: Vec<Option<BBox2D>> = props.iter().map(|p| projected_proposal_box(p, ctx)).collect();
    let mut pairs = Vec::new();
    for (di, det) in dets.iter().enumerate() {
        let Some(foot) = footpoint_on_ground(det, ctx) else {
            continue;
        };
        let foot2 = ctx.plane.coordinates(&foot);
        for (pi, prop) in props.iter().enumerate() {
            let dist = (ctx.plane.coordinates(&prop.position) - foot2).norm();
            if dist > w.gate_distance {
                continue;
            }
            let iou = prop_boxes[pi].map_or(0.0, |b| iou_2d(&b, &det.bbox));
            if iou >= w.gate_iou && iou > 0.0 {
                pairs.push((di, pi));
            }
        }
    }
    pairs
}

/// Squared Mahalanobis distance on the ground plane between two world points
/// with world-frame covariances `cov_a + cov_b`.
pub(crate) fn ground_mahalanobis_sq(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    cov: &nalgebra::Matrix3<f64>,
    plane: &crate::geometry::GroundPlane,
) -> f64 {
    let (e_w, e_l) = plane.basis();
    let delta = Vector2::new(e_w.dot(&(a - b)), e_l.dot(&(a - b)));
    let s = Matrix2::new(
        e_w.dot(&(cov * e_w)),
        e_w.dot(&(cov * e_l)),
        e_l.dot(&(cov * e_w)),
        e_l.dot(&(cov * e_l)),
    );
    match s.try_inverse() {
        Some(inv) => (delta.transpose() * inv * delta)[(0, 0)].max(0.0),
        None => f64::INFINITY,
    }
}

pub fn association_terms(
    det: &Detection2D,
    prop: &Proposal3D,
    stats: &SizeStats,
    ctx: &FrameContext,
    w: &FusionWeights,
) -> AssociationTerms {
    let prior = stats.get(det.category);
    let size = prop.size.as_vector();
    let size_sq: f64 = (0..3).map(|d| (size[d] - prior.mean[d]).powi(2) / prior.var[d]).sum();

    let mahalanobis = match footpoint_on_ground(det, ctx) {
        Some(foot) => {
            let cov = w.detection_noise.covariance(&foot, &ctx.ego) + w.proposal_noise.covariance(&prop.position, &ctx.ego);
            ground_mahalanobis_sq(&foot, &prop.position, &cov, &ctx.plane).sqrt()
        }
        None => f64::INFINITY,
    };
    let projection = projected_proposal_box(prop, ctx).map_or(0.0, |b| iou_2d(&b, &det.bbox));

    AssociationTerms {
        size: (-0.5 * size_sq).exp(),
        position: (-0.5 * mahalanobis * mahalanobis).exp(),
        projection,
        mahalanobis,
    }
}

/// Association potential of a gated pair; negative values favor selection.
pub fn fusion_unary(
    det: &Detection2D,
    prop: &Proposal3D,
    stats: &SizeStats,
    ctx: &FrameContext,
    w: &FusionWeights,
) -> f64 {
    association_terms(det, prop, stats, ctx, w).unary(w)
}

/// Returns the soft point-overlap penalty and whether the two pairs are
/// mutually exclusive because they share a detection or a proposal.
///
/// Pairs are `(detection index, proposal index)` into the frame's lists.
pub fn fusion_pairwise(
    a: (usize, usize),
    b: (usize, usize),
    props: &[Proposal3D],
    w: &FusionWeights,
) -> (f64, bool) {
    let exclusive = a.0 == b.0 || a.1 == b.1;
    let (pa, pb) = (&props[a.1], &props[b.1]);
    let smaller = pa.points().len().min(pb.points().len());
    let overlap = if smaller == 0 {
        0.0
    } else {
        w.w5 * pa.shared_points(pb) as f64 / smaller as f64
    };
    (overlap, exclusive)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FusionDiagnostics {
    pub detections: usize,
    pub proposals: usize,
    pub gated_pairs: usize,
    pub fused: usize,
    pub partial: usize,
    pub energy: f64,
}

/// Fuses one frame. Returns exactly one observation per detection, in
/// detection order.
pub fn fuse_frame(
    dets: &[Detection2D],
    props: &[Proposal3D],
    stats: &SizeStats,
    ctx: &FrameContext,
    w: &FusionWeights,
) -> Vec<Observation> {
    fuse_frame_with_diagnostics(dets, props, stats, ctx, w).0
}

pub fn fuse_frame_with_diagnostics(
    dets: &[Detection2D],
    props: &[Proposal3D],
    stats: &SizeStats,
    ctx: &FrameContext,
    w: &FusionWeights,
) -> (Vec<Observation>, FusionDiagnostics) {
    let pairs = gate_pairs(dets, props, ctx, w);
    let graph = fusion_graph(&pairs, dets, props, stats, ctx, w);
    let selection = solve_multibranch(&graph, w.branches);

    let mut assigned: Vec<Option<usize>> = vec![None; dets.len()];
    for node in selection.indices() {
        let (d, p) = pairs[node];
        debug_assert!(assigned[d].is_none());
        assigned[d] = Some(p);
    }
    let observations: Vec<Observation> = dets
        .iter()
        .enumerate()
        .map(|(d, det)| match assigned[d] {
            Some(p) => Observation::fused_with(d, det.clone(), p, props[p].clone()),
            None => Observation::partial(d, det.clone()),
        })
        .collect();
    let fused = observations.iter().filter(|o| o.fused()).count();
    let diag = FusionDiagnostics {
        detections: dets.len(),
        proposals: props.len(),
        gated_pairs: pairs.len(),
        fused,
        partial: dets.len() - fused,
        energy: selection.energy,
    };
    (observations, diag)
}

/// CRF over gated pairs, node `k` corresponding to `pairs[k]`.
pub fn fusion_graph(
    pairs: &[(usize, usize)],
    dets: &[Detection2D],
    props: &[Proposal3D],
    stats: &SizeStats,
    ctx: &FrameContext,
    w: &FusionWeights,
) -> EnergyGraph {
    let unaries = pairs
        .iter()
        .map(|&(d, p)| fusion_unary(&dets[d], &props[p], stats, ctx, w))
        .collect();
    let mut graph = EnergyGraph::new(unaries);
    for a in 0..pairs.len() {
        for b in (a + 1)..pairs.len() {
            let (penalty, exclusive) = fusion_pairwise(pairs[a], pairs[b], props, w);
            if exclusive {
                graph.add_exclusion(a, b);
            } else if penalty > 0.0 {
                graph.add_pairwise(a, b, penalty);
            }
        }
    }
    graph
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::solve_exhaustive;
    use crate::geometry::{CameraIntrinsics, EgoPose, GroundPlane, Size3};
    use crate::observations::Category;
    use approx::assert_abs_diff_eq;

    fn ctx() -> FrameContext {
        FrameContext {
            frame: 0,
            timestamp: 0.0,
            intrinsics: CameraIntrinsics::new(721.5, 609.6, 172.9, 1242.0, 375.0).unwrap(),
            ego: EgoPose::identity(),
            plane: GroundPlane::below_camera(1.65),
        }
    }

    fn car_at(x: f64, z: f64, points: std::ops::Range<u32>) -> Proposal3D {
        Proposal3D::new(
            Vector3::new(x, 1.65, z),
            Some(Vector3::new(1.0, 0.0, 0.0)),
            Size3::new(1.8, 1.6, 4.5),
            0.5,
            points.collect(),
        )
    }

    fn detection_over(prop: &Proposal3D, ctx: &FrameContext) -> Detection2D {
        Detection2D::new(projected_proposal_box(prop, ctx).unwrap(), Category::Car, 0.9)
    }

    #[test]
    fn gating_examples() {
        let ctx = ctx();
        let w = FusionWeights::default();
        let prop = car_at(2.0, 15.0, 0..50);
        let det = detection_over(&prop, &ctx);
        assert!(gate_pairs(&[det.clone()], &[], &ctx, &w).is_empty());
        assert_eq!(gate_pairs(&[det.clone()], &[prop.clone()], &ctx, &w), vec![(0, 0)]);

        // detection 50 m away from the only proposal
        let far = car_at(2.0, 65.0, 0..50);
        let far_det = detection_over(&far, &ctx);
        let foot = backproject_to_ground(&far_det.bbox.footpoint(), &ctx.intrinsics, &ctx.ego, &ctx.plane).unwrap();
        assert!((foot - prop.position).norm() > 40.0);
        assert!(gate_pairs(&[far_det], &[prop], &ctx, &w).is_empty());
    }

    #[test]
    fn unary_limits() {
        let ctx = ctx();
        let w = FusionWeights::default();
        let stats = SizeStats::default();
        let terms = AssociationTerms {
            size: 1.0,
            position: 1.0,
            projection: 1.0,
            mahalanobis: 0.0,
        };
        assert_eq!(terms.unary(&w), -w.w1 - w.w2 - w.w3 + w.w4);
        let mid = AssociationTerms {
            size: 1.0,
            position: (-0.5f64).exp(),
            projection: 0.5,
            mahalanobis: 1.0,
        };
        assert_abs_diff_eq!(
            mid.unary(&w),
            -w.w1 - w.w2 * (-0.5f64).exp() - 0.5 * w.w3 + w.w4,
            epsilon = 1e-12
        );

        // size 5 sigma off, far away and disjoint in the image
        let odd = Proposal3D::new(Vector3::new(-8.0, 1.65, 40.0), None, Size3::new(3.6, 3.2, 9.0), 0.1, vec![1]);
        let det = detection_over(&car_at(4.0, 8.0, 0..1), &ctx);
        let t = association_terms(&det, &odd, &stats, &ctx, &w);
        assert!(t.size < 1e-5 && t.position < 1e-5 && t.projection == 0.0);
        assert_abs_diff_eq!(fusion_unary(&det, &odd, &stats, &ctx, &w), w.w4, epsilon = 1e-4);
    }

    #[test]
    fn unary_at_class_mean_exact_projection() {
        let ctx = ctx();
        let w = FusionWeights::default();
        let prop = car_at(0.0, 12.0, 0..10);
        let det = detection_over(&prop, &ctx);
        let t = association_terms(&det, &prop, &SizeStats::default(), &ctx, &w);
        assert_eq!(t.size, 1.0);
        assert_eq!(t.projection, 1.0);
        assert!(t.position > 0.0 && t.position < 1.0);
    }

    #[test]
    fn pairwise_examples() {
        let w = FusionWeights::default();
        let props = vec![car_at(0.0, 10.0, 0..20), car_at(3.0, 10.0, 10..50), car_at(6.0, 10.0, 100..120)];
        assert_eq!(fusion_pairwise((0, 0), (1, 2), &props, &w), (0.0, false));
        assert!(fusion_pairwise((3, 0), (3, 1), &props, &w).1);
        assert!(fusion_pairwise((3, 0), (4, 0), &props, &w).1);
        let (penalty, excl) = fusion_pairwise((0, 0), (1, 1), &props, &w);
        assert!(!excl);
        assert_abs_diff_eq!(penalty, w.w5 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fuse_without_proposals_is_all_partial() {
        let ctx = ctx();
        let dets = vec![detection_over(&car_at(0.0, 10.0, 0..1), &ctx); 3];
        let obs = fuse_frame(&dets, &[], &SizeStats::default(), &ctx, &FusionWeights::default());
        assert_eq!(obs.len(), 3);
        assert!(obs.iter().all(|o| !o.fused()));
    }

    #[test]
    fn fuse_single_match() {
        let ctx = ctx();
        let prop = car_at(1.0, 14.0, 0..30);
        let det = detection_over(&prop, &ctx);
        let w = FusionWeights::default();
        assert!(fusion_unary(&det, &prop, &SizeStats::default(), &ctx, &w) < 0.0);
        let obs = fuse_frame(&[det], &[prop], &SizeStats::default(), &ctx, &w);
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].proposal_index, Some(0));
    }

    #[test]
    fn competing_detections_resolved_like_exhaustive() {
        let ctx = ctx();
        let w = FusionWeights::default();
        let stats = SizeStats::default();
        let prop = car_at(1.0, 14.0, 0..30);
        let good = detection_over(&prop, &ctx);
        let mut shifted = good.clone();
        shifted.bbox.x += 0.3 * shifted.bbox.w;
        let dets = vec![shifted, good];
        let props = vec![prop];

        let pairs = gate_pairs(&dets, &props, &ctx, &w);
        assert_eq!(pairs.len(), 2);
        let graph = fusion_graph(&pairs, &dets, &props, &stats, &ctx, &w);
        let exact = solve_exhaustive(&graph).unwrap();

        let obs = fuse_frame(&dets, &props, &stats, &ctx, &w);
        assert!(!obs[0].fused());
        assert!(obs[1].fused());
        let chosen: Vec<bool> = pairs.iter().map(|&(d, _)| obs[d].fused()).collect();
        assert_eq!(chosen, exact.selected);
    }
}
