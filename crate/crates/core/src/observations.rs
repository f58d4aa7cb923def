//! Detections, 3D proposals and the fused observations built from them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox2D, CameraIntrinsics, EgoPose, GroundPlane, Size3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Car,
    Pedestrian,
    Cyclist,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Car, Category::Pedestrian, Category::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Name used in KITTI label files.
    pub fn kitti_name(self) -> &'static str {
        match self {
            Category::Car => "Car",
            Category::Pedestrian => "Pedestrian",
            Category::Cyclist => "Cyclist",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kitti_name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(Category::Car),
            "pedestrian" => Ok(Category::Pedestrian),
            "cyclist" => Ok(Category::Cyclist),
            other => Err(Error::invalid("category", format!("unknown category `{other}`"))),
        }
    }
}

/// Per-frame camera state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameContext {
    pub frame: u32,
    pub timestamp: f64,
    pub intrinsics: CameraIntrinsics,
    pub ego: EgoPose,
    pub plane: GroundPlane,
}

impl FrameContext {
    /// Depth of a world point in this frame's camera.
    pub fn depth_of(&self, world: &Vector3<f64>) -> f64 {
        self.ego.world_to_camera(world).z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub bbox: BBox2D,
    pub category: Category,
    pub score: f64,
    /// Normalized color histogram of the box interior, when available.
    pub appearance: Option<Vec<f64>>,
}

impl Detection2D {
    pub fn new(bbox: BBox2D, category: Category, score: f64) -> Self {
        Self {
            bbox,
            category,
            score,
            appearance: None,
        }
    }

    pub fn with_appearance(mut self, appearance: Vec<f64>) -> Self {
        self.appearance = Some(normalize_histogram(appearance));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bbox.is_valid() {
            return Err(Error::invalid("bbox", "width and height must be positive"));
        }
        if !self.score.is_finite() {
            return Err(Error::invalid("score", "must be finite"));
        }
        Ok(())
    }
}

/// Class-agnostic 3D object candidate on the ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal3D {
    /// Footprint center in world coordinates.
    pub position: Vector3<f64>,
    /// Scene-flow velocity in world coordinates, m/s.
    pub velocity: Option<Vector3<f64>>,
    pub size: Size3,
    pub score: f64,
    /// Sorted, deduplicated ids of supporting 3D points.
    points: Vec<u32>,
}

impl Proposal3D {
    pub fn new(
        position: Vector3<f64>,
        velocity: Option<Vector3<f64>>,
        size: Size3,
        score: f64,
        mut points: Vec<u32>,
    ) -> Self {
        points.sort_unstable();
        points.dedup();
        Self {
            position,
            velocity,
            size,
            score,
            points,
        }
    }

    pub fn points(&self) -> &[u32] {
        &self.points
    }

    pub fn validate(&self, plane: &GroundPlane) -> Result<()> {
        if !self.size.is_valid() {
            return Err(Error::invalid("size3d", "components must be positive"));
        }
        if plane.signed_distance(&self.position).abs() > 1e-6 {
            return Err(Error::invalid("position", "must lie on the ground plane"));
        }
        Ok(())
    }

    /// Number of point ids shared with `other`.
    pub fn shared_points(&self, other: &Proposal3D) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.points, &other.points);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// A detection, optionally fused with the 3D proposal it was associated to.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub detection_index: usize,
    pub detection: Detection2D,
    pub proposal_index: Option<usize>,
    pub proposal: Option<Proposal3D>,
}

impl Observation {
    pub fn partial(detection_index: usize, detection: Detection2D) -> Self {
        Self {
            detection_index,
            detection,
            proposal_index: None,
            proposal: None,
        }
    }

    pub fn fused_with(
        detection_index: usize,
        detection: Detection2D,
        proposal_index: usize,
        proposal: Proposal3D,
    ) -> Self {
        Self {
            detection_index,
            detection,
            proposal_index: Some(proposal_index),
            proposal: Some(proposal),
        }
    }

    pub fn fused(&self) -> bool {
        self.proposal.is_some()
    }
}

/// Per-category mean and variance of `(w, h, l)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeStats {
    pub car: SizePrior,
    pub pedestrian: SizePrior,
    pub cyclist: SizePrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizePrior {
    pub mean: [f64; 3],
    pub var: [f64; 3],
}

impl SizePrior {
    /// Prior with standard deviation `rel_sigma * mean` per dimension.
    pub fn relative(mean: [f64; 3], rel_sigma: f64) -> Self {
        Self {
            mean,
            var: mean.map(|m| (rel_sigma * m).powi(2)),
        }
    }

    pub fn mean_size(&self) -> Size3 {
        Size3::new(self.mean[0], self.mean[1], self.mean[2])
    }
}

impl Default for SizeStats {
    fn default() -> Self {
        Self {
            car: SizePrior::relative([1.8, 1.6, 4.5], 0.2),
            pedestrian: SizePrior::relative([0.6, 1.75, 0.6], 0.2),
            cyclist: SizePrior::relative([0.6, 1.75, 1.8], 0.2),
        }
    }
}

impl SizeStats {
    pub fn get(&self, category: Category) -> &SizePrior {
        match category {
            Category::Car => &self.car,
            Category::Pedestrian => &self.pedestrian,
            Category::Cyclist => &self.cyclist,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in Category::ALL {
            let prior = self.get(c);
            let name = c.kitti_name().to_ascii_lowercase();
            if prior.var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::invalid(format!("size_stats.{name}.var"), "variances must be positive"));
            }
            if prior.mean.iter().any(|m| !(*m > 0.0)) {
                return Err(Error::invalid(format!("size_stats.{name}.mean"), "sizes must be positive"));
            }
        }
        Ok(())
    }
}

/// Stereo-style uncertainty: lateral standard deviation `sigma0`, depth
/// standard deviation `sigma0 + k * z^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthNoise {
    pub sigma0: f64,
    pub k: f64,
}

impl DepthNoise {
    pub fn depth_sigma(&self, depth: f64) -> f64 {
        self.sigma0 + self.k * depth * depth
    }

    /// World-frame covariance of a point seen at `world` from camera `ego`.
    pub fn covariance(&self, world: &Vector3<f64>, ego: &EgoPose) -> Matrix3<f64> {
        let z = ego.world_to_camera(world).z.max(0.0);
        let lat = self.sigma0 * self.sigma0;
        let d = self.depth_sigma(z).powi(2);
        let cam = Matrix3::from_diagonal(&Vector3::new(lat, lat, d));
        ego.rotation.transpose() * cam * ego.rotation
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.sigma0 > 0.0) {
            return Err(Error::invalid(format!("{field}.sigma0"), "must be positive"));
        }
        if !(self.k >= 0.0) {
            return Err(Error::invalid(format!("{field}.k"), "must be non-negative"));
        }
        Ok(())
    }
}

pub fn normalize_histogram(mut h: Vec<f64>) -> Vec<f64> {
    for v in h.iter_mut() {
        *v = v.max(0.0);
    }
    let sum: f64 = h.iter().sum();
    if sum > 0.0 {
        h.iter_mut().for_each(|v| *v /= sum);
    } else if !h.is_empty() {
        let n = h.len() as f64;
        h.iter_mut().for_each(|v| *v = 1.0 / n);
    }
    h
}

/// Histogram intersection kernel, in `[0, 1]` for normalized inputs.
pub fn histogram_intersection(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}
