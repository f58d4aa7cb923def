use std::collections::BTreeMap;

use crate::geometry::BBox2D;
use crate::kalman::CoupledState;
use crate::observations::{normalize_histogram, Category};

/// Identifies an observation by frame and detection index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObservationKey {
    pub frame: u32,
    pub detection: usize,
}

/// What a hypothesis remembers about one of its inlier observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inlier {
    pub detection: usize,
    pub score: f64,
    /// Affinity between the observation and the hypothesis when it was associated.
    pub affinity: f64,
}

#[derive(Debug, Clone)]
pub struct TrackHypothesis {
    pub id: u64,
    /// Shared by a hypothesis and all branches cloned from it; reported as the track id.
    pub track_id: u64,
    pub state: CoupledState,
    pub born: u32,
    pub last_update: u32,
    pub inliers: BTreeMap<u32, Inlier>,
    /// Posterior (or predicted, when unobserved) box per frame since `born`;
    /// `None` while extrapolating.
    pub boxes: Vec<Option<BBox2D>>,
    pub category_dist: [f64; 3],
    pub appearance: Option<Vec<f64>>,
    pub extrapolating: bool,
    pub extrapolated_frames: u32,
    pub last_selected: Option<u32>,
}

impl TrackHypothesis {
    pub fn category(&self) -> Category {
        let mut best = 0;
        for i in 1..3 {
            if self.category_dist[i] > self.category_dist[best] {
                best = i;
            }
        }
        Category::from_index(best).expect("three categories")
    }

    pub fn box_at(&self, frame: u32) -> Option<BBox2D> {
        if frame < self.born {
            return None;
        }
        self.boxes.get((frame - self.born) as usize).copied().flatten()
    }

    /// Last frame covered by the box history.
    pub fn last_frame(&self) -> Option<u32> {
        (!self.boxes.is_empty()).then(|| self.born + self.boxes.len() as u32 - 1)
    }

    pub fn observation_at(&self, frame: u32) -> Option<ObservationKey> {
        self.inliers.get(&frame).map(|i| ObservationKey {
            frame,
            detection: i.detection,
        })
    }

    pub(crate) fn record_box(&mut self, frame: u32, bbox: Option<BBox2D>) {
        let slot = (frame - self.born) as usize;
        if self.boxes.len() <= slot {
            self.boxes.resize(slot + 1, None);
        }
        self.boxes[slot] = bbox;
    }

    /// Forward Bayesian filtering of the category with likelihood row-stochastic
    /// `confusion[true][detected]`.
    pub fn update_category(&mut self, detected: Category, confusion: &[[f64; 3]; 3]) {
        let mut post = [0.0; 3];
        for (c, p) in post.iter_mut().enumerate() {
            *p = self.category_dist[c] * confusion[c][detected.index()];
        }
        let sum: f64 = post.iter().sum();
        if sum > 0.0 {
            self.category_dist = post.map(|p| p / sum);
        }
    }

    /// Exponential running average of the appearance histogram.
    pub fn update_appearance(&mut self, observed: Option<&Vec<f64>>, rate: f64) {
        let Some(obs) = observed else {
            return;
        };
        self.appearance = Some(match self.appearance.take() {
            Some(cur) if cur.len() == obs.len() => {
                normalize_histogram(cur.iter().zip(obs).map(|(a, b)| (1.0 - rate) * a + rate * b).collect())
            }
            _ => obs.clone(),
        });
    }
}
