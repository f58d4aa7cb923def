//! Shared workloads for the benchmarks in `benches/`.

use fusetrack::sim::{simulate, CameraSpec, DetectionNoise, EgoPath, Motion, ObjectSpec, ProposalNoise, ScenarioSpec};
use fusetrack::{Category, Simulation};

/// `rows * cols` cars on a grid ahead of a slowly driving camera, with mild
/// detector and stereo noise. Every object is detected and has a proposal.
pub fn crowded_spec(rows: usize, cols: usize, frames: u32) -> ScenarioSpec {
    let mut objects = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            objects.push(ObjectSpec {
                category: Category::Car,
                position: [-13.5 + 3.0 * col as f64, 30.0 + 6.0 * row as f64 + 0.3 * col as f64],
                velocity: [0.0, 1.0],
                motion: Motion::Constant,
                size: None,
                appearance: None,
                start_frame: 0,
                end_frame: None,
            });
        }
    }
    ScenarioSpec {
        frames,
        frame_rate: 10.0,
        seed: 3,
        camera: CameraSpec::default(),
        ego: EgoPath::Straight { speed: 1.0 },
        objects,
        detection: DetectionNoise {
            bbox_sigma: 1.0,
            ..DetectionNoise::none()
        },
        proposal: ProposalNoise {
            lateral_sigma: 0.1,
            k: 0.002,
            z_max: f64::INFINITY,
            ..ProposalNoise::none()
        },
        appearance_bins: 8,
        occlusion: false,
    }
}

/// 50 detections and 50 proposals per frame.
pub fn crowded(frames: u32) -> Simulation {
    simulate(&crowded_spec(5, 10, frames)).expect("valid scenario")
}
