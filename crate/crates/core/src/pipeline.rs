//! Configuration file and the fuse-then-track loop over a sequence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_frame_with_diagnostics, FusionDiagnostics, FusionWeights};
use crate::geometry::EgoPose;
use crate::io::Sequence;
use crate::kalman::{CouplingWeights, NoiseConfig};
use crate::metrics::MetricsConfig;
use crate::observations::{FrameContext, Observation, Proposal3D, SizeStats};
use crate::tracker::{FrameReport, Tracker, TrackerConfig, TrackerSettings};

/// All tunable parameters. Every section is optional in the TOML file and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub fusion: FusionWeights,
    pub coupling: CouplingWeights,
    pub noise: NoiseConfig,
    pub tracker: TrackerConfig,
    pub size_stats: SizeStats,
    pub metrics: MetricsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned() + &span_hint(&e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        self.coupling.validate()?;
        self.noise.validate()?;
        self.tracker.validate()?;
        self.size_stats.validate()?;
        self.metrics.validate()
    }

    pub fn tracker_settings(&self) -> TrackerSettings {
        TrackerSettings {
            tracker: self.tracker.clone(),
            coupling: self.coupling,
            noise: self.noise,
            size_stats: self.size_stats,
        }
    }
}

fn span_hint(e: &toml::de::Error) -> String {
    e.span().map(|s| format!(" (at byte {})", s.start)).unwrap_or_default()
}

/// Switches that remove parts of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    /// Drop scene-flow velocities from the proposals.
    pub no_flow: bool,
    /// Ignore 3D proposals; every observation is partial.
    pub detections_only: bool,
    /// Purely image-based tracking: no proposals, no odometry, no 3D motion
    /// affinity and a decoupled filter.
    pub two_d_only: bool,
    /// Decoupled filter (`w_b = 0`).
    pub coupling_off: bool,
}

impl Ablation {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.two_d_only {
            parts.push("2d-only");
        }
        if self.detections_only {
            parts.push("detections-only");
        }
        if self.no_flow {
            parts.push("no-flow");
        }
        if self.coupling_off {
            parts.push("coupling-off");
        }
        if parts.is_empty() {
            "full".to_owned()
        } else {
            parts.join("+")
        }
    }

    fn uses_proposals(&self) -> bool {
        !(self.detections_only || self.two_d_only)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub reports: Vec<FrameReport>,
    pub observations: Vec<Vec<Observation>>,
    pub diagnostics: Vec<FusionDiagnostics>,
}

/// Runs the pipeline frame by frame with the given parts switched off.
pub struct Pipeline {
    config: PipelineConfig,
    ablation: Ablation,
    tracker: Tracker,
}

impl Pipeline {
    pub fn new(config: &PipelineConfig, ablation: Ablation) -> Result<Self> {
        config.validate()?;
        let mut settings = config.tracker_settings();
        if ablation.coupling_off || ablation.two_d_only {
            settings.coupling = CouplingWeights::decoupled();
        }
        if ablation.two_d_only {
            settings.tracker.use_motion = false;
        }
        Ok(Self {
            config: config.clone(),
            ablation,
            tracker: Tracker::new(settings)?,
        })
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Fuses and tracks one frame. Reported positions are in world
    /// coordinates for every variant.
    pub fn step(
        &mut self,
        detections: &[crate::observations::Detection2D],
        proposals: &[Proposal3D],
        ctx: &FrameContext,
    ) -> Result<(FrameReport, Vec<Observation>, FusionDiagnostics)> {
        let stripped: Vec<Proposal3D>;
        let proposals: &[Proposal3D] = if !self.ablation.uses_proposals() {
            &[]
        } else if self.ablation.no_flow {
            stripped = proposals
                .iter()
                .map(|p| {
                    let mut p = p.clone();
                    p.velocity = None;
                    p
                })
                .collect();
            &stripped
        } else {
            proposals
        };

        let local = if self.ablation.two_d_only {
            // without odometry every frame is its own world frame
            FrameContext {
                ego: EgoPose::identity(),
                plane: ctx.plane.transformed(&ctx.ego),
                ..*ctx
            }
        } else {
            *ctx
        };
        let (observations, diag) =
            fuse_frame_with_diagnostics(detections, proposals, &self.config.size_stats, &local, &self.config.fusion);
        let mut report = self.tracker.advance_frame(observations.clone(), &local)?;
        if self.ablation.two_d_only {
            for t in &mut report.tracks {
                t.position = ctx.ego.camera_to_world(&t.position);
            }
        }
        Ok((report, observations, diag))
    }
}

/// Runs a whole sequence.
pub fn run_sequence(seq: &Sequence, config: &PipelineConfig, ablation: Ablation) -> Result<PipelineOutput> {
    let mut pipeline = Pipeline::new(config, ablation)?;
    let mut out = PipelineOutput {
        reports: Vec::with_capacity(seq.frames()),
        observations: Vec::with_capacity(seq.frames()),
        diagnostics: Vec::with_capacity(seq.frames()),
    };
    for (i, ctx) in seq.contexts.iter().enumerate() {
        let (report, obs, diag) = pipeline.step(&seq.detections[i], seq.proposals_at(i), ctx)?;
        out.reports.push(report);
        out.observations.push(obs);
        out.diagnostics.push(diag);
    }
    Ok(out)
}

/// Per-frame fusion diagnostics as CSV.
pub fn diagnostics_csv(diagnostics: &[FusionDiagnostics]) -> String {
    let mut s = String::from("frame,detections,proposals,gated_pairs,fused,partial,energy\n");
    for (i, d) in diagnostics.iter().enumerate() {
        s.push_str(&format!(
            "{i},{},{},{},{},{},{:.6}\n",
            d.detections, d.proposals, d.gated_pairs, d.fused, d.partial, d.energy
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate;
    use crate::sim::{simulate, CameraSpec, DetectionNoise, EgoPath, ObjectSpec, ProposalNoise, ScenarioSpec};
    use crate::observations::Category;

    #[test]
    fn default_config_round_trips() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn invalid_values_name_the_field() {
        let cases = [
            ("[tracker]\ntau = -1.0", "tracker.tau"),
            ("[coupling]\nw_a = 0.5\nw_b = 0.6", "coupling"),
            ("[fusion]\nw3 = -2.0", "fusion.w3"),
            ("[metrics]\niou_threshold = 1.5", "metrics.iou_threshold"),
        ];
        for (text, field) in cases {
            let err = PipelineConfig::from_toml(text).unwrap_err().to_string();
            assert!(err.contains(field), "{err}");
        }
        let err = PipelineConfig::from_toml("[tracker]\nbogus = 1").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn ablation_names() {
        assert_eq!(Ablation::full().name(), "full");
        let a = Ablation {
            no_flow: true,
            coupling_off: true,
            ..Ablation::default()
        };
        assert_eq!(a.name(), "no-flow+coupling-off");
    }

    fn scenario() -> ScenarioSpec {
        ScenarioSpec {
            frames: 30,
            frame_rate: 10.0,
            seed: 5,
            camera: CameraSpec::default(),
            ego: EgoPath::Straight { speed: 3.0 },
            objects: vec![
                ObjectSpec {
                    category: Category::Car,
                    position: [-3.0, 14.0],
                    velocity: [0.0, 4.0],
                    motion: Default::default(),
                    size: None,
                    appearance: None,
                    start_frame: 0,
                    end_frame: None,
                },
                ObjectSpec {
                    category: Category::Pedestrian,
                    position: [2.5, 10.0],
                    velocity: [0.0, 2.5],
                    motion: Default::default(),
                    size: None,
                    appearance: None,
                    start_frame: 0,
                    end_frame: None,
                },
            ],
            detection: DetectionNoise::none(),
            proposal: ProposalNoise::none(),
            appearance_bins: 8,
            occlusion: false,
        }
    }

    fn sequence(spec: &ScenarioSpec) -> (Sequence, Vec<crate::metrics::GtTrajectory>) {
        let sim = simulate(spec).unwrap();
        let gt = sim.scene.gt_trajectories();
        (
            Sequence {
                contexts: sim.scene.contexts,
                detections: sim.detections,
                proposals: Some(sim.proposals),
            },
            gt,
        )
    }

    #[test]
    fn every_variant_tracks_a_clean_scene() {
        let (seq, gt) = sequence(&scenario());
        let cfg = PipelineConfig::default();
        for ablation in [
            Ablation::full(),
            Ablation { no_flow: true, ..Ablation::default() },
            Ablation { detections_only: true, ..Ablation::default() },
            Ablation { two_d_only: true, ..Ablation::default() },
            Ablation { coupling_off: true, ..Ablation::default() },
        ] {
            let out = run_sequence(&seq, &cfg, ablation).unwrap();
            let r = evaluate(&gt, &out.reports, &cfg.metrics).unwrap();
            assert!(r.mota > 0.9, "{}: mota {}", ablation.name(), r.mota);
            assert_eq!(r.id_switches, 0, "{}", ablation.name());
            assert!(r.motp3d < 2.0, "{}: motp3d {}", ablation.name(), r.motp3d);
        }
    }

    #[test]
    fn detections_only_has_no_fused_observations() {
        let (seq, _) = sequence(&scenario());
        let out = run_sequence(&seq, &PipelineConfig::default(), Ablation { detections_only: true, ..Ablation::default() }).unwrap();
        assert!(out.observations.iter().flatten().all(|o| !o.fused()));
        let full = run_sequence(&seq, &PipelineConfig::default(), Ablation::full()).unwrap();
        assert!(full.observations.iter().flatten().any(Observation::fused));
    }

    #[test]
    fn diagnostics_csv_has_one_row_per_frame() {
        let (seq, _) = sequence(&scenario());
        let out = run_sequence(&seq, &PipelineConfig::default(), Ablation::full()).unwrap();
        assert_eq!(diagnostics_csv(&out.diagnostics).lines().count(), 1 + seq.frames());
    }
}
