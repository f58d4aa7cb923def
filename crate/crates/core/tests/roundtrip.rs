//! Simulate, write to disk, read back, track and score through the public API.

use fusetrack::io;
use fusetrack::{evaluate, run_sequence, simulate, Ablation, PipelineConfig, ScenarioSpec};

const SCENARIO: &str = r#"
frames = 25
seed = 11

[ego]
kind = "straight"
speed = 4.0

[[objects]]
category = "car"
position = [-3.0, 14.0]
velocity = [0.0, 5.0]

[[objects]]
category = "cyclist"
position = [3.0, 18.0]
velocity = [0.0, 4.0]

[detection]
bbox_sigma = 0.0
miss_base = 0.0
miss_slope = 0.0
false_positives = 0.0
confusion = 0.0

[proposal]
lateral_sigma = 0.0
k = 0.0
size_sigma = 0.0
velocity_sigma = 0.0
z_max = 1000.0
"#;

#[test]
fn tracking_from_disk_matches_tracking_in_memory() {
    let spec = ScenarioSpec::from_toml(SCENARIO).unwrap();
    let sim = simulate(&spec).unwrap();
    let seq = sim.sequence();
    let gt = sim.scene.gt_trajectories();
    let sizes: Vec<_> = gt
        .iter()
        .map(|t| sim.scene.objects.iter().find(|o| o.id == t.id).unwrap().size)
        .collect();

    let dir = tempfile::tempdir().unwrap();
    io::write_sequence(dir.path(), &seq).unwrap();
    io::write_labels(&dir.path().join(io::LABELS_FILE), &gt, &sizes, &seq.contexts).unwrap();

    let read = io::read_sequence(dir.path()).unwrap();
    assert_eq!(read.frames(), seq.frames());
    let labels = io::read_labels(&dir.path().join(io::LABELS_FILE), &read.contexts).unwrap();
    assert_eq!(labels.len(), gt.len());

    let cfg = PipelineConfig::default();
    let from_disk = run_sequence(&read, &cfg, Ablation::full()).unwrap();
    let in_memory = run_sequence(&seq, &cfg, Ablation::full()).unwrap();
    let a = evaluate(&labels, &from_disk.reports, &cfg.metrics).unwrap();
    let b = evaluate(&gt, &in_memory.reports, &cfg.metrics).unwrap();
    assert_eq!(a.mota, 1.0);
    assert_eq!(b.mota, 1.0);
    assert!((a.motp3d - b.motp3d).abs() < 1e-3, "{} vs {}", a.motp3d, b.motp3d);

    let results = dir.path().join(io::RESULTS_FILE);
    io::write_results(&results, &from_disk.reports, &read.contexts).unwrap();
    let reread = io::read_results(&results, &read.contexts).unwrap();
    let c = evaluate(&labels, &reread, &cfg.metrics).unwrap();
    assert_eq!(c.mota, a.mota);
    assert!((c.motp3d - a.motp3d).abs() < 1e-4);
}
