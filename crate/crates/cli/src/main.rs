use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fusetrack::io::{self, Sequence};
use fusetrack::pipeline::diagnostics_csv;
use fusetrack::sim::{simulate, ScenarioSpec};
use fusetrack::{evaluate, run_sequence, Ablation, PipelineConfig};

/// Multi-object tracking with fused 2D detections and 3D proposals.
#[derive(Debug, Parser)]
#[command(name = "fusetrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scenario file into a sequence directory with ground truth.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed given in the scenario.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fuse detections with proposals and dump the observations.
    Fuse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a sequence and write KITTI-style results.
    Track {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Ignore scene-flow velocities.
        #[arg(long)]
        no_flow: bool,
        /// Ignore 3D proposals.
        #[arg(long)]
        detections_only: bool,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        coupling: Switch,
        /// Image-only tracking without proposals or odometry.
        #[arg(long = "2d-only")]
        two_d_only: bool,
    },
    /// Score results against ground truth (CLEAR-MOT).
    Eval {
        /// Sequence directory with `labels.txt`.
        #[arg(long)]
        gt: PathBuf,
        /// Directory with `results.txt`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write MOTP per depth range next to the report.
        #[arg(long)]
        by_range: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_simulate(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let mut spec = ScenarioSpec::from_toml(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let sim = simulate(&spec)?;
    let seq = sim.sequence();
    io::write_sequence(out, &seq)?;
    let gt = sim.scene.gt_trajectories();
    let sizes: Vec<_> = gt
        .iter()
        .map(|t| sim.scene.objects.iter().find(|o| o.id == t.id).map(|o| o.size).expect("trajectory of a known object"))
        .collect();
    io::write_labels(&out.join(io::LABELS_FILE), &gt, &sizes, &seq.contexts)?;
    println!(
        "wrote {} frames, {} objects to {}",
        seq.frames(),
        gt.len(),
        out.display()
    );
    Ok(())
}

fn read_input(dir: &Path) -> Result<Sequence> {
    io::read_sequence(dir).with_context(|| format!("reading sequence {}", dir.display()))
}

fn cmd_fuse(input: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let seq = read_input(input)?;
    let mut observations = Vec::with_capacity(seq.frames());
    let mut diagnostics = Vec::with_capacity(seq.frames());
    for (i, ctx) in seq.contexts.iter().enumerate() {
        let (obs, diag) = fusetrack::fusion::fuse_frame_with_diagnostics(
            &seq.detections[i],
            seq.proposals_at(i),
            &cfg.size_stats,
            ctx,
            &cfg.fusion,
        );
        observations.push(obs);
        diagnostics.push(diag);
    }
    create_dir(out)?;
    io::write_observations(&out.join("observations.txt"), &observations)?;
    write(&out.join("fusion.csv"), &diagnostics_csv(&diagnostics))?;
    let fused: usize = diagnostics.iter().map(|d| d.fused).sum();
    let total: usize = diagnostics.iter().map(|d| d.detections).sum();
    println!("fused {fused} of {total} detections");
    Ok(())
}

fn cmd_track(input: &Path, config: Option<&Path>, out: &Path, ablation: Ablation) -> Result<()> {
    let cfg = load_config(config)?;
    let seq = read_input(input)?;
    let output = run_sequence(&seq, &cfg, ablation)?;
    create_dir(out)?;
    io::write_results(&out.join(io::RESULTS_FILE), &output.reports, &seq.contexts)?;
    let boxes: usize = output.reports.iter().map(|r| r.tracks.len()).sum();
    println!("{}: {boxes} reported boxes over {} frames", ablation.name(), seq.frames());
    Ok(())
}

fn cmd_eval(gt_dir: &Path, results_dir: &Path, out: &Path, config: Option<&Path>, by_range: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let contexts = io::read_contexts(gt_dir).with_context(|| format!("reading {}", gt_dir.display()))?;
    let gt = io::read_labels(&gt_dir.join(io::LABELS_FILE), &contexts)?;
    let reports = io::read_results(&results_dir.join(io::RESULTS_FILE), &contexts)?;
    let report = evaluate(&gt, &reports, &cfg.metrics)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let summary = report.summary_csv();
    write(out, &summary)?;
    if by_range {
        write(&out.with_extension("ranges.csv"), &report.ranges_csv())?;
    }
    print!("{summary}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { spec, out, seed } => cmd_simulate(&spec, &out, seed),
        Command::Fuse { input, config, out } => cmd_fuse(&input, config.as_deref(), &out),
        Command::Track {
            input,
            config,
            out,
            no_flow,
            detections_only,
            coupling,
            two_d_only,
        } => {
            let ablation = Ablation {
                no_flow,
                detections_only,
                two_d_only,
                coupling_off: coupling == Switch::Off,
            };
            cmd_track(&input, config.as_deref(), &out, ablation)
        }
        Command::Eval {
            gt,
            results,
            out,
            config,
            by_range,
        } => cmd_eval(&gt, &results, &out, config.as_deref(), by_range),
    }
}

/// 1 for bad input, 2 when an internal invariant broke.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<fusetrack::Error>() {
        Some(e) if !e.is_input_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(2),
    }
}
