use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use teardown_core::batch::{
    compare_arms, compare_modes, render_family_table, reports_csv, run_batch, run_trials, AggregateReport, BatchError,
    RunConfig,
};
use teardown_core::perception::replay::{read_log, replay};
use teardown_core::perception::{FramePose, Tracker};
use teardown_core::scenario::{resolve_scenario, Scenario, ScenarioError, BUNDLED};
use teardown_core::sim::{ArmSetup, Metrics, Mode, SimConfig};
use teardown_core::PartGraph;

#[derive(Parser)]
#[command(name = "teardown", version, about = "Plan and simulate dual-arm hard-drive teardowns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Coarse,
    Fine,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Coarse => Mode::Coarse,
            ModeArg::Fine => Mode::Fine,
        }
    }
}

fn parse_arms(s: &str) -> Result<ArmSetup, String> {
    match s {
        "1" => Ok(ArmSetup::Single),
        "2" => Ok(ArmSetup::Dual),
        _ => Err(format!("expected 1 or 2, got {s}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of seeded trials.
    Run {
        /// Scenario file, or one of the bundled names.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 10)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "fine")]
        mode: ModeArg,
        #[arg(long, value_parser = parse_arms, default_value = "2")]
        arms: ArmSetup,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disable fault injection.
        #[arg(long)]
        no_faults: bool,
    },
    /// Coarse-only versus fine alignment: L1 clearance and time.
    CompareModes {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 100)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Enable fault injection.
        #[arg(long)]
        faults: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One merged arm versus two arms: makespan per seed.
    CompareArms {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 100)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "fine")]
        mode: ModeArg,
        #[arg(long)]
        faults: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Layer times and completion for every bundled family.
    Families {
        #[arg(long, default_value_t = 10)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_faults: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file.
    Validate {
        #[arg(long)]
        scenario: String,
    },
    /// Print a bundled scenario as JSON.
    Export { name: String },
    /// Replay a detection log through the tracker and print the tracks and
    /// the resulting part graph.
    Track {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        log: PathBuf,
    },
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Validation(e.into())
    }
}

impl From<BatchError> for Failure {
    fn from(e: BatchError) -> Self {
        match e {
            BatchError::Scenario(e) => Failure::Validation(e.into()),
            e => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let s = cause.to_string();
        if !out.contains(&s) {
            out.push_str(": ");
            out.push_str(&s);
        }
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            scenario,
            trials,
            seed,
            mode,
            arms,
            out,
            no_faults,
        } => {
            let config = RunConfig {
                scenario_path: scenario.into(),
                trials,
                seed,
                mode: mode.into(),
                arms,
                faults: !no_faults,
                output_dir: out,
            };
            let output = run_batch(&config)?;
            print!("{}", output.report.render());
        }
        Command::CompareModes {
            scenario,
            trials,
            seed,
            faults,
            out,
        } => {
            let sc = resolve_scenario(&scenario)?;
            let cmp = compare_modes(&sc, trials, seed, faults)?;
            print!("{}", cmp.render());
            if let Some(dir) = out {
                write_file(&dir, "compare_modes.csv", &cmp.to_csv())?;
            }
        }
        Command::CompareArms {
            scenario,
            trials,
            seed,
            mode,
            faults,
            out,
        } => {
            let sc = resolve_scenario(&scenario)?;
            let cmp = compare_arms(&sc, trials, seed, mode.into(), faults)?;
            print!("{}", cmp.render());
            if let Some(dir) = out {
                write_file(&dir, "compare_arms.csv", &cmp.to_csv())?;
            }
        }
        Command::Families {
            trials,
            seed,
            no_faults,
            out,
        } => {
            let cfg = SimConfig {
                faults: !no_faults,
                ..SimConfig::default()
            };
            let mut reports = Vec::new();
            for name in BUNDLED {
                let sc = Scenario::bundled(name)?;
                let results = run_trials(&sc, &cfg, trials, seed)?;
                let metrics: Vec<&Metrics> = results.iter().map(|t| &t.metrics).collect();
                reports.push(AggregateReport::from_metrics(&sc.name, &cfg, &metrics));
            }
            print!("{}", render_family_table(&reports));
            if let Some(dir) = out {
                write_file(&dir, "families.csv", &reports_csv(&reports))?;
            }
        }
        Command::Validate { scenario } => {
            let sc = resolve_scenario(&scenario)?;
            let screws = |layer| {
                sc.parts
                    .iter()
                    .filter(|p| p.layer == layer && sc.is_fastener(&p.category))
                    .count()
            };
            println!(
                "{}: ok ({} parts; fasteners L1 {} L2 {} L3 {})",
                sc.name,
                sc.parts.len(),
                screws(teardown_core::Layer::L1),
                screws(teardown_core::Layer::L2),
                screws(teardown_core::Layer::L3)
            );
        }
        Command::Export { name } => {
            let sc = Scenario::bundled(&name)?;
            println!("{}", sc.to_json());
        }
        Command::Track { scenario, log } => {
            let sc = resolve_scenario(&scenario)?;
            let file = fs::File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let records = read_log(file).map_err(|e| Failure::Validation(e.into()))?;
            let pose = FramePose {
                camera: sc.camera.model(),
                hand_eye: sc.hand_eye(),
                tcp_pose: sc.scan_pose(),
            };
            let mut tracker = Tracker::new(sc.perception.tracker);
            let tracks = replay(&records, &mut tracker, &pose);
            println!("id,category,x_mm,y_mm,z_mm,hits");
            for t in &tracks {
                let p = t.smoothed_position * 1000.0;
                println!("{},{},{:.1},{:.1},{:.1},{}", t.id, t.category, p.x, p.y, p.z, t.hits);
            }
            let mut graph = PartGraph::new();
            graph
                .sync_with_observations(&tracks, &sc.all_rules(), |c| sc.layer_of(c))
                .context("building part graph")?;
            print!("{}", graph.dump());
        }
    }
    Ok(())
}
