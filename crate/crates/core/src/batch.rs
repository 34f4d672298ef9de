//! Seeded trial batches and the reports aggregated from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::Layer;
use crate::scenario::{resolve_scenario, Scenario, ScenarioError};
use crate::sim::{run_loop, ArmSetup, Metrics, Mode, SimConfig, SimError, Timeline, TimelineError};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("trial {trial} (seed {seed}): {source}")]
    Trial { trial: u32, seed: u64, source: SimError },
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |source| BatchError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// File path or bundled scenario name.
    pub scenario_path: PathBuf,
    pub trials: u32,
    pub seed: u64,
    pub mode: Mode,
    pub arms: ArmSetup,
    pub faults: bool,
    /// Where timelines and reports go; nothing is written when absent.
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            mode: self.mode,
            arms: self.arms,
            faults: self.faults,
        }
    }
}

/// Seed of trial `index` in a batch started from `seed`.
pub fn trial_seed(seed: u64, index: u32) -> u64 {
    seed ^ index as u64
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub index: u32,
    pub seed: u64,
    pub metrics: Metrics,
    pub timeline: Timeline,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub report: AggregateReport,
    pub trials: Vec<TrialResult>,
}

/// Runs `trials` independent simulations of one scenario.
pub fn run_trials(scenario: &Scenario, config: &SimConfig, trials: u32, seed: u64) -> Result<Vec<TrialResult>, BatchError> {
    if trials == 0 {
        return Err(BatchError::NoTrials);
    }
    (0..trials)
        .map(|index| {
            let s = trial_seed(seed, index);
            let out = run_loop(scenario, config, s).map_err(|source| BatchError::Trial {
                trial: index,
                seed: s,
                source,
            })?;
            Ok(TrialResult {
                index,
                seed: s,
                metrics: out.metrics,
                timeline: out.timeline,
            })
        })
        .collect()
}

pub fn run_batch(config: &RunConfig) -> Result<BatchOutput, BatchError> {
    let scenario = resolve_scenario(&config.scenario_path.to_string_lossy())?;
    let sim = config.sim_config();
    let trials = run_trials(&scenario, &sim, config.trials, config.seed)?;
    let metrics: Vec<&Metrics> = trials.iter().map(|t| &t.metrics).collect();
    let report = AggregateReport::from_metrics(&scenario.name, &sim, &metrics);
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &report, &trials)?;
    }
    Ok(BatchOutput { report, trials })
}

/// Per-trial timelines, a per-trial metrics table, and the aggregate
/// report as CSV and as text.
pub fn write_outputs(dir: &Path, report: &AggregateReport, trials: &[TrialResult]) -> Result<(), BatchError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for t in trials {
        let path = dir.join(format!("timeline_{:04}.csv", t.index));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        t.timeline.write_csv(file)?;
    }
    let path = dir.join("trials.csv");
    fs::write(&path, trials_csv(trials)).map_err(io_err(&path))?;
    let path = dir.join("report.csv");
    fs::write(&path, reports_csv(std::slice::from_ref(report))).map_err(io_err(&path))?;
    let path = dir.join("summary.txt");
    fs::write(&path, report.render()).map_err(io_err(&path))?;
    Ok(())
}

/// Sum in sorted order so the result does not depend on trial order.
fn mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub scenario: String,
    pub mode: Mode,
    pub arms: ArmSetup,
    pub faults: bool,
    pub trials: u32,
    pub successes: u32,
    /// successes / trials, unrounded.
    pub success_rate: f64,
    pub mean_layer_time_s: [f64; 3],
    pub mean_total_time_s: f64,
    pub mean_makespan_s: f64,
    pub mean_clearance: [f64; 3],
    pub engage_failures: u64,
    pub fault_counts: BTreeMap<String, u32>,
    pub aborts: BTreeMap<String, u32>,
}

impl AggregateReport {
    pub fn from_metrics(scenario: &str, config: &SimConfig, metrics: &[&Metrics]) -> Self {
        let trials = metrics.len() as u32;
        let successes = metrics.iter().filter(|m| m.completed).count() as u32;
        let collect = |f: &dyn Fn(&Metrics) -> f64| mean(metrics.iter().map(|m| f(m)).collect());
        let mut fault_counts = BTreeMap::new();
        let mut aborts = BTreeMap::new();
        for m in metrics {
            for f in &m.faults {
                *fault_counts.entry(f.as_str().to_owned()).or_insert(0) += 1;
            }
            if let Some(f) = m.aborted_by {
                *aborts.entry(f.as_str().to_owned()).or_insert(0) += 1;
            }
        }
        AggregateReport {
            scenario: scenario.to_owned(),
            mode: config.mode,
            arms: config.arms,
            faults: config.faults,
            trials,
            successes,
            success_rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            mean_layer_time_s: Layer::ALL.map(|l| collect(&|m| m.layer_time(l))),
            mean_total_time_s: collect(&|m| m.total_time_s()),
            mean_makespan_s: collect(&|m| m.makespan_s),
            mean_clearance: Layer::ALL.map(|l| collect(&|m| m.clearance(l))),
            engage_failures: metrics.iter().map(|m| m.engage_failures as u64).sum(),
            fault_counts,
            aborts,
        }
    }

    pub fn layer_minutes(&self, layer: Layer) -> f64 {
        self.mean_layer_time_s[layer.index()] / 60.0
    }

    pub fn total_minutes(&self) -> f64 {
        self.mean_total_time_s / 60.0
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let arms = arm_count(self.arms);
        let _ = writeln!(
            s,
            "scenario {}  mode {}  arms {}  faults {}",
            self.scenario,
            self.mode,
            arms,
            if self.faults { "on" } else { "off" }
        );
        let _ = writeln!(s, "trials {}  successes {}  success rate {:.1}%", self.trials, self.successes, self.success_rate * 100.0);
        let _ = writeln!(s, "{:<8}{:>10}{:>14}", "layer", "time (min)", "clearance (%)");
        for l in Layer::ALL {
            let _ = writeln!(s, "{:<8}{:>10.1}{:>14.1}", l, self.layer_minutes(l), self.mean_clearance[l.index()] * 100.0);
        }
        let _ = writeln!(s, "{:<8}{:>10.1}", "total", self.total_minutes());
        let _ = writeln!(s, "makespan {:.1} min  engage failures {}", self.mean_makespan_s / 60.0, self.engage_failures);
        if !self.aborts.is_empty() {
            let list: Vec<String> = self.aborts.iter().map(|(k, v)| format!("{k} {v}")).collect();
            let _ = writeln!(s, "aborts: {}", list.join(", "));
        }
        s
    }
}

fn arm_count(arms: ArmSetup) -> u8 {
    match arms {
        ArmSetup::Single => 1,
        ArmSetup::Dual => 2,
    }
}

pub const REPORT_CSV_HEADER: &str = "scenario,mode,arms,faults,trials,successes,success_rate,l1_min,l2_min,l3_min,total_min,clearance_l1,clearance_l2,clearance_l3";

/// One row per report; times in minutes to one decimal.
pub fn reports_csv(reports: &[AggregateReport]) -> String {
    let mut s = String::from(REPORT_CSV_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:.1},{:.1},{:.1},{:.1},{:.4},{:.4},{:.4}",
            r.scenario,
            r.mode,
            arm_count(r.arms),
            r.faults,
            r.trials,
            r.successes,
            r.success_rate,
            r.layer_minutes(Layer::L1),
            r.layer_minutes(Layer::L2),
            r.layer_minutes(Layer::L3),
            r.total_minutes(),
            r.mean_clearance[0],
            r.mean_clearance[1],
            r.mean_clearance[2],
        );
    }
    s
}

pub fn trials_csv(trials: &[TrialResult]) -> String {
    let mut s = String::from(
        "trial,seed,completed,l1_s,l2_s,l3_s,total_s,makespan_s,clearance_l1,clearance_l2,clearance_l3,engage_failures,aborted_by\n",
    );
    for t in trials {
        let m = &t.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{:.1},{:.1},{:.1},{:.1},{:.1},{:.4},{:.4},{:.4},{},{}",
            t.index,
            t.seed,
            m.completed,
            m.layer_times_s[0],
            m.layer_times_s[1],
            m.layer_times_s[2],
            m.total_time_s(),
            m.makespan_s,
            m.clearance_rate[0],
            m.clearance_rate[1],
            m.clearance_rate[2],
            m.engage_failures,
            m.aborted_by.map_or("-", |f| f.as_str()),
        );
    }
    s
}

/// Layer-time and completion tables over several families, with an
/// overall completion row.
pub fn render_family_table(reports: &[AggregateReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18}{:>6}{:>6}{:>6}{:>8}{:>8}{:>11}{:>9}",
        "family", "L1", "L2", "L3", "total", "trials", "successes", "rate (%)"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<18}{:>6.1}{:>6.1}{:>6.1}{:>8.1}{:>8}{:>11}{:>9.1}",
            r.scenario,
            r.layer_minutes(Layer::L1),
            r.layer_minutes(Layer::L2),
            r.layer_minutes(Layer::L3),
            r.total_minutes(),
            r.trials,
            r.successes,
            r.success_rate * 100.0
        );
    }
    let trials: u32 = reports.iter().map(|r| r.trials).sum();
    let successes: u32 = reports.iter().map(|r| r.successes).sum();
    if reports.len() > 1 && trials > 0 {
        let _ = writeln!(
            s,
            "{:<18}{:>6}{:>6}{:>6}{:>8}{:>8}{:>11}{:>9.1}",
            "overall",
            "",
            "",
            "",
            "",
            trials,
            successes,
            successes as f64 / trials as f64 * 100.0
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeComparison {
    pub coarse: AggregateReport,
    pub fine: AggregateReport,
}

/// Coarse-only against fine alignment on the same seeds.
pub fn compare_modes(scenario: &Scenario, trials: u32, seed: u64, faults: bool) -> Result<ModeComparison, BatchError> {
    let report = |mode| -> Result<AggregateReport, BatchError> {
        let cfg = SimConfig {
            mode,
            arms: ArmSetup::Dual,
            faults,
        };
        let results = run_trials(scenario, &cfg, trials, seed)?;
        let metrics: Vec<&Metrics> = results.iter().map(|t| &t.metrics).collect();
        Ok(AggregateReport::from_metrics(&scenario.name, &cfg, &metrics))
    };
    Ok(ModeComparison {
        coarse: report(Mode::Coarse)?,
        fine: report(Mode::Fine)?,
    })
}

impl ModeComparison {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} ({} trials)", self.fine.scenario, self.fine.trials);
        let _ = writeln!(s, "{:<8}{:>15}{:>13}", "mode", "clearance (%)", "L1 (min)");
        for r in [&self.coarse, &self.fine] {
            let _ = writeln!(s, "{:<8}{:>15.1}{:>13.1}", r.mode, r.mean_clearance[0] * 100.0, r.layer_minutes(Layer::L1));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenario,mode,trials,clearance_l1,l1_min\n");
        for r in [&self.coarse, &self.fine] {
            let _ = writeln!(s, "{},{},{},{:.4},{:.1}", r.scenario, r.mode, r.trials, r.mean_clearance[0], r.layer_minutes(Layer::L1));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmComparison {
    pub single: AggregateReport,
    pub dual: AggregateReport,
    /// (seed, single makespan s, dual makespan s) per trial.
    pub makespans: Vec<(u64, f64, f64)>,
}

/// One merged arm against the scenario's two arms on the same seeds.
pub fn compare_arms(scenario: &Scenario, trials: u32, seed: u64, mode: Mode, faults: bool) -> Result<ArmComparison, BatchError> {
    let run = |arms| -> Result<(AggregateReport, Vec<TrialResult>), BatchError> {
        let cfg = SimConfig { mode, arms, faults };
        let results = run_trials(scenario, &cfg, trials, seed)?;
        let metrics: Vec<&Metrics> = results.iter().map(|t| &t.metrics).collect();
        Ok((AggregateReport::from_metrics(&scenario.name, &cfg, &metrics), results))
    };
    let (single, s_trials) = run(ArmSetup::Single)?;
    let (dual, d_trials) = run(ArmSetup::Dual)?;
    let makespans = s_trials
        .iter()
        .zip(&d_trials)
        .map(|(s, d)| (s.seed, s.metrics.makespan_s, d.metrics.makespan_s))
        .collect();
    Ok(ArmComparison { single, dual, makespans })
}

impl ArmComparison {
    pub fn dual_never_slower(&self) -> bool {
        self.makespans.iter().all(|(_, s, d)| d <= s)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} ({} trials, {})", self.dual.scenario, self.dual.trials, self.dual.mode);
        let _ = writeln!(s, "{:<6}{:>16}", "arms", "makespan (min)");
        for r in [&self.single, &self.dual] {
            let _ = writeln!(s, "{:<6}{:>16.1}", arm_count(r.arms), r.mean_makespan_s / 60.0);
        }
        let faster = self.makespans.iter().filter(|(_, s, d)| d < s).count();
        let slower = self.makespans.iter().filter(|(_, s, d)| d > s).count();
        let _ = writeln!(s, "dual faster on {faster} seeds, slower on {slower}");
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,single_makespan_s,dual_makespan_s\n");
        for (seed, single, dual) in &self.makespans {
            let _ = writeln!(s, "{seed},{single:.1},{dual:.1}");
        }
        s
    }
}
