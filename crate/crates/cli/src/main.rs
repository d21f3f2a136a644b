//! `geodex` command-line harness: plan forces for a scenario, run closed-loop
//! repetitions, and time the geometric planner against the SOCP baseline.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input error, 3 infeasible plan.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use geodex::bench::run_benchmark;
use geodex::report::RunReport;
use geodex::scenario::{FeedbackSource, Scenario};
use geodex::sim::{plan_nominal, run_scenario, NominalPlan};
use geodex::Error;

#[derive(Parser)]
#[command(name = "geodex", version, about = "Tactile force estimation and robust force planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan contact forces for the scenario's initial configuration.
    Plan {
        scenario: PathBuf,
        /// Multiply every contact's trusted sensor noise.
        #[arg(long, default_value_t = 1.0)]
        sigma_scale: f64,
        /// Write `<name>_plan.json` here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Simulate closed-loop repetitions and summarize them.
    Run {
        scenario: PathBuf,
        /// Force feedback: `est` (estimated) or `raw` (tactile readings).
        #[arg(long, default_value = "est")]
        feedback: FeedbackSource,
        /// Repetitions; defaults to the scenario's `repetitions`.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        sigma_scale: f64,
        /// Write a JSON report and CSV trace per repetition here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Time the geometric planner against the SOCP baseline.
    Bench {
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Timed solves per step; the median counts.
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
}

enum Failure {
    Runtime(String),
    Input(String),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Input(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Runtime(m) | Failure::Input(m) | Failure::Infeasible(m) => m,
        }
    }
}

/// Library errors raised while reading and validating input.
fn input(e: Error) -> Failure {
    match e {
        Error::Parse(_) | Error::Config { .. } | Error::InvalidArgument(_) | Error::Io(_) => Failure::Input(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load(path: &Path, sigma_scale: f64) -> Result<Scenario, Failure> {
    let mut scenario = Scenario::load(path).map_err(|e| match e {
        Error::Io(io) => Failure::Input(format!("{}: {io}", path.display())),
        other => input(other),
    })?;
    if sigma_scale != 1.0 {
        scenario.config = scenario.config.with_sigma_scale(sigma_scale).map_err(input)?;
    }
    Ok(scenario)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn cmd_plan(path: &Path, sigma_scale: f64, out_dir: Option<&Path>) -> Result<(), Failure> {
    let scenario = load(path, sigma_scale)?;
    let nominal = plan_nominal(&scenario.config).map_err(|e| match e {
        Error::NoEquilibrium { .. } => Failure::Infeasible(e.to_string()),
        other => input(other),
    })?;
    if !nominal.plan.feasible {
        return Err(Failure::Infeasible(format!(
            "{}: no force plan keeps the whole uncertainty ellipsoid inside the constraints",
            scenario.config.name
        )));
    }
    print_plan(&scenario, &nominal);
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        let file = dir.join(format!("{}_plan.json", scenario.config.name));
        let text = serde_json::to_string_pretty(&plan_json(&scenario, &nominal)).map_err(runtime)?;
        std::fs::write(&file, text + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn print_plan(scenario: &Scenario, nominal: &NominalPlan) {
    println!("scenario {}", scenario.config.name);
    println!("{:>7} {:>10} {:>10} {:>10} {:>10} {:>10}", "contact", "kind", "fx_n", "fy_n", "fz_n", "normal_n");
    for (k, (contact, f)) in nominal.contacts.contacts().iter().zip(&nominal.plan.desired_forces).enumerate() {
        let kind = if contact.is_intrinsic() { "finger" } else { "table" };
        println!(
            "{:>7} {:>10} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            nominal.config_index[k],
            kind,
            f.x,
            f.y,
            f.z,
            contact.normal.dot(f)
        );
    }
    println!("total normal force {:.4} N", nominal.plan.total_normal_force);
    println!("robust margin {:.4} N", nominal.plan.margin);
    println!("smallest constraint slack {:.4} N", nominal.min_slack);
}

fn plan_json(scenario: &Scenario, nominal: &NominalPlan) -> serde_json::Value {
    let contacts: Vec<_> = nominal
        .contacts
        .contacts()
        .iter()
        .zip(&nominal.plan.desired_forces)
        .enumerate()
        .map(|(k, (c, f))| {
            serde_json::json!({
                "index": nominal.config_index[k],
                "intrinsic": c.is_intrinsic(),
                "position_m": [c.position.x, c.position.y, c.position.z],
                "normal": [c.normal.x, c.normal.y, c.normal.z],
                "friction": c.friction_coefficient,
                "force_n": [f.x, f.y, f.z],
            })
        })
        .collect();
    serde_json::json!({
        "scenario": scenario.config.name,
        "contacts": contacts,
        "total_normal_force_n": nominal.plan.total_normal_force,
        "margin_n": nominal.plan.margin,
        "min_slack_n": nominal.min_slack,
    })
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn feedback_name(feedback: FeedbackSource) -> &'static str {
    match feedback {
        FeedbackSource::Estimated => "est",
        FeedbackSource::Raw => "raw",
    }
}

fn cmd_run(
    path: &Path,
    feedback: FeedbackSource,
    reps: Option<usize>,
    seed: Option<u64>,
    sigma_scale: f64,
    out_dir: Option<&Path>,
) -> Result<(), Failure> {
    let mut scenario = load(path, sigma_scale)?;
    if let Some(seed) = seed {
        scenario.config.seed = seed;
    }
    let reps = reps.unwrap_or(scenario.config.repetitions);
    if reps == 0 {
        return Err(Failure::Input("--reps must be at least 1".into()));
    }
    let reports: Vec<RunReport> = (0..reps)
        .into_par_iter()
        .map(|rep| run_scenario(&scenario, feedback, rep))
        .collect::<Result<_, _>>()
        .map_err(|e| match e {
            Error::Config { .. } | Error::Parse(_) => input(e),
            other => runtime(other),
        })?;

    if let Some(dir) = out_dir {
        create_dir(dir)?;
        for report in &reports {
            let stem = format!("{}_{}_rep{:02}", scenario.config.name, feedback_name(feedback), report.repetition);
            report.write_json(&dir.join(format!("{stem}.json"))).map_err(runtime)?;
            report.write_csv(&dir.join(format!("{stem}.csv"))).map_err(runtime)?;
        }
    }

    println!("scenario {}  feedback {}  reps {}", scenario.config.name, feedback_name(feedback), reps);
    for r in &reports {
        let s = &r.summary;
        let status = match (&s.aborted, s.success) {
            (Some(_), _) => "aborted",
            (None, true) => "success",
            (None, false) => "failure",
        };
        let angle = s.angle_rms_deg.map_or(String::new(), |a| format!("  angle_rms {a:.3} deg"));
        println!(
            "rep {:>3}  seed {:>6}  {:<8} force_error {:.4} N  orientation_change {:.3} deg{angle}",
            r.repetition, r.seed, status, s.final_force_error_n, s.max_orientation_change_deg
        );
        if let Some(reason) = &s.aborted {
            println!("         {reason}");
        }
        for e in &r.events {
            println!("         step {} {}: {}", e.step, e.kind, e.message);
        }
    }
    let successes = reports.iter().filter(|r| r.summary.success).count();
    println!("success rate {}/{} ({:.1}%)", successes, reps, 100.0 * successes as f64 / reps as f64);
    for (label, wanted) in [("success", true), ("failure", false)] {
        let errors: Vec<f64> = reports
            .iter()
            .filter(|r| r.summary.success == wanted && r.summary.aborted.is_none())
            .map(|r| r.summary.final_force_error_n)
            .collect();
        match mean_std(&errors) {
            Some((m, s)) => println!("force error ({label}) {m:.4} ± {s:.4} N over {} runs", errors.len()),
            None => println!("force error ({label}) n/a"),
        }
    }
    let rms: Vec<f64> = reports.iter().filter_map(|r| r.summary.angle_rms_deg).collect();
    if let Some((m, s)) = mean_std(&rms) {
        println!("angle rms {m:.4} ± {s:.4} deg");
    }
    if reports.iter().all(|r| r.summary.aborted.is_some()) {
        return Err(Failure::Infeasible(format!(
            "every repetition aborted: {}",
            reports[0].summary.aborted.as_deref().unwrap_or_default()
        )));
    }
    Ok(())
}

fn cmd_bench(steps: usize, trials: usize) -> Result<(), Failure> {
    if steps == 0 {
        return Err(Failure::Input("--steps must be at least 1".into()));
    }
    let report = run_benchmark(steps, trials).map_err(runtime)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("{:>6} {:>14} {:>14} {:>9}", "steps", "geometric_s", "baseline_s", "speedup");
    println!(
        "{:>6} {:>14.6} {:>14.6} {:>9.2}",
        steps,
        report.geometric_total.as_secs_f64(),
        report.baseline_total.as_secs_f64(),
        report.speedup()
    );
    let geometric_feasible = report.steps.iter().filter(|s| s.geometric_feasible).count();
    let baseline_feasible = report.steps.iter().filter(|s| s.baseline_feasible == Some(true)).count();
    println!("feasible plans: geometric {geometric_feasible}/{steps}, baseline {baseline_feasible}/{steps}");
    println!("feasibility disagreements {}", report.disagreements());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan { scenario, sigma_scale, out_dir } => cmd_plan(scenario, *sigma_scale, out_dir.as_deref()),
        Command::Run { scenario, feedback, reps, seed, sigma_scale, out_dir } => {
            cmd_run(scenario, *feedback, *reps, *seed, *sigma_scale, out_dir.as_deref())
        }
        Command::Bench { steps, trials } => cmd_bench(*steps, *trials),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
