//! Timing comparison between the geometric planner (FE-plane + LP) and the
//! second-order-cone baseline on a three-finger grasp.
//!
//! Step `k` plans forces for the grasp with the object tilted along a slow
//! sweep, so consecutive problems differ the way they do in a control loop.
//! Each path solves every step `trials` times and contributes the median.

use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};

use crate::contact::{append_max_intrinsic_force, build_constraint_set, Contact, ContactSet, ObjectModel};
use crate::error::Result;
use crate::fe_plane::compute_fe_plane;
use crate::planning::socp::{socp_baseline_plan, ForceLimits, SocpOptions};
use crate::planning::{plan_grasp_forces_with, PlanObjective, UncertaintyModel};

const MIN_FORCE: f64 = 1.0;
const MAX_FORCE: f64 = 20.0;
const CONE_SIDES: usize = 12;

#[derive(Debug, Clone)]
pub struct BenchStep {
    pub step: usize,
    pub geometric: Duration,
    pub geometric_feasible: bool,
    /// `None` when the baseline failed to converge.
    pub baseline: Option<Duration>,
    pub baseline_feasible: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub steps: Vec<BenchStep>,
    pub geometric_total: Duration,
    pub baseline_total: Duration,
    /// Steps left out of both totals, with the reason.
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.baseline_total.as_secs_f64() / self.geometric_total.as_secs_f64().max(1e-12)
    }

    /// Steps where the two paths disagree on feasibility.
    pub fn disagreements(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.baseline_feasible.is_some_and(|b| b != s.geometric_feasible))
            .count()
    }
}

/// Contacts and object for step `k` of `steps`.
pub fn bench_problem(k: usize, steps: usize) -> Result<(ContactSet, ObjectModel)> {
    let phase = std::f64::consts::TAU * k as f64 / steps.max(1) as f64;
    let tilt = UnitQuaternion::from_euler_angles(0.15 * phase.sin(), 0.1 * phase.cos(), 0.05 * phase);
    let fingers = [
        (Vector3::new(0.0, -0.012, 0.0), Vector3::y()),
        (Vector3::new(-0.03, 0.012, 0.0), -Vector3::y()),
        (Vector3::new(0.03, 0.012, 0.0), -Vector3::y()),
    ];
    let contacts = fingers
        .iter()
        .map(|(p, n)| Contact::intrinsic(tilt * p, tilt * n, 0.9, 0.5))
        .collect::<Result<Vec<_>>>()?;
    let object = ObjectModel::new(0.3, tilt * Vector3::new(0.02, 0.0, 0.0))?;
    Ok((ContactSet::new(contacts)?, object))
}

fn geometric(contacts: &ContactSet, object: &ObjectModel) -> Result<bool> {
    let plane = compute_fe_plane(contacts, object)?;
    let cs = build_constraint_set(contacts, MIN_FORCE, CONE_SIDES)?;
    let cs = append_max_intrinsic_force(&cs, contacts, MAX_FORCE)?;
    let uncertainty = UncertaintyModel::new(&plane, contacts)?;
    let plan = plan_grasp_forces_with(&plane, &cs, contacts, &uncertainty, PlanObjective::MinTotalNormal)?;
    Ok(plan.feasible)
}

fn baseline(contacts: &ContactSet, object: &ObjectModel) -> Result<bool> {
    let plane = compute_fe_plane(contacts, object)?;
    let uncertainty = UncertaintyModel::new(&plane, contacts)?;
    let limits = ForceLimits { min_intrinsic: MIN_FORCE, max_intrinsic: Some(MAX_FORCE) };
    let result = socp_baseline_plan(&plane, contacts, object, &uncertainty, limits, &SocpOptions::default())?;
    Ok(result.plan.feasible)
}

fn median_time<F: FnMut() -> Result<bool>>(trials: usize, mut f: F) -> Result<(Duration, bool)> {
    let mut times = Vec::with_capacity(trials);
    let mut feasible = false;
    for _ in 0..trials.max(1) {
        let start = Instant::now();
        feasible = f()?;
        times.push(start.elapsed());
    }
    times.sort();
    Ok((times[times.len() / 2], feasible))
}

/// Solves `steps` problems on both paths, `trials` times each.
pub fn run_benchmark(steps: usize, trials: usize) -> Result<BenchReport> {
    let mut report = BenchReport {
        steps: Vec::with_capacity(steps),
        geometric_total: Duration::ZERO,
        baseline_total: Duration::ZERO,
        warnings: Vec::new(),
    };
    for k in 0..steps {
        let (contacts, object) = bench_problem(k, steps)?;
        let (geometric_time, geometric_feasible) = median_time(trials, || geometric(&contacts, &object))?;
        let step = match median_time(trials, || baseline(&contacts, &object)) {
            Ok((time, feasible)) => {
                report.geometric_total += geometric_time;
                report.baseline_total += time;
                BenchStep { step: k, geometric: geometric_time, geometric_feasible, baseline: Some(time), baseline_feasible: Some(feasible) }
            }
            Err(e) => {
                report.warnings.push(format!("step {k}: baseline did not converge ({e}); excluded from totals"));
                BenchStep { step: k, geometric: geometric_time, geometric_feasible, baseline: None, baseline_feasible: None }
            }
        };
        report.steps.push(step);
    }
    Ok(report)
}
