//! Closed-loop quasi-static simulation: the hand moves its fingertips, the
//! object settles, the tactile model reads the contact forces, and the
//! admittance controller drives the observed forces to the planned ones.
//!
//! Each control step:
//! 1. joints move toward their targets (first-order lag standing in for the
//!    joint PD), the hand base follows its trajectory;
//! 2. the object settles to force/torque balance and friction anchors update;
//! 3. taxels are read and aggregated per fingertip;
//! 4. forces are planned and estimated for the current object pose;
//! 5. `q_des += dt K^-1 J^T e` with `e` the per-finger force error.
//!
//! Normal readings alone reach only part of the FE-plane (two readings in a
//! pivot scene, or parallel normals in a grasp, span fewer dimensions than
//! the plane), so with estimated feedback the controller tracks the
//! estimate that the planned normals would produce; it equals the plan
//! whenever the plan is reachable. With raw feedback the planned force
//! itself is the reference.

pub mod finger;
pub mod plant;

use nalgebra::{DVector, Rotation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contact::{append_max_intrinsic_force, build_constraint_set, Contact, ContactSet, ObjectModel};
use crate::error::{Error, Result};
use crate::estimation::{estimate_extrinsic_forces, estimate_grasp_forces, MeasurementVector};
use crate::fe_plane::{compute_fe_plane, FePlane};
use crate::planning::{plan_extrinsic_forces, plan_grasp_forces_with, ForcePlan, UncertaintyModel};
use crate::report::{
    ContactRecord, ControllerEcho, Event, RunReport, StepRecord, Summary, Timing, REPORT_FORMAT, REPORT_VERSION,
};
use crate::scenario::{ContactKindConfig, FeedbackSource, FingerKind, Scenario, ScenarioConfig, ScenarioKind};
use crate::tactile::{Fingertip, FingertipReading, TaxelCharacterization, TaxelLayout};

pub use finger::{admittance_step, AdmittanceGain, FingerModel};
pub use plant::{Plant, PlantContact, PlantContactKind, SettleOutcome};

/// Mean force error over the final quarter of a run below which it counts as converged, N.
pub const CONVERGED_FORCE_ERROR: f64 = 0.15;
/// Largest orientation change of a successful grasp, deg.
pub const GRASP_ORIENTATION_TOLERANCE_DEG: f64 = 1.0;
/// Tilt of each fingertip's taxel frame against the approach direction, so
/// contacts do not sit exactly on the apex taxel.
const FINGERTIP_TILT: f64 = 0.35;
/// Distance from a serial finger's mount to its fingertip along the approach, m.
const SERIAL_STANDOFF: f64 = 0.07;

/// Seed of repetition `repetition` for a scenario seeded with `seed`.
pub fn repetition_seed(seed: u64, repetition: usize) -> u64 {
    seed.wrapping_add(repetition as u64)
}

/// Runs a grasp scenario; see [`run_scenario`].
pub fn run_grasp_scenario(scenario: &Scenario, feedback: FeedbackSource, repetition: usize) -> Result<RunReport> {
    if scenario.config.kind != ScenarioKind::Grasp {
        return Err(Error::config("kind", "expected a grasp scenario"));
    }
    run_scenario(scenario, feedback, repetition)
}

/// Runs a pivot scenario; see [`run_scenario`].
pub fn run_pivot_scenario(scenario: &Scenario, feedback: FeedbackSource, repetition: usize) -> Result<RunReport> {
    if scenario.config.kind != ScenarioKind::Pivot {
        return Err(Error::config("kind", "expected a pivot scenario"));
    }
    run_scenario(scenario, feedback, repetition)
}

/// Simulates one repetition. An infeasible initial plan yields a report
/// with `summary.aborted` set and no steps.
pub fn run_scenario(scenario: &Scenario, feedback: FeedbackSource, repetition: usize) -> Result<RunReport> {
    let seed = repetition_seed(scenario.config.seed, repetition);
    let mut sim = Simulation::new(scenario, feedback, seed)?;
    let mut report = RunReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        scenario: scenario.config.name.clone(),
        feedback,
        seed,
        repetition,
        config_echo: scenario.source_text.clone(),
        controller: ControllerEcho {
            gain_n_s_per_m: scenario.config.controller.gain_n_s_per_m,
            rate_hz: scenario.config.controller.rate_hz,
        },
        summary: Summary {
            plan_feasible: false,
            aborted: None,
            success: false,
            converged: false,
            final_force_error_n: f64::NAN,
            max_orientation_change_deg: 0.0,
            angle_rms_deg: None,
            final_angle_error_deg: None,
            unsettled_steps: 0,
        },
        timing: Timing { simulated_time_s: 0.0, control_steps: 0, settle_iterations: 0 },
        events: Vec::new(),
        steps: Vec::new(),
    };
    match sim.initialize()? {
        Ok(()) => {}
        Err(reason) => {
            report.summary.aborted = Some(reason);
            report.timing.settle_iterations = sim.settle_iterations;
            report.events = sim.events;
            return Ok(report);
        }
    }
    report.summary.plan_feasible = true;
    let steps = scenario.config.step_count();
    for k in 0..steps {
        let record = sim.step(k)?;
        report.steps.push(record);
    }
    report.timing = Timing {
        simulated_time_s: steps as f64 * scenario.config.step_period(),
        control_steps: steps,
        settle_iterations: sim.settle_iterations,
    };
    report.summary = sim.summarize(&report.steps);
    report.events = sim.events;
    // events are part of the summary decision
    if report.events.iter().any(|e| e.kind == "object_dropped" || e.kind == "pivot_slip") {
        report.summary.success = false;
    }
    Ok(report)
}

/// Force plan for a scenario's contacts at the initial object pose, before
/// any simulation.
#[derive(Debug, Clone)]
pub struct NominalPlan {
    /// Contacts in planning order (intrinsic first), world frame.
    pub contacts: ContactSet,
    /// Scenario file index of each planned contact.
    pub config_index: Vec<usize>,
    pub plan: ForcePlan,
    /// Smallest slack of the untightened friction and force-limit
    /// constraints at the planned forces.
    pub min_slack: f64,
}

/// Plans forces for the contacts as written in the scenario file.
pub fn plan_nominal(config: &ScenarioConfig) -> Result<NominalPlan> {
    let mut order: Vec<usize> =
        (0..config.contacts.len()).filter(|&i| config.contacts[i].kind == ContactKindConfig::Intrinsic).collect();
    order.extend((0..config.contacts.len()).filter(|&i| config.contacts[i].kind == ContactKindConfig::Extrinsic));
    let pivot_body = config
        .contacts
        .iter()
        .find(|c| c.kind == ContactKindConfig::Extrinsic)
        .map(|c| Vector3::from(c.position_m));
    let (position, orientation) = match (config.kind, pivot_body) {
        (ScenarioKind::Pivot, Some(pivot)) => {
            let r = pitch(config.trajectory.initial_angle_deg.to_radians());
            (-(r * pivot), r)
        }
        _ => (Vector3::zeros(), UnitQuaternion::identity()),
    };
    let mut contacts = Vec::with_capacity(order.len());
    for &i in &order {
        let c = &config.contacts[i];
        let point = orientation * Vector3::from(c.position_m) + position;
        contacts.push(match c.kind {
            ContactKindConfig::Intrinsic => Contact::intrinsic(
                point,
                orientation * Vector3::from(c.normal.expect("validated")),
                c.friction,
                c.sigma_n.expect("validated"),
            )?,
            ContactKindConfig::Extrinsic => Contact::extrinsic(point, Vector3::z(), c.friction)?,
        });
    }
    let contacts = ContactSet::new(contacts)?;
    let object = ObjectModel::new(config.object.mass_kg, orientation * Vector3::from(config.object.com_m) + position)?;
    let plane = compute_fe_plane(&contacts, &object)?;
    let p = &config.planning;
    let cs = build_constraint_set(&contacts, p.min_force_n, p.cone_sides)?;
    let cs = append_max_intrinsic_force(&cs, &contacts, p.max_force_n)?;
    let uncertainty = UncertaintyModel::new(&plane, &contacts)?;
    let plan = match config.kind {
        ScenarioKind::Grasp => plan_grasp_forces_with(&plane, &cs, &contacts, &uncertainty, p.objective)?,
        ScenarioKind::Pivot => plan_extrinsic_forces(&plane, &cs, &contacts, &uncertainty)?,
    };
    let min_slack = if plan.feasible { cs.min_slack(&plan.forces) } else { f64::NAN };
    Ok(NominalPlan { contacts, config_index: order, plan, min_slack })
}

struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    feedback: FeedbackSource,
    plant: Plant,
    fingers: Vec<FingerModel>,
    q: Vec<DVector<f64>>,
    q_des: Vec<DVector<f64>>,
    gains: Vec<AdmittanceGain>,
    fingertips: Vec<Fingertip>,
    /// Fingertip taxel frames in the hand-base frame.
    tip_frames: Vec<Rotation3<f64>>,
    sigmas: Vec<f64>,
    /// Plant contact index -> config contact index.
    order: Vec<usize>,
    initial_orientation: UnitQuaternion<f64>,
    /// Object pose the hand base is referenced to.
    pivot_body: Option<Vector3<f64>>,
    last_plan: Option<ForcePlan>,
    events: Vec<Event>,
    settle_iterations: usize,
    dropped: bool,
    slipped: bool,
}

impl<'a> Simulation<'a> {
    fn new(scenario: &'a Scenario, feedback: FeedbackSource, seed: u64) -> Result<Self> {
        let cfg = &scenario.config;
        // intrinsic contacts first, matching ContactSet ordering
        let mut order: Vec<usize> =
            (0..cfg.contacts.len()).filter(|&i| cfg.contacts[i].kind == ContactKindConfig::Intrinsic).collect();
        order.extend((0..cfg.contacts.len()).filter(|&i| cfg.contacts[i].kind == ContactKindConfig::Extrinsic));

        let mut contacts = Vec::new();
        let mut sigmas = Vec::new();
        let mut pivot_body = None;
        for (finger, &i) in order.iter().enumerate() {
            let c = &cfg.contacts[i];
            let p = Vector3::from(c.position_m);
            match c.kind {
                ContactKindConfig::Intrinsic => {
                    let n = Vector3::from(c.normal.expect("validated"));
                    contacts.push(PlantContact::finger(finger, p, n, c.friction));
                    sigmas.push(c.sigma_n.expect("validated"));
                }
                ContactKindConfig::Extrinsic => {
                    contacts.push(PlantContact::table(p, c.friction));
                    pivot_body = Some(p);
                }
            }
        }

        let (position, orientation) = match cfg.kind {
            ScenarioKind::Grasp => (Vector3::zeros(), UnitQuaternion::identity()),
            ScenarioKind::Pivot => {
                let r = pitch(cfg.trajectory.initial_angle_deg.to_radians());
                (-(r * pivot_body.expect("validated")), r)
            }
        };
        let plant = Plant {
            mass: cfg.object.mass_kg,
            com_body: Vector3::from(cfg.object.com_m),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            stiffness: cfg.plant.contact_stiffness_n_per_m,
            table_height: if pivot_body.is_some() { 0.0 } else { -1e3 },
            position,
            orientation,
            contacts,
            tips: Vec::new(),
        };

        let characterization = match cfg.tactile.as_ref().and_then(|t| t.characterization) {
            Some(ch) => ch,
            None => TaxelCharacterization::sample(&mut ChaCha8Rng::seed_from_u64(seed)),
        };
        let layout = match cfg.tactile.as_ref().and_then(|t| t.layout_file.as_ref()) {
            Some(file) => {
                let path = scenario.base_dir.as_deref().map_or_else(|| file.into(), |d| d.join(file));
                TaxelLayout::from_csv(&path)?
            }
            None => TaxelLayout::default_fingertip(),
        };
        let n_fingers = sigmas.len();
        let fingertips = (0..n_fingers)
            .map(|i| Fingertip::new(&layout, &characterization, seed, i))
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            cfg,
            feedback,
            initial_orientation: plant.orientation,
            plant,
            fingers: Vec::new(),
            q: Vec::new(),
            q_des: Vec::new(),
            gains: Vec::new(),
            fingertips,
            tip_frames: Vec::new(),
            sigmas,
            order,
            pivot_body,
            last_plan: None,
            events: Vec::new(),
            settle_iterations: 0,
            dropped: false,
            slipped: false,
        })
    }

    fn n_fingers(&self) -> usize {
        self.sigmas.len()
    }

    /// Places the fingertips with the initial squeeze, settles and plans.
    /// The inner `Err` carries the reason for an aborted run.
    fn initialize(&mut self) -> Result<std::result::Result<(), String>> {
        let depth = self.cfg.plant.initial_squeeze_n / self.cfg.plant.contact_stiffness_n_per_m;
        let dt = self.cfg.step_period();
        let (p, q) = (self.plant.position, self.plant.orientation);
        for i in 0..self.n_fingers() {
            let c = &self.plant.contacts[i];
            let n = q * c.body_normal;
            let tip = q * c.body_point + p + n * depth;
            let model = match self.cfg.controller.finger {
                FingerKind::Cartesian => FingerModel::Cartesian { home: tip },
                FingerKind::Serial => {
                    let mount = tip - n * SERIAL_STANDOFF + Vector3::z() * 0.03;
                    FingerModel::serial(mount)
                }
            };
            let seed = DVector::from_vec(match model {
                FingerModel::Cartesian { .. } => vec![0.0; 3],
                FingerModel::Serial { .. } => {
                    let d = tip - (tip - n * SERIAL_STANDOFF);
                    vec![d.y.atan2(d.x), 0.3, 0.3, 0.2]
                }
            });
            let joints = model
                .inverse(&tip, &seed)
                .map_err(|e| Error::config("controller.finger", format!("finger {i}: {e}")))?;
            let dof = model.joint_count();
            self.gains.push(AdmittanceGain::diagonal(dof, self.cfg.controller.gain_n_s_per_m / dt)?);
            self.q.push(joints.clone());
            self.q_des.push(joints);
            self.fingers.push(model);
            self.plant.tips.push(tip);
            let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), FINGERTIP_TILT);
            let align = Rotation3::rotation_between(&Vector3::z(), &n).unwrap_or_else(|| {
                Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
            });
            self.tip_frames.push(align * tilt);
        }
        let out = self.plant.settle();
        self.settle_iterations += out.iterations;
        if !out.settled {
            return Ok(Err(format!(
                "initial grasp does not settle: force residual {:.3e} N, torque residual {:.3e} N m",
                out.force_residual, out.torque_residual
            )));
        }
        self.plant.commit_friction();
        self.initial_orientation = self.plant.orientation;

        let contacts = self.contact_set(&self.plant.evaluate())?;
        let object = self.object_model()?;
        let plane = match compute_fe_plane(&contacts, &object) {
            Ok(plane) => plane,
            Err(e) => return Ok(Err(format!("no force equilibrium for the initial grasp: {e}"))),
        };
        let plan = self.plan(&plane, &contacts)?;
        if !plan.feasible {
            return Ok(Err("robust force plan is infeasible for the initial grasp".into()));
        }
        self.last_plan = Some(plan);
        Ok(Ok(()))
    }

    fn object_model(&self) -> Result<ObjectModel> {
        ObjectModel::new(self.cfg.object.mass_kg, self.plant.com_world())
    }

    fn contact_set(&self, evals: &[plant::ContactEval]) -> Result<ContactSet> {
        let mut contacts = Vec::with_capacity(evals.len());
        for (k, e) in evals.iter().enumerate() {
            let c = &self.cfg.contacts[self.order[k]];
            contacts.push(match c.kind {
                ContactKindConfig::Intrinsic => Contact::intrinsic(e.point, e.normal, c.friction, self.sigmas[k])?,
                ContactKindConfig::Extrinsic => Contact::extrinsic(e.point, e.normal, c.friction)?,
            });
        }
        ContactSet::new(contacts)
    }

    fn plan(&self, plane: &FePlane, contacts: &ContactSet) -> Result<ForcePlan> {
        let p = &self.cfg.planning;
        let cs = build_constraint_set(contacts, p.min_force_n, p.cone_sides)?;
        let cs = append_max_intrinsic_force(&cs, contacts, p.max_force_n)?;
        let uncertainty = UncertaintyModel::new(plane, contacts)?;
        match self.cfg.kind {
            ScenarioKind::Grasp => plan_grasp_forces_with(plane, &cs, contacts, &uncertainty, p.objective),
            ScenarioKind::Pivot => plan_extrinsic_forces(plane, &cs, contacts, &uncertainty),
        }
    }

    fn estimate(&self, plane: &FePlane, contacts: &ContactSet, m: &MeasurementVector) -> Result<DVector<f64>> {
        match self.cfg.kind {
            ScenarioKind::Grasp => estimate_grasp_forces(plane, contacts, m),
            ScenarioKind::Pivot => estimate_extrinsic_forces(plane, contacts, m, self.cfg.planning.estimation_lambda),
        }
    }

    fn target_angle(&self, t: f64) -> f64 {
        let tr = &self.cfg.trajectory;
        let (a0, a1) = (tr.initial_angle_deg, tr.final_angle_deg);
        if t <= tr.hold_s {
            a0
        } else if t >= tr.hold_s + tr.ramp_s {
            a1
        } else {
            a0 + (a1 - a0) * (t - tr.hold_s) / tr.ramp_s
        }
    }

    /// Hand-base pose at time `t`, relative to its pose at the start.
    fn base_pose(&self, t: f64) -> (Vector3<f64>, Rotation3<f64>) {
        let tr = &self.cfg.trajectory;
        match self.cfg.kind {
            ScenarioKind::Grasp => {
                let s = ((t - tr.lift_start_s) / tr.lift_duration_s).clamp(0.0, 1.0);
                (Vector3::new(0.0, 0.0, tr.lift_m * s), Rotation3::identity())
            }
            ScenarioKind::Pivot => {
                // rigidly carry the hand with the ideal object motion about the pivot
                let pivot = self.pivot_body.expect("pivot scene");
                let r0 = pitch(tr.initial_angle_deg.to_radians());
                let r = pitch(self.target_angle(t).to_radians());
                let p0 = -(r0 * pivot);
                let p = -(r * pivot);
                let rb = (r * r0.inverse()).to_rotation_matrix();
                (p - rb * p0, rb)
            }
        }
    }

    fn event(&mut self, step: usize, kind: &str, message: String) {
        self.events.push(Event { step, kind: kind.into(), message });
    }

    fn step(&mut self, k: usize) -> Result<StepRecord> {
        let dt = self.cfg.step_period();
        let t = (k + 1) as f64 * dt;
        let (base_p, base_r) = self.base_pose(t);
        // The hand carries the object rigidly; starting the settle from the
        // carried pose avoids stalling on saturated friction.
        let (prev_p, prev_r) = self.base_pose(k as f64 * dt);
        let carry = base_r * prev_r.inverse();
        let carry_q = UnitQuaternion::from_rotation_matrix(&carry);
        self.plant.orientation = carry_q * self.plant.orientation;
        self.plant.position = carry * (self.plant.position - prev_p) + base_p;
        let alpha = 1.0 - (-dt / self.cfg.controller.joint_time_constant_s).exp();
        for i in 0..self.n_fingers() {
            let q = &self.q[i] + (&self.q_des[i] - &self.q[i]) * alpha;
            self.q[i] = q;
            self.fingers[i].clamp(&mut self.q[i]);
            self.plant.tips[i] = base_p + base_r * self.fingers[i].forward(&self.q[i]);
        }

        let out = self.plant.settle();
        self.settle_iterations += out.iterations;
        self.plant.commit_friction();
        let evals = self.plant.evaluate();
        let touching = evals.iter().any(|e| e.normal_force > 0.0);
        if !touching && !self.dropped {
            self.dropped = true;
            self.event(k, "object_dropped", "all contacts lost".into());
        }
        if let Some(table) = self.plant.contacts.iter().find(|c| c.kind == PlantContactKind::Table) {
            if table.slip_distance > self.cfg.plant.slip_budget_m && !self.slipped {
                self.slipped = true;
                let msg = format!("pivot slid {:.4} m, budget {:.4} m", table.slip_distance, self.cfg.plant.slip_budget_m);
                self.event(k, "pivot_slip", msg);
            }
        }

        // tactile readings
        let mut magnitudes = Vec::with_capacity(self.n_fingers());
        let mut raw = Vec::with_capacity(self.n_fingers());
        for i in 0..self.n_fingers() {
            let frame = base_r * self.tip_frames[i];
            let e = &evals[i];
            let dir = frame.inverse() * e.normal;
            let reading = self.fingertips[i].read((e.normal_force > 0.0).then_some((&dir, e.normal_force)), dt);
            match reading {
                FingertipReading::Contact { contact_normal, force_magnitude, .. } => {
                    magnitudes.push(force_magnitude);
                    raw.push(frame * contact_normal * force_magnitude);
                }
                FingertipReading::NoContact => {
                    magnitudes.push(0.0);
                    raw.push(Vector3::zeros());
                }
            }
        }

        let n_contacts = evals.len();
        let mut estimated = vec![Vector3::zeros(); n_contacts];
        let mut reference: Option<Vec<Vector3<f64>>> = None;
        match self.pipeline(&evals, &magnitudes) {
            Ok((plan, est, consistent)) => {
                if !plan.feasible {
                    self.event(k, "plan_infeasible", "keeping the previous plan".into());
                } else {
                    self.last_plan = Some(plan);
                }
                estimated = est;
                reference = Some(consistent.unwrap_or_else(|| self.desired()));
            }
            Err(e) => self.event(k, "pipeline_error", e.to_string()),
        }
        let desired = self.desired();

        // admittance update
        let mut errors = Vec::with_capacity(self.n_fingers());
        for i in 0..self.n_fingers() {
            let observed = match self.feedback {
                FeedbackSource::Estimated => estimated[i],
                FeedbackSource::Raw => raw[i],
            };
            let target = reference.as_ref().map_or(desired[i], |r| r[i]);
            let mut e = target - observed;
            errors.push(e.norm());
            if reference.is_none() || e.norm() < self.cfg.controller.deadband_n {
                e = Vector3::zeros();
            }
            let j = nalgebra::DMatrix::from_column_slice(3, 3, base_r.matrix().as_slice()) * self.fingers[i].jacobian(&self.q[i]);
            let dq = admittance_step(&DVector::from_column_slice(e.as_slice()), &j, &self.gains[i])?;
            self.q_des[i] += dq;
            self.fingers[i].clamp(&mut self.q_des[i]);
        }

        let q = self.plant.orientation.quaternion();
        let contacts = (0..n_contacts)
            .map(|c| ContactRecord {
                desired_n: desired[c].into(),
                raw_n: if c < raw.len() { raw[c].into() } else { [0.0; 3] },
                estimated_n: estimated[c].into(),
                true_n: evals[c].force.into(),
            })
            .collect();
        Ok(StepRecord {
            step: k,
            time_s: t,
            object_position_m: self.plant.position.into(),
            object_orientation: [q.w, q.i, q.j, q.k],
            angle_deg: self.plant.pitch_angle().to_degrees(),
            target_angle_deg: match self.cfg.kind {
                ScenarioKind::Pivot => self.target_angle(t),
                ScenarioKind::Grasp => pitch_of(&self.initial_orientation).to_degrees(),
            },
            force_error_n: errors.iter().sum::<f64>() / errors.len().max(1) as f64,
            settled: out.settled,
            contacts,
        })
    }

    fn desired(&self) -> Vec<Vector3<f64>> {
        self.last_plan.as_ref().map(|p| p.desired_forces.clone()).unwrap_or_default()
    }

    /// Plans and estimates at the current pose. Returns the plan, the
    /// per-contact estimate and, with estimated feedback, the
    /// estimator-consistent reference.
    #[allow(clippy::type_complexity)]
    fn pipeline(
        &self,
        evals: &[plant::ContactEval],
        magnitudes: &[f64],
    ) -> Result<(ForcePlan, Vec<Vector3<f64>>, Option<Vec<Vector3<f64>>>)> {
        let contacts = self.contact_set(evals)?;
        let object = self.object_model()?;
        let plane = compute_fe_plane(&contacts, &object)?;
        let plan = self.plan(&plane, &contacts)?;
        let m = MeasurementVector::new(magnitudes.iter().copied());
        let est = contacts.split_forces(&self.estimate(&plane, &contacts, &m)?);
        let consistent = if self.feedback == FeedbackSource::Estimated {
            let source = if plan.feasible { &plan } else { self.last_plan.as_ref().expect("initial plan exists") };
            let planned = MeasurementVector::new(
                contacts.normal_components(&source.forces).into_iter().take(contacts.n_intrinsic()),
            );
            Some(contacts.split_forces(&self.estimate(&plane, &contacts, &planned)?))
        } else {
            None
        };
        Ok((plan, est, consistent))
    }

    fn summarize(&self, steps: &[StepRecord]) -> Summary {
        let n = steps.len();
        let tail = &steps[n - (n / 4).max(1)..];
        let final_error = tail.iter().map(|s| s.force_error_n).sum::<f64>() / tail.len() as f64;
        // orientation change is measured against the pose once the initial
        // squeeze has converged, so the grasp transient is not counted
        let settled_from = self.cfg.trajectory.convergence_time_s;
        let after: Vec<&StepRecord> = steps.iter().filter(|s| s.time_s >= settled_from).collect();
        let reference = after.first().map_or(self.initial_orientation, |s| quaternion(s));
        let max_orientation = after
            .iter()
            .map(|s| {
                quaternion(s).angle_to(&reference).to_degrees()
            })
            .fold(0.0, f64::max);
        let unsettled = steps.iter().filter(|s| !s.settled).count();
        let converged = final_error <= CONVERGED_FORCE_ERROR;
        let (rms, final_angle, success) = match self.cfg.kind {
            ScenarioKind::Grasp => (None, None, max_orientation <= GRASP_ORIENTATION_TOLERANCE_DEG),
            ScenarioKind::Pivot => {
                let after: Vec<f64> = steps
                    .iter()
                    .filter(|s| s.time_s >= self.cfg.trajectory.convergence_time_s)
                    .map(|s| s.angle_deg - s.target_angle_deg)
                    .collect();
                let rms = (after.iter().map(|e| e * e).sum::<f64>() / after.len().max(1) as f64).sqrt();
                let last = steps.last().map_or(0.0, |s| s.angle_deg - s.target_angle_deg);
                (Some(rms), Some(last), last.abs() <= self.cfg.trajectory.angle_tolerance_deg)
            }
        };
        Summary {
            plan_feasible: true,
            aborted: None,
            success: success && !self.dropped && !self.slipped,
            converged,
            final_force_error_n: final_error,
            max_orientation_change_deg: max_orientation,
            angle_rms_deg: rms,
            final_angle_error_deg: final_angle,
            unsettled_steps: unsettled,
        }
    }
}

fn quaternion(s: &StepRecord) -> UnitQuaternion<f64> {
    let [w, x, y, z] = s.object_orientation;
    UnitQuaternion::new_normalize(nalgebra::Quaternion::new(w, x, y, z))
}

/// Rotation by `angle` about world `y`.
fn pitch(angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), angle)
}

fn pitch_of(q: &UnitQuaternion<f64>) -> f64 {
    let r = q.to_rotation_matrix();
    r[(0, 2)].atan2(r[(0, 0)])
}
