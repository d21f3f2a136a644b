use std::path::PathBuf;

use geodex::report::validate_report;
use geodex::scenario::{FeedbackSource, Scenario};
use geodex::sim::{
    admittance_step, run_grasp_scenario, run_pivot_scenario, run_scenario, AdmittanceGain, FingerModel, Plant, PlantContact,
};
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};

fn bundled(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scenario"));
    Scenario::load(&path).unwrap()
}

fn with_ideal_sensors(scenario: &Scenario) -> Scenario {
    let mut text = scenario.source_text.clone();
    for (key, value) in [
        ("activation_threshold_n", "0.1"),
        ("hysteresis_offset_n", "0.1"),
        ("force_error_scale_n", "0.15"),
        ("noise_std_n", "0.02"),
    ] {
        text = text.replace(&format!("{key} = {value}"), &format!("{key} = 0.0"));
    }
    Scenario::parse(&text).unwrap()
}

#[test]
fn ideal_sensors_drive_the_force_error_to_zero() {
    let scenario = with_ideal_sensors(&bundled("wrench3"));
    let report = run_grasp_scenario(&scenario, FeedbackSource::Estimated, 0).unwrap();
    assert!(report.summary.final_force_error_n <= 0.01, "{:?}", report.summary);
    assert!(report.summary.success);
}

#[test]
fn estimated_feedback_beats_raw_on_the_wrench() {
    let scenario = bundled("wrench3");
    let est = run_scenario(&scenario, FeedbackSource::Estimated, 0).unwrap();
    let raw = run_scenario(&scenario, FeedbackSource::Raw, 0).unwrap();
    assert!(est.summary.success && est.summary.converged);
    assert!(est.summary.final_force_error_n < raw.summary.final_force_error_n);
    assert!(est.summary.max_orientation_change_deg < raw.summary.max_orientation_change_deg);
}

#[test]
fn pivot_without_rotation_holds_the_pose() {
    let text = bundled("cube_pivot").source_text.replace("final_angle_deg = 30.0", "final_angle_deg = 58.0");
    let scenario = with_ideal_sensors(&Scenario::parse(&text).unwrap());
    let report = run_pivot_scenario(&scenario, FeedbackSource::Estimated, 0).unwrap();
    let first = &report.steps[0];
    for step in &report.steps {
        assert!((step.angle_deg - 58.0).abs() < 0.05, "step {} angle {}", step.step, step.angle_deg);
        let drift = Vector3::from(step.object_position_m) - Vector3::from(first.object_position_m);
        assert!(drift.norm() < 1e-3);
    }
    assert!(report.events.is_empty(), "{:?}", report.events);
}

#[test]
fn cube_pivot_tracks_the_commanded_angle() {
    let report = run_pivot_scenario(&bundled("cube_pivot"), FeedbackSource::Estimated, 0).unwrap();
    assert!(report.summary.success, "{:?}", report.summary);
    assert!(report.summary.angle_rms_deg.unwrap() <= 2.0);
}

#[test]
fn runs_are_deterministic_and_reports_validate() {
    let scenario = bundled("sphere_pinch");
    let a = run_scenario(&scenario, FeedbackSource::Raw, 1).unwrap().to_json().unwrap();
    let b = run_scenario(&scenario, FeedbackSource::Raw, 1).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    validate_report(&serde_json::from_str(&a).unwrap()).unwrap();
    let c = run_scenario(&scenario, FeedbackSource::Raw, 2).unwrap().to_json().unwrap();
    assert_ne!(a, c);
}

#[test]
fn kind_mismatch_is_rejected() {
    assert!(run_pivot_scenario(&bundled("sphere_pinch"), FeedbackSource::Estimated, 0).is_err());
    assert!(run_grasp_scenario(&bundled("cube_pivot"), FeedbackSource::Estimated, 0).is_err());
}

#[test]
fn infeasible_initial_plan_aborts_without_steps() {
    let mut scenario = bundled("sphere_pinch");
    scenario.config = scenario.config.with_sigma_scale(100.0).unwrap();
    let report = run_scenario(&scenario, FeedbackSource::Estimated, 0).unwrap();
    assert!(!report.summary.plan_feasible);
    assert!(report.summary.aborted.is_some());
    assert!(report.steps.is_empty());
}

#[test]
fn admittance_moves_fingertips_along_the_force_error() {
    let k = AdmittanceGain::diagonal(4, 150.0).unwrap();
    let finger = FingerModel::serial(Vector3::zeros());
    let q = DVector::from_vec(vec![0.2, 0.5, 0.4, 0.3]);
    let j = finger.jacobian(&q);
    for e in [Vector3::x(), -Vector3::y(), Vector3::new(0.3, -0.2, 0.9)] {
        let dq = admittance_step(&DVector::from_column_slice(e.as_slice()), &j, &k).unwrap();
        let dx = &j * dq;
        assert!(dx.dot(&DVector::from_column_slice(e.as_slice())) > 0.0);
    }
    let cartesian = AdmittanceGain::diagonal(3, 150.0).unwrap();
    let e = DVector::from_vec(vec![0.0, 0.0, 1.5]);
    let dq = admittance_step(&e, &DMatrix::identity(3, 3), &cartesian).unwrap();
    assert!((dq[2] - 0.01).abs() < 1e-15 && dq[0] == 0.0 && dq[1] == 0.0);
}

#[test]
fn admittance_step_shrinks_the_error_on_a_pinch() {
    let (k_c, dt, gain) = (5000.0, 0.01, 150.0);
    assert!(gain > k_c * dt);
    let depth = 1.0 / k_c;
    let mut plant = Plant {
        mass: 0.1,
        com_body: Vector3::zeros(),
        gravity: Vector3::zeros(),
        stiffness: k_c,
        table_height: -1.0,
        position: Vector3::zeros(),
        orientation: UnitQuaternion::identity(),
        contacts: vec![
            PlantContact::finger(0, Vector3::new(-0.03, 0.0, 0.0), Vector3::x(), 0.9),
            PlantContact::finger(1, Vector3::new(0.03, 0.0, 0.0), -Vector3::x(), 0.9),
        ],
        tips: vec![Vector3::new(-0.03 + depth, 0.0, 0.0), Vector3::new(0.03 - depth, 0.0, 0.0)],
    };
    assert!(plant.settle().settled);
    let k = AdmittanceGain::diagonal(3, gain / dt).unwrap();
    let desired = Vector3::x() * 3.0;
    let mut previous = f64::INFINITY;
    for _ in 0..40 {
        let error = desired - plant.evaluate()[0].force;
        assert!(error.norm() < previous, "{} !< {previous}", error.norm());
        previous = error.norm();
        let dq = admittance_step(&DVector::from_column_slice(error.as_slice()), &DMatrix::identity(3, 3), &k).unwrap();
        plant.tips[0] += Vector3::new(dq[0], dq[1], dq[2]);
        assert!(plant.settle().settled);
        plant.commit_friction();
    }
    assert!(previous < 0.05);
}
