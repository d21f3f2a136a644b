//! Scenario files: TOML with explicit units in field names.
//!
//! Positions and normals are in the object's body frame. Intrinsic contact
//! normals point into the object; extrinsic contacts are table contacts
//! whose normal is world `+z`.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::contact::DEFAULT_CONE_SIDES;
use crate::error::{Error, Result};
use crate::planning::PlanObjective;
use crate::tactile::TaxelCharacterization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Grasp,
    Pivot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    Estimated,
    Raw,
}

impl std::str::FromStr for FeedbackSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "est" | "estimated" => Ok(Self::Estimated),
            "raw" => Ok(Self::Raw),
            other => Err(Error::InvalidArgument(format!(
                "feedback must be `est` or `raw`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Sphere { radius_m: f64 },
    Box { size_m: [f64; 3] },
    Cylinder { radius_m: f64, height_m: f64 },
    Tool { length_m: f64, handle_radius_m: f64 },
}

impl Geometry {
    fn dimensions(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Geometry::Sphere { radius_m } => vec![("radius_m", radius_m)],
            Geometry::Box { size_m } => size_m.iter().map(|v| ("size_m", *v)).collect(),
            Geometry::Cylinder { radius_m, height_m } => vec![("radius_m", radius_m), ("height_m", height_m)],
            Geometry::Tool { length_m, handle_radius_m } => {
                vec![("length_m", length_m), ("handle_radius_m", handle_radius_m)]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub mass_kg: f64,
    pub com_m: [f64; 3],
    pub geometry: Geometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKindConfig {
    Intrinsic,
    Extrinsic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    pub kind: ContactKindConfig,
    pub position_m: [f64; 3],
    /// Inward normal; required for intrinsic contacts.
    #[serde(default)]
    pub normal: Option<[f64; 3]>,
    pub friction: f64,
    /// Trusted measurement noise, N; intrinsic contacts only.
    #[serde(default)]
    pub sigma_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanningConfig {
    pub min_force_n: f64,
    #[serde(default = "default_max_force")]
    pub max_force_n: f64,
    #[serde(default = "default_cone_sides")]
    pub cone_sides: usize,
    #[serde(default)]
    pub objective: PlanObjective,
    #[serde(default = "default_lambda")]
    pub estimation_lambda: f64,
}

fn default_max_force() -> f64 {
    crate::tactile::MAX_READING
}
fn default_cone_sides() -> usize {
    DEFAULT_CONE_SIDES
}
fn default_lambda() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerKind {
    Cartesian,
    Serial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Diagonal of the admittance gain `K`; `dq = dt K^-1 J^T e`.
    pub gain_n_s_per_m: f64,
    pub rate_hz: f64,
    #[serde(default)]
    pub deadband_n: f64,
    #[serde(default = "default_joint_time_constant")]
    pub joint_time_constant_s: f64,
    #[serde(default = "default_finger")]
    pub finger: FingerKind,
    pub feedback: FeedbackSource,
}

fn default_joint_time_constant() -> f64 {
    0.02
}
fn default_finger() -> FingerKind {
    FingerKind::Cartesian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default = "default_stiffness")]
    pub contact_stiffness_n_per_m: f64,
    pub initial_squeeze_n: f64,
    #[serde(default = "default_slip_budget")]
    pub slip_budget_m: f64,
}

fn default_stiffness() -> f64 {
    5000.0
}
fn default_slip_budget() -> f64 {
    0.005
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TactileConfig {
    /// Shared taxel characterization; drawn from the characterized ranges
    /// using the scenario seed when omitted.
    #[serde(default)]
    pub characterization: Option<TaxelCharacterization>,
    /// CSV layout, relative to the scenario file.
    #[serde(default)]
    pub layout_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub duration_s: f64,
    /// Steps before this time are excluded from convergence metrics.
    #[serde(default = "default_convergence_time")]
    pub convergence_time_s: f64,
    /// Grasp: vertical lift of the hand base.
    #[serde(default)]
    pub lift_m: f64,
    #[serde(default)]
    pub lift_start_s: f64,
    #[serde(default = "default_lift_duration")]
    pub lift_duration_s: f64,
    /// Pivot: object angle about the pivot's `y` axis.
    #[serde(default)]
    pub initial_angle_deg: f64,
    #[serde(default)]
    pub final_angle_deg: f64,
    #[serde(default)]
    pub hold_s: f64,
    #[serde(default = "default_ramp")]
    pub ramp_s: f64,
    /// Pivot: largest final angle error of a successful run.
    #[serde(default = "default_angle_tolerance")]
    pub angle_tolerance_deg: f64,
}

fn default_convergence_time() -> f64 {
    1.0
}
fn default_lift_duration() -> f64 {
    1.0
}
fn default_angle_tolerance() -> f64 {
    2.0
}
fn default_ramp() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    pub object: ObjectConfig,
    pub contacts: Vec<ContactConfig>,
    pub planning: PlanningConfig,
    pub controller: ControllerConfig,
    pub plant: PlantConfig,
    #[serde(default)]
    pub tactile: Option<TactileConfig>,
    pub trajectory: TrajectoryConfig,
}

fn default_reps() -> usize {
    1
}

/// A parsed scenario together with the exact text it came from.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub source_text: String,
    /// Directory relative paths in the file resolve against.
    pub base_dir: Option<std::path::PathBuf>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(Self { config, source_text: text.to_owned(), base_dir: None })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut scenario = Self::parse(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        scenario.base_dir = path.parent().map(Path::to_path_buf);
        Ok(scenario)
    }
}

fn positive(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be a finite positive number, got {value}")))
    }
}

fn non_negative(field: &str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and >= 0, got {value}")))
    }
}

fn finite3(field: &str, v: &[f64; 3]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::config(field, "must contain finite numbers"))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        positive("object.mass_kg", self.object.mass_kg)?;
        finite3("object.com_m", &self.object.com_m)?;
        for (field, value) in self.object.geometry.dimensions() {
            positive(&format!("object.geometry.{field}"), value)?;
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "must be >= 1"));
        }
        if self.contacts.is_empty() {
            return Err(Error::config("contacts", "at least one contact is required"));
        }
        let mut extrinsic = 0;
        for (i, c) in self.contacts.iter().enumerate() {
            let field = |name: &str| format!("contacts[{i}].{name}");
            finite3(&field("position_m"), &c.position_m)?;
            non_negative(&field("friction"), c.friction)?;
            match c.kind {
                ContactKindConfig::Intrinsic => {
                    let n = c.normal.ok_or_else(|| Error::config(field("normal"), "required for intrinsic contacts"))?;
                    finite3(&field("normal"), &n)?;
                    if Vector3::from(n).norm() < 1e-9 {
                        return Err(Error::config(field("normal"), "must be nonzero"));
                    }
                    let sigma =
                        c.sigma_n.ok_or_else(|| Error::config(field("sigma_n"), "required for intrinsic contacts"))?;
                    positive(&field("sigma_n"), sigma)?;
                }
                ContactKindConfig::Extrinsic => {
                    extrinsic += 1;
                    if c.sigma_n.is_some() {
                        return Err(Error::config(field("sigma_n"), "extrinsic contacts are not sensed"));
                    }
                }
            }
        }
        match self.kind {
            ScenarioKind::Grasp if extrinsic > 0 => {
                return Err(Error::config("contacts", "grasp scenarios take intrinsic contacts only"));
            }
            ScenarioKind::Pivot if extrinsic != 1 => {
                return Err(Error::config("contacts", "pivot scenarios need exactly one extrinsic contact"));
            }
            _ => {}
        }
        non_negative("planning.min_force_n", self.planning.min_force_n)?;
        positive("planning.max_force_n", self.planning.max_force_n)?;
        if self.planning.max_force_n <= self.planning.min_force_n {
            return Err(Error::config("planning.max_force_n", "must exceed planning.min_force_n"));
        }
        if self.planning.cone_sides < 3 {
            return Err(Error::config("planning.cone_sides", "must be >= 3"));
        }
        non_negative("planning.estimation_lambda", self.planning.estimation_lambda)?;
        positive("controller.gain_n_s_per_m", self.controller.gain_n_s_per_m)?;
        positive("controller.rate_hz", self.controller.rate_hz)?;
        non_negative("controller.deadband_n", self.controller.deadband_n)?;
        positive("controller.joint_time_constant_s", self.controller.joint_time_constant_s)?;
        positive("plant.contact_stiffness_n_per_m", self.plant.contact_stiffness_n_per_m)?;
        positive("plant.initial_squeeze_n", self.plant.initial_squeeze_n)?;
        positive("plant.slip_budget_m", self.plant.slip_budget_m)?;
        if let Some(ch) = self.tactile.as_ref().and_then(|t| t.characterization) {
            ch.validate().map_err(|e| match e {
                Error::Config { field, message } => Error::Config { field: format!("tactile.characterization.{field}"), message },
                other => other,
            })?;
        }
        let t = &self.trajectory;
        positive("trajectory.duration_s", t.duration_s)?;
        non_negative("trajectory.convergence_time_s", t.convergence_time_s)?;
        if t.convergence_time_s >= t.duration_s {
            return Err(Error::config("trajectory.convergence_time_s", "must be shorter than trajectory.duration_s"));
        }
        if !t.lift_m.is_finite() {
            return Err(Error::config("trajectory.lift_m", "must be finite"));
        }
        non_negative("trajectory.lift_start_s", t.lift_start_s)?;
        positive("trajectory.lift_duration_s", t.lift_duration_s)?;
        non_negative("trajectory.hold_s", t.hold_s)?;
        positive("trajectory.ramp_s", t.ramp_s)?;
        for (field, angle) in [
            ("trajectory.initial_angle_deg", t.initial_angle_deg),
            ("trajectory.final_angle_deg", t.final_angle_deg),
        ] {
            if !(angle.abs() < 90.0) {
                return Err(Error::config(field, format!("must lie in (-90, 90), got {angle}")));
            }
        }
        Ok(())
    }

    pub fn step_period(&self) -> f64 {
        1.0 / self.controller.rate_hz
    }

    pub fn step_count(&self) -> usize {
        (self.trajectory.duration_s * self.controller.rate_hz).round() as usize
    }

    /// Copy with every intrinsic sigma multiplied by `scale`.
    pub fn with_sigma_scale(&self, scale: f64) -> Result<Self> {
        positive("--sigma-scale", scale)?;
        let mut out = self.clone();
        for c in &mut out.contacts {
            if let Some(s) = c.sigma_n.as_mut() {
                *s *= scale;
            }
        }
        Ok(out)
    }
}
