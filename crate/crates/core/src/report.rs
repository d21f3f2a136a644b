//! Run reports: a versioned JSON document and a plot-ready CSV trace.
//!
//! JSON layout (`format = "geodex-run-report"`, `version = 1`):
//!
//! - `scenario`, `feedback`, `seed`, `repetition`
//! - `config_echo`: the scenario file text, byte for byte
//! - `controller`: gain and rate actually used
//! - `summary`: convergence and success metrics
//! - `timing`: simulated time, control steps and settle iterations
//! - `events`: failure and diagnostic events with their step index
//! - `steps`: one record per control step
//!
//! Everything in a report is a pure function of the scenario and seed, so
//! repeated runs produce identical files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scenario::FeedbackSource;

pub const REPORT_FORMAT: &str = "geodex-run-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub desired_n: [f64; 3],
    pub raw_n: [f64; 3],
    pub estimated_n: [f64; 3],
    pub true_n: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time_s: f64,
    pub object_position_m: [f64; 3],
    /// `[w, x, y, z]`.
    pub object_orientation: [f64; 4],
    pub angle_deg: f64,
    pub target_angle_deg: f64,
    /// Mean over sensed contacts of `|f_reference - f_feedback|`.
    pub force_error_n: f64,
    pub settled: bool,
    pub contacts: Vec<ContactRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: usize,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub plan_feasible: bool,
    pub aborted: Option<String>,
    pub success: bool,
    pub converged: bool,
    /// Mean force error over the final quarter of the run, N.
    pub final_force_error_n: f64,
    /// Largest rotation after the convergence time relative to the pose then, deg.
    pub max_orientation_change_deg: f64,
    /// Pivot scenes: RMS angle error after the convergence time, deg.
    pub angle_rms_deg: Option<f64>,
    pub final_angle_error_deg: Option<f64>,
    pub unsettled_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerEcho {
    pub gain_n_s_per_m: f64,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub simulated_time_s: f64,
    pub control_steps: usize,
    pub settle_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub feedback: FeedbackSource,
    pub seed: u64,
    pub repetition: usize,
    pub config_echo: String,
    pub controller: ControllerEcho,
    pub summary: Summary,
    pub timing: Timing,
    pub events: Vec<Event>,
    pub steps: Vec<StepRecord>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// One row per step: time, angles, error, then per contact the
    /// desired/raw/estimated/true force components.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let contacts = self.steps.first().map_or(0, |s| s.contacts.len());
        let mut header: Vec<String> =
            ["step", "time_s", "angle_deg", "target_angle_deg", "force_error_n", "settled"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        for i in 0..contacts {
            for source in ["desired", "raw", "estimated", "true"] {
                for axis in ["x", "y", "z"] {
                    header.push(format!("c{i}_{source}_{axis}_n"));
                }
            }
        }
        let csv_err = |e: csv::Error| Error::Parse(e.to_string());
        writer.write_record(&header).map_err(csv_err)?;
        for s in &self.steps {
            let mut row = vec![
                s.step.to_string(),
                format!("{}", s.time_s),
                format!("{}", s.angle_deg),
                format!("{}", s.target_angle_deg),
                format!("{}", s.force_error_n),
                s.settled.to_string(),
            ];
            for c in &s.contacts {
                for v in [c.desired_n, c.raw_n, c.estimated_n, c.true_n] {
                    row.extend(v.iter().map(|x| format!("{x}")));
                }
            }
            writer.write_record(&row).map_err(csv_err)?;
        }
        writer.flush()?;
        let mut inner = writer.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        inner.flush()?;
        Ok(())
    }
}

fn require<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Parse(format!("report: missing `{path}{key}`")))
}

fn expect(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Parse(format!("report: {what}")))
    }
}

/// Checks a parsed report against the documented layout.
pub fn validate_report(value: &Value) -> Result<()> {
    expect(value.is_object(), "top level must be an object")?;
    expect(require(value, "format", "")?.as_str() == Some(REPORT_FORMAT), "unexpected `format`")?;
    expect(
        require(value, "version", "")?.as_u64() == Some(REPORT_VERSION as u64),
        "unsupported `version`",
    )?;
    for key in ["scenario", "config_echo", "feedback"] {
        expect(require(value, key, "")?.is_string(), &format!("`{key}` must be a string"))?;
    }
    for key in ["seed", "repetition"] {
        expect(require(value, key, "")?.is_u64(), &format!("`{key}` must be an unsigned integer"))?;
    }
    let summary = require(value, "summary", "")?;
    for key in ["plan_feasible", "success", "converged"] {
        expect(require(summary, key, "summary.")?.is_boolean(), &format!("`summary.{key}` must be a boolean"))?;
    }
    for key in ["final_force_error_n", "max_orientation_change_deg"] {
        expect(require(summary, key, "summary.")?.is_number(), &format!("`summary.{key}` must be a number"))?;
    }
    let timing = require(value, "timing", "")?;
    for key in ["simulated_time_s", "control_steps", "settle_iterations"] {
        expect(require(timing, key, "timing.")?.is_number(), &format!("`timing.{key}` must be a number"))?;
    }
    expect(require(value, "events", "")?.is_array(), "`events` must be an array")?;
    let steps = require(value, "steps", "")?
        .as_array()
        .ok_or_else(|| Error::Parse("report: `steps` must be an array".into()))?;
    let mut width = None;
    for (i, step) in steps.iter().enumerate() {
        let at = format!("steps[{i}].");
        for key in ["time_s", "angle_deg", "target_angle_deg", "force_error_n"] {
            expect(require(step, key, &at)?.is_number(), &format!("`{at}{key}` must be a number"))?;
        }
        let q = require(step, "object_orientation", &at)?
            .as_array()
            .ok_or_else(|| Error::Parse(format!("report: `{at}object_orientation` must be an array")))?;
        expect(q.len() == 4, &format!("`{at}object_orientation` must have 4 entries"))?;
        let norm: f64 = q.iter().filter_map(Value::as_f64).map(|v| v * v).sum::<f64>().sqrt();
        expect((norm - 1.0).abs() <= 1e-9, &format!("`{at}object_orientation` must be a unit quaternion"))?;
        let contacts = require(step, "contacts", &at)?
            .as_array()
            .ok_or_else(|| Error::Parse(format!("report: `{at}contacts` must be an array")))?;
        expect(*width.get_or_insert(contacts.len()) == contacts.len(), "contact count changes between steps")?;
        for c in contacts {
            for key in ["desired_n", "raw_n", "estimated_n", "true_n"] {
                let v = require(c, key, &at)?;
                expect(
                    v.as_array().is_some_and(|a| a.len() == 3 && a.iter().all(Value::is_number)),
                    &format!("`{at}contacts.{key}` must be three numbers"),
                )?;
            }
        }
    }
    Ok(())
}
