//! JSON run reports.
//!
//! Keys appear in declaration order and floats are written in shortest
//! round-trip form, so a report read back compares equal to the one written.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::TrajectoryKind;
use crate::em::{assign_latent, CrossingModel, EmConfig, EmTrace};
use crate::error::{Error, Result};
use crate::geometry::{Line, Point2};

pub const SCHEMA_VERSION: u64 = 1;

/// Class assigned to one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub object_id: String,
    pub class: TrajectoryKind,
    pub segment: Option<usize>,
    pub band_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u64,
    pub config: EmConfig,
    pub corners: Vec<Point2>,
    pub lines: Vec<Line>,
    pub segments: Vec<(usize, usize)>,
    pub converged: bool,
    pub iterations: usize,
    pub trace: EmTrace,
    /// Final crossing per input detection, `null` for outliers.
    pub assignments: Vec<Option<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<ClassRecord>>,
}

impl RunReport {
    /// Assembles a report; assignments are recomputed against the final model.
    pub fn new(config: &EmConfig, model: &CrossingModel, trace: EmTrace, points: &[Point2]) -> Self {
        let assignment = assign_latent(points, model, config.outlier_distance);
        Self {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            corners: model.corners.clone(),
            lines: model.lines.clone(),
            segments: model.segments.clone(),
            converged: trace.converged,
            iterations: trace.iterations.len(),
            trace,
            assignments: assignment.labels,
            classes: None,
        }
    }

    pub fn model(&self) -> CrossingModel {
        CrossingModel {
            corners: self.corners.clone(),
            segments: self.segments.clone(),
            lines: self.lines.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a report, checking the schema version before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Config("report has no numeric schema_version".into()))?;
        if found != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

pub fn write_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    super::write_text(path, &report.to_json()?)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    RunReport::from_json(&text)
}
