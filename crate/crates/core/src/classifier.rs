//! Rule-based trajectory classification against estimated crossings.
//!
//! Each crossing gets a band of half-width `inner` around its line, and each
//! corner a waiting disk of radius `outer`. The convex hull of the corners
//! stands in for the intersection interior. Rules are applied in order:
//!
//! 1. crossing: starts within `outer` of one end of a crossing, ends within
//!    `outer` of the other end, and most samples in between stay in its band;
//! 2. biker: enters the interior, most interior samples ride along one band,
//!    and neither end is near any corner;
//! 3. jaywalking: passes through the interior (in and out again) off the
//!    bands, with neither end near any corner;
//! 4. other.

use serde::{Deserialize, Serialize};

use crate::em::CrossingModel;
use crate::error::{Error, Result};
use crate::geometry::{convex_contains, convex_hull, parallel_offset, Line, Point2};

pub const DEFAULT_INNER_MARGIN: f64 = 2.0;
pub const DEFAULT_OUTER_MARGIN: f64 = 2.75;
pub const DEFAULT_MIN_BAND_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub pos: Point2,
}

/// Time-ordered positions of one tracked object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    object_id: String,
    samples: Vec<Sample>,
}

impl Trajectory {
    /// Requires at least two samples with strictly increasing timestamps.
    pub fn new(object_id: impl Into<String>, samples: Vec<Sample>) -> Result<Self> {
        let object_id = object_id.into();
        if samples.len() < 2 {
            return Err(Error::InvalidTrajectory(format!(
                "{object_id}: need at least 2 samples, got {}",
                samples.len()
            )));
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].t.partial_cmp(&w[0].t) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::InvalidTrajectory(format!(
                "{object_id}: timestamps not strictly increasing at {}",
                w[1].t
            )));
        }
        Ok(Self { object_id, samples })
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn positions(&self) -> impl Iterator<Item = Point2> + '_ {
        self.samples.iter().map(|s| s.pos)
    }

    /// Same path walked backwards, on the same time stamps.
    pub fn reversed(&self) -> Self {
        let times = self.samples.iter().map(|s| s.t);
        let samples = times
            .zip(self.samples.iter().rev())
            .map(|(t, s)| Sample { t, pos: s.pos })
            .collect();
        Self {
            object_id: self.object_id.clone(),
            samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub corners: (usize, usize),
    pub center: Line,
    pub boundaries: (Line, Line),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandModel {
    pub corners: Vec<Point2>,
    pub bands: Vec<Band>,
    /// Counter-clockwise hull of the corners.
    pub hull: Vec<Point2>,
    pub inner: f64,
    pub outer: f64,
}

impl BandModel {
    pub fn in_band(&self, band: usize, p: Point2) -> bool {
        self.bands[band].center.distance(p) <= self.inner
    }

    pub fn near_corner(&self, corner: usize, p: Point2) -> bool {
        self.corners[corner].distance(p) <= self.outer
    }

    pub fn near_any_corner(&self, p: Point2) -> bool {
        (0..self.corners.len()).any(|c| self.near_corner(c, p))
    }

    pub fn in_interior(&self, p: Point2) -> bool {
        convex_contains(&self.hull, p)
    }
}

pub fn build_band_model(model: &CrossingModel, inner: f64, outer: f64) -> Result<BandModel> {
    for (name, v) in [("inner", inner), ("outer", outer)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{name} margin must be finite and non-negative, got {v}"
            )));
        }
    }
    let bands = model
        .segments
        .iter()
        .zip(&model.lines)
        .map(|(&corners, &center)| Band {
            corners,
            center,
            boundaries: parallel_offset(&center, inner),
        })
        .collect();
    Ok(BandModel {
        corners: model.corners.clone(),
        bands,
        hull: convex_hull(&model.corners),
        inner,
        outer,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Crossing,
    Jaywalking,
    Biker,
    Other,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 4] = [
        TrajectoryKind::Crossing,
        TrajectoryKind::Jaywalking,
        TrajectoryKind::Biker,
        TrajectoryKind::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectoryKind::Crossing => "crossing",
            TrajectoryKind::Jaywalking => "jaywalking",
            TrajectoryKind::Biker => "biker",
            TrajectoryKind::Other => "other",
        }
    }
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TrajectoryKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown trajectory class {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryClass {
    pub kind: TrajectoryKind,
    /// Crossing used (crossing) or ridden along (biker).
    pub segment: Option<usize>,
    /// Fraction of the tested samples inside the relevant band.
    pub band_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierRules {
    /// Share of samples that must lie inside a band for rules 1 and 2.
    pub min_band_fraction: f64,
}

impl Default for ClassifierRules {
    fn default() -> Self {
        Self {
            min_band_fraction: DEFAULT_MIN_BAND_FRACTION,
        }
    }
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn classify(traj: &Trajectory, band: &BandModel) -> TrajectoryClass {
    classify_with(traj, band, &ClassifierRules::default())
}

pub fn classify_with(traj: &Trajectory, band: &BandModel, rules: &ClassifierRules) -> TrajectoryClass {
    let pos: Vec<Point2> = traj.positions().collect();
    let (first, last) = (pos[0], pos[pos.len() - 1]);
    let between = &pos[1..pos.len() - 1];

    // Rule 1: corner to corner along one crossing.
    let mut best: Option<(usize, f64)> = None;
    for (s, b) in band.bands.iter().enumerate() {
        let (a, c) = b.corners;
        let joins = (band.near_corner(a, first) && band.near_corner(c, last))
            || (band.near_corner(c, first) && band.near_corner(a, last));
        if !joins {
            continue;
        }
        let frac = fraction(between.iter().filter(|&&p| band.in_band(s, p)).count(), between.len());
        if frac >= rules.min_band_fraction && best.is_none_or(|(_, f)| frac > f) {
            best = Some((s, frac));
        }
    }
    if let Some((s, frac)) = best {
        return TrajectoryClass {
            kind: TrajectoryKind::Crossing,
            segment: Some(s),
            band_fraction: frac,
        };
    }

    let ends_away = !band.near_any_corner(first) && !band.near_any_corner(last);
    let inside: Vec<bool> = pos.iter().map(|&p| band.in_interior(p)).collect();
    let interior: Vec<Point2> = pos
        .iter()
        .zip(&inside)
        .filter(|(_, &i)| i)
        .map(|(&p, _)| p)
        .collect();
    let (lane, lane_frac) = (0..band.bands.len())
        .map(|s| {
            let hits = interior.iter().filter(|&&p| band.in_band(s, p)).count();
            (Some(s), fraction(hits, interior.len()))
        })
        .fold((None, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });

    // Rule 2: riding through the interior along a band.
    if ends_away && !interior.is_empty() && lane_frac >= rules.min_band_fraction {
        return TrajectoryClass {
            kind: TrajectoryKind::Biker,
            segment: lane,
            band_fraction: lane_frac,
        };
    }

    // Rule 3: in and out of the interior, off the bands.
    let boundary_crossings = inside.windows(2).filter(|w| w[0] != w[1]).count();
    if ends_away && boundary_crossings >= 2 && lane_frac < rules.min_band_fraction {
        return TrajectoryClass {
            kind: TrajectoryKind::Jaywalking,
            segment: None,
            band_fraction: lane_frac,
        };
    }

    TrajectoryClass {
        kind: TrajectoryKind::Other,
        segment: None,
        band_fraction: lane_frac,
    }
}
