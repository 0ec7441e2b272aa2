//! Seeded ground-truth scenes and brute-force reference implementations.
//!
//! A scene is built from a crossing layout and a detection budget. The
//! budget is split into corner dwell (pedestrians waiting), crossing walks
//! (pedestrians on the street, close to a crossing line) and uniform clutter.
//! Jaywalkers, bikers and loiterers are extra labeled objects on top of the
//! budget.
//!
//! The oracles recompute estimator and assignment results the slow, obvious
//! way so tests can compare them against the production code.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::{Sample, Trajectory, TrajectoryKind};
use crate::em::{cycle_pairing, Assignment, CrossingModel};
use crate::error::{Error, Result};
use crate::geometry::{centroid, convex_hull, Line, Point2};
use crate::io::detections::{write_detections, Detection};

/// Seconds reserved per crossing pedestrian; keeps objects apart in time.
const SLOT_SECONDS: f64 = 600.0;
/// Seconds between consecutive samples of one object.
const SAMPLE_PERIOD: f64 = 0.5;
/// Class label written for every generated object.
pub const PEDESTRIAN: &str = "pedestrian";

/// Ground-truth crossing geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Axis-aligned square with a corner at the origin.
    Square { side: f64 },
    /// Four corners in convex position, any order.
    Quadrilateral { corners: [Point2; 4] },
    /// A single crossing from `a` to `b`. Both sidewalks run along
    /// `sidewalk_angle` (radians), which need not be perpendicular to the
    /// crossing.
    TwoCorner {
        a: Point2,
        b: Point2,
        sidewalk_angle: f64,
    },
    /// A square whose interior holds a circular island of `radius`; only
    /// the clutter differs from [`Layout::Square`].
    TrafficCircle { side: f64, radius: f64 },
}

impl Default for Layout {
    fn default() -> Self {
        Layout::Square { side: 20.0 }
    }
}

impl Layout {
    pub fn ground_truth(&self) -> Result<CrossingModel> {
        let square = |side: f64| -> Result<Vec<Point2>> {
            if !(side > 0.0 && side.is_finite()) {
                return Err(Error::InvalidParameter(format!("side must be positive, got {side}")));
            }
            Ok(vec![
                Point2::new(0.0, 0.0),
                Point2::new(side, 0.0),
                Point2::new(side, side),
                Point2::new(0.0, side),
            ])
        };
        let corners = match self {
            Layout::Square { side } => square(*side)?,
            Layout::TrafficCircle { side, radius } => {
                if !(*radius > 0.0 && *radius < side / 2.0) {
                    return Err(Error::InvalidParameter(format!(
                        "circle radius must be in (0, side/2), got {radius}"
                    )));
                }
                square(*side)?
            }
            Layout::Quadrilateral { corners } => {
                if corners.iter().any(|c| !c.is_finite()) || convex_hull(corners).len() != 4 {
                    return Err(Error::InvalidParameter(
                        "quadrilateral corners must be finite and in strictly convex position".into(),
                    ));
                }
                corners.to_vec()
            }
            Layout::TwoCorner { a, b, sidewalk_angle } => {
                if !(a.is_finite() && b.is_finite() && sidewalk_angle.is_finite()) || a == b {
                    return Err(Error::InvalidParameter(
                        "two-corner endpoints must be finite and distinct".into(),
                    ));
                }
                vec![*a, *b]
            }
        };
        let segments = cycle_pairing(&corners);
        CrossingModel::from_corners(corners, segments)
    }
}

/// A stationary person standing away from the corners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loiterer {
    pub center: Point2,
    pub count: usize,
    pub sigma: f64,
}

/// Scene parameters. Fractions split `detections`; the remainder after dwell
/// and clutter goes to crossing walks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub layout: Layout,
    /// Detections shared by dwell, walks and clutter.
    pub detections: usize,
    pub dwell_fraction: f64,
    pub clutter_fraction: f64,
    /// Lateral noise of walking samples around their path.
    pub sigma_lateral: f64,
    /// Spread of the waiting cluster at each corner.
    pub sigma_dwell: f64,
    /// Number of crossing pedestrians sharing the dwell and walk budget.
    pub crossings: usize,
    pub jaywalkers: usize,
    pub bikers: usize,
    pub loiterers: Vec<Loiterer>,
    /// How far the clutter box extends beyond the corners.
    pub clutter_margin: f64,
    /// Distance between consecutive jaywalker and biker samples.
    pub sample_spacing: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            layout: Layout::default(),
            detections: 5000,
            dwell_fraction: 0.6,
            clutter_fraction: 0.1,
            sigma_lateral: 0.3,
            sigma_dwell: 0.8,
            crossings: 40,
            jaywalkers: 0,
            bikers: 0,
            loiterers: Vec::new(),
            clutter_margin: 10.0,
            sample_spacing: 1.0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidParameter(msg));
        for (name, v) in [("dwell_fraction", self.dwell_fraction), ("clutter_fraction", self.clutter_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.dwell_fraction + self.clutter_fraction > 1.0 {
            return invalid("dwell_fraction + clutter_fraction must not exceed 1".into());
        }
        for (name, v) in [
            ("sigma_lateral", self.sigma_lateral),
            ("sigma_dwell", self.sigma_dwell),
            ("clutter_margin", self.clutter_margin),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.sample_spacing > 0.0 && self.sample_spacing.is_finite()) {
            return invalid(format!("sample_spacing must be positive, got {}", self.sample_spacing));
        }
        for l in &self.loiterers {
            if !(l.center.is_finite() && l.sigma >= 0.0 && l.sigma.is_finite()) {
                return invalid("loiterer needs a finite center and non-negative sigma".into());
            }
        }
        let model = self.layout.ground_truth()?;
        if (self.jaywalkers > 0 || self.bikers > 0) && model.border_len() < 4 {
            return invalid("jaywalkers and bikers need a four-corner layout".into());
        }
        if self.crossings == 0 && self.street_budget() > 0 {
            return invalid("dwell and walk detections need at least one crossing".into());
        }
        Ok(())
    }

    fn clutter_count(&self) -> usize {
        (self.detections as f64 * self.clutter_fraction).round() as usize
    }

    fn dwell_count(&self) -> usize {
        ((self.detections as f64 * self.dwell_fraction).round() as usize)
            .min(self.detections - self.clutter_count())
    }

    fn street_budget(&self) -> usize {
        self.detections - self.clutter_count()
    }
}

/// A generated object with its intended class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrajectory {
    pub trajectory: Trajectory,
    pub label: TrajectoryKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ground_truth: CrossingModel,
    pub detections: Vec<Detection>,
    pub trajectories: Vec<LabeledTrajectory>,
    pub params: SceneParams,
    pub seed: u64,
}

impl Scenario {
    pub fn points(&self) -> Vec<Point2> {
        self.detections.iter().map(|d| d.position).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_detections(path, &self.detections)
    }

    /// Ground truth, parameters and seed as one JSON document.
    pub fn ground_truth_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Truth<'a> {
            seed: u64,
            corners: &'a [Point2],
            segments: &'a [(usize, usize)],
            lines: &'a [Line],
            params: &'a SceneParams,
        }
        let truth = Truth {
            seed: self.seed,
            corners: &self.ground_truth.corners,
            segments: &self.ground_truth.segments,
            lines: &self.ground_truth.lines,
            params: &self.params,
        };
        Ok(serde_json::to_string_pretty(&truth)?)
    }
}

/// `total` split into `parts` near-equal shares; share `i`.
fn share(total: usize, parts: usize, i: usize) -> usize {
    total / parts + usize::from(i < total % parts)
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated")
}

struct Builder {
    rng: ChaCha8Rng,
    detections: Vec<Detection>,
    trajectories: Vec<LabeledTrajectory>,
}

impl Builder {
    fn emit(&mut self, id: String, points: &[Point2], t0: f64, label: Option<TrajectoryKind>) -> Result<()> {
        let samples: Vec<Sample> = points
            .iter()
            .enumerate()
            .map(|(i, &pos)| Sample {
                t: t0 + i as f64 * SAMPLE_PERIOD,
                pos,
            })
            .collect();
        for s in &samples {
            let mut d = Detection::new(id.clone(), s.t, s.pos);
            d.class_label = Some(PEDESTRIAN.to_string());
            self.detections.push(d);
        }
        if let (Some(label), true) = (label, samples.len() >= 2) {
            self.trajectories.push(LabeledTrajectory {
                trajectory: Trajectory::new(id, samples)?,
                label,
            });
        }
        Ok(())
    }

    /// Points every `spacing` from `from` to `to`, jittered sideways.
    fn walk(&mut self, from: Point2, to: Point2, spacing: f64, sigma: f64) -> Vec<Point2> {
        let len = from.distance(to);
        let dir = (to - from) * (1.0 / len);
        let side = Point2::new(-dir.y, dir.x);
        let steps = (len / spacing).ceil().max(1.0) as usize;
        let noise = normal(sigma);
        (0..=steps)
            .map(|i| from.lerp(to, i as f64 / steps as f64) + side * noise.sample(&mut self.rng))
            .collect()
    }
}

/// Generates a scene; the same parameters and seed give the same scene.
pub fn generate_scene(params: &SceneParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let truth = params.layout.ground_truth()?;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        detections: Vec::new(),
        trajectories: Vec::new(),
    };

    // Crossing pedestrians: wait at the start corner, then walk across.
    // Segments and directions are visited round-robin so every corner gets
    // the same share of waiting.
    let dwell_total = params.dwell_count();
    let walk_total = params.street_budget() - dwell_total;
    let segments = truth.border_len();
    let dwell_noise = normal(params.sigma_dwell);
    let lateral = normal(params.sigma_lateral);
    let crossings = if dwell_total + walk_total == 0 { 0 } else { params.crossings };
    for t in 0..crossings {
        let (ia, ib) = truth.segments[t % segments];
        let forward = (t / segments) % 2 == 0;
        let (start, end) = if forward {
            (truth.corners[ia], truth.corners[ib])
        } else {
            (truth.corners[ib], truth.corners[ia])
        };
        let dir = end - start;
        let side = Point2::new(-dir.y, dir.x) * (1.0 / dir.norm());
        let n_dwell = share(dwell_total, crossings, t);
        let n_walk = share(walk_total, crossings, t);
        let mut pts = Vec::with_capacity(n_dwell + n_walk);
        for _ in 0..n_dwell {
            let dx = dwell_noise.sample(&mut b.rng);
            let dy = dwell_noise.sample(&mut b.rng);
            pts.push(start + Point2::new(dx, dy));
        }
        for i in 0..n_walk {
            let u = (i as f64 + b.rng.random::<f64>()) / n_walk as f64;
            pts.push(start.lerp(end, u) + side * lateral.sample(&mut b.rng));
        }
        b.emit(format!("xing-{t:05}"), &pts, t as f64 * SLOT_SECONDS, Some(TrajectoryKind::Crossing))?;
    }
    let mut clock = crossings as f64 * SLOT_SECONDS;

    let (o, jay_bike) = (&truth.corners, segments >= 4);
    if jay_bike {
        // Jaywalkers: from beyond one side of the intersection straight to
        // beyond the opposite side, entering away from the corners.
        for j in 0..params.jaywalkers {
            let s = j % 4;
            let (p0, p1) = (o[truth.segments[s].0], o[truth.segments[s].1]);
            let (q0, q1) = (o[truth.segments[(s + 2) % 4].1], o[truth.segments[(s + 2) % 4].0]);
            let entry = p0.lerp(p1, b.rng.random_range(0.3..0.7));
            let exit = q0.lerp(q1, b.rng.random_range(0.3..0.7));
            let dir = (exit - entry) * (1.0 / entry.distance(exit));
            let from = entry - dir * b.rng.random_range(8.0..12.0);
            let to = exit + dir * b.rng.random_range(8.0..12.0);
            let pts = b.walk(from, to, params.sample_spacing, params.sigma_lateral);
            b.emit(format!("jay-{j:05}"), &pts, clock, Some(TrajectoryKind::Jaywalking))?;
            clock += SLOT_SECONDS;
        }
        // Bikers: along a crossing line, just inside the intersection,
        // entering and leaving well beyond its corners.
        let center = centroid(o).expect("corners");
        for j in 0..params.bikers {
            let s = (j + 1) % 4;
            let (p, q) = (o[truth.segments[s].0], o[truth.segments[s].1]);
            let line = truth.lines[s];
            let inward = line.normal() * line.signed_distance(center).signum();
            let offset = inward * b.rng.random_range(0.8..1.4);
            let dir = (q - p) * (1.0 / p.distance(q));
            let (mut from, mut to) = (
                p - dir * b.rng.random_range(10.0..20.0) + offset,
                q + dir * b.rng.random_range(10.0..20.0) + offset,
            );
            if j % 2 == 1 {
                std::mem::swap(&mut from, &mut to);
            }
            let pts = b.walk(from, to, params.sample_spacing, params.sigma_lateral);
            b.emit(format!("bike-{j:05}"), &pts, clock, Some(TrajectoryKind::Biker))?;
            clock += SLOT_SECONDS;
        }
    }

    for (j, l) in params.loiterers.iter().enumerate() {
        let noise = normal(l.sigma);
        let pts: Vec<Point2> = (0..l.count)
            .map(|_| l.center + Point2::new(noise.sample(&mut b.rng), noise.sample(&mut b.rng)))
            .collect();
        b.emit(format!("loiter-{j:05}"), &pts, clock, None)?;
        clock += l.count as f64 * SAMPLE_PERIOD;
    }

    // Clutter: isolated single detections over the padded bounding box,
    // half of them on the circle or sidewalks for those layouts.
    let n_clutter = params.clutter_count();
    let (lo, hi) = o.iter().fold(
        (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), c| (Point2::new(lo.x.min(c.x), lo.y.min(c.y)), Point2::new(hi.x.max(c.x), hi.y.max(c.y))),
    );
    let m = params.clutter_margin;
    let horizon = clock.max(SLOT_SECONDS);
    for j in 0..n_clutter {
        let structured = j % 2 == 1;
        let p = match (&params.layout, structured) {
            (Layout::TrafficCircle { side, radius }, true) => {
                let theta = b.rng.random_range(0.0..std::f64::consts::TAU);
                let r = radius + lateral.sample(&mut b.rng);
                Point2::new(side / 2.0 + r * theta.cos(), side / 2.0 + r * theta.sin())
            }
            (Layout::TwoCorner { a, b: end, sidewalk_angle }, true) => {
                let anchor = if (j / 2) % 2 == 0 { *a } else { *end };
                let along = Point2::new(sidewalk_angle.cos(), sidewalk_angle.sin());
                let across = Point2::new(-along.y, along.x);
                anchor + along * b.rng.random_range(-15.0..15.0) + across * lateral.sample(&mut b.rng)
            }
            _ => {
                let x = b.rng.random_range(lo.x - m..=hi.x + m);
                let y = b.rng.random_range(lo.y - m..=hi.y + m);
                Point2::new(x, y)
            }
        };
        let t = b.rng.random_range(0.0..horizon);
        b.emit(format!("clutter-{j:05}"), &[p], t, None)?;
    }

    Ok(Scenario {
        ground_truth: truth,
        detections: b.detections,
        trajectories: b.trajectories,
        params: params.clone(),
        seed,
    })
}

/// Theil-Sen by full enumeration and full sorting.
pub fn oracle_theil_sen(points: &[Point2]) -> Result<Line> {
    let mut distinct = points.to_vec();
    distinct.sort_by(Point2::lex_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: distinct.len(),
        });
    }
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    };
    let mut slopes = Vec::new();
    for p in points {
        for q in points {
            if p.x < q.x {
                slopes.push((q.y - p.y) / (q.x - p.x));
            }
        }
    }
    if slopes.is_empty() {
        let x = median(points.iter().map(|p| p.x).collect());
        return Line::new(1.0, 0.0, -x);
    }
    let m = median(slopes);
    let c = median(points.iter().map(|p| p.y - m * p.x).collect());
    Line::new(m, -1.0, c)
}

/// Nearest-line assignment recomputed point by point; ties go to the lower
/// line index, points beyond `bound` are outliers.
pub fn oracle_assignment(points: &[Point2], lines: &[Line], bound: f64) -> Assignment {
    let mut labels = Vec::with_capacity(points.len());
    let mut distances = Vec::with_capacity(points.len());
    for p in points {
        let mut best = f64::INFINITY;
        let mut label = None;
        for (j, l) in lines.iter().enumerate() {
            // Coefficients are stored with a unit normal, so the implicit
            // equation is already the perpendicular distance.
            let [a, b, c] = l.coefficients();
            let d = (a * p.x + b * p.y + c).abs();
            if d < best {
                best = d;
                label = Some(j);
            }
        }
        if best > bound {
            label = None;
        }
        labels.push(label);
        distances.push(best);
    }
    Assignment { labels, distances }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let p = SceneParams::default();
        assert_eq!(generate_scene(&p, 7).unwrap(), generate_scene(&p, 7).unwrap());
        for (a, b) in [(1, 2), (3, 4), (100, 200)] {
            assert_ne!(generate_scene(&p, a).unwrap().detections, generate_scene(&p, b).unwrap().detections);
        }
    }

    #[test]
    fn default_scene_budget() {
        let s = generate_scene(&SceneParams::default(), 1).unwrap();
        assert_eq!(s.detections.len(), 5000);
        assert_eq!(s.trajectories.len(), 40);
    }

    #[test]
    fn zero_counts_give_empty_scene() {
        let p = SceneParams {
            detections: 0,
            ..Default::default()
        };
        let s = generate_scene(&p, 1).unwrap();
        assert!(s.detections.is_empty() && s.trajectories.is_empty());
    }

    #[test]
    fn noiseless_walks_lie_on_lines() {
        let p = SceneParams {
            sigma_lateral: 0.0,
            sigma_dwell: 0.0,
            clutter_fraction: 0.0,
            ..Default::default()
        };
        let s = generate_scene(&p, 3).unwrap();
        for d in &s.detections {
            let best = s.ground_truth.lines.iter().map(|l| l.distance(d.position)).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "{d:?}");
        }
    }

    #[test]
    fn labeled_samples_are_detections() {
        let p = SceneParams {
            jaywalkers: 5,
            bikers: 5,
            ..Default::default()
        };
        let s = generate_scene(&p, 9).unwrap();
        for lt in &s.trajectories {
            for smp in lt.trajectory.samples() {
                assert!(s.detections.iter().any(|d| d.object_id == lt.trajectory.object_id()
                    && d.timestamp == smp.t
                    && d.position == smp.pos));
            }
        }
    }

    #[test]
    fn corners_dominate_crossing_midpoints() {
        let s = generate_scene(&SceneParams::default(), 11).unwrap();
        let near = |c: Point2| s.detections.iter().filter(|d| d.position.distance(c) <= 1.0).count();
        let at_corners: usize = s.ground_truth.corners.iter().map(|&c| near(c)).sum();
        let at_mids: usize = (0..4).map(|i| near(s.ground_truth.segment(i).unwrap().midpoint())).sum();
        assert!(at_corners > at_mids, "{at_corners} vs {at_mids}");
    }

    #[test]
    fn invalid_parameters() {
        let bad = [
            SceneParams { dwell_fraction: 1.5, ..Default::default() },
            SceneParams { dwell_fraction: 0.7, clutter_fraction: 0.4, ..Default::default() },
            SceneParams { sigma_lateral: -1.0, ..Default::default() },
            SceneParams { layout: Layout::Square { side: 0.0 }, ..Default::default() },
            SceneParams { crossings: 0, ..Default::default() },
            SceneParams {
                layout: Layout::Quadrilateral {
                    corners: [Point2::new(0.0, 0.0), Point2::new(2.0, 0.0), Point2::new(1.0, 0.1), Point2::new(1.0, 2.0)],
                },
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(matches!(generate_scene(&p, 0), Err(Error::InvalidParameter(_))), "{p:?}");
        }
    }

    #[test]
    fn oracle_examples() {
        let pts: Vec<Point2> = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 40.0)]
            .iter()
            .map(|&(x, y)| Point2::new(x, y))
            .collect();
        let l = oracle_theil_sen(&pts).unwrap();
        let expected = Line::new(1.0, -1.0, 0.0).unwrap();
        for (a, b) in l.coefficients().iter().zip(expected.coefficients()) {
            assert!((a - b).abs() < 1e-12);
        }
        let two = [Point2::new(0.0, 1.0), Point2::new(2.0, 5.0)];
        let l = oracle_theil_sen(&two).unwrap();
        assert!(two.iter().all(|&p| l.distance(p) < 1e-12));
    }

    #[test]
    fn oracle_assignment_basics() {
        assert!(oracle_assignment(&[], &[Line::new(0.0, 1.0, 0.0).unwrap()], 3.5).labels.is_empty());
        let pts = [Point2::new(0.0, 1.0), Point2::new(5.0, -2.0), Point2::new(0.0, 10.0)];
        let a = oracle_assignment(&pts, &[Line::new(0.0, 1.0, 0.0).unwrap()], 3.5);
        assert_eq!(a.labels, [Some(0), Some(0), None]);
    }
}
