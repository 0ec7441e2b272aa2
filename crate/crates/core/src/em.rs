//! Expectation-maximization over crossing lines.
//!
//! The model is a set of corners joined by crossing segments. Each iteration
//! assigns every detection to its nearest crossing line (E-step), refits each
//! line from its detections, and recomputes the corners (M-step).
//!
//! Two regimes are used. The robust phase fits Theil-Sen lines to the
//! occupancy-quantized detections so that long dwell at one spot cannot drag
//! a line. Once the total corner movement of an iteration drops below
//! `phase_switch_tolerance`, the refined phase fits orthogonal least squares to
//! the raw detections and, after every M-step, discards detections farther
//! than the annealed margin from their line. The run stops when the corner
//! movement drops below `stop_tolerance` in the refined phase.
//!
//! With `k >= 3` the corners are intersections of adjacent border lines. With
//! `k == 2` there is a single crossing and no intersections; its endpoints are
//! the dwell-cluster modes at each end, projected onto the fitted line.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{close_center_pairs, kmeans, quantize};
use crate::error::{Error, Result};
use crate::estimators::{fit_least_squares, fit_theil_sen_aligned, mean_residual, PairSampling};
use crate::geometry::{
    line_from_points, line_intersection, project_onto_line, subtended_angle, Line, Point2,
    Segment,
};

/// Hyperparameters of an EM run. Distances are in input units.
///
/// Missing fields take their defaults when deserializing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Number of corners: 4 for an intersection, 2 for a single crossing.
    pub k: usize,
    /// E-step rejection distance; detections farther than this from every line
    /// are ignored for the iteration.
    #[serde(alias = "M")]
    pub outlier_distance: f64,
    /// Occupancy cell size for the robust phase.
    pub resolution: f64,
    /// Total corner movement below which the robust phase ends.
    #[serde(alias = "t1")]
    pub phase_switch_tolerance: f64,
    /// Total corner movement below which the refined phase stops.
    #[serde(alias = "t2")]
    pub stop_tolerance: f64,
    /// Margin at the first refined iteration.
    #[serde(alias = "d_u")]
    pub margin_upper: f64,
    /// Floor of the annealed margin.
    #[serde(alias = "d_l")]
    pub margin_lower: f64,
    /// Iterations per unit of margin narrowing.
    #[serde(alias = "r_m")]
    pub margin_rate: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Also fit the diagonals between non-adjacent corners.
    pub allow_diagonals: bool,
    /// Initial corners closer than this produce a warning.
    pub min_center_spacing: f64,
    /// Theil-Sen enumerates all pairs up to this many points and samples pairs above it.
    pub theil_sen_exact_limit: usize,
    /// Seeded k-means runs at initialization; the lowest-inertia run wins.
    pub kmeans_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            k: 4,
            outlier_distance: 3.5,
            resolution: 0.1,
            phase_switch_tolerance: 0.3,
            stop_tolerance: 0.05,
            margin_upper: 3.5,
            margin_lower: 1.0,
            margin_rate: 5.0,
            max_iterations: 100,
            seed: 0,
            allow_diagonals: false,
            min_center_spacing: 3.0,
            theil_sen_exact_limit: 500,
            kmeans_restarts: 10,
        }
    }
}

impl EmConfig {
    /// Single-crossing configuration.
    pub fn two_corner(self) -> Self {
        Self { k: 2, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        let finite = [
            self.outlier_distance,
            self.resolution,
            self.phase_switch_tolerance,
            self.stop_tolerance,
            self.margin_upper,
            self.margin_lower,
            self.margin_rate,
            self.min_center_spacing,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("distances and tolerances must be finite".into());
        }
        if self.k < 2 {
            return fail(format!("k must be at least 2, got {}", self.k));
        }
        if self.outlier_distance <= 0.0 {
            return fail(format!("outlier_distance must be positive, got {}", self.outlier_distance));
        }
        if self.resolution <= 0.0 {
            return fail(format!("resolution must be positive, got {}", self.resolution));
        }
        if !(self.margin_upper >= self.margin_lower && self.margin_lower > 0.0) {
            return fail(format!(
                "need margin_upper >= margin_lower > 0, got {} and {}",
                self.margin_upper, self.margin_lower
            ));
        }
        if self.margin_rate <= 0.0 {
            return fail(format!("margin_rate must be positive, got {}", self.margin_rate));
        }
        if !(self.phase_switch_tolerance > self.stop_tolerance && self.stop_tolerance > 0.0) {
            return fail(format!(
                "need phase_switch_tolerance > stop_tolerance > 0, got {} and {}",
                self.phase_switch_tolerance, self.stop_tolerance
            ));
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be at least 1".into());
        }
        if self.min_center_spacing < 0.0 {
            return fail("min_center_spacing must be non-negative".into());
        }
        if self.kmeans_restarts == 0 {
            return fail("kmeans_restarts must be at least 1".into());
        }
        if self.theil_sen_exact_limit < 2 {
            return fail("theil_sen_exact_limit must be at least 2".into());
        }
        Ok(())
    }
}

/// Estimation regime of an iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Phase {
    /// Theil-Sen on occupancy cells, no margin filtering.
    Robust,
    /// Least squares on raw detections with annealed margin filtering.
    Refined,
}

impl From<Phase> for u8 {
    fn from(p: Phase) -> u8 {
        match p {
            Phase::Robust => 1,
            Phase::Refined => 2,
        }
    }
}

impl TryFrom<u8> for Phase {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Phase::Robust),
            2 => Ok(Phase::Refined),
            other => Err(format!("unknown phase {other}")),
        }
    }
}

/// Corners, the corner pairs that form crossings, and one line per crossing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingModel {
    pub corners: Vec<Point2>,
    /// Corner index pairs. For `k >= 3` the first `k` entries walk the border
    /// cycle; diagonals, if any, follow.
    pub segments: Vec<(usize, usize)>,
    pub lines: Vec<Line>,
}

impl CrossingModel {
    /// Builds the model with each line through its segment's corners.
    pub fn from_corners(corners: Vec<Point2>, segments: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(a, b) in &segments {
            if a >= corners.len() || b >= corners.len() || a == b {
                return Err(Error::InvalidParameter(format!("invalid segment ({a}, {b})")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidParameter(format!("duplicate segment ({a}, {b})")));
            }
        }
        let lines = segments
            .iter()
            .map(|&(a, b)| line_from_points(corners[a], corners[b]))
            .collect::<Result<_>>()?;
        Ok(Self {
            corners,
            segments,
            lines,
        })
    }

    pub fn k(&self) -> usize {
        self.corners.len()
    }

    /// Number of leading segments that form the border.
    pub fn border_len(&self) -> usize {
        if self.corners.len() == 2 {
            1
        } else {
            self.corners.len().min(self.segments.len())
        }
    }

    pub fn segment(&self, i: usize) -> Result<Segment> {
        let (a, b) = self.segments[i];
        Segment::new(self.corners[a], self.corners[b])
    }

    /// Sum of per-corner displacements relative to `other`.
    pub fn corner_movement(&self, other: &CrossingModel) -> f64 {
        total_movement(&self.corners, &other.corners)
    }
}

fn total_movement(a: &[Point2], b: &[Point2]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.distance(*q)).sum()
}

/// Border cycle: corners ordered by angle around their centroid.
///
/// For corners in convex position this is the convex-hull order; for other
/// layouts it is still a simple polygon, so the rule is total.
pub fn cycle_pairing(corners: &[Point2]) -> Vec<(usize, usize)> {
    match corners.len() {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        n => {
            let c = crate::geometry::centroid(corners).expect("non-empty");
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| {
                let (di, dj) = (corners[i] - c, corners[j] - c);
                di.y.atan2(di.x)
                    .total_cmp(&dj.y.atan2(dj.x))
                    .then(di.norm().total_cmp(&dj.norm()))
                    .then(i.cmp(&j))
            });
            (0..n).map(|t| (order[t], order[(t + 1) % n])).collect()
        }
    }
}

/// Pairing by greatest subtended angle: at each corner, the two other corners
/// spanning the widest angle are joined to it. Pairs are returned as `(min, max)`.
pub fn greatest_angle_pairing(corners: &[Point2]) -> Result<BTreeSet<(usize, usize)>> {
    let n = corners.len();
    let mut out = BTreeSet::new();
    for v in 0..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..n {
            for q in p + 1..n {
                if p == v || q == v {
                    continue;
                }
                let angle = subtended_angle(corners[v], corners[p], corners[q])?;
                if best.is_none_or(|(b, _, _)| angle > b) {
                    best = Some((angle, p, q));
                }
            }
        }
        if let Some((_, p, q)) = best {
            out.insert((v.min(p), v.max(p)));
            out.insert((v.min(q), v.max(q)));
        }
    }
    Ok(out)
}

fn diagonals(border: &[(usize, usize)], k: usize) -> Vec<(usize, usize)> {
    let edges: BTreeSet<(usize, usize)> =
        border.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if !edges.contains(&(a, b)) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Seeded k-means corners on the occupancy-quantized detections, joined along
/// the border cycle (plus diagonals when allowed). Of `kmeans_restarts` runs
/// seeded `seed, seed + 1, ...`, the one with the lowest inertia is kept.
pub fn initialize_model(points: &[Point2], cfg: &EmConfig) -> Result<CrossingModel> {
    let cells = quantize(points, cfg.resolution)?;
    let mut best = kmeans(&cells, cfg.k, cfg.seed)?;
    for r in 1..cfg.kmeans_restarts as u64 {
        let run = kmeans(&cells, cfg.k, cfg.seed.wrapping_add(r))?;
        if run.inertia < best.inertia {
            best = run;
        }
    }
    let corners = best.centers;
    let mut segments = cycle_pairing(&corners);
    if cfg.allow_diagonals && cfg.k > 3 {
        let extra = diagonals(&segments, cfg.k);
        segments.extend(extra);
    }
    CrossingModel::from_corners(corners, segments)
}

/// Latent crossing per detection; `None` marks an outlier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<Option<usize>>,
    /// Distance to the nearest line, recorded for outliers too.
    pub distances: Vec<f64>,
}

impl Assignment {
    pub fn inliers(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Point indices per segment.
    pub fn groups(&self, segments: usize) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); segments];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(s) = l {
                groups[*s].push(i);
            }
        }
        groups
    }
}

/// Nearest line per point (ties go to the lower segment index); points farther
/// than `bound` from every line are outliers.
pub fn assign_latent(points: &[Point2], model: &CrossingModel, bound: f64) -> Assignment {
    let mut labels = Vec::with_capacity(points.len());
    let mut distances = Vec::with_capacity(points.len());
    for &p in points {
        let mut best = (None, f64::INFINITY);
        for (j, line) in model.lines.iter().enumerate() {
            let d = line.distance(p);
            if d < best.1 {
                best = (Some(j), d);
            }
        }
        labels.push(if best.1 <= bound { best.0 } else { None });
        distances.push(best.1);
    }
    Assignment { labels, distances }
}

/// Annealed margin `max(d_u - n / r_m, d_l)`.
pub fn margin_for_iteration(n: usize, cfg: &EmConfig) -> f64 {
    (cfg.margin_upper - n as f64 / cfg.margin_rate).max(cfg.margin_lower)
}

/// Result of one M-step.
#[derive(Clone, Debug, PartialEq)]
pub struct MStep {
    pub model: CrossingModel,
    /// Refined phase only: indices (into the M-step input) that lie within the
    /// margin of their new line and stay in the next iteration's input.
    pub retained: Option<Vec<usize>>,
    /// Mean residual of each fitted line over the points it was fitted to.
    pub residuals: Vec<Option<f64>>,
    /// Segments whose line was carried over for lack of distinct points.
    pub stale_segments: Vec<usize>,
}

fn distinct_count(points: &[Point2]) -> usize {
    let mut v = points.to_vec();
    v.sort_by(Point2::lex_cmp);
    v.dedup();
    v.len()
}

/// Mode of the detections near one end of a single crossing, restricted to
/// that end's half of the line. Mean shift runs inside `capture` first and is
/// then re-centred inside the smaller `settle` window, which keeps walking
/// detections on the crossing side from pulling the mode inward.
fn refine_endpoint(
    points: &[Point2],
    end: Point2,
    other: Point2,
    line: &Line,
    capture: f64,
    settle: f64,
) -> Point2 {
    let start = project_onto_line(end, line);
    let mid = start.lerp(project_onto_line(other, line), 0.5);
    let axis = line.direction();
    let side = (start - mid).dot(axis).signum();
    let half: Vec<Point2> = points
        .iter()
        .copied()
        .filter(|&p| (p - mid).dot(axis) * side > 0.0)
        .collect();
    let mut c = start;
    for radius in [capture, settle.min(capture)] {
        let r2 = radius * radius;
        for _ in 0..50 {
            let (sum, n) = half
                .iter()
                .filter(|p| p.distance_sq(c) <= r2)
                .fold((Point2::default(), 0usize), |(s, n), &p| (s + p, n + 1));
            if n == 0 {
                break;
            }
            let next = sum * (1.0 / n as f64);
            let moved = next.distance(c);
            c = next;
            if moved < 1e-6 {
                break;
            }
        }
    }
    project_onto_line(c, line)
}

/// Corners as intersections of the two border lines incident to each corner.
fn intersect_border(model: &CrossingModel, lines: &[Line]) -> Result<Vec<Point2>> {
    let border = model.border_len();
    (0..model.k())
        .map(|corner| {
            let incident: Vec<usize> = (0..border)
                .filter(|&s| model.segments[s].0 == corner || model.segments[s].1 == corner)
                .collect();
            match incident.as_slice() {
                &[s, t] => line_intersection(&lines[s], &lines[t]),
                _ => Err(Error::Degenerate("corner is not shared by exactly two border lines")),
            }
        })
        .collect()
}

/// Refits every crossing line from its assigned points and recomputes corners.
///
/// `groups[s]` holds indices into `points` assigned to segment `s`. In the
/// robust phase the groups are fitted with frame-aligned Theil-Sen on their
/// occupancy cells; in the refined phase with least squares, after which the
/// points within `margin_for_iteration(n)` of their new line are returned as
/// the next iteration's input.
pub fn m_step(
    points: &[Point2],
    groups: &[Vec<usize>],
    model: &CrossingModel,
    phase: Phase,
    n: usize,
    cfg: &EmConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MStep> {
    let mut lines = model.lines.clone();
    let mut residuals = Vec::with_capacity(lines.len());
    let mut stale = Vec::new();
    let mut fitted_sets: Vec<Vec<Point2>> = Vec::with_capacity(lines.len());

    for (s, group) in groups.iter().enumerate() {
        let raw: Vec<Point2> = group.iter().map(|&i| points[i]).collect();
        let set = match phase {
            Phase::Robust => quantize(&raw, cfg.resolution)?,
            Phase::Refined => raw,
        };
        if distinct_count(&set) < 2 {
            stale.push(s);
        } else {
            lines[s] = match phase {
                Phase::Robust => fit_theil_sen_aligned(
                    &set,
                    &model.lines[s],
                    Some(PairSampling {
                        exact_limit: cfg.theil_sen_exact_limit,
                        rng: &mut *rng,
                    }),
                )?,
                Phase::Refined => fit_least_squares(&set)?,
            };
        }
        residuals.push(mean_residual(&set, &lines[s]).ok());
        fitted_sets.push(set);
    }

    let margin = margin_for_iteration(n, cfg);
    let corners = if model.k() == 2 {
        let radius = match phase {
            Phase::Robust => cfg.margin_upper,
            Phase::Refined => margin,
        };
        let (a, b) = model.segments[0];
        let (ca, cb) = (model.corners[a], model.corners[b]);
        let set = &fitted_sets[0];
        let mut corners = model.corners.clone();
        corners[a] = refine_endpoint(set, ca, cb, &lines[0], radius, cfg.margin_lower);
        corners[b] = refine_endpoint(set, cb, ca, &lines[0], radius, cfg.margin_lower);
        corners
    } else {
        intersect_border(model, &lines)?
    };

    let retained = (phase == Phase::Refined).then(|| {
        let mut keep: Vec<usize> = groups
            .iter()
            .enumerate()
            .flat_map(|(s, g)| g.iter().map(move |&i| (s, i)))
            .filter(|&(s, i)| lines[s].distance(points[i]) <= margin)
            .map(|(_, i)| i)
            .collect();
        keep.sort_unstable();
        keep
    });

    Ok(MStep {
        model: CrossingModel {
            corners,
            segments: model.segments.clone(),
            lines,
        },
        retained,
        residuals,
        stale_segments: stale,
    })
}

/// Per-iteration record of an EM run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phase: Phase,
    /// Boundary margin applied after this iteration's M-step (refined phase).
    pub margin: Option<f64>,
    /// Corners after this iteration's M-step.
    pub corners: Vec<Point2>,
    pub residuals: Vec<Option<f64>>,
    /// Detections that survived the E-step rejection.
    pub inliers: usize,
    /// Sum of per-corner displacements during this iteration.
    pub movement: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stale_segments: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub initial_corners: Vec<Point2>,
    /// Mean residual of each initial line over its first E-step assignment.
    pub initial_residuals: Vec<Option<f64>>,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EmTrace {
    pub fn final_residuals(&self) -> &[Option<f64>] {
        self.iterations
            .last()
            .map(|r| r.residuals.as_slice())
            .unwrap_or(&self.initial_residuals)
    }
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Average over segments of the per-segment mean residual.
pub fn average_residual(values: &[Option<f64>]) -> Option<f64> {
    mean_of(values)
}

/// Runs initialization and the EM loop. Non-convergence is reported through
/// [`EmTrace::converged`]; the latest model is returned either way.
pub fn run_em(points: &[Point2], cfg: &EmConfig) -> Result<(CrossingModel, EmTrace)> {
    cfg.validate()?;
    let initial = initialize_model(points, cfg)?;

    let mut warnings = Vec::new();
    for (i, j, d) in close_center_pairs(&initial.corners, cfg.min_center_spacing) {
        let msg = format!(
            "initial corners {i} and {j} are {d:.3} apart (minimum spacing {})",
            cfg.min_center_spacing
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let cells = quantize(points, cfg.resolution)?;
    let mut working: Vec<Point2> = points.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut model = initial.clone();
    let mut phase = Phase::Robust;
    let mut anneal = 0usize;
    let mut converged = false;
    let mut initial_residuals = Vec::new();
    let mut records: Vec<IterationRecord> = Vec::new();

    for iteration in 0..cfg.max_iterations {
        let input: &[Point2] = match phase {
            Phase::Robust => &cells,
            Phase::Refined => &working,
        };
        let assignment = assign_latent(input, &model, cfg.outlier_distance);
        let groups = assignment.groups(model.lines.len());
        if iteration == 0 {
            initial_residuals = groups
                .iter()
                .zip(&model.lines)
                .map(|(g, l)| {
                    let pts: Vec<Point2> = g.iter().map(|&i| input[i]).collect();
                    mean_residual(&pts, l).ok()
                })
                .collect();
        }

        let step = m_step(input, &groups, &model, phase, anneal, cfg, &mut rng)
            .map_err(|e| e.at_iteration(iteration))?;
        let movement = step.model.corner_movement(&model);
        let margin = (phase == Phase::Refined).then(|| margin_for_iteration(anneal, cfg));
        records.push(IterationRecord {
            iteration,
            phase,
            margin,
            corners: step.model.corners.clone(),
            residuals: step.residuals,
            inliers: assignment.inliers(),
            movement,
            stale_segments: step.stale_segments,
        });
        if let Some(keep) = step.retained {
            working = keep.iter().map(|&i| working[i]).collect();
        }
        model = step.model;

        match phase {
            Phase::Robust if movement < cfg.phase_switch_tolerance => {
                phase = Phase::Refined;
                anneal = 0;
            }
            Phase::Refined if movement < cfg.stop_tolerance => {
                converged = true;
                break;
            }
            Phase::Refined => anneal += 1,
            Phase::Robust => {}
        }
    }

    let trace = EmTrace {
        initial_corners: initial.corners,
        initial_residuals,
        iterations: records,
        converged,
        warnings,
    };
    Ok((model, trace))
}

/// Distances of each batch estimate's corners from the reference corners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTable {
    pub rows: Vec<ConsistencyRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    /// Distance per reference corner.
    pub distances: Vec<f64>,
    pub mean: f64,
}

impl std::fmt::Display for ConsistencyTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let k = self.rows.first().map_or(0, |r| r.distances.len());
        write!(f, "{:<8}", "Corner:")?;
        for c in 1..=k {
            write!(f, " {c:>7}")?;
        }
        writeln!(f, " {:>7}", "Average")?;
        for (i, row) in self.rows.iter().enumerate() {
            write!(f, "{:<8}", format!("Batch {}", i + 1))?;
            for d in &row.distances {
                write!(f, " {d:>7.3}")?;
            }
            writeln!(f, " {:>7.3}", row.mean)?;
        }
        Ok(())
    }
}

/// Matches every model's corners to the reference by nearest neighbor and
/// reports the per-corner distances. The matching must be one-to-one.
pub fn batch_consistency(
    models: &[CrossingModel],
    reference: &CrossingModel,
) -> Result<ConsistencyTable> {
    let k = reference.k();
    if k == 0 {
        return Err(Error::EmptyInput("reference model has no corners"));
    }
    let mut rows = Vec::with_capacity(models.len());
    for (b, model) in models.iter().enumerate() {
        if model.k() != k {
            return Err(Error::AmbiguousMatching(format!(
                "batch {} has {} corners, reference has {k}",
                b + 1,
                model.k()
            )));
        }
        let mut used = vec![false; k];
        let mut distances = Vec::with_capacity(k);
        for &r in &reference.corners {
            let (j, d) = model
                .corners
                .iter()
                .enumerate()
                .map(|(j, c)| (j, c.distance(r)))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("k > 0");
            if used[j] {
                return Err(Error::AmbiguousMatching(format!(
                    "batch {} corner {} is nearest to more than one reference corner",
                    b + 1,
                    j + 1
                )));
            }
            used[j] = true;
            distances.push(d);
        }
        let mean = distances.iter().sum::<f64>() / k as f64;
        rows.push(ConsistencyRow { distances, mean });
    }
    Ok(ConsistencyTable { rows })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Detections exactly on the sides of a 20 x 20 square, plus filled unit
    /// disks of grid points at the corners (about 300 occupancy cells each).
    pub(crate) fn dense_square() -> Vec<Point2> {
        let mut pts = Vec::new();
        for (cx, cy) in [(0.0, 0.0), (20.0, 0.0), (20.0, 20.0), (0.0, 20.0)] {
            for i in -10..=10 {
                for j in -10..=10 {
                    let (dx, dy) = (i as f64 * 0.1, j as f64 * 0.1);
                    if dx * dx + dy * dy <= 1.0 {
                        pts.push(p(cx + dx, cy + dy));
                    }
                }
            }
        }
        for i in 1..200 {
            let t = i as f64 * 0.1;
            pts.extend([p(t, 0.0), p(20.0, t), p(t, 20.0), p(0.0, t)]);
        }
        pts
    }

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn square(side: f64) -> CrossingModel {
        let corners = vec![p(0.0, 0.0), p(side, 0.0), p(side, side), p(0.0, side)];
        CrossingModel::from_corners(corners, vec![(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap()
    }

    fn norm_set(pairs: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
        pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()
    }

    #[test]
    fn default_config_is_valid() {
        EmConfig::default().validate().unwrap();
        EmConfig::default().two_corner().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            EmConfig { k: 1, ..Default::default() },
            EmConfig { outlier_distance: 0.0, ..Default::default() },
            EmConfig { resolution: -0.1, ..Default::default() },
            EmConfig { margin_upper: 0.5, margin_lower: 1.0, ..Default::default() },
            EmConfig { margin_rate: 0.0, ..Default::default() },
            EmConfig { phase_switch_tolerance: 0.01, ..Default::default() },
            EmConfig { max_iterations: 0, ..Default::default() },
            EmConfig { stop_tolerance: f64::NAN, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn square_pairs_its_sides() {
        let corners = [p(10.0, 10.0), p(0.0, 0.0), p(0.0, 10.0), p(10.0, 0.0)];
        let cycle = cycle_pairing(&corners);
        let want: BTreeSet<_> = [(0, 2), (1, 2), (1, 3), (0, 3)].into_iter().collect();
        assert_eq!(norm_set(&cycle), want);
        assert_eq!(greatest_angle_pairing(&corners).unwrap(), want);
        assert_eq!(diagonals(&cycle, 4), vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn cycle_is_consecutive() {
        let corners = [p(3.0, 1.0), p(-2.0, 4.0), p(0.5, -3.0), p(5.0, 5.0), p(-4.0, -1.0)];
        let cycle = cycle_pairing(&corners);
        for t in 0..cycle.len() {
            assert_eq!(cycle[t].1, cycle[(t + 1) % cycle.len()].0);
        }
    }

    #[test]
    fn assignment_examples() {
        let model = square(10.0);
        let a = assign_latent(&[p(5.0, 0.0), p(25.0, 25.0)], &model, 3.5);
        assert_eq!(a.labels, vec![Some(0), None]);
        assert_eq!(a.distances[0], 0.0);

        let two = CrossingModel::from_corners(
            vec![p(0.0, 0.0), p(10.0, 0.0), p(0.0, 4.0), p(10.0, 4.0)],
            vec![(2, 3), (0, 1)],
        )
        .unwrap();
        let a = assign_latent(&[p(5.0, 2.0)], &two, 3.5);
        assert_eq!(a.labels, vec![Some(0)]);
        assert_eq!(a.distances, vec![2.0]);
    }

    #[test]
    fn margin_schedule() {
        let cfg = EmConfig::default();
        assert_eq!(margin_for_iteration(0, &cfg), 3.5);
        assert_eq!(margin_for_iteration(5, &cfg), 2.5);
        assert_eq!(margin_for_iteration(20, &cfg), 1.0);
    }

    #[test]
    fn m_step_fixed_point() {
        let model = square(20.0);
        let mut pts = Vec::new();
        for &(a, b) in &model.segments {
            for t in 0..=20 {
                pts.push(model.corners[a].lerp(model.corners[b], t as f64 / 20.0));
            }
        }
        let groups = assign_latent(&pts, &model, 3.5).groups(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let step = m_step(&pts, &groups, &model, Phase::Refined, 0, &EmConfig::default(), &mut rng)
            .unwrap();
        assert!(step.model.corner_movement(&model) < 1e-9);
        assert!(step.stale_segments.is_empty());
    }

    #[test]
    fn m_step_boundary_filters_next_input() {
        let model = square(20.0);
        let mut pts = Vec::new();
        for t in 0..=40 {
            let x = t as f64 * 0.5;
            pts.push(p(x, 0.0));
            pts.push(p(x, if t % 2 == 0 { 0.6 } else { -0.6 }));
        }
        pts.push(p(10.0, 1.8));
        pts.push(p(12.0, -2.5));
        let cfg = EmConfig { margin_upper: 1.0, ..Default::default() };
        let groups = assign_latent(&pts, &model, cfg.outlier_distance).groups(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let step = m_step(&pts, &groups, &model, Phase::Refined, 0, &cfg, &mut rng).unwrap();
        let keep = step.retained.unwrap();
        assert!(!keep.is_empty());
        for &i in &keep {
            let s = groups.iter().position(|g| g.contains(&i)).unwrap();
            assert!(step.model.lines[s].distance(pts[i]) <= 1.0);
        }
        assert!(!keep.contains(&(pts.len() - 1)) && !keep.contains(&(pts.len() - 2)));
    }

    #[test]
    fn starved_segments_keep_their_line() {
        let model = square(20.0);
        let pts: Vec<Point2> = (0..30).map(|t| p(t as f64 * 0.5, 0.2)).collect();
        let groups = assign_latent(&pts, &model, 3.5).groups(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let step =
            m_step(&pts, &groups, &model, Phase::Robust, 0, &EmConfig::default(), &mut rng).unwrap();
        assert_eq!(step.stale_segments, vec![1, 2, 3]);
        assert_eq!(step.model.lines[2], model.lines[2]);
    }

    #[test]
    fn parallel_border_lines_fail_with_iteration_context() {
        // Bottom and top are refit to a vertical line, parallel to the
        // unchanged (starved) vertical sides.
        let corners = vec![p(0.0, 0.0), p(10.0, 0.0), p(10.0, 10.0), p(0.0, 10.0)];
        let model = CrossingModel::from_corners(corners, vec![(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let pts: Vec<Point2> = (0..10).map(|t| p(5.0, t as f64)).collect();
        let all: Vec<usize> = (0..pts.len()).collect();
        let groups = vec![all.clone(), vec![], all, vec![]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = m_step(&pts, &groups, &model, Phase::Refined, 0, &EmConfig::default(), &mut rng)
            .unwrap_err()
            .at_iteration(3);
        assert!(err.to_string().starts_with("iteration 3"), "{err}");
    }

    #[test]
    fn noiseless_square_converges_quickly() {
        let cfg = EmConfig::default();
        let (model, trace) = run_em(&dense_square(), &cfg).unwrap();
        assert!(trace.converged);
        assert!(trace.iterations.len() <= 5, "{} iterations", trace.iterations.len());
        for c in &model.corners {
            let truth = [p(0.0, 0.0), p(20.0, 0.0), p(20.0, 20.0), p(0.0, 20.0)];
            let d = truth.iter().map(|t| t.distance(*c)).fold(f64::INFINITY, f64::min);
            assert!(d < cfg.stop_tolerance, "{c:?}");
        }
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let pts = dense_square();
        let cfg = EmConfig::default();
        assert_eq!(run_em(&pts, &cfg).unwrap(), run_em(&pts, &cfg).unwrap());
    }

    #[test]
    fn consistency_examples() {
        let reference = square(10.0);
        let t = batch_consistency(std::slice::from_ref(&reference), &reference).unwrap();
        assert_eq!(t.rows[0].distances, vec![0.0; 4]);
        assert_eq!(t.rows[0].mean, 0.0);

        let shifted = CrossingModel {
            corners: reference.corners.iter().map(|&c| c + p(1.0, 0.0)).collect(),
            ..reference.clone()
        };
        let t = batch_consistency(&[shifted], &reference).unwrap();
        assert_eq!(t.rows[0].distances, vec![1.0; 4]);
        assert_eq!(t.rows[0].mean, 1.0);
        assert!(t.to_string().contains("Batch 1"));

        let collapsed = CrossingModel {
            corners: vec![p(0.0, 0.0), p(0.1, 0.0), p(50.0, 50.0), p(50.0, 51.0)],
            ..reference.clone()
        };
        assert!(matches!(
            batch_consistency(&[collapsed], &reference),
            Err(Error::AmbiguousMatching(_))
        ));
    }
}
