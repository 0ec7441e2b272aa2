//! Line estimators used by the M-step.
//!
//! Theil-Sen is the robust starting estimator; orthogonal (total) least
//! squares is the refinement estimator. Both return canonical [`Line`]s.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Line, Point2};

/// Which estimator an M-step used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    TheilSen,
    LeastSquares,
}

/// Pair sampling for large Theil-Sen inputs.
///
/// Inputs with more than `exact_limit` points draw
/// `exact_limit * (exact_limit - 1) / 2` random pairs instead of enumerating
/// all of them.
pub struct PairSampling<'a, R: Rng> {
    pub exact_limit: usize,
    pub rng: &'a mut R,
}

fn count_distinct(points: &[Point2]) -> usize {
    let mut sorted = points.to_vec();
    sorted.sort_by(Point2::lex_cmp);
    sorted.dedup();
    sorted.len()
}

fn require_two_distinct(points: &[Point2]) -> Result<()> {
    let distinct = count_distinct(points);
    if distinct < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: distinct,
        });
    }
    Ok(())
}

/// Median by selection. Even lengths average the two middle values.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (left, hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = left.iter().copied().max_by(f64::total_cmp).unwrap();
        (lo + hi) / 2.0
    }
}

fn pair_slope(p: Point2, q: Point2) -> Option<f64> {
    let dx = q.x - p.x;
    (dx != 0.0).then(|| (q.y - p.y) / dx)
}

fn line_from_slope_and_intercepts(points: &[Point2], mut slopes: Vec<f64>) -> Result<Line> {
    if slopes.is_empty() {
        // Every pair shares its x: the points sit on a vertical line.
        let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
        let x = median_in_place(&mut xs);
        return Line::new(1.0, 0.0, -x);
    }
    let m = median_in_place(&mut slopes);
    let mut intercepts: Vec<f64> = points.iter().map(|p| p.y - m * p.x).collect();
    let c = median_in_place(&mut intercepts);
    Line::new(m, -1.0, c)
}

/// Exhaustive Theil-Sen: median of all pairwise slopes, median residual intercept.
///
/// Pairs sharing an x coordinate are excluded from the slope median. If all
/// pairs share it, the result is the vertical line at the median x.
pub fn fit_theil_sen(points: &[Point2]) -> Result<Line> {
    require_two_distinct(points)?;
    let n = points.len();
    let mut slopes = Vec::with_capacity(n * (n - 1) / 2);
    for (i, &p) in points.iter().enumerate() {
        slopes.extend(points[i + 1..].iter().filter_map(|&q| pair_slope(p, q)));
    }
    line_from_slope_and_intercepts(points, slopes)
}

/// Theil-Sen that falls back to random pair sampling above `exact_limit` points.
pub fn fit_theil_sen_sampled<R: Rng>(
    points: &[Point2],
    sampling: PairSampling<'_, R>,
) -> Result<Line> {
    let n = points.len();
    let limit = sampling.exact_limit.max(2);
    if n <= limit {
        return fit_theil_sen(points);
    }
    require_two_distinct(points)?;
    let draws = limit * (limit - 1) / 2;
    let mut slopes = Vec::with_capacity(draws);
    for _ in 0..draws {
        let i = sampling.rng.random_range(0..n);
        let mut j = sampling.rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (p, q) = if i < j { (points[i], points[j]) } else { (points[j], points[i]) };
        if let Some(s) = pair_slope(p, q) {
            slopes.push(s);
        }
    }
    if slopes.is_empty() {
        // Sampling only hit equal-x pairs; settle it exhaustively.
        return fit_theil_sen(points);
    }
    line_from_slope_and_intercepts(points, slopes)
}

/// Theil-Sen evaluated in the frame of `reference`: the reference line is the
/// local x-axis, so the fit is unaffected by how the crossing is oriented in
/// world coordinates.
pub fn fit_theil_sen_aligned<R: Rng>(
    points: &[Point2],
    reference: &Line,
    sampling: Option<PairSampling<'_, R>>,
) -> Result<Line> {
    let origin = reference.anchor();
    let (u, n) = (reference.direction(), reference.normal());
    let local: Vec<Point2> = points
        .iter()
        .map(|&p| {
            let d = p - origin;
            Point2::new(d.dot(u), d.dot(n))
        })
        .collect();
    let fit = match sampling {
        Some(s) => fit_theil_sen_sampled(&local, s)?,
        None => fit_theil_sen(&local)?,
    };
    // a'·x' + b'·y' + c' = 0 with x' = u·(p - o), y' = n·(p - o).
    let normal = u * fit.a() + n * fit.b();
    Line::new(normal.x, normal.y, fit.c() - normal.dot(origin))
}

/// Orthogonal least squares: the line through the centroid along the principal
/// axis of the centered scatter, minimizing squared perpendicular distances.
pub fn fit_least_squares(points: &[Point2]) -> Result<Line> {
    if points.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: count_distinct(points),
        });
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 && syy == 0.0 {
        return Err(Error::Degenerate("all points identical"));
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (a, b) = (-theta.sin(), theta.cos());
    Line::new(a, b, -(a * mx + b * my))
}

/// Dispatch on [`FitMethod`] with exhaustive Theil-Sen.
pub fn fit(method: FitMethod, points: &[Point2]) -> Result<Line> {
    match method {
        FitMethod::TheilSen => fit_theil_sen(points),
        FitMethod::LeastSquares => fit_least_squares(points),
    }
}

/// Mean perpendicular distance of `points` to `line`.
pub fn mean_residual(points: &[Point2], line: &Line) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput("mean residual of no points"));
    }
    Ok(points.iter().map(|&p| line.distance(p)).sum::<f64>() / points.len() as f64)
}
