//! Occupancy quantization and seeded k-means.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Upper bound on Lloyd rounds.
pub const KMEANS_MAX_ROUNDS: usize = 300;

/// Integer cell index `(floor(x / r), floor(y / r))`.
pub type Cell = (i64, i64);

fn cell_of(p: Point2, resolution: f64) -> Cell {
    (
        (p.x / resolution).floor() as i64,
        (p.y / resolution).floor() as i64,
    )
}

fn check_resolution(resolution: f64) -> Result<()> {
    if resolution > 0.0 && resolution.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "resolution must be positive, got {resolution}"
        )))
    }
}

/// Set of occupied cells; each detection only marks its cell as occupied.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    cells: BTreeSet<Cell>,
}

impl OccupancyGrid {
    pub fn from_points(points: &[Point2], resolution: f64) -> Result<Self> {
        check_resolution(resolution)?;
        Ok(Self {
            resolution,
            cells: points.iter().map(|&p| cell_of(p, resolution)).collect(),
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn cells(&self) -> &BTreeSet<Cell> {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_center(&self, (i, j): Cell) -> Point2 {
        Point2::new(
            (i as f64 + 0.5) * self.resolution,
            (j as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell centers in lexicographic cell order.
    pub fn centers(&self) -> Vec<Point2> {
        self.cells.iter().map(|&c| self.cell_center(c)).collect()
    }
}

/// One representative (the cell center) per occupied cell.
pub fn quantize(points: &[Point2], resolution: f64) -> Result<Vec<Point2>> {
    Ok(OccupancyGrid::from_points(points, resolution)?.centers())
}

/// Detection count per occupied cell (the heatmap view of the same grid).
pub fn cell_counts(points: &[Point2], resolution: f64) -> Result<BTreeMap<Cell, usize>> {
    check_resolution(resolution)?;
    let mut counts = BTreeMap::new();
    for &p in points {
        *counts.entry(cell_of(p, resolution)).or_insert(0) += 1;
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Point2>,
    /// Center index per input point, in input order.
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned centers.
    pub inertia: f64,
    /// Inertia after each assignment round.
    pub inertia_trace: Vec<f64>,
    pub converged: bool,
}

fn nearest(p: Point2, centers: &[Point2]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &c) in centers.iter().enumerate() {
        let d = p.distance_sq(c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Point2], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point2> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| p.distance_sq(centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        // Falls back to the last positive-weight point if rounding runs past the end.
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if acc > target && d > 0.0 {
                pick = i;
                break;
            }
        }
        let c = points[pick];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.distance_sq(c));
        }
    }
    centers
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Points are sorted lexicographically before seeding, so the centers do not
/// depend on input order. Empty clusters take over the point farthest from its
/// center. Stops when no label changes or after [`KMEANS_MAX_ROUNDS`].
pub fn kmeans(points: &[Point2], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].lex_cmp(&points[j]));
    let sorted: Vec<Point2> = order.iter().map(|&i| points[i]).collect();

    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            got: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seeds(&sorted, k, &mut rng);
    let mut labels = vec![usize::MAX; sorted.len()];
    let mut dists = vec![0.0; sorted.len()];
    let mut inertia_trace = Vec::new();
    let mut converged = false;

    for _ in 0..KMEANS_MAX_ROUNDS {
        let mut changed = false;
        for (i, &p) in sorted.iter().enumerate() {
            let (c, d) = nearest(p, &centers);
            changed |= labels[i] != c;
            labels[i] = c;
            dists[i] = d;
        }
        inertia_trace.push(dists.iter().sum());
        if !changed {
            converged = true;
            break;
        }

        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (&l, p) in labels.iter().zip(&sorted) {
            let s = &mut sums[l];
            s.0 += p.x;
            s.1 += p.y;
            s.2 += 1;
        }
        for (c, &(sx, sy, n)) in centers.iter_mut().zip(&sums) {
            if n > 0 {
                *c = Point2::new(sx / n as f64, sy / n as f64);
            }
        }
        let mut sizes: Vec<usize> = sums.iter().map(|s| s.2).collect();
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let donor = (0..sorted.len())
                .filter(|&i| sizes[labels[i]] > 1)
                .max_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(j.cmp(&i)))
                .expect("at least k distinct points");
            sizes[labels[donor]] -= 1;
            sizes[empty] = 1;
            labels[donor] = empty;
            dists[donor] = 0.0;
            centers[empty] = sorted[donor];
        }
    }

    let inertia = *inertia_trace.last().expect("at least one round");
    let mut out_labels = vec![0; points.len()];
    for (pos, &orig) in order.iter().enumerate() {
        out_labels[orig] = labels[pos];
    }
    Ok(KMeansResult {
        centers,
        labels: out_labels,
        inertia,
        inertia_trace,
        converged,
    })
}

/// Center pairs closer than `min_spacing`, as `(i, j, distance)`.
pub fn close_center_pairs(centers: &[Point2], min_spacing: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d = centers[i].distance(centers[j]);
            if d < min_spacing {
                out.push((i, j, d));
            }
        }
    }
    out
}
