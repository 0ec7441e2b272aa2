//! Planar primitives shared by the estimators, the EM engine and the classifier.
//!
//! Lines are kept in implicit form `a·x + b·y + c = 0` with `(a, b)` a unit
//! normal and a fixed sign convention (`a > 0`, or `a == 0` and `b > 0`), so
//! every geometric line has exactly one representation. Slope/intercept is
//! never stored; vertical crossings are as ordinary as any other.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for exact geometric identities (not a model tolerance).
pub const GEOMETRY_EPS: f64 = 1e-9;

/// A ground-plane position. Units are whatever the input frame uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Like [`Point2::new`] but rejects NaN and infinities.
    pub fn try_new(x: f64, y: f64) -> Result<Self> {
        if x.is_finite() && y.is_finite() {
            Ok(Self { x, y })
        } else {
            Err(Error::Degenerate("non-finite coordinate"))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn distance_sq(self, other: Point2) -> f64 {
        let d = self - other;
        d.dot(d)
    }

    /// Point at parameter `t` on the way from `self` to `other`.
    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        self + (other - self) * t
    }

    /// Lexicographic total order on `(x, y)`.
    pub fn lex_cmp(&self, other: &Point2) -> std::cmp::Ordering {
        self.x.total_cmp(&other.x).then(self.y.total_cmp(&other.y))
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Mean of a non-empty point set.
pub fn centroid(points: &[Point2]) -> Option<Point2> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Some(Point2::new(sx / n, sy / n))
}

/// Implicit line `a·x + b·y + c = 0` in canonical form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Line {
    a: f64,
    b: f64,
    c: f64,
}

impl Line {
    /// Canonicalizes `(a, b, c)`: unit normal, then `a > 0` or `a == 0, b > 0`.
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::Degenerate("non-finite line coefficient"));
        }
        let norm = a.hypot(b);
        if norm == 0.0 {
            return Err(Error::Degenerate("line normal is zero"));
        }
        let (mut a, mut b, mut c) = (a / norm, b / norm, c / norm);
        if a < 0.0 || (a == 0.0 && b < 0.0) {
            a = -a;
            b = -b;
            c = -c;
        }
        // Keep field equality meaningful: no negative zeros.
        Ok(Self {
            a: a + 0.0,
            b: b + 0.0,
            c: c + 0.0,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn coefficients(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    /// Unit normal `(a, b)`.
    pub fn normal(&self) -> Point2 {
        Point2::new(self.a, self.b)
    }

    /// Unit direction along the line, `(b, -a)`.
    pub fn direction(&self) -> Point2 {
        Point2::new(self.b, -self.a)
    }

    /// Point of the line closest to the origin.
    pub fn anchor(&self) -> Point2 {
        self.normal() * (-self.c)
    }

    /// Signed value of the implicit equation; its magnitude is the distance.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }

    pub fn distance(&self, p: Point2) -> f64 {
        self.signed_distance(p).abs()
    }

    /// Slope `-a/b`, undefined (`None`) for vertical lines.
    pub fn slope(&self) -> Option<f64> {
        (self.b != 0.0).then(|| -self.a / self.b)
    }

    /// Same normal, constant term shifted by `dc`. Canonical form is preserved.
    fn shifted(&self, dc: f64) -> Line {
        Line {
            a: self.a,
            b: self.b,
            c: self.c + dc + 0.0,
        }
    }
}

impl TryFrom<[f64; 3]> for Line {
    type Error = Error;
    fn try_from([a, b, c]: [f64; 3]) -> Result<Self> {
        Line::new(a, b, c)
    }
}

impl From<Line> for [f64; 3] {
    fn from(l: Line) -> Self {
        l.coefficients()
    }
}

/// A crossing segment between two distinct corners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    p: Point2,
    q: Point2,
}

impl Segment {
    pub fn new(p: Point2, q: Point2) -> Result<Self> {
        if p == q {
            return Err(Error::Degenerate("segment endpoints coincide"));
        }
        Ok(Self { p, q })
    }

    pub fn p(&self) -> Point2 {
        self.p
    }

    pub fn q(&self) -> Point2 {
        self.q
    }

    pub fn length(&self) -> f64 {
        self.p.distance(self.q)
    }

    pub fn midpoint(&self) -> Point2 {
        self.p.lerp(self.q, 0.5)
    }

    pub fn line(&self) -> Line {
        // Endpoints are distinct, so this cannot fail.
        line_from_points(self.p, self.q).expect("segment endpoints are distinct")
    }
}

/// Canonical line through two distinct points.
pub fn line_from_points(p: Point2, q: Point2) -> Result<Line> {
    if p == q {
        return Err(Error::Degenerate("line through coincident points"));
    }
    let d = q - p;
    let (a, b) = (-d.y, d.x);
    Line::new(a, b, -(a * p.x + b * p.y))
}

/// Perpendicular distance from `p` to `l`.
pub fn point_line_distance(p: Point2, l: &Line) -> f64 {
    l.distance(p)
}

/// Intersection of two non-parallel lines.
pub fn line_intersection(l1: &Line, l2: &Line) -> Result<Point2> {
    let det = l1.a * l2.b - l2.a * l1.b;
    if det.abs() <= GEOMETRY_EPS {
        return Err(Error::ParallelLines { det: det.abs() });
    }
    let x = (l1.b * l2.c - l2.b * l1.c) / det;
    let y = (l2.a * l1.c - l1.a * l2.c) / det;
    Ok(Point2::new(x, y))
}

/// The two lines parallel to `l` at perpendicular distance `d`, one per side.
///
/// In canonical form this is `c ∓ d`, which is the same intercept shift as
/// `d / cos(arctan m)` on a slope-intercept line but also covers vertical lines.
/// The first line lies on the side where `signed_distance` is positive.
pub fn parallel_offset(l: &Line, d: f64) -> (Line, Line) {
    (l.shifted(-d), l.shifted(d))
}

/// Angle at `vertex` between the rays towards `p` and `q`, in `[0, π]`.
pub fn subtended_angle(vertex: Point2, p: Point2, q: Point2) -> Result<f64> {
    let u = p - vertex;
    let w = q - vertex;
    let (nu, nw) = (u.norm(), w.norm());
    if nu == 0.0 || nw == 0.0 {
        return Err(Error::Degenerate("angle ray of zero length"));
    }
    Ok((u.dot(w) / (nu * nw)).clamp(-1.0, 1.0).acos())
}

/// Orthogonal projection of `p` onto `l`.
pub fn project_onto_line(p: Point2, l: &Line) -> Point2 {
    p - l.normal() * l.signed_distance(p)
}

/// Convex hull in counter-clockwise order (Andrew's monotone chain).
///
/// Collinear boundary points are dropped. Fewer than three hull vertices are
/// returned as-is for degenerate inputs.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(Point2::lex_cmp);
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Point2, a: Point2, b: Point2| (a - o).cross(b - o);
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() + 1);
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    // The upper chain must not pop into the finished lower chain.
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Inside-or-on test against a counter-clockwise convex polygon.
pub fn convex_contains(hull: &[Point2], p: Point2) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        (b - a).cross(p - a) >= -GEOMETRY_EPS
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI, SQRT_2};

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn assert_line(l: Line, a: f64, b: f64, c: f64) {
        let [la, lb, lc] = l.coefficients();
        assert!(
            (la - a).abs() < 1e-12 && (lb - b).abs() < 1e-12 && (lc - c).abs() < 1e-12,
            "{l:?} != ({a}, {b}, {c})"
        );
    }

    #[test]
    fn line_from_points_examples() {
        assert_line(line_from_points(p(0.0, 0.0), p(0.0, 5.0)).unwrap(), 1.0, 0.0, 0.0);
        assert_line(line_from_points(p(0.0, 0.0), p(5.0, 0.0)).unwrap(), 0.0, 1.0, 0.0);
        assert_line(
            line_from_points(p(0.0, 1.0), p(1.0, 2.0)).unwrap(),
            FRAC_1_SQRT_2,
            -FRAC_1_SQRT_2,
            FRAC_1_SQRT_2,
        );
    }

    #[test]
    fn line_from_coincident_points_fails() {
        assert!(matches!(
            line_from_points(p(1.0, 1.0), p(1.0, 1.0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn line_passes_through_its_points() {
        let (a, b) = (p(-3.2, 7.1), p(4.4, -0.3));
        let l = line_from_points(a, b).unwrap();
        assert!(l.distance(a) < 1e-9 && l.distance(b) < 1e-9);
        assert!((l.a().powi(2) + l.b().powi(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canonicalization_is_scale_invariant() {
        let l = Line::new(3.0, -4.0, 5.0).unwrap();
        for s in [-7.5, -1.0, 0.01, 2.0, 1e6] {
            let m = Line::new(3.0 * s, -4.0 * s, 5.0 * s).unwrap();
            assert_line(m, l.a(), l.b(), l.c());
        }
        assert_line(Line::new(l.a(), l.b(), l.c()).unwrap(), l.a(), l.b(), l.c());
        assert!(Line::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let x0 = Line::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(point_line_distance(p(3.0, 4.0), &x0), 3.0);
        assert_eq!(point_line_distance(p(0.0, 12.0), &x0), 0.0);
        let l = Line::new(0.6, 0.8, 0.0).unwrap();
        assert!((point_line_distance(p(5.0, 5.0), &l) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn intersection_examples() {
        let x0 = Line::new(1.0, 0.0, 0.0).unwrap();
        let y0 = Line::new(0.0, 1.0, 0.0).unwrap();
        assert_eq!(line_intersection(&x0, &y0).unwrap(), p(0.0, 0.0));

        let diag = line_from_points(p(0.0, 0.0), p(1.0, 1.0)).unwrap();
        let anti = line_from_points(p(0.0, 2.0), p(2.0, 0.0)).unwrap();
        let c = line_intersection(&diag, &anti).unwrap();
        assert!(c.distance(p(1.0, 1.0)) < 1e-12);
        assert_eq!(line_intersection(&anti, &diag).unwrap(), c);

        let x1 = Line::new(1.0, 0.0, -1.0).unwrap();
        assert!(matches!(
            line_intersection(&x0, &x1),
            Err(Error::ParallelLines { .. })
        ));
    }

    #[test]
    fn offset_examples() {
        let y0 = Line::new(0.0, 1.0, 0.0).unwrap();
        let (u, v) = parallel_offset(&y0, 2.75);
        assert_line(u, 0.0, 1.0, -2.75);
        assert_line(v, 0.0, 1.0, 2.75);

        let diag = line_from_points(p(0.0, 0.0), p(1.0, 1.0)).unwrap();
        let (u, v) = parallel_offset(&diag, SQRT_2);
        let plus2 = line_from_points(p(0.0, 2.0), p(1.0, 3.0)).unwrap();
        let minus2 = line_from_points(p(0.0, -2.0), p(1.0, -1.0)).unwrap();
        for (got, want) in [(u, minus2), (v, plus2)] {
            assert_line(got, want.a(), want.b(), want.c());
        }

        let (u, v) = parallel_offset(&diag, 0.0);
        assert_eq!((u, v), (diag, diag));
    }

    #[test]
    fn offset_lines_lie_on_opposite_sides() {
        let l = line_from_points(p(1.0, -2.0), p(3.5, 4.0)).unwrap();
        let (u, v) = parallel_offset(&l, 1.3);
        let on_l = project_onto_line(p(10.0, 10.0), &l);
        assert!((u.distance(on_l) - 1.3).abs() < 1e-9);
        assert!((v.distance(on_l) - 1.3).abs() < 1e-9);
        let pu = project_onto_line(on_l, &u);
        let pv = project_onto_line(on_l, &v);
        assert!(l.signed_distance(pu) * l.signed_distance(pv) < 0.0);
        assert!(l.signed_distance(pu) > 0.0);
    }

    #[test]
    fn subtended_angle_examples() {
        let o = p(0.0, 0.0);
        assert!((subtended_angle(o, p(1.0, 0.0), p(0.0, 1.0)).unwrap() - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(subtended_angle(o, p(1.0, 0.0), p(2.0, 0.0)).unwrap(), 0.0);
        assert!((subtended_angle(o, p(1.0, 0.0), p(-1.0, 0.0)).unwrap() - PI).abs() < 1e-12);
        assert!(subtended_angle(o, o, p(1.0, 0.0)).is_err());
    }

    #[test]
    fn projection_examples() {
        let x0 = Line::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(project_onto_line(p(3.0, 4.0), &x0), p(0.0, 4.0));
        assert_eq!(project_onto_line(p(0.0, -2.0), &x0), p(0.0, -2.0));
        let diag = line_from_points(p(0.0, 0.0), p(1.0, 1.0)).unwrap();
        assert!(project_onto_line(p(2.0, 0.0), &diag).distance(p(1.0, 1.0)) < 1e-12);
    }

    #[test]
    fn segment_rejects_zero_length() {
        assert!(Segment::new(p(1.0, 2.0), p(1.0, 2.0)).is_err());
        let s = Segment::new(p(0.0, 0.0), p(4.0, 0.0)).unwrap();
        assert_eq!(s.length(), 4.0);
        assert_eq!(s.midpoint(), p(2.0, 0.0));
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let pts = [
            p(0.0, 0.0),
            p(2.0, 2.0),
            p(4.0, 0.0),
            p(4.0, 4.0),
            p(0.0, 4.0),
            p(2.0, 0.0),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull, vec![p(0.0, 0.0), p(4.0, 0.0), p(4.0, 4.0), p(0.0, 4.0)]);
        assert!(convex_contains(&hull, p(2.0, 2.0)));
        assert!(convex_contains(&hull, p(4.0, 2.0)));
        assert!(!convex_contains(&hull, p(4.1, 2.0)));
    }
}
