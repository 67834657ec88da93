//! Oriented bounding box representation, coordinate conversions, sampling-point
//! geometry, and offset refinement.
//!
//! The whole crate uses one fixed axis convention: for a box with angle
//! `theta` (radians, measured between the long edge and the y-axis), the
//! long-edge unit vector is `e_w = (sin theta, cos theta)` and the short-edge
//! unit vector is `e_h = (cos theta, -sin theta)`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use thiserror::Error;

/// Relative tolerance deciding when a box counts as square for the
/// canonical-angle tie-break.
pub const SQUARE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid refinement: {0}")]
    InvalidRefinement(String),
}

/// Planar point or displacement in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// 2-D cross product (z component of the 3-D cross).
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Canonical oriented bounding box.
///
/// Construction always canonicalizes, so a value of this type satisfies
/// `w >= h`, `theta` in `[0, pi)`, and for squares `theta` in `[0, pi/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl Obb {
    /// Canonicalize five raw parameters into the unique canonical box with the
    /// same corner set.
    pub fn new(x: f64, y: f64, w: f64, h: f64, theta: f64) -> Result<Self, GeomError> {
        for (name, v) in [("x", x), ("y", y), ("w", w), ("h", h), ("theta", theta)] {
            if !v.is_finite() {
                return Err(GeomError::InvalidBox(format!("{name} is not finite: {v}")));
            }
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeomError::InvalidBox(format!(
                "extents must be positive, got w={w}, h={h}"
            )));
        }
        let (mut w, mut h, mut theta) = (w, h, theta);
        if w < h {
            // (w, h, theta) and (h, w, theta + 90 deg) describe the same box.
            std::mem::swap(&mut w, &mut h);
            theta += FRAC_PI_2;
        }
        theta = theta.rem_euclid(PI);
        if theta >= PI {
            theta -= PI;
        }
        if (w - h).abs() <= SQUARE_TOL * w.max(h) {
            theta = theta.rem_euclid(FRAC_PI_2);
            if theta >= FRAC_PI_2 {
                theta -= FRAC_PI_2;
            }
        }
        Ok(Self { x, y, w, h, theta })
    }

    pub fn from_params(p: [f64; 5]) -> Result<Self, GeomError> {
        Self::new(p[0], p[1], p[2], p[3], p[4])
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    /// Long-edge length.
    pub fn w(&self) -> f64 {
        self.w
    }

    /// Short-edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Angle in radians, canonical range.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn center(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn params(&self) -> [f64; 5] {
        [self.x, self.y, self.w, self.h, self.theta]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Long-edge unit vector `(sin theta, cos theta)`.
    pub fn long_axis(&self) -> Point {
        Point::new(self.theta.sin(), self.theta.cos())
    }

    /// Short-edge unit vector `(cos theta, -sin theta)`.
    pub fn short_axis(&self) -> Point {
        Point::new(self.theta.cos(), -self.theta.sin())
    }

    /// Counter-clockwise corner quad. The order is fixed: signs of the
    /// `(e_w, e_h)` half-extent coefficients run (+,+), (+,-), (-,-), (-,+).
    pub fn corners(&self) -> Quad {
        let c = self.center();
        let ew = self.long_axis() * (self.w * 0.5);
        let eh = self.short_axis() * (self.h * 0.5);
        Quad::from_ccw([c + ew + eh, c + ew - eh, c - ew - eh, c - ew + eh])
    }

    /// Component-wise additive refinement followed by canonicalization.
    pub fn apply_offsets(&self, off: &Offset5) -> Result<Self, GeomError> {
        let w = self.w + off.dw;
        let h = self.h + off.dh;
        if !(w > 0.0 && h > 0.0) {
            return Err(GeomError::InvalidRefinement(format!(
                "refined extents must stay positive, got w={w}, h={h}"
            )));
        }
        Self::new(self.x + off.dx, self.y + off.dy, w, h, self.theta + off.dtheta)
    }

    /// True when both canonical parameter sets agree within `tol` (relative on
    /// extents and centers scaled by extent, absolute on the angle).
    pub fn approx_eq(&self, other: &Obb, tol: f64) -> bool {
        let scale = self.w.max(other.w).max(1.0);
        (self.x - other.x).abs() <= tol * scale
            && (self.y - other.y).abs() <= tol * scale
            && (self.w - other.w).abs() <= tol * scale
            && (self.h - other.h).abs() <= tol * scale
            && angle_distance(self.theta, other.theta) <= tol
    }
}

impl fmt::Display for Obb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:.4}, {:.4}, {:.4}, {:.4}, {:.4} deg)",
            self.x,
            self.y,
            self.w,
            self.h,
            self.theta.to_degrees()
        )
    }
}

/// Angular distance modulo the box's 180-degree symmetry.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Ordered 4-corner polygon, counter-clockwise after construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pts: [Point; 4],
}

impl Quad {
    /// Build a quad, reversing the vertex order if it is clockwise.
    pub fn new(pts: [Point; 4]) -> Self {
        let mut q = Self { pts };
        if q.signed_area() < 0.0 {
            q.pts.swap(1, 3);
        }
        q
    }

    /// Build from points already known to be counter-clockwise.
    pub fn from_ccw(pts: [Point; 4]) -> Self {
        Self { pts }
    }

    pub fn points(&self) -> &[Point; 4] {
        &self.pts
    }

    pub fn signed_area(&self) -> f64 {
        let p = &self.pts;
        let mut acc = 0.0;
        for i in 0..4 {
            acc += p[i].cross(p[(i + 1) % 4]);
        }
        acc * 0.5
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Point {
        let mut c = Point::default();
        for p in &self.pts {
            c = c + *p;
        }
        c * 0.25
    }
}

/// Additive 5-parameter refinement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Offset5 {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
    pub dtheta: f64,
}

impl Offset5 {
    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64, dtheta: f64) -> Self {
        Self { dx, dy, dw, dh, dtheta }
    }
}

/// Nine sampling points derived from a box plus the deformable-convolution
/// offsets that reproduce them from a standard 3x3 kernel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcmPointSet {
    /// Sampling points in image coordinates, ordered by the row-major 3x3
    /// kernel cell they are assigned to.
    pub points: [Point; 9],
    /// Displacements in feature-map units: `(points[i] - (loc + stride * g_i)) / stride`.
    pub offsets: [Point; 9],
}

/// Row-major 3x3 kernel grid cells `{-1,0,1}^2`.
pub const KERNEL_GRID: [(f64, f64); 9] = [
    (-1.0, -1.0),
    (0.0, -1.0),
    (1.0, -1.0),
    (-1.0, 0.0),
    (0.0, 0.0),
    (1.0, 0.0),
    (-1.0, 1.0),
    (0.0, 1.0),
    (1.0, 1.0),
];

/// Build the 9-point sampling set for `b`: its 4 corners, 4 edge midpoints,
/// and the sampling location `loc` itself.
///
/// Cell assignment is fixed: `loc` takes the center cell; the corners, in
/// `corners()` order, take the four diagonal cells in row-major order; the
/// edge midpoints, in the order `c + (w/2)e_w`, `c - (w/2)e_w`,
/// `c + (h/2)e_h`, `c - (h/2)e_h`, take the four edge cells in row-major
/// order.
pub fn acm_points(b: &Obb, loc: Point, stride: f64) -> AcmPointSet {
    debug_assert!(stride > 0.0);
    let c = b.center();
    let ew = b.long_axis() * (b.w * 0.5);
    let eh = b.short_axis() * (b.h * 0.5);
    let corners = b.corners();
    let cp = corners.points();
    let mids = [c + ew, c - ew, c + eh, c - eh];
    // Row-major cells: diagonals get corners, edges get midpoints.
    let points = [
        cp[0], mids[0], cp[1], mids[1], loc, mids[2], cp[2], mids[3], cp[3],
    ];
    let mut offsets = [Point::default(); 9];
    for i in 0..9 {
        let (gx, gy) = KERNEL_GRID[i];
        let anchor = loc + Point::new(gx, gy) * stride;
        offsets[i] = (points[i] - anchor) * (1.0 / stride);
    }
    AcmPointSet { points, offsets }
}

/// Minimum-area enclosing rectangle of a point set, via rotating calipers
/// over the convex hull.
pub fn min_area_rect(pts: &[Point]) -> Result<Obb, GeomError> {
    if pts.len() < 3 {
        return Err(GeomError::DegenerateGeometry(format!(
            "need at least 3 points, got {}",
            pts.len()
        )));
    }
    let hull = convex_hull(pts);
    if hull.len() < 3 {
        return Err(GeomError::DegenerateGeometry(
            "points are collinear".to_string(),
        ));
    }
    let mut best: Option<(f64, Obb)> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let edge = b - a;
        let len = edge.norm();
        if len == 0.0 {
            continue;
        }
        let u = edge * (1.0 / len);
        let v = Point::new(-u.y, u.x);
        let (mut lo_u, mut hi_u) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let su = p.dot(u);
            let sv = p.dot(v);
            lo_u = lo_u.min(su);
            hi_u = hi_u.max(su);
            lo_v = lo_v.min(sv);
            hi_v = hi_v.max(sv);
        }
        let du = hi_u - lo_u;
        let dv = hi_v - lo_v;
        let area = du * dv;
        if best.as_ref().map_or(true, |(a0, _)| area < *a0) {
            let center = u * ((lo_u + hi_u) * 0.5) + v * ((lo_v + hi_v) * 0.5);
            // e_w = (sin t, cos t) == u when the u-extent is the long one;
            // canonicalization fixes the swap otherwise.
            let theta = u.x.atan2(u.y);
            let obb = Obb::new(center.x, center.y, du, dv, theta)?;
            best = Some((area, obb));
        }
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| GeomError::DegenerateGeometry("empty hull".to_string()))
}

/// Andrew monotone chain convex hull, counter-clockwise, collinear points
/// dropped.
pub fn convex_hull(pts: &[Point]) -> Vec<Point> {
    let mut sorted: Vec<Point> = pts.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    sorted.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if sorted.len() < 3 {
        return sorted;
    }
    let turn_right = |hull: &[Point], p: Point| {
        let a = hull[hull.len() - 2];
        let b = hull[hull.len() - 1];
        (b - a).cross(p - a) <= 0.0
    };
    let mut lower: Vec<Point> = Vec::new();
    for &p in &sorted {
        while lower.len() >= 2 && turn_right(&lower, p) {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in sorted.iter().rev() {
        while upper.len() >= 2 && turn_right(&upper, p) {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}
