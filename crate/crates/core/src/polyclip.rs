//! Exact rotated-box intersection and IoU via Sutherland-Hodgman convex
//! polygon clipping. This is the geometric ground truth the pixel-based
//! approximation is measured against.

use crate::geom::{Obb, Point, Quad};

/// Points within this distance of a clip edge count as inside, to avoid
/// spurious slivers from floating-point ties.
const EDGE_TOL: f64 = 1e-12;

/// Convex intersection polygon. Two quads intersect in at most 8 vertices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClipPolygon {
    pts: Vec<Point>,
}

impl ClipPolygon {
    pub fn points(&self) -> &[Point] {
        &self.pts
    }

    pub fn is_empty(&self) -> bool {
        self.pts.len() < 3
    }

    /// Shoelace area; zero for empty or degenerate polygons.
    pub fn area(&self) -> f64 {
        if self.pts.len() < 3 {
            return 0.0;
        }
        let n = self.pts.len();
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.pts[i].cross(self.pts[(i + 1) % n]);
        }
        (acc * 0.5).abs()
    }
}

/// Clip `subject` against the half-plane to the left of the directed edge
/// `a -> b`.
fn clip_edge(subject: &[Point], a: Point, b: Point) -> Vec<Point> {
    let edge = b - a;
    let len = edge.norm();
    if len == 0.0 {
        return subject.to_vec();
    }
    let tol = EDGE_TOL * len;
    let mut out = Vec::with_capacity(subject.len() + 1);
    let n = subject.len();
    for i in 0..n {
        let s = subject[i];
        let e = subject[(i + 1) % n];
        let sc = edge.cross(s - a);
        let ec = edge.cross(e - a);
        let s_in = sc >= -tol;
        let e_in = ec >= -tol;
        match (s_in, e_in) {
            (true, true) => out.push(e),
            (true, false) | (false, true) => {
                let denom = sc - ec;
                if denom.abs() > 0.0 {
                    let t = sc / denom;
                    out.push(s + (e - s) * t);
                }
                if e_in {
                    out.push(e);
                }
            }
            (false, false) => {}
        }
    }
    out
}

/// Convex intersection of two CCW quads; empty when disjoint.
pub fn intersect(a: &Quad, b: &Quad) -> ClipPolygon {
    let mut pts: Vec<Point> = a.points().to_vec();
    let bp = b.points();
    for i in 0..4 {
        if pts.is_empty() {
            break;
        }
        pts = clip_edge(&pts, bp[i], bp[(i + 1) % 4]);
    }
    ClipPolygon { pts }
}

/// Exact rotated-box IoU: `area(a ∩ b) / (area(a) + area(b) - area(a ∩ b))`.
///
/// Zero-area intersections (edge or vertex touching) report 0.
pub fn iou_exact(a: &Obb, b: &Obb) -> f64 {
    let inter = intersect(&a.corners(), &b.corners()).area();
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
