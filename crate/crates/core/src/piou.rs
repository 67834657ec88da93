//! Pixel-based differentiable IoU for rotated boxes.
//!
//! Soft per-pixel membership kernels approximate the hard inside/outside
//! test; summing the product of both boxes' memberships over a pixel lattice
//! approximates the intersection area, from which a smooth IoU and its exact
//! gradient follow.

use thiserror::Error;

use crate::geom::{Obb, Point};

#[derive(Debug, Error)]
pub enum PiouError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("sample budget exceeded: lattice needs {needed} samples, budget is {budget}")]
    SampleBudget { needed: u128, budget: u64 },
}

/// Configuration for the pixel-lattice IoU approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiouConfig {
    /// Sigmoid steepness of the membership kernel.
    pub k: f64,
    /// Subpixel samples per pixel per axis.
    pub resolution: u32,
    /// Lattice expansion beyond the joint bounding rectangle, in pixels.
    pub margin: f64,
    /// Lower clamp applied to the IoU before taking the log loss.
    pub eps: f64,
    /// Hard cap on the number of lattice samples per evaluation.
    pub sample_budget: u64,
}

impl Default for PiouConfig {
    fn default() -> Self {
        Self {
            k: 10.0,
            resolution: 2,
            margin: 2.0,
            eps: 1e-6,
            sample_budget: 50_000_000,
        }
    }
}

impl PiouConfig {
    pub fn validate(&self) -> Result<(), PiouError> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(PiouError::InvalidConfig(format!("k must be positive, got {}", self.k)));
        }
        if self.resolution < 1 {
            return Err(PiouError::InvalidConfig("resolution must be >= 1".into()));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(PiouError::InvalidConfig(format!(
                "margin must be non-negative, got {}",
                self.margin
            )));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(PiouError::InvalidConfig(format!(
                "eps must lie in (0, 1), got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Gradient of a scalar with respect to the five box parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Grad5 {
    pub d_x: f64,
    pub d_y: f64,
    pub d_w: f64,
    pub d_h: f64,
    pub d_theta: f64,
}

impl Grad5 {
    pub fn as_array(&self) -> [f64; 5] {
        [self.d_x, self.d_y, self.d_w, self.d_h, self.d_theta]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { d_x: a[0], d_y: a[1], d_w: a[2], d_h: a[3], d_theta: a[4] }
    }
}

/// Integer pixel lattice covering the joint bounding rectangle of two boxes,
/// optionally subdivided into subpixel samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRegion {
    pub x0: i64,
    pub y0: i64,
    pub nx: i64,
    pub ny: i64,
    pub resolution: u32,
}

impl PixelRegion {
    /// Lattice of integer pixel centers inside the joint axis-aligned
    /// bounding rectangle of both boxes' corners, expanded by `margin`.
    pub fn covering(a: &Obb, b: &Obb, margin: f64, resolution: u32) -> Self {
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for q in [a.corners(), b.corners()] {
            for p in q.points() {
                xmin = xmin.min(p.x);
                xmax = xmax.max(p.x);
                ymin = ymin.min(p.y);
                ymax = ymax.max(p.y);
            }
        }
        let x0 = (xmin - margin).ceil() as i64;
        let x1 = (xmax + margin).floor() as i64;
        let y0 = (ymin - margin).ceil() as i64;
        let y1 = (ymax + margin).floor() as i64;
        Self {
            x0,
            y0,
            nx: (x1 - x0 + 1).max(0),
            ny: (y1 - y0 + 1).max(0),
            resolution,
        }
    }

    pub fn sample_count(&self) -> u128 {
        self.nx as u128 * self.ny as u128 * (self.resolution as u128).pow(2)
    }

    /// Weight of one sample when summed into an area.
    pub fn sample_weight(&self) -> f64 {
        1.0 / (self.resolution as f64 * self.resolution as f64)
    }

    fn check_budget(&self, cfg: &PiouConfig) -> Result<(), PiouError> {
        let needed = self.sample_count();
        if needed > cfg.sample_budget as u128 {
            return Err(PiouError::SampleBudget { needed, budget: cfg.sample_budget });
        }
        Ok(())
    }

    /// Visit every sample position in a fixed row-major order.
    fn for_each_sample(&self, mut f: impl FnMut(Point)) {
        let r = self.resolution as i64;
        let inv_r = 1.0 / r as f64;
        // Subsample t covers pixel center c at c + (t + 0.5)/r - 0.5.
        for iy in self.y0..self.y0 + self.ny {
            for sy in 0..r {
                let y = iy as f64 + (sy as f64 + 0.5) * inv_r - 0.5;
                for ix in self.x0..self.x0 + self.nx {
                    for sx in 0..r {
                        let x = ix as f64 + (sx as f64 + 0.5) * inv_r - 0.5;
                        f(Point::new(x, y));
                    }
                }
            }
        }
    }
}

/// Distances from `p` to the box's two symmetry axes: `|<p - c, e_w>|` and
/// `|<p - c, e_h>|`.
pub fn local_distances(p: Point, b: &Obb) -> (f64, f64) {
    let d = p - b.center();
    (d.dot(b.long_axis()).abs(), d.dot(b.short_axis()).abs())
}

/// Hard inside/outside test: true iff `d_w <= w/2` and `d_h <= h/2`.
pub fn delta(p: Point, b: &Obb) -> bool {
    let (dw, dh) = local_distances(p, b);
    dw <= b.w() * 0.5 && dh <= b.h() * 0.5
}

/// Soft membership kernel `K(d, s) = 1 - 1/(1 + e^{-k(d - s)})`, applied with
/// `s` equal to the half-extent so that `k -> inf` recovers the hard test.
pub fn kernel(d: f64, half_extent: f64, k: f64) -> f64 {
    // 1 - sigmoid(u) computed as sigmoid(-u) to keep precision in the tail.
    sigmoid(-k * (d - half_extent))
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Soft membership of pixel `p` in box `b`: the product of the two per-axis
/// kernels.
pub fn contribution(p: Point, b: &Obb, cfg: &PiouConfig) -> f64 {
    let (dw, dh) = local_distances(p, b);
    kernel(dw, b.w() * 0.5, cfg.k) * kernel(dh, b.h() * 0.5, cfg.k)
}

/// Pixel-based IoU approximation, clamped to `[eps, 1]`.
pub fn piou(b: &Obb, g: &Obb, cfg: &PiouConfig) -> Result<f64, PiouError> {
    cfg.validate()?;
    let region = PixelRegion::covering(b, g, cfg.margin, cfg.resolution);
    piou_on_region(b, g, &region, cfg)
}

/// Same as [`piou`] but over a caller-supplied lattice. Finite-difference
/// checks use this to hold the lattice fixed while perturbing the box.
pub fn piou_on_region(
    b: &Obb,
    g: &Obb,
    region: &PixelRegion,
    cfg: &PiouConfig,
) -> Result<f64, PiouError> {
    cfg.validate()?;
    region.check_budget(cfg)?;
    let mut inter = 0.0;
    region.for_each_sample(|p| {
        inter += contribution(p, b, cfg) * contribution(p, g, cfg);
    });
    inter *= region.sample_weight();
    let union = b.area() + g.area() - inter;
    Ok((inter / union).clamp(cfg.eps, 1.0))
}

/// `-ln(piou)`; finite thanks to the eps clamp, zero iff piou reaches 1.
pub fn piou_loss(b: &Obb, g: &Obb, cfg: &PiouConfig) -> Result<f64, PiouError> {
    Ok(-piou(b, g, cfg)?.ln())
}

pub fn piou_loss_on_region(
    b: &Obb,
    g: &Obb,
    region: &PixelRegion,
    cfg: &PiouConfig,
) -> Result<f64, PiouError> {
    Ok(-piou_on_region(b, g, region, cfg)?.ln())
}

/// Analytic gradient of `piou_loss` with respect to the five parameters of
/// `b`, holding `g` and the sample lattice fixed.
pub fn piou_grad(b: &Obb, g: &Obb, cfg: &PiouConfig) -> Result<Grad5, PiouError> {
    cfg.validate()?;
    let region = PixelRegion::covering(b, g, cfg.margin, cfg.resolution);
    piou_grad_on_region(b, g, &region, cfg)
}

pub fn piou_grad_on_region(
    b: &Obb,
    g: &Obb,
    region: &PixelRegion,
    cfg: &PiouConfig,
) -> Result<Grad5, PiouError> {
    cfg.validate()?;
    region.check_budget(cfg)?;

    let k = cfg.k;
    let (sin_t, cos_t) = b.theta().sin_cos();
    let hw = b.w() * 0.5;
    let hh = b.h() * 0.5;
    let c = b.center();

    let mut inter = 0.0;
    // d(inter)/d(x, y, w, h, theta).
    let mut d_inter = [0.0f64; 5];

    region.for_each_sample(|p| {
        let fg = contribution(p, g, cfg);
        if fg == 0.0 {
            return;
        }
        let d = p - c;
        let tw = d.x * sin_t + d.y * cos_t;
        let th = d.x * cos_t - d.y * sin_t;
        let (dw, dh) = (tw.abs(), th.abs());
        let sw = signum_or_zero(tw);
        let sh = signum_or_zero(th);
        let kw = kernel(dw, hw, k);
        let kh = kernel(dh, hh, k);
        let fb = kw * kh;
        inter += fb * fg;

        // dK/dd = -k K (1 - K); dK/ds = +k K (1 - K).
        let aw = -k * kw * (1.0 - kw) * kh; // dF/d(d_w)
        let ah = -k * kh * (1.0 - kh) * kw; // dF/d(d_h)

        let df_dx = aw * sw * (-sin_t) + ah * sh * (-cos_t);
        let df_dy = aw * sw * (-cos_t) + ah * sh * sin_t;
        let df_dw = -0.5 * aw;
        let df_dh = -0.5 * ah;
        let df_dt = aw * sw * th + ah * sh * (-tw);

        d_inter[0] += fg * df_dx;
        d_inter[1] += fg * df_dy;
        d_inter[2] += fg * df_dw;
        d_inter[3] += fg * df_dh;
        d_inter[4] += fg * df_dt;
    });

    let weight = region.sample_weight();
    inter *= weight;
    for v in &mut d_inter {
        *v *= weight;
    }

    let union = b.area() + g.area() - inter;
    let ratio = inter / union;
    if !(ratio > cfg.eps && ratio < 1.0) {
        // Clamp active: the loss is locally constant.
        return Ok(Grad5::default());
    }

    // d(union)/dq = d(area_b)/dq - d(inter)/dq.
    let d_area = [0.0, 0.0, b.h(), b.w(), 0.0];
    let mut grad = [0.0f64; 5];
    for q in 0..5 {
        let d_ratio = (d_inter[q] * union - inter * (d_area[q] - d_inter[q])) / (union * union);
        // loss = -ln(ratio).
        grad[q] = -d_ratio / ratio;
    }
    Ok(Grad5::from_array(grad))
}

/// Subgradient choice at the |.| kink: zero exactly at zero.
fn signum_or_zero(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyclip::iou_exact;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cfg(k: f64, resolution: u32) -> PiouConfig {
        PiouConfig { k, resolution, ..PiouConfig::default() }
    }

    #[test]
    fn local_distances_basics() {
        let b = Obb::new(0.0, 0.0, 4.0, 2.0, 0.0).unwrap();
        assert_eq!(local_distances(b.center(), &b), (0.0, 0.0));
        let (dw, dh) = local_distances(Point::new(1.0, 2.0), &b);
        assert_relative_eq!(dw, 2.0, epsilon = 1e-12);
        assert_relative_eq!(dh, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn local_distances_rigid_invariance() {
        let b = Obb::new(2.0, 3.0, 6.0, 2.0, 0.4).unwrap();
        let p = Point::new(4.0, 1.0);
        let (dw0, dh0) = local_distances(p, &b);
        // Rotate p about the center together with the box.
        let a = 0.7f64;
        let (s, c) = a.sin_cos();
        let d = p - b.center();
        let p2 = b.center() + Point::new(d.x * c - d.y * s, d.x * s + d.y * c);
        let b2 = Obb::new(b.x(), b.y(), b.w(), b.h(), b.theta() - a).unwrap();
        let (dw1, dh1) = local_distances(p2, &b2);
        assert_relative_eq!(dw0, dw1, epsilon = 1e-12);
        assert_relative_eq!(dh0, dh1, epsilon = 1e-12);
    }

    #[test]
    fn delta_containment() {
        let b = Obb::new(0.0, 0.0, 4.0, 2.0, 0.0).unwrap();
        assert!(delta(b.center(), &b));
        assert!(delta(Point::new(0.0, 1.01), &b));
        assert!(!delta(Point::new(1.01, 0.0), &b));
    }

    #[test]
    fn kernel_values() {
        assert_relative_eq!(kernel(2.0, 2.0, 10.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(kernel(7.5, 7.5, 3.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(kernel(0.0, 2.0, 10.0), 1.0 - 1.0 / (1.0 + 20.0f64.exp()), epsilon = 1e-15);
        assert_relative_eq!(
            kernel(3.0, 2.0, 10.0),
            1.0 - 1.0 / (1.0 + (-10.0f64).exp()),
            epsilon = 1e-15
        );
        // Strictly decreasing in d.
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let v = kernel(i as f64 * 0.2, 3.0, 8.0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn contribution_center_corner_far() {
        let b = Obb::new(0.0, 0.0, 20.0, 10.0, 0.0).unwrap();
        let c = cfg(10.0, 1);
        assert!(contribution(b.center(), &b, &c) > 0.999);
        // Corner: both kernels at their midpoints.
        let corner = b.corners().points()[0];
        assert_relative_eq!(contribution(corner, &b, &c), 0.25, epsilon = 1e-9);
        // Far outside: tails vanish.
        assert!(contribution(Point::new(0.0, 13.0), &b, &c) <= 1e-3);
    }

    #[test]
    fn piou_identity_close_to_one() {
        let b = Obb::new(0.0, 0.0, 20.0, 10.0, 30f64.to_radians()).unwrap();
        let v = piou(&b, &b, &cfg(10.0, 4)).unwrap();
        assert!((v - 1.0).abs() <= 0.1, "piou(b,b) = {v}");
    }

    #[test]
    fn piou_far_boxes_vanish() {
        let a = Obb::new(0.0, 0.0, 10.0, 5.0, 0.3).unwrap();
        let b = Obb::new(100.0, 0.0, 10.0, 5.0, 1.0).unwrap();
        let v = piou(&a, &b, &cfg(10.0, 2)).unwrap();
        assert!(v <= 1e-3, "piou of far boxes = {v}");
    }

    #[test]
    fn piou_offset_squares_near_third() {
        let a = Obb::new(0.0, 0.0, 40.0, 40.0, 0.0).unwrap();
        let b = Obb::new(20.0, 0.0, 40.0, 40.0, 0.0).unwrap();
        let v = piou(&a, &b, &cfg(10.0, 2)).unwrap();
        assert!((v - 1.0 / 3.0).abs() <= 0.03, "piou = {v}");
    }

    #[test]
    fn piou_symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let c = cfg(10.0, 2);
        for _ in 0..20 {
            let a = random_pair_box(&mut rng);
            let b = random_pair_box(&mut rng);
            let ab = piou(&a, &b, &c).unwrap();
            let ba = piou(&b, &a, &c).unwrap();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn piou_budget_error() {
        let a = Obb::new(0.0, 0.0, 1e5, 1e5, 0.0).unwrap();
        let c = PiouConfig { sample_budget: 1_000, ..PiouConfig::default() };
        assert!(matches!(piou(&a, &a, &c), Err(PiouError::SampleBudget { .. })));
    }

    #[test]
    fn loss_values() {
        let a = Obb::new(0.0, 0.0, 20.0, 10.0, 0.5).unwrap();
        let c = cfg(40.0, 4);
        let l = piou_loss(&a, &a, &c).unwrap();
        assert!(l <= 0.11, "identity loss = {l}");

        let far = Obb::new(500.0, 0.0, 20.0, 10.0, 0.0).unwrap();
        let saturated = piou_loss(&a, &far, &c).unwrap();
        assert_relative_eq!(saturated, -(c.eps.ln()), epsilon = 1e-9);
    }

    fn random_pair_box(rng: &mut impl Rng) -> Obb {
        let w: f64 = rng.gen_range(20.0..80.0);
        let h: f64 = rng.gen_range(20.0..w.max(20.0 + 1e-9));
        Obb::new(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            w,
            h.min(w),
            rng.gen_range(0.0..PI),
        )
        .unwrap()
    }

    fn random_overlapping_pair(rng: &mut impl Rng) -> (Obb, Obb) {
        loop {
            let a = random_pair_box(rng);
            let b = random_pair_box(rng);
            if iou_exact(&a, &b) > 0.05 {
                return (a, b);
            }
        }
    }

    #[test]
    fn oracle_agreement_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let c = cfg(10.0, 2);
        let mut worst: f64 = 0.0;
        for _ in 0..30 {
            let (a, b) = random_overlapping_pair(&mut rng);
            let exact = iou_exact(&a, &b);
            let approx = piou(&a, &b, &c).unwrap();
            worst = worst.max((exact - approx).abs());
        }
        assert!(worst <= 0.15, "worst |piou - iou_exact| = {worst}");
    }

    #[test]
    fn convergence_in_k() {
        let a = Obb::new(0.0, 0.0, 40.0, 25.0, 0.4).unwrap();
        let b = Obb::new(6.0, -3.0, 35.0, 22.0, 0.9).unwrap();
        let exact = iou_exact(&a, &b);
        let err = |k: f64| (piou(&a, &b, &cfg(k, 2)).unwrap() - exact).abs();
        let errs: Vec<f64> = [5.0, 10.0, 20.0, 40.0].iter().map(|&k| err(k)).collect();
        assert!(errs[3] <= errs[0] + 1e-6, "no improvement: {errs:?}");
    }

    #[test]
    fn boundary_continuity_across_angle_wrap() {
        let g = Obb::new(0.0, 0.0, 20.0, 10.0, 0.0).unwrap();
        let c = cfg(10.0, 2);
        let p1 = Obb::new(0.0, 0.0, 20.0, 10.0, 175f64.to_radians()).unwrap();
        let p2 = Obb::new(0.0, 0.0, 20.0, 10.0, 5f64.to_radians()).unwrap();
        let l1 = piou_loss(&p1, &g, &c).unwrap();
        let l2 = piou_loss(&p2, &g, &c).unwrap();
        assert!((l1 - l2).abs() <= 1e-3, "losses {l1} vs {l2}");

        // Canonical quotient: equal canonical forms give exactly equal loss.
        let q1 = Obb::new(0.0, 0.0, 20.0, 10.0, PI - 1e-4).unwrap();
        let q2 = Obb::new(0.0, 0.0, 10.0, 20.0, PI - 1e-4 + PI / 2.0).unwrap();
        assert_eq!(
            piou_loss(&q1, &g, &c).unwrap(),
            piou_loss(&q2, &g, &c).unwrap()
        );
    }

    #[test]
    fn gradient_zero_translation_at_identity() {
        let b = Obb::new(0.0, 0.0, 20.0, 10.0, 0.0).unwrap();
        let grad = piou_grad(&b, &b, &cfg(10.0, 2)).unwrap();
        assert!(grad.d_x.abs() <= 1e-6, "d_x = {}", grad.d_x);
        assert!(grad.d_y.abs() <= 1e-6, "d_y = {}", grad.d_y);
    }

    #[test]
    fn gradient_lattice_shift_invariance() {
        let c = cfg(10.0, 2);
        let b = Obb::new(1.5, -2.25, 24.0, 11.0, 0.7).unwrap();
        let g = Obb::new(4.0, 1.0, 22.0, 13.0, 1.1).unwrap();
        let g0 = piou_grad(&b, &g, &c).unwrap();
        let shift = |o: &Obb| {
            Obb::new(o.x() + 7.0, o.y() - 3.0, o.w(), o.h(), o.theta()).unwrap()
        };
        let g1 = piou_grad(&shift(&b), &shift(&g), &c).unwrap();
        for (a, b) in g0.as_array().iter().zip(g1.as_array()) {
            assert!((a - b).abs() <= 1e-9, "shifted gradient differs: {a} vs {b}");
        }
    }

    /// Central finite differences of the loss over a fixed lattice.
    fn fd_grad(b: &Obb, g: &Obb, region: &PixelRegion, c: &PiouConfig) -> [f64; 5] {
        let h = 1e-4;
        let mut out = [0.0; 5];
        let base = b.params();
        for q in 0..5 {
            let mut plus = base;
            let mut minus = base;
            plus[q] += h;
            minus[q] -= h;
            let lp = loss_raw(plus, g, region, c);
            let lm = loss_raw(minus, g, region, c);
            out[q] = (lp - lm) / (2.0 * h);
        }
        out
    }

    /// Loss on raw (non-canonicalized) parameters so the perturbation does
    /// not jump across the canonical quotient.
    fn loss_raw(p: [f64; 5], g: &Obb, region: &PixelRegion, c: &PiouConfig) -> f64 {
        let mut inter = 0.0;
        let (sin_t, cos_t) = p[4].sin_cos();
        region.for_each_sample(|pt| {
            let dx = pt.x - p[0];
            let dy = pt.y - p[1];
            let tw = (dx * sin_t + dy * cos_t).abs();
            let th = (dx * cos_t - dy * sin_t).abs();
            let fb = kernel(tw, p[2] * 0.5, c.k) * kernel(th, p[3] * 0.5, c.k);
            inter += fb * contribution(pt, g, c);
        });
        inter *= region.sample_weight();
        let union = p[2] * p[3] + g.area() - inter;
        -((inter / union).clamp(c.eps, 1.0)).ln()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let c = cfg(10.0, 2);
        for _ in 0..15 {
            let (b, g) = random_overlapping_pair(&mut rng);
            let region = PixelRegion::covering(&b, &g, c.margin, c.resolution);
            let analytic = piou_grad_on_region(&b, &g, &region, &c).unwrap();
            let fd = fd_grad(&b, &g, &region, &c);
            for (a, f) in analytic.as_array().iter().zip(fd) {
                if a.abs() >= 1e-6 {
                    let rel = (a - f).abs() / a.abs().max(f.abs());
                    assert!(rel <= 1e-3, "grad mismatch: analytic {a}, fd {f}");
                }
            }
        }
    }
}
