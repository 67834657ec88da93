//! Gradient-descent box-regression harness.
//!
//! Fits a predicted box to a ground-truth box by plain gradient descent on
//! either the pixel-based IoU loss or the smooth-L1 parameter-distance
//! baseline, and exposes an angle sweep for inspecting loss continuity at
//! the angle-definition boundary.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geom::{angle_distance, GeomError, Obb};
use crate::piou::{piou_grad, piou_loss, Grad5, PiouConfig, PiouError};
use crate::polyclip::iou_exact;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Piou(#[from] PiouError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Piou,
    SmoothL1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub loss: LossKind,
    /// Step size for x and y, in pixels.
    pub step_translation: f64,
    /// Step size for w and h, in pixels.
    pub step_extent: f64,
    /// Step size for theta, in radians.
    pub step_angle: f64,
    pub max_steps: usize,
    /// Exact-IoU threshold at which the fit counts as converged.
    pub iou_threshold: f64,
    pub seed: u64,
    /// When fitting with smooth L1, alternate the target encoding between
    /// (w, h, theta) and (h, w, theta + 90 deg) per step, mimicking the
    /// representation ambiguity a regressor faces for near-square targets.
    pub ambiguous_target: bool,
    pub beta: f64,
    pub piou: PiouConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Piou,
            step_translation: 0.5,
            step_extent: 0.2,
            step_angle: 0.01,
            max_steps: 500,
            iou_threshold: 0.9,
            seed: 0,
            ambiguous_target: false,
            beta: 1.0,
            piou: PiouConfig::default(),
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<(), FitError> {
        if self.step_translation <= 0.0 || self.step_extent <= 0.0 || self.step_angle <= 0.0 {
            return Err(FitError::InvalidConfig("step sizes must be positive".into()));
        }
        if self.max_steps < 1 {
            return Err(FitError::InvalidConfig("max_steps must be >= 1".into()));
        }
        if self.beta <= 0.0 {
            return Err(FitError::InvalidConfig("beta must be positive".into()));
        }
        Ok(())
    }
}

/// One recorded optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStep {
    pub step: usize,
    pub obb: Obb,
    pub loss: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub steps: Vec<FitStep>,
    pub converged: bool,
    pub final_iou: f64,
    /// Angular error between the final box and the target, modulo the box's
    /// 180-degree symmetry.
    pub angle_error: f64,
    /// True when the initial box had no usable overlap with the target, so
    /// the pixel-loss gradient started saturated.
    pub saturated_start: bool,
}

/// Smooth L1 on raw 5-parameter differences, with its gradient w.r.t. the
/// prediction. No angle wrap-around is applied; the discontinuity at the
/// canonical-angle boundary is the behavior under study.
pub fn smooth_l1_raw(pred: [f64; 5], target: [f64; 5], beta: f64) -> (f64, [f64; 5]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 5];
    for i in 0..5 {
        let d = pred[i] - target[i];
        if d.abs() < beta {
            loss += 0.5 * d * d / beta;
            grad[i] = d / beta;
        } else {
            loss += d.abs() - 0.5 * beta;
            grad[i] = d.signum();
        }
    }
    (loss, grad)
}

/// Smooth L1 between two boxes' canonical parameters.
pub fn smooth_l1(b: &Obb, g: &Obb, beta: f64) -> (f64, Grad5) {
    let (loss, grad) = smooth_l1_raw(b.params(), g.params(), beta);
    (loss, Grad5::from_array(grad))
}

fn descend(params: &mut [f64; 5], grad: &[f64; 5], cfg: &FitConfig) {
    params[0] -= cfg.step_translation * grad[0];
    params[1] -= cfg.step_translation * grad[1];
    params[2] -= cfg.step_extent * grad[2];
    params[3] -= cfg.step_extent * grad[3];
    params[4] -= cfg.step_angle * grad[4];
    // Keep the iterate a valid box even under a bad step.
    params[2] = params[2].max(1e-3);
    params[3] = params[3].max(1e-3);
}

/// Plain gradient descent of `init` toward `g` under the configured loss.
///
/// Deterministic given `(g, init, cfg)`. The trace records the state before
/// each applied step plus the final state; it stops as soon as the exact IoU
/// reaches the convergence threshold.
pub fn fit(g: &Obb, init: &Obb, cfg: &FitConfig) -> Result<FitTrace, FitError> {
    cfg.validate()?;
    let saturated_start = cfg.loss == LossKind::Piou && iou_exact(init, g) < 0.01;

    let mut steps: Vec<FitStep> = Vec::new();
    let mut current = *init;
    // Raw parameter state; for smooth L1 it deliberately evolves without
    // re-canonicalization after the initial step.
    let mut params = init.params();
    let mut converged = false;

    // Entry i is the state before the i-th update; the trace holds at most
    // max_steps entries.
    for step in 0..cfg.max_steps {
        let iou = iou_exact(&current, g);
        let (loss, grad) = match cfg.loss {
            LossKind::Piou => {
                let l = piou_loss(&current, g, &cfg.piou)?;
                let gr = piou_grad(&current, g, &cfg.piou)?;
                (l, gr.as_array())
            }
            LossKind::SmoothL1 => {
                let target = smooth_l1_target(g, step, cfg);
                let (l, gr) = smooth_l1_raw(params, target, cfg.beta);
                (l, gr)
            }
        };
        steps.push(FitStep { step, obb: current, loss, iou });
        if iou >= cfg.iou_threshold {
            converged = true;
            break;
        }
        if step + 1 == cfg.max_steps {
            break;
        }
        descend(&mut params, &grad, cfg);
        current = Obb::from_params(params)?;
        if cfg.loss == LossKind::Piou {
            // The pixel loss lives on the canonical quotient.
            params = current.params();
        }
    }

    let last = steps.last().expect("trace is never empty");
    Ok(FitTrace {
        final_iou: last.iou,
        angle_error: angle_distance(last.obb.theta(), g.theta()),
        converged,
        saturated_start,
        steps,
    })
}

fn smooth_l1_target(g: &Obb, step: usize, cfg: &FitConfig) -> [f64; 5] {
    let [x, y, w, h, t] = g.params();
    if cfg.ambiguous_target && step % 2 == 1 {
        [x, y, h, w, t + FRAC_PI_2]
    } else {
        [x, y, w, h, t]
    }
}

/// One row of a boundary sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    /// Angle of the prediction before canonicalization, radians.
    pub angle: f64,
    pub piou_loss: f64,
    pub smooth_l1: f64,
}

/// Evaluate both losses for predictions equal to `g` with the angle
/// overridden (then canonicalized), one row per requested angle.
pub fn boundary_sweep(
    g: &Obb,
    angles: &[f64],
    piou_cfg: &PiouConfig,
    beta: f64,
) -> Result<Vec<SweepRow>, FitError> {
    let mut rows = Vec::with_capacity(angles.len());
    for &angle in angles {
        let pred = Obb::new(g.x(), g.y(), g.w(), g.h(), angle)?;
        let pl = piou_loss(&pred, g, piou_cfg)?;
        let (sl, _) = smooth_l1(&pred, g, beta);
        rows.push(SweepRow { angle, piou_loss: pl, smooth_l1: sl });
    }
    Ok(rows)
}

/// CSV with header `step,x,y,w,h,theta_deg,loss,iou`.
pub fn trace_csv(trace: &FitTrace) -> String {
    let mut out = String::from("step,x,y,w,h,theta_deg,loss,iou\n");
    for s in &trace.steps {
        let b = &s.obb;
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.step,
            b.x(),
            b.y(),
            b.w(),
            b.h(),
            b.theta().to_degrees(),
            s.loss,
            s.iou
        )
        .expect("write to string");
    }
    out
}

/// CSV with header `angle_deg,piou_loss,smooth_l1`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("angle_deg,piou_loss,smooth_l1\n");
    for r in rows {
        writeln!(
            out,
            "{:.6},{:.6},{:.6}",
            r.angle.to_degrees(),
            r.piou_loss,
            r.smooth_l1
        )
        .expect("write to string");
    }
    out
}
