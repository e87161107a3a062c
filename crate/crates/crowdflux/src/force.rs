//! Anticipatory repulsive forces between characteristic particles.
//!
//! Two particles moving as constant-velocity discs of combined radius `R`
//! either collide at the projected time-to-collision `tau` or never interact.
//! A colliding pair carries the interaction energy
//!
//! ```text
//! E(tau) = k / tau^2 * exp(-tau / tau0)
//! ```
//!
//! and the repulsive force on particle `i` is the negative spatial gradient
//! of that energy with respect to `i`'s position, evaluated through the
//! closed-form `tau`. Pairs with `tau` above `tau_max` are screened out.
//!
//! Sign convention: the per-particle net force is the plain vector sum of its
//! pairwise repulsive forces. Only the magnitude of the net force reaches the
//! feature stage, so any global sign flip cancels downstream.
//!
//! All times are in frames and all lengths in pixels; wall-clock interaction
//! ranges convert to frames via the configured fps.

use std::io::Write;

use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::advect::CharacteristicParticle;

#[derive(Debug, Error)]
pub enum ForceError {
    #[error("tau {tau} below the singularity clamp {tau_min}")]
    TauBelowMin { tau: f64, tau_min: f64 },
    #[error("invalid interaction parameters: {0}")]
    InvalidParams(String),
}

/// Parameters of the pairwise interaction model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionParams {
    /// Energy scale constant.
    pub k: f64,
    /// Intrinsic interaction range, frames.
    pub tau0: f64,
    /// Screening cutoff: pairs with larger time-to-collision are ignored.
    pub tau_max: f64,
    /// Singularity clamp: smaller or negative times-to-collision clamp here.
    pub tau_min: f64,
    /// Combined disc radius of a particle pair, pixels.
    pub radius: f64,
    /// Optional center-distance cutoff for O(n^2) relief; `None` disables it.
    pub spatial_cutoff: Option<f64>,
    /// Optional per-pair force magnitude bound applied when accumulating net
    /// forces. The collision-time gradient diverges for grazing geometry
    /// (the root discriminant appears in its denominator), so raw magnitudes
    /// have an unbounded heavy tail; the cap bounds the feature scale without
    /// touching the pairwise force law itself. `None` disables it.
    pub force_cap: Option<f64>,
}

impl InteractionParams {
    pub fn new(k: f64, tau0: f64, tau_max: f64, tau_min: f64, radius: f64) -> Result<Self, ForceError> {
        let p = Self { k, tau0, tau_max, tau_min, radius, spatial_cutoff: None, force_cap: None };
        p.validate()?;
        Ok(p)
    }

    /// Build params with `tau0` given in seconds, converted to frames.
    /// `tau_max` defaults to `3 * tau0` in frames when not given.
    pub fn from_seconds(
        k: f64,
        tau0_seconds: f64,
        fps: f64,
        tau_max: Option<f64>,
        tau_min: f64,
        radius: f64,
    ) -> Result<Self, ForceError> {
        if fps <= 0.0 {
            return Err(ForceError::InvalidParams(format!("fps {fps} must be positive")));
        }
        let tau0 = tau0_seconds * fps;
        Self::new(k, tau0, tau_max.unwrap_or(3.0 * tau0), tau_min, radius)
    }

    fn validate(&self) -> Result<(), ForceError> {
        let fail = |m: String| Err(ForceError::InvalidParams(m));
        // NaN fails every comparison below, so it is rejected everywhere
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.k) {
            return fail(format!("k {} must be positive", self.k));
        }
        if !positive(self.tau0) {
            return fail(format!("tau0 {} must be positive", self.tau0));
        }
        if !positive(self.tau_max) || self.tau_max <= self.tau0 {
            return fail(format!("tau_max {} must exceed tau0 {}", self.tau_max, self.tau0));
        }
        if !positive(self.tau_min) || self.tau_min >= self.tau_max {
            return fail(format!("tau_min {} must lie in (0, tau_max)", self.tau_min));
        }
        if !positive(self.radius) {
            return fail(format!("radius {} must be positive", self.radius));
        }
        if let Some(cap) = self.force_cap {
            if !positive(cap) {
                return fail(format!("force_cap {cap} must be positive"));
            }
        }
        Ok(())
    }
}

/// Default singularity clamp, frames.
pub const DEFAULT_TAU_MIN: f64 = 0.1;

/// Raw smallest non-negative collision root; `Some(0.0)` for overlapping
/// pairs, `None` when the discs never touch.
fn collision_root(
    p_i: &CharacteristicParticle,
    p_j: &CharacteristicParticle,
    radius: f64,
) -> Option<f64> {
    let w = p_j.position - p_i.position;
    let v = p_j.velocity - p_i.velocity;
    let c = w.dot(&w) - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a = v.dot(&v);
    if a == 0.0 {
        return None;
    }
    let b = w.dot(&v);
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let tau = (-b - disc.sqrt()) / a;
    if tau <= 0.0 {
        None
    } else {
        Some(tau)
    }
}

/// Projected time-to-collision of two constant-velocity discs, frames.
///
/// With `w = x_j - x_i` and `v = v_j - v_i`, the collision time is the
/// smallest positive root of `a t^2 + 2 b t + c = 0` where `a = |v|^2`,
/// `b = w.v`, `c = |w|^2 - R^2`. Returns `None` for diverging or parallel
/// motion; already-overlapping pairs (`c <= 0`) and sub-clamp roots return
/// `tau_min`.
pub fn time_to_collision(
    p_i: &CharacteristicParticle,
    p_j: &CharacteristicParticle,
    params: &InteractionParams,
) -> Option<f64> {
    collision_root(p_i, p_j, params.radius).map(|tau| tau.max(params.tau_min))
}

/// Interaction energy `E(tau)`; zero beyond the `tau_max` screen.
pub fn interaction_energy(tau: f64, params: &InteractionParams) -> Result<f64, ForceError> {
    if tau < params.tau_min {
        return Err(ForceError::TauBelowMin { tau, tau_min: params.tau_min });
    }
    if tau > params.tau_max {
        return Ok(0.0);
    }
    Ok(params.k / (tau * tau) * (-tau / params.tau0).exp())
}

/// dE/dtau on the interacting range.
fn energy_derivative(tau: f64, params: &InteractionParams) -> f64 {
    -params.k * (-tau / params.tau0).exp() * (2.0 / (tau * tau * tau) + 1.0 / (tau * tau * params.tau0))
}

/// Interaction energy of a particle pair; zero when they never collide.
pub fn pair_energy(
    p_i: &CharacteristicParticle,
    p_j: &CharacteristicParticle,
    params: &InteractionParams,
) -> f64 {
    match time_to_collision(p_i, p_j, params) {
        Some(tau) => interaction_energy(tau, params).unwrap_or(0.0),
        None => 0.0,
    }
}

/// A particle at or below this squared speed counts as stationary: it is a
/// background grid point, not a pedestrian, and carries no repulsive
/// interaction. Kept tiny so only exact zero-flow particles qualify.
const STATIONARY_SPEED_SQ: f64 = 1e-18;

/// Repulsive force on `p_i` from `p_j`.
///
/// Computed by the chain rule through the closed-form collision time:
/// `F = dE/dtau * grad_w tau` with `grad_w tau = -(v tau + w) / (a tau + b)`.
/// Zero when either particle is stationary (a background point is not a
/// pedestrian), for non-colliding pairs, beyond the `tau_max` screen, at
/// grazing tangency (`|a tau + b| < 1e-12`) where the gradient degenerates,
/// and for collision times inside the `tau_min` clamp zone, where the
/// clamped energy is constant so its spatial gradient vanishes.
pub fn repulsive_force(
    p_i: &CharacteristicParticle,
    p_j: &CharacteristicParticle,
    params: &InteractionParams,
) -> Vector2<f64> {
    if p_i.velocity.norm_squared() <= STATIONARY_SPEED_SQ
        || p_j.velocity.norm_squared() <= STATIONARY_SPEED_SQ
    {
        return Vector2::zeros();
    }
    let tau = match collision_root(p_i, p_j, params.radius) {
        Some(t) => t,
        None => return Vector2::zeros(),
    };
    if tau < params.tau_min || tau > params.tau_max {
        return Vector2::zeros();
    }
    let w = p_j.position - p_i.position;
    let v = p_j.velocity - p_i.velocity;
    let a = v.dot(&v);
    let b = w.dot(&v);
    let denom = a * tau + b;
    if denom.abs() < 1e-12 {
        return Vector2::zeros();
    }
    let grad_w_tau = -(v * tau + w) / denom;
    grad_w_tau * energy_derivative(tau, params)
}

fn capped(force: Vector2<f64>, cap: Option<f64>) -> Vector2<f64> {
    match cap {
        Some(cap) => {
            let norm = force.norm();
            if norm > cap {
                force * (cap / norm)
            } else {
                force
            }
        }
        None => force,
    }
}

/// Net repulsive force on `p_i` from its neighbors (which must exclude `p_i`).
pub fn net_force(
    p_i: &CharacteristicParticle,
    neighbors: &[CharacteristicParticle],
    params: &InteractionParams,
) -> Vector2<f64> {
    let mut total = Vector2::zeros();
    for p_j in neighbors {
        if let Some(cutoff) = params.spatial_cutoff {
            if (p_j.position - p_i.position).norm() > cutoff {
                continue;
            }
        }
        total += capped(repulsive_force(p_i, p_j, params), params.force_cap);
    }
    total
}

/// Net force magnitude of every particle of one frame, in cell order.
pub fn frame_forces(particles: &[CharacteristicParticle], params: &InteractionParams) -> Vec<f64> {
    particles
        .par_iter()
        .enumerate()
        .map(|(i, p_i)| {
            let mut total = Vector2::zeros();
            for (j, p_j) in particles.iter().enumerate() {
                if i == j {
                    continue;
                }
                if let Some(cutoff) = params.spatial_cutoff {
                    if (p_j.position - p_i.position).norm() > cutoff {
                        continue;
                    }
                }
                total += capped(repulsive_force(p_i, p_j, params), params.force_cap);
            }
            total.norm()
        })
        .collect()
}

/// Append per-frame force rows as `frame,cell,fx,fy,fmag` CSV.
pub fn write_forces_csv<W: Write>(
    out: &mut W,
    frame_index: usize,
    particles: &[CharacteristicParticle],
    params: &InteractionParams,
) -> std::io::Result<()> {
    for (i, p) in particles.iter().enumerate() {
        let mut others: Vec<CharacteristicParticle> = Vec::with_capacity(particles.len() - 1);
        others.extend(particles.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| *p));
        let f = net_force(p, &others, params);
        writeln!(out, "{},{},{},{},{}", frame_index, p.cell_index, f.x, f.y, f.norm())?;
    }
    Ok(())
}

/// CSV header for [`write_forces_csv`].
pub fn forces_csv_header() -> &'static str {
    "frame,cell,fx,fy,fmag"
}
