//! Path simulation: Euler steps for the diffusion part, thinned power-law
//! jumps for the non-local part, first-exit detection with a within-step
//! crossing test, and multiplicative functionals of the potential along the
//! way.
//!
//! The process generated by
//! `L f = 1/2 Σ ∂_i(a_ij ∂_j f) + ∫ [f(y) − f(x)] J(x,y) dy`
//! decomposes as an Itô diffusion `dX = b dt + σ dW` with `σσᵀ = a` and
//! drift `b_j = 1/2 Σ_i ∂_i a_ij`, plus jumps of size `|ξ| > ε` arriving at
//! the finite rate `∫_{|z|>ε} J(x, x+z) dz`. Jumps below the cutoff are
//! folded into the diffusion as an isotropic variance correction
//! (`small_jump_correction`); for the symmetric kernels handled here they
//! carry no drift.

use crate::geom::{self, ExitDomain};
use crate::model::{JumpKernel, ModelError, OperatorModel};
use crate::quad::sphere_area;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("kernel cannot be simulated: {0}")]
    UnsupportedKernel(String),
    #[error("jump proposal rejected {tries} times in a row; envelope far from the kernel")]
    RejectionStall { tries: u32 },
    #[error("kernel exceeds its thinning envelope at displacement scale {scale}: ratio {ratio}")]
    EnvelopeViolated { ratio: f64, scale: f64 },
    #[error("bad path configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tuning knobs for the path sampler. [`PathConfig::for_ball_radius`]
/// scales everything off the domain size.
#[derive(Debug, Clone)]
pub struct PathConfig {
    /// Base Euler step.
    pub dt: f64,
    /// Jump-size cutoff: jumps with `|ξ| > eps` are simulated as events.
    pub eps: f64,
    /// Fold sub-cutoff jumps into the diffusion matrix.
    pub small_jump_correction: bool,
    /// Within-step boundary crossing test for the diffusion part.
    pub bridge_test: bool,
    /// Kernel supported in the unit ball: proposal radii capped at 1.
    pub truncate_jumps: bool,
    /// Paths still inside at this time are recorded as censored.
    pub t_max: f64,
    /// Halve the step while `δ_B(x) < boundary_factor · sqrt(λ_max(a)·dt)`.
    pub boundary_factor: f64,
    /// Cap on halvings per step.
    pub max_halvings: u32,
}

impl PathConfig {
    pub fn for_ball_radius(r: f64) -> Self {
        Self {
            dt: 6.25e-4 * r * r,
            eps: r / 8.0,
            small_jump_correction: true,
            bridge_test: true,
            truncate_jumps: false,
            t_max: 50.0 * r * r,
            boundary_factor: 3.0,
            max_halvings: 6,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::BadConfig(format!("dt = {}", self.dt)));
        }
        if self.eps <= 0.0 || self.eps.is_nan() {
            return Err(SimError::BadConfig(format!("eps = {}", self.eps)));
        }
        if self.truncate_jumps && self.eps >= 1.0 {
            return Err(SimError::BadConfig(format!(
                "truncated kernels live on the unit ball; eps = {} leaves no jumps",
                self.eps
            )));
        }
        if self.t_max <= 0.0 || self.t_max.is_nan() {
            return Err(SimError::BadConfig(format!("t_max = {}", self.t_max)));
        }
        Ok(())
    }
}

/// Everything recorded about one first-exit path.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitRecord {
    /// Where the path fell when it left the domain (on the boundary for
    /// diffusion exits, anywhere outside for jump exits).
    pub exit_pos: Vec<f64>,
    /// Last interior position before the exit move.
    pub pre_exit_pos: Vec<f64>,
    pub tau: f64,
    pub via_jump: bool,
    /// Still inside at `t_max`; `exit_pos` holds the final interior point.
    pub censored: bool,
    /// `∫_0^τ q(X_t) dt` (trapezoid along segments).
    pub q_integral: f64,
    /// `∫_0^τ |q(X_t)| dt`.
    pub abs_q_integral: f64,
    pub steps: u64,
    pub jumps: u64,
}

/// Observers threaded through the path; default methods ignore everything.
pub trait PathHooks {
    /// A diffusion segment from `from` to `to` taking time `dt` (the final,
    /// possibly partial, segment of a path is reported too).
    fn on_segment(&mut self, _from: &[f64], _to: &[f64], _dt: f64) {}
    /// An executed jump.
    fn on_jump(&mut self, _from: &[f64], _to: &[f64]) {}
}

/// No-op hooks.
pub struct NoHooks;
impl PathHooks for NoHooks {}

/// Independent generator for path `path_index` of a run: one master seed,
/// one stream per path. Worker count and scheduling cannot change the
/// numbers a path sees.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

// ---------------------------------------------------------------------------
// Jump machinery
// ---------------------------------------------------------------------------

/// Total intensity of proposed jumps with `|ξ| > eps`, using the kernel's
/// envelope constant. For the default kernel this is the exact event rate
/// `c·s_{d−1}·ε^{−α}/α` (or `c·s_{d−1}·(ε^{−α} − 1)/α` truncated at radius
/// 1); for custom kernels it is the thinning proposal rate.
pub fn jump_rate(
    kernel: &JumpKernel,
    d: usize,
    eps: f64,
    truncated: bool,
) -> Result<f64, SimError> {
    let c_env = kernel.envelope_constant().ok_or_else(|| {
        SimError::UnsupportedKernel(
            "custom kernel without an envelope constant cannot be thinned".into(),
        )
    })?;
    let sd = sphere_area(d);
    let a = kernel.alpha;
    if truncated {
        if eps >= 1.0 {
            return Err(SimError::BadConfig(
                "cutoff at or beyond the truncation radius".into(),
            ));
        }
        Ok(c_env * sd * (eps.powf(-a) - 1.0) / a)
    } else {
        Ok(c_env * sd * eps.powf(-a) / a)
    }
}

/// Proposal radius by inverse CDF of the power law above the cutoff.
#[inline]
fn proposal_radius<R: Rng>(alpha: f64, eps: f64, truncated: bool, rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    if truncated {
        let ea = eps.powf(-alpha);
        (ea - u * (ea - 1.0)).powf(-1.0 / alpha)
    } else {
        eps * u.powf(-1.0 / alpha)
    }
}

/// Uniform direction via normalized Gaussians.
fn uniform_direction<R: Rng>(d: usize, rng: &mut R, out: &mut [f64]) {
    loop {
        let mut n2 = 0.0;
        for v in out.iter_mut().take(d) {
            let z: f64 = rng.sample(StandardNormal);
            *v = z;
            n2 += z * z;
        }
        if n2 > 1e-24 {
            let inv = n2.sqrt().recip();
            for v in out.iter_mut().take(d) {
                *v *= inv;
            }
            return;
        }
    }
}

/// Thinning acceptance ratio for a proposed displacement `xi` from `x`:
/// `J(x, x + ξ) / (c_env·|ξ|^{−d−α})`. Exactly 1 for the default kernel.
fn acceptance_ratio(
    kernel: &JumpKernel,
    c_env: f64,
    x: &[f64],
    xi: &[f64],
    y_scratch: &mut [f64],
) -> f64 {
    match &kernel.custom {
        None => 1.0,
        Some(k) => {
            let d = x.len();
            for i in 0..d {
                y_scratch[i] = x[i] + xi[i];
            }
            let r2 = geom::norm2(xi);
            let envelope = c_env * r2.powf(-(d as f64 + kernel.alpha) / 2.0);
            (k.f)(x, y_scratch) / envelope
        }
    }
}

/// Displacement of one jump of the process *given that a jump occurs at
/// `x`* — proposals from the envelope power law, resampled until accepted.
/// (Path simulation instead thins proposals to keep the event rate exact;
/// this resampling form is the conditional displacement law.)
pub fn sample_jump<R: Rng>(
    kernel: &JumpKernel,
    x: &[f64],
    eps: f64,
    truncated: bool,
    rng: &mut R,
) -> Result<Vec<f64>, SimError> {
    let d = x.len();
    let c_env = kernel.envelope_constant().ok_or_else(|| {
        SimError::UnsupportedKernel(
            "custom kernel without an envelope constant cannot be sampled".into(),
        )
    })?;
    let mut xi = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    const MAX_TRIES: u32 = 100_000;
    for _ in 0..MAX_TRIES {
        uniform_direction(d, rng, &mut xi);
        let r = proposal_radius(kernel.alpha, eps, truncated, rng);
        for v in xi.iter_mut() {
            *v *= r;
        }
        let ratio = acceptance_ratio(kernel, c_env, x, &xi, &mut scratch);
        if ratio > 1.0 + 1e-9 {
            return Err(SimError::EnvelopeViolated { ratio, scale: r });
        }
        if ratio >= 1.0 || rng.random::<f64>() < ratio {
            return Ok(xi);
        }
    }
    Err(SimError::RejectionStall { tries: MAX_TRIES })
}

// ---------------------------------------------------------------------------
// Diffusion machinery
// ---------------------------------------------------------------------------

/// In-place lower Cholesky factor of a small row-major SPD (possibly
/// semi-definite) matrix. Zero pivots are tolerated when their column is
/// numerically zero (degenerate directions of `a`).
fn cholesky_lower(a: &mut [f64], d: usize, probe: &[f64]) -> Result<(), SimError> {
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0f64, f64::max);
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        if s <= 1e-14 * scale {
            if s < -1e-9 * scale.max(1e-300) {
                return Err(SimError::Model(ModelError::NonPositiveDefinite {
                    probe: probe.to_vec(),
                    min_eig: s,
                }));
            }
            a[j * d + j] = 0.0;
            for i in (j + 1)..d {
                a[i * d + j] = 0.0;
            }
            continue;
        }
        let r = s.sqrt();
        a[j * d + j] = r;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / r;
        }
    }
    Ok(())
}

/// Gershgorin upper bound for the largest eigenvalue of a row-major
/// symmetric matrix.
#[inline]
fn gershgorin_max(a: &[f64], d: usize) -> f64 {
    let mut best = 0.0f64;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += a[i * d + j].abs();
        }
        best = best.max(row);
    }
    best
}

/// Variance per unit time contributed by jumps below the cutoff, folded
/// into the diffusion as `+ γ(x)·I` with
/// `γ = c_loc·s_{d−1}·ε^{2−α} / (d·(2−α))`. The local kernel constant
/// `c_loc` is exact (`= c`) for the default kernel and an axis-probe
/// average of `J(x, x+z)·|z|^{d+α}` at `|z| = ε/2` for custom kernels.
fn small_jump_variance(
    kernel: &JumpKernel,
    x: &[f64],
    eps: f64,
    scratch: &mut [f64],
) -> f64 {
    let d = x.len();
    let c_loc = match &kernel.custom {
        None => kernel.c,
        Some(k) => {
            let r = eps / 2.0;
            let mut acc = 0.0;
            for i in 0..d {
                for sign in [-1.0, 1.0] {
                    scratch[..d].copy_from_slice(x);
                    scratch[i] += sign * r;
                    acc += (k.f)(x, &scratch[..d]);
                }
            }
            acc / (2 * d) as f64 * r.powf(d as f64 + kernel.alpha)
        }
    };
    c_loc * sphere_area(d) * eps.powf(2.0 - kernel.alpha) / (d as f64 * (2.0 - kernel.alpha))
}

// ---------------------------------------------------------------------------
// The path loop
// ---------------------------------------------------------------------------

struct Workspace {
    a: Vec<f64>,
    drift: Vec<f64>,
    xi: Vec<f64>,
    xnew: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        Self {
            a: vec![0.0; d * d],
            drift: vec![0.0; d],
            xi: vec![0.0; d],
            xnew: vec![0.0; d],
            scratch: vec![0.0; d],
        }
    }
}

/// Run one path from `start` until it leaves `domain`, is censored at
/// `t_max`, or a model error surfaces.
pub fn simulate_until_exit<D, H, R>(
    model: &OperatorModel,
    domain: &D,
    start: &[f64],
    config: &PathConfig,
    rng: &mut R,
    hooks: &mut H,
) -> Result<ExitRecord, SimError>
where
    D: ExitDomain + ?Sized,
    H: PathHooks,
    R: Rng,
{
    config.validate()?;
    let d = model.d;
    if start.len() != d {
        return Err(SimError::BadConfig(format!(
            "start point has dimension {}, model dimension {}",
            start.len(),
            d
        )));
    }
    if !domain.contains(start) {
        return Err(SimError::BadConfig(
            "start point is not inside the domain".into(),
        ));
    }

    let mut ws = Workspace::new(d);
    // surfacing MissingDerivatives before the loop keeps the hot path clean
    model.a.divergence(start, &mut ws.drift)?;

    let (rate, c_env) = match &model.jump {
        Some(k) => (
            jump_rate(k, d, config.eps, config.truncate_jumps)?,
            k.envelope_constant().unwrap_or(0.0),
        ),
        None => (0.0, 0.0),
    };

    let min_dt = config.dt / f64::from(1u32 << config.max_halvings.min(30));
    let mut x = start.to_vec();
    let mut t = 0.0f64;
    let mut q_int = 0.0f64;
    let mut abs_q_int = 0.0f64;
    let mut q_here = model.q.eval(&x);
    let mut steps = 0u64;
    let mut jumps = 0u64;
    let mut next_jump = if rate > 0.0 {
        let e: f64 = rng.sample(Exp1);
        e / rate
    } else {
        f64::INFINITY
    };

    loop {
        if t >= config.t_max {
            return Ok(ExitRecord {
                exit_pos: x.clone(),
                pre_exit_pos: x,
                tau: t,
                via_jump: false,
                censored: true,
                q_integral: q_int,
                abs_q_integral: abs_q_int,
                steps,
                jumps,
            });
        }

        // diffusion matrix at x (with the sub-cutoff jump variance folded in)
        model.a_at(&x, &mut ws.a);
        if config.small_jump_correction {
            if let Some(k) = &model.jump {
                let gamma = small_jump_variance(k, &x, config.eps, &mut ws.scratch);
                for i in 0..d {
                    ws.a[i * d + i] += gamma;
                }
            }
        }
        let lam = gershgorin_max(&ws.a, d);

        // step size: halve near the boundary, stop at t_max and jump times
        let mut dt_eff = config.dt;
        if lam > 0.0 {
            let delta = domain.boundary_distance(&x);
            while dt_eff > min_dt
                && delta < config.boundary_factor * (lam * dt_eff).sqrt()
            {
                dt_eff *= 0.5;
            }
        }
        dt_eff = dt_eff.min(config.t_max - t);
        let jump_at_end = next_jump <= t + dt_eff;
        if jump_at_end {
            dt_eff = (next_jump - t).max(0.0);
        }

        // Euler move over dt_eff
        if dt_eff > 0.0 {
            steps += 1;
            model.a.divergence(&x, &mut ws.drift)?;
            cholesky_lower(&mut ws.a, d, &x)?;
            for v in ws.xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let sdt = dt_eff.sqrt();
            for (i, xn) in ws.xnew.iter_mut().enumerate() {
                let mut noise = 0.0;
                for k in 0..=i {
                    noise += ws.a[i * d + k] * ws.xi[k];
                }
                *xn = x[i] + 0.5 * ws.drift[i] * dt_eff + sdt * noise;
            }

            if !domain.contains(&ws.xnew) {
                let (exit, frac) = domain.project_exit(&x, &ws.xnew);
                let dtau = frac * dt_eff;
                let q_exit = model.q.eval(&exit);
                q_int += 0.5 * (q_here + q_exit) * dtau;
                abs_q_int += 0.5 * (q_here.abs() + q_exit.abs()) * dtau;
                hooks.on_segment(&x, &exit, dtau);
                return Ok(ExitRecord {
                    exit_pos: exit,
                    pre_exit_pos: x,
                    tau: t + dtau,
                    via_jump: false,
                    censored: false,
                    q_integral: q_int,
                    abs_q_integral: abs_q_int,
                    steps,
                    jumps,
                });
            }

            if config.bridge_test {
                // both endpoints inside: the within-step crossing
                // probability of the bridge is ≈ exp(−2·δ₀δ₁/(σ_n²·dt))
                let d0 = domain.boundary_distance(&x);
                let d1 = domain.boundary_distance(&ws.xnew);
                let sigma2 = match domain.boundary_normal(&x) {
                    Some(n) => {
                        let mut acc = 0.0;
                        // ws.a now holds the Cholesky factor; the quadratic
                        // form is nᵀ(LLᵀ)n = |Lᵀn|²
                        for i in 0..d {
                            let mut li = 0.0;
                            for (k, nk) in n.iter().enumerate().skip(i) {
                                li += ws.a[k * d + i] * nk;
                            }
                            acc += li * li;
                        }
                        acc
                    }
                    None => lam,
                };
                if sigma2 > 0.0 && d0 > 0.0 && d1 > 0.0 {
                    let p = (-2.0 * d0 * d1 / (sigma2 * dt_eff)).exp();
                    if p > 1e-16 && rng.random::<f64>() < p {
                        // mid-step excursion across the boundary
                        for (s, (xi, ni)) in
                            ws.scratch.iter_mut().zip(x.iter().zip(&ws.xnew))
                        {
                            *s = 0.5 * (xi + ni);
                        }
                        let exit = domain.nearest_boundary_point(&ws.scratch);
                        let dtau = 0.5 * dt_eff;
                        let q_exit = model.q.eval(&exit);
                        q_int += 0.5 * (q_here + q_exit) * dtau;
                        abs_q_int += 0.5 * (q_here.abs() + q_exit.abs()) * dtau;
                        hooks.on_segment(&x, &exit, dtau);
                        return Ok(ExitRecord {
                            exit_pos: exit,
                            pre_exit_pos: x,
                            tau: t + dtau,
                            via_jump: false,
                            censored: false,
                            q_integral: q_int,
                            abs_q_integral: abs_q_int,
                            steps,
                            jumps,
                        });
                    }
                }
            }

            let q_new = model.q.eval(&ws.xnew);
            q_int += 0.5 * (q_here + q_new) * dt_eff;
            abs_q_int += 0.5 * (q_here.abs() + q_new.abs()) * dt_eff;
            hooks.on_segment(&x, &ws.xnew, dt_eff);
            t += dt_eff;
            std::mem::swap(&mut x, &mut ws.xnew);
            q_here = q_new;
        }

        if jump_at_end {
            t = next_jump;
            let kernel = model.jump.as_ref().expect("jump event without a kernel");
            uniform_direction(d, rng, &mut ws.xi);
            let r = proposal_radius(kernel.alpha, config.eps, config.truncate_jumps, rng);
            for v in ws.xi.iter_mut() {
                *v *= r;
            }
            let ratio = acceptance_ratio(kernel, c_env, &x, &ws.xi, &mut ws.xnew);
            if ratio > 1.0 + 1e-9 {
                return Err(SimError::EnvelopeViolated { ratio, scale: r });
            }
            let accept = ratio >= 1.0 || rng.random::<f64>() < ratio;
            if accept {
                jumps += 1;
                for (n, (xi, ji)) in ws.xnew.iter_mut().zip(x.iter().zip(&ws.xi)) {
                    *n = xi + ji;
                }
                hooks.on_jump(&x, &ws.xnew);
                if !domain.contains(&ws.xnew) {
                    return Ok(ExitRecord {
                        exit_pos: ws.xnew.clone(),
                        pre_exit_pos: x,
                        tau: t,
                        via_jump: true,
                        censored: false,
                        q_integral: q_int,
                        abs_q_integral: abs_q_int,
                        steps,
                        jumps,
                    });
                }
                std::mem::swap(&mut x, &mut ws.xnew);
                q_here = model.q.eval(&x);
            }
            let e: f64 = rng.sample(Exp1);
            next_jump = t + e / rate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BallDomain;
    use crate::model::{CustomKernel, Potential};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn ball04() -> BallDomain {
        BallDomain::new(vec![0.0; 3], 0.4).unwrap()
    }

    #[test]
    fn jump_rate_closed_forms() {
        // c = 1, α = 1, ε = 1, d = 3: rate = s₂·ε^{−1}/1 = 4π
        let k = JumpKernel::default_kernel(1.0, 1.0).unwrap();
        assert!((jump_rate(&k, 3, 1.0, false).unwrap() - 4.0 * PI).abs() < 1e-12);
        // c = 1, α = 1/2, ε = 1/4: 4π·(1/4)^{−1/2}/(1/2) = 16π
        let k = JumpKernel::default_kernel(1.0, 0.5).unwrap();
        assert!((jump_rate(&k, 3, 0.25, false).unwrap() - 16.0 * PI).abs() < 1e-11);
        // truncated at radius 1: 4π·((1/4)^{−1/2} − 1)/(1/2) = 8π
        assert!((jump_rate(&k, 3, 0.25, true).unwrap() - 8.0 * PI).abs() < 1e-11);
    }

    #[test]
    fn proposal_radius_law_matches_power_tail() {
        // P(r > s) = (ε/s)^α  ⇒  E log(r/ε) = 1/α
        let mut rng = path_rng(11, 0);
        let alpha = 1.3;
        let eps = 0.05;
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += (proposal_radius(alpha, eps, false, &mut rng) / eps).ln();
        }
        let mean = acc / n as f64;
        assert!(
            (mean - 1.0 / alpha).abs() < 5e-3,
            "E log(r/eps) = {mean}, expected {}",
            1.0 / alpha
        );
        // truncated law stays inside (eps, 1) and matches its median:
        // F(m) = 1/2 with F(r) = (ε^{−α} − r^{−α})/(ε^{−α} − 1)
        let mut below = 0;
        let ea = eps.powf(-alpha);
        let median = (0.5 * (ea + 1.0)).powf(-1.0 / alpha);
        for _ in 0..n {
            let r = proposal_radius(alpha, eps, true, &mut rng);
            assert!(r > eps * 0.999 && r <= 1.0);
            if r < median {
                below += 1;
            }
        }
        let frac = below as f64 / n as f64;
        assert!((frac - 0.5).abs() < 5e-3, "median split {frac}");
    }

    #[test]
    fn uniform_direction_is_isotropic() {
        let mut rng = path_rng(12, 0);
        let mut dir = vec![0.0; 3];
        let n = 100_000;
        let mut mean = [0.0; 3];
        let mut z2 = 0.0;
        for _ in 0..n {
            uniform_direction(3, &mut rng, &mut dir);
            for i in 0..3 {
                mean[i] += dir[i];
            }
            z2 += dir[2] * dir[2];
        }
        for m in mean {
            assert!((m / n as f64).abs() < 0.01);
        }
        // E z² = 1/3 on the unit sphere in d = 3
        assert!((z2 / n as f64 - 1.0 / 3.0).abs() < 5e-3);
    }

    #[test]
    fn brownian_exit_time_matches_classical_formula() {
        // ½Δ in B(0, R): E^x τ = (R² − |x|²)/d.
        let model = OperatorModel::preset_brownian_diagnostic(3);
        let ball = ball04();
        let mut cfg = PathConfig::for_ball_radius(0.4);
        cfg.dt = 1e-4;
        let n = 20_000;
        let mut stats = crate::stats::RunningStats::new();
        for i in 0..n {
            let mut rng = path_rng(1001, i);
            let rec =
                simulate_until_exit(&model, &ball, &[0.0; 3], &cfg, &mut rng, &mut NoHooks)
                    .unwrap();
            assert!(!rec.censored);
            assert!(!rec.via_jump);
            // diffusion exits land on the sphere
            assert!((geom::norm(&rec.exit_pos) - 0.4).abs() < 1e-9);
            stats.push(rec.tau);
        }
        let expect = 0.16 / 3.0;
        let err = (stats.mean() - expect).abs();
        assert!(
            err < 4.0 * stats.stderr() + 7e-4,
            "mean exit time {} vs {} (stderr {})",
            stats.mean(),
            expect,
            stats.stderr()
        );
        // second moment check: Var τ = 2R⁴/45 from the center
        let var_expect = 2.0 * 0.4f64.powi(4) / 45.0;
        assert!(
            (stats.variance() - var_expect).abs() < 0.08 * var_expect,
            "variance {} vs {var_expect}",
            stats.variance()
        );
    }

    #[test]
    fn brownian_exit_time_off_center() {
        let model = OperatorModel::preset_brownian_diagnostic(3);
        let ball = ball04();
        let mut cfg = PathConfig::for_ball_radius(0.4);
        cfg.dt = 1e-4;
        let n = 20_000;
        let mut stats = crate::stats::RunningStats::new();
        for i in 0..n {
            let mut rng = path_rng(1002, i);
            let rec = simulate_until_exit(
                &model,
                &ball,
                &[0.2, 0.0, 0.0],
                &cfg,
                &mut rng,
                &mut NoHooks,
            )
            .unwrap();
            stats.push(rec.tau);
        }
        let expect = (0.16 - 0.04) / 3.0;
        assert!(
            (stats.mean() - expect).abs() < 4.0 * stats.stderr() + 6e-4,
            "mean {} vs {expect}",
            stats.mean()
        );
    }

    #[test]
    fn paths_are_deterministic_per_stream() {
        let model = OperatorModel::preset_variable_spd(3);
        let ball = ball04();
        let cfg = PathConfig::for_ball_radius(0.4);
        let run = |seed, stream| {
            let mut rng = path_rng(seed, stream);
            simulate_until_exit(&model, &ball, &[0.1, 0.0, 0.0], &cfg, &mut rng, &mut NoHooks)
                .unwrap()
        };
        assert_eq!(run(7, 3), run(7, 3));
        assert_ne!(run(7, 3), run(7, 4));
        assert_ne!(run(7, 3), run(8, 3));
    }

    #[test]
    fn constant_potential_integral_is_exact() {
        let model = OperatorModel::preset_brownian_diagnostic(3).with_q(Potential::Const(-0.7));
        let ball = ball04();
        let cfg = PathConfig::for_ball_radius(0.4);
        let mut rng = path_rng(55, 9);
        let rec =
            simulate_until_exit(&model, &ball, &[0.0; 3], &cfg, &mut rng, &mut NoHooks).unwrap();
        assert!((rec.q_integral - (-0.7) * rec.tau).abs() < 1e-12);
        assert!((rec.abs_q_integral - 0.7 * rec.tau).abs() < 1e-12);
    }

    #[test]
    fn hooks_account_for_all_time_and_jumps() {
        struct Acc {
            time: f64,
            jumps: u64,
            segments: u64,
        }
        impl PathHooks for Acc {
            fn on_segment(&mut self, _f: &[f64], _t: &[f64], dt: f64) {
                self.time += dt;
                self.segments += 1;
            }
            fn on_jump(&mut self, _f: &[f64], _t: &[f64]) {
                self.jumps += 1;
            }
        }
        let model = OperatorModel::preset_variable_spd(3);
        let ball = ball04();
        let cfg = PathConfig::for_ball_radius(0.4);
        for stream in 0..32 {
            let mut rng = path_rng(77, stream);
            let mut acc = Acc {
                time: 0.0,
                jumps: 0,
                segments: 0,
            };
            let rec =
                simulate_until_exit(&model, &ball, &[0.05, -0.1, 0.0], &cfg, &mut rng, &mut acc)
                    .unwrap();
            assert!((acc.time - rec.tau).abs() < 1e-12 * rec.tau.max(1.0));
            assert_eq!(acc.jumps, rec.jumps);
            assert!(acc.segments <= rec.steps);
        }
    }

    #[test]
    fn pure_jump_paths_exit_by_jumping() {
        let model = OperatorModel::preset_stable_diagnostic(3, 1.0);
        let ball = ball04();
        let mut cfg = PathConfig::for_ball_radius(0.4);
        cfg.small_jump_correction = false; // keep the motion purely discrete
        let mut exits = 0;
        for stream in 0..200 {
            let mut rng = path_rng(91, stream);
            let rec =
                simulate_until_exit(&model, &ball, &[0.0; 3], &cfg, &mut rng, &mut NoHooks)
                    .unwrap();
            if rec.censored {
                continue;
            }
            exits += 1;
            assert!(rec.via_jump, "a = 0 paths can only exit by jumping");
            assert!(geom::norm(&rec.exit_pos) >= 0.4);
            assert!(geom::norm(&rec.pre_exit_pos) < 0.4);
            assert!(rec.jumps >= 1);
        }
        assert!(exits >= 195, "stable paths leave the ball quickly");
    }

    #[test]
    fn thinned_kernel_halves_the_jump_count() {
        // J = θ·|x−y|^{−d−α} under an envelope of 1 accepts a θ fraction of
        // proposals: the executed-jump rate must scale by θ.
        let theta = 0.5;
        let mk = |custom: bool| {
            let mut k = JumpKernel::default_kernel(1.0, 1.0).unwrap();
            if custom {
                k = JumpKernel {
                    c: theta,
                    alpha: 1.0,
                    custom: Some(CustomKernel {
                        f: Arc::new(move |x: &[f64], y: &[f64]| {
                            theta * geom::dist2(x, y).powf(-2.0)
                        }),
                        envelope: Some(1.0),
                    }),
                };
            }
            let mut m = OperatorModel::preset_identity(3);
            m.jump = Some(k);
            m
        };
        let ball = ball04();
        let cfg = PathConfig::for_ball_radius(0.4);
        let count_jumps = |model: &OperatorModel, seed| {
            let mut jumps = 0u64;
            let mut time = 0.0;
            for stream in 0..4000 {
                let mut rng = path_rng(seed, stream);
                let rec =
                    simulate_until_exit(model, &ball, &[0.0; 3], &cfg, &mut rng, &mut NoHooks)
                        .unwrap();
                jumps += rec.jumps;
                time += rec.tau;
            }
            jumps as f64 / time
        };
        let full = count_jumps(&mk(false), 5);
        let thin = count_jumps(&mk(true), 5);
        let ratio = thin / full;
        assert!(
            (ratio - theta).abs() < 0.05,
            "executed-jump rate ratio {ratio}, want ≈ {theta}"
        );
    }

    #[test]
    fn censoring_fires_at_t_max() {
        let model = OperatorModel::preset_brownian_diagnostic(3);
        let ball = ball04();
        let mut cfg = PathConfig::for_ball_radius(0.4);
        cfg.t_max = 1e-4; // far below the mean exit time
        let mut rng = path_rng(3, 0);
        let rec =
            simulate_until_exit(&model, &ball, &[0.0; 3], &cfg, &mut rng, &mut NoHooks).unwrap();
        assert!(rec.censored);
        assert!((rec.tau - 1e-4).abs() < 1e-12);
        assert!(ball.contains(&rec.exit_pos));
    }

    #[test]
    fn bridge_test_removes_monitoring_bias() {
        // Discrete monitoring overestimates exit times; the within-step
        // crossing test must shorten them. Same streams on both runs.
        let model = OperatorModel::preset_brownian_diagnostic(3);
        let ball = ball04();
        let mut with = PathConfig::for_ball_radius(0.4);
        with.dt = 4e-4; // coarse step so the effect dominates noise
        let mut without = with.clone();
        without.bridge_test = false;
        let expect = 0.16 / 3.0;
        let mean_tau = |cfg: &PathConfig| {
            let mut s = crate::stats::RunningStats::new();
            for stream in 0..30_000 {
                let mut rng = path_rng(222, stream);
                let rec =
                    simulate_until_exit(&model, &ball, &[0.0; 3], cfg, &mut rng, &mut NoHooks)
                        .unwrap();
                s.push(rec.tau);
            }
            s.mean()
        };
        let tau_with = mean_tau(&with);
        let tau_without = mean_tau(&without);
        assert!(
            tau_with < tau_without,
            "bridge {tau_with} should undercut plain monitoring {tau_without}"
        );
        assert!(
            (tau_with - expect).abs() < (tau_without - expect).abs(),
            "bridge {tau_with} vs plain {tau_without}, target {expect}"
        );
    }

    #[test]
    fn rejects_bad_configs_and_starts() {
        let model = OperatorModel::preset_brownian_diagnostic(3);
        let ball = ball04();
        let cfg = PathConfig::for_ball_radius(0.4);
        let mut rng = path_rng(1, 1);
        let outside = simulate_until_exit(
            &model,
            &ball,
            &[0.5, 0.0, 0.0],
            &cfg,
            &mut rng,
            &mut NoHooks,
        );
        assert!(matches!(outside, Err(SimError::BadConfig(_))));
        let mut bad = cfg.clone();
        bad.dt = 0.0;
        assert!(matches!(
            simulate_until_exit(&model, &ball, &[0.0; 3], &bad, &mut rng, &mut NoHooks),
            Err(SimError::BadConfig(_))
        ));
        let mut trunc = cfg.clone();
        trunc.truncate_jumps = true;
        trunc.eps = 1.5;
        assert!(matches!(
            simulate_until_exit(&model, &ball, &[0.0; 3], &trunc, &mut rng, &mut NoHooks),
            Err(SimError::BadConfig(_))
        ));
    }

    #[test]
    fn custom_kernel_without_envelope_is_unsupported() {
        let mut model = OperatorModel::preset_identity(3);
        model.jump = Some(JumpKernel {
            c: 1.0,
            alpha: 1.0,
            custom: Some(CustomKernel {
                f: Arc::new(|x: &[f64], y: &[f64]| geom::dist2(x, y).powf(-2.0)),
                envelope: None,
            }),
        });
        let ball = ball04();
        let cfg = PathConfig::for_ball_radius(0.4);
        let mut rng = path_rng(1, 1);
        assert!(matches!(
            simulate_until_exit(&model, &ball, &[0.0; 3], &cfg, &mut rng, &mut NoHooks),
            Err(SimError::UnsupportedKernel(_))
        ));
    }

    #[test]
    fn envelope_violation_is_detected() {
        let mut model = OperatorModel::preset_identity(3);
        model.jump = Some(JumpKernel {
            c: 1.0,
            alpha: 1.0,
            custom: Some(CustomKernel {
                f: Arc::new(|x: &[f64], y: &[f64]| 3.0 * geom::dist2(x, y).powf(-2.0)),
                envelope: Some(1.0), // lies: true constant is 3
            }),
        });
        let ball = ball04();
        let cfg = PathConfig::for_ball_radius(0.4);
        let mut hit = false;
        for stream in 0..50 {
            let mut rng = path_rng(13, stream);
            if matches!(
                simulate_until_exit(&model, &ball, &[0.0; 3], &cfg, &mut rng, &mut NoHooks),
                Err(SimError::EnvelopeViolated { .. })
            ) {
                hit = true;
                break;
            }
        }
        assert!(hit, "violated envelope must surface as an error");
    }

    #[test]
    fn sample_jump_resamples_until_accept() {
        let theta = 0.3;
        let kernel = JumpKernel {
            c: theta,
            alpha: 1.0,
            custom: Some(CustomKernel {
                f: Arc::new(move |x: &[f64], y: &[f64]| theta * geom::dist2(x, y).powf(-2.0)),
                envelope: Some(1.0),
            }),
        };
        let mut rng = path_rng(2, 2);
        // the conditional law of |ξ| is unchanged by constant thinning
        let n = 50_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let xi = sample_jump(&kernel, &[0.0; 3], 0.05, false, &mut rng).unwrap();
            acc += (geom::norm(&xi) / 0.05).ln();
        }
        assert!((acc / n as f64 - 1.0).abs() < 1e-2);
    }

    #[test]
    fn missing_derivatives_surface_before_stepping() {
        use crate::model::DiffusionField;
        let model = OperatorModel {
            d: 3,
            a: DiffusionField::Custom {
                a: Arc::new(|_x: &[f64], out: &mut [f64]| {
                    out.fill(0.0);
                    for i in 0..3 {
                        out[i * 3 + i] = 1.0;
                    }
                }),
                div_a: None,
            },
            jump: None,
            q: Potential::Zero,
            diagnostic: true,
        };
        let ball = ball04();
        let cfg = PathConfig::for_ball_radius(0.4);
        let mut rng = path_rng(1, 0);
        assert!(matches!(
            simulate_until_exit(&model, &ball, &[0.0; 3], &cfg, &mut rng, &mut NoHooks),
            Err(SimError::Model(ModelError::MissingDerivatives))
        ));
    }
}
