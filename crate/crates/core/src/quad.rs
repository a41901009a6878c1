//! Deterministic quadrature utilities: sphere constants and point sets,
//! adaptive Simpson integration, and the radial integrals of power-law jump
//! kernels against balls (cap-fraction reduction).

use std::f64::consts::PI;

/// Surface area of the unit sphere `S^{d−1}`, `2 π^{d/2} / Γ(d/2)`, for
/// integer `d ≥ 1` (closed form via the integer/half-integer gamma values).
pub fn sphere_area(d: usize) -> f64 {
    let gamma_half = |two_z: usize| -> f64 {
        // Γ(z) for z = two_z / 2
        if two_z.is_multiple_of(2) {
            let z = two_z / 2;
            (1..z).map(|k| k as f64).product::<f64>() // (z−1)!
        } else {
            // Γ(1/2 + m) = (2m)! / (4^m m!) · sqrt(π)
            let m = (two_z - 1) / 2;
            let mut v = PI.sqrt();
            for k in 0..m {
                v *= 0.5 + k as f64;
            }
            v
        }
    };
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d)
}

/// Volume of the ball of radius `r` in `R^d`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    sphere_area(d) / d as f64 * r.powi(d as i32)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + rec(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, fa, b, fb, fm);
    rec(f, a, fa, b, fb, fm, whole, tol, max_depth)
}

/// Gauss–Legendre nodes and weights on `[−1, 1]` (Newton on the Legendre
/// polynomial; standard construction).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e−9; ample for low-discrepancy direction sets).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inverse_normal_cdf(1.0 - p)
    }
}

/// Deterministic quadrature point set on `S^{d−1}` with equal weights
/// summing to 1 (a spherical average rule).
///
/// For `d = 3` this is a product rule: Gauss–Legendre in the polar cosine ×
/// uniform azimuth (exact for high-degree smooth integrands). For other `d`
/// it maps a Halton sequence through the normal quantile and normalizes.
pub fn sphere_average_rule(d: usize, level: usize) -> Vec<(Vec<f64>, f64)> {
    if d == 3 {
        let n_polar = 4 * (level + 1);
        let n_az = 2 * n_polar;
        let (xs, ws) = gauss_legendre(n_polar);
        let mut out = Vec::with_capacity(n_polar * n_az);
        for (t, wt) in xs.iter().zip(&ws) {
            let s = (1.0 - t * t).max(0.0).sqrt();
            for k in 0..n_az {
                let az = 2.0 * PI * (k as f64 + 0.5) / n_az as f64;
                out.push((
                    vec![s * az.cos(), s * az.sin(), *t],
                    wt / 2.0 / n_az as f64,
                ));
            }
        }
        out
    } else {
        let n = 128 * (level + 1) * (level + 1);
        let bases = [2u64, 3, 5, 7, 11, 13, 17, 19];
        assert!(d <= bases.len());
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut v: Vec<f64> = (0..d)
                .map(|k| {
                    let u = crate::geom::radical_inverse(i as u64 + 1, bases[k]);
                    inverse_normal_cdf(u.clamp(1e-12, 1.0 - 1e-12))
                })
                .collect();
            let nv = crate::geom::norm(&v);
            if nv < 1e-12 {
                v[0] = 1.0;
            } else {
                for x in v.iter_mut() {
                    *x /= nv;
                }
            }
            out.push((v, 1.0 / n as f64));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Cap fractions and radial kernel integrals (d = 3 geometry)
// ---------------------------------------------------------------------------

/// Fraction of the sphere `S(x, s)` lying inside the ball `B(center, rho_b)`
/// where `rho` = |x − center|, for `d = 3` (uniform polar cosine).
#[inline]
pub fn cap_fraction_inside(rho: f64, s: f64, rho_b: f64) -> f64 {
    // y = x + s·ω is inside iff s² + ρ² − 2 s ρ u < ρ_b², u = cos angle
    // between ω and (center − x). Fraction with u > t*: (1 − t*)/2.
    if rho == 0.0 {
        return if s < rho_b { 1.0 } else { 0.0 };
    }
    let t_star = (s * s + rho * rho - rho_b * rho_b) / (2.0 * s * rho);
    (1.0 - t_star.clamp(-1.0, 1.0)) / 2.0
}

/// `∫_{B(0,R)^c} c |x − y|^{−d−α} dy` for `x` strictly inside the ball,
/// `d = 3`: the exact absorption rate of the default kernel into the
/// exterior of a ball. Radial reduction with the cap fraction; the region
/// beyond `s = ρ + R` contributes the closed-form power tail.
pub fn exterior_power_integral(dist_to_center: f64, radius: f64, c: f64, alpha: f64) -> f64 {
    let rho = dist_to_center;
    let r = radius;
    assert!(rho < r, "point must be inside the ball");
    let s0 = r - rho;
    let s1 = r + rho;
    let sd = sphere_area(3);
    let body = if rho == 0.0 {
        0.0
    } else {
        adaptive_simpson(
            &|s: f64| s.powf(-1.0 - alpha) * (1.0 - cap_fraction_inside(rho, s, r)),
            s0,
            s1,
            1e-12 * s0.powf(-alpha),
            48,
        )
    };
    let tail = s1.powf(-alpha) / alpha;
    c * sd * (body + tail)
}

/// `∫_{B(0,R_out)^c ∖ ...}` variant: rate of the default kernel from `x`
/// into the exterior of a *larger* concentric ball (far-field atom weight).
pub fn far_field_power_integral(dist_to_center: f64, r_out: f64, c: f64, alpha: f64) -> f64 {
    exterior_power_integral(dist_to_center, r_out, c, alpha)
}

/// Precomputed radial profile of `Λ_S(x) = ∫_S c |x − y|^{−d−α} dy` for a
/// ball target `S = B(s_center, s_radius)`, `d = 3`, evaluated as a function
/// of `ρ = |x − s_center| > s_radius`. Nodes are log-spaced in the boundary
/// distance `δ = ρ − s_radius` and the interpolation is linear in
/// `log Λ` vs `log δ`: the `δ^{−α}` blowup at the target boundary and the
/// far power tail are both asymptotically straight lines in those
/// coordinates, so a few hundred nodes suffice everywhere. Each node is an
/// exact radial integral.
#[derive(Debug, Clone)]
pub struct BallTargetRate {
    pub s_radius: f64,
    pub c: f64,
    pub alpha: f64,
    log_delta0: f64,
    dlog: f64,
    /// `ln Λ` at the nodes.
    log_values: Vec<f64>,
}

impl BallTargetRate {
    pub fn new(s_radius: f64, c: f64, alpha: f64, rho_max: f64) -> Self {
        let delta0 = s_radius * 1e-4;
        let delta_max = rho_max - s_radius;
        assert!(delta_max > delta0, "rho_max must exceed the target radius");
        let n = 400;
        let dlog = (delta_max / delta0).ln() / (n - 1) as f64;
        let log_values = (0..n)
            .map(|i| {
                let rho = s_radius + delta0 * (dlog * i as f64).exp();
                Self::exact(rho, s_radius, c, alpha).ln()
            })
            .collect();
        Self {
            s_radius,
            c,
            alpha,
            log_delta0: delta0.ln(),
            dlog,
            log_values,
        }
    }

    /// Exact rate at distance `rho` from the target center (`rho > s_radius`).
    pub fn exact(rho: f64, s_radius: f64, c: f64, alpha: f64) -> f64 {
        let s0 = rho - s_radius;
        let s1 = rho + s_radius;
        let sd = sphere_area(3);
        // Integrate in u = ln s: the near-boundary peak of
        // s^{−1−α}·cap_fraction has O(1) width in u, so the adaptive rule
        // resolves it cheaply even when s0 ≪ s_radius.
        let scale = s0.powf(-alpha) / alpha;
        let body = adaptive_simpson(
            &|u: f64| {
                let s = u.exp();
                (-alpha * u).exp() * cap_fraction_inside(rho, s, s_radius)
            },
            s0.ln(),
            s1.ln(),
            1e-10 * scale,
            30,
        );
        c * sd * body
    }

    /// Interpolated rate; NaN inside the target (callers treat in-target
    /// points separately), power-law extrapolation beyond either end of the
    /// table.
    #[inline]
    pub fn rate(&self, rho: f64) -> f64 {
        let delta = rho - self.s_radius;
        if delta <= 0.0 {
            return f64::NAN; // caller must handle in-target points
        }
        let u = (delta.ln() - self.log_delta0) / self.dlog;
        if u <= 0.0 {
            // closer than the first node: boundary blowup Λ ~ K·δ^{−α}
            return (self.log_values[0] - self.alpha * self.dlog * u).exp();
        }
        let i = u as usize;
        if i + 1 >= self.log_values.len() {
            // beyond the table: far tail Λ ~ C·ρ^{−(3+α)}
            let last = self.log_values.len() - 1;
            let last_rho = self.s_radius
                + (self.log_delta0 + self.dlog * last as f64).exp();
            return (self.log_values[last]
                + (3.0 + self.alpha) * (last_rho / rho).ln())
            .exp();
        }
        let f = u - i as f64;
        (self.log_values[i] * (1.0 - f) + self.log_values[i + 1] * f).exp()
    }
}
