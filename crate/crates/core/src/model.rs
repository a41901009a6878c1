//! The operator model: diffusion matrix field, jump kernel, potential, and
//! the assumption checks (ellipticity, kernel sandwich, smallness class of
//! the potential).

use crate::geom::{self, BallDomain};
use nalgebra::DMatrix;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum ModelError {
    #[error("diffusion matrix is not symmetric at probe {probe:?}: |a12 - a21| = {gap}")]
    NonSymmetricMatrix { probe: Vec<f64>, gap: f64 },
    #[error("diffusion matrix is not positive definite at probe {probe:?}: min eigenvalue {min_eig}")]
    NonPositiveDefinite { probe: Vec<f64>, min_eig: f64 },
    #[error("kernel sandwich violated at pair ({x:?}, {y:?}): J·|x-y|^(d+α) = {ratio}, bounds [{lo}, {hi}]")]
    KernelSandwichViolated {
        x: Vec<f64>,
        y: Vec<f64>,
        ratio: f64,
        lo: f64,
        hi: f64,
    },
    #[error("kernel is not symmetric at pair ({x:?}, {y:?}): relative gap {gap}")]
    KernelNotSymmetric { x: Vec<f64>, y: Vec<f64>, gap: f64 },
    #[error("quadrature did not converge: levels differ by {gap} (relative), tolerance {tol}")]
    QuadratureNonConvergent { gap: f64, tol: f64 },
    #[error("model supplies no derivatives for the diffusion field; drift is undefined")]
    MissingDerivatives,
    #[error("paper mode requires dimension >= 3, got {0}")]
    BadDimension(usize),
    #[error("paper mode requires ball radius in (0, 1/2], got {0}")]
    RadiusOutOfRange(f64),
    #[error("jump stability index must lie in (0, 2), got {0}")]
    BadAlpha(f64),
    #[error("kernel comparability constant must be positive, got {0}")]
    BadKernelConstant(f64),
}

// ---------------------------------------------------------------------------
// Diffusion field
// ---------------------------------------------------------------------------

type MatrixFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type VectorFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// The symmetric diffusion coefficient field `a(x)` (row-major `d × d`
/// writes) together with its column divergence `Σ_i ∂_i a_ij(x)` when the
/// model can supply derivatives.
#[derive(Clone)]
pub enum DiffusionField {
    /// `a = I`.
    Identity,
    /// `a(x) = I + 0.1·x xᵀ / (1 + |x|²)`: smooth, uniformly elliptic,
    /// genuinely variable with nonzero cross terms and drift.
    VariableSpd,
    /// Diffusion switched off (pure-jump diagnostic).
    Zero,
    /// User-supplied field; `div_a` may be absent, in which case drift
    /// computations report `MissingDerivatives`.
    Custom {
        a: Arc<MatrixFn>,
        div_a: Option<Arc<VectorFn>>,
    },
}

impl fmt::Debug for DiffusionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "Identity"),
            Self::VariableSpd => write!(f, "VariableSpd"),
            Self::Zero => write!(f, "Zero"),
            Self::Custom { div_a, .. } => {
                write!(f, "Custom {{ div_a: {} }}", div_a.is_some())
            }
        }
    }
}

impl DiffusionField {
    /// Write `a(x)` into `out` (row-major `d × d`).
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        debug_assert_eq!(out.len(), d * d);
        match self {
            Self::Identity => {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = 1.0;
                }
            }
            Self::VariableSpd => {
                let s = 1.0 + geom::norm2(x);
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] =
                            if i == j { 1.0 } else { 0.0 } + 0.1 * x[i] * x[j] / s;
                    }
                }
            }
            Self::Zero => out.fill(0.0),
            Self::Custom { a, .. } => a(x, out),
        }
    }

    /// Write the column divergence `(Σ_i ∂_i a_ij)_j` into `out`, if the
    /// field carries derivatives.
    pub fn divergence(&self, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        let d = x.len();
        match self {
            Self::Identity | Self::Zero => {
                out.fill(0.0);
                Ok(())
            }
            Self::VariableSpd => {
                // a_ij = δ_ij + 0.1 x_i x_j / s, s = 1 + |x|²:
                // Σ_i ∂_i a_ij = 0.1·x_j·[(d + 1)/s − 2|x|²/s²]
                let n2 = geom::norm2(x);
                let s = 1.0 + n2;
                let factor = 0.1 * ((d as f64 + 1.0) / s - 2.0 * n2 / (s * s));
                for j in 0..d {
                    out[j] = factor * x[j];
                }
                Ok(())
            }
            Self::Custom { div_a, .. } => match div_a {
                Some(f) => {
                    f(x, out);
                    Ok(())
                }
                None => Err(ModelError::MissingDerivatives),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }
}

// ---------------------------------------------------------------------------
// Jump kernel
// ---------------------------------------------------------------------------

type KernelFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Jump kernel specification. The default kernel is `J(x, y) =
/// c·|x − y|^{−d−α}`; a custom kernel must be symmetric and should satisfy
/// the sandwich `c ≤ J(x,y)·|x−y|^{d+α} ≤ envelope` for simulation by
/// thinning (`envelope` plays the role of the upper comparability bound).
#[derive(Clone)]
pub struct JumpKernel {
    pub c: f64,
    pub alpha: f64,
    pub custom: Option<CustomKernel>,
}

#[derive(Clone)]
pub struct CustomKernel {
    pub f: Arc<KernelFn>,
    /// Upper bound constant: `J(x,y) ≤ envelope·|x−y|^{−d−α}`.
    pub envelope: Option<f64>,
}

impl fmt::Debug for JumpKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpKernel")
            .field("c", &self.c)
            .field("alpha", &self.alpha)
            .field(
                "custom",
                &self.custom.as_ref().map(|c| c.envelope).map(|_| "yes"),
            )
            .finish()
    }
}

impl JumpKernel {
    pub fn default_kernel(c: f64, alpha: f64) -> Result<Self, ModelError> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(ModelError::BadAlpha(alpha));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(ModelError::BadKernelConstant(c));
        }
        Ok(Self {
            c,
            alpha,
            custom: None,
        })
    }

    /// Kernel value `J(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = x.len() as f64;
        match &self.custom {
            None => self.c * geom::dist2(x, y).powf(-(d + self.alpha) / 2.0),
            Some(k) => (k.f)(x, y),
        }
    }

    /// Upper comparability constant used as a thinning envelope.
    pub fn envelope_constant(&self) -> Option<f64> {
        match &self.custom {
            None => Some(self.c),
            Some(k) => k.envelope,
        }
    }
}

// ---------------------------------------------------------------------------
// Potential
// ---------------------------------------------------------------------------

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// The potential `q` of the Schrödinger problem `Lu + qu = 0`.
#[derive(Clone)]
pub enum Potential {
    Zero,
    Const(f64),
    /// Smooth compact bump: `height·cos²(π·|x − center| / (2·radius))` for
    /// `|x − center| < radius`, zero outside (C¹ across the edge).
    Bump {
        center: Vec<f64>,
        radius: f64,
        height: f64,
    },
    Custom(Arc<ScalarFn>),
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Const(v) => write!(f, "Const({v})"),
            Self::Bump {
                center,
                radius,
                height,
            } => write!(f, "Bump {{ center: {center:?}, radius: {radius}, height: {height} }}"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Potential {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Const(v) => *v,
            Self::Bump {
                center,
                radius,
                height,
            } => {
                let r = geom::dist(x, center);
                if r >= *radius {
                    0.0
                } else {
                    let t = std::f64::consts::FRAC_PI_2 * r / radius;
                    height * t.cos().powi(2)
                }
            }
            Self::Custom(f) => f(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero) || matches!(self, Self::Const(v) if *v == 0.0)
    }

    /// `|q|` as a potential (for smallness certificates).
    pub fn abs(&self) -> Potential {
        match self {
            Self::Zero => Self::Zero,
            Self::Const(v) => Self::Const(v.abs()),
            other => {
                let inner = other.clone();
                Self::Custom(Arc::new(move |x: &[f64]| inner.eval(x).abs()))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

/// Full specification of the operator
/// `L f = 1/2 Σ ∂_i(a_ij ∂_j f) + ∫ [f(y) − f(x)] J(x,y) dy` plus the
/// Schrödinger potential `q`.
#[derive(Debug, Clone)]
pub struct OperatorModel {
    pub d: usize,
    pub a: DiffusionField,
    /// `None` switches jumps off entirely (diffusion diagnostic).
    pub jump: Option<JumpKernel>,
    pub q: Potential,
    /// Diagnostic models skip the paper-regime validation (ellipticity may
    /// be degenerate, radii unrestricted).
    pub diagnostic: bool,
}

impl OperatorModel {
    /// `a = I`, default kernel `c = 1, α = 1`, `q ≡ 0`.
    pub fn preset_identity(d: usize) -> Self {
        Self {
            d,
            a: DiffusionField::Identity,
            jump: Some(JumpKernel::default_kernel(1.0, 1.0).unwrap()),
            q: Potential::Zero,
            diagnostic: false,
        }
    }

    /// Variable SPD diffusion with drift and cross terms, default kernel.
    pub fn preset_variable_spd(d: usize) -> Self {
        Self {
            d,
            a: DiffusionField::VariableSpd,
            jump: Some(JumpKernel::default_kernel(1.0, 1.0).unwrap()),
            q: Potential::Zero,
            diagnostic: false,
        }
    }

    /// Pure diffusion (`½Δ`): jumps off. Classical formulas apply.
    pub fn preset_brownian_diagnostic(d: usize) -> Self {
        Self {
            d,
            a: DiffusionField::Identity,
            jump: None,
            q: Potential::Zero,
            diagnostic: true,
        }
    }

    /// Pure jumps (α-stable-like): diffusion off.
    pub fn preset_stable_diagnostic(d: usize, alpha: f64) -> Self {
        Self {
            d,
            a: DiffusionField::Zero,
            jump: Some(JumpKernel::default_kernel(1.0, alpha).unwrap()),
            q: Potential::Zero,
            diagnostic: true,
        }
    }

    pub fn with_q(mut self, q: Potential) -> Self {
        self.q = q;
        self
    }

    /// Write `a(x)` into a row-major buffer.
    #[inline]
    pub fn a_at(&self, x: &[f64], out: &mut [f64]) {
        self.a.eval(x, out);
    }
}

// ---------------------------------------------------------------------------
// Assumption checks
// ---------------------------------------------------------------------------

/// Eigenvalue range of `a` over a probe set.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticityBounds {
    pub min_eig: f64,
    pub max_eig: f64,
    /// Probe attaining the minimum.
    pub argmin: Vec<f64>,
}

/// Smallest/largest eigenvalue of the symmetric `d × d` matrix field over
/// the probes. Errors if any probe yields a non-symmetric matrix (tolerance
/// `1e−10` relative) or, in non-diagnostic models, a non-positive one.
pub fn ellipticity_bounds(
    model: &OperatorModel,
    probes: &[Vec<f64>],
) -> Result<EllipticityBounds, ModelError> {
    let d = model.d;
    let mut buf = vec![0.0; d * d];
    let mut min_eig = f64::INFINITY;
    let mut max_eig = f64::NEG_INFINITY;
    let mut argmin = probes
        .first()
        .cloned()
        .unwrap_or_else(|| vec![0.0; d]);
    for p in probes {
        model.a_at(p, &mut buf);
        let scale = buf.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for i in 0..d {
            for j in (i + 1)..d {
                let gap = (buf[i * d + j] - buf[j * d + i]).abs();
                if gap > 1e-10 * scale {
                    return Err(ModelError::NonSymmetricMatrix {
                        probe: p.clone(),
                        gap,
                    });
                }
            }
        }
        let m = DMatrix::from_row_slice(d, d, &buf);
        let eig = m.symmetric_eigenvalues();
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !model.diagnostic && lo <= 0.0 {
            return Err(ModelError::NonPositiveDefinite {
                probe: p.clone(),
                min_eig: lo,
            });
        }
        if lo < min_eig {
            min_eig = lo;
            argmin = p.clone();
        }
        max_eig = max_eig.max(hi);
    }
    Ok(EllipticityBounds {
        min_eig,
        max_eig,
        argmin,
    })
}

/// Result of sampling the kernel sandwich `c ≤ J·|x−y|^{d+α} ≤ 1/c`.
#[derive(Debug, Clone)]
pub struct KernelSandwichReport {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub pairs_checked: usize,
}

/// Check symmetry and the two-sided comparability of the kernel over
/// deterministic point pairs in the ball. `tol` loosens the bounds
/// multiplicatively (violations error out).
pub fn kernel_sandwich_check(
    model: &OperatorModel,
    ball: &BallDomain,
    pairs: usize,
    tol: f64,
) -> Result<KernelSandwichReport, ModelError> {
    let kernel = match &model.jump {
        Some(k) => k,
        None => {
            return Ok(KernelSandwichReport {
                min_ratio: 1.0,
                max_ratio: 1.0,
                pairs_checked: 0,
            })
        }
    };
    let d = model.d as f64;
    let lo = kernel.c * (1.0 - tol);
    let hi = (1.0 + tol) * kernel.envelope_constant().unwrap_or(1.0 / kernel.c).max(1.0 / kernel.c);
    let pts = geom::halton_points_in_ball(ball, 2 * pairs, 0);
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = f64::NEG_INFINITY;
    let mut checked = 0;
    for i in 0..pairs {
        let x = &pts[2 * i];
        let y = &pts[2 * i + 1];
        let r = geom::dist(x, y);
        if r < 1e-9 {
            continue;
        }
        let jxy = kernel.eval(x, y);
        let jyx = kernel.eval(y, x);
        let scale = jxy.abs().max(jyx.abs()).max(1e-300);
        if (jxy - jyx).abs() > 1e-10 * scale {
            return Err(ModelError::KernelNotSymmetric {
                x: x.clone(),
                y: y.clone(),
                gap: (jxy - jyx).abs() / scale,
            });
        }
        let ratio = jxy * r.powf(d + kernel.alpha);
        if ratio < lo || ratio > hi {
            return Err(ModelError::KernelSandwichViolated {
                x: x.clone(),
                y: y.clone(),
                ratio,
                lo,
                hi,
            });
        }
        min_ratio = min_ratio.min(ratio);
        max_ratio = max_ratio.max(ratio);
        checked += 1;
    }
    Ok(KernelSandwichReport {
        min_ratio,
        max_ratio,
        pairs_checked: checked,
    })
}

/// Paper-regime validation: dimension, radius range, ellipticity over a
/// probe lattice, kernel sandwich.
#[derive(Debug, Clone)]
pub struct PaperModeReport {
    pub ellipticity: EllipticityBounds,
    pub sandwich: KernelSandwichReport,
}

pub fn validate_paper_mode(
    model: &OperatorModel,
    ball: &BallDomain,
) -> Result<PaperModeReport, ModelError> {
    if model.d < 3 {
        return Err(ModelError::BadDimension(model.d));
    }
    if !(ball.radius > 0.0 && ball.radius <= 0.5) {
        return Err(ModelError::RadiusOutOfRange(ball.radius));
    }
    if let Some(k) = &model.jump {
        if !(k.alpha > 0.0 && k.alpha < 2.0) {
            return Err(ModelError::BadAlpha(k.alpha));
        }
    }
    let probes = geom::lattice_in_ball(ball, ball.radius / 4.0);
    let ellipticity = ellipticity_bounds(model, &probes)?;
    if ellipticity.min_eig <= 0.0 {
        return Err(ModelError::NonPositiveDefinite {
            probe: ellipticity.argmin.clone(),
            min_eig: ellipticity.min_eig,
        });
    }
    let sandwich = kernel_sandwich_check(model, ball, 64, 1e-9)?;
    Ok(PaperModeReport {
        ellipticity,
        sandwich,
    })
}
