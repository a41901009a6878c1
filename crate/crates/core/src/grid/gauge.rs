//! Gauges and Schrödinger solves on the grid.
//!
//! The Feynman–Kac series for a potential `q` converges exactly when the
//! kernel operator `K = A^{−1}·diag(q)` has spectral radius below one.
//! Rather than summing the series, every solve here uses the closed form:
//! `(A − D)u = rhs` with `D = diag(q)`, which is positive definite
//! whenever `ρ(|K|) < 1` (the eigenvalues of the symmetrized kernel lie
//! in `(−ρ(|K|), ρ(|K|))`). The spectral radius itself is measured by
//! power iteration on `v ↦ A^{−1}(|q|∘v)`, a handful of Cholesky solves
//! instead of a cubic-cost inverse.

use nalgebra::{Cholesky, DVector};

use crate::model::Potential;

use super::assemble::DiscreteGenerator;
use super::green::{GreenMatrix, GreenSolver};
use super::mesh::{Mesh, MeshDomain};
use super::GridError;

/// Evaluate a potential at every cell center.
pub fn potential_on_cells(mesh: &Mesh, q: &Potential) -> Vec<f64> {
    mesh.centers.iter().map(|x| q.eval(x)).collect()
}

/// Spectral radius of `|K| : v ↦ A^{−1}(|q|∘v)` by power iteration.
/// `|K|` is similar to a symmetric positive semidefinite matrix, and its
/// Perron eigenvector is nonnegative, so iteration from a positive start
/// converges to the true radius.
pub fn potential_kernel_radius(solver: &GreenSolver, q: &[f64]) -> f64 {
    assert_eq!(q.len(), solver.n());
    if q.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let n = solver.n();
    let mut v = DVector::from_element(n, (n as f64).sqrt().recip());
    let mut radius = 0.0;
    for _ in 0..300 {
        let weighted = DVector::from_iterator(n, v.iter().zip(q).map(|(vi, qi)| vi * qi.abs()));
        let w = solver.solve(&weighted);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w / norm;
        if (next - radius).abs() <= 1e-10 * next.max(1e-300) {
            return next;
        }
        radius = next;
    }
    radius
}

/// Result of a gauge or Schrödinger solve.
#[derive(Debug, Clone)]
pub enum GaugeOutcome {
    Solved {
        values: Vec<f64>,
        /// Measured `ρ(|K|)` (zero for the zero potential).
        radius: f64,
    },
    /// `ρ(|K|) ≥ 1`: the series diverges, no solve is attempted.
    NotGaugeable { radius: f64 },
}

impl GaugeOutcome {
    pub fn values(&self) -> Option<&[f64]> {
        match self {
            GaugeOutcome::Solved { values, .. } => Some(values),
            GaugeOutcome::NotGaugeable { .. } => None,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            GaugeOutcome::Solved { radius, .. } | GaugeOutcome::NotGaugeable { radius } => *radius,
        }
    }
}

fn check_q_len(gen: &DiscreteGenerator, q: &[f64]) -> Result<(), GridError> {
    if q.len() != gen.n() {
        return Err(GridError::Unsupported(format!(
            "potential sampled on {} cells, mesh has {}",
            q.len(),
            gen.n()
        )));
    }
    Ok(())
}

/// Factor `A − diag(q)` once the radius test has passed.
fn schrodinger_factor(
    gen: &DiscreteGenerator,
    q: &[f64],
) -> Result<Cholesky<f64, nalgebra::Dyn>, GridError> {
    let mut m = gen.neg_l.clone();
    for i in 0..gen.n() {
        m[(i, i)] -= q[i];
    }
    Cholesky::new(m).ok_or_else(|| {
        GridError::SolverFailure(
            "Schrödinger matrix lost positive definiteness despite a subcritical radius".into(),
        )
    })
}

/// Gauge `H(x) = E^x[exp ∫_0^τ q]`: the Schrödinger solve with unit
/// boundary data, `(A − D)H = A·1`.
pub fn gauge_grid(
    gen: &DiscreteGenerator,
    solver: &GreenSolver,
    q: &[f64],
) -> Result<GaugeOutcome, GridError> {
    check_q_len(gen, q)?;
    if q.iter().all(|&v| v == 0.0) {
        return Ok(GaugeOutcome::Solved {
            values: vec![1.0; gen.n()],
            radius: 0.0,
        });
    }
    let radius = potential_kernel_radius(solver, q);
    if radius >= 1.0 {
        return Ok(GaugeOutcome::NotGaugeable { radius });
    }
    let chol = schrodinger_factor(gen, q)?;
    let row_mass = &gen.neg_l * DVector::from_element(gen.n(), 1.0);
    let h = chol.solve(&row_mass);
    if h.iter().any(|&v| v <= 0.0) {
        return Err(GridError::SolverFailure(
            "gauge solve produced a nonpositive value".into(),
        ));
    }
    Ok(GaugeOutcome::Solved {
        values: h.iter().copied().collect(),
        radius,
    })
}

/// Schrödinger Dirichlet solve `(A − D)u = absorb·f` for per-channel
/// boundary data `f`. The zero potential takes the plain Dirichlet path,
/// so the two agree bit for bit there.
pub fn schrodinger_grid(
    gen: &DiscreteGenerator,
    solver: &GreenSolver,
    q: &[f64],
    f: &[f64],
) -> Result<GaugeOutcome, GridError> {
    check_q_len(gen, q)?;
    if f.len() != gen.n_channels() {
        return Err(GridError::Unsupported(format!(
            "boundary data has {} channels, generator has {}",
            f.len(),
            gen.n_channels()
        )));
    }
    if q.iter().all(|&v| v == 0.0) {
        let values = super::green::grid_dirichlet(gen, solver, f)?;
        return Ok(GaugeOutcome::Solved {
            values,
            radius: 0.0,
        });
    }
    let radius = potential_kernel_radius(solver, q);
    if radius >= 1.0 {
        return Ok(GaugeOutcome::NotGaugeable { radius });
    }
    let chol = schrodinger_factor(gen, q)?;
    let rhs = &gen.absorb * DVector::from_column_slice(f);
    let u = chol.solve(&rhs);
    Ok(GaugeOutcome::Solved {
        values: u.iter().copied().collect(),
        radius,
    })
}

/// Sup/inf witness of a solved function over the concentric half ball.
#[derive(Debug, Clone)]
pub struct GridRatio {
    pub ratio: f64,
    pub sup: f64,
    pub inf: f64,
    pub sup_cell: usize,
    pub inf_cell: usize,
    pub n_compared: usize,
}

/// Harnack witness on the grid: solve `Lu + qu = 0` with boundary data
/// `f ≥ 0` and return the sup/inf ratio over cells within `R/2` of the
/// center. A non-gaugeable potential propagates as an error here, since
/// there is no function to compare.
pub fn harnack_grid(
    gen: &DiscreteGenerator,
    solver: &GreenSolver,
    q: &[f64],
    f: &[f64],
) -> Result<GridRatio, GridError> {
    let MeshDomain::Ball(ball) = &gen.mesh.domain else {
        return Err(GridError::Unsupported(
            "Harnack comparison needs a ball mesh".into(),
        ));
    };
    if f.iter().any(|&v| v < 0.0) || f.iter().all(|&v| v == 0.0) {
        return Err(GridError::Unsupported(
            "boundary data must be nonnegative and not identically zero".into(),
        ));
    }
    let half = 0.5 * ball.radius * (1.0 + 1e-12);
    let center = ball.center.clone();
    let u = match schrodinger_grid(gen, solver, q, f)? {
        GaugeOutcome::Solved { values, .. } => values,
        GaugeOutcome::NotGaugeable { radius } => {
            return Err(GridError::NotGaugeable { radius });
        }
    };
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    let (mut sup_cell, mut inf_cell) = (0, 0);
    let mut n_compared = 0;
    for i in 0..gen.n() {
        if crate::geom::dist(gen.mesh.center(i), &center) > half {
            continue;
        }
        n_compared += 1;
        if u[i] > sup {
            sup = u[i];
            sup_cell = i;
        }
        if u[i] < inf {
            inf = u[i];
            inf_cell = i;
        }
    }
    if !(inf > 0.0) {
        return Err(GridError::ZeroSolution);
    }
    Ok(GridRatio {
        ratio: sup / inf,
        sup,
        inf,
        sup_cell,
        inf_cell,
        n_compared,
    })
}

/// Conditional gauge per pole.
#[derive(Debug, Clone)]
pub struct PoleStats {
    pub pole: usize,
    pub min: f64,
    pub max: f64,
    pub argmin: usize,
    pub argmax: usize,
}

#[derive(Debug, Clone)]
pub struct ConditionalGauge {
    pub poles: Vec<PoleStats>,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub enum CondGaugeOutcome {
    Gauged(ConditionalGauge),
    NotGaugeable { radius: f64 },
}

/// Conditional gauge `F(x, z) = E^x_z[exp ∫ q]` along paths conditioned
/// to die at the pole `z`: the ratio `V(x,z)/G(x,z)` of the perturbed to
/// the unperturbed Green matrix, `V = (A − D)^{−1}/h^d`. Reported as
/// min/max per requested pole over all `x ≠ z`.
pub fn conditional_gauge_grid(
    gen: &DiscreteGenerator,
    green: &GreenMatrix,
    solver: &GreenSolver,
    q: &[f64],
    poles: &[usize],
) -> Result<CondGaugeOutcome, GridError> {
    check_q_len(gen, q)?;
    let summarize = |f: &dyn Fn(usize, usize) -> f64| -> Vec<PoleStats> {
        poles
            .iter()
            .map(|&z| {
                let mut stats = PoleStats {
                    pole: z,
                    min: f64::INFINITY,
                    max: f64::NEG_INFINITY,
                    argmin: 0,
                    argmax: 0,
                };
                for x in 0..gen.n() {
                    if x == z {
                        continue;
                    }
                    let v = f(x, z);
                    if v < stats.min {
                        stats.min = v;
                        stats.argmin = x;
                    }
                    if v > stats.max {
                        stats.max = v;
                        stats.argmax = x;
                    }
                }
                stats
            })
            .collect()
    };
    if q.iter().all(|&v| v == 0.0) {
        return Ok(CondGaugeOutcome::Gauged(ConditionalGauge {
            poles: summarize(&|_, _| 1.0),
            radius: 0.0,
        }));
    }
    let radius = potential_kernel_radius(solver, q);
    if radius >= 1.0 {
        return Ok(CondGaugeOutcome::NotGaugeable { radius });
    }
    let chol = schrodinger_factor(gen, q)?;
    let v = chol.inverse() / solver.hd;
    Ok(CondGaugeOutcome::Gauged(ConditionalGauge {
        poles: summarize(&|x, z| v[(x, z)] / green.entry(x, z)),
        radius,
    }))
}

/// The double-Green smallness functional and its support sensitivity.
#[derive(Debug, Clone)]
pub struct BetaQReport {
    /// `β̃ = max_{x≠z} Σ_y G(x,y)|q(y)|G(y,z)h^d / G(x,z)`.
    pub beta: f64,
    pub witness: (usize, usize),
    /// `β̃` recomputed with the heaviest-contributing cells removed.
    pub beta_without_top_cells: f64,
    /// The removed cells, heaviest first.
    pub removed_cells: Vec<usize>,
}

/// Measure `β̃` by the full double sum over the mesh (the boundary term
/// of the continuum functional has no analog here: the whole mesh is the
/// compact). `delta_frac` is the fraction of cells, ranked by their
/// contribution at the witness pair, removed for the sensitivity rerun.
pub fn beta_q_grid(
    gen: &DiscreteGenerator,
    green: &GreenMatrix,
    q: &[f64],
    delta_frac: f64,
) -> Result<BetaQReport, GridError> {
    check_q_len(gen, q)?;
    let n = gen.n();
    let hd = green.h.powi(gen.mesh.domain.dim() as i32);
    let beta_of = |mask: &[bool]| -> (f64, (usize, usize)) {
        let weights = DVector::from_iterator(
            n,
            (0..n).map(|y| if mask[y] { q[y].abs() * hd } else { 0.0 }),
        );
        // W = G·diag(|q|h^d)·G, symmetric
        let scaled = {
            let mut m = green.g.clone();
            for y in 0..n {
                m.column_mut(y).scale_mut(weights[y]);
            }
            m
        };
        let w = &scaled * &green.g;
        let mut best = 0.0;
        let mut witness = (0, 1.min(n - 1));
        for x in 0..n {
            for z in 0..n {
                if x == z {
                    continue;
                }
                let ratio = w[(x, z)] / green.entry(x, z);
                if ratio > best {
                    best = ratio;
                    witness = (x, z);
                }
            }
        }
        (best, witness)
    };
    let all = vec![true; n];
    let (beta, witness) = beta_of(&all);
    if beta == 0.0 {
        return Ok(BetaQReport {
            beta: 0.0,
            witness,
            beta_without_top_cells: 0.0,
            removed_cells: Vec::new(),
        });
    }
    let (wx, wz) = witness;
    let mut ranked: Vec<(f64, usize)> = (0..n)
        .map(|y| (green.entry(wx, y) * q[y].abs() * hd * green.entry(y, wz), y))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let k = ((delta_frac * n as f64).ceil() as usize).min(n);
    let removed_cells: Vec<usize> = ranked[..k].iter().map(|&(_, y)| y).collect();
    let mut mask = all;
    for &y in &removed_cells {
        mask[y] = false;
    }
    let (beta_without_top_cells, _) = beta_of(&mask);
    Ok(BetaQReport {
        beta,
        witness,
        beta_without_top_cells,
        removed_cells,
    })
}
