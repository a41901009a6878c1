//! Killed Green matrix and the exit/Dirichlet solves built on it.
//!
//! `A = −L_h` is symmetric positive definite for the supported models, so
//! everything reduces to one Cholesky factorization: Green columns are
//! `A^{−1}e_j / h^d`, exit laws are rows of `A^{−1}·absorb`, and Dirichlet
//! solutions are `A^{−1}(absorb·f)`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::assemble::DiscreteGenerator;
use super::GridError;

/// Cholesky factorization of `A` with the mesh volume factor attached.
pub struct GreenSolver {
    chol: Cholesky<f64, Dyn>,
    /// Cell volume `h^d`; `G = A^{−1} / h^d`.
    pub hd: f64,
    n: usize,
}

impl GreenSolver {
    pub fn new(gen: &DiscreteGenerator) -> Result<Self, GridError> {
        let n = gen.n();
        let chol = Cholesky::new(gen.neg_l.clone()).ok_or_else(|| {
            GridError::SolverFailure("generator matrix is not positive definite".into())
        })?;
        let d = gen.mesh.domain.dim() as i32;
        Ok(Self {
            chol,
            hd: gen.mesh.h.powi(d),
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `A^{−1}·rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// `A^{−1}·rhs` column by column.
    pub fn solve_columns(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// Column `j` of the Green matrix, `A^{−1}e_j / h^d`.
    pub fn green_column(&self, j: usize) -> Vec<f64> {
        let mut e = DVector::zeros(self.n);
        e[j] = 1.0;
        let u = self.chol.solve(&e);
        u.iter().map(|v| v / self.hd).collect()
    }

    /// Dense `A^{−1}` (cubic cost; prefer columns on large meshes).
    pub fn full_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Lazy column view of the Green matrix: computes `A^{−1}e_j / h^d` on
/// first use and caches it, so probe-based reports on refined meshes
/// never pay for a full inverse.
pub struct GreenColumns {
    solver: GreenSolver,
    cache: RefCell<HashMap<usize, Rc<Vec<f64>>>>,
}

impl GreenColumns {
    pub fn new(gen: &DiscreteGenerator) -> Result<Self, GridError> {
        Ok(Self {
            solver: GreenSolver::new(gen)?,
            cache: RefCell::new(HashMap::new()),
        })
    }

    pub fn solver(&self) -> &GreenSolver {
        &self.solver
    }

    pub fn n(&self) -> usize {
        self.solver.n()
    }

    pub fn col(&self, j: usize) -> Rc<Vec<f64>> {
        if let Some(c) = self.cache.borrow().get(&j) {
            return Rc::clone(c);
        }
        let col = Rc::new(self.solver.green_column(j));
        self.cache.borrow_mut().insert(j, Rc::clone(&col));
        col
    }

    /// `G(x_i, x_j)`, served from the column cache (symmetric, so either
    /// index may play the column role).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if let Some(c) = self.cache.borrow().get(&j) {
            return c[i];
        }
        if let Some(c) = self.cache.borrow().get(&i) {
            return c[j];
        }
        self.col(j)[i]
    }
}

/// Dense Green matrix `G = A^{−1}/h^d` with its consistency checks done.
pub struct GreenMatrix {
    pub g: DMatrix<f64>,
    pub h: f64,
}

impl GreenMatrix {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.g[(i, j)]
    }
}

/// Full Green matrix with symmetry (and, for monotone stencils,
/// positivity) validated before anything downstream consumes it.
pub fn green_matrix(gen: &DiscreteGenerator) -> Result<GreenMatrix, GridError> {
    let solver = GreenSolver::new(gen)?;
    let g = solver.full_inverse() / solver.hd;
    let n = g.nrows();
    let scale = (0..n).map(|i| g[(i, i)]).fold(0.0f64, f64::max);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((g[(i, j)] - g[(j, i)]).abs());
        }
    }
    if asym > 1e-9 * scale {
        return Err(GridError::SolverFailure(format!(
            "Green matrix asymmetry {asym:e} exceeds 1e-9 of scale {scale:e}"
        )));
    }
    if gen.non_monotone_cells.is_empty() {
        if let Some(min) = g.iter().cloned().reduce(f64::min) {
            if min <= 0.0 {
                return Err(GridError::SolverFailure(format!(
                    "Green matrix entry {min:e} not positive despite a monotone stencil"
                )));
            }
        }
    }
    Ok(GreenMatrix { g, h: gen.mesh.h })
}

/// Exit law from cell `i`: probability of ending in each exit channel,
/// computed as `h^d · G_col(i)ᵀ · absorb` (the row of `A^{−1}·absorb`,
/// using the symmetry of `A`).
pub fn exit_law(gen: &DiscreteGenerator, columns: &GreenColumns, i: usize) -> Vec<f64> {
    let col = columns.col(i);
    let hd = columns.solver().hd;
    (0..gen.n_channels())
        .map(|ch| {
            (0..gen.n())
                .map(|y| col[y] * hd * gen.absorb[(y, ch)])
                .sum()
        })
        .collect()
}

/// All exit laws at once: `A^{−1}·absorb`, row `i` = exit law from cell `i`.
pub fn exit_law_matrix(gen: &DiscreteGenerator, solver: &GreenSolver) -> DMatrix<f64> {
    solver.solve_columns(&gen.absorb)
}

/// Dirichlet solve: harmonic extension of per-channel boundary data `f`,
/// `u = A^{−1}(absorb·f)`.
pub fn grid_dirichlet(
    gen: &DiscreteGenerator,
    solver: &GreenSolver,
    f: &[f64],
) -> Result<Vec<f64>, GridError> {
    if f.len() != gen.n_channels() {
        return Err(GridError::Unsupported(format!(
            "boundary data has {} channels, generator has {}",
            f.len(),
            gen.n_channels()
        )));
    }
    let fvec = DVector::from_column_slice(f);
    let rhs = &gen.absorb * fvec;
    Ok(solver.solve(&rhs).iter().copied().collect())
}
