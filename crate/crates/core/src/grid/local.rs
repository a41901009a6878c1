//! Boundary-patch solves on lens meshes (`ball ∩ patch`): the hitting
//! probability of a disjoint target ball through the occupation identity,
//! and the Carleson / boundary-Harnack ratios built on it.
//!
//! The solved function is `u(x) = P^x(X at exit lands in S)` for a target
//! `S` disjoint from the lens — the jump into `S` *is* the exit — so
//! `u = A^{−1}λ` with `λ(x) = ∫_S J(x,y) dy`, evaluated by the exact
//! radial rate. The Monte Carlo estimator integrates the same rate along
//! paths, which makes the two instruments directly comparable.

use crate::geom::{self, BallDomain, BoundaryChart};
use crate::model::OperatorModel;
use crate::quad::BallTargetRate;

use nalgebra::DVector;

use super::assemble::{assemble_generator, DiscreteGenerator};
use super::green::GreenSolver;
use super::mesh::Mesh;
use super::GridError;

/// A solved hitting problem on a lens mesh.
pub struct LensSolution {
    pub gen: DiscreteGenerator,
    /// `u[i] = P^{x_i}(exit lands in the target)`.
    pub u: Vec<f64>,
    pub target: BallDomain,
}

impl LensSolution {
    pub fn mesh(&self) -> &Mesh {
        &self.gen.mesh
    }
}

/// Solve for the probability of jumping into `target` before leaving
/// `outer ∩ patch`. The target must be disjoint from the lens.
pub fn lens_hitting_probability(
    model: &OperatorModel,
    outer: &BallDomain,
    patch: &BallDomain,
    target: &BallDomain,
    h: f64,
) -> Result<LensSolution, GridError> {
    let kernel = model.jump.as_ref().ok_or_else(|| {
        GridError::Unsupported("no jump kernel: nothing ever hits a disjoint target".into())
    })?;
    if kernel.custom.is_some() {
        return Err(GridError::Unsupported(
            "hitting rates need the reference power kernel".into(),
        ));
    }
    let mesh = Mesh::lens(outer, patch, h)?;
    let mut lambda = DVector::zeros(mesh.n());
    for i in 0..mesh.n() {
        let rho = geom::dist(mesh.center(i), &target.center);
        if rho <= target.radius {
            return Err(GridError::Unsupported(format!(
                "target ball overlaps the lens at cell {i}"
            )));
        }
        lambda[i] = BallTargetRate::exact(rho, target.radius, kernel.c, kernel.alpha);
    }
    let gen = assemble_generator(model, mesh)?;
    let solver = GreenSolver::new(&gen)?;
    let u = solver.solve(&lambda);
    Ok(LensSolution {
        gen,
        u: u.iter().copied().collect(),
        target: target.clone(),
    })
}

/// Carleson-type ratio from the grid oracle.
#[derive(Debug, Clone)]
pub struct CarlesonGridReport {
    /// `max u over B(Q, r/2) cells / u(reference)`.
    pub ratio: f64,
    pub u_reference: f64,
    pub u_max: f64,
    pub reference_cell: usize,
    pub max_cell: usize,
    pub n_compared: usize,
}

/// Compare the hitting probability over the half patch `B(Q, r/2)` to its
/// value at the interior reference point `Q + (r/2)·(inward normal)`.
pub fn carleson_grid(
    model: &OperatorModel,
    chart: &BoundaryChart,
    r: f64,
    target: &BallDomain,
    h: f64,
) -> Result<CarlesonGridReport, GridError> {
    if !(r > 0.0) || r > 0.5 * chart.r1 {
        return Err(GridError::Unsupported(format!(
            "patch radius r = {r} outside (0, r1/2] with r1 = {}",
            chart.r1
        )));
    }
    let patch = BallDomain::new(chart.base.clone(), r)
        .map_err(|e| GridError::Unsupported(format!("bad patch: {e}")))?;
    let sol = lens_hitting_probability(model, &chart.ball, &patch, target, h)?;
    let mesh = sol.mesh();
    let reference_cell = mesh
        .nearest_cell(&chart.normal_point(r / 2.0))
        .ok_or(GridError::ZeroSolution)?;
    let u_reference = sol.u[reference_cell];
    if !(u_reference > 0.0) {
        return Err(GridError::ZeroSolution);
    }
    let mut u_max = f64::NEG_INFINITY;
    let mut max_cell = 0;
    let mut n_compared = 0;
    for i in 0..mesh.n() {
        if geom::dist(mesh.center(i), &chart.base) > 0.5 * r {
            continue;
        }
        n_compared += 1;
        if sol.u[i] > u_max {
            u_max = sol.u[i];
            max_cell = i;
        }
    }
    if n_compared == 0 {
        return Err(GridError::MeshTooCoarse { h, span: 0.5 * r });
    }
    Ok(CarlesonGridReport {
        ratio: u_max / u_reference,
        u_reference,
        u_max,
        reference_cell,
        max_cell,
        n_compared,
    })
}

/// Boundary-Harnack quotients from the grid oracle.
#[derive(Debug, Clone)]
pub struct BhpGridReport {
    /// `sup(u/δ) / inf(u/δ)` over the compared cells.
    pub ratio: f64,
    pub sup_quotient: f64,
    pub inf_quotient: f64,
    pub sup_cell: usize,
    pub inf_cell: usize,
    pub n_compared: usize,
}

/// Quotients `u(x)/δ_B(x)` over cells of `B(Q, r/2)` at least
/// `floor_cells · h` from the outer boundary — the grid form of the
/// linear-decay comparison behind the boundary Harnack principle.
pub fn bhp_grid(
    model: &OperatorModel,
    chart: &BoundaryChart,
    r: f64,
    target: &BallDomain,
    h: f64,
    floor_cells: f64,
) -> Result<BhpGridReport, GridError> {
    if !(r > 0.0) || r > 0.5 * chart.r1 {
        return Err(GridError::Unsupported(format!(
            "patch radius r = {r} outside (0, r1/2] with r1 = {}",
            chart.r1
        )));
    }
    let patch = BallDomain::new(chart.base.clone(), r)
        .map_err(|e| GridError::Unsupported(format!("bad patch: {e}")))?;
    let sol = lens_hitting_probability(model, &chart.ball, &patch, target, h)?;
    let mesh = sol.mesh();
    let mut report = BhpGridReport {
        ratio: f64::NAN,
        sup_quotient: f64::NEG_INFINITY,
        inf_quotient: f64::INFINITY,
        sup_cell: 0,
        inf_cell: 0,
        n_compared: 0,
    };
    for i in 0..mesh.n() {
        if geom::dist(mesh.center(i), &chart.base) > 0.5 * r {
            continue;
        }
        let delta = chart.ball.radius - geom::dist(mesh.center(i), &chart.ball.center);
        if delta < floor_cells * h {
            continue;
        }
        let q = sol.u[i] / delta;
        report.n_compared += 1;
        if q > report.sup_quotient {
            report.sup_quotient = q;
            report.sup_cell = i;
        }
        if q < report.inf_quotient {
            report.inf_quotient = q;
            report.inf_cell = i;
        }
    }
    if report.n_compared == 0 {
        return Err(GridError::MeshTooCoarse { h, span: 0.5 * r });
    }
    if !(report.inf_quotient > 0.0) {
        return Err(GridError::ZeroSolution);
    }
    report.ratio = report.sup_quotient / report.inf_quotient;
    Ok(report)
}
