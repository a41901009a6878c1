//! Inequality reports computed from Green columns: the 3G bound, interior
//! Green bounds, boundary decay, Martin kernels with boundary extraction,
//! the harmonic-measure density identity, and the jump-exit identity.
//!
//! Everything here reads `G` through the lazy column view, so the reports
//! stay affordable on refined meshes: only probe and extraction columns
//! are ever solved for.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::geom::{self, BoundaryChart};

use super::assemble::DiscreteGenerator;
use super::green::{exit_law, exit_law_matrix, GreenColumns};
use super::mesh::{Mesh, MeshDomain};
use super::GridError;

/// Deterministic, well-spread probe cells: low-discrepancy points in the
/// domain, snapped to their nearest cells, first occurrence kept.
pub fn probe_cells(mesh: &Mesh, count: usize, salt: u64) -> Vec<usize> {
    let ball = match &mesh.domain {
        MeshDomain::Ball(b) => b.clone(),
        MeshDomain::Lens { patch, .. } => patch.clone(),
    };
    let pool = geom::halton_points_in_ball(&ball, 8 * count, salt);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in pool {
        if !mesh.domain.contains(&p) {
            continue;
        }
        if let Some(i) = mesh.nearest_cell(&p) {
            if seen.insert(i) {
                out.push(i);
                if out.len() == count {
                    break;
                }
            }
        }
    }
    out
}

/// Empirical 3G constant: the best `c` in
/// `G(x,y)G(y,z)/G(x,z) ≤ c(|x−y|^{2−d} + |y−z|^{2−d})` over probe triples.
#[derive(Debug, Clone)]
pub struct ThreeGReport {
    pub c: f64,
    pub witness: (usize, usize, usize),
    pub n_triples: usize,
    /// Counts of the normalized ratio `ratio/c` in ten equal bins of
    /// `(0, 1]` — shows how sharply the worst triple stands out.
    pub histogram: [usize; 10],
}

pub fn check_3g(
    gen: &DiscreteGenerator,
    columns: &GreenColumns,
    probes: &[usize],
) -> Result<ThreeGReport, GridError> {
    let d = gen.mesh.domain.dim() as i32;
    if probes.len() < 3 {
        return Err(GridError::Unsupported(
            "3G needs at least three probe cells".into(),
        ));
    }
    let mut ratios = Vec::new();
    let mut c = 0.0f64;
    let mut witness = (probes[0], probes[1], probes[2]);
    for &x in probes {
        for &y in probes {
            if y == x {
                continue;
            }
            let col_y = columns.col(y);
            for &z in probes {
                if z == x || z == y {
                    continue;
                }
                let g_xy = col_y[x];
                let g_yz = col_y[z];
                let g_xz = columns.entry(x, z);
                let dxy = geom::dist(gen.mesh.center(x), gen.mesh.center(y));
                let dyz = geom::dist(gen.mesh.center(y), gen.mesh.center(z));
                let denom = dxy.powi(2 - d) + dyz.powi(2 - d);
                let ratio = g_xy * g_yz / g_xz / denom;
                if ratio > c {
                    c = ratio;
                    witness = (x, y, z);
                }
                ratios.push(ratio);
            }
        }
    }
    let mut histogram = [0usize; 10];
    for r in &ratios {
        let bin = ((r / c) * 10.0).ceil().clamp(1.0, 10.0) as usize - 1;
        histogram[bin] += 1;
    }
    Ok(ThreeGReport {
        c,
        witness,
        n_triples: ratios.len(),
        histogram,
    })
}

/// Empirical interior Green bounds: the constants in
/// `c_low ≤ G(x,y)·|x−y|^{d−2} ≤ c_up`, the upper over all probe pairs,
/// the lower over well-separated-from-boundary pairs
/// (`2|x−y| ≤ δ(x) ∧ δ(y)`).
#[derive(Debug, Clone)]
pub struct GreenBoundsReport {
    pub c_up: f64,
    pub c_low: f64,
    pub up_witness: (usize, usize),
    pub low_witness: (usize, usize),
    pub n_pairs_up: usize,
    pub n_pairs_low: usize,
}

pub fn green_bounds_report(
    gen: &DiscreteGenerator,
    columns: &GreenColumns,
    probes: &[usize],
) -> Result<GreenBoundsReport, GridError> {
    let d = gen.mesh.domain.dim() as i32;
    if probes.is_empty() {
        return Err(GridError::Unsupported("no probe cells".into()));
    }
    let mut report = GreenBoundsReport {
        c_up: 0.0,
        c_low: f64::INFINITY,
        up_witness: (0, 0),
        low_witness: (0, 0),
        n_pairs_up: 0,
        n_pairs_low: 0,
    };
    for &x in probes {
        let col = columns.col(x);
        for y in 0..gen.n() {
            if y == x {
                continue;
            }
            let dist = geom::dist(gen.mesh.center(x), gen.mesh.center(y));
            let scaled = col[y] * dist.powi(d - 2);
            report.n_pairs_up += 1;
            if scaled > report.c_up {
                report.c_up = scaled;
                report.up_witness = (x, y);
            }
            if 2.0 * dist <= gen.mesh.delta(x).min(gen.mesh.delta(y)) {
                report.n_pairs_low += 1;
                if scaled < report.c_low {
                    report.c_low = scaled;
                    report.low_witness = (x, y);
                }
            }
        }
    }
    if report.n_pairs_low == 0 {
        return Err(GridError::Unsupported(
            "no probe pair is separated from the boundary; refine the mesh".into(),
        ));
    }
    Ok(report)
}

/// One cell of the boundary-decay table.
#[derive(Debug, Clone)]
pub struct DecayRow {
    pub cell: usize,
    pub delta: f64,
    pub green: f64,
    /// `G(x,y)·r/δ(y)` — the quantity bounded below by `c_1`.
    pub ratio: f64,
}

/// Linear boundary decay of the Green function near a boundary point:
/// the empirical `c_1` in `G(x,y) ≥ c_1 δ(y)/r` over cells close to `Q`.
#[derive(Debug, Clone)]
pub struct BoundaryDecayReport {
    pub c1: f64,
    pub witness: usize,
    /// Radius of the comparison neighborhood of `Q` actually used.
    pub region_radius: f64,
    /// All compared cells, sorted by increasing boundary distance.
    pub rows: Vec<DecayRow>,
}

pub fn boundary_decay_report(
    gen: &DiscreteGenerator,
    columns: &GreenColumns,
    x_cell: usize,
    chart: &BoundaryChart,
    r: f64,
) -> Result<BoundaryDecayReport, GridError> {
    if !(r > 0.0) || r > 0.5 * chart.r1 {
        return Err(GridError::Unsupported(format!(
            "scale r = {r} outside (0, r1/2] with r1 = {}",
            chart.r1
        )));
    }
    let q = &chart.base;
    if geom::dist(gen.mesh.center(x_cell), q) < r {
        return Err(GridError::Unsupported(
            "reference cell must lie outside the r-neighborhood of the boundary point".into(),
        ));
    }
    // the continuum comparison window r·r0/8 is far below cell size on any
    // affordable mesh; measure on the smallest resolvable neighborhood
    // instead and let the refinement study track the limit
    let region_radius = (r * chart.r0 / 8.0).max(3.0 * gen.mesh.h);
    let col = columns.col(x_cell);
    let mut rows = Vec::new();
    for y in 0..gen.n() {
        if y == x_cell || geom::dist(gen.mesh.center(y), q) > region_radius {
            continue;
        }
        let delta = gen.mesh.delta(y);
        if delta <= 0.0 {
            continue;
        }
        rows.push(DecayRow {
            cell: y,
            delta,
            green: col[y],
            ratio: col[y] * r / delta,
        });
    }
    if rows.is_empty() {
        return Err(GridError::Unsupported(
            "no interior cells inside the comparison neighborhood".into(),
        ));
    }
    rows.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let mut c1 = f64::INFINITY;
    let mut witness = rows[0].cell;
    for row in &rows {
        if row.ratio < c1 {
            c1 = row.ratio;
            witness = row.cell;
        }
    }
    Ok(BoundaryDecayReport {
        c1,
        witness,
        region_radius,
        rows,
    })
}

/// Martin kernel table with boundary values extracted by Richardson
/// extrapolation along the inward normal.
#[derive(Debug, Clone)]
pub struct MartinKernel {
    /// `values[(i, cap)]` = the kernel `M(x_i, ·)` averaged over the
    /// cap's representative point and a ring of boundary points around
    /// it (the cap-level reading of the density theorem).
    pub values: DMatrix<f64>,
    /// The representative boundary point of each cap.
    pub boundary_points: Vec<Vec<f64>>,
    pub x0: usize,
    /// The three extraction cells of each cap's central ray, nearest the
    /// boundary first.
    pub normal_cells: Vec<[usize; 3]>,
}

/// `M(·, z)` for one boundary point `z`: walk inward along the normal
/// ray in steps of `h/4`, take the first three distinct cells met, and
/// extrapolate the normalized ratios `M_t(·) = G(·,y_t)/G(x_0,y_t)` to
/// zero depth through the Lagrange weights of the cells' actual radial
/// depths. Writing the result as `M = 1 + Σ_t w_t (M_t − 1)` keeps the
/// row at `x_0` exactly one in floating point.
fn martin_at_point(
    gen: &DiscreteGenerator,
    columns: &GreenColumns,
    x0: usize,
    center: &[f64],
    z: &[f64],
) -> Result<(Vec<f64>, [usize; 3]), GridError> {
    let h = gen.mesh.h;
    let radius = geom::dist(z, center);
    let inward: Vec<f64> = z
        .iter()
        .zip(center)
        .map(|(zi, ci)| (ci - zi) / radius)
        .collect();
    let mut cells: Vec<usize> = Vec::with_capacity(3);
    let mut depths: Vec<f64> = Vec::with_capacity(3);
    let mut step = 1;
    while cells.len() < 3 {
        if step > 40 {
            return Err(GridError::Unsupported(format!(
                "no three distinct extraction cells along the ray into {z:?}; refine the mesh"
            )));
        }
        let p = geom::add_scaled(z, 0.25 * h * step as f64, &inward);
        step += 1;
        let Some(c) = gen.mesh.nearest_cell(&p) else {
            continue;
        };
        if cells.contains(&c) {
            continue;
        }
        // radial depth of the snapped cell, not of the probe point
        let depth = radius - geom::dist(gen.mesh.center(c), center);
        if depth <= 0.0 || depths.iter().any(|d| (d - depth).abs() < 1e-9 * h) {
            continue;
        }
        cells.push(c);
        depths.push(depth);
    }
    let cells: [usize; 3] = [cells[0], cells[1], cells[2]];
    // Lagrange weights of the quadratic through the three depths,
    // evaluated at depth zero
    let w: Vec<f64> = (0..3)
        .map(|t| {
            (0..3)
                .filter(|&s| s != t)
                .map(|s| depths[s] / (depths[s] - depths[t]))
                .product()
        })
        .collect();
    let mut normalized: Vec<Vec<f64>> = Vec::with_capacity(3);
    for &c in &cells {
        let col = columns.col(c);
        let denom = col[x0];
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(GridError::DegenerateColumn {
                column: c,
                value: denom,
            });
        }
        normalized.push(col.iter().map(|v| v / denom).collect());
    }
    let n = gen.n();
    let m = (0..n)
        .map(|i| {
            1.0 + w[0] * (normalized[0][i] - 1.0)
                + w[1] * (normalized[1][i] - 1.0)
                + w[2] * (normalized[2][i] - 1.0)
        })
        .collect();
    Ok((m, cells))
}

/// Martin kernel for every boundary cap of a ball mesh, normalized at the
/// deep reference cell `x0` (`δ(x_0) ≥ R/2` required).
/// Two orthonormal tangents perpendicular to `axis`, by Gram–Schmidt
/// over the coordinate directions.
fn tangent_frame(axis: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = axis.len();
    let mut frame: Vec<Vec<f64>> = Vec::new();
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        let proj: f64 = e.iter().zip(axis).map(|(a, b)| a * b).sum();
        let mut t: Vec<f64> = e.iter().zip(axis).map(|(a, b)| a - proj * b).collect();
        for f in &frame {
            let p: f64 = t.iter().zip(f).map(|(a, b)| a * b).sum();
            for (ti, fi) in t.iter_mut().zip(f) {
                *ti -= p * fi;
            }
        }
        let n = geom::norm(&t);
        if n > 1e-9 {
            for ti in &mut t {
                *ti /= n;
            }
            frame.push(t);
            if frame.len() == 2 {
                break;
            }
        }
    }
    let v = frame.pop().expect("d >= 2");
    let u = frame.pop().expect("d >= 2");
    (u, v)
}

pub fn martin_kernel(
    gen: &DiscreteGenerator,
    columns: &GreenColumns,
    x0: usize,
) -> Result<MartinKernel, GridError> {
    let MeshDomain::Ball(ball) = &gen.mesh.domain else {
        return Err(GridError::Unsupported("Martin table needs a ball mesh".into()));
    };
    if gen.mesh.delta(x0) < 0.5 * ball.radius * (1.0 - 1e-12) {
        return Err(GridError::Unsupported(format!(
            "reference cell sits {} from the boundary; at least R/2 = {} required",
            gen.mesh.delta(x0),
            0.5 * ball.radius
        )));
    }
    let channels = gen
        .mesh
        .channels
        .as_ref()
        .expect("ball meshes always carry channels");
    let n_caps = channels.n_caps();
    // The kernel column for a cap averages extractions over a 3×3
    // equal-area stratified sample of the cap: the density theorem
    // integrates M against ω(x_0, ·) over the cap, and a lone midpoint
    // sample leaves a first-order representative error that the
    // stratified average removes.
    let mut values = DMatrix::zeros(gen.n(), n_caps);
    let mut boundary_points = Vec::with_capacity(n_caps);
    let mut normal_cells = Vec::with_capacity(n_caps);
    for cap in 0..n_caps {
        let dirs = channels.cells.caps.stratified_directions(cap, 3);
        // the midpoint of the sample grid coincides with the cap's
        // representative direction, so its ray doubles as the cap's normal
        let central = dirs.len() / 2;
        let mut acc = vec![0.0f64; gen.n()];
        let mut cap_point = Vec::new();
        let mut cap_cells = [0usize; 3];
        for (p, dir) in dirs.iter().enumerate() {
            let zp: Vec<f64> = (0..dir.len())
                .map(|k| ball.center[k] + ball.radius * dir[k])
                .collect();
            let (mp, cells) = martin_at_point(gen, columns, x0, &ball.center, &zp)?;
            for (a, v) in acc.iter_mut().zip(&mp) {
                *a += v - 1.0;
            }
            if p == central {
                cap_point = zp;
                cap_cells = cells;
            }
        }
        let p = dirs.len() as f64;
        for (i, a) in acc.iter().enumerate() {
            values[(i, cap)] = 1.0 + a / p;
        }
        boundary_points.push(cap_point);
        normal_cells.push(cap_cells);
    }
    Ok(MartinKernel {
        values,
        boundary_points,
        x0,
        normal_cells,
    })
}

/// Oscillation of `M(x, ·)` over nested boundary caps.
#[derive(Debug, Clone)]
pub struct OscillationRow {
    /// Angular radius of the cap (radians).
    pub theta: f64,
    /// `max − min` of the extracted Martin values over the sampled cap.
    pub osc: f64,
    pub n_points: usize,
}

/// Sample `M(x, z)` over boundary caps of shrinking angular radius around
/// the direction `around`, eight ring points per radius plus the apex; the
/// point sets are nested, so the oscillation is monotone in `theta` by
/// construction and the table shows how fast it collapses.
pub fn martin_oscillation(
    gen: &DiscreteGenerator,
    columns: &GreenColumns,
    x0: usize,
    x: usize,
    around: &[f64],
    radii: &[f64],
) -> Result<Vec<OscillationRow>, GridError> {
    let MeshDomain::Ball(ball) = &gen.mesh.domain else {
        return Err(GridError::Unsupported("Martin table needs a ball mesh".into()));
    };
    let d = ball.center.len();
    let axis = {
        let n = geom::norm(around);
        if !(n > 0.0) {
            return Err(GridError::Unsupported("zero direction".into()));
        }
        around.iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    let (u, v) = tangent_frame(&axis);
    let (u, v) = (&u, &v);
    let mut sorted: Vec<f64> = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    let apex: Vec<f64> = (0..d)
        .map(|k| ball.center[k] + ball.radius * axis[k])
        .collect();
    let (m_apex, _) = martin_at_point(gen, columns, x0, &ball.center, &apex)?;
    let mut vals = vec![m_apex[x]];
    let mut rows = Vec::new();
    for &theta in &sorted {
        for ring in 0..8 {
            let phi = std::f64::consts::TAU * ring as f64 / 8.0;
            let z: Vec<f64> = (0..d)
                .map(|k| {
                    ball.center[k]
                        + ball.radius
                            * (theta.cos() * axis[k]
                                + theta.sin() * (phi.cos() * u[k] + phi.sin() * v[k]))
                })
                .collect();
            let (m, _) = martin_at_point(gen, columns, x0, &ball.center, &z)?;
            vals.push(m[x]);
        }
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        rows.push(OscillationRow {
            theta,
            osc: max - min,
            n_points: vals.len(),
        });
    }
    Ok(rows)
}

/// Both sides of the harmonic-measure density identity per boundary cap.
#[derive(Debug, Clone)]
pub struct DensityCheck {
    /// `ω(x, cap)` from the Green-column route.
    pub lhs: Vec<f64>,
    /// `(ω(x,cap)/ω(x_0,cap))·ω(x_0,cap)` from the matrix route — the
    /// chain's own density; equality with `lhs` is the bookkeeping
    /// identity between the two solve routes.
    pub rhs_channel: Vec<f64>,
    /// `M(x, z_cap)·ω(x_0, cap)` with the extracted Martin kernel — the
    /// substantive factorization of harmonic measure through `x_0`.
    pub rhs_martin: Vec<f64>,
    pub gap_channel: f64,
    pub gap_martin: f64,
    pub max_cap_mass: f64,
}

pub fn harmonic_measure_density_check(
    gen: &DiscreteGenerator,
    columns: &GreenColumns,
    martin: &MartinKernel,
    x: usize,
) -> Result<DensityCheck, GridError> {
    let channels = gen.mesh.channels.as_ref().ok_or_else(|| {
        GridError::Unsupported("density check needs a ball mesh with exit channels".into())
    })?;
    let n_caps = channels.n_caps();
    let law_x = exit_law(gen, columns, x);
    let matrix = exit_law_matrix(gen, columns.solver());
    let x0 = martin.x0;
    let mut lhs = Vec::with_capacity(n_caps);
    let mut rhs_channel = Vec::with_capacity(n_caps);
    let mut rhs_martin = Vec::with_capacity(n_caps);
    for cap in 0..n_caps {
        let omega_x0 = matrix[(x0, cap)];
        lhs.push(law_x[cap]);
        rhs_channel.push((matrix[(x, cap)] / omega_x0) * omega_x0);
        rhs_martin.push(martin.values[(x, cap)] * omega_x0);
    }
    let max_cap_mass = lhs.iter().cloned().fold(0.0f64, f64::max);
    let gap_channel = lhs
        .iter()
        .zip(&rhs_channel)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let gap_martin = lhs
        .iter()
        .zip(&rhs_martin)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    Ok(DensityCheck {
        lhs,
        rhs_channel,
        rhs_martin,
        gap_channel,
        gap_martin,
        max_cap_mass,
    })
}

/// Both routes to the jump-exit mass into a set of exterior channels.
#[derive(Debug, Clone)]
pub struct LevyCheck {
    /// Row of the absorbed-chain exit law summed over the targets.
    pub lhs: f64,
    /// `Σ_z G(x,z)·J(z, A)·h^d` through the Green column.
    pub rhs: f64,
    pub gap: f64,
}

/// The discrete Lévy-system identity: jump-exit mass into exterior
/// channels `targets` equals the Green-column-weighted absorption rate.
/// Two genuinely different solve routes must agree to solver precision.
pub fn levy_exit_identity_check(
    gen: &DiscreteGenerator,
    columns: &GreenColumns,
    x: usize,
    targets: &[usize],
) -> Result<LevyCheck, GridError> {
    let channels = gen.mesh.channels.as_ref().ok_or_else(|| {
        GridError::Unsupported("jump-exit identity needs a ball mesh with exit channels".into())
    })?;
    let n_caps = channels.n_caps();
    for &t in targets {
        if t < n_caps || t >= gen.n_channels() {
            return Err(GridError::Unsupported(format!(
                "target channel {t} is not an exterior cell (caps end at {n_caps})"
            )));
        }
    }
    let matrix = exit_law_matrix(gen, columns.solver());
    let lhs: f64 = targets.iter().map(|&t| matrix[(x, t)]).sum();
    let col = columns.col(x);
    let hd = columns.solver().hd;
    let rhs: f64 = (0..gen.n())
        .map(|z| {
            let rate: f64 = targets.iter().map(|&t| gen.absorb[(z, t)]).sum();
            col[z] * hd * rate
        })
        .sum();
    Ok(LevyCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}
