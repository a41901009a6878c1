//! Exit-problem estimators: ensembles of first-exit paths turned into
//! solutions of boundary problems, exit laws, gauges, and hitting
//! probabilities, each with standard errors and censoring accounting.

use crate::geom::{self, BallDomain, ExitDomain, SpherePartition};
use crate::model::OperatorModel;
use crate::quad::BallTargetRate;
use crate::sim::{
    self, simulate_until_exit, NoHooks, PathConfig, PathHooks, SimError,
};
use crate::stats::{excess_kurtosis, Estimate, RunningStats, StatsError};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("{fraction:.3} of paths were censored at t_max; exit statistics would be biased")]
    ExcessiveCensoring { fraction: f64 },
    #[error("boundary data is not finite (or exceeds {BOUNDARY_DATA_CEILING:e}) at exit point {at:?}")]
    UnboundedBoundaryData { at: Vec<f64> },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("reference value {value} ± {stderr} is not significantly positive")]
    ReferenceDegenerate { value: f64, stderr: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Hard ceiling on the censored fraction; estimators refuse beyond it.
pub const CENSOR_CEILING: f64 = 0.01;
/// Above this fraction the estimate is returned but flagged.
pub const CENSOR_FLAG_LEVEL: f64 = 0.001;
/// Sample excess kurtosis above which a gauge estimate is flagged as
/// heavy-tailed (its stderr is then untrustworthy).
pub const HEAVY_TAIL_KURTOSIS: f64 = 10.0;
/// Boundary data larger than this in absolute value is treated as
/// unbounded and refused.
pub const BOUNDARY_DATA_CEILING: f64 = 1e12;

fn checked_data(v: f64, at: &[f64]) -> Result<f64, EstimateError> {
    if !v.is_finite() || v.abs() > BOUNDARY_DATA_CEILING {
        return Err(EstimateError::UnboundedBoundaryData { at: at.to_vec() });
    }
    Ok(v)
}

fn censor_flag(censored: u64, n: u64) -> Result<bool, EstimateError> {
    let fraction = censored as f64 / n.max(1) as f64;
    if fraction > CENSOR_CEILING {
        return Err(EstimateError::ExcessiveCensoring { fraction });
    }
    Ok(fraction > CENSOR_FLAG_LEVEL)
}

/// Run `n_paths` independent jobs, one counter-based RNG stream per path
/// index. Work is distributed with rayon but results are collected in path
/// order and folded sequentially by the callers, so the numbers do not
/// depend on the worker count.
pub fn run_paths<T, F>(n_paths: u64, master_seed: u64, job: F) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> Result<T, SimError> + Sync,
{
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = sim::path_rng(master_seed, i);
            job(i, &mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Plain exit statistics
// ---------------------------------------------------------------------------

/// `E^x τ` with standard error. Censored paths contribute their censoring
/// time (a lower bound); more than [`CENSOR_CEILING`] of them is an error.
pub fn expected_exit_time<D>(
    model: &OperatorModel,
    domain: &D,
    start: &[f64],
    cfg: &PathConfig,
    n_paths: u64,
    seed: u64,
) -> Result<Estimate, EstimateError>
where
    D: ExitDomain + ?Sized,
{
    let outs = run_paths(n_paths, seed, |_, rng| {
        let rec = simulate_until_exit(model, domain, start, cfg, rng, &mut NoHooks)?;
        Ok((rec.tau, rec.censored))
    })?;
    let mut stats = RunningStats::new();
    let mut censored = 0u64;
    for (tau, c) in &outs {
        stats.push(*tau);
        censored += u64::from(*c);
    }
    let mut est = Estimate::from_stats(&stats, censored);
    est.flags.excessive_censoring = censor_flag(censored, n_paths)?;
    Ok(est)
}

/// Solution of the exterior-data problem `u(x) = E^x f(X_τ)` (for jump
/// exits `X_τ` lands outside the closure, so `f` must be defined on the
/// whole complement). Non-finite boundary data is refused.
pub fn solve_dirichlet<D>(
    model: &OperatorModel,
    domain: &D,
    start: &[f64],
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    cfg: &PathConfig,
    n_paths: u64,
    seed: u64,
) -> Result<Estimate, EstimateError>
where
    D: ExitDomain + ?Sized,
{
    let outs = run_paths(n_paths, seed, |_, rng| {
        let rec = simulate_until_exit(model, domain, start, cfg, rng, &mut NoHooks)?;
        Ok((rec.exit_pos, rec.censored))
    })?;
    let mut stats = RunningStats::new();
    let mut censored = 0u64;
    for (exit, c) in &outs {
        stats.push(checked_data(f(exit), exit)?);
        censored += u64::from(*c);
    }
    let mut est = Estimate::from_stats(&stats, censored);
    est.flags.excessive_censoring = censor_flag(censored, n_paths)?;
    Ok(est)
}

// ---------------------------------------------------------------------------
// Gauges
// ---------------------------------------------------------------------------

/// The gauge `H(x) = E^x exp(∫_0^τ q(X_t) dt)`. Exactly 1 path-by-path
/// when `q ≡ 0`. Flags heavy tails (sample kurtosis), which appear as the
/// potential approaches non-gaugeability.
pub fn gauge<D>(
    model: &OperatorModel,
    domain: &D,
    start: &[f64],
    cfg: &PathConfig,
    n_paths: u64,
    seed: u64,
) -> Result<Estimate, EstimateError>
where
    D: ExitDomain + ?Sized,
{
    let outs = run_paths(n_paths, seed, |_, rng| {
        let rec = simulate_until_exit(model, domain, start, cfg, rng, &mut NoHooks)?;
        Ok((rec.q_integral.exp(), rec.censored))
    })?;
    let mut stats = RunningStats::new();
    let mut censored = 0u64;
    let mut values = Vec::with_capacity(outs.len());
    for (v, c) in &outs {
        stats.push(*v);
        values.push(*v);
        censored += u64::from(*c);
    }
    let mut est = Estimate::from_stats(&stats, censored);
    est.flags.excessive_censoring = censor_flag(censored, n_paths)?;
    est.flags.heavy_tail = excess_kurtosis(&values) > HEAVY_TAIL_KURTOSIS;
    Ok(est)
}

/// Solution of the potential-weighted exterior-data problem
/// `u(x) = E^x [exp(∫_0^τ q) · f(X_τ)]`. With `q ≡ 0` this reproduces
/// [`solve_dirichlet`] bit for bit under the same seed.
pub fn solve_schrodinger<D>(
    model: &OperatorModel,
    domain: &D,
    start: &[f64],
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    cfg: &PathConfig,
    n_paths: u64,
    seed: u64,
) -> Result<Estimate, EstimateError>
where
    D: ExitDomain + ?Sized,
{
    let outs = run_paths(n_paths, seed, |_, rng| {
        let rec = simulate_until_exit(model, domain, start, cfg, rng, &mut NoHooks)?;
        Ok((rec.exit_pos, rec.q_integral, rec.censored))
    })?;
    let mut stats = RunningStats::new();
    let mut censored = 0u64;
    let mut values = Vec::with_capacity(outs.len());
    for (exit, q_int, c) in &outs {
        let fv = checked_data(f(exit), exit)?;
        let v = q_int.exp() * fv;
        stats.push(v);
        values.push(v);
        censored += u64::from(*c);
    }
    let mut est = Estimate::from_stats(&stats, censored);
    est.flags.excessive_censoring = censor_flag(censored, n_paths)?;
    est.flags.heavy_tail = excess_kurtosis(&values) > HEAVY_TAIL_KURTOSIS;
    Ok(est)
}

/// Smallness certificate for the potential over a probe set: the largest
/// probe value of `E^x ∫_0^τ |q|(X_t) dt`. When the certificate (value
/// plus 3 standard errors) stays below 1, the gauge is bounded by
/// `1/(1 − η)` uniformly over the probes.
#[derive(Debug, Clone)]
pub struct SmallnessCertificate {
    pub eta: f64,
    pub eta_stderr: f64,
    pub argmax: Vec<f64>,
    pub probe_values: Vec<(Vec<f64>, Estimate)>,
    pub gaugeable: bool,
    pub gauge_bound: Option<f64>,
}

pub fn khasminskii_certificate<D>(
    model: &OperatorModel,
    domain: &D,
    probes: &[Vec<f64>],
    cfg: &PathConfig,
    n_each: u64,
    seed: u64,
) -> Result<SmallnessCertificate, EstimateError>
where
    D: ExitDomain + ?Sized,
{
    let mut probe_values = Vec::with_capacity(probes.len());
    for (pi, probe) in probes.iter().enumerate() {
        // one flat global stream space: probe pi owns [pi·n, (pi+1)·n)
        let outs = run_paths(n_each, seed, |i, _| {
            let mut rng = sim::path_rng(seed, pi as u64 * n_each + i);
            let rec = simulate_until_exit(model, domain, probe, cfg, &mut rng, &mut NoHooks)?;
            Ok((rec.abs_q_integral, rec.censored))
        })?;
        let mut stats = RunningStats::new();
        let mut censored = 0u64;
        for (v, c) in &outs {
            stats.push(*v);
            censored += u64::from(*c);
        }
        let mut est = Estimate::from_stats(&stats, censored);
        est.flags.excessive_censoring = censor_flag(censored, n_each)?;
        probe_values.push((probe.clone(), est));
    }
    let (argmax, best) = probe_values
        .iter()
        .max_by(|a, b| a.1.value.partial_cmp(&b.1.value).unwrap())
        .map(|(p, e)| (p.clone(), *e))
        .expect("at least one probe");
    let upper = best.value + 3.0 * best.stderr;
    let gaugeable = upper < 1.0;
    Ok(SmallnessCertificate {
        eta: best.value,
        eta_stderr: best.stderr,
        argmax,
        probe_values,
        gaugeable,
        gauge_bound: gaugeable.then(|| 1.0 / (1.0 - upper)),
    })
}

// ---------------------------------------------------------------------------
// Exit laws
// ---------------------------------------------------------------------------

/// Partition of the exit space into boundary caps (continuous exits on the
/// sphere), exterior shell cells (jump exits up to `r_ext`, geometric
/// radial spacing), and one far atom beyond `r_ext`.
#[derive(Debug, Clone)]
pub struct ExitLawCells {
    pub ball: BallDomain,
    pub caps: SpherePartition,
    /// Radial shell edges, `radius = edges[0] < … < edges[m] = r_ext`.
    pub shell_edges: Vec<f64>,
    pub angular: SpherePartition,
    pub r_ext: f64,
}

/// Where one exit landed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCell {
    /// Continuous exit through the boundary: cap index.
    Cap(usize),
    /// Jump exit into shell `shell`, angular cell `cell`.
    Shell { shell: usize, cell: usize },
    /// Jump exit beyond `r_ext`.
    Atom,
}

impl ExitLawCells {
    pub fn new(
        ball: BallDomain,
        caps: SpherePartition,
        n_shells: usize,
        angular: SpherePartition,
        r_ext: f64,
    ) -> Self {
        assert!(r_ext > ball.radius && n_shells >= 1);
        let ratio = r_ext / ball.radius;
        let shell_edges = (0..=n_shells)
            .map(|i| ball.radius * ratio.powf(i as f64 / n_shells as f64))
            .collect();
        Self {
            ball,
            caps,
            shell_edges,
            angular,
            r_ext,
        }
    }

    pub fn n_shells(&self) -> usize {
        self.shell_edges.len() - 1
    }

    /// Flattened cell count: caps, then shells × angular cells, then atom.
    pub fn n_cells(&self) -> usize {
        self.caps.n_cells() + self.n_shells() * self.angular.n_cells() + 1
    }

    pub fn classify(&self, exit: &[f64], via_jump: bool) -> ExitCell {
        let rel = geom::sub(exit, &self.ball.center);
        if !via_jump {
            return ExitCell::Cap(self.caps.cell_of(&rel));
        }
        let r = geom::norm(&rel);
        if r >= self.r_ext {
            return ExitCell::Atom;
        }
        let mut shell = self.n_shells() - 1;
        for i in 0..self.n_shells() {
            if r < self.shell_edges[i + 1] {
                shell = i;
                break;
            }
        }
        ExitCell::Shell {
            shell,
            cell: self.angular.cell_of(&rel),
        }
    }

    pub fn flat_index(&self, cell: ExitCell) -> usize {
        match cell {
            ExitCell::Cap(i) => i,
            ExitCell::Shell { shell, cell } => {
                self.caps.n_cells() + shell * self.angular.n_cells() + cell
            }
            ExitCell::Atom => self.n_cells() - 1,
        }
    }

    /// Midpoint representative of a flat cell (for evaluating boundary
    /// data per cell). The atom is represented by a point at `2·r_ext`
    /// along the first axis; exterior data used with atom lumping should
    /// be essentially constant that far out.
    pub fn representative(&self, flat: usize) -> Vec<f64> {
        let nc = self.caps.n_cells();
        let na = self.angular.n_cells();
        if flat < nc {
            let dir = self.caps.representative(flat);
            return geom::add_scaled(&self.ball.center, self.ball.radius, &dir);
        }
        if flat < nc + self.n_shells() * na {
            let shell = (flat - nc) / na;
            let cell = (flat - nc) % na;
            let r = 0.5 * (self.shell_edges[shell] + self.shell_edges[shell + 1]);
            let dir = self.angular.representative(cell);
            return geom::add_scaled(&self.ball.center, r, &dir);
        }
        let mut far = self.ball.center.clone();
        far[0] += 2.0 * self.r_ext;
        far
    }
}

/// Empirical exit law over [`ExitLawCells`]: integer counts (they sum to
/// the number of uncensored paths exactly) plus binomial errors on demand.
#[derive(Debug, Clone)]
pub struct HarmonicMeasureEstimate {
    pub cells: ExitLawCells,
    pub counts: Vec<u64>,
    pub n: u64,
    pub censored: u64,
}

impl HarmonicMeasureEstimate {
    /// Number of paths launched (uncensored + censored).
    pub fn started(&self) -> u64 {
        self.n + self.censored
    }

    /// Mass of one flat cell per *started* path, so that
    /// `Σ mass + censored fraction = 1` up to rounding. Binomial error.
    pub fn mass(&self, flat: usize) -> Estimate {
        let n = self.started() as f64;
        let p = self.counts[flat] as f64 / n;
        Estimate {
            value: p,
            stderr: (p * (1.0 - p) / n).sqrt(),
            n: self.started(),
            censored_count: self.censored,
            flags: Default::default(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.counts.len()).map(|i| self.mass(i).value).sum()
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.started() as f64
    }

    /// Share of *uncensored* paths that left by a jump; the complement is
    /// the share of continuous exits through the boundary.
    pub fn jump_fraction(&self) -> f64 {
        let caps = self.cells.caps.n_cells();
        let jump: u64 = self.counts[caps..].iter().sum();
        jump as f64 / self.n as f64
    }
}

/// Exit-position histogram of `n_paths` first exits.
pub fn harmonic_measure<D>(
    model: &OperatorModel,
    domain: &D,
    start: &[f64],
    cells: ExitLawCells,
    cfg: &PathConfig,
    n_paths: u64,
    seed: u64,
) -> Result<HarmonicMeasureEstimate, EstimateError>
where
    D: ExitDomain + ?Sized,
{
    let outs = run_paths(n_paths, seed, |_, rng| {
        let rec = simulate_until_exit(model, domain, start, cfg, rng, &mut NoHooks)?;
        if rec.censored {
            return Ok(None);
        }
        Ok(Some((rec.exit_pos, rec.via_jump)))
    })?;
    let mut counts = vec![0u64; cells.n_cells()];
    let mut censored = 0u64;
    let mut n = 0u64;
    for out in &outs {
        match out {
            None => censored += 1,
            Some((exit, via_jump)) => {
                counts[cells.flat_index(cells.classify(exit, *via_jump))] += 1;
                n += 1;
            }
        }
    }
    censor_flag(censored, n_paths)?;
    Ok(HarmonicMeasureEstimate {
        cells,
        counts,
        n,
        censored,
    })
}

// ---------------------------------------------------------------------------
// Hitting probabilities through the occupation identity
// ---------------------------------------------------------------------------

struct OccupationHook<'a> {
    rate: &'a BallTargetRate,
    center: &'a [f64],
    acc: f64,
}

impl PathHooks for OccupationHook<'_> {
    fn on_segment(&mut self, from: &[f64], to: &[f64], dt: f64) {
        let rf = self.rate.rate(geom::dist(from, self.center));
        let rt = self.rate.rate(geom::dist(to, self.center));
        self.acc += 0.5 * (rf + rt) * dt;
    }
}

/// `P^x(X_{τ_U} ∈ S)` for a ball target `S` disjoint from the domain `U`,
/// via the occupation identity: the expected number of jumps into `S`
/// before leaving `U` equals `E^x ∫_0^{τ_U} Λ_S(X_t) dt` with
/// `Λ_S(y) = ∫_S J(y, z) dz`. Because `S ∩ U = ∅`, a jump into `S` *is*
/// the exit, so the occupation integral estimates the hitting probability
/// with variance far below the indicator's when the event is rare.
///
/// Requires the reference power kernel in `d = 3` (the radial rate table)
/// and untruncated jumps.
pub fn hit_probability_via_levy<D>(
    model: &OperatorModel,
    domain: &D,
    start: &[f64],
    target: &BallDomain,
    cfg: &PathConfig,
    n_paths: u64,
    seed: u64,
) -> Result<Estimate, EstimateError>
where
    D: ExitDomain + ?Sized,
{
    let kernel = model
        .jump
        .as_ref()
        .ok_or_else(|| SimError::UnsupportedKernel("no jump kernel, nothing ever hits".into()))?;
    if kernel.custom.is_some() {
        return Err(SimError::UnsupportedKernel(
            "occupation rate table requires the reference power kernel".into(),
        )
        .into());
    }
    if model.d != 3 {
        return Err(SimError::UnsupportedKernel(
            "occupation rate table is built for d = 3".into(),
        )
        .into());
    }
    if cfg.truncate_jumps {
        return Err(SimError::BadConfig(
            "occupation rate table assumes untruncated jumps".into(),
        )
        .into());
    }
    if domain.contains(&target.center) {
        return Err(EstimateError::InvalidGeometry(
            "target ball must be disjoint from the domain".into(),
        ));
    }
    let far = 16.0 * (geom::dist(start, &target.center) + target.radius);
    let rate = BallTargetRate::new(target.radius, kernel.c, kernel.alpha, far);

    let outs = run_paths(n_paths, seed, |_, rng| {
        let mut hook = OccupationHook {
            rate: &rate,
            center: &target.center,
            acc: 0.0,
        };
        let rec = simulate_until_exit(model, domain, start, cfg, rng, &mut hook)?;
        Ok((hook.acc, rec.censored))
    })?;
    let mut stats = RunningStats::new();
    let mut censored = 0u64;
    for (v, c) in &outs {
        if !v.is_finite() {
            return Err(EstimateError::InvalidGeometry(
                "a path entered the target region; target must be disjoint from the domain"
                    .into(),
            ));
        }
        stats.push(*v);
        censored += u64::from(*c);
    }
    let mut est = Estimate::from_stats(&stats, censored);
    est.flags.excessive_censoring = censor_flag(censored, n_paths)?;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Potential;

    fn ball04() -> BallDomain {
        BallDomain::new(vec![0.0; 3], 0.4).unwrap()
    }

    fn fast_cfg() -> PathConfig {
        let mut cfg = PathConfig::for_ball_radius(0.4);
        cfg.dt = 1e-4;
        cfg
    }

    #[test]
    fn exit_time_estimate_matches_ball_formula() {
        let model = OperatorModel::preset_brownian_diagnostic(3);
        let est =
            expected_exit_time(&model, &ball04(), &[0.0; 3], &fast_cfg(), 10_000, 42).unwrap();
        let expect = 0.16 / 3.0;
        assert!(
            (est.value - expect).abs() < 4.0 * est.stderr + 7e-4,
            "{} vs {expect} (stderr {})",
            est.value,
            est.stderr
        );
        assert_eq!(est.censored_count, 0);
    }

    #[test]
    fn excessive_censoring_is_refused() {
        let model = OperatorModel::preset_brownian_diagnostic(3);
        let mut cfg = fast_cfg();
        cfg.t_max = 1e-3; // most paths cannot exit this fast
        let r = expected_exit_time(&model, &ball04(), &[0.0; 3], &cfg, 500, 42);
        assert!(matches!(
            r,
            Err(EstimateError::ExcessiveCensoring { fraction }) if fraction > 0.5
        ));
    }

    #[test]
    fn dirichlet_reproduces_harmonic_functions() {
        // For the half-Laplacian both y₁ and y₁² − |y|²/3 + R²/3 are
        // harmonic extensions of their boundary data.
        let model = OperatorModel::preset_brownian_diagnostic(3);
        let ball = ball04();
        let x = [0.1, 0.2, 0.0];
        let linear =
            solve_dirichlet(&model, &ball, &x, &|y: &[f64]| y[0], &fast_cfg(), 20_000, 7)
                .unwrap();
        assert!(
            (linear.value - 0.1).abs() < 4.0 * linear.stderr + 5e-4,
            "linear: {} (stderr {})",
            linear.value,
            linear.stderr
        );
        let quad = solve_dirichlet(
            &model,
            &ball,
            &x,
            &|y: &[f64]| y[0] * y[0],
            &fast_cfg(),
            20_000,
            8,
        )
        .unwrap();
        let expect = 0.1f64.powi(2) - (0.01 + 0.04) / 3.0 + 0.16 / 3.0;
        assert!(
            (quad.value - expect).abs() < 4.0 * quad.stderr + 5e-4,
            "quadratic: {} vs {expect}",
            quad.value
        );
    }

    #[test]
    fn exit_time_normalization_is_bounded_across_radii() {
        // The two-sided bound keeps E τ / R² between fixed constants, but
        // with α = 1 jumps the process is *not* scale-invariant: measured
        // normalized values drift from ≈0.044 (R = 1) to ≈0.128 (R = ¼).
        // The diffusion-only model, by contrast, scales exactly.
        let model = OperatorModel::preset_identity(3);
        let mut normalized = Vec::new();
        for &r in &[1.0, 0.5, 0.25] {
            let ball = BallDomain::new(vec![0.0; 3], r).unwrap();
            let cfg = PathConfig::for_ball_radius(r);
            let est = expected_exit_time(&model, &ball, &[0.0; 3], &cfg, 6_000, 11).unwrap();
            normalized.push(est.value / (r * r));
        }
        let hi = normalized.iter().cloned().fold(f64::MIN, f64::max);
        let lo = normalized.iter().cloned().fold(f64::MAX, f64::min);
        assert!(lo > 0.02 && hi < 0.2, "normalized exit times {normalized:?}");
        assert!(hi / lo < 3.5, "spread {normalized:?}");

        let bm = OperatorModel::preset_brownian_diagnostic(3);
        let mut taus = Vec::new();
        for &r in &[0.5, 0.25] {
            let ball = BallDomain::new(vec![0.0; 3], r).unwrap();
            let cfg = PathConfig::for_ball_radius(r);
            taus.push(expected_exit_time(&bm, &ball, &[0.0; 3], &cfg, 6_000, 12).unwrap());
        }
        let ratio = taus[0].value / taus[1].value;
        assert!((ratio - 4.0).abs() < 0.2, "diffusion scaling ratio {ratio}");
    }

    #[test]
    fn dirichlet_is_linear_and_respects_the_data_range() {
        let model = OperatorModel::preset_identity(3);
        let ball = ball04();
        let x = [0.1, -0.05, 0.0];
        let cfg = fast_cfg();
        let f = |y: &[f64]| y[0].sin();
        let g = |y: &[f64]| y[1] * y[1];
        let (alpha, beta) = (2.5, -0.75);
        let combo = |y: &[f64]| alpha * y[0].sin() + beta * y[1] * y[1];
        let ef = solve_dirichlet(&model, &ball, &x, &f, &cfg, 2_000, 17).unwrap();
        let eg = solve_dirichlet(&model, &ball, &x, &g, &cfg, 2_000, 17).unwrap();
        let ec = solve_dirichlet(&model, &ball, &x, &combo, &cfg, 2_000, 17).unwrap();
        let lin = alpha * ef.value + beta * eg.value;
        assert!(
            (ec.value - lin).abs() < 1e-12 * (1.0 + lin.abs()),
            "{} vs {lin}",
            ec.value
        );
        // maximum principle: the estimate stays within the data range
        assert!(ef.value <= 1.0 + 3.0 * ef.stderr && ef.value >= -1.0 - 3.0 * ef.stderr);
    }

    #[test]
    fn gauge_is_pathwise_monotone_in_the_potential() {
        let ball = ball04();
        let cfg = fast_cfg();
        let lo = OperatorModel::preset_identity(3).with_q(Potential::Const(-0.8));
        let hi = OperatorModel::preset_identity(3).with_q(Potential::Const(-0.2));
        let a = gauge(&lo, &ball, &[0.0; 3], &cfg, 1_000, 23).unwrap();
        let b = gauge(&hi, &ball, &[0.0; 3], &cfg, 1_000, 23).unwrap();
        assert!(a.value < b.value && b.value < 1.0);
    }

    #[test]
    fn schrodinger_with_unit_data_is_bitwise_gauge() {
        let model = OperatorModel::preset_identity(3).with_q(Potential::Const(-0.4));
        let ball = ball04();
        let cfg = fast_cfg();
        let a = gauge(&model, &ball, &[0.1, 0.0, 0.0], &cfg, 1_500, 29).unwrap();
        let b = solve_schrodinger(
            &model,
            &ball,
            &[0.1, 0.0, 0.0],
            &|_: &[f64]| 1.0,
            &cfg,
            1_500,
            29,
        )
        .unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn strong_potential_yields_no_certificate() {
        // |q|·E τ ≈ 30 · 0.053 ≈ 1.6 > 1: the construction cannot certify.
        let model = OperatorModel::preset_brownian_diagnostic(3).with_q(Potential::Const(30.0));
        let cert = khasminskii_certificate(
            &model,
            &ball04(),
            &[vec![0.0; 3]],
            &fast_cfg(),
            2_000,
            41,
        )
        .unwrap();
        assert!(cert.eta > 1.0);
        assert!(!cert.gaugeable);
        assert!(cert.gauge_bound.is_none());
    }

    #[test]
    fn gauge_respects_the_certificate_bound() {
        // v tuned so η = v E τ ≈ 0.5; closed form gauge kR/sin(kR) ≈ 1.76.
        let v = 0.5 * 3.0 / 0.16;
        let model = OperatorModel::preset_brownian_diagnostic(3).with_q(Potential::Const(v));
        let ball = ball04();
        let cfg = fast_cfg();
        let cert =
            khasminskii_certificate(&model, &ball, &[vec![0.0; 3]], &cfg, 4_000, 47).unwrap();
        assert!(cert.gaugeable, "eta = {}", cert.eta);
        let bound = cert.gauge_bound.unwrap();
        let est = gauge(&model, &ball, &[0.0; 3], &cfg, 20_000, 48).unwrap();
        assert!(
            est.value <= bound + 3.0 * est.stderr,
            "gauge {} exceeds certificate bound {bound}",
            est.value
        );
        let k = (2.0 * v).sqrt();
        let expect = k * 0.4 / (k * 0.4).sin();
        assert!(
            (est.value - expect).abs() < 4.0 * est.stderr + 5e-3,
            "{} vs {expect}",
            est.value
        );
    }

    #[test]
    fn unbounded_boundary_data_is_refused() {
        let model = OperatorModel::preset_brownian_diagnostic(3);
        let r = solve_dirichlet(
            &model,
            &ball04(),
            &[0.0; 3],
            &|_: &[f64]| f64::INFINITY,
            &fast_cfg(),
            50,
            1,
        );
        assert!(matches!(r, Err(EstimateError::UnboundedBoundaryData { .. })));
    }

    #[test]
    fn gauge_without_potential_is_exactly_one() {
        let model = OperatorModel::preset_variable_spd(3);
        let est = gauge(&model, &ball04(), &[0.1, 0.0, 0.0], &fast_cfg(), 300, 5).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.stderr, 0.0);
        assert!(!est.flags.heavy_tail);
    }

    #[test]
    fn gauge_matches_closed_form_for_constant_potential() {
        // ½Δu + q₀u = 0 in B(0,R), u = 1 outside: radially
        // u(0) = kR / sin(kR) with k = sqrt(2 q₀).
        let q0 = 1.0;
        let model = OperatorModel::preset_brownian_diagnostic(3).with_q(Potential::Const(q0));
        let est = gauge(&model, &ball04(), &[0.0; 3], &fast_cfg(), 20_000, 99).unwrap();
        let k = (2.0 * q0).sqrt();
        let expect = k * 0.4 / (k * 0.4).sin();
        assert!(
            (est.value - expect).abs() < 4.0 * est.stderr + 1e-3,
            "{} vs {expect} (stderr {})",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn schrodinger_at_zero_potential_is_bitwise_dirichlet() {
        let model = OperatorModel::preset_variable_spd(3);
        let ball = ball04();
        let f = |y: &[f64]| y[0] + 0.3 * y[1] * y[2];
        let a = solve_dirichlet(&model, &ball, &[0.05, 0.1, 0.0], &f, &fast_cfg(), 2_000, 31)
            .unwrap();
        let b = solve_schrodinger(&model, &ball, &[0.05, 0.1, 0.0], &f, &fast_cfg(), 2_000, 31)
            .unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn khasminskii_certificate_scales_with_exit_time() {
        // |q| ≡ 0.5 gives η(x) = 0.5·E^x τ, maximal at the center.
        let model =
            OperatorModel::preset_brownian_diagnostic(3).with_q(Potential::Const(-0.5));
        let probes = vec![vec![0.0; 3], vec![0.2, 0.0, 0.0], vec![0.0, -0.3, 0.0]];
        let cert =
            khasminskii_certificate(&model, &ball04(), &probes, &fast_cfg(), 4_000, 201)
                .unwrap();
        let expect = 0.5 * 0.16 / 3.0;
        assert!(
            (cert.eta - expect).abs() < 4.0 * cert.eta_stderr + 5e-4,
            "eta {} vs {expect}",
            cert.eta
        );
        assert_eq!(cert.argmax, vec![0.0; 3]);
        assert!(cert.gaugeable);
        let bound = cert.gauge_bound.unwrap();
        assert!(bound > 1.0 && bound < 1.1);
    }

    #[test]
    fn brownian_exit_law_is_uniform_over_caps() {
        let model = OperatorModel::preset_brownian_diagnostic(3);
        let cells = ExitLawCells::new(
            ball04(),
            SpherePartition::new(3, 3, 4),
            4,
            SpherePartition::new(3, 2, 2),
            1.2,
        );
        let hm = harmonic_measure(
            &model,
            &ball04(),
            &[0.0; 3],
            cells,
            &fast_cfg(),
            20_000,
            77,
        )
        .unwrap();
        assert_eq!(hm.counts.iter().sum::<u64>(), hm.n);
        assert_eq!(hm.jump_fraction(), 0.0);
        assert!((hm.total_mass() + hm.censored_fraction() - 1.0).abs() < 1e-12);
        // 12 equal-probability caps: chi-square goodness of fit
        let caps = hm.cells.caps.n_cells();
        let expect = hm.n as f64 / caps as f64;
        let chi2: f64 = hm.counts[..caps]
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        let p = crate::stats::chi_square_p_value(chi2, caps - 1);
        assert!(p > 1e-4, "chi2 {chi2} over {caps} caps, p = {p}");
    }

    #[test]
    fn jump_exit_law_fills_shells_and_atom() {
        let model = OperatorModel::preset_identity(3);
        let cells = ExitLawCells::new(
            ball04(),
            SpherePartition::new(3, 3, 4),
            4,
            SpherePartition::new(3, 2, 2),
            1.2,
        );
        let hm = harmonic_measure(
            &model,
            &ball04(),
            &[0.0; 3],
            cells,
            &fast_cfg(),
            20_000,
            78,
        )
        .unwrap();
        assert_eq!(hm.counts.iter().sum::<u64>(), hm.n);
        let jf = hm.jump_fraction();
        assert!(jf > 0.2 && jf < 0.95, "jump fraction {jf}");
        let atom = hm.counts[hm.cells.n_cells() - 1];
        assert!(atom > 0, "power tails must reach past r_ext");
        // every shell layer catches something at this path count
        let caps = hm.cells.caps.n_cells();
        let na = hm.cells.angular.n_cells();
        for shell in 0..hm.cells.n_shells() {
            let total: u64 = (0..na)
                .map(|c| hm.counts[caps + shell * na + c])
                .sum();
            assert!(total > 0, "empty shell {shell}");
        }
    }

    #[test]
    fn occupation_estimator_agrees_with_direct_indicator() {
        let model = OperatorModel::preset_identity(3);
        let ball = ball04();
        let target = BallDomain::new(vec![0.8, 0.0, 0.0], 0.15).unwrap();
        let cfg = fast_cfg();
        let occ =
            hit_probability_via_levy(&model, &ball, &[0.0; 3], &target, &cfg, 4_000, 301)
                .unwrap();
        let direct = solve_dirichlet(
            &model,
            &ball,
            &[0.0; 3],
            &|y: &[f64]| f64::from(geom::dist(y, &[0.8, 0.0, 0.0]) < 0.15),
            &cfg,
            60_000,
            302,
        )
        .unwrap();
        let gap = (occ.value - direct.value).abs();
        let sigma = (occ.stderr.powi(2) + direct.stderr.powi(2)).sqrt();
        assert!(
            gap < 4.0 * sigma,
            "occupation {} ± {} vs direct {} ± {}",
            occ.value,
            occ.stderr,
            direct.value,
            direct.stderr
        );
        // the whole point: far smaller error on the same budget
        assert!(occ.stderr < direct.stderr);
        assert!(occ.value > 0.0);
    }

    #[test]
    fn occupation_estimator_rejects_bad_setups() {
        let ball = ball04();
        let cfg = fast_cfg();
        let no_jumps = OperatorModel::preset_brownian_diagnostic(3);
        let inside_target = BallDomain::new(vec![0.1, 0.0, 0.0], 0.05).unwrap();
        let far_target = BallDomain::new(vec![0.8, 0.0, 0.0], 0.1).unwrap();
        assert!(hit_probability_via_levy(
            &no_jumps, &ball, &[0.0; 3], &far_target, &cfg, 10, 1
        )
        .is_err());
        let model = OperatorModel::preset_identity(3);
        assert!(matches!(
            hit_probability_via_levy(&model, &ball, &[0.0; 3], &inside_target, &cfg, 10, 1),
            Err(EstimateError::InvalidGeometry(_))
        ));
        let mut trunc = cfg.clone();
        trunc.truncate_jumps = true;
        assert!(hit_probability_via_levy(
            &model, &ball, &[0.0; 3], &far_target, &trunc, 10, 1
        )
        .is_err());
    }

    #[test]
    fn ensembles_are_worker_count_invariant() {
        let model = OperatorModel::preset_variable_spd(3);
        let ball = ball04();
        let cfg = fast_cfg();
        let job = |_i: u64, rng: &mut ChaCha8Rng| {
            let rec = simulate_until_exit(&model, &ball, &[0.1, 0.0, 0.0], &cfg, rng, &mut NoHooks)?;
            Ok(rec.tau)
        };
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let r1 = pool1.install(|| run_paths(500, 9, job)).unwrap();
        let r4 = pool4.install(|| run_paths(500, 9, job)).unwrap();
        assert_eq!(r1.len(), r4.len());
        for (a, b) in r1.iter().zip(&r4) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
