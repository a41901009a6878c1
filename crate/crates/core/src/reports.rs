//! Inequality reporters: interior Harnack ratios, Carleson domination at a
//! boundary point, boundary-Harnack quotients `u/δ_B`, and the linear decay
//! of exit probabilities with boundary distance. The paper-style statements
//! assert existence of constants; the reporters measure the empirical
//! constants and leave stability judgments to the caller.

use crate::estimate::{run_paths, EstimateError};
use crate::geom::{self, BallDomain, BoundaryChart, ExitDomain};
use crate::model::OperatorModel;
use crate::sim::{self, simulate_until_exit, NoHooks, PathConfig};
use crate::stats::{Estimate, StatsError};

/// Pointwise solution evaluator: Monte Carlo, grid interpolation, or a
/// closed form — the reporters do not care where estimates come from.
pub type Evaluator<'a> = dyn Fn(&[f64]) -> Result<Estimate, EstimateError> + 'a;

#[derive(Debug, Clone)]
pub struct ProbeValue {
    pub point: Vec<f64>,
    pub estimate: Estimate,
}

/// Worst-case ratio `sup u / inf u` over a probe set, with first-order
/// error propagation and the witnessing indices (first occurrence wins
/// ties, so reruns on the same probe order agree).
#[derive(Debug, Clone)]
pub struct RatioReport {
    pub ratio: Estimate,
    pub sup_index: usize,
    pub inf_index: usize,
    pub probes: Vec<ProbeValue>,
}

fn evaluate_probes(
    u: &Evaluator,
    probes: &[Vec<f64>],
) -> Result<Vec<ProbeValue>, EstimateError> {
    probes
        .iter()
        .map(|p| {
            Ok(ProbeValue {
                point: p.clone(),
                estimate: u(p)?,
            })
        })
        .collect()
}

fn sup_inf_ratio(values: &[ProbeValue]) -> Result<(usize, usize, Estimate), EstimateError> {
    if values.is_empty() {
        return Err(EstimateError::InvalidGeometry("empty probe set".into()));
    }
    for v in values {
        let e = &v.estimate;
        if e.value - 3.0 * e.stderr <= 0.0 {
            return Err(StatsError::NonPositiveValue {
                value: e.value,
                stderr: e.stderr,
            }
            .into());
        }
    }
    let mut sup = 0;
    let mut inf = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if v.estimate.value > values[sup].estimate.value {
            sup = i;
        }
        if v.estimate.value < values[inf].estimate.value {
            inf = i;
        }
    }
    let ratio = values[sup].estimate.ratio(&values[inf].estimate)?;
    Ok((sup, inf, ratio))
}

/// Harnack ratio of a positive solution over probes in the closed
/// half-ball `B(x_0, R/2)`.
pub fn harnack_report(
    u: &Evaluator,
    ball: &BallDomain,
    probes: &[Vec<f64>],
) -> Result<RatioReport, EstimateError> {
    let half = 0.5 * ball.radius * (1.0 + 1e-12);
    for p in probes {
        if geom::dist(p, &ball.center) > half {
            return Err(EstimateError::InvalidGeometry(format!(
                "probe {p:?} lies outside the half-ball of radius {half:.6}"
            )));
        }
    }
    let values = evaluate_probes(u, probes)?;
    let (sup_index, inf_index, ratio) = sup_inf_ratio(&values)?;
    Ok(RatioReport {
        ratio,
        sup_index,
        inf_index,
        probes: values,
    })
}

/// Carleson domination report: the largest `u(x) / u(x_r)` over probes in
/// `B ∩ B(Q, r/2)`, where the interior reference `x_r` sits on the inward
/// normal at chart depth `ρ_Q(x_r) = r/2` (the statement leaves the
/// tangential position of the reference free; the reporter pins it to the
/// normal axis for reproducibility).
#[derive(Debug, Clone)]
pub struct CarlesonReport {
    pub base: Vec<f64>,
    pub r: f64,
    pub x_r: Vec<f64>,
    pub reference: Estimate,
    pub max_ratio: Estimate,
    pub witness: usize,
    pub probes: Vec<ProbeValue>,
}

fn check_boundary_patch(
    chart: &BoundaryChart,
    r: f64,
    probes: &[Vec<f64>],
) -> Result<(), EstimateError> {
    if !(r > 0.0 && r < chart.r1 / 2.0) {
        return Err(EstimateError::InvalidGeometry(format!(
            "patch radius {r} must lie in (0, R1/2) = (0, {})",
            chart.r1 / 2.0
        )));
    }
    let reach = 0.5 * r * (1.0 + 1e-12);
    for p in probes {
        if !chart.ball.contains(p) || geom::dist(p, &chart.base) > reach {
            return Err(EstimateError::InvalidGeometry(format!(
                "probe {p:?} lies outside B ∩ B(Q, r/2)"
            )));
        }
    }
    Ok(())
}

pub fn carleson_report(
    chart: &BoundaryChart,
    r: f64,
    u: &Evaluator,
    probes: &[Vec<f64>],
) -> Result<CarlesonReport, EstimateError> {
    check_boundary_patch(chart, r, probes)?;
    if probes.is_empty() {
        return Err(EstimateError::InvalidGeometry("empty probe set".into()));
    }
    let x_r = chart.normal_point(r / 2.0);
    let reference = u(&x_r)?;
    if reference.value - 3.0 * reference.stderr <= 0.0 {
        return Err(EstimateError::ReferenceDegenerate {
            value: reference.value,
            stderr: reference.stderr,
        });
    }
    let values = evaluate_probes(u, probes)?;
    let mut witness = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, v) in values.iter().enumerate() {
        if v.estimate.value > best {
            best = v.estimate.value;
            witness = i;
        }
    }
    let max_ratio = values[witness].estimate.ratio(&reference)?;
    Ok(CarlesonReport {
        base: chart.base.clone(),
        r,
        x_r,
        reference,
        max_ratio,
        witness,
        probes: values,
    })
}

/// Boundary-Harnack report: worst ratio of the quotients `u(x)/δ_B(x)`
/// over probes in `B ∩ B(Q, r/2)`; all probes must keep a boundary
/// distance above `floor` (the resolution of whatever produced `u`).
#[derive(Debug, Clone)]
pub struct BhpRow {
    pub point: Vec<f64>,
    pub delta: f64,
    pub estimate: Estimate,
    pub quotient: Estimate,
}

#[derive(Debug, Clone)]
pub struct BhpReport {
    pub base: Vec<f64>,
    pub r: f64,
    pub max_ratio: Estimate,
    pub sup_index: usize,
    pub inf_index: usize,
    pub rows: Vec<BhpRow>,
}

pub fn bhp_report(
    chart: &BoundaryChart,
    r: f64,
    u: &Evaluator,
    probes: &[Vec<f64>],
    floor: f64,
) -> Result<BhpReport, EstimateError> {
    check_boundary_patch(chart, r, probes)?;
    let mut rows = Vec::with_capacity(probes.len());
    for p in probes {
        let delta = chart.ball.delta(p);
        if delta <= floor {
            return Err(EstimateError::InvalidGeometry(format!(
                "probe {p:?} has boundary distance {delta:.3e} at or below the floor {floor:.3e}"
            )));
        }
        let estimate = u(p)?;
        let quotient = Estimate {
            value: estimate.value / delta,
            stderr: estimate.stderr / delta,
            ..estimate
        };
        rows.push(BhpRow {
            point: p.clone(),
            delta,
            estimate,
            quotient,
        });
    }
    let quotients: Vec<ProbeValue> = rows
        .iter()
        .map(|row| ProbeValue {
            point: row.point.clone(),
            estimate: row.quotient,
        })
        .collect();
    let (sup_index, inf_index, max_ratio) = sup_inf_ratio(&quotients)?;
    Ok(BhpReport {
        base: chart.base.clone(),
        r,
        max_ratio,
        sup_index,
        inf_index,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Linear boundary decay of exit probabilities
// ---------------------------------------------------------------------------

/// One depth row: start on the inward normal at chart depth `depth`
/// (which equals `δ_B` there), exit the box `D_Q(δ_0, r_0)`, and record
/// where the exit landed.
#[derive(Debug, Clone)]
pub struct ExitDepthRow {
    pub depth: f64,
    pub start: Vec<f64>,
    /// `P(X_τ ∈ D_Q(2δ_0, r_0))` — landed in the taller collar box.
    pub into_collar: Estimate,
    /// `P(X_τ ∈ B)` — still inside the big ball.
    pub into_ball: Estimate,
}

#[derive(Debug, Clone)]
pub struct ExitLinearityTable {
    pub truncated: bool,
    pub rows: Vec<ExitDepthRow>,
    /// Least-squares slope through the origin of probability vs depth.
    pub collar_slope: f64,
    pub ball_slope: f64,
    pub collar_max_rel_residual: f64,
    pub ball_max_rel_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ExitLinearityReport {
    pub delta0: f64,
    pub width: f64,
    /// Untruncated jumps.
    pub full: ExitLinearityTable,
    /// Jumps restricted to size < 1.
    pub truncated: ExitLinearityTable,
}

/// Strict box membership with a relative margin, so that exit points
/// placed on a wall by the crossing search are never counted as interior.
fn in_box_with_margin(chart: &BoundaryChart, x: &[f64], height: f64, width: f64) -> bool {
    let (tilde, yd) = chart.to_chart(x);
    let t2 = geom::norm2(&tilde);
    if t2 >= chart.r1 * chart.r1 {
        return false;
    }
    let rho = yd - chart.phi(t2);
    let m = 1e-9 * height;
    rho >= m && rho <= height - m && t2.sqrt() <= width * (1.0 - 1e-9)
}

fn fit_through_origin(rows: &[(f64, f64)]) -> (f64, f64) {
    let sxy: f64 = rows.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = rows.iter().map(|(x, _)| x * x).sum();
    let slope = sxy / sxx;
    if slope <= 0.0 {
        return (slope, f64::INFINITY);
    }
    let worst = rows
        .iter()
        .map(|(x, y)| ((y - slope * x) / (slope * x)).abs())
        .fold(0.0, f64::max);
    (slope, worst)
}

/// Exit-probability decay near the boundary: start on the inward normal
/// at each depth (all `< δ_0`, inside `D_Q(δ_0, r_0)`), run to the exit of
/// that box, and measure how the chances of landing in the taller collar
/// `D_Q(2δ_0, r_0)` and of remaining in `B` scale with the depth. Both the
/// full process and the jump-truncated variant are tabulated, since the
/// statement is proved for the truncated process.
pub fn boundary_exit_linearity(
    model: &OperatorModel,
    chart: &BoundaryChart,
    delta0: f64,
    depths: &[f64],
    cfg: &PathConfig,
    n_each: u64,
    seed: u64,
) -> Result<ExitLinearityReport, EstimateError> {
    if !(delta0 > 0.0 && 2.0 * delta0 <= chart.r0) {
        return Err(EstimateError::InvalidGeometry(format!(
            "delta0 = {delta0} must satisfy 0 < 2·delta0 ≤ r0 = {}",
            chart.r0
        )));
    }
    if depths.is_empty() || depths.iter().any(|&d| d <= 0.0 || d >= delta0) {
        return Err(EstimateError::InvalidGeometry(
            "depths must be nonempty and lie strictly inside (0, delta0)".into(),
        ));
    }
    let width = chart.r0;
    let domain = chart.boxed(delta0, width);
    let ball = &chart.ball;
    let m_ball = 1e-9 * ball.radius;

    let mut tables = Vec::with_capacity(2);
    for (vi, truncated) in [false, true].into_iter().enumerate() {
        let mut cfg_v = cfg.clone();
        cfg_v.truncate_jumps = truncated;
        let mut rows = Vec::with_capacity(depths.len());
        for (di, &depth) in depths.iter().enumerate() {
            let start = chart.normal_point(depth);
            let block = (vi * depths.len() + di) as u64;
            let outs = run_paths(n_each, seed, |i, _| {
                let mut rng = sim::path_rng(seed, block * n_each + i);
                let rec =
                    simulate_until_exit(model, &domain, &start, &cfg_v, &mut rng, &mut NoHooks)?;
                if rec.censored {
                    return Ok(None);
                }
                let collar = in_box_with_margin(chart, &rec.exit_pos, 2.0 * delta0, width)
                    && ball.delta(&rec.exit_pos) > m_ball;
                let in_ball = ball.delta(&rec.exit_pos) > m_ball;
                Ok(Some((collar, in_ball)))
            })?;
            let mut n = 0u64;
            let mut censored = 0u64;
            let mut k_collar = 0u64;
            let mut k_ball = 0u64;
            for out in &outs {
                match out {
                    None => censored += 1,
                    Some((collar, in_ball)) => {
                        n += 1;
                        k_collar += u64::from(*collar);
                        k_ball += u64::from(*in_ball);
                    }
                }
            }
            let fraction = censored as f64 / n_each as f64;
            if fraction > crate::estimate::CENSOR_CEILING {
                return Err(EstimateError::ExcessiveCensoring { fraction });
            }
            let binom = |k: u64| {
                let p = k as f64 / n as f64;
                Estimate {
                    value: p,
                    stderr: (p * (1.0 - p) / n as f64).sqrt(),
                    n,
                    censored_count: censored,
                    flags: Default::default(),
                }
            };
            rows.push(ExitDepthRow {
                depth,
                start: start.clone(),
                into_collar: binom(k_collar),
                into_ball: binom(k_ball),
            });
        }
        let collar_pts: Vec<(f64, f64)> =
            rows.iter().map(|r| (r.depth, r.into_collar.value)).collect();
        let ball_pts: Vec<(f64, f64)> =
            rows.iter().map(|r| (r.depth, r.into_ball.value)).collect();
        let (collar_slope, collar_max_rel_residual) = fit_through_origin(&collar_pts);
        let (ball_slope, ball_max_rel_residual) = fit_through_origin(&ball_pts);
        tables.push(ExitLinearityTable {
            truncated,
            rows,
            collar_slope,
            ball_slope,
            collar_max_rel_residual,
            ball_max_rel_residual,
        });
    }
    let truncated = tables.pop().expect("two tables");
    let full = tables.pop().expect("two tables");
    Ok(ExitLinearityReport {
        delta0,
        width,
        full,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_evaluator(
        probes: &[Vec<f64>],
        values: Vec<(f64, f64)>,
    ) -> impl Fn(&[f64]) -> Result<Estimate, EstimateError> + '_ {
        move |x: &[f64]| {
            let i = probes
                .iter()
                .position(|p| p == x)
                .expect("evaluator called off the probe table");
            let (value, stderr) = values[i];
            Ok(Estimate {
                value,
                stderr,
                n: 1000,
                censored_count: 0,
                flags: Default::default(),
            })
        }
    }

    #[test]
    fn harnack_ratio_witnesses_and_scales() {
        let ball = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let probes = vec![
            vec![0.0, 0.0, 0.0],
            vec![0.3, 0.0, 0.0],
            vec![0.0, 0.3, 0.1],
            vec![-0.2, 0.1, 0.0],
        ];
        let vals = vec![(2.0, 0.01), (3.5, 0.01), (1.4, 0.01), (2.8, 0.01)];
        let u = table_evaluator(&probes, vals.clone());
        let rep = harnack_report(&u, &ball, &probes).unwrap();
        assert_eq!((rep.sup_index, rep.inf_index), (1, 2));
        assert!((rep.ratio.value - 3.5 / 1.4).abs() < 1e-15);

        // scale invariance: same witnesses, same ratio
        let scaled: Vec<(f64, f64)> = vals.iter().map(|(v, s)| (7.3 * v, 7.3 * s)).collect();
        let u2 = table_evaluator(&probes, scaled);
        let rep2 = harnack_report(&u2, &ball, &probes).unwrap();
        assert_eq!((rep2.sup_index, rep2.inf_index), (1, 2));
        assert!((rep2.ratio.value - rep.ratio.value).abs() < 1e-13 * rep.ratio.value);

        // constants give ratio exactly 1
        let uc = table_evaluator(&probes, vec![(0.7, 0.01); 4]);
        let repc = harnack_report(&uc, &ball, &probes).unwrap();
        assert_eq!(repc.ratio.value, 1.0);
        assert_eq!((repc.sup_index, repc.inf_index), (0, 0));
    }

    #[test]
    fn harnack_report_rejects_bad_inputs() {
        let ball = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let outside = vec![vec![0.6, 0.0, 0.0]]; // beyond R/2
        let u = table_evaluator(&outside, vec![(1.0, 0.0)]);
        assert!(matches!(
            harnack_report(&u, &ball, &outside),
            Err(EstimateError::InvalidGeometry(_))
        ));

        let probes = vec![vec![0.1, 0.0, 0.0], vec![0.2, 0.0, 0.0]];
        let u = table_evaluator(&probes, vec![(1.0, 0.001), (0.01, 0.02)]);
        assert!(matches!(
            harnack_report(&u, &ball, &probes),
            Err(EstimateError::Stats(StatsError::NonPositiveValue { .. }))
        ));
    }

    #[test]
    fn carleson_reference_sits_on_the_normal_at_half_depth() {
        let ball = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let q = vec![0.0, 0.0, -1.0];
        let chart = BoundaryChart::new(&ball, &q).unwrap();
        let r = chart.r1 / 4.0;
        // u = ρ_Q vertical boundary distance: deterministic, vanishing on ∂B.
        let u = |x: &[f64]| {
            Ok(Estimate {
                value: chart.rho(x).unwrap(),
                stderr: 1e-9,
                n: 100,
                censored_count: 0,
                flags: Default::default(),
            })
        };
        let probes = vec![
            chart.normal_point(r / 8.0),
            chart.normal_point(r / 4.0),
            chart.from_chart(&[r / 16.0, 0.0], r / 8.0),
        ];
        let rep = carleson_report(&chart, r, &u, &probes).unwrap();
        assert!((chart.rho(&rep.x_r).unwrap() - r / 2.0).abs() < 1e-15);
        assert!((rep.reference.value - r / 2.0).abs() < 1e-12);
        // max over probes of rho is r/4 at probe 1 → ratio 1/2
        assert_eq!(rep.witness, 1);
        assert!((rep.max_ratio.value - 0.5).abs() < 1e-9);

        // degenerate reference is refused
        let zero = |_: &[f64]| {
            Ok(Estimate {
                value: 0.0,
                stderr: 1e-3,
                n: 100,
                censored_count: 0,
                flags: Default::default(),
            })
        };
        assert!(matches!(
            carleson_report(&chart, r, &zero, &probes),
            Err(EstimateError::ReferenceDegenerate { .. })
        ));
    }

    #[test]
    fn bhp_quotient_of_linear_solution_is_flat() {
        let ball = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let q = vec![0.0, 0.0, -1.0];
        let chart = BoundaryChart::new(&ball, &q).unwrap();
        let r = chart.r1 / 4.0;
        // u = 3.7 δ_B exactly: all quotients equal, worst ratio 1.
        let u = |x: &[f64]| {
            Ok(Estimate {
                value: 3.7 * ball.delta(x),
                stderr: 1e-9,
                n: 100,
                censored_count: 0,
                flags: Default::default(),
            })
        };
        let probes = vec![
            chart.normal_point(r / 8.0),
            chart.normal_point(r / 3.0),
            chart.from_chart(&[-r / 16.0, r / 32.0], r / 8.0),
        ];
        let rep = bhp_report(&chart, r, &u, &probes, 1e-6).unwrap();
        assert!((rep.max_ratio.value - 1.0).abs() < 1e-9, "{}", rep.max_ratio.value);

        // single probe: ratio is exactly one
        let one = bhp_report(&chart, r, &u, &probes[..1], 1e-6).unwrap();
        assert_eq!(one.max_ratio.value, 1.0);

        // floor guard
        assert!(matches!(
            bhp_report(&chart, r, &u, &probes, r),
            Err(EstimateError::InvalidGeometry(_))
        ));
    }

    #[test]
    fn exit_probabilities_decay_linearly_with_depth() {
        let ball = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let q = vec![0.0, 0.0, -1.0];
        let chart = BoundaryChart::new(&ball, &q).unwrap();
        let delta0 = chart.r0 / 2.0;
        let depths: Vec<f64> = [0.05, 0.1, 0.22, 0.5].iter().map(|f| f * delta0).collect();
        let model = OperatorModel::preset_identity(3);
        let cfg = PathConfig {
            dt: 2e-8,
            eps: delta0 / 8.0,
            small_jump_correction: true,
            bridge_test: true,
            truncate_jumps: false,
            t_max: 50.0 * delta0 * delta0,
            boundary_factor: 3.0,
            max_halvings: 8,
        };
        let rep =
            boundary_exit_linearity(&model, &chart, delta0, &depths, &cfg, 6_000, 2024).unwrap();
        for table in [&rep.full, &rep.truncated] {
            for row in &table.rows {
                assert!(row.into_collar.value >= 0.0 && row.into_ball.value <= 1.0);
                assert!(
                    row.into_collar.value <= row.into_ball.value + 1e-15,
                    "collar exceeds ball at depth {}",
                    row.depth
                );
            }
            // deeper starts exit into B more often (up to MC noise)
            for w in table.rows.windows(2) {
                let slack =
                    4.0 * (w[0].into_ball.stderr.powi(2) + w[1].into_ball.stderr.powi(2)).sqrt();
                assert!(
                    w[0].into_ball.value < w[1].into_ball.value + slack,
                    "monotonicity broken between depths {} and {}",
                    w[0].depth,
                    w[1].depth
                );
            }
            assert!(
                table.collar_max_rel_residual < 0.25,
                "collar residual {} (truncated: {})",
                table.collar_max_rel_residual,
                table.truncated
            );
            assert!(
                table.ball_max_rel_residual < 0.25,
                "ball residual {} (truncated: {})",
                table.ball_max_rel_residual,
                table.truncated
            );
            assert!(table.collar_slope > 0.0 && table.ball_slope > 0.0);
        }
    }

    #[test]
    fn exit_linearity_rejects_bad_geometry() {
        let ball = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let q = vec![0.0, 0.0, -1.0];
        let chart = BoundaryChart::new(&ball, &q).unwrap();
        let model = OperatorModel::preset_identity(3);
        let cfg = PathConfig::for_ball_radius(1.0);
        // delta0 too large for the box constant
        assert!(boundary_exit_linearity(
            &model,
            &chart,
            chart.r0,
            &[chart.r0 / 8.0],
            &cfg,
            10,
            1
        )
        .is_err());
        // depth at or beyond delta0
        let delta0 = chart.r0 / 2.0;
        assert!(boundary_exit_linearity(&model, &chart, delta0, &[delta0], &cfg, 10, 1).is_err());
    }

    #[test]
    fn chart_box_membership_margins_exclude_walls() {
        let ball = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
        let q = vec![0.0, 0.0, -1.0];
        let chart = BoundaryChart::new(&ball, &q).unwrap();
        let h = chart.r0;
        let w = chart.r0;
        // comfortably interior
        assert!(in_box_with_margin(
            &chart,
            &chart.normal_point(h / 2.0),
            h,
            w
        ));
        // on the bottom wall (the sphere): excluded
        assert!(!in_box_with_margin(&chart, &chart.base, h, w));
        // just above the top wall: excluded
        assert!(!in_box_with_margin(
            &chart,
            &chart.normal_point(h * (1.0 + 1e-6)),
            h,
            w
        ));
        // outside the side wall: excluded
        let side = chart.from_chart(&[w * (1.0 + 1e-6), 0.0], h / 2.0);
        assert!(!in_box_with_margin(&chart, &side, h, w));
    }
}
