//! Drives the path sampler and the exit-problem estimators end to end on
//! a ball, printing Monte Carlo values next to closed forms where one
//! exists. Run with `cargo run --release --example ball_exit`.

use jumplab::estimate::{
    expected_exit_time, gauge, harmonic_measure, hit_probability_via_levy, ExitLawCells,
};
use jumplab::geom::SpherePartition;
use jumplab::model::{OperatorModel, Potential};
use jumplab::sim::PathConfig;
use jumplab::BallDomain;

fn main() {
    let ball = BallDomain::new(vec![0.0; 3], 0.4).unwrap();
    let start = [0.0; 3];
    let mut cfg = PathConfig::for_ball_radius(0.4);
    cfg.dt = 1e-4;
    let n = 20_000;

    println!("== diffusion only (a = I, no jumps) ==");
    let bm = OperatorModel::preset_brownian_diagnostic(3);
    let tau = expected_exit_time(&bm, &ball, &start, &cfg, n, 1).unwrap();
    println!(
        "E tau from center     {:.5} +- {:.5}   (closed form {:.5})",
        tau.value,
        tau.stderr,
        0.16 / 3.0
    );

    let q0 = 1.0;
    let bmq = OperatorModel::preset_brownian_diagnostic(3).with_q(Potential::Const(q0));
    let h = gauge(&bmq, &ball, &start, &cfg, n, 2).unwrap();
    let k = (2.0 * q0).sqrt();
    println!(
        "gauge, q = {q0:+.1}        {:.5} +- {:.5}   (closed form {:.5})",
        h.value,
        h.stderr,
        k * 0.4 / (k * 0.4).sin()
    );

    println!("== jump diffusion (a = I, reference kernel) ==");
    let jd = OperatorModel::preset_identity(3);
    let tau_j = expected_exit_time(&jd, &ball, &start, &cfg, n, 3).unwrap();
    println!(
        "E tau from center     {:.5} +- {:.5}   (jumps shorten the stay)",
        tau_j.value, tau_j.stderr
    );

    let cells = ExitLawCells::new(
        ball.clone(),
        SpherePartition::new(3, 3, 4),
        4,
        SpherePartition::new(3, 2, 2),
        1.2,
    );
    let hm = harmonic_measure(&jd, &ball, &start, cells, &cfg, n, 4).unwrap();
    println!(
        "exit law              {} cells, jump fraction {:.3}, atom mass {:.4}",
        hm.cells.n_cells(),
        hm.jump_fraction(),
        hm.mass(hm.cells.n_cells() - 1).value
    );

    let target = BallDomain::new(vec![0.8, 0.0, 0.0], 0.15).unwrap();
    let hit = hit_probability_via_levy(&jd, &ball, &start, &target, &cfg, 4_000, 5).unwrap();
    println!(
        "P(exit lands in S)    {:.5} +- {:.6}  (occupation estimator)",
        hit.value, hit.stderr
    );
}
