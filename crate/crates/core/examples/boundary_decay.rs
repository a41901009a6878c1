//! Drives the boundary reporters end to end: tabulates how the exit
//! probabilities from a thin boundary box scale with the starting depth,
//! for the full process and the jump-truncated one. Run with
//! `cargo run --release --example boundary_decay`.

use jumplab::geom::BoundaryChart;
use jumplab::model::OperatorModel;
use jumplab::reports::boundary_exit_linearity;
use jumplab::sim::PathConfig;
use jumplab::BallDomain;

fn main() {
    let ball = BallDomain::new(vec![0.0; 3], 1.0).unwrap();
    let chart = BoundaryChart::new(&ball, &[0.0, 0.0, -1.0]).unwrap();
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
    let rep = boundary_exit_linearity(&model, &chart, delta0, &depths, &cfg, 6_000, 7).unwrap();
    println!(
        "box D_Q(delta0, r0): delta0 = {delta0:.3e}, width r0 = {:.3e}",
        rep.width
    );
    for table in [&rep.full, &rep.truncated] {
        println!(
            "-- {} jumps --",
            if table.truncated { "truncated" } else { "full" }
        );
        for row in &table.rows {
            println!(
                "depth {:.3e}   P(collar) {:.4} +- {:.4}   P(in ball) {:.4} +- {:.4}",
                row.depth,
                row.into_collar.value,
                row.into_collar.stderr,
                row.into_ball.value,
                row.into_ball.stderr
            );
        }
        println!(
            "slopes: collar {:.1} (worst residual {:.1}%), ball {:.1} (worst residual {:.1}%)",
            table.collar_slope,
            100.0 * table.collar_max_rel_residual,
            table.ball_slope,
            100.0 * table.ball_max_rel_residual
        );
    }
}
