use fbsynth::example8::*;
use std::time::Instant;

fn main() {
    for alpha in [0.0, 10.0, 50.0] {
        let cfg = Example8Config::new(alpha);
        let t0 = Instant::now();
        let sols = solve_open_loop(&cfg, [-5.0, 0.0], None).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!("alpha={alpha}: {} solutions in {:.2}s", sols.len(), dt);
        for (i, s) in sols.iter().enumerate().take(4) {
            println!(
                "  [{i}] J={:.8} id={} u0=({:.5},{:.5}) pmp={:.3e} identity={:.3e} iters={} conv={} mirror={:?}",
                s.cost, s.start_id, s.initial_control[0], s.initial_control[1],
                s.pmp_residual, s.traj_identity_error, s.iterations, s.converged, s.mirror_partner
            );
        }
        if alpha > 0.0 {
            let (_, onaxis_cost) = onaxis_trajectory(-5.0, &cfg).unwrap();
            println!("  onaxis cost = {:.8} (off-axis best = {:.8}, gap = {:.4e})",
                onaxis_cost, sols[0].cost, onaxis_cost - sols[0].cost);
        } else {
            println!("  expected J = 12.5, got {:.10}", sols[0].cost);
        }
    }
}
