//! Prepackaged benchmark scenarios shared by the CLI and the acceptance
//! suite: value-field construction, surrogate families, and the value-defect
//! sweep measurements behind the convergence checks.

use std::sync::Arc;

use crate::certify::{LyapunovSetup, ScalarFn};
use crate::error::Result;
use crate::example8::{self, Example8Config};
use crate::grid::{BoxGrid, InterpOrder, ScalarField};
use crate::law::FeedbackLaw;
use crate::problem::ControlProblem;
use crate::region::{Region, RegionSample};
use crate::simulate::{integrate_closed_loop, SimConfig};
use crate::synthesis::resample_for_kernel;
use crate::trajectory::TrajStatus;

/// The analytic unperturbed value function as a closure.
pub fn v0_fn(beta: f64) -> ScalarFn {
    Arc::new(move |y: &[f64]| example8::v0(y, beta))
}

/// Sample the unperturbed value function on a grid.
pub fn v0_field(beta: f64, lower: f64, upper: f64, points: usize) -> Result<ScalarField> {
    let grid = BoxGrid::cube(lower, upper, points, 2)?;
    ScalarField::from_fn(grid, InterpOrder::Cubic, |y| example8::v0(y, beta))
}

/// Mollified-surrogate family over an epsilon sweep: each law evaluates the
/// kernel-derivative convolution of the value field resampled at a
/// kernel-matched resolution (spacing eps/2, multilinear), so the surrogate
/// error scales with the smoothing radius.
pub fn mollified_family(
    problem: &Arc<ControlProblem>,
    v: &ScalarField,
    region: &Region,
    eps_sweep: &[f64],
    kernel_points: usize,
) -> Result<Vec<(f64, FeedbackLaw)>> {
    let mut out = Vec::with_capacity(eps_sweep.len());
    for &eps in eps_sweep {
        let base = resample_for_kernel(v, region, eps)?;
        let law = FeedbackLaw::from_mollifier_quadrature(
            problem.clone(),
            Arc::new(base),
            eps,
            Some(kernel_points),
        )?;
        out.push((eps, law));
    }
    Ok(out)
}

/// Value-defect measurement of a plan entry: sup over the omega sample of
/// |V_{u,tau}(y0) + V(y(tau)) - V(y0)|, evaluating at the integration
/// horizon exactly.
pub fn value_defect_sup(
    problem: &ControlProblem,
    law: &FeedbackLaw,
    tau: f64,
    value: &ScalarFn,
    omega_sample: &RegionSample,
    omega_delta: &Region,
    sim_tol: f64,
) -> Result<f64> {
    let cfg = SimConfig {
        integrator: crate::simulate::Integrator::Rk45 { tol: sim_tol },
        horizon: tau,
        escape: Some(omega_delta.clone()),
        blowup_radius: 1e6,
    };
    let mut sup: f64 = 0.0;
    for y0 in &omega_sample.points {
        let traj = integrate_closed_loop(problem, law, y0, &cfg)?;
        if traj.status != TrajStatus::Completed {
            return Err(crate::error::Error::NoConvergence(format!(
                "trajectory from {y0:?} left the working region before tau = {tau}"
            )));
        }
        let defect = (traj.total_cost() + value(traj.final_state()) - value(y0)).abs();
        sup = sup.max(defect);
    }
    Ok(sup)
}

/// Benchmark working set: problem, Lyapunov setup, and the sampled regions
/// used by certificates and pipelines.
pub struct BenchmarkSetup {
    pub cfg: Example8Config,
    pub problem: Arc<ControlProblem>,
    pub lyapunov: LyapunovSetup,
    pub omega_sample: RegionSample,
    pub omega_delta_sample: RegionSample,
    pub omega_delta_volume: f64,
    pub omega_volume: f64,
}

/// Standard benchmark setup: the quartic shell with R = |z| + sigma, omega a
/// slightly larger ball, omega_delta the delta sub-level set.
pub fn benchmark_setup(cfg: &Example8Config, delta: f64, seed: u64) -> Result<BenchmarkSetup> {
    let problem = example8::problem(cfg)?;
    let omega_radius = cfg.shell_radius() + 0.05;
    let lyapunov = example8::lyapunov_setup(cfg, omega_radius, delta, 6.0, seed)?;
    let omega_sample = RegionSample::monte_carlo(lyapunov.omega.clone(), seed.wrapping_add(1), 48)?;
    let od_box = BoxGrid::cube(-3.2, 3.2, 65, 2)?;
    let omega_delta_sample = RegionSample::from_grid(lyapunov.omega_delta.clone(), &od_box)?;
    // node-count volume estimate at the sampling resolution
    let cell = od_box.spacing()[0] * od_box.spacing()[1];
    let omega_delta_volume = cell * omega_delta_sample.len() as f64;
    let omega_volume = std::f64::consts::PI * omega_radius * omega_radius;
    Ok(BenchmarkSetup {
        cfg: cfg.clone(),
        problem,
        lyapunov,
        omega_sample,
        omega_delta_sample,
        omega_delta_volume,
        omega_volume,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_setup_regions_nest() {
        let cfg = Example8Config::new(0.0);
        let b = benchmark_setup(&cfg, 1.0, 3).unwrap();
        for p in &b.omega_sample.points {
            assert!(b.lyapunov.omega_delta.contains(p));
        }
        // omega_delta for R=2.5, delta=1, omega ~ B(0,2.55):
        // w < sup_omega w + 1 means |y|^2 < R^2 + slightly more than 1
        let r_od = (2.5f64 * 2.5 + 1.1).sqrt();
        for p in &b.omega_delta_sample.points {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(r < r_od + 1e-9, "omega_delta sample at radius {r}");
        }
    }

    #[test]
    fn family_deviation_decreases_with_epsilon() {
        // For the quadratic value function the mollified-family deviation
        // from the exact feedback shrinks proportionally to epsilon. The
        // measurement uses Monte Carlo points: the deviation field is even
        // about the surrogate half-lattice and cancels on aligned samples.
        let cfg = Example8Config::new(0.0);
        let b = benchmark_setup(&cfg, 1.0, 5).unwrap();
        let v = v0_field(1.0, -6.0, 6.0, 121).unwrap();
        let family = mollified_family(
            &b.problem,
            &v,
            &b.lyapunov.omega_delta,
            &[0.4, 0.2, 0.1],
            16,
        )
        .unwrap();
        let exact = example8::u0_feedback(b.problem.clone());
        let sample = RegionSample::monte_carlo(b.lyapunov.omega_delta.clone(), 11, 400).unwrap();
        let mut last = f64::INFINITY;
        for (eps, law) in &family {
            let dev = crate::certify::law_deviation_sup(law, &exact, &sample);
            assert!(dev.sup < last, "deviation at eps = {eps} did not decrease: {}", dev.sup);
            assert!(dev.sup > 1e-8, "deviation should be nonzero for a sampled surrogate");
            last = dev.sup;
        }
    }
}
