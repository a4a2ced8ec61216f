//! Closed-loop integration with cost accumulation, Hamiltonians, and
//! pointwise equation residuals.
//!
//! The running cost rides the integrator as an augmented state component, so
//! cost accuracy matches state accuracy. Escape times are located by
//! bisection of the region level function on a cubic Hermite reconstruction
//! of the accepted step.

use crate::error::{Error, Result};
use crate::grid::{BoxGrid, InterpOrder, ScalarField};
use crate::law::FeedbackLaw;
use crate::problem::ControlProblem;
use crate::region::Region;
use crate::trajectory::{hermite, TrajStatus, Trajectory};

#[derive(Debug, Clone, Copy)]
pub enum Integrator {
    /// Classical fixed-step fourth-order Runge-Kutta.
    Rk4 { step: f64 },
    /// Dormand-Prince 5(4) with embedded error control; `tol` is used for
    /// both absolute and relative tolerance.
    Rk45 { tol: f64 },
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub integrator: Integrator,
    pub horizon: f64,
    /// Region whose exit terminates the run (omega_delta or a box).
    pub escape: Option<Region>,
    /// Hard guard on |y|; exceeding it aborts with status blew_up.
    pub blowup_radius: f64,
}

impl SimConfig {
    pub fn rk45(tol: f64, horizon: f64) -> SimConfig {
        SimConfig {
            integrator: Integrator::Rk45 { tol },
            horizon,
            escape: None,
            blowup_radius: 1e6,
        }
    }

    pub fn rk4(step: f64, horizon: f64) -> SimConfig {
        SimConfig {
            integrator: Integrator::Rk4 { step },
            horizon,
            escape: None,
            blowup_radius: 1e6,
        }
    }

    pub fn with_escape(mut self, region: Region) -> SimConfig {
        self.escape = Some(region);
        self
    }

    pub fn with_blowup_radius(mut self, r: f64) -> SimConfig {
        self.blowup_radius = r;
        self
    }
}

// Dormand-Prince 5(4) tableau (autonomous right-hand sides, so the stage
// times are not needed).
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct ClosedLoopRhs<'a> {
    problem: &'a ControlProblem,
    law: &'a FeedbackLaw,
    bmat: Vec<f64>,
    u: Vec<f64>,
}

impl<'a> ClosedLoopRhs<'a> {
    fn new(problem: &'a ControlProblem, law: &'a FeedbackLaw) -> Self {
        ClosedLoopRhs {
            problem,
            law,
            bmat: vec![0.0; problem.dim_state * problem.dim_control],
            u: vec![0.0; problem.dim_control],
        }
    }

    /// Augmented right-hand side: z = [y, accumulated cost].
    fn eval(&mut self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.problem.dim_state;
        let y = &z[..d];
        self.law.eval_into(y, &mut self.u, &mut self.bmat)?;
        let (yd, cd) = out.split_at_mut(d);
        self.problem.closed_loop_velocity(y, &self.u, &mut self.bmat, yd);
        cd[0] = self.problem.running_integrand(y, &self.u);
        Ok(())
    }

    fn control(&mut self, y: &[f64]) -> Result<Vec<f64>> {
        self.law.eval_into(y, &mut self.u, &mut self.bmat)?;
        Ok(self.u.clone())
    }
}

/// Integrate the closed loop y' = f(y) + B(y) u(y) from y0 up to the horizon
/// or the first escape. Controls and accumulated cost are recorded at every
/// accepted step.
pub fn integrate_closed_loop(
    problem: &ControlProblem,
    law: &FeedbackLaw,
    y0: &[f64],
    cfg: &SimConfig,
) -> Result<Trajectory> {
    if y0.len() != problem.dim_state {
        return Err(Error::Dimension {
            expected: problem.dim_state,
            got: y0.len(),
            context: "initial state".into(),
        });
    }
    if let Some(region) = &cfg.escape {
        if !region.contains(y0) {
            return Err(Error::out_of_domain("escape region (initial state)", y0));
        }
    }
    let d = problem.dim_state;
    let mut rhs = ClosedLoopRhs::new(problem, law);

    let mut times = vec![0.0];
    let mut states = vec![y0.to_vec()];
    let mut controls = vec![rhs.control(y0)?];
    let mut costs = vec![0.0];
    let mut status = TrajStatus::Completed;
    let mut note = None;

    let mut z = vec![0.0; d + 1];
    z[..d].copy_from_slice(y0);
    let mut t = 0.0;
    let mut f0 = vec![0.0; d + 1];
    rhs.eval(&z, &mut f0)?;

    let mut h = match cfg.integrator {
        Integrator::Rk4 { step } => {
            if !(step > 0.0) {
                return Err(Error::parameter("step", "must be positive"));
            }
            step
        }
        Integrator::Rk45 { tol } => {
            if !(tol > 0.0) {
                return Err(Error::parameter("tol", "must be positive"));
            }
            (cfg.horizon * 1e-3).clamp(1e-8, 0.1)
        }
    };

    let mut k = vec![vec![0.0; d + 1]; 7];
    let mut ztmp = vec![0.0; d + 1];
    let mut z5 = vec![0.0; d + 1];
    let min_step = 1e-12 * cfg.horizon.max(1.0);

    'outer: while t < cfg.horizon - 1e-14 {
        let h_trial = h.min(cfg.horizon - t);
        let step_result = match cfg.integrator {
            Integrator::Rk4 { .. } => {
                // fixed step; stages 1-4
                let hh = h_trial;
                k[0].copy_from_slice(&f0);
                let mut failed = false;
                for (stage, c) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
                    for i in 0..=d {
                        ztmp[i] = z[i] + hh * c * k[stage - 1][i];
                    }
                    let (_, rest) = k.split_at_mut(stage);
                    if rhs.eval(&ztmp, &mut rest[0]).is_err() {
                        failed = true;
                        break;
                    }
                }
                if failed {
                    Err(())
                } else {
                    for i in 0..=d {
                        z5[i] = z[i] + hh / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
                    }
                    Ok((hh, 0.0))
                }
            }
            Integrator::Rk45 { tol } => {
                let hh = h_trial;
                k[0].copy_from_slice(&f0);
                let mut failed = false;
                for stage in 1..7 {
                    for i in 0..=d {
                        let mut acc = 0.0;
                        for j in 0..stage {
                            acc += DP_A[stage][j] * k[j][i];
                        }
                        ztmp[i] = z[i] + hh * acc;
                    }
                    let (a, b) = k.split_at_mut(stage);
                    let _ = a;
                    if rhs.eval(&ztmp, &mut b[0]).is_err() {
                        failed = true;
                        break;
                    }
                }
                if failed {
                    Err(())
                } else {
                    let mut err: f64 = 0.0;
                    for i in 0..=d {
                        let mut v5 = 0.0;
                        let mut v4 = 0.0;
                        for j in 0..7 {
                            v5 += DP_B5[j] * k[j][i];
                            v4 += DP_B4[j] * k[j][i];
                        }
                        z5[i] = z[i] + hh * v5;
                        let sc = tol + tol * z[i].abs().max(z5[i].abs());
                        let e = hh * (v5 - v4) / sc;
                        err += e * e;
                    }
                    err = (err / (d + 1) as f64).sqrt();
                    Ok((hh, err))
                }
            }
        };

        let (hh, err): (f64, f64) = match step_result {
            Ok(pair) => pair,
            Err(()) => {
                // A stage left the law's valid region: shrink; if hopeless,
                // terminate as an escape with a diagnostic.
                h *= 0.5;
                if h < min_step.max(1e-12) {
                    status = TrajStatus::Escaped { time: t };
                    note = Some("law query left the surrogate region".into());
                    break 'outer;
                }
                continue 'outer;
            }
        };

        if let Integrator::Rk45 { .. } = cfg.integrator {
            if err > 1.0 {
                let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                h = (hh * fac).max(min_step);
                if h <= min_step {
                    return Err(Error::NoConvergence("step size underflow in rk45".into()));
                }
                continue 'outer;
            }
        }

        // Accepted step from (t, z) to (t + hh, z5) with derivative k[0] at
        // the left end; get the right-end derivative for Hermite checks.
        let t_new = t + hh;
        let mut f1 = vec![0.0; d + 1];
        let f1_ok = rhs.eval(&z5, &mut f1).is_ok();

        // Blow-up guard.
        let ymag = z5[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !ymag.is_finite() || ymag > cfg.blowup_radius {
            status = TrajStatus::BlewUp;
            note = Some(format!("state magnitude {ymag:.3e} at t = {t_new:.6}"));
            times.push(t_new);
            states.push(z5[..d].to_vec());
            controls.push(controls.last().unwrap().clone());
            costs.push(z5[d]);
            break 'outer;
        }

        // Escape detection by sign change of the level function.
        if let Some(region) = &cfg.escape {
            let lv1 = region.level(&z5[..d]);
            if lv1 > 0.0 {
                let lv0 = region.level(&z[..d]);
                let (te, ze) = if lv0 >= 0.0 || !f1_ok {
                    (t_new, z5.clone())
                } else {
                    bisect_escape(region, t, &z, &f0, t_new, &z5, &f1, d)
                };
                let ye = ze[..d].to_vec();
                let ue = rhs.control(&ye).unwrap_or_else(|_| controls.last().unwrap().clone());
                if te > *times.last().unwrap() + 1e-15 {
                    times.push(te);
                    states.push(ye);
                    controls.push(ue);
                    costs.push(ze[d]);
                }
                status = TrajStatus::Escaped { time: te };
                break 'outer;
            }
        }

        if !f1_ok {
            // Right endpoint itself is outside the law's domain.
            times.push(t_new);
            states.push(z5[..d].to_vec());
            controls.push(controls.last().unwrap().clone());
            costs.push(z5[d]);
            status = TrajStatus::Escaped { time: t_new };
            note = Some("law query left the surrogate region".into());
            break 'outer;
        }

        t = t_new;
        z.copy_from_slice(&z5);
        f0.copy_from_slice(&f1);
        times.push(t);
        states.push(z[..d].to_vec());
        controls.push(rhs.control(&z[..d])?);
        costs.push(z[d]);

        if let Integrator::Rk45 { .. } = cfg.integrator {
            let fac = if err > 1e-30 { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
            h = hh * fac;
        }
    }

    let traj = Trajectory {
        times,
        states,
        controls,
        running_cost: costs,
        status,
        note,
    };
    traj.validate()?;
    Ok(traj)
}

/// Bisect the escape time on the Hermite reconstruction of one step to
/// 1e-10 absolute time accuracy; returns (time, augmented state).
#[allow(clippy::too_many_arguments)]
fn bisect_escape(
    region: &Region,
    t0: f64,
    z0: &[f64],
    f0: &[f64],
    t1: f64,
    z1: &[f64],
    f1: &[f64],
    d: usize,
) -> (f64, Vec<f64>) {
    let h = t1 - t0;
    let eval_state = |th: f64| -> Vec<f64> {
        (0..=d).map(|i| hermite(z0[i], f0[i], z1[i], f1[i], h, th)).collect()
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        if (hi - lo) * h < 1e-10 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let z = eval_state(mid);
        if region.level(&z[..d]) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let z = eval_state(hi);
    (t0 + hi * h, z)
}

/// Accumulated closed-loop cost at horizon T (the stored quadrature).
pub fn cost_value(problem: &ControlProblem, traj: &Trajectory, horizon: f64) -> Result<f64> {
    traj.cost_at(problem, horizon)
}

/// Control-explicit Hamiltonian H(y, p, u) = -p.(f + Bu) - l(y) - beta/2 |u|^2.
pub fn hamiltonian(problem: &ControlProblem, y: &[f64], p: &[f64], u: &[f64]) -> f64 {
    let d = problem.dim_state;
    let m = problem.dim_control;
    let mut bmat = vec![0.0; d * m];
    let mut vel = vec![0.0; d];
    problem.closed_loop_velocity(y, u, &mut bmat, &mut vel);
    let pdot: f64 = p.iter().zip(&vel).map(|(a, b)| a * b).sum();
    let u2: f64 = u.iter().map(|v| v * v).sum();
    -pdot - problem.state_cost(y) - 0.5 * problem.beta * u2
}

/// Maximized Hamiltonian in closed form:
/// -l(y) + |B^T p|^2 / (2 beta) - p.f(y), attained at u = -B^T p / beta.
pub fn max_hamiltonian(problem: &ControlProblem, y: &[f64], p: &[f64]) -> f64 {
    let d = problem.dim_state;
    let m = problem.dim_control;
    let mut bmat = vec![0.0; d * m];
    let mut btp = vec![0.0; m];
    problem.input_map_transpose_apply(y, p, &mut bmat, &mut btp);
    let btp2: f64 = btp.iter().map(|v| v * v).sum();
    let mut fv = vec![0.0; d];
    problem.drift(y, &mut fv);
    let pf: f64 = p.iter().zip(&fv).map(|(a, b)| a * b).sum();
    -problem.state_cost(y) + btp2 / (2.0 * problem.beta) - pf
}

/// The maximizing control -B^T p / beta.
pub fn argmax_control(problem: &ControlProblem, y: &[f64], p: &[f64]) -> Vec<f64> {
    let d = problem.dim_state;
    let m = problem.dim_control;
    let mut bmat = vec![0.0; d * m];
    let mut u = vec![0.0; m];
    problem.input_map_transpose_apply(y, p, &mut bmat, &mut u);
    for v in u.iter_mut() {
        *v /= -problem.beta;
    }
    u
}

/// Residual field of the closed-form equation for a surrogate v: the value
/// of the maximized Hamiltonian at (y, grad v(y)) over the sub-grid of nodes
/// inside the region (one-node margin kept from the field boundary).
pub fn hjb_residual(problem: &ControlProblem, v: &ScalarField, region: &Region) -> Result<ScalarField> {
    let grid = v.grid();
    let d = grid.dim();
    let (blo, bhi) = region.bounding_box();
    let mut lo_idx = vec![0usize; d];
    let mut hi_idx = vec![0usize; d];
    for a in 0..d {
        let h = grid.spacing()[a];
        let lo = (((blo[a] - grid.lower()[a]) / h).ceil().max(1.0)) as usize;
        let hi = (((bhi[a] - grid.lower()[a]) / h).floor().min((grid.points()[a] - 2) as f64)) as usize;
        if lo >= hi {
            return Err(Error::DegenerateRegion("residual region escapes the field".into()));
        }
        lo_idx[a] = lo;
        hi_idx[a] = hi;
    }
    let sub = BoxGrid::new(
        lo_idx.iter().enumerate().map(|(a, &i)| grid.lower()[a] + i as f64 * grid.spacing()[a]).collect(),
        hi_idx.iter().enumerate().map(|(a, &i)| grid.lower()[a] + i as f64 * grid.spacing()[a]).collect(),
        (0..d).map(|a| hi_idx[a] - lo_idx[a] + 1).collect(),
    )?;
    let values: Vec<f64> = (0..sub.len())
        .map(|k| {
            let x = sub.node_flat(k);
            let g = v.gradient(&x)?;
            Ok(max_hamiltonian(problem, &x, &g))
        })
        .collect::<Result<_>>()?;
    ScalarField::new(sub, values, InterpOrder::Multilinear)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::FeedbackLaw;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::sync::Arc;

    fn lq2() -> Arc<ControlProblem> {
        Arc::new(
            ControlProblem::new(
                2,
                2,
                1.0,
                Arc::new(|_, out| out.fill(0.0)),
                Arc::new(|_, out: &mut [f64]| out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0])),
                Arc::new(|y: &[f64]| 0.5 * (y[0] * y[0] + y[1] * y[1])),
            )
            .unwrap(),
        )
    }

    fn minus_y_law(p: Arc<ControlProblem>) -> FeedbackLaw {
        FeedbackLaw::analytic(
            p,
            Arc::new(|y: &[f64], u: &mut [f64]| {
                for i in 0..y.len() {
                    u[i] = -y[i];
                }
            }),
        )
    }

    #[test]
    fn lq_closed_loop_cost_matches_closed_form() {
        // u = -y, y0 = (1,0): cost(T) = (1 - e^{-2T}) / 2
        let p = lq2();
        let law = minus_y_law(p.clone());
        let cfg = SimConfig::rk45(1e-10, 5.0);
        let traj = integrate_closed_loop(&p, &law, &[1.0, 0.0], &cfg).unwrap();
        assert_eq!(traj.status, TrajStatus::Completed);
        let expected = 0.5 * (1.0 - (-10.0f64).exp());
        assert!(
            (traj.total_cost() - expected).abs() < 1e-8,
            "{} vs {expected}",
            traj.total_cost()
        );
        let yt = traj.final_state();
        assert!((yt[0] - (-5.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn zero_dynamics_accumulates_constant_cost() {
        let p = lq2();
        let zero_law = FeedbackLaw::analytic(p.clone(), Arc::new(|_, u: &mut [f64]| u.fill(0.0)));
        let cfg = SimConfig::rk45(1e-9, 3.0);
        let traj = integrate_closed_loop(&p, &zero_law, &[2.0, 0.0], &cfg).unwrap();
        // y stays put, cost = T * l(y0) = 3 * 2
        assert!((traj.total_cost() - 6.0).abs() < 1e-8);
        assert!((traj.final_state()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rk4_global_order_on_lq() {
        let p = lq2();
        let law = minus_y_law(p.clone());
        let err_for = |step: f64| {
            let cfg = SimConfig::rk4(step, 2.0);
            let traj = integrate_closed_loop(&p, &law, &[1.0, 0.5], &cfg).unwrap();
            let e = (-2.0f64).exp();
            let y = traj.final_state();
            ((y[0] - e).powi(2) + (y[1] - 0.5 * e).powi(2)).sqrt()
        };
        let (e1, e2) = (err_for(0.05), err_for(0.025));
        assert!(e1 / e2 >= 12.0, "rk4 refinement ratio {}", e1 / e2);
    }

    #[test]
    fn dpp_identity_along_exact_feedback() {
        let p = lq2();
        let law = minus_y_law(p.clone());
        let v0 = |y: &[f64]| 0.5 * (y[0] * y[0] + y[1] * y[1]);
        for y0 in [[1.0, 0.0], [0.3, -1.2], [-0.7, 0.4]] {
            for &tt in &[0.5, 1.7, 4.0] {
                let cfg = SimConfig::rk45(1e-10, tt);
                let traj = integrate_closed_loop(&p, &law, &y0, &cfg).unwrap();
                let defect = traj.total_cost() + v0(traj.final_state()) - v0(&y0);
                assert!(defect.abs() < 1e-8, "defect {defect:e} at T = {tt}");
            }
        }
    }

    #[test]
    fn escape_time_for_outward_flow() {
        // u = +y: y(t) = y0 e^t leaves the ball |y| = 2 at t = ln 2 from |y0| = 1.
        let p = lq2();
        let law = FeedbackLaw::analytic(
            p.clone(),
            Arc::new(|y: &[f64], u: &mut [f64]| {
                u.copy_from_slice(y);
            }),
        );
        let cfg = SimConfig::rk45(1e-10, 5.0).with_escape(Region::ball(vec![0.0, 0.0], 2.0));
        let traj = integrate_closed_loop(&p, &law, &[1.0, 0.0], &cfg).unwrap();
        match traj.status {
            TrajStatus::Escaped { time } => {
                assert!((time - std::f64::consts::LN_2).abs() < 1e-7, "escape at {time}");
            }
            ref s => panic!("expected escape, got {s:?}"),
        }
    }

    #[test]
    fn escape_monotonicity_under_shrinking_region() {
        let p = lq2();
        let law = FeedbackLaw::analytic(
            p.clone(),
            Arc::new(|y: &[f64], u: &mut [f64]| {
                u.copy_from_slice(y);
            }),
        );
        let mut last = f64::INFINITY;
        for radius in [3.0, 2.0, 1.5, 1.2] {
            let cfg = SimConfig::rk45(1e-9, 10.0).with_escape(Region::ball(vec![0.0, 0.0], radius));
            let traj = integrate_closed_loop(&p, &law, &[1.0, 0.0], &cfg).unwrap();
            let te = match traj.status {
                TrajStatus::Escaped { time } => time,
                _ => f64::INFINITY,
            };
            assert!(te <= last + 1e-9, "escape time grew when region shrank");
            last = te;
        }
    }

    #[test]
    fn blow_up_guard_triggers() {
        let p = lq2();
        let law = FeedbackLaw::analytic(
            p.clone(),
            Arc::new(|y: &[f64], u: &mut [f64]| {
                u.copy_from_slice(y);
            }),
        );
        let cfg = SimConfig {
            blowup_radius: 10.0,
            ..SimConfig::rk45(1e-8, 50.0)
        };
        let traj = integrate_closed_loop(&p, &law, &[1.0, 0.0], &cfg).unwrap();
        assert_eq!(traj.status, TrajStatus::BlewUp);
    }

    #[test]
    fn max_hamiltonian_identity_and_sampled_max() {
        let p = lq2();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let y = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let pv = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let closed = max_hamiltonian(&p, &y, &pv);
            let ustar = argmax_control(&p, &y, &pv);
            let via_h = hamiltonian(&p, &y, &pv, &ustar);
            assert!((closed - via_h).abs() < 1e-12);
            for _ in 0..50 {
                let u = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
                assert!(hamiltonian(&p, &y, &pv, &u) <= closed + 1e-9);
            }
        }
    }

    #[test]
    fn p_zero_gives_minus_ell() {
        let p = lq2();
        let y = [1.2, -0.4];
        assert!((max_hamiltonian(&p, &y, &[0.0, 0.0]) + p.state_cost(&y)).abs() < 1e-14);
    }

    #[test]
    fn residual_of_exact_value_function_vanishes() {
        // v = 0.5 |y|^2 solves the closed-form equation for the LQ problem.
        let p = lq2();
        let grid = BoxGrid::cube(-2.0, 2.0, 81, 2).unwrap();
        let v = ScalarField::from_fn(grid, InterpOrder::Cubic, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).unwrap();
        let region = Region::Box {
            lower: vec![-1.5, -1.5],
            upper: vec![1.5, 1.5],
        };
        let res = hjb_residual(&p, &v, &region).unwrap();
        let max = res.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(max < 1e-9, "max residual {max}");
        // v = 2 v0 gives residual (3/2)|y|^2
        let grid2 = BoxGrid::cube(-2.0, 2.0, 81, 2).unwrap();
        let v2 = ScalarField::from_fn(grid2, InterpOrder::Cubic, |x| x[0] * x[0] + x[1] * x[1]).unwrap();
        let res2 = hjb_residual(&p, &v2, &region).unwrap();
        for (k, x) in res2.grid().nodes() {
            let want = 1.5 * (x[0] * x[0] + x[1] * x[1]);
            assert!((res2.node_value(k) - want).abs() < 1e-9);
        }
    }
}
