//! Two-dimensional benchmark: integrator dynamics y' = u with the
//! bump-perturbed quadratic running cost
//!
//!   l_a(y) = 0.5 |y|^2 (1 + a psi(|y - z|/sigma)),
//!
//! whose value function V_a is Lipschitz but provably non-differentiable on
//! the symmetry axis left of the bump once the bump weight is large enough.
//! The module provides the analytic data, an open-loop direct-transcription
//! solver with multistart, value-function grids, a superdifferential probe,
//! and the quartic Lyapunov shell for the escape certificates.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::certify::{BoundCertificate, LyapunovSetup, Provenance, ScalarFn, Verdict, VectorFn};
use crate::error::{Error, Result};
use crate::grid::{BoxGrid, InterpOrder, ScalarField};
use crate::law::FeedbackLaw;
use crate::problem::ControlProblem;
use crate::region::Region;
use crate::regularize::{bump_profile, bump_profile_deriv};
use crate::simulate::{integrate_closed_loop, SimConfig};
use crate::trajectory::{TrajStatus, Trajectory};

/// Benchmark configuration. `z` sits on the negative first axis with the
/// bump ball strictly left of the origin: z1 + sigma < 0.
#[derive(Debug, Clone, Serialize)]
pub struct Example8Config {
    pub alpha: f64,
    pub z: [f64; 2],
    pub sigma_bump: f64,
    pub beta: f64,
    /// finite-horizon reduction length for the transcription
    pub horizon: f64,
    /// transcription nodes
    pub nodes: usize,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// sup-distance below which two trajectories merge
    pub dedup_tol: f64,
    /// cost difference below which two distinct optima count as a tie
    pub tie_tol: f64,
    pub random_starts: usize,
    pub seed: u64,
    /// skip the solver where the straight ray to the origin provably avoids
    /// the bump (the unperturbed optimum is then exactly optimal)
    pub closed_form_shortcut: bool,
    /// curvature-equidistribution passes after the uniform-mesh solve; the
    /// node count stays fixed while the mesh follows the extremal's
    /// stiffness (the bump transit)
    pub refine_passes: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 900,
            grad_tol: 1e-7,
            dedup_tol: 1e-3,
            tie_tol: 1e-3,
            random_starts: 8,
            seed: 0xe8,
            closed_form_shortcut: true,
            refine_passes: 2,
        }
    }
}

impl Example8Config {
    pub fn new(alpha: f64) -> Example8Config {
        Example8Config {
            alpha,
            z: [-2.0, 0.0],
            sigma_bump: 0.5,
            beta: 1.0,
            horizon: 15.0,
            nodes: 200,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::parameter("alpha", "must be nonnegative"));
        }
        if !(self.sigma_bump > 0.0) {
            return Err(Error::parameter("sigma_bump", "must be positive"));
        }
        if self.z[1] != 0.0 {
            return Err(Error::parameter("z", "z2 must be 0"));
        }
        if !(self.z[0] + self.sigma_bump < 0.0) {
            return Err(Error::parameter("z", "need z1 + sigma < 0"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::parameter("beta", "must be positive"));
        }
        if self.nodes < 3 || !(self.horizon > 0.0) {
            return Err(Error::parameter("transcription", "need nodes >= 3 and horizon > 0"));
        }
        Ok(())
    }

    /// Radius |z| + sigma of the Lyapunov shell.
    pub fn shell_radius(&self) -> f64 {
        (self.z[0] * self.z[0] + self.z[1] * self.z[1]).sqrt() + self.sigma_bump
    }
}

/// The bump profile of the running cost (shared with the mollifier kernel).
#[inline]
pub fn psi(s: f64) -> f64 {
    bump_profile(s)
}

/// Running cost l_a(y) = 0.5 |y|^2 (1 + a psi(|y-z|/sigma)).
pub fn ell_alpha(y: &[f64], cfg: &Example8Config) -> f64 {
    let y2 = y[0] * y[0] + y[1] * y[1];
    let dz = ((y[0] - cfg.z[0]).powi(2) + (y[1] - cfg.z[1]).powi(2)).sqrt();
    0.5 * y2 * (1.0 + cfg.alpha * psi(dz / cfg.sigma_bump))
}

/// Analytic gradient of l_a (smooth across the bump boundary by the zero
/// extension of psi).
pub fn grad_ell_alpha(y: &[f64], cfg: &Example8Config) -> [f64; 2] {
    let y2 = y[0] * y[0] + y[1] * y[1];
    let dz = ((y[0] - cfg.z[0]).powi(2) + (y[1] - cfg.z[1]).powi(2)).sqrt();
    let s = dz / cfg.sigma_bump;
    let base = 1.0 + cfg.alpha * psi(s);
    let mut g = [y[0] * base, y[1] * base];
    if s < 1.0 && dz > 1e-300 {
        let coeff = 0.5 * y2 * cfg.alpha * bump_profile_deriv(s) / (cfg.sigma_bump * dz);
        g[0] += coeff * (y[0] - cfg.z[0]);
        g[1] += coeff * (y[1] - cfg.z[1]);
    }
    g
}

/// The unperturbed value function V_0(y) = sqrt(beta)/2 |y|^2.
pub fn v0(y: &[f64], beta: f64) -> f64 {
    0.5 * beta.sqrt() * (y[0] * y[0] + y[1] * y[1])
}

/// Feedback form of the unperturbed optimum: u(y) = -y / sqrt(beta).
pub fn u0_law(y: &[f64], beta: f64) -> [f64; 2] {
    let s = -1.0 / beta.sqrt();
    [s * y[0], s * y[1]]
}

/// The benchmark as a generic control problem (f = 0, B = I).
pub fn problem(cfg: &Example8Config) -> Result<Arc<ControlProblem>> {
    cfg.validate()?;
    let c = cfg.clone();
    Ok(Arc::new(ControlProblem::new(
        2,
        2,
        cfg.beta,
        Arc::new(|_, out| out.fill(0.0)),
        Arc::new(|_, out: &mut [f64]| out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0])),
        Arc::new(move |y: &[f64]| ell_alpha(y, &c)),
    )?))
}

/// The exact unperturbed feedback as a law object.
pub fn u0_feedback(problem: Arc<ControlProblem>) -> FeedbackLaw {
    let beta = problem.beta;
    FeedbackLaw::analytic(
        problem,
        Arc::new(move |y: &[f64], u: &mut [f64]| {
            let v = u0_law(y, beta);
            u.copy_from_slice(&v);
        }),
    )
}

/// Closed-form state of the bump-free extremal flow y'' = y / beta:
/// y(t) = y0 cosh(t/sqrt(beta)) + u0 sqrt(beta) sinh(t/sqrt(beta)).
pub fn linear_arc(y0: &[f64], u0: &[f64], t: f64, beta: f64) -> [f64; 2] {
    let sb = beta.sqrt();
    let (ch, sh) = ((t / sb).cosh(), (t / sb).sinh());
    [y0[0] * ch + u0[0] * sb * sh, y0[1] * ch + u0[1] * sb * sh]
}

/// The on-axis closed-loop trajectory from y01 < z1 - sigma: the separable
/// scalar flow with u2 = 0, integrated together with its running cost. The
/// returned cost includes the tail value v0 at the final state.
pub fn onaxis_trajectory(y01: f64, cfg: &Example8Config) -> Result<(Trajectory, f64)> {
    if !(y01 < cfg.z[0] - cfg.sigma_bump) {
        return Err(Error::parameter("y01", "need y01 < z1 - sigma"));
    }
    let c1 = cfg.clone();
    let c2 = cfg.clone();
    let p1 = Arc::new(ControlProblem::new(
        1,
        1,
        cfg.beta,
        Arc::new(|_, out| out.fill(0.0)),
        Arc::new(|_, out: &mut [f64]| out[0] = 1.0),
        Arc::new(move |y: &[f64]| ell_alpha(&[y[0], 0.0], &c1)),
    )?);
    let beta = cfg.beta;
    let law = FeedbackLaw::analytic(
        p1.clone(),
        Arc::new(move |y: &[f64], u: &mut [f64]| {
            let s = (y[0] - c2.z[0]).abs() / c2.sigma_bump;
            u[0] = -y[0] / beta.sqrt() * (1.0 + c2.alpha * psi(s)).sqrt();
        }),
    );
    let sim = SimConfig::rk45(1e-10, cfg.horizon).with_blowup_radius(1e3 * (1.0 + y01.abs()));
    let traj1 = integrate_closed_loop(&p1, &law, &[y01], &sim)?;
    // lift to the plane
    let traj = Trajectory {
        times: traj1.times.clone(),
        states: traj1.states.iter().map(|y| vec![y[0], 0.0]).collect(),
        controls: traj1.controls.iter().map(|u| vec![u[0], 0.0]).collect(),
        running_cost: traj1.running_cost.clone(),
        status: traj1.status.clone(),
        note: traj1.note.clone(),
    };
    let tail = v0(traj.final_state(), cfg.beta);
    let cost = traj.total_cost() + tail;
    Ok((traj, cost))
}

// ---------------------------------------------------------------------------
// direct transcription
// ---------------------------------------------------------------------------

/// One candidate optimum of the finite-horizon reduction.
#[derive(Debug, Clone)]
pub struct OpenLoopSolution {
    pub trajectory: Trajectory,
    /// transcription objective: running cost + v0 at the final state
    pub cost: f64,
    pub converged: bool,
    pub start_id: String,
    pub mirror_partner: Option<usize>,
    /// max second-difference defect against the extremal flow
    pub pmp_residual: f64,
    /// max |l_a(y) - beta/2 |u|^2| along the trajectory
    pub traj_identity_error: f64,
    pub iterations: usize,
    pub initial_control: [f64; 2],
}

/// Forward pass of the transcription: exact states for piecewise-linear
/// controls (the dynamics are an integrator), composite-Simpson running cost
/// per interval, quadratic tail at the final state. The mesh may be graded.
struct Transcription<'a> {
    cfg: &'a Example8Config,
    y0: [f64; 2],
    times: Vec<f64>,
}

impl<'a> Transcription<'a> {
    fn uniform(cfg: &'a Example8Config, y0: [f64; 2]) -> Self {
        let n = cfg.nodes;
        let dt = cfg.horizon / (n - 1) as f64;
        Transcription {
            cfg,
            y0,
            times: (0..n).map(|k| k as f64 * dt).collect(),
        }
    }

    fn with_times(cfg: &'a Example8Config, y0: [f64; 2], times: Vec<f64>) -> Self {
        Transcription { cfg, y0, times }
    }

    fn n(&self) -> usize {
        self.times.len()
    }

    #[inline]
    fn h(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    fn states(&self, u: &[f64]) -> Vec<[f64; 2]> {
        let n = self.n();
        let mut y = vec![[0.0; 2]; n];
        y[0] = self.y0;
        for k in 0..n - 1 {
            let h = self.h(k);
            for a in 0..2 {
                y[k + 1][a] = y[k][a] + 0.5 * h * (u[2 * k + a] + u[2 * (k + 1) + a]);
            }
        }
        y
    }

    /// Objective and gradient by reverse accumulation. The running integrand
    /// g = l_a(y) + beta/2 |u|^2 is integrated per interval by Simpson with
    /// the exact midpoint state y_m = y_k + h (3 u_k + u_{k+1}) / 8.
    fn objective_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.n();
        let beta = self.cfg.beta;
        let y = self.states(u);
        grad.fill(0.0);

        let mut cost = 0.0;
        // d J / d y_k with the controls held fixed
        let mut s = vec![[0.0; 2]; n];

        // node terms: node k carries h_{k-1}/6 + h_k/6
        for (k, yk) in y.iter().enumerate() {
            let w = if k > 0 { self.h(k - 1) / 6.0 } else { 0.0 } + if k < n - 1 { self.h(k) / 6.0 } else { 0.0 };
            let uk = [u[2 * k], u[2 * k + 1]];
            cost += w * (ell_alpha(yk, self.cfg) + 0.5 * beta * (uk[0] * uk[0] + uk[1] * uk[1]));
            let gl = grad_ell_alpha(yk, self.cfg);
            for a in 0..2 {
                s[k][a] += w * gl[a];
                grad[2 * k + a] += w * beta * uk[a];
            }
        }
        // interval midpoints: y_m depends on y_k and directly on u_k, u_{k+1}
        for k in 0..n - 1 {
            let h = self.h(k);
            let wm = 4.0 * h / 6.0;
            let um = [
                0.5 * (u[2 * k] + u[2 * (k + 1)]),
                0.5 * (u[2 * k + 1] + u[2 * (k + 1) + 1]),
            ];
            let ym = [
                y[k][0] + h * (3.0 * u[2 * k] + u[2 * (k + 1)]) / 8.0,
                y[k][1] + h * (3.0 * u[2 * k + 1] + u[2 * (k + 1) + 1]) / 8.0,
            ];
            cost += wm * (ell_alpha(&ym, self.cfg) + 0.5 * beta * (um[0] * um[0] + um[1] * um[1]));
            let gl = grad_ell_alpha(&ym, self.cfg);
            for a in 0..2 {
                let sm = wm * gl[a];
                s[k][a] += sm;
                grad[2 * k + a] += sm * (3.0 * h / 8.0) + wm * beta * um[a] * 0.5;
                grad[2 * (k + 1) + a] += sm * (h / 8.0) + wm * beta * um[a] * 0.5;
            }
        }
        // terminal tail v0(y_{n-1})
        let sb = beta.sqrt();
        cost += v0(&y[n - 1], beta);
        for a in 0..2 {
            s[n - 1][a] += sb * y[n - 1][a];
        }
        // chain through y_{k+1} = y_k + h_k/2 (u_k + u_{k+1}): the state y_l
        // depends on u_j with weight h_{j-1}/2 at j = l, (h_{j-1}+h_j)/2 for
        // 0 < j < l, and h_0/2 at j = 0
        let mut suffix = [0.0; 2];
        for k in (1..n).rev() {
            let h_left = self.h(k - 1);
            let h_right = if k < n - 1 { self.h(k) } else { 0.0 };
            for a in 0..2 {
                grad[2 * k + a] += 0.5 * h_left * s[k][a] + 0.5 * (h_left + h_right) * suffix[a];
                suffix[a] += s[k][a];
            }
        }
        for a in 0..2 {
            grad[a] += 0.5 * self.h(0) * suffix[a];
        }
        cost
    }

    /// Cumulative Simpson running cost per node (no terminal tail).
    fn running_cost(&self, u: &[f64], y: &[[f64; 2]]) -> Vec<f64> {
        let n = self.n();
        let beta = self.cfg.beta;
        let g = |yy: &[f64], uu: [f64; 2]| ell_alpha(yy, self.cfg) + 0.5 * beta * (uu[0] * uu[0] + uu[1] * uu[1]);
        let mut acc = vec![0.0; n];
        for k in 0..n - 1 {
            let h = self.h(k);
            let uk = [u[2 * k], u[2 * k + 1]];
            let uk1 = [u[2 * (k + 1)], u[2 * (k + 1) + 1]];
            let um = [0.5 * (uk[0] + uk1[0]), 0.5 * (uk[1] + uk1[1])];
            let ym = [
                y[k][0] + h * (3.0 * uk[0] + uk1[0]) / 8.0,
                y[k][1] + h * (3.0 * uk[1] + uk1[1]) / 8.0,
            ];
            let inc = h / 6.0 * (g(&y[k], uk) + 4.0 * g(&ym, um) + g(&y[k + 1], uk1));
            acc[k + 1] = acc[k] + inc;
        }
        acc
    }
}

/// Non-uniform second-difference residual against the extremal flow at each
/// interior node.
fn pmp_residuals(cfg: &Example8Config, times: &[f64], y: &[[f64; 2]]) -> Vec<f64> {
    let n = times.len();
    let mut out = vec![0.0; n];
    for k in 1..n - 1 {
        let hl = times[k] - times[k - 1];
        let hr = times[k + 1] - times[k];
        let gl = grad_ell_alpha(&y[k], cfg);
        let mut acc = 0.0;
        for a in 0..2 {
            let ydd = 2.0 * ((y[k + 1][a] - y[k][a]) / hr - (y[k][a] - y[k - 1][a]) / hl) / (hl + hr);
            let r = ydd - gl[a] / cfg.beta;
            acc += r * r;
        }
        out[k] = acc.sqrt();
    }
    out
}

/// Curvature-equidistributed mesh: density sqrt(residual / dt^2) with a
/// floor, integrated and inverted at equal increments. Node count preserved.
fn equidistribute_mesh(times: &[f64], residuals: &[f64]) -> Vec<f64> {
    let n = times.len();
    // local curvature scale c ~ residual / dt^2
    let mut c = vec![0.0; n];
    for k in 0..n {
        let dt = if k == 0 {
            times[1] - times[0]
        } else if k == n - 1 {
            times[n - 1] - times[n - 2]
        } else {
            0.5 * (times[k + 1] - times[k - 1])
        };
        c[k] = residuals[k] / (dt * dt);
    }
    let cmax = c.iter().cloned().fold(0.0, f64::max);
    let floor = (1e-4 * cmax).max(1e-3);
    let rho: Vec<f64> = c.iter().map(|v| (v + floor).sqrt()).collect();
    // cumulative mass by trapezoid
    let mut q = vec![0.0; n];
    for k in 1..n {
        q[k] = q[k - 1] + 0.5 * (rho[k] + rho[k - 1]) * (times[k] - times[k - 1]);
    }
    let total = q[n - 1];
    let mut new_times = vec![0.0; n];
    new_times[n - 1] = times[n - 1];
    let mut j = 0usize;
    for (i, nt) in new_times.iter_mut().enumerate().take(n - 1).skip(1) {
        let target = total * i as f64 / (n - 1) as f64;
        while j + 1 < n - 1 && q[j + 1] < target {
            j += 1;
        }
        let span = (q[j + 1] - q[j]).max(1e-300);
        let frac = ((target - q[j]) / span).clamp(0.0, 1.0);
        *nt = times[j] + frac * (times[j + 1] - times[j]);
    }
    // enforce strict monotonicity with a minimal spacing
    let min_h = (times[n - 1] - times[0]) * 1e-6;
    for i in 1..n {
        if new_times[i] <= new_times[i - 1] + min_h {
            new_times[i] = new_times[i - 1] + min_h;
        }
    }
    new_times[n - 1] = times[n - 1];
    new_times
}

/// Piecewise-linear resample of a control sequence onto a new mesh.
fn resample_controls(old_times: &[f64], u: &[f64], new_times: &[f64]) -> Vec<f64> {
    let n_new = new_times.len();
    let mut out = vec![0.0; 2 * n_new];
    let mut j = 0usize;
    for (i, &t) in new_times.iter().enumerate() {
        while j + 2 < old_times.len() && old_times[j + 1] < t {
            j += 1;
        }
        let h = (old_times[j + 1] - old_times[j]).max(1e-300);
        let frac = ((t - old_times[j]) / h).clamp(0.0, 1.0);
        for a in 0..2 {
            out[2 * i + a] = (1.0 - frac) * u[2 * j + a] + frac * u[2 * (j + 1) + a];
        }
    }
    out
}

/// Limited-memory BFGS with Armijo backtracking.
struct LbfgsResult {
    x: Vec<f64>,
    #[allow(dead_code)]
    value: f64,
    #[allow(dead_code)]
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

fn lbfgs<F: FnMut(&[f64], &mut [f64]) -> f64>(
    mut f: F,
    x0: Vec<f64>,
    max_iters: usize,
    grad_tol: f64,
) -> LbfgsResult {
    const MEMORY: usize = 10;
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let inf_norm = |v: &[f64]| v.iter().map(|a| a.abs()).fold(0.0, f64::max);

    while iterations < max_iters {
        let gscale = grad_tol * value.abs().max(1.0);
        if inf_norm(&g) <= gscale {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            let a = rho[i] * dot(&s_hist[i], &q);
            alpha[i] = a;
            axpy(-a, &y_hist[i], &mut q);
        }
        let gamma = if m > 0 {
            let i = m - 1;
            dot(&s_hist[i], &y_hist[i]) / dot(&y_hist[i], &y_hist[i]).max(1e-300)
        } else {
            1.0 / inf_norm(&g).max(1e-12)
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for i in 0..m {
            let b = rho[i] * dot(&y_hist[i], &q);
            axpy(alpha[i] - b, &s_hist[i], &mut q);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut dg = dot(&dir, &g);
        if dg >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            dg = dot(&dir, &g);
        }
        // Armijo backtracking
        let mut step = 1.0;
        let mut x_new = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        let mut value_new;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            value_new = f(&x_new, &mut g_new);
            if value_new.is_finite() && value_new <= value + 1e-4 * step * dg {
                accepted = true;
                value = value_new;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        let s_vec: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y_vec: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let ys = dot(&s_vec, &y_vec);
        let ss = dot(&s_vec, &s_vec).sqrt();
        let yy = dot(&y_vec, &y_vec).sqrt();
        if ys > 1e-12 * ss * yy {
            s_hist.push(s_vec);
            y_hist.push(y_vec);
            rho.push(1.0 / ys);
            if s_hist.len() > MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
    }
    LbfgsResult {
        grad_norm: inf_norm(&g),
        x,
        value,
        iterations,
        converged,
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for i in 0..x.len() {
        y[i] += a * x[i];
    }
}

/// Control sequence of the unperturbed feedback rollout from y0.
fn rollout_start(cfg: &Example8Config, y0: [f64; 2], times: &[f64]) -> Vec<f64> {
    let sb = cfg.beta.sqrt();
    let mut u = vec![0.0; 2 * times.len()];
    for (k, &t) in times.iter().enumerate() {
        let decay = (-t / sb).exp();
        u[2 * k] = -y0[0] / sb * decay;
        u[2 * k + 1] = -y0[1] / sb * decay;
    }
    u
}

fn mirror_controls(u: &[f64]) -> Vec<f64> {
    let mut m = u.to_vec();
    for k in 0..u.len() / 2 {
        m[2 * k + 1] = -m[2 * k + 1];
    }
    m
}

/// On-axis ODE rollout as a start (only defined left of the bump).
fn onaxis_start(cfg: &Example8Config, y0: [f64; 2], times: &[f64]) -> Option<Vec<f64>> {
    if y0[1].abs() > 1e-12 || y0[0] >= cfg.z[0] - cfg.sigma_bump {
        return None;
    }
    let (traj, _) = onaxis_trajectory(y0[0], cfg).ok()?;
    let p1 = problem(cfg).ok()?;
    let mut u = vec![0.0; 2 * times.len()];
    for (k, &tk) in times.iter().enumerate() {
        let t = tk.min(traj.final_time());
        let y = traj.state_at(&p1, t).ok()?;
        let s = (y[0] - cfg.z[0]).abs() / cfg.sigma_bump;
        u[2 * k] = -y[0] / cfg.beta.sqrt() * (1.0 + cfg.alpha * psi(s)).sqrt();
        u[2 * k + 1] = 0.0;
    }
    Some(u)
}

/// Smooth seeded perturbations of a base start, generated in mirror pairs so
/// both sides of the axis are explored without bias.
fn perturbed_starts(
    cfg: &Example8Config,
    y0: [f64; 2],
    base: &[f64],
    times: &[f64],
    count: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let amp = 0.4 * (y0[0].abs() + y0[1].abs() + 1.0);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut u = base.to_vec();
        for (k, &t) in times.iter().enumerate() {
            let decay = (-0.4 * t).exp();
            let mut d = [0.0; 2];
            for m in 0..3 {
                let ph = std::f64::consts::PI * (m + 1) as f64 * t / cfg.horizon;
                d[0] += a[2 * m] * ph.sin();
                d[1] += a[2 * m + 1] * ph.sin();
            }
            u[2 * k] += amp * decay * d[0];
            u[2 * k + 1] += amp * decay * d[1];
        }
        out.push(u.clone());
        if out.len() < count {
            out.push(mirror_controls(&u));
        }
    }
    out
}

/// Distance from the bump center to the segment [0, y0]; the unperturbed ray
/// to the origin avoids the bump iff this exceeds sigma.
fn bump_clearance(cfg: &Example8Config, y0: [f64; 2]) -> f64 {
    let dot_zy = cfg.z[0] * y0[0] + cfg.z[1] * y0[1];
    let y2 = y0[0] * y0[0] + y0[1] * y0[1];
    let t = if y2 > 1e-300 { (dot_zy / y2).clamp(0.0, 1.0) } else { 0.0 };
    ((cfg.z[0] - t * y0[0]).powi(2) + (cfg.z[1] - t * y0[1]).powi(2)).sqrt()
}

/// Whether the unperturbed optimum is provably exact at y0: its ray to the
/// origin stays outside the bump support, so V_a(y0) = V_0(y0).
pub fn unperturbed_exact(cfg: &Example8Config, y0: [f64; 2]) -> bool {
    cfg.alpha == 0.0 || bump_clearance(cfg, y0) >= cfg.sigma_bump + 1e-9
}

fn solution_from_controls(
    cfg: &Example8Config,
    tr: &Transcription<'_>,
    u: &[f64],
    start_id: String,
    res: Option<&LbfgsResult>,
) -> OpenLoopSolution {
    let y = tr.states(u);
    let run = tr.running_cost(u, &y);
    let n = tr.n();
    let cost = *run.last().unwrap() + v0(&y[n - 1], cfg.beta);
    let pmp = pmp_residuals(cfg, &tr.times, &y).into_iter().fold(0.0, f64::max);
    let mut identity = 0.0f64;
    for (k, yk) in y.iter().enumerate() {
        let uk = [u[2 * k], u[2 * k + 1]];
        let h = ell_alpha(yk, cfg) - 0.5 * cfg.beta * (uk[0] * uk[0] + uk[1] * uk[1]);
        identity = identity.max(h.abs());
    }
    let trajectory = Trajectory {
        times: tr.times.clone(),
        states: y.iter().map(|p| p.to_vec()).collect(),
        controls: (0..n).map(|k| vec![u[2 * k], u[2 * k + 1]]).collect(),
        running_cost: run,
        status: TrajStatus::Completed,
        note: None,
    };
    OpenLoopSolution {
        trajectory,
        cost,
        converged: res.map_or(true, |r| r.converged),
        start_id,
        mirror_partner: None,
        pmp_residual: pmp,
        traj_identity_error: identity,
        iterations: res.map_or(0, |r| r.iterations),
        initial_control: [u[0], u[1]],
    }
}

fn traj_sup_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

fn mirror_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] + q[1]).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

/// Multistart transcription solve: unperturbed rollout, its mirror, the
/// on-axis rollout where defined, and seeded smooth perturbations, all on a
/// uniform mesh first; the kept optima are then re-solved on a shared
/// curvature-equidistributed mesh (same node count). Converged solutions are
/// deduplicated by trajectory sup-distance (keeping the lower cost) and
/// sorted by cost; mirror partners are linked.
pub fn solve_open_loop(cfg: &Example8Config, y0: [f64; 2], starts: Option<usize>) -> Result<Vec<OpenLoopSolution>> {
    cfg.validate()?;
    let tr = Transcription::uniform(cfg, y0);
    let base = rollout_start(cfg, y0, &tr.times);
    let mut start_list: Vec<(String, Vec<f64>)> = vec![("rollout".into(), base.clone())];
    if y0[1].abs() > 1e-12 {
        start_list.push(("rollout-mirror".into(), mirror_controls(&base)));
    }
    if let Some(ax) = onaxis_start(cfg, y0, &tr.times) {
        start_list.push(("onaxis".into(), ax));
    }
    let n_random = starts.unwrap_or(cfg.solver.random_starts);
    let seed = cfg
        .solver
        .seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(y0[0].to_bits() ^ y0[1].to_bits().rotate_left(17));
    for (i, p) in perturbed_starts(cfg, y0, &base, &tr.times, n_random, seed).into_iter().enumerate() {
        start_list.push((format!("random-{i}"), p));
    }

    let mut solutions: Vec<(OpenLoopSolution, Vec<f64>)> = Vec::new();
    for (id, u_init) in start_list {
        let res = lbfgs(
            |u, g| tr.objective_grad(u, g),
            u_init,
            cfg.solver.max_iters,
            cfg.solver.grad_tol,
        );
        let sol = solution_from_controls(cfg, &tr, &res.x, id, Some(&res));
        solutions.push((sol, res.x));
    }
    let mut kept = dedup_solutions(cfg, solutions);
    if kept.is_empty() {
        return Err(Error::NoConvergence("no transcription start converged".into()));
    }

    // re-solve the kept optima on a shared graded mesh so the discretization
    // error concentrates where the extremal is stiff
    let mut times = tr.times.clone();
    for _ in 0..cfg.solver.refine_passes {
        let mut residuals = vec![0.0; times.len()];
        for (sol, _) in &kept {
            let y: Vec<[f64; 2]> = sol.trajectory.states.iter().map(|p| [p[0], p[1]]).collect();
            for (r, s) in residuals.iter_mut().zip(pmp_residuals(cfg, &times, &y)) {
                *r = r.max(s);
            }
        }
        let new_times = equidistribute_mesh(&times, &residuals);
        let tr_ref = Transcription::with_times(cfg, y0, new_times.clone());
        let mut refined: Vec<(OpenLoopSolution, Vec<f64>)> = Vec::new();
        for (sol, u_old) in &kept {
            let warm = resample_controls(&times, u_old, &new_times);
            let res = lbfgs(
                |u, g| tr_ref.objective_grad(u, g),
                warm,
                cfg.solver.max_iters,
                cfg.solver.grad_tol,
            );
            let new_sol = solution_from_controls(cfg, &tr_ref, &res.x, sol.start_id.clone(), Some(&res));
            refined.push((new_sol, res.x));
        }
        let refined = dedup_solutions(cfg, refined);
        if refined.is_empty() {
            break;
        }
        kept = refined;
        times = new_times;
    }

    let mut kept: Vec<OpenLoopSolution> = kept.into_iter().map(|(s, _)| s).collect();
    for i in 0..kept.len() {
        for j in 0..kept.len() {
            if i != j && mirror_distance(&kept[i].trajectory, &kept[j].trajectory) < cfg.solver.dedup_tol {
                kept[i].mirror_partner = Some(j);
                break;
            }
        }
    }
    Ok(kept)
}

fn dedup_solutions(
    cfg: &Example8Config,
    mut solutions: Vec<(OpenLoopSolution, Vec<f64>)>,
) -> Vec<(OpenLoopSolution, Vec<f64>)> {
    solutions.sort_by(|a, b| a.0.cost.total_cmp(&b.0.cost));
    let mut kept: Vec<(OpenLoopSolution, Vec<f64>)> = Vec::new();
    for (sol, u) in solutions {
        if !sol.converged {
            continue;
        }
        if kept
            .iter()
            .all(|(k, _)| traj_sup_distance(&k.trajectory, &sol.trajectory) > cfg.solver.dedup_tol)
        {
            kept.push((sol, u));
        }
    }
    kept
}

// ---------------------------------------------------------------------------
// value grids
// ---------------------------------------------------------------------------

/// Value grid with convergence and tie bookkeeping. Interpolation refuses to
/// cross unconverged holes.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    pub alpha: f64,
    pub field: ScalarField,
    pub converged: Vec<bool>,
    /// top two deduplicated optima tie in cost but differ in trajectory
    pub tie_flag: Vec<bool>,
    pub best_initial_control: Vec<[f64; 2]>,
}

impl ValueGrid {
    /// Guarded interpolation: errors when the surrounding cell touches an
    /// unconverged hole.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let grid = self.field.grid();
        if !grid.contains(x) {
            return Err(Error::out_of_domain("value grid", x));
        }
        let d = grid.dim();
        let mut corner = vec![0usize; d];
        for a in 0..d {
            let h = grid.spacing()[a];
            let r = ((x[a] - grid.lower()[a]) / h).floor().max(0.0);
            corner[a] = (r as usize).min(grid.points()[a] - 2);
        }
        for c in 0..(1usize << d) {
            let idx: Vec<usize> = (0..d).map(|a| corner[a] + ((c >> a) & 1)).collect();
            if !self.converged[grid.flat_index(&idx)] {
                return Err(Error::DegenerateRegion(format!(
                    "interpolation would cross an unconverged node near {x:?}"
                )));
            }
        }
        self.field.eval(x)
    }

    pub fn holes(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }

    /// CSV summary: y0, value, u*(0), tie flag, converged.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "y0_1,y0_2,value,u0_1,u0_2,tie_flag,converged")?;
        for (k, node) in self.field.grid().nodes() {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
                node[0],
                node[1],
                self.field.node_value(k),
                self.best_initial_control[k][0],
                self.best_initial_control[k][1],
                self.tie_flag[k] as u8,
                self.converged[k] as u8
            )?;
        }
        Ok(())
    }
}

/// Compute the value grid node-parallel with per-node deterministic seeds.
/// Where the unperturbed ray provably avoids the bump the exact value
/// V_0(y0) is used without solving.
pub fn value_alpha_grid(cfg: &Example8Config, grid: BoxGrid, starts: Option<usize>) -> Result<ValueGrid> {
    cfg.validate()?;
    if grid.dim() != 2 {
        return Err(Error::parameter("grid", "value grid must be two-dimensional"));
    }
    struct NodeOut {
        value: f64,
        converged: bool,
        tie: bool,
        u0: [f64; 2],
    }
    let results: Vec<NodeOut> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let node = grid.node_flat(k);
            let y0 = [node[0], node[1]];
            if cfg.solver.closed_form_shortcut && unperturbed_exact(cfg, y0) {
                let sb = cfg.beta.sqrt();
                return NodeOut {
                    value: v0(&y0, cfg.beta),
                    converged: true,
                    tie: false,
                    u0: [-y0[0] / sb, -y0[1] / sb],
                };
            }
            let mut local = cfg.clone();
            local.solver.seed = cfg.solver.seed.wrapping_add(k as u64);
            match solve_open_loop(&local, y0, starts) {
                Ok(sols) => {
                    let best = &sols[0];
                    let tie = sols.len() > 1 && (sols[1].cost - sols[0].cost).abs() <= cfg.solver.tie_tol;
                    NodeOut {
                        value: best.cost,
                        converged: true,
                        tie,
                        u0: best.initial_control,
                    }
                }
                Err(_) => NodeOut {
                    value: f64::NAN,
                    converged: false,
                    tie: false,
                    u0: [f64::NAN; 2],
                },
            }
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut converged = Vec::with_capacity(grid.len());
    let mut ties = Vec::with_capacity(grid.len());
    let mut u0s = Vec::with_capacity(grid.len());
    for r in results {
        values.push(if r.value.is_finite() { r.value } else { 0.0 });
        converged.push(r.converged);
        ties.push(r.tie);
        u0s.push(r.u0);
    }
    Ok(ValueGrid {
        alpha: cfg.alpha,
        field: ScalarField::new(grid, values, InterpOrder::Multilinear)?,
        converged,
        tie_flag: ties,
        best_initial_control: u0s,
    })
}

// ---------------------------------------------------------------------------
// superdifferential probe and the non-differentiability detector
// ---------------------------------------------------------------------------

/// Superdifferential probe output: the set { -beta u*(0) } over deduplicated
/// optima within the tie tolerance of the best cost.
#[derive(Debug, Clone, Serialize)]
pub struct SuperdiffProbe {
    pub covectors: Vec<[f64; 2]>,
    pub diameter: f64,
    pub threshold: f64,
    pub non_differentiable: bool,
    pub best_cost: f64,
    pub costs: Vec<f64>,
}

/// Probe the superdifferential at y0. `threshold` is the diameter above
/// which the point is flagged; calibrate it with [`calibrate_theta_diam`].
pub fn superdifferential_probe(
    cfg: &Example8Config,
    y0: [f64; 2],
    starts: Option<usize>,
    threshold: f64,
) -> Result<SuperdiffProbe> {
    let sols = solve_open_loop(cfg, y0, starts)?;
    let best = sols[0].cost;
    let mut covectors = Vec::new();
    let mut costs = Vec::new();
    for s in &sols {
        if s.cost <= best + cfg.solver.tie_tol {
            covectors.push([
                -cfg.beta * s.initial_control[0],
                -cfg.beta * s.initial_control[1],
            ]);
            costs.push(s.cost);
        }
    }
    let mut diameter = 0.0f64;
    for i in 0..covectors.len() {
        for j in (i + 1)..covectors.len() {
            let d = ((covectors[i][0] - covectors[j][0]).powi(2) + (covectors[i][1] - covectors[j][1]).powi(2)).sqrt();
            diameter = diameter.max(d);
        }
    }
    Ok(SuperdiffProbe {
        non_differentiable: diameter > threshold,
        covectors,
        diameter,
        threshold,
        best_cost: best,
        costs,
    })
}

/// Solver-noise calibration of the non-differentiability threshold: the raw
/// spread of initial covectors among near-tied solutions at known-smooth
/// points, scaled by 10.
pub fn calibrate_theta_diam(cfg: &Example8Config, smooth_points: &[[f64; 2]]) -> Result<f64> {
    let mut spread = 0.0f64;
    for &y0 in smooth_points {
        let sols = solve_open_loop(cfg, y0, None)?;
        let best_u0 = sols[0].initial_control;
        let best_cost = sols[0].cost;
        for s in &sols {
            if s.cost <= best_cost + cfg.solver.tie_tol {
                let d = ((s.initial_control[0] - best_u0[0]).powi(2) + (s.initial_control[1] - best_u0[1]).powi(2))
                    .sqrt()
                    * cfg.beta;
                spread = spread.max(d);
            }
        }
    }
    Ok((10.0 * spread).max(1e-4))
}

/// Result of the empirical bump-strength bisection.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaBisection {
    pub alpha_bar: f64,
    pub history: Vec<(f64, bool)>,
    /// probe at the accepted alpha
    pub probe: SuperdiffProbe,
    pub onaxis_cost: f64,
    pub offaxis_cost: f64,
}

/// Bisection for the smallest bump weight (within `tol_alpha`) at which the
/// axis point y0 sees two mirror optima: the on-axis flow must lose by at
/// least `margin` and the probe must flag opposite-sign transverse controls.
pub fn find_alpha_bar(
    base: &Example8Config,
    y0: [f64; 2],
    alpha_hi: f64,
    tol_alpha: f64,
    margin: f64,
    threshold: f64,
) -> Result<AlphaBisection> {
    let mut history = Vec::new();
    let test = |alpha: f64| -> Result<(bool, SuperdiffProbe, f64, f64)> {
        let mut cfg = base.clone();
        cfg.alpha = alpha;
        let probe = superdifferential_probe(&cfg, y0, None, threshold)?;
        let (_, onaxis_cost) = onaxis_trajectory(y0[0], &cfg)?;
        let off = probe.best_cost;
        let opposite_signs = probe.covectors.iter().any(|c| c[1] > threshold / 2.0)
            && probe.covectors.iter().any(|c| c[1] < -threshold / 2.0);
        let pass = probe.non_differentiable && opposite_signs && onaxis_cost - off >= margin;
        Ok((pass, probe, onaxis_cost, off))
    };
    let (hi_pass, mut probe, mut on_c, mut off_c) = test(alpha_hi)?;
    history.push((alpha_hi, hi_pass));
    if !hi_pass {
        return Err(Error::NoConvergence(format!(
            "axis suboptimality test failed even at alpha = {alpha_hi}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = alpha_hi;
    while hi - lo > tol_alpha {
        let mid = 0.5 * (lo + hi);
        let (pass, p, onc, offc) = test(mid)?;
        history.push((mid, pass));
        if pass {
            hi = mid;
            probe = p;
            on_c = onc;
            off_c = offc;
        } else {
            lo = mid;
        }
    }
    Ok(AlphaBisection {
        alpha_bar: hi,
        history,
        probe,
        onaxis_cost: on_c,
        offaxis_cost: off_c,
    })
}

// ---------------------------------------------------------------------------
// stability checks and the Lyapunov shell
// ---------------------------------------------------------------------------

/// Check the exponential envelope, the initial-speed bound, and the inward
/// sign condition on a computed optimum.
pub fn stability_check(cfg: &Example8Config, sol: &OpenLoopSolution) -> BoundCertificate {
    let y0 = &sol.trajectory.states[0];
    let y0n = (y0[0] * y0[0] + y0[1] * y0[1]).sqrt();
    let amp = (1.0 + cfg.alpha).sqrt();
    let rate = 1.0 / ((1.0 + cfg.alpha) * cfg.beta.sqrt());
    let mut worst: f64 = 0.0;
    for (k, t) in sol.trajectory.times.iter().enumerate() {
        let y = &sol.trajectory.states[k];
        let yn = (y[0] * y[0] + y[1] * y[1]).sqrt();
        let bound = amp * (-rate * t).exp() * y0n;
        worst = worst.max(yn - bound);
    }
    let u0 = sol.initial_control;
    let u0n = (u0[0] * u0[0] + u0[1] * u0[1]).sqrt();
    let speed_bound = ((1.0 + cfg.alpha) / cfg.beta).sqrt() * y0n;
    worst = worst.max(u0n - speed_bound);
    let dz = ((y0[0] - cfg.z[0]).powi(2) + (y0[1] - cfg.z[1]).powi(2)).sqrt();
    let mut notes = vec![];
    if dz > cfg.sigma_bump + 1e-9 && y0n > 1e-9 {
        let inward = u0[0] * y0[0] + u0[1] * y0[1];
        if inward >= 0.0 {
            worst = worst.max(inward + 1.0);
            notes.push("initial control does not point inward".into());
        }
    }
    let tol = 1e-3 * (1.0 + y0n);
    BoundCertificate {
        name: "optimum-stability".into(),
        rule: "benchmark/exponential-stability".into(),
        predicted: 0.0,
        measured: worst,
        slack: -worst,
        tolerance: tol,
        verdict: if worst <= tol { Verdict::Pass } else { Verdict::Fail },
        constants: vec![
            ("alpha".into(), cfg.alpha, Provenance::Supplied),
            ("envelope amplitude".into(), amp, Provenance::Supplied),
            ("envelope rate".into(), rate, Provenance::Supplied),
            ("initial speed bound".into(), speed_bound, Provenance::Supplied),
        ],
        notes,
        seed: cfg.solver.seed,
    }
}

/// The quartic Lyapunov shell w = (|y|^2 - R^2)^2 outside B(0, R) with
/// R = |z| + sigma, zero inside; returns the pair (w, grad w).
pub fn lyapunov_w(cfg: &Example8Config) -> (ScalarFn, VectorFn) {
    let r2 = cfg.shell_radius().powi(2);
    let w: ScalarFn = Arc::new(move |y: &[f64]| {
        let n2: f64 = y.iter().map(|v| v * v).sum();
        if n2 <= r2 {
            0.0
        } else {
            (n2 - r2) * (n2 - r2)
        }
    });
    let gw: VectorFn = Arc::new(move |y: &[f64]| {
        let n2: f64 = y.iter().map(|v| v * v).sum();
        if n2 <= r2 {
            vec![0.0; y.len()]
        } else {
            y.iter().map(|v| 4.0 * v * (n2 - r2)).collect()
        }
    });
    (w, gw)
}

/// Full Lyapunov setup for the benchmark: omega a ball containing the shell
/// B(0, R), with g = 0.
pub fn lyapunov_setup(
    cfg: &Example8Config,
    omega_radius: f64,
    delta: f64,
    bound: f64,
    seed: u64,
) -> Result<LyapunovSetup> {
    let r = cfg.shell_radius();
    if omega_radius < r {
        return Err(Error::parameter(
            "omega_radius",
            format!("omega must contain the shell ball of radius {r}"),
        ));
    }
    let (w, gw) = lyapunov_w(cfg);
    LyapunovSetup::new(
        w,
        gw,
        Arc::new(|_| 0.0),
        Region::ball(vec![0.0, 0.0], omega_radius),
        delta,
        vec![-bound, -bound],
        vec![bound, bound],
        512,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ell_alpha_off_and_on_bump() {
        let cfg = Example8Config::new(1.0);
        // off the bump support: plain quadratic
        let y = [1.0, 1.0];
        assert_relative_eq!(ell_alpha(&y, &cfg), 1.0, epsilon = 1e-14);
        // at the center: psi(0) = e^{-1}
        let z = [cfg.z[0], cfg.z[1]];
        let want = 0.5 * 4.0 * (1.0 + (-1.0f64).exp());
        assert_relative_eq!(ell_alpha(&z, &cfg), want, epsilon = 1e-12);
    }

    #[test]
    fn grad_ell_alpha_matches_finite_differences() {
        let cfg = Example8Config::new(7.0);
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(4);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let y = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            let g = grad_ell_alpha(&y, &cfg);
            for a in 0..2 {
                let mut yp = y;
                let mut ym = y;
                yp[a] += h;
                ym[a] -= h;
                let fd = (ell_alpha(&yp, &cfg) - ell_alpha(&ym, &cfg)) / (2.0 * h);
                worst = worst.max((fd - g[a]).abs());
            }
        }
        assert!(worst <= 1e-6, "max gradient error {worst}");
    }

    #[test]
    fn v0_and_u0_closed_forms() {
        assert_relative_eq!(v0(&[1.0, 0.0], 1.0), 0.5);
        assert_eq!(u0_law(&[1.0, 0.0], 1.0), [-1.0, 0.0]);
        assert_relative_eq!(v0(&[0.0, 2.0], 4.0), 4.0);
        let u = u0_law(&[0.0, 2.0], 4.0);
        assert!((u[0]).abs() < 1e-15 && (u[1] + 1.0).abs() < 1e-15);
        assert_eq!(v0(&[0.0, 0.0], 1.0), 0.0);
    }

    fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        [a[0] + b[0], a[1] + b[1]]
    }
    fn scale(a: [f64; 2], s: f64) -> [f64; 2] {
        [a[0] * s, a[1] * s]
    }

    #[test]
    fn linear_arc_stable_branch_and_ode_oracle() {
        let beta: f64 = 1.3;
        let y0 = [0.8, -0.4];
        let u0 = [-y0[0] / beta.sqrt(), -y0[1] / beta.sqrt()];
        // stable branch collapses to the decaying exponential
        for &t in &[0.3, 1.0, 2.5] {
            let y = linear_arc(&y0, &u0, t, beta);
            let decay = (-t / beta.sqrt()).exp();
            assert_relative_eq!(y[0], y0[0] * decay, epsilon = 1e-12);
            assert_relative_eq!(y[1], y0[1] * decay, epsilon = 1e-12);
        }
        assert_eq!(linear_arc(&y0, &[0.3, 0.1], 0.0, beta), [0.8, -0.4]);
        // generic arc against an rk4 integration of y'' = y / beta
        let u0g = [0.35, -0.2];
        let (mut y, mut v) = (y0, u0g);
        let dt = 1e-4;
        let mut t = 0.0;
        while t < 1.0 - 1e-12 {
            let f = |state: ([f64; 2], [f64; 2])| (state.1, [state.0[0] / beta, state.0[1] / beta]);
            let k1 = f((y, v));
            let k2 = f((add(y, scale(k1.0, dt / 2.0)), add(v, scale(k1.1, dt / 2.0))));
            let k3 = f((add(y, scale(k2.0, dt / 2.0)), add(v, scale(k2.1, dt / 2.0))));
            let k4 = f((add(y, scale(k3.0, dt)), add(v, scale(k3.1, dt))));
            for a in 0..2 {
                y[a] += dt / 6.0 * (k1.0[a] + 2.0 * k2.0[a] + 2.0 * k3.0[a] + k4.0[a]);
                v[a] += dt / 6.0 * (k1.1[a] + 2.0 * k2.1[a] + 2.0 * k3.1[a] + k4.1[a]);
            }
            t += dt;
        }
        let arc = linear_arc(&y0, &u0g, 1.0, beta);
        assert!((arc[0] - y[0]).abs() < 1e-9 && (arc[1] - y[1]).abs() < 1e-9);
    }

    #[test]
    fn onaxis_reduces_to_exponential_without_bump() {
        let cfg = Example8Config::new(0.0);
        let (traj, cost) = onaxis_trajectory(-5.0, &cfg).unwrap();
        // y1(t) = -5 e^{-t}; cost -> V0 = 12.5
        let t = traj.final_time();
        assert_relative_eq!(traj.final_state()[0], -5.0 * (-t).exp(), epsilon = 1e-7);
        assert_relative_eq!(cost, 12.5, epsilon = 1e-7);
    }

    #[test]
    fn transcription_gradient_matches_finite_differences() {
        let cfg = {
            let mut c = Example8Config::new(10.0);
            c.nodes = 25;
            c.horizon = 5.0;
            c
        };
        let tr = Transcription::new(&cfg, [-3.0, 0.4]);
        let u0 = rollout_start(&cfg, [-3.0, 0.4]);
        let mut g = vec![0.0; u0.len()];
        let j0 = tr.objective_grad(&u0, &mut g);
        let h = 1e-6;
        for idx in [0usize, 3, 11, 24, 48, 49] {
            let mut up = u0.clone();
            let mut um = u0.clone();
            up[idx] += h;
            um[idx] -= h;
            let mut scratch = vec![0.0; u0.len()];
            let jp = tr.objective_grad(&up, &mut scratch);
            let jm = tr.objective_grad(&um, &mut scratch);
            let fd = (jp - jm) / (2.0 * h);
            assert!(
                (fd - g[idx]).abs() <= 1e-5 * (1.0 + fd.abs()),
                "idx {idx}: fd {fd} vs adjoint {}",
                g[idx]
            );
        }
        assert!(j0.is_finite());
    }

    #[test]
    fn lq_transcription_recovers_v0() {
        let cfg = Example8Config::new(0.0);
        let sols = solve_open_loop(&cfg, [2.0, -1.0], Some(2)).unwrap();
        let best = &sols[0];
        assert!(best.converged);
        // J = V0(y0) = 2.5
        assert!((best.cost - 2.5).abs() < 1e-5, "J = {}", best.cost);
        // trajectory follows e^{-t} y0
        let k = 20;
        let t = best.trajectory.times[k];
        let y = &best.trajectory.states[k];
        let decay = (-t).exp();
        assert!((y[0] - 2.0 * decay).abs() < 2e-3, "y {} vs {}", y[0], 2.0 * decay);
    }

    #[test]
    fn far_ball_nodes_match_v0_for_positive_alpha() {
        // inside B(0, |z| - sigma) every optimal path stays inside, so
        // V_alpha = V_0 there
        let cfg = Example8Config::new(10.0);
        for y0 in [[1.0, 0.4], [-0.8, 0.9], [0.3, -1.1]] {
            let sols = solve_open_loop(&cfg, y0, Some(2)).unwrap();
            let want = v0(&y0, cfg.beta);
            assert!(
                (sols[0].cost - want).abs() <= 2e-4 * (1.0 + want),
                "V at {y0:?}: {} vs {}",
                sols[0].cost,
                want
            );
        }
    }

    #[test]
    fn mirror_start_cost_agreement() {
        let cfg = Example8Config::new(10.0);
        let tr = Transcription::new(&cfg, [-5.0, 0.0]);
        let base = rollout_start(&cfg, [-5.0, 0.0]);
        let pert = perturbed_starts(&cfg, [-5.0, 0.0], &base, 2, 42);
        let mut g = vec![0.0; base.len()];
        // the discrete objective is exactly mirror-symmetric
        let j1 = tr.objective_grad(&pert[0], &mut g);
        let j2 = tr.objective_grad(&mirror_controls(&pert[0]), &mut g);
        assert!((j1 - j2).abs() < 1e-9, "{j1} vs {j2}");
        // and optimizing mirrored starts lands on mirrored optima
        let r1 = lbfgs(|u, gg| tr.objective_grad(u, gg), pert[0].clone(), 400, 1e-9);
        let r2 = lbfgs(
            |u, gg| tr.objective_grad(u, gg),
            mirror_controls(&pert[0]),
            400,
            1e-9,
        );
        assert!((r1.value - r2.value).abs() < 1e-9);
    }

    #[test]
    fn bump_clearance_identifies_shadow() {
        let cfg = Example8Config::new(10.0);
        // straight ray from (1,1) to origin stays far from z = (-2, 0)
        assert!(unperturbed_exact(&cfg, [1.0, 1.0]));
        // the axis point behind the bump is shadowed
        assert!(!unperturbed_exact(&cfg, [-5.0, 0.0]));
        // point inside the far ball
        assert!(unperturbed_exact(&cfg, [0.5, -0.9]));
    }

    #[test]
    fn shell_lyapunov_values() {
        let cfg = Example8Config::new(10.0);
        let (w, gw) = lyapunov_w(&cfg);
        let r = cfg.shell_radius();
        assert_eq!(r, 2.5);
        assert_eq!(w(&[1.0, 1.0]), 0.0);
        assert_eq!(gw(&[2.0, 0.0]), vec![0.0, 0.0]);
        // |y|^2 = R^2 + 1 -> w = 1
        let y = [(r * r + 1.0).sqrt(), 0.0];
        assert_relative_eq!(w(&y), 1.0, epsilon = 1e-12);
        // omega must contain the shell
        assert!(lyapunov_setup(&cfg, 2.0, 1.0, 6.0, 3).is_err());
        assert!(lyapunov_setup(&cfg, 2.55, 1.0, 6.0, 3).is_ok());
    }
}
