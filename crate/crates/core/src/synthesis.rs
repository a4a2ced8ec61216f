//! Horizon schedules and the four feedback-synthesis pipelines: C^1
//! surrogates, semi-convex (envelope then mollify), semi-concave (mollify
//! only), and Hoelder (envelope then mollify with coupled radii). Each plan
//! sweeps a regularization parameter, builds a smooth law per value, selects
//! the horizon from the measured deviation and the escape estimate, and logs
//! every constant used.

use std::sync::Arc;

use serde::Serialize;

use crate::certify::{sigma_quantities, LyapunovSetup, SigmaConfig};
use crate::error::{Error, Result};
use crate::estimate::ModulusOfContinuity;
use crate::grid::{BoxGrid, InterpOrder, ScalarField};
use crate::law::FeedbackLaw;
use crate::problem::ControlProblem;
use crate::region::{Region, RegionSample};
use crate::regularize::{moreau_envelope, semiconcavity_constant, GLambda, MoreauField, ProblemConstants};
use crate::simulate::{hamiltonian, max_hamiltonian};

/// Horizon schedule kappa: a positive function blowing up as its argument
/// vanishes.
#[derive(Debug, Clone, Copy, Serialize)]
pub enum KappaSchedule {
    /// s -> -ln(s) / a
    Log { a: f64 },
    /// s -> s^{-q}
    Power { q: f64 },
}

impl KappaSchedule {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            KappaSchedule::Log { a } => -s.ln() / a,
            KappaSchedule::Power { q } => s.powf(-q),
        }
    }

    /// kappa(s) s <= delta / sup|grad w| at every measured deviation.
    pub fn check_linear_side_condition(&self, bound: f64, s_values: &[f64]) -> Result<()> {
        for &s in s_values {
            if s <= 0.0 {
                continue;
            }
            let v = self.eval(s) * s;
            if v > bound + 1e-12 {
                return Err(Error::PlanRejected {
                    param: s,
                    reason: format!("kappa(s) s = {v} exceeds the side-condition bound {bound}"),
                });
            }
        }
        Ok(())
    }

    /// Numeric tail check of kappa(s)^{(p-1)/p} (e^{K kappa(s)} - 1)^{1/p} s^2
    /// on a decreasing sweep: the sequence must decrease monotonically once
    /// past its maximum and reach a small terminal value.
    pub fn check_exponential_tail(&self, k_const: f64, p: f64, sweep: &[f64]) -> Result<()> {
        let vals: Vec<f64> = sweep
            .iter()
            .map(|&s| {
                let k = self.eval(s);
                k.powf((p - 1.0) / p) * ((k_const * k).exp_m1()).max(0.0).powf(1.0 / p) * s * s
            })
            .collect();
        check_decreasing_tail(&vals, sweep)
    }

    /// Tail check for the coupled-radius pipeline:
    /// kappa(s)^{(p-1)/p} (e^{K(s) kappa(s)} - 1)^{1/p} eta(s)
    ///   + kappa(s) s^{(2a-1)/(2-a)} -> 0.
    pub fn check_coupled_tail<FK, FE>(&self, k_of_s: FK, eta: FE, p: f64, alpha: f64, sweep: &[f64]) -> Result<()>
    where
        FK: Fn(f64) -> f64,
        FE: Fn(f64) -> f64,
    {
        let expo = (2.0 * alpha - 1.0) / (2.0 - alpha);
        let vals: Vec<f64> = sweep
            .iter()
            .map(|&s| {
                let k = self.eval(s);
                k.powf((p - 1.0) / p) * ((k_of_s(s) * k).exp_m1()).max(0.0).powf(1.0 / p) * eta(s)
                    + k * s.powf(expo)
            })
            .collect();
        check_decreasing_tail(&vals, sweep)
    }
}

fn check_decreasing_tail(vals: &[f64], sweep: &[f64]) -> Result<()> {
    if vals.len() < 3 {
        return Err(Error::parameter("sweep", "tail check needs at least 3 points"));
    }
    // locate the maximum, demand a monotone decrease past it
    let mut imax = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v > vals[imax] {
            imax = i;
        }
    }
    for i in imax..vals.len() - 1 {
        if vals[i + 1] > vals[i] * (1.0 + 1e-9) {
            return Err(Error::PlanRejected {
                param: sweep[i + 1],
                reason: format!("tail product increased from {} to {}", vals[i], vals[i + 1]),
            });
        }
    }
    if *vals.last().unwrap() > vals[imax] * 0.9 && vals[imax] > 0.0 {
        return Err(Error::PlanRejected {
            param: *sweep.last().unwrap(),
            reason: "tail product did not decay along the sweep".into(),
        });
    }
    Ok(())
}

/// How pipeline inclusion checks treat the envelope's inner domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InclusionRule {
    /// the worst-case margin 2 sqrt(lambda |phi|_inf)
    WorstCase,
    /// the measured per-node argmin displacements: every argmin over the
    /// fattened working region stays strictly inside the grid
    MeasuredArgmin,
}

/// The law u_v = -(1/beta) B^T grad v from a differentiable surrogate.
pub fn feedback_from(problem: Arc<ControlProblem>, v: &ScalarField) -> FeedbackLaw {
    FeedbackLaw::from_field(problem, v)
}

/// Check the argmax property of a law against random controls: at each
/// sample y, H(y, grad v(y), u(y)) must dominate H(y, grad v(y), u') for
/// random u'.
pub fn argmax_property_violations(
    problem: &ControlProblem,
    law: &FeedbackLaw,
    sample: &RegionSample,
    random_controls: usize,
    seed: u64,
) -> Result<usize> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    for y in &sample.points {
        let g = law.surrogate_gradient(y)?;
        let u = law.eval(y)?;
        let h_star = hamiltonian(problem, y, &g, &u);
        let closed = max_hamiltonian(problem, y, &g);
        if (h_star - closed).abs() > 1e-9 * (1.0 + closed.abs()) {
            violations += 1;
            continue;
        }
        for _ in 0..random_controls {
            let trial: Vec<f64> = (0..problem.dim_control).map(|_| rng.gen_range(-3.0..3.0)).collect();
            if hamiltonian(problem, y, &g, &trial) > h_star + 1e-9 * (1.0 + h_star.abs()) {
                violations += 1;
                break;
            }
        }
    }
    Ok(violations)
}

/// One swept parameter of a synthesis plan.
#[derive(Debug, Clone, Serialize)]
pub struct PlanEntry {
    /// epsilon or lambda, depending on the pipeline
    pub param: f64,
    pub eps_of_lambda: Option<f64>,
    /// measured deviation entering kappa
    pub deviation: f64,
    pub kappa_value: f64,
    /// selected horizon (min of the escape branch, kappa, and the cap)
    pub tau: f64,
    pub tau_capped: bool,
    pub predicted_bound: Option<f64>,
    pub k_const: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    #[serde(skip)]
    pub law: Option<FeedbackLaw>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisPlan {
    pub pipeline: String,
    pub entries: Vec<PlanEntry>,
    pub tau_max: f64,
    pub diagnostics: Vec<String>,
}

impl SynthesisPlan {
    pub fn write_json<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        serde_json::to_writer_pretty(&mut *w, self).map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn laws_with_horizons(&self) -> Vec<(f64, FeedbackLaw, f64)> {
        self.entries
            .iter()
            .filter_map(|e| e.law.clone().map(|l| (e.param, l, e.tau)))
            .collect()
    }
}

/// Default horizon cap for desk-scale runs.
pub const TAU_MAX_DEFAULT: f64 = 50.0;

/// Sup of |B(u1 - u2)| over a sample.
fn sup_b_deviation(problem: &ControlProblem, u1: &FeedbackLaw, u2: &FeedbackLaw, sample: &RegionSample) -> f64 {
    let d = problem.dim_state;
    let m = problem.dim_control;
    let mut bmat = vec![0.0; d * m];
    let mut scratch = vec![0.0; d * m];
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    let mut sup: f64 = 0.0;
    for y in &sample.points {
        if u1.eval_into(y, &mut a, &mut scratch).is_err() || u2.eval_into(y, &mut b, &mut scratch).is_err() {
            continue;
        }
        problem.input_map(y, &mut bmat);
        let mut acc = 0.0;
        for i in 0..d {
            let mut r = 0.0;
            for j in 0..m {
                r += bmat[i * m + j] * (a[j] - b[j]);
            }
            acc += r * r;
        }
        sup = sup.max(acc.sqrt());
    }
    sup
}

fn sup_deviation(u1: &FeedbackLaw, u2: &FeedbackLaw, sample: &RegionSample) -> f64 {
    crate::certify::law_deviation_sup(u1, u2, sample).sup
}

/// L^p norm of |u1 - u2| over a sample with the given region volume.
fn lp_deviation(u1: &FeedbackLaw, u2: &FeedbackLaw, sample: &RegionSample, p: f64, volume: f64) -> f64 {
    let m = u1.problem().dim_control;
    let d = u1.problem().dim_state;
    let mut scratch = vec![0.0; d * m];
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in &sample.points {
        if u1.eval_into(y, &mut a, &mut scratch).is_err() || u2.eval_into(y, &mut b, &mut scratch).is_err() {
            continue;
        }
        let dv: f64 = a.iter().zip(&b).map(|(x, z)| (x - z) * (x - z)).sum::<f64>().sqrt();
        acc += dv.powf(p);
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    (volume * acc / n as f64).powf(1.0 / p)
}

/// Grad-w sup over a sample (for side conditions).
pub fn grad_w_sup(setup: &LyapunovSetup, sample: &RegionSample) -> f64 {
    sample
        .points
        .iter()
        .map(|y| (setup.grad_w)(y).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// pipeline: C^1 value function, externally supplied surrogate family
// ---------------------------------------------------------------------------

/// Plan for a C^1 value function and an externally supplied family of laws
/// u_eps: horizons tau_eps = kappa(|B(u_eps - u_V)|_C(omega_delta)) with the
/// predicted defect bound beta kappa(s) |u_eps - u_V|^2.
pub fn plan_c1(
    problem: &ControlProblem,
    reference: &FeedbackLaw,
    setup: &LyapunovSetup,
    family: &[(f64, FeedbackLaw)],
    kappa: &KappaSchedule,
    omega_delta_sample: &RegionSample,
    tau_max: f64,
) -> Result<SynthesisPlan> {
    let gw_sup = grad_w_sup(setup, omega_delta_sample);
    let side_bound = setup.delta / gw_sup.max(1e-300);
    let mut entries = Vec::new();
    for (eps, law) in family {
        let s = sup_b_deviation(problem, law, reference, omega_delta_sample);
        if s > 0.0 {
            kappa.check_linear_side_condition(side_bound, &[s]).map_err(|_| Error::PlanRejected {
                param: *eps,
                reason: format!(
                    "side condition kappa(s) s <= delta/|grad w| violated at eps = {eps} (s = {s})"
                ),
            })?;
        }
        let plain_dev = sup_deviation(law, reference, omega_delta_sample);
        let (kappa_value, tau, capped) = if s <= 0.0 {
            (f64::INFINITY, tau_max, true)
        } else {
            let k = kappa.eval(s);
            (k, k.min(tau_max), k > tau_max)
        };
        let predicted = problem.beta * kappa_value.min(tau_max) * plain_dev * plain_dev;
        entries.push(PlanEntry {
            param: *eps,
            eps_of_lambda: None,
            deviation: s,
            kappa_value,
            tau,
            tau_capped: capped,
            predicted_bound: Some(predicted),
            k_const: None,
            sigma1: None,
            sigma2: None,
            law: Some(law.clone()),
            notes: vec![],
        });
    }
    Ok(SynthesisPlan {
        pipeline: "c1".into(),
        entries,
        tau_max,
        diagnostics: vec![format!("sup |grad w| = {gw_sup}"), format!("side bound = {side_bound}")],
    })
}

// ---------------------------------------------------------------------------
// shared helpers for the envelope pipelines
// ---------------------------------------------------------------------------

/// Largest epsilon margin available inside the grid box around the fattened
/// working region; zero when the region already touches the box.
fn available_margin(grid: &BoxGrid, region: &Region) -> f64 {
    let (lo, hi) = region.bounding_box();
    let mut margin = f64::INFINITY;
    for a in 0..grid.dim() {
        margin = margin.min(lo[a] - grid.lower()[a]);
        margin = margin.min(grid.upper()[a] - hi[a]);
    }
    margin.max(0.0)
}

/// Inclusion check for envelope surrogates per the chosen rule.
fn inclusion_ok(moreau: &MoreauField, region: &Region, epsilon: f64, rule: InclusionRule) -> bool {
    let grid = moreau.values.grid();
    match rule {
        InclusionRule::WorstCase => {
            let margin = moreau.inner_margin() + epsilon;
            let (lo, hi) = region.bounding_box();
            (0..grid.dim()).all(|a| {
                lo[a] - grid.lower()[a] >= margin - 1e-12 && grid.upper()[a] - hi[a] >= margin - 1e-12
            })
        }
        InclusionRule::MeasuredArgmin => {
            // every argmin over the epsilon-fattened region must stay one
            // spacing inside the grid box
            let h = grid.max_spacing();
            for (k, x) in grid.nodes() {
                let fat = region.level(&x) < epsilon;
                if !fat {
                    continue;
                }
                let y = &moreau.argmin[k];
                if !grid.contains_with_margin(y, h) {
                    return false;
                }
            }
            true
        }
    }
}

/// Sup of |grad M| (or |B^T grad M|) over the sample from the envelope field.
fn sup_grad_norm(field: &ScalarField, sample: &RegionSample) -> f64 {
    sample
        .points
        .iter()
        .filter_map(|y| field.gradient(y).ok())
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn sup_bt_grad_norm(problem: &ControlProblem, field: &ScalarField, sample: &RegionSample) -> f64 {
    let d = problem.dim_state;
    let m = problem.dim_control;
    let mut bmat = vec![0.0; d * m];
    let mut bt = vec![0.0; m];
    let mut sup: f64 = 0.0;
    for y in &sample.points {
        if let Ok(g) = field.gradient(y) {
            problem.input_map_transpose_apply(y, &g, &mut bmat, &mut bt);
            sup = sup.max(bt.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    sup
}

/// Sup over the sample of the gradient gap |grad(rho_eps * M) - grad M|.
fn gradient_gap_sup(law_base: &ScalarField, kernel_eps: f64, sample: &RegionSample, quad_points: usize) -> Result<f64> {
    let kernel = crate::regularize::BumpKernel::new(law_base.grid().dim(), kernel_eps, quad_points)?;
    let mut sup: f64 = 0.0;
    for y in &sample.points {
        if let (Ok(gs), Ok(gm)) = (kernel.convolve_gradient(law_base, y), law_base.gradient(y)) {
            let dv: f64 = gs.iter().zip(&gm).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            sup = sup.max(dv);
        }
    }
    Ok(sup)
}

/// L^{2p} norm of the gradient gap over the sample.
fn gradient_gap_l2p(
    law_base: &ScalarField,
    kernel_eps: f64,
    sample: &RegionSample,
    volume: f64,
    p: f64,
    quad_points: usize,
) -> Result<f64> {
    let kernel = crate::regularize::BumpKernel::new(law_base.grid().dim(), kernel_eps, quad_points)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in &sample.points {
        if let (Ok(gs), Ok(gm)) = (kernel.convolve_gradient(law_base, y), law_base.gradient(y)) {
            let dv: f64 = gs.iter().zip(&gm).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            acc += dv.powf(2.0 * p);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::DegenerateRegion("no gradient-gap sample".into()));
    }
    Ok((volume * acc / n as f64).powf(1.0 / (2.0 * p)))
}

/// Configuration shared by the envelope pipelines.
#[derive(Debug, Clone)]
pub struct EnvelopePlanConfig {
    pub sigma: SigmaConfig,
    pub inclusion: InclusionRule,
    pub tau_max: f64,
    pub kernel_points: usize,
    /// modulus-of-continuity sampling for grad w
    pub modulus_pairs: usize,
    pub seed: u64,
}

impl Default for EnvelopePlanConfig {
    fn default() -> Self {
        EnvelopePlanConfig {
            sigma: SigmaConfig::default(),
            inclusion: InclusionRule::MeasuredArgmin,
            tau_max: TAU_MAX_DEFAULT,
            kernel_points: crate::regularize::DEFAULT_KERNEL_POINTS,
            modulus_pairs: 4000,
            seed: 0x51ab,
        }
    }
}

// ---------------------------------------------------------------------------
// pipeline: semi-convex value function (envelope, then mollify)
// ---------------------------------------------------------------------------

/// Plan for a semi-convex value function: surrogate rho_eps(lambda) * M_lambda V
/// with eps(lambda) the largest radius whose sup gradient gap squared stays
/// below lambda, horizon from the sigma quantities and kappa(lambda).
#[allow(clippy::too_many_arguments)]
pub fn plan_semiconvex(
    problem: &ControlProblem,
    v: &ScalarField,
    setup: &LyapunovSetup,
    lambda_sweep: &[f64],
    kappa: &KappaSchedule,
    omega_delta_sample: &RegionSample,
    constants: &ProblemConstants,
    cfg: &EnvelopePlanConfig,
) -> Result<SynthesisPlan> {
    let mut entries = Vec::new();
    let mut diagnostics = Vec::new();
    let problem_arc = Arc::new(problem.clone());
    let gw_mod = ModulusOfContinuity::sample(
        |y| (setup.grad_w)(y),
        omega_delta_sample,
        cfg.modulus_pairs,
        cfg.seed,
    )?;
    let gw_sup = grad_w_sup(setup, omega_delta_sample);
    let mut lambda0: Option<f64> = None;
    for &lambda in lambda_sweep {
        let moreau = moreau_envelope(v, lambda)?;
        let margin = available_margin(moreau.values.grid(), &setup.omega_delta);
        // epsilon search: geometric grid from the margin down, largest
        // feasible value wins
        let mut chosen: Option<(f64, f64)> = None;
        let mut eps = margin.min(0.8 * margin + 1e-9).max(1e-9);
        for _ in 0..24 {
            if eps < 1e-6 {
                break;
            }
            if inclusion_ok(&moreau, &setup.omega_delta, eps, cfg.inclusion) {
                let gap = gradient_gap_sup(&moreau.values, eps, omega_delta_sample, cfg.kernel_points)?;
                if gap * gap <= lambda {
                    chosen = Some((eps, gap));
                    break;
                }
            }
            eps *= 0.7;
        }
        let (eps, gap) = match chosen {
            Some(c) => c,
            None => {
                diagnostics.push(format!(
                    "lambda = {lambda} rejected: no epsilon satisfied the inclusion and gradient-gap conditions"
                ));
                continue;
            }
        };
        lambda0 = Some(lambda0.map_or(lambda, |l0: f64| l0.max(lambda)));
        let g_lambda = GLambda {
            moreau: &moreau,
            constants,
            grad_w_sup: gw_sup,
            h_w: &gw_mod,
            beta: problem.beta,
            g: Box::new(|y| (setup.g)(y)),
        };
        let sig = sigma_quantities(setup, problem, eps, Some(&g_lambda), &cfg.sigma)?;
        let bt_grad = sup_bt_grad_norm(problem, &moreau.values, omega_delta_sample);
        let sigma1l = sig.sigma1_lambda.unwrap_or(f64::INFINITY);
        let denom = sigma1l + sig.sigma2 * bt_grad / problem.beta;
        let escape_branch = if denom < 1e-14 { f64::INFINITY } else { setup.delta / denom };
        let kappa_value = kappa.eval(lambda);
        let tau = escape_branch.min(kappa_value).min(cfg.tau_max);
        let law = FeedbackLaw::from_mollifier_quadrature(
            problem_arc.clone(),
            Arc::new(moreau.values.clone()),
            eps,
            Some(cfg.kernel_points),
        )?;
        // defect bound of the surrogate pipeline: tau (sup h_lambda + |B|^2 gap^2 / beta)
        let defect = crate::regularize::hjb_defect(problem, &moreau, constants, &setup.omega_delta, None)?;
        let predicted = tau * (defect.max_over_region + constants.b_sup * constants.b_sup * gap * gap / problem.beta);
        entries.push(PlanEntry {
            param: lambda,
            eps_of_lambda: Some(eps),
            deviation: gap,
            kappa_value,
            tau,
            tau_capped: kappa_value > cfg.tau_max || escape_branch > cfg.tau_max,
            predicted_bound: Some(predicted),
            k_const: None,
            sigma1: Some(sigma1l),
            sigma2: Some(sig.sigma2),
            law: Some(law),
            notes: vec![format!("sup h_lambda = {}", defect.max_over_region)],
        });
    }
    if let Some(l0) = lambda0 {
        diagnostics.push(format!("lambda0 (largest accepted lambda) = {l0}"));
    }
    if entries.is_empty() {
        return Err(Error::PlanRejected {
            param: f64::NAN,
            reason: "every swept lambda was rejected".into(),
        });
    }
    Ok(SynthesisPlan {
        pipeline: "semiconvex".into(),
        entries,
        tau_max: cfg.tau_max,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// pipeline: semi-concave value function (mollification only)
// ---------------------------------------------------------------------------

/// Plan for a semi-concave value function: u_eps from the mollified field
/// with a kernel-matched base resolution, deviations in L^p against the
/// reference feedback, horizons from the sigma quantities and kappa.
#[allow(clippy::too_many_arguments)]
pub fn plan_semiconcave(
    problem: &ControlProblem,
    v: &ScalarField,
    reference: &FeedbackLaw,
    setup: &LyapunovSetup,
    eps_sweep: &[f64],
    kappa: &KappaSchedule,
    p: f64,
    omega_delta_sample: &RegionSample,
    omega_delta_volume: f64,
    constants: &ProblemConstants,
    cfg: &EnvelopePlanConfig,
) -> Result<SynthesisPlan> {
    let d = problem.dim_state as f64;
    let m = problem.dim_control as f64;
    let c_sc = semiconcavity_constant(v, &setup.omega_delta)?;
    let grad_sup = sup_grad_norm(v, omega_delta_sample);
    // the gradient-Lipschitz factor is read as the semi-concavity constant
    let k_const = (m * d * c_sc.max(0.0) * constants.b_sup * constants.b_sup
        + m * d * d * constants.b_lip.combined * constants.b_lip.combined * c_sc.max(0.0))
        / problem.beta
        + d * constants.f_lip.value;
    // admissibility of kappa on a decreasing sweep
    kappa.check_exponential_tail(k_const, p, &[1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4])?;

    let sweep_sigmas = crate::certify::sigma_quantities_sweep(setup, problem, eps_sweep, None, &cfg.sigma)?;
    let problem_arc = Arc::new(problem.clone());
    let mut entries = Vec::new();
    for (i, &eps) in eps_sweep.iter().enumerate() {
        // kernel-matched base resolution: the surrogate grid follows the
        // smoothing radius
        let base = resample_for_kernel(v, &setup.omega_delta, eps)?;
        let law = FeedbackLaw::from_mollifier_quadrature(
            problem_arc.clone(),
            Arc::new(base),
            eps,
            Some(cfg.kernel_points),
        )?;
        let s_lp = lp_deviation(&law, reference, omega_delta_sample, p, omega_delta_volume);
        let s_l2p = lp_deviation(&law, reference, omega_delta_sample, 2.0 * p, omega_delta_volume);
        let sig = sweep_sigmas[i];
        let denom = sig.sigma1 + sig.sigma2 * grad_sup / problem.beta;
        let escape_branch = if denom < 1e-14 { f64::INFINITY } else { setup.delta / denom };
        let (kappa_value, tau) = if s_lp <= 0.0 {
            (f64::INFINITY, escape_branch.min(cfg.tau_max))
        } else {
            let k = kappa.eval(s_lp);
            (k, escape_branch.min(k).min(cfg.tau_max))
        };
        let growth = if k_const.abs() < 1e-12 {
            tau
        } else {
            ((k_const * tau).exp_m1()) / k_const
        };
        let predicted = tau.powf((p - 1.0) / p) * problem.beta * growth.powf(1.0 / p) * s_l2p * s_l2p;
        entries.push(PlanEntry {
            param: eps,
            eps_of_lambda: None,
            deviation: s_lp,
            kappa_value,
            tau,
            tau_capped: escape_branch.min(kappa_value) > cfg.tau_max,
            predicted_bound: Some(predicted),
            k_const: Some(k_const),
            sigma1: Some(sig.sigma1),
            sigma2: Some(sig.sigma2),
            law: Some(law),
            notes: vec![],
        });
    }
    Ok(SynthesisPlan {
        pipeline: "semiconcave".into(),
        entries,
        tau_max: cfg.tau_max,
        diagnostics: vec![
            format!("semiconcavity constant = {c_sc}"),
            format!("K = {k_const}"),
            format!("sup |grad V| = {grad_sup}"),
        ],
    })
}

/// Resample a field onto a kernel-matched grid (spacing eps/2, multilinear)
/// covering the fattened working region, so the surrogate resolution follows
/// the smoothing radius. The grid origin carries a fixed fractional offset to
/// keep it incommensurate with typical measurement lattices.
pub fn resample_for_kernel(v: &ScalarField, region: &Region, eps: f64) -> Result<ScalarField> {
    let grid = v.grid();
    let d = grid.dim();
    let (lo, hi) = region.bounding_box();
    let h_target = eps / 2.0;
    let mut lower = vec![0.0; d];
    let mut upper = vec![0.0; d];
    let mut points = vec![0usize; d];
    for a in 0..d {
        lower[a] = (lo[a] - 1.25 * eps).max(grid.lower()[a]) + 0.31 * h_target;
        upper[a] = (hi[a] + 1.25 * eps).min(grid.upper()[a]);
        let span = upper[a] - lower[a];
        if span <= 0.0 {
            return Err(Error::DegenerateRegion("kernel resample region collapsed".into()));
        }
        points[a] = ((span / h_target).ceil() as usize + 1).max(4);
    }
    v.resample(BoxGrid::new(lower, upper, points)?, InterpOrder::Multilinear)
}

// ---------------------------------------------------------------------------
// pipeline: Hoelder value function (envelope + mollify with coupled radii)
// ---------------------------------------------------------------------------

/// Plan for an alpha-Hoelder value function with alpha in (1/2, 1]: the
/// surrogate is rho_eps(lambda) * M_lambda V with eps(lambda) <= lambda^{1/(2-alpha)}
/// and the gradient gap below eta(lambda) in L^{2p}.
#[allow(clippy::too_many_arguments)]
pub fn plan_hoelder(
    problem: &ControlProblem,
    v: &ScalarField,
    setup: &LyapunovSetup,
    lambda_sweep: &[f64],
    kappa: &KappaSchedule,
    eta: &dyn Fn(f64) -> f64,
    p: f64,
    alpha: f64,
    sigma_w: f64,
    omega_delta_sample: &RegionSample,
    omega_delta_volume: f64,
    constants: &ProblemConstants,
    cfg: &EnvelopePlanConfig,
) -> Result<SynthesisPlan> {
    if !(alpha > 0.5 && alpha <= 1.0) {
        return Err(Error::parameter("alpha", "the coupled pipeline needs alpha in (1/2, 1]"));
    }
    if !(sigma_w > 1.0 - alpha && sigma_w <= 1.0) {
        return Err(Error::parameter("sigma_w", "need the grad-w exponent in (1-alpha, 1]"));
    }
    let d = problem.dim_state as f64;
    let m = problem.dim_control as f64;
    let k_of_s = |s: f64| m * d * (d + 1.0) / (problem.beta * s) * constants.b_lip.combined * constants.b_lip.combined
        + d * constants.f_lip.value;
    kappa.check_coupled_tail(k_of_s, eta, p, alpha, &[1e-1, 3e-2, 1e-2, 3e-3, 1e-3])?;

    let gw_mod = ModulusOfContinuity::sample(
        |y| (setup.grad_w)(y),
        omega_delta_sample,
        cfg.modulus_pairs,
        cfg.seed,
    )?;
    let gw_sup = grad_w_sup(setup, omega_delta_sample);
    let problem_arc = Arc::new(problem.clone());
    let mut entries = Vec::new();
    let mut diagnostics = Vec::new();
    for &lambda in lambda_sweep {
        let moreau = moreau_envelope(v, lambda)?;
        let eps_cap = lambda.powf(1.0 / (2.0 - alpha));
        let margin = available_margin(moreau.values.grid(), &setup.omega_delta);
        let eta_val = eta(lambda);
        let mut chosen: Option<(f64, f64)> = None;
        let mut eps = eps_cap.min(margin).max(1e-9);
        for _ in 0..24 {
            if eps < 1e-6 {
                break;
            }
            if inclusion_ok(&moreau, &setup.omega_delta, eps, cfg.inclusion) {
                let gap = gradient_gap_l2p(
                    &moreau.values,
                    eps,
                    omega_delta_sample,
                    omega_delta_volume,
                    p,
                    cfg.kernel_points,
                )?;
                if gap * gap <= eta_val {
                    chosen = Some((eps, gap));
                    break;
                }
            }
            eps *= 0.7;
        }
        let (eps, gap) = match chosen {
            Some(c) => c,
            None => {
                diagnostics.push(format!(
                    "lambda = {lambda} rejected: no epsilon <= {eps_cap} met the inclusion and eta conditions"
                ));
                continue;
            }
        };
        let g_lambda = GLambda {
            moreau: &moreau,
            constants,
            grad_w_sup: gw_sup,
            h_w: &gw_mod,
            beta: problem.beta,
            g: Box::new(|y| (setup.g)(y)),
        };
        let sig = sigma_quantities(setup, problem, eps, Some(&g_lambda), &cfg.sigma)?;
        let grad_m_sup = sup_grad_norm(&moreau.values, omega_delta_sample);
        let sigma1l = sig.sigma1_lambda.unwrap_or(f64::INFINITY);
        let denom = sigma1l + sig.sigma2 * grad_m_sup / problem.beta;
        let escape_branch = if denom < 1e-14 { f64::INFINITY } else { setup.delta / denom };
        let kappa_value = kappa.eval(lambda);
        let tau = escape_branch.min(kappa_value).min(cfg.tau_max);
        let law = FeedbackLaw::from_mollifier_quadrature(
            problem_arc.clone(),
            Arc::new(moreau.values.clone()),
            eps,
            Some(cfg.kernel_points),
        )?;
        let k_l = k_of_s(lambda);
        let growth = if k_l.abs() < 1e-12 { tau } else { ((k_l * tau).exp_m1()) / k_l };
        let defect = crate::regularize::hjb_defect(problem, &moreau, constants, &setup.omega_delta, None)?;
        let predicted = tau * omega_delta_volume.powf(1.0 / p) * defect.max_over_region
            + tau.powf((p - 1.0) / p) * problem.beta * growth.powf(1.0 / p) * gap * gap;
        entries.push(PlanEntry {
            param: lambda,
            eps_of_lambda: Some(eps),
            deviation: gap,
            kappa_value,
            tau,
            tau_capped: escape_branch.min(kappa_value) > cfg.tau_max,
            predicted_bound: Some(predicted),
            k_const: Some(k_l),
            sigma1: Some(sigma1l),
            sigma2: Some(sig.sigma2),
            law: Some(law),
            notes: vec![format!("eta(lambda) = {eta_val}"), format!("sup h_lambda = {}", defect.max_over_region)],
        });
    }
    if entries.is_empty() {
        return Err(Error::PlanRejected {
            param: f64::NAN,
            reason: "every swept lambda was rejected".into(),
        });
    }
    Ok(SynthesisPlan {
        pipeline: "hoelder".into(),
        entries,
        tau_max: cfg.tau_max,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kappa_closed_forms() {
        let log1 = KappaSchedule::Log { a: 1.0 };
        assert_relative_eq!(log1.eval(0.1), 10f64.ln(), epsilon = 1e-12);
        let pow = KappaSchedule::Power { q: 0.5 };
        assert_relative_eq!(pow.eval(0.01), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn kappa_blows_up_and_tail_behaves() {
        // log schedule with a > K/(p+1) passes the exponential tail check
        let k = 4.0;
        let p = 2.0;
        let good = KappaSchedule::Log { a: k / (p + 1.0) * 1.5 };
        assert!(good.check_exponential_tail(k, p, &[1e-1, 1e-2, 1e-3, 1e-4]).is_ok());
        // far-too-small a fails (the product blows up as s -> 0)
        let bad = KappaSchedule::Log { a: k / (p + 1.0) * 0.3 };
        assert!(bad.check_exponential_tail(k, p, &[1e-1, 1e-2, 1e-3, 1e-4]).is_err());
        // p = 1 wipes out the kappa^{(p-1)/p} factor
        let p1 = KappaSchedule::Log { a: k / 2.0 * 1.5 };
        assert!(p1.check_exponential_tail(k, 1.0, &[1e-1, 1e-2, 1e-3, 1e-4]).is_ok());
    }

    #[test]
    fn kappa_side_condition() {
        let log = KappaSchedule::Log { a: 1.0 };
        // max of -s ln s = 1/e; bound below that rejects
        assert!(log.check_linear_side_condition(0.5, &[0.3, 0.36, 0.4]).is_ok());
        assert!(log.check_linear_side_condition(0.3, &[0.36]).is_err());
    }

    #[test]
    fn coupled_tail_with_admissible_power() {
        // alpha = 1: q in (0, 1) admissible with the zero-K problem
        let kappa = KappaSchedule::Power { q: 0.5 };
        let eta = |s: f64| (-1.0 / (s * s)).exp();
        assert!(kappa
            .check_coupled_tail(|_| 0.0, eta, 2.0, 1.0, &[1e-1, 3e-2, 1e-2, 3e-3])
            .is_ok());
        // q above the admissible exponent fails
        let too_fast = KappaSchedule::Power { q: 1.7 };
        assert!(too_fast
            .check_coupled_tail(|_| 0.0, eta, 2.0, 1.0, &[1e-1, 3e-2, 1e-2, 3e-3])
            .is_err());
    }
}
