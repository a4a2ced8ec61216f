//! Moreau envelopes, mollification, and the regularity estimates that make
//! non-smooth value functions usable for feedback synthesis.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{lipschitz_estimate, lipschitz_estimate_vec, matrix_lipschitz_estimate, sup_norm_vec, Estimate,
    MatrixLipEstimate};
use crate::grid::{sym_eig_range, BoxGrid, InterpOrder, ScalarField};
use crate::problem::ControlProblem;
use crate::region::{Region, RegionSample};

/// The compactly supported smooth bump profile exp(-1/(1-s^2)) on |s| < 1,
/// extended by zero.
#[inline]
pub fn bump_profile(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Derivative of the bump profile.
#[inline]
pub fn bump_profile_deriv(s: f64) -> f64 {
    if s.abs() < 1.0 {
        let d = 1.0 - s * s;
        bump_profile(s) * (-2.0 * s / (d * d))
    } else {
        0.0
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and its derivative.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Radial bump kernel of radius `epsilon`, discretized by a tensor
/// Gauss-Legendre rule and normalized to unit mass.
#[derive(Debug, Clone)]
pub struct BumpKernel {
    pub dim: usize,
    pub epsilon: f64,
    pub points_per_axis: usize,
    /// quadrature offsets s with kernel support (|s| < epsilon)
    offsets: Vec<Vec<f64>>,
    /// normalized kernel weights, sum exactly 1 after normalization
    weights: Vec<f64>,
    /// weights for the convolution gradient: grad rho_eps at the offsets
    grad_weights: Vec<Vec<f64>>,
}

impl BumpKernel {
    pub fn new(dim: usize, epsilon: f64, points_per_axis: usize) -> Result<BumpKernel> {
        if !(epsilon > 0.0) {
            return Err(Error::parameter("epsilon", "kernel radius must be positive"));
        }
        let (gl_nodes, gl_weights) = gauss_legendre(points_per_axis);
        let mut offsets = Vec::new();
        let mut raw_weights = Vec::new();
        let mut raw_grad = Vec::new();
        let mut idx = vec![0usize; dim];
        loop {
            let s: Vec<f64> = idx.iter().map(|&i| gl_nodes[i] * epsilon).collect();
            let glw: f64 = idx.iter().map(|&i| gl_weights[i] * epsilon).product();
            let r = s.iter().map(|v| v * v).sum::<f64>().sqrt() / epsilon;
            let rho = bump_profile(r);
            if rho > 0.0 {
                offsets.push(s.clone());
                raw_weights.push(glw * rho);
                // d/ds of rho(|s|/eps): profile'(r) * s / (|s| * eps)
                let dr = bump_profile_deriv(r);
                let smag = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                let g: Vec<f64> = if smag > 1e-300 {
                    s.iter().map(|&si| glw * dr * si / (smag * epsilon)).collect()
                } else {
                    vec![0.0; dim]
                };
                raw_grad.push(g);
            }
            // odometer
            let mut a = 0;
            loop {
                if a == dim {
                    break;
                }
                idx[a] += 1;
                if idx[a] < points_per_axis {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == dim {
                break;
            }
        }
        let mass: f64 = raw_weights.iter().sum();
        if mass <= 0.0 {
            return Err(Error::parameter("epsilon", "kernel quadrature collapsed"));
        }
        let weights: Vec<f64> = raw_weights.iter().map(|w| w / mass).collect();
        let mut grad_weights: Vec<Vec<f64>> = raw_grad
            .iter()
            .map(|g| g.iter().map(|v| v / mass).collect())
            .collect();
        // First-moment consistency: the discrete weights must satisfy the
        // integration-by-parts identity sum_k gw_k[a] s_k[a] = -1, so the
        // convolution gradient reproduces affine gradients exactly.
        for a in 0..dim {
            let m: f64 = grad_weights.iter().zip(&offsets).map(|(g, s)| g[a] * s[a]).sum();
            if m.abs() > 1e-300 {
                let scale = -1.0 / m;
                for g in grad_weights.iter_mut() {
                    g[a] *= scale;
                }
            }
        }
        Ok(BumpKernel {
            dim,
            epsilon,
            points_per_axis,
            offsets,
            weights,
            grad_weights,
        })
    }

    /// Normalized kernel mass (1 by construction; recomputed for checks).
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Second moment of the normalized kernel: integral of |s|^2 rho_eps(s).
    pub fn second_moment(&self) -> f64 {
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * s.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// (rho_eps * phi)(x) with phi read through the field's interpolation.
    pub fn convolve(&self, field: &ScalarField, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        let mut y = vec![0.0; self.dim];
        for (s, w) in self.offsets.iter().zip(&self.weights) {
            for a in 0..self.dim {
                y[a] = x[a] - s[a];
            }
            acc += w * field.eval(&y)?;
        }
        Ok(acc)
    }

    /// Gradient of the convolution via the derivative-of-kernel identity:
    /// grad(rho_eps * phi)(x) = integral of grad rho_eps(s) phi(x - s) ds.
    pub fn convolve_gradient(&self, field: &ScalarField, x: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut y = vec![0.0; self.dim];
        for (s, gw) in self.offsets.iter().zip(&self.grad_weights) {
            for a in 0..self.dim {
                y[a] = x[a] - s[a];
            }
            let v = field.eval(&y)?;
            for a in 0..self.dim {
                acc[a] += gw[a] * v;
            }
        }
        Ok(acc)
    }
}

/// Moreau envelope of a grid field: nodal values, per-node proximal argmin,
/// and the inner domain bookkeeping.
#[derive(Debug, Clone)]
pub struct MoreauField {
    pub lambda: f64,
    pub base: ScalarField,
    pub values: ScalarField,
    /// proximal argmin per node (after continuous refinement)
    pub argmin: Vec<Vec<f64>>,
    /// |x - argmin(x)| per node, multilinear field
    pub displacement: ScalarField,
    pub base_sup_norm: f64,
    pub search_radius: f64,
}

/// Moreau envelope by nodal grid search within the worst-case proximal radius
/// followed by one damped Newton refinement on the interpolated objective;
/// ties broken by smallest displacement.
pub fn moreau_envelope(phi: &ScalarField, lambda: f64) -> Result<MoreauField> {
    if !(lambda > 0.0) {
        return Err(Error::parameter("lambda", "must be positive"));
    }
    let grid = phi.grid().clone();
    let d = grid.dim();
    let sup = phi.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let radius = (2.0 * (lambda * sup).sqrt()).min(grid.diameter()).max(grid.max_spacing());
    // The refinement objective is evaluated on a multilinear view: exact on
    // piecewise-linear data, so the refined value never undershoots the true
    // envelope by more than the O(h^2) interpolation bias.
    let linear_view = phi.clone().with_interp(InterpOrder::Multilinear);

    let results: Vec<(f64, Vec<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let x = grid.node_flat(k);
            // index window per axis covering the search ball
            let mut lo = vec![0usize; d];
            let mut hi = vec![0usize; d];
            for a in 0..d {
                let h = grid.spacing()[a];
                let lo_f = ((x[a] - radius - grid.lower()[a]) / h).floor().max(0.0);
                let hi_f = ((x[a] + radius - grid.lower()[a]) / h)
                    .ceil()
                    .min((grid.points()[a] - 1) as f64);
                lo[a] = lo_f as usize;
                hi[a] = hi_f as usize;
            }
            let mut best_val = f64::INFINITY;
            let mut best_disp2 = f64::INFINITY;
            let mut best_node = k;
            let mut idx = lo.clone();
            loop {
                let flat = grid.flat_index(&idx);
                let y = grid.node(&idx);
                let disp2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                if disp2 <= radius * radius + 1e-12 {
                    let obj = phi.node_value(flat) + disp2 / (2.0 * lambda);
                    if obj < best_val || (obj == best_val && disp2 < best_disp2) {
                        best_val = obj;
                        best_disp2 = disp2;
                        best_node = flat;
                    }
                }
                // odometer over the window
                let mut a = 0;
                loop {
                    if a == d {
                        break;
                    }
                    idx[a] += 1;
                    if idx[a] <= hi[a] {
                        break;
                    }
                    idx[a] = lo[a];
                    a += 1;
                }
                if a == d {
                    break;
                }
            }
            let y0 = grid.node_flat(best_node);
            let (val, y) = refine_prox(&linear_view, &x, &y0, best_val, lambda);
            (val, y)
        })
        .collect();

    let mut values = Vec::with_capacity(grid.len());
    let mut argmin = Vec::with_capacity(grid.len());
    let mut disp = Vec::with_capacity(grid.len());
    for (k, (v, y)) in results.into_iter().enumerate() {
        let x = grid.node_flat(k);
        // envelope never exceeds the function itself
        let v = v.min(phi.node_value(k));
        let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        values.push(v);
        disp.push(d2.sqrt());
        argmin.push(y);
    }
    Ok(MoreauField {
        lambda,
        base: phi.clone(),
        values: ScalarField::new(grid.clone(), values, InterpOrder::Cubic)?,
        argmin,
        displacement: ScalarField::new(grid, disp, InterpOrder::Multilinear)?,
        base_sup_norm: sup,
        search_radius: radius,
    })
}

/// One damped Newton step on psi(y) = phi(y) + |x-y|^2 / (2 lambda) over the
/// interpolated field, started from the nodal argmin.
fn refine_prox(phi: &ScalarField, x: &[f64], y0: &[f64], val0: f64, lambda: f64) -> (f64, Vec<f64>) {
    let d = x.len();
    let objective = |y: &[f64]| -> Option<f64> {
        let base = phi.eval(y).ok()?;
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        Some(base + d2 / (2.0 * lambda))
    };
    let grad_phi = match phi.gradient(y0) {
        Ok(g) => g,
        Err(_) => return (val0, y0.to_vec()),
    };
    // FD Hessian of the interpolant around y0.
    let delta = 0.25 * phi.grid().max_spacing();
    let mut hess = vec![0.0; d * d];
    let mut yp = y0.to_vec();
    let mut ym = y0.to_vec();
    for b in 0..d {
        yp[b] += delta;
        ym[b] -= delta;
        let (gp, gm) = match (phi.gradient(&yp), phi.gradient(&ym)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return (val0, y0.to_vec()),
        };
        for a in 0..d {
            hess[a * d + b] = (gp[a] - gm[a]) / (2.0 * delta);
        }
        yp[b] = y0[b];
        ym[b] = y0[b];
    }
    // symmetrize and add the prox curvature
    for a in 0..d {
        for b in (a + 1)..d {
            let m = 0.5 * (hess[a * d + b] + hess[b * d + a]);
            hess[a * d + b] = m;
            hess[b * d + a] = m;
        }
        hess[a * d + a] += 1.0 / lambda;
    }
    let mut rhs: Vec<f64> = (0..d).map(|a| -(grad_phi[a] + (y0[a] - x[a]) / lambda)).collect();
    if !solve_in_place(&mut hess, &mut rhs, d) {
        return (val0, y0.to_vec());
    }
    let mut best = (val0, y0.to_vec());
    let mut scale = 1.0;
    for _ in 0..5 {
        let y: Vec<f64> = (0..d).map(|a| y0[a] + scale * rhs[a]).collect();
        if let Some(v) = objective(&y) {
            if v < best.0 {
                best = (v, y);
                break;
            }
        }
        scale *= 0.5;
    }
    best
}

/// Gaussian elimination with partial pivoting; returns false if singular.
/// `a` is d x d row-major and is destroyed; solution left in `b`.
pub fn solve_in_place(a: &mut [f64], b: &mut [f64], d: usize) -> bool {
    for col in 0..d {
        let mut piv = col;
        for r in (col + 1)..d {
            if a[r * d + col].abs() > a[piv * d + col].abs() {
                piv = r;
            }
        }
        if a[piv * d + col].abs() < 1e-300 {
            return false;
        }
        if piv != col {
            for c in 0..d {
                a.swap(col * d + c, piv * d + c);
            }
            b.swap(col, piv);
        }
        let diag = a[col * d + col];
        for r in (col + 1)..d {
            let f = a[r * d + col] / diag;
            if f != 0.0 {
                for c in col..d {
                    a[r * d + c] -= f * a[col * d + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    for col in (0..d).rev() {
        let mut acc = b[col];
        for c in (col + 1)..d {
            acc -= a[col * d + c] * b[c];
        }
        b[col] = acc / a[col * d + col];
    }
    true
}

impl MoreauField {
    /// Margin of the inner domain: 2 sqrt(lambda |phi|_inf).
    pub fn inner_margin(&self) -> f64 {
        2.0 * (self.lambda * self.base_sup_norm).sqrt()
    }

    /// Box region on which the envelope's guarantees hold.
    pub fn inner_domain(&self) -> Result<Region> {
        inner_domain_of(self.base.grid(), self.base_sup_norm, self.lambda)
    }

    /// Envelope value at an arbitrary point (interpolated).
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.values.eval(x)
    }

    /// Conservative displacement at an arbitrary point: max over the
    /// surrounding cell corners of the nodal displacement.
    pub fn displacement_at(&self, x: &[f64]) -> Result<f64> {
        let grid = self.displacement.grid();
        let d = grid.dim();
        if !grid.contains(x) {
            return Err(Error::out_of_domain("moreau displacement", x));
        }
        let mut corner_lo = vec![0usize; d];
        for a in 0..d {
            let h = grid.spacing()[a];
            let r = ((x[a] - grid.lower()[a]) / h).floor().max(0.0);
            corner_lo[a] = (r as usize).min(grid.points()[a] - 2);
        }
        let mut best: f64 = 0.0;
        for c in 0..(1usize << d) {
            let idx: Vec<usize> = (0..d).map(|a| corner_lo[a] + ((c >> a) & 1)).collect();
            best = best.max(self.displacement.node_value(grid.flat_index(&idx)));
        }
        Ok(best)
    }

    /// Check the proximal displacement bound (2 C lambda)^(1/(2-alpha)) for a
    /// (C, alpha) Hoelder-certified base over the inner domain.
    pub fn verify_displacement_bound(&self, c: f64, alpha: f64) -> Result<DisplacementCheck> {
        let bound = moreau_displacement_bound(c, alpha, self.lambda)?;
        let region = self.inner_domain()?;
        let grid = self.base.grid();
        let mut max_disp: f64 = 0.0;
        let mut checked = 0usize;
        for (k, x) in grid.nodes() {
            if region.contains(&x) {
                max_disp = max_disp.max(self.displacement.node_value(k));
                checked += 1;
            }
        }
        Ok(DisplacementCheck {
            bound,
            max_displacement: max_disp,
            nodes_checked: checked,
            ok: max_disp <= bound + 1e-9,
        })
    }

    /// Check |M phi - phi| <= gap bound over the inner domain.
    pub fn verify_value_gap(&self, c: f64, alpha: f64) -> Result<DisplacementCheck> {
        let bound = moreau_value_gap_bound(c, alpha, self.lambda)?;
        let region = self.inner_domain()?;
        let grid = self.base.grid();
        let mut max_gap: f64 = 0.0;
        let mut checked = 0usize;
        for (k, x) in grid.nodes() {
            if region.contains(&x) {
                max_gap = max_gap.max((self.base.node_value(k) - self.values.node_value(k)).abs());
                checked += 1;
            }
        }
        Ok(DisplacementCheck {
            bound,
            max_displacement: max_gap,
            nodes_checked: checked,
            ok: max_gap <= bound + 1e-9,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DisplacementCheck {
    pub bound: f64,
    pub max_displacement: f64,
    pub nodes_checked: usize,
    pub ok: bool,
}

fn inner_domain_of(grid: &BoxGrid, sup: f64, lambda: f64) -> Result<Region> {
    let margin = 2.0 * (lambda * sup).sqrt();
    let d = grid.dim();
    let lower: Vec<f64> = (0..d).map(|a| grid.lower()[a] + margin).collect();
    let upper: Vec<f64> = (0..d).map(|a| grid.upper()[a] - margin).collect();
    for a in 0..d {
        if !(lower[a] < upper[a]) {
            return Err(Error::DegenerateRegion(format!(
                "inner domain empty: margin {margin} exceeds half-width on axis {a}"
            )));
        }
    }
    Ok(Region::Box { lower, upper })
}

/// Inner domain of the envelope: the grid box shrunk by 2 sqrt(lambda |phi|_inf).
pub fn inner_domain(phi: &ScalarField, lambda: f64) -> Result<Region> {
    let sup = phi.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    inner_domain_of(phi.grid(), sup, lambda)
}

/// Worst-case proximal displacement (2 C lambda)^(1/(2-alpha)) for a
/// (C, alpha)-Hoelder function.
pub fn moreau_displacement_bound(c: f64, alpha: f64, lambda: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::parameter("alpha", "need alpha in (0, 1]"));
    }
    if !(c > 0.0) {
        return Err(Error::parameter("C", "need C > 0"));
    }
    Ok((2.0 * c * lambda).powf(1.0 / (2.0 - alpha)))
}

/// Worst-case envelope gap C^(2/(2-alpha)) 2^(alpha/(2-alpha)) lambda^(alpha/(2-alpha)).
pub fn moreau_value_gap_bound(c: f64, alpha: f64, lambda: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::parameter("alpha", "need alpha in (0, 1]"));
    }
    if !(c > 0.0) {
        return Err(Error::parameter("C", "need C > 0"));
    }
    let e = 2.0 - alpha;
    Ok(c.powf(2.0 / e) * 2f64.powf(alpha / e) * lambda.powf(alpha / e))
}

/// Mollified field: convolution with the normalized bump kernel, valid on the
/// epsilon-shrunk box.
#[derive(Debug, Clone)]
pub struct MollifiedField {
    pub epsilon: f64,
    pub field: ScalarField,
    pub valid_lower: Vec<f64>,
    pub valid_upper: Vec<f64>,
    pub kernel_points: usize,
}

impl MollifiedField {
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..x.len()).all(|a| x[a] >= self.valid_lower[a] - 1e-12 && x[a] <= self.valid_upper[a] + 1e-12)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::out_of_domain("mollified field", x));
        }
        self.field.eval(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.contains(x) {
            return Err(Error::out_of_domain("mollified field", x));
        }
        self.field.gradient(x)
    }
}

pub const DEFAULT_KERNEL_POINTS: usize = 20;

/// Convolve a grid field with the normalized radial bump of radius `epsilon`.
/// Requires the kernel to be resolvable: epsilon >= 2 max spacing.
pub fn mollify(phi: &ScalarField, epsilon: f64) -> Result<MollifiedField> {
    mollify_with(phi, epsilon, DEFAULT_KERNEL_POINTS)
}

pub fn mollify_with(phi: &ScalarField, epsilon: f64, kernel_points: usize) -> Result<MollifiedField> {
    let h = phi.grid().max_spacing();
    if epsilon < 2.0 * h {
        return Err(Error::parameter(
            "epsilon",
            format!("under-resolved kernel: epsilon {epsilon} < required minimum {}", 2.0 * h),
        ));
    }
    let kernel = BumpKernel::new(phi.grid().dim(), epsilon, kernel_points)?;
    let grid = phi.grid().clone();
    let d = grid.dim();
    let valid_lower: Vec<f64> = (0..d).map(|a| grid.lower()[a] + epsilon).collect();
    let valid_upper: Vec<f64> = (0..d).map(|a| grid.upper()[a] - epsilon).collect();
    for a in 0..d {
        if !(valid_lower[a] < valid_upper[a]) {
            return Err(Error::DegenerateRegion(
                "mollification radius leaves no valid region".into(),
            ));
        }
    }
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let x = grid.node_flat(k);
            let inside = (0..d).all(|a| x[a] >= valid_lower[a] - 1e-12 && x[a] <= valid_upper[a] + 1e-12);
            if inside {
                kernel.convolve(phi, &x).unwrap_or_else(|_| phi.node_value(k))
            } else {
                phi.node_value(k)
            }
        })
        .collect();
    Ok(MollifiedField {
        epsilon,
        field: ScalarField::new(grid, values, InterpOrder::Cubic)?,
        valid_lower,
        valid_upper,
        kernel_points,
    })
}

/// Sampled semi-concavity constant: max eigenvalue of the finite-difference
/// Hessian over region nodes with a one-layer stencil margin.
pub fn semiconcavity_constant(field: &ScalarField, region: &Region) -> Result<f64> {
    let grid = field.grid();
    let mut best = f64::NEG_INFINITY;
    let d = grid.dim();
    for (k, x) in grid.nodes() {
        if !region.contains(&x) {
            continue;
        }
        let multi = grid.multi_index(k);
        if (0..d).any(|a| multi[a] == 0 || multi[a] + 1 >= grid.points()[a]) {
            continue;
        }
        let hess = field.node_hessian(k)?;
        let (_, hi) = sym_eig_range(&hess, d);
        best = best.max(hi);
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::DegenerateRegion(
            "region too thin for the Hessian stencil".into(),
        ));
    }
    Ok(best)
}

/// Sampled Lipschitz/sup data of a control problem over a region, recorded
/// with the sample counts that produced them.
#[derive(Debug, Clone)]
pub struct ProblemConstants {
    pub ell_lip: Estimate,
    pub f_lip: Estimate,
    pub f_sup: Estimate,
    pub b_lip: MatrixLipEstimate,
    pub b_sup: f64,
}

impl ProblemConstants {
    pub fn sample(problem: &ControlProblem, region: &RegionSample, pairs: usize, seed: u64) -> Result<Self> {
        let d = problem.dim_state;
        let m = problem.dim_control;
        let ell_lip = lipschitz_estimate(|y| problem.state_cost(y), region, pairs, seed)?;
        let fvec = |y: &[f64]| {
            let mut out = vec![0.0; d];
            problem.drift(y, &mut out);
            out
        };
        let f_lip = lipschitz_estimate_vec(fvec, region, pairs, seed.wrapping_add(1))?;
        let f_sup = sup_norm_vec(fvec, region)?;
        let bmatf = |y: &[f64]| {
            let mut out = vec![0.0; d * m];
            problem.input_map(y, &mut out);
            out
        };
        let b_lip = matrix_lipschitz_estimate(bmatf, d, m, region, pairs, seed.wrapping_add(2))?;
        let b_sup = region
            .points
            .iter()
            .map(|y| {
                let b = bmatf(y);
                // spectral norm upper bound via Frobenius
                b.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max);
        Ok(ProblemConstants {
            ell_lip,
            f_lip,
            f_sup,
            b_lip,
            b_sup,
        })
    }
}

/// Report of the perturbed-equation defect of a Moreau envelope.
#[derive(Debug, Clone)]
pub struct DefectReport {
    /// pointwise defect field h_lambda on the envelope grid
    pub field: ScalarField,
    /// max of the defect over the requested region
    pub max_over_region: f64,
    /// worst-case Hoelder-rate bound, when (C, alpha) was supplied
    pub holder_bound: Option<f64>,
}

/// Pointwise defect h_lambda of the envelope as a super-solution of the
/// perturbed closed-form equation, built from the measured per-node proximal
/// displacement and the sampled data constants:
///
///   h(x) = ( L_ell + L_B^2 r^2 / (beta lambda^2) + L_f r / lambda ) r,
///   r = |x - argmin(x)|.
pub fn hjb_defect(
    problem: &ControlProblem,
    moreau: &MoreauField,
    constants: &ProblemConstants,
    region: &Region,
    holder: Option<(f64, f64)>,
) -> Result<DefectReport> {
    let grid = moreau.values.grid().clone();
    let lambda = moreau.lambda;
    let beta = problem.beta;
    let lb = constants.b_lip.combined;
    let lf = constants.f_lip.value;
    let ll = constants.ell_lip.value;
    let mut values = Vec::with_capacity(grid.len());
    let mut max_over_region = f64::NEG_INFINITY;
    let mut any_in_region = false;
    for (k, x) in grid.nodes() {
        let r = moreau.displacement.node_value(k);
        let h = (ll + lb * lb * r * r / (beta * lambda * lambda) + lf * r / lambda) * r;
        values.push(h);
        if region.contains(&x) {
            any_in_region = true;
            max_over_region = max_over_region.max(h);
        }
    }
    if !any_in_region {
        return Err(Error::DegenerateRegion("defect region contains no node".into()));
    }
    let holder_bound = match holder {
        Some((c, alpha)) => {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::parameter("alpha", "need alpha in (0, 1]"));
            }
            let e = 2.0 - alpha;
            Some(
                c * (ll * lambda.powf(1.0 / e)
                    + lb * lb / beta * lambda.powf((2.0 * alpha - 1.0) / e)
                    + lf * lambda.powf(alpha / e)),
            )
        }
        None => None,
    };
    Ok(DefectReport {
        field: ScalarField::new(grid, values, InterpOrder::Multilinear)?,
        max_over_region,
        holder_bound,
    })
}

/// The stability-equation perturbation g_lambda for the Lyapunov escape
/// estimates, evaluated at a point from the measured displacement:
///
///   g_l(x) = g(x) + h_w(r) ( |f|_inf + r |B|_inf^2 / (beta lambda) )
///            + L_f |grad w|_inf r + 2 r^2 |B|_Lip^2 |grad w|_inf / (beta lambda).
pub struct GLambda<'a> {
    pub moreau: &'a MoreauField,
    pub constants: &'a ProblemConstants,
    pub grad_w_sup: f64,
    pub h_w: &'a crate::estimate::ModulusOfContinuity,
    pub beta: f64,
    pub g: Box<dyn Fn(&[f64]) -> f64 + Send + Sync + 'a>,
}

impl<'a> GLambda<'a> {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let r = self.moreau.displacement_at(x)?;
        let lambda = self.moreau.lambda;
        let c = self.constants;
        let hw = self.h_w.eval(r);
        Ok((self.g)(x)
            + hw * (c.f_sup.value + r * c.b_sup * c.b_sup / (self.beta * lambda))
            + c.f_lip.value * self.grad_w_sup * r
            + 2.0 * r * r * c.b_lip.combined * c.b_lip.combined * self.grad_w_sup / (self.beta * lambda))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoxGrid;
    use approx::assert_relative_eq;

    fn field_1d(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> ScalarField {
        let grid = BoxGrid::new(vec![a], vec![b], vec![n]).unwrap();
        ScalarField::from_fn(grid, InterpOrder::Cubic, |x| f(x[0])).unwrap()
    }

    #[test]
    fn kernel_mass_is_one_after_normalization() {
        for d in 1..=2 {
            let k = BumpKernel::new(d, 0.3, 20).unwrap();
            assert!((k.mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_prox_in_2d() {
        // M_1(0.5 |x|^2)(x) = |x|^2 / 4 at x = (2, 0)
        let grid = BoxGrid::cube(-4.0, 4.0, 81, 2).unwrap();
        let phi = ScalarField::from_fn(grid, InterpOrder::Cubic, |x| {
            0.5 * (x[0] * x[0] + x[1] * x[1])
        })
        .unwrap();
        let m = moreau_envelope(&phi, 1.0).unwrap();
        let k = m.values.grid().flat_index(&[60, 40]); // node (2, 0)
        assert_relative_eq!(m.values.node_value(k), 1.0, epsilon = 1e-7);
        // argmin should be x / (1 + lambda) = (1, 0)
        let y = &m.argmin[k];
        assert!((y[0] - 1.0).abs() < 1e-4 && y[1].abs() < 1e-4);
    }

    #[test]
    fn constant_envelope_is_identity() {
        let phi = field_1d(-1.0, 1.0, 51, |_| 2.5);
        let m = moreau_envelope(&phi, 0.3).unwrap();
        for k in 0..phi.grid().len() {
            assert_relative_eq!(m.values.node_value(k), 2.5, epsilon = 1e-12);
            assert!(m.displacement.node_value(k) < 1e-9);
        }
    }

    #[test]
    fn huber_envelope_of_abs() {
        // M_lambda(|x|)(x) = x^2/(2 lambda) for |x| <= lambda, |x| - lambda/2 beyond
        let phi = field_1d(-2.0, 2.0, 201, |x| x.abs());
        let lambda = 0.5;
        let m = moreau_envelope(&phi, lambda).unwrap();
        let grid = m.values.grid();
        let h = grid.spacing()[0];
        for (k, x) in grid.nodes() {
            if x[0].abs() > 1.4 {
                continue; // stay inside the inner domain
            }
            let exact = if x[0].abs() <= lambda {
                x[0] * x[0] / (2.0 * lambda)
            } else {
                x[0].abs() - lambda / 2.0
            };
            assert!(
                (m.values.node_value(k) - exact).abs() <= (h * h).max(1e-8),
                "x = {}, got {}, want {}",
                x[0],
                m.values.node_value(k),
                exact
            );
        }
        // spot value from the envelope of |x| at x = 0.25
        let v = m.eval(&[0.25]).unwrap();
        assert!((v - 0.0625).abs() < 1e-4);
    }

    #[test]
    fn envelope_below_base_and_monotone_in_lambda() {
        let phi = field_1d(-2.0, 2.0, 101, |x| (3.0 * x).sin().abs() + 0.2 * x * x);
        let h = phi.grid().spacing()[0];
        let m1 = moreau_envelope(&phi, 0.4).unwrap();
        let m2 = moreau_envelope(&phi, 0.1).unwrap();
        for k in 0..phi.grid().len() {
            assert!(m1.values.node_value(k) <= phi.node_value(k) + 1e-12);
            // envelope grows toward phi as lambda decreases, up to the
            // O(h^2) bias of the interpolated refinement
            assert!(m2.values.node_value(k) >= m1.values.node_value(k) - h * h);
        }
    }

    #[test]
    fn displacement_bound_formulas() {
        assert_relative_eq!(moreau_displacement_bound(1.0, 1.0, 0.5).unwrap(), 1.0);
        assert_relative_eq!(moreau_displacement_bound(1.0, 0.5, 0.5).unwrap(), 1.0);
        assert!(moreau_displacement_bound(1.0, 1.5, 0.5).is_err());
        assert_relative_eq!(moreau_value_gap_bound(1.0, 1.0, 0.5).unwrap(), 1.0);
        // gap bound decreases monotonically with lambda
        let mut last = f64::INFINITY;
        for &l in &[0.5, 0.2, 0.1, 0.01] {
            let b = moreau_value_gap_bound(1.0, 1.0, l).unwrap();
            assert!(b < last);
            last = b;
        }
    }

    #[test]
    fn displacement_bound_verified_on_sqrt_abs() {
        // |x|^(1/2) is (1, 1/2)-Hoelder; brute-force dense argmin respects
        // the (2 C lambda)^(1/(2-alpha)) radius.
        let phi = field_1d(-1.0, 1.0, 401, |x| x.abs().sqrt());
        let m = moreau_envelope(&phi, 0.1).unwrap();
        let chk = m.verify_displacement_bound(1.0, 0.5).unwrap();
        assert!(chk.ok, "max {} > bound {}", chk.max_displacement, chk.bound);
        // independent dense-scan oracle at a specific x
        let x = 0.3;
        let mut best = f64::INFINITY;
        let mut besty = 0.0;
        for i in 0..20001 {
            let y = -1.0 + 2.0 * i as f64 / 20000.0;
            let v = y.abs().sqrt() + (x - y) * (x - y) / 0.2;
            if v < best {
                best = v;
                besty = y;
            }
        }
        assert!((x - besty).abs() <= chk.bound + 1e-6);
    }

    #[test]
    fn huber_value_gap() {
        // max |M phi - phi| = lambda/2 for phi = |x|, attained off the kink
        let phi = field_1d(-4.0, 4.0, 401, |x| x.abs());
        let m = moreau_envelope(&phi, 0.5).unwrap();
        let chk = m.verify_value_gap(1.0, 1.0).unwrap();
        assert!(chk.ok);
        assert!((chk.max_displacement - 0.25).abs() < 1e-3, "gap {}", chk.max_displacement);
        assert!(chk.bound >= 0.999);
    }

    #[test]
    fn inner_domain_formula() {
        let grid = BoxGrid::cube(-1.0, 1.0, 21, 2).unwrap();
        let phi = ScalarField::from_fn(grid, InterpOrder::Multilinear, |_| 1.0).unwrap();
        match inner_domain(&phi, 0.01).unwrap() {
            Region::Box { lower, upper } => {
                assert_relative_eq!(lower[0], -0.8, epsilon = 1e-12);
                assert_relative_eq!(upper[0], 0.8, epsilon = 1e-12);
            }
            _ => panic!(),
        }
        // |phi|_inf = 4, lambda = 0.04 -> margin 0.8
        let grid = BoxGrid::cube(-1.0, 1.0, 21, 2).unwrap();
        let phi4 = ScalarField::from_fn(grid, InterpOrder::Multilinear, |_| 4.0).unwrap();
        match inner_domain(&phi4, 0.04).unwrap() {
            Region::Box { lower, upper } => {
                assert_relative_eq!(lower[0], -0.2, epsilon = 1e-12);
                assert_relative_eq!(upper[1], 0.2, epsilon = 1e-12);
            }
            _ => panic!(),
        }
        // shrink exceeding the half-width is an error
        let grid = BoxGrid::cube(-1.0, 1.0, 21, 2).unwrap();
        let big = ScalarField::from_fn(grid, InterpOrder::Multilinear, |_| 100.0).unwrap();
        assert!(inner_domain(&big, 0.04).is_err());
    }

    #[test]
    fn mollify_preserves_affine_and_constant() {
        let grid = BoxGrid::cube(-1.0, 1.0, 41, 2).unwrap();
        let aff = ScalarField::from_fn(grid.clone(), InterpOrder::Multilinear, |x| 2.0 * x[0] - x[1] + 0.5).unwrap();
        let m = mollify(&aff, 0.2).unwrap();
        assert!((m.eval(&[0.1, -0.2]).unwrap() - (0.2 + 0.2 + 0.5)).abs() < 1e-10);
        let cst = ScalarField::from_fn(grid, InterpOrder::Multilinear, |_| 1.75).unwrap();
        let mc = mollify(&cst, 0.2).unwrap();
        assert!((mc.eval(&[0.3, 0.3]).unwrap() - 1.75).abs() < 1e-12);
    }

    #[test]
    fn mollify_shifts_quadratic_by_half_second_moment() {
        let phi = field_1d(-2.0, 2.0, 201, |x| 0.5 * x * x);
        let eps = 0.25;
        let m = mollify(&phi, eps).unwrap();
        // oracle: independent dense Simpson quadrature of the kernel moment
        let n = 40001;
        let mut mass = 0.0;
        let mut mom2 = 0.0;
        for i in 0..n {
            let s = -eps + 2.0 * eps * i as f64 / (n - 1) as f64;
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let rho = bump_profile(s / eps);
            mass += w * rho;
            mom2 += w * rho * s * s;
        }
        let m2 = mom2 / mass;
        let got = m.eval(&[0.7]).unwrap();
        assert!(
            (got - (0.5 * 0.49 + 0.5 * m2)).abs() < 1e-6,
            "got {}, expected {}",
            got,
            0.5 * 0.49 + 0.5 * m2
        );
    }

    #[test]
    fn mollify_is_linear() {
        let f = field_1d(-1.0, 1.0, 101, |x| (2.0 * x).sin());
        let g = field_1d(-1.0, 1.0, 101, |x| x * x - 0.3);
        let sum = ScalarField::new(
            f.grid().clone(),
            f.values().iter().zip(g.values()).map(|(a, b)| 2.0 * a + b).collect(),
            InterpOrder::Cubic,
        )
        .unwrap();
        let (mf, mg, ms) = (mollify(&f, 0.1).unwrap(), mollify(&g, 0.1).unwrap(), mollify(&sum, 0.1).unwrap());
        let x = [0.22];
        assert!(
            (ms.eval(&x).unwrap() - 2.0 * mf.eval(&x).unwrap() - mg.eval(&x).unwrap()).abs() < 1e-10
        );
    }

    #[test]
    fn mollify_rejects_unresolved_kernel() {
        let phi = field_1d(-1.0, 1.0, 11, |x| x);
        assert!(mollify(&phi, 0.1).is_err());
    }

    #[test]
    fn semiconcavity_of_quadratics() {
        let grid = BoxGrid::cube(-1.0, 1.0, 41, 2).unwrap();
        let f = ScalarField::from_fn(grid.clone(), InterpOrder::Multilinear, |x| {
            1.5 * (x[0] * x[0] + x[1] * x[1]) / 2.0
        })
        .unwrap();
        let region = Region::Box {
            lower: vec![-0.9, -0.9],
            upper: vec![0.9, 0.9],
        };
        let c = semiconcavity_constant(&f, &region).unwrap();
        assert_relative_eq!(c, 1.5, epsilon = 1e-8);
        let aff = ScalarField::from_fn(grid, InterpOrder::Multilinear, |x| x[0] - x[1]).unwrap();
        let c0 = semiconcavity_constant(&aff, &region).unwrap();
        assert!(c0.abs() < 1e-9);
    }

    #[test]
    fn moreau_semiconcavity_bounded_by_inverse_lambda() {
        let phi = field_1d(-2.0, 2.0, 201, |x| x.abs());
        for &lambda in &[1.0, 0.5, 0.1] {
            let m = moreau_envelope(&phi, lambda).unwrap();
            let region = Region::Box {
                lower: vec![-1.2],
                upper: vec![1.2],
            };
            let c = semiconcavity_constant(&m.values, &region).unwrap();
            let h = phi.grid().spacing()[0];
            let slack = 4.0 * h / (lambda * lambda);
            assert!(c <= 1.0 / lambda + slack, "lambda {lambda}: c = {c}");
        }
    }

    #[test]
    fn mollification_preserves_semiconcavity() {
        let phi = field_1d(-2.0, 2.0, 201, |x| x.abs());
        let m = moreau_envelope(&phi, 0.5).unwrap();
        let mm = mollify(&m.values, 0.1).unwrap();
        let inner = Region::Box {
            lower: vec![-1.0],
            upper: vec![1.0],
        };
        let c_before = semiconcavity_constant(&m.values, &inner).unwrap();
        let c_after = semiconcavity_constant(&mm.field, &inner).unwrap();
        let h = phi.grid().spacing()[0];
        assert!(c_after <= c_before + 40.0 * h, "{c_after} vs {c_before}");
    }
}
