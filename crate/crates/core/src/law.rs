//! State-to-control maps: analytic laws and laws derived from value-function
//! surrogates via u = -(1/beta) B(y)^T grad v(y).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{InterpOrder, ScalarField};
use crate::problem::ControlProblem;
use crate::regularize::{BumpKernel, MollifiedField, DEFAULT_KERNEL_POINTS};

pub type ControlFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum LawKind {
    Analytic(ControlFn),
    /// Gradient of a grid surrogate: cubic-interpolated central differences.
    ValueGradient { grad: Arc<Vec<ScalarField>> },
    /// Gradient of a mollified surrogate, evaluated by quadrature against the
    /// kernel derivative; smooth along trajectories for any base field.
    MollifierGradient {
        base: Arc<ScalarField>,
        kernel: Arc<BumpKernel>,
    },
}

/// A feedback law tied to a control problem (for B and beta).
#[derive(Clone)]
pub struct FeedbackLaw {
    kind: LawKind,
    problem: Arc<ControlProblem>,
    /// axis-aligned validity box; None = everywhere
    domain: Option<(Vec<f64>, Vec<f64>)>,
}

impl std::fmt::Debug for FeedbackLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            LawKind::Analytic(_) => "analytic",
            LawKind::ValueGradient { .. } => "value-gradient",
            LawKind::MollifierGradient { .. } => "mollifier-gradient",
        };
        f.debug_struct("FeedbackLaw").field("kind", &kind).finish()
    }
}

impl FeedbackLaw {
    pub fn analytic(problem: Arc<ControlProblem>, map: ControlFn) -> FeedbackLaw {
        FeedbackLaw {
            kind: LawKind::Analytic(map),
            problem,
            domain: None,
        }
    }

    /// Law from a differentiable surrogate field: precomputes the
    /// central-difference gradient fields with cubic interpolation so the
    /// control is C^1 along trajectories.
    pub fn from_field(problem: Arc<ControlProblem>, v: &ScalarField) -> FeedbackLaw {
        let grad = Arc::new(v.gradient_fields(InterpOrder::Cubic));
        let domain = Some((v.grid().lower().to_vec(), v.grid().upper().to_vec()));
        FeedbackLaw {
            kind: LawKind::ValueGradient { grad },
            problem,
            domain,
        }
    }

    /// Law from a precomputed mollified surrogate (uses its valid region).
    pub fn from_mollified(problem: Arc<ControlProblem>, m: &MollifiedField) -> FeedbackLaw {
        let law = FeedbackLaw::from_field(problem, &m.field);
        FeedbackLaw {
            domain: Some((m.valid_lower.clone(), m.valid_upper.clone())),
            ..law
        }
    }

    /// Smooth law u = -(1/beta) B^T grad(rho_eps * phi) with the gradient
    /// evaluated by kernel-derivative quadrature against the raw field.
    pub fn from_mollifier_quadrature(
        problem: Arc<ControlProblem>,
        base: Arc<ScalarField>,
        epsilon: f64,
        kernel_points: Option<usize>,
    ) -> Result<FeedbackLaw> {
        let d = base.grid().dim();
        let kernel = BumpKernel::new(d, epsilon, kernel_points.unwrap_or(DEFAULT_KERNEL_POINTS))?;
        let lower: Vec<f64> = base.grid().lower().iter().map(|l| l + epsilon).collect();
        let upper: Vec<f64> = base.grid().upper().iter().map(|u| u - epsilon).collect();
        for a in 0..d {
            if !(lower[a] < upper[a]) {
                return Err(Error::DegenerateRegion(
                    "mollifier law has empty valid region".into(),
                ));
            }
        }
        Ok(FeedbackLaw {
            kind: LawKind::MollifierGradient {
                base,
                kernel: Arc::new(kernel),
            },
            problem,
            domain: Some((lower, upper)),
        })
    }

    pub fn problem(&self) -> &Arc<ControlProblem> {
        &self.problem
    }

    pub fn domain(&self) -> Option<(&[f64], &[f64])> {
        self.domain.as_ref().map(|(l, u)| (l.as_slice(), u.as_slice()))
    }

    pub fn in_domain(&self, y: &[f64]) -> bool {
        match &self.domain {
            None => true,
            Some((l, u)) => (0..y.len()).all(|a| y[a] >= l[a] - 1e-12 && y[a] <= u[a] + 1e-12),
        }
    }

    /// Gradient of the underlying surrogate at y (the -beta u covector for
    /// B = I); errors for analytic laws without a surrogate.
    pub fn surrogate_gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        if !self.in_domain(y) {
            return Err(Error::out_of_domain("feedback surrogate", y));
        }
        match &self.kind {
            LawKind::Analytic(_) => Err(Error::parameter("law", "analytic law has no surrogate gradient")),
            LawKind::ValueGradient { grad } => grad.iter().map(|g| g.eval(y)).collect(),
            LawKind::MollifierGradient { base, kernel } => kernel.convolve_gradient(base, y),
        }
    }

    /// Evaluate the control into `u` (length m). `scratch` must hold d*m.
    pub fn eval_into(&self, y: &[f64], u: &mut [f64], scratch: &mut [f64]) -> Result<()> {
        if !self.in_domain(y) {
            return Err(Error::out_of_domain("feedback law", y));
        }
        match &self.kind {
            LawKind::Analytic(map) => {
                map(y, u);
                Ok(())
            }
            LawKind::ValueGradient { grad } => {
                let d = self.problem.dim_state;
                let mut g = vec![0.0; d];
                for a in 0..d {
                    g[a] = grad[a].eval(y)?;
                }
                self.apply_gradient(y, &g, u, scratch);
                Ok(())
            }
            LawKind::MollifierGradient { base, kernel } => {
                let g = kernel.convolve_gradient(base, y)?;
                self.apply_gradient(y, &g, u, scratch);
                Ok(())
            }
        }
    }

    fn apply_gradient(&self, y: &[f64], g: &[f64], u: &mut [f64], scratch: &mut [f64]) {
        self.problem.input_map_transpose_apply(y, g, scratch, u);
        let inv = -1.0 / self.problem.beta;
        for v in u.iter_mut() {
            *v *= inv;
        }
    }

    pub fn eval(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut u = vec![0.0; self.problem.dim_control];
        let mut scratch = vec![0.0; self.problem.dim_state * self.problem.dim_control];
        self.eval_into(y, &mut u, &mut scratch)?;
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoxGrid;

    fn integrator_problem() -> Arc<ControlProblem> {
        // y' = u in 2-D, l = 0.5 |y|^2, beta = 1
        Arc::new(
            ControlProblem::new(
                2,
                2,
                1.0,
                Arc::new(|_, out| out.fill(0.0)),
                Arc::new(|_, out: &mut [f64]| {
                    out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
                }),
                Arc::new(|y: &[f64]| 0.5 * (y[0] * y[0] + y[1] * y[1])),
            )
            .unwrap(),
        )
    }

    #[test]
    fn field_law_matches_quadratic_feedback() {
        // v = 0.5 |y|^2, B = I, beta = 1 -> u(y) = -y
        let p = integrator_problem();
        let grid = BoxGrid::cube(-2.0, 2.0, 41, 2).unwrap();
        let v = ScalarField::from_fn(grid, InterpOrder::Cubic, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).unwrap();
        let law = FeedbackLaw::from_field(p, &v);
        let u = law.eval(&[0.7, -0.3]).unwrap();
        assert!((u[0] + 0.7).abs() < 1e-9 && (u[1] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn constant_surrogate_gives_zero_control() {
        let p = integrator_problem();
        let grid = BoxGrid::cube(-1.0, 1.0, 21, 2).unwrap();
        let v = ScalarField::from_fn(grid, InterpOrder::Cubic, |_| 7.0).unwrap();
        let law = FeedbackLaw::from_field(p, &v);
        let u = law.eval(&[0.2, 0.1]).unwrap();
        assert!(u[0].abs() < 1e-12 && u[1].abs() < 1e-12);
    }

    #[test]
    fn zero_input_map_gives_zero_control() {
        let p = Arc::new(
            ControlProblem::new(
                2,
                2,
                1.0,
                Arc::new(|_, out| out.fill(0.0)),
                Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
                Arc::new(|y: &[f64]| y.iter().map(|v| v * v).sum::<f64>()),
            )
            .unwrap(),
        );
        let grid = BoxGrid::cube(-1.0, 1.0, 21, 2).unwrap();
        let v = ScalarField::from_fn(grid, InterpOrder::Cubic, |x| x[0].exp() + x[1]).unwrap();
        let law = FeedbackLaw::from_field(p, &v);
        let u = law.eval(&[0.4, -0.4]).unwrap();
        assert_eq!(u, vec![0.0, 0.0]);
    }

    #[test]
    fn mollifier_law_is_exact_for_quadratic_base_in_gradient_mean() {
        // grad(rho_eps * 0.5|y|^2) = y for a symmetric kernel
        let p = integrator_problem();
        let grid = BoxGrid::cube(-2.0, 2.0, 81, 2).unwrap();
        let v = Arc::new(
            ScalarField::from_fn(grid, InterpOrder::Cubic, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).unwrap(),
        );
        let law = FeedbackLaw::from_mollifier_quadrature(p, v, 0.3, None).unwrap();
        let u = law.eval(&[0.5, 0.25]).unwrap();
        assert!((u[0] + 0.5).abs() < 1e-10, "{u:?}");
        assert!((u[1] + 0.25).abs() < 1e-10);
    }

    #[test]
    fn law_query_outside_domain_errors() {
        let p = integrator_problem();
        let grid = BoxGrid::cube(-1.0, 1.0, 41, 2).unwrap();
        let v = Arc::new(ScalarField::from_fn(grid, InterpOrder::Cubic, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).unwrap());
        let law = FeedbackLaw::from_mollifier_quadrature(p, v, 0.2, None).unwrap();
        assert!(law.eval(&[0.95, 0.0]).is_err());
        assert!(law.eval(&[0.5, 0.0]).is_ok());
    }
}
