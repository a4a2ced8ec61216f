//! Control problem data: dynamics, input map, running cost, control penalty.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Drift `f`: writes the state velocity into `out` (length `dim_state`).
pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Input map `B`: writes the `d x m` matrix row-major into `out`.
pub type InputMapFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Running state cost `l(y) >= 0`.
pub type StateCostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Infinite-horizon control problem
///
///   minimize  integral of ( l(y) + beta/2 |u|^2 )  subject to  y' = f(y) + B(y) u.
///
/// `f`, `B`, `l` are locally Lipschitz with `f(0) = 0` and `l(0) = 0`.
#[derive(Clone)]
pub struct ControlProblem {
    pub dim_state: usize,
    pub dim_control: usize,
    pub beta: f64,
    drift: DriftFn,
    input_map: InputMapFn,
    state_cost: StateCostFn,
}

impl ControlProblem {
    pub fn new(
        dim_state: usize,
        dim_control: usize,
        beta: f64,
        drift: DriftFn,
        input_map: InputMapFn,
        state_cost: StateCostFn,
    ) -> Result<Self> {
        if dim_state == 0 || dim_control == 0 {
            return Err(Error::parameter("dim", "state and control dims must be positive"));
        }
        if !(beta > 0.0) {
            return Err(Error::parameter("beta", "control penalty must be positive"));
        }
        let p = ControlProblem {
            dim_state,
            dim_control,
            beta,
            drift,
            input_map,
            state_cost,
        };
        p.check_origin()?;
        Ok(p)
    }

    /// `f(0) = 0` and `l(0) = 0` within evaluation tolerance.
    fn check_origin(&self) -> Result<()> {
        let zero = vec![0.0; self.dim_state];
        let mut v = vec![0.0; self.dim_state];
        self.drift(&zero, &mut v);
        let fmag = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if fmag > 1e-9 {
            return Err(Error::parameter("f", format!("f(0) = {fmag:e}, expected 0")));
        }
        let l0 = self.state_cost(&zero);
        if l0.abs() > 1e-9 {
            return Err(Error::parameter("ell", format!("l(0) = {l0:e}, expected 0")));
        }
        Ok(())
    }

    #[inline]
    pub fn drift(&self, y: &[f64], out: &mut [f64]) {
        (self.drift)(y, out);
    }

    #[inline]
    pub fn input_map(&self, y: &[f64], out: &mut [f64]) {
        (self.input_map)(y, out);
    }

    /// Running state cost `l(y)`; panics in debug builds if negative.
    #[inline]
    pub fn state_cost(&self, y: &[f64]) -> f64 {
        let v = (self.state_cost)(y);
        debug_assert!(v >= -1e-12, "running cost must be nonnegative, got {v}");
        v
    }

    /// Integrand of the accumulated cost: `l(y) + beta/2 |u|^2`.
    #[inline]
    pub fn running_integrand(&self, y: &[f64], u: &[f64]) -> f64 {
        let u2: f64 = u.iter().map(|x| x * x).sum();
        self.state_cost(y) + 0.5 * self.beta * u2
    }

    /// Closed-loop velocity `f(y) + B(y) u` written into `out`.
    /// `bmat` is scratch of length `d*m`.
    pub fn closed_loop_velocity(&self, y: &[f64], u: &[f64], bmat: &mut [f64], out: &mut [f64]) {
        self.drift(y, out);
        self.input_map(y, bmat);
        let (d, m) = (self.dim_state, self.dim_control);
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..m {
                acc += bmat[i * m + j] * u[j];
            }
            out[i] += acc;
        }
    }

    /// `B(y)^T p` written into `out` (length `m`); `bmat` is scratch of length `d*m`.
    pub fn input_map_transpose_apply(&self, y: &[f64], p: &[f64], bmat: &mut [f64], out: &mut [f64]) {
        self.input_map(y, bmat);
        let (d, m) = (self.dim_state, self.dim_control);
        for j in 0..m {
            let mut acc = 0.0;
            for i in 0..d {
                acc += bmat[i * m + j] * p[i];
            }
            out[j] = acc;
        }
    }
}

impl std::fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("dim_state", &self.dim_state)
            .field("dim_control", &self.dim_control)
            .field("beta", &self.beta)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lq_problem(d: usize, beta: f64) -> ControlProblem {
        ControlProblem::new(
            d,
            d,
            beta,
            Arc::new(|_, out| out.fill(0.0)),
            Arc::new(move |_, out: &mut [f64]| {
                out.fill(0.0);
                let m = (out.len() as f64).sqrt() as usize;
                for i in 0..m {
                    out[i * m + i] = 1.0;
                }
            }),
            Arc::new(|y: &[f64]| 0.5 * y.iter().map(|x| x * x).sum::<f64>()),
        )
        .unwrap()
    }

    #[test]
    fn rejects_nonzero_origin_cost() {
        let err = ControlProblem::new(
            1,
            1,
            1.0,
            Arc::new(|_, out| out.fill(0.0)),
            Arc::new(|_, out| out.fill(1.0)),
            Arc::new(|_| 1.0),
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_nonpositive_beta() {
        let err = ControlProblem::new(
            1,
            1,
            0.0,
            Arc::new(|_, out| out.fill(0.0)),
            Arc::new(|_, out| out.fill(1.0)),
            Arc::new(|_| 0.0),
        );
        assert!(err.is_err());
    }

    #[test]
    fn closed_loop_velocity_adds_bu() {
        let p = lq_problem(2, 1.0);
        let mut b = vec![0.0; 4];
        let mut v = vec![0.0; 2];
        p.closed_loop_velocity(&[1.0, 2.0], &[-1.0, -2.0], &mut b, &mut v);
        assert_eq!(v, vec![-1.0, -2.0]);
    }
}
