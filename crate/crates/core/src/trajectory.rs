//! Time-stamped closed- or open-loop runs with accumulated running cost.

use std::io::Write;

use crate::error::{Error, Result};
use crate::problem::ControlProblem;

/// Termination status of a run.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajStatus {
    /// Reached the requested horizon.
    Completed,
    /// Left the tracked region at `time`.
    Escaped { time: f64 },
    /// State magnitude exceeded the blow-up guard.
    BlewUp,
}

/// One simulated trajectory: strictly increasing times starting at 0, one
/// state/control/accumulated-cost sample per time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// accumulated integral of l(y) + beta/2 |u|^2 up to each time
    pub running_cost: Vec<f64>,
    pub status: TrajStatus,
    pub note: Option<String>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 || self.states.len() != n || self.controls.len() != n || self.running_cost.len() != n {
            return Err(Error::Format("trajectory arrays must share a positive length".into()));
        }
        if self.times[0] != 0.0 {
            return Err(Error::Format("trajectory must start at t = 0".into()));
        }
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Format("trajectory times must be strictly increasing".into()));
            }
        }
        for w in self.running_cost.windows(2) {
            if w[1] < w[0] - 1e-12 {
                return Err(Error::Format("running cost must be nondecreasing".into()));
            }
        }
        Ok(())
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn total_cost(&self) -> f64 {
        *self.running_cost.last().unwrap()
    }

    /// Accumulated cost at time `T <= final_time`, by cubic Hermite between
    /// stored samples (the cost derivative is the stored integrand).
    pub fn cost_at(&self, problem: &ControlProblem, horizon: f64) -> Result<f64> {
        if horizon < 0.0 || horizon > self.final_time() + 1e-12 {
            return Err(Error::parameter(
                "T",
                format!("requested {horizon}, trajectory ends at {}", self.final_time()),
            ));
        }
        let i = match self.times.binary_search_by(|t| t.total_cmp(&horizon)) {
            Ok(i) => return Ok(self.running_cost[i]),
            Err(i) => i - 1,
        };
        let h = self.times[i + 1] - self.times[i];
        let th = (horizon - self.times[i]) / h;
        let c0 = self.running_cost[i];
        let c1 = self.running_cost[i + 1];
        let d0 = problem.running_integrand(&self.states[i], &self.controls[i]);
        let d1 = problem.running_integrand(&self.states[i + 1], &self.controls[i + 1]);
        Ok(hermite(c0, d0, c1, d1, h, th))
    }

    /// State at time `T <= final_time` by cubic Hermite on each component,
    /// with derivatives recomputed from the closed-loop right-hand side.
    pub fn state_at(&self, problem: &ControlProblem, horizon: f64) -> Result<Vec<f64>> {
        if horizon < 0.0 || horizon > self.final_time() + 1e-12 {
            return Err(Error::parameter("T", "beyond trajectory".to_string()));
        }
        let i = match self.times.binary_search_by(|t| t.total_cmp(&horizon)) {
            Ok(i) => return Ok(self.states[i].clone()),
            Err(i) => i - 1,
        };
        let h = self.times[i + 1] - self.times[i];
        let th = (horizon - self.times[i]) / h;
        let d = problem.dim_state;
        let mut bmat = vec![0.0; d * problem.dim_control];
        let mut v0 = vec![0.0; d];
        let mut v1 = vec![0.0; d];
        problem.closed_loop_velocity(&self.states[i], &self.controls[i], &mut bmat, &mut v0);
        problem.closed_loop_velocity(&self.states[i + 1], &self.controls[i + 1], &mut bmat, &mut v1);
        Ok((0..d)
            .map(|k| hermite(self.states[i][k], v0[k], self.states[i + 1][k], v1[k], h, th))
            .collect())
    }

    /// CSV export: t, y..., u..., running_cost.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let d = self.states[0].len();
        let m = self.controls[0].len();
        let ycols: Vec<String> = (0..d).map(|a| format!("y{a}")).collect();
        let ucols: Vec<String> = (0..m).map(|a| format!("u{a}")).collect();
        writeln!(w, "t,{},{},running_cost", ycols.join(","), ucols.join(","))?;
        for k in 0..self.times.len() {
            let ys: Vec<String> = self.states[k].iter().map(|v| format!("{v:.17e}")).collect();
            let us: Vec<String> = self.controls[k].iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(
                w,
                "{:.17e},{},{},{:.17e}",
                self.times[k],
                ys.join(","),
                us.join(","),
                self.running_cost[k]
            )?;
        }
        Ok(())
    }
}

/// Cubic Hermite on [0, h] with endpoint values and derivatives, evaluated at
/// normalized offset `th` in [0, 1].
pub fn hermite(p0: f64, d0: f64, p1: f64, d1: f64, h: f64, th: f64) -> f64 {
    let t2 = th * th;
    let t3 = t2 * th;
    (2.0 * t3 - 3.0 * t2 + 1.0) * p0
        + (t3 - 2.0 * t2 + th) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * p1
        + (t3 - t2) * h * d1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_endpoints() {
        assert_eq!(hermite(1.0, 2.0, 3.0, 4.0, 0.5, 0.0), 1.0);
        assert_eq!(hermite(1.0, 2.0, 3.0, 4.0, 0.5, 1.0), 3.0);
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |t: f64| t * t * t - 2.0 * t * t + 0.5 * t + 1.0;
        let df = |t: f64| 3.0 * t * t - 4.0 * t + 0.5;
        let (a, b) = (0.3, 0.9);
        let h = b - a;
        let got = hermite(f(a), df(a), f(b), df(b), h, 0.4);
        let t = a + 0.4 * h;
        assert!((got - f(t)).abs() < 1e-14);
    }
}
