//! Sampled norm and regularity estimators.
//!
//! These feed bound certificates: all of them are lower estimates of the true
//! suprema, reported together with the sample counts that produced them.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::region::RegionSample;

/// A sampled estimate together with how many evaluations produced it.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub samples: usize,
}

/// Max over sampled pairs of |phi(x)-phi(y)| / |x-y|; a lower estimate of the
/// Lipschitz constant. Pairs are all consecutive sample points plus `pairs`
/// random ones.
pub fn lipschitz_estimate<F>(phi: F, region: &RegionSample, pairs: usize, seed: u64) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64,
{
    if region.len() < 2 {
        return Err(Error::DegenerateRegion("lipschitz estimate needs >= 2 points".into()));
    }
    let pts = &region.points;
    let mut best: f64 = 0.0;
    let mut count = 0usize;
    let mut consider = |x: &[f64], y: &[f64]| {
        let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist > 1e-14 {
            best = best.max((phi(x) - phi(y)).abs() / dist);
            count += 1;
        }
    };
    for w in pts.windows(2) {
        consider(&w[0], &w[1]);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..pairs {
        let i = rng.gen_range(0..pts.len());
        let j = rng.gen_range(0..pts.len());
        consider(&pts[i], &pts[j]);
    }
    Ok(Estimate { value: best, samples: count })
}

/// Vector-map version: |F(x)-F(y)|_2 / |x-y|.
pub fn lipschitz_estimate_vec<F>(map: F, region: &RegionSample, pairs: usize, seed: u64) -> Result<Estimate>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if region.len() < 2 {
        return Err(Error::DegenerateRegion("lipschitz estimate needs >= 2 points".into()));
    }
    let pts = &region.points;
    let mut best: f64 = 0.0;
    let mut count = 0usize;
    let mut consider = |x: &[f64], y: &[f64]| {
        let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist > 1e-14 {
            let (fx, fy) = (map(x), map(y));
            let dv: f64 = fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            best = best.max(dv / dist);
            count += 1;
        }
    };
    for w in pts.windows(2) {
        consider(&w[0], &w[1]);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..pairs {
        let i = rng.gen_range(0..pts.len());
        let j = rng.gen_range(0..pts.len());
        consider(&pts[i], &pts[j]);
    }
    Ok(Estimate { value: best, samples: count })
}

/// Entry-wise matrix seminorm used for the input map `B`: the sum of the
/// difference quotient and the undivided sup of entry differences, each taken
/// as a supremum over sampled pairs. Both terms are also reported separately.
#[derive(Debug, Clone, Copy)]
pub struct MatrixLipEstimate {
    /// quotient + undivided sup, the combination used in bound formulas
    pub combined: f64,
    pub quotient: f64,
    pub undivided: f64,
    pub samples: usize,
}

pub fn matrix_lipschitz_estimate<F>(
    map: F,
    rows: usize,
    cols: usize,
    region: &RegionSample,
    pairs: usize,
    seed: u64,
) -> Result<MatrixLipEstimate>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if region.len() < 2 {
        return Err(Error::DegenerateRegion("matrix lipschitz estimate needs >= 2 points".into()));
    }
    let pts = &region.points;
    let mut quotient: f64 = 0.0;
    let mut undivided: f64 = 0.0;
    let mut count = 0usize;
    let mut consider = |x: &[f64], y: &[f64]| {
        let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist > 1e-14 {
            let (bx, by) = (map(x), map(y));
            for k in 0..rows * cols {
                let diff = (bx[k] - by[k]).abs();
                quotient = quotient.max(diff / dist);
                undivided = undivided.max(diff);
            }
            count += 1;
        }
    };
    for w in pts.windows(2) {
        consider(&w[0], &w[1]);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..pairs {
        let i = rng.gen_range(0..pts.len());
        let j = rng.gen_range(0..pts.len());
        consider(&pts[i], &pts[j]);
    }
    Ok(MatrixLipEstimate {
        combined: quotient + undivided,
        quotient,
        undivided,
        samples: count,
    })
}

/// Max of |phi| over the sample.
pub fn sup_norm<F>(phi: F, region: &RegionSample) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64,
{
    if region.is_empty() {
        return Err(Error::DegenerateRegion("sup norm of an empty sample".into()));
    }
    let value = region.points.iter().map(|p| phi(p).abs()).fold(0.0, f64::max);
    Ok(Estimate {
        value,
        samples: region.len(),
    })
}

/// Max of |F|_2 over the sample.
pub fn sup_norm_vec<F>(map: F, region: &RegionSample) -> Result<Estimate>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if region.is_empty() {
        return Err(Error::DegenerateRegion("sup norm of an empty sample".into()));
    }
    let value = region
        .points
        .iter()
        .map(|p| map(p).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    Ok(Estimate {
        value,
        samples: region.len(),
    })
}

/// Discrete L^p norm over the sample with uniform weights |region|/n.
/// `volume` is the measure assigned to the sampled region.
pub fn lp_norm<F>(phi: F, region: &RegionSample, p: f64, volume: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if region.is_empty() {
        return Err(Error::DegenerateRegion("lp norm of an empty sample".into()));
    }
    if !(p >= 1.0) {
        return Err(Error::parameter("p", "need p >= 1"));
    }
    let n = region.len() as f64;
    let sum: f64 = region.points.iter().map(|x| phi(x).abs().powf(p)).sum();
    Ok((volume * sum / n).powf(1.0 / p))
}

/// Hoelder-fit of |phi(x)-phi(y)| ~ C |x-y|^alpha by log-log least squares
/// over sampled pairs. Returns (C, alpha); an estimate, never silently used
/// in certificates.
pub fn holder_fit<F>(phi: F, region: &RegionSample, pairs: usize, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    if region.len() < 2 {
        return Err(Error::DegenerateRegion("holder fit needs >= 2 points".into()));
    }
    let pts = &region.points;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..pairs.max(16) {
        let i = rng.gen_range(0..pts.len());
        let j = rng.gen_range(0..pts.len());
        let dist: f64 = pts[i]
            .iter()
            .zip(&pts[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dv = (phi(&pts[i]) - phi(&pts[j])).abs();
        if dist > 1e-12 && dv > 1e-14 {
            xs.push(dist.ln());
            ys.push(dv.ln());
        }
    }
    if xs.len() < 8 {
        return Err(Error::DegenerateRegion("not enough informative pairs for holder fit".into()));
    }
    let (slope, intercept) = linear_fit(&xs, &ys);
    Ok((intercept.exp(), slope.clamp(0.0, 1.0)))
}

/// Least-squares slope and intercept of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for k in 0..x.len() {
        sxx += (x[k] - mx) * (x[k] - mx);
        sxy += (x[k] - mx) * (y[k] - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Slope of log(value) against log(param); used to report empirical rates.
pub fn rate_fit(params: &[f64], values: &[f64]) -> f64 {
    let xs: Vec<f64> = params.iter().map(|p| p.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.max(1e-300).ln()).collect();
    linear_fit(&xs, &ys).0
}

/// Empirical modulus of continuity of a vector map: a nondecreasing step
/// envelope h with |F(x)-F(y)| <= h(|x-y|) over the sampled pairs.
#[derive(Debug, Clone)]
pub struct ModulusOfContinuity {
    /// sorted pair distances
    radii: Vec<f64>,
    /// prefix-max envelope of value differences
    envelope: Vec<f64>,
}

impl ModulusOfContinuity {
    pub fn sample<F>(map: F, region: &RegionSample, pairs: usize, seed: u64) -> Result<ModulusOfContinuity>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        if region.len() < 2 {
            return Err(Error::DegenerateRegion("modulus sampling needs >= 2 points".into()));
        }
        let pts = &region.points;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut samples: Vec<(f64, f64)> = Vec::with_capacity(pairs);
        for _ in 0..pairs {
            let i = rng.gen_range(0..pts.len());
            let j = rng.gen_range(0..pts.len());
            let dist: f64 = pts[i]
                .iter()
                .zip(&pts[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist > 1e-14 {
                let (fx, fy) = (map(&pts[i]), map(&pts[j]));
                let dv: f64 = fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                samples.push((dist, dv));
            }
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut radii = Vec::with_capacity(samples.len());
        let mut envelope = Vec::with_capacity(samples.len());
        let mut run: f64 = 0.0;
        for (r, v) in samples {
            run = run.max(v);
            radii.push(r);
            envelope.push(run);
        }
        Ok(ModulusOfContinuity { radii, envelope })
    }

    /// h(t): the envelope value at the largest sampled radius <= t (or the
    /// global max past the sampled range).
    pub fn eval(&self, t: f64) -> f64 {
        if self.radii.is_empty() || t < self.radii[0] {
            // Below the sampled range scale down linearly from the first bin.
            return if self.radii.is_empty() {
                0.0
            } else {
                self.envelope[0] * (t / self.radii[0]).clamp(0.0, 1.0)
            };
        }
        match self.radii.binary_search_by(|r| r.total_cmp(&t)) {
            Ok(i) => self.envelope[i],
            Err(i) => self.envelope[i.saturating_sub(1).min(self.envelope.len() - 1)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoxGrid;
    use crate::region::{Region, RegionSample};

    fn interval_sample(a: f64, b: f64, n: usize) -> RegionSample {
        let grid = BoxGrid::new(vec![a], vec![b], vec![n]).unwrap();
        RegionSample::from_grid(
            Region::Box {
                lower: vec![a - 1e-9],
                upper: vec![b + 1e-9],
            },
            &grid,
        )
        .unwrap()
    }

    #[test]
    fn affine_slope_is_exact() {
        let s = interval_sample(0.0, 1.0, 101);
        let e = lipschitz_estimate(|x| 3.0 * x[0], &s, 500, 1).unwrap();
        assert!((e.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_slope() {
        let s = interval_sample(0.0, 1.0, 51);
        let e = lipschitz_estimate(|_| 4.2, &s, 100, 2).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn estimate_never_exceeds_affine_constant() {
        let s = interval_sample(-2.0, 3.0, 77);
        for seed in 0..5 {
            let e = lipschitz_estimate(|x| -1.7 * x[0] + 0.3, &s, 1000, seed).unwrap();
            assert!(e.value <= 1.7 + 1e-12);
        }
    }

    #[test]
    fn sup_norm_of_quadratic_on_square() {
        let grid = BoxGrid::cube(-1.0, 1.0, 41, 2).unwrap();
        let s = RegionSample::from_grid(
            Region::Box {
                lower: vec![-1.0 - 1e-9; 2],
                upper: vec![1.0 + 1e-9; 2],
            },
            &grid,
        )
        .unwrap();
        let e = sup_norm(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]), &s).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12, "corner maximum");
    }

    #[test]
    fn degenerate_region_is_an_error() {
        let r = Region::Box {
            lower: vec![0.0],
            upper: vec![1.0],
        };
        let s = RegionSample::from_points(r, vec![vec![0.5]]).unwrap();
        assert!(lipschitz_estimate(|x| x[0], &s, 10, 0).is_err());
    }

    #[test]
    fn rate_fit_recovers_power() {
        let params = [0.2f64, 0.1, 0.05, 0.025];
        let values: Vec<f64> = params.iter().map(|p| 3.0 * p.powf(1.5)).collect();
        let slope = rate_fit(&params, &values);
        assert!((slope - 1.5).abs() < 1e-9);
    }

    #[test]
    fn modulus_envelope_is_monotone() {
        let s = interval_sample(0.0, 1.0, 101);
        let m = ModulusOfContinuity::sample(|x| vec![x[0] * x[0]], &s, 2000, 3).unwrap();
        assert!(m.eval(0.1) <= m.eval(0.5));
        assert!(m.eval(0.5) <= m.eval(2.0));
    }
}
