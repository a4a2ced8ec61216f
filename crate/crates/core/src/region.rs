//! Regions of state space (boxes, balls, sub-level sets) and point samples
//! drawn from them.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::grid::BoxGrid;

/// Scalar level function; the region is its strict negative set.
pub type LevelFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A region of state space with a continuous level function that is negative
/// inside, zero on the boundary, positive outside.
#[derive(Clone)]
pub enum Region {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// `{ y : level(y) < 0 }` with a bounding box for sampling.
    SubLevel {
        level: LevelFn,
        bounding_lower: Vec<f64>,
        bounding_upper: Vec<f64>,
    },
}

impl std::fmt::Debug for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Region::Box { lower, upper } => f.debug_struct("Box").field("lower", lower).field("upper", upper).finish(),
            Region::Ball { center, radius } => f
                .debug_struct("Ball")
                .field("center", center)
                .field("radius", radius)
                .finish(),
            Region::SubLevel {
                bounding_lower,
                bounding_upper,
                ..
            } => f
                .debug_struct("SubLevel")
                .field("bounding_lower", bounding_lower)
                .field("bounding_upper", bounding_upper)
                .finish(),
        }
    }
}

impl Region {
    pub fn ball(center: Vec<f64>, radius: f64) -> Region {
        Region::Ball { center, radius }
    }

    pub fn sub_level(level: LevelFn, bounding_lower: Vec<f64>, bounding_upper: Vec<f64>) -> Region {
        Region::SubLevel {
            level,
            bounding_lower,
            bounding_upper,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box { lower, .. } => lower.len(),
            Region::Ball { center, .. } => center.len(),
            Region::SubLevel { bounding_lower, .. } => bounding_lower.len(),
        }
    }

    /// Continuous level function: negative inside, positive outside.
    pub fn level(&self, y: &[f64]) -> f64 {
        match self {
            Region::Box { lower, upper } => {
                let mut worst = f64::NEG_INFINITY;
                for a in 0..lower.len() {
                    worst = worst.max(lower[a] - y[a]).max(y[a] - upper[a]);
                }
                worst
            }
            Region::Ball { center, radius } => {
                let r: f64 = y
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                r - radius
            }
            Region::SubLevel { level, .. } => level(y),
        }
    }

    #[inline]
    pub fn contains(&self, y: &[f64]) -> bool {
        self.level(y) < 0.0
    }

    /// Axis-aligned box known to contain the region.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Box { lower, upper } => (lower.clone(), upper.clone()),
            Region::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Region::SubLevel {
                bounding_lower,
                bounding_upper,
                ..
            } => (bounding_lower.clone(), bounding_upper.clone()),
        }
    }
}

/// How a [`RegionSample`] was drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingMode {
    /// Nodes of a grid that fall inside the region.
    Grid,
    /// Rejection sampling in the bounding box.
    MonteCarlo { seed: u64, count: usize },
}

/// A finite sample of points from a region; every point satisfies the region
/// predicate.
#[derive(Debug, Clone)]
pub struct RegionSample {
    pub region: Region,
    pub points: Vec<Vec<f64>>,
    pub mode: SamplingMode,
}

impl RegionSample {
    /// Grid nodes that lie inside the region.
    pub fn from_grid(region: Region, grid: &BoxGrid) -> Result<RegionSample> {
        let points: Vec<Vec<f64>> = grid.nodes().filter(|(_, x)| region.contains(x)).map(|(_, x)| x).collect();
        if points.is_empty() {
            return Err(Error::DegenerateRegion("no grid node inside region".into()));
        }
        Ok(RegionSample {
            region,
            points,
            mode: SamplingMode::Grid,
        })
    }

    /// `count` points by rejection sampling inside the bounding box;
    /// reproducible for a fixed seed.
    pub fn monte_carlo(region: Region, seed: u64, count: usize) -> Result<RegionSample> {
        let (lo, hi) = region.bounding_box();
        let d = lo.len();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while points.len() < count {
            attempts += 1;
            if attempts > 10_000 * count.max(1) {
                return Err(Error::DegenerateRegion(
                    "rejection sampling failed; region too thin within its bounding box".into(),
                ));
            }
            let x: Vec<f64> = (0..d).map(|a| rng.gen_range(lo[a]..=hi[a])).collect();
            if region.contains(&x) {
                points.push(x);
            }
        }
        Ok(RegionSample {
            region,
            points,
            mode: SamplingMode::MonteCarlo { seed, count },
        })
    }

    /// Explicit points, checked against the region predicate.
    pub fn from_points(region: Region, points: Vec<Vec<f64>>) -> Result<RegionSample> {
        if points.is_empty() {
            return Err(Error::DegenerateRegion("empty point list".into()));
        }
        for p in &points {
            if !region.contains(p) {
                return Err(Error::out_of_domain("region sample", p));
            }
        }
        Ok(RegionSample {
            region,
            points,
            mode: SamplingMode::Grid,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_level_sign() {
        let b = Region::ball(vec![1.0, 0.0], 2.0);
        assert!(b.contains(&[1.5, 0.5]));
        assert!(!b.contains(&[4.0, 0.0]));
        assert!(b.level(&[3.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn grid_sample_respects_predicate() {
        let grid = BoxGrid::cube(-1.0, 1.0, 21, 2).unwrap();
        let s = RegionSample::from_grid(Region::ball(vec![0.0, 0.0], 0.8), &grid).unwrap();
        assert!(!s.is_empty());
        assert!(s.points.iter().all(|p| p.iter().map(|x| x * x).sum::<f64>() < 0.64 + 1e-12));
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let r = Region::Box {
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
        };
        let a = RegionSample::monte_carlo(r.clone(), 7, 50).unwrap();
        let b = RegionSample::monte_carlo(r, 7, 50).unwrap();
        assert_eq!(a.points, b.points);
    }
}
