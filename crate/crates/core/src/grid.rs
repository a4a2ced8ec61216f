//! Uniform tensor grids and grid-sampled scalar fields.
//!
//! Fields carry their own interpolation order: multilinear for raw sampled
//! data, cubic (Catmull-Rom with quadratic boundary ghosts) when a C^1
//! representation is needed. Gradients are central differences of the nodal
//! data, interpolated off-node.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interpolation order of a [`ScalarField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpOrder {
    Multilinear,
    Cubic,
}

/// Uniform tensor-product grid on an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl BoxGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if d == 0 || upper.len() != d || points.len() != d {
            return Err(Error::parameter("grid", "lower/upper/points must share a positive length"));
        }
        for a in 0..d {
            if !(lower[a] < upper[a]) {
                return Err(Error::parameter(
                    "grid",
                    format!("axis {a}: lower {} must be < upper {}", lower[a], upper[a]),
                ));
            }
            if points[a] < 2 {
                return Err(Error::parameter("grid", format!("axis {a}: need at least 2 points")));
            }
        }
        let spacing: Vec<f64> = (0..d)
            .map(|a| (upper[a] - lower[a]) / (points[a] - 1) as f64)
            .collect();
        let mut strides = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * points[a + 1];
        }
        Ok(BoxGrid {
            lower,
            upper,
            points,
            spacing,
            strides,
        })
    }

    /// Grid over `[lower, upper]^d`-style boxes with the same point count per axis.
    pub fn cube(lower: f64, upper: f64, points: usize, dim: usize) -> Result<Self> {
        BoxGrid::new(vec![lower; dim], vec![upper; dim], vec![points; dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    #[inline]
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    #[inline]
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    #[inline]
    pub fn points(&self) -> &[usize] {
        &self.points
    }

    #[inline]
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Row-major flat-index stride of one axis.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Euclidean diameter of the box.
    pub fn diameter(&self) -> f64 {
        (0..self.dim())
            .map(|a| (self.upper[a] - self.lower[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|a| x[a] >= self.lower[a] - 1e-12 && x[a] <= self.upper[a] + 1e-12)
    }

    /// Whether `x` is at least `margin` inside the box on every axis.
    pub fn contains_with_margin(&self, x: &[f64], margin: f64) -> bool {
        (0..self.dim()).all(|a| x[a] >= self.lower[a] + margin - 1e-12 && x[a] <= self.upper[a] - margin + 1e-12)
    }

    #[inline]
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.dim()];
        for a in 0..self.dim() {
            out[a] = flat / self.strides[a];
            flat %= self.strides[a];
        }
        out
    }

    pub fn node(&self, multi: &[usize]) -> Vec<f64> {
        multi
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lower[a] + i as f64 * self.spacing[a])
            .collect()
    }

    pub fn node_flat(&self, flat: usize) -> Vec<f64> {
        self.node(&self.multi_index(flat))
    }

    /// Iterate over all nodes as (flat index, coordinates).
    pub fn nodes(&self) -> impl Iterator<Item = (usize, Vec<f64>)> + '_ {
        (0..self.len()).map(move |k| (k, self.node_flat(k)))
    }

    /// Cell index and normalized offset per axis for an in-box point.
    fn locate(&self, x: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
        if !self.contains(x) {
            return Err(Error::out_of_domain("grid", x));
        }
        let d = self.dim();
        let mut cell = vec![0usize; d];
        let mut t = vec![0.0; d];
        for a in 0..d {
            let raw = (x[a] - self.lower[a]) / self.spacing[a];
            let nearest = raw.round();
            // Snap onto node planes so nodal evaluation is bit-exact.
            if (raw - nearest).abs() < 1e-9 && nearest >= 0.0 && (nearest as usize) < self.points[a] {
                let ni = nearest as usize;
                if ni == self.points[a] - 1 {
                    cell[a] = ni - 1;
                    t[a] = 1.0;
                } else {
                    cell[a] = ni;
                    t[a] = 0.0;
                }
                continue;
            }
            let mut i = raw.floor() as isize;
            if i < 0 {
                i = 0;
            }
            if i as usize > self.points[a] - 2 {
                i = (self.points[a] - 2) as isize;
            }
            cell[a] = i as usize;
            t[a] = raw - i as f64;
        }
        Ok((cell, t))
    }

    /// Nearest node (flat index) to an in-box point.
    pub fn nearest_node(&self, x: &[f64]) -> Result<usize> {
        let (cell, t) = self.locate(x)?;
        let multi: Vec<usize> = cell
            .iter()
            .zip(&t)
            .map(|(&c, &tt)| if tt > 0.5 { c + 1 } else { c })
            .collect();
        Ok(self.flat_index(&multi))
    }
}

/// Grid-sampled real function with a chosen interpolation order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarField {
    grid: BoxGrid,
    values: Vec<f64>,
    interp: InterpOrder,
}

impl ScalarField {
    pub fn new(grid: BoxGrid, values: Vec<f64>, interp: InterpOrder) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: values.len(),
                context: "field values".into(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("values", "field values must be finite"));
        }
        Ok(ScalarField { grid, values, interp })
    }

    /// Sample an analytic function at every node.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: BoxGrid, interp: InterpOrder, f: F) -> Result<Self> {
        let values: Vec<f64> = (0..grid.len()).map(|k| f(&grid.node_flat(k))).collect();
        ScalarField::new(grid, values, interp)
    }

    #[inline]
    pub fn grid(&self) -> &BoxGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn interp(&self) -> InterpOrder {
        self.interp
    }

    pub fn with_interp(mut self, interp: InterpOrder) -> Self {
        self.interp = interp;
        self
    }

    pub fn node_value(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    /// Interpolated value at `x`. Exact at nodes for multilinear order.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let (cell, t) = self.grid.locate(x)?;
        Ok(match self.interp {
            InterpOrder::Multilinear => self.eval_multilinear(&cell, &t),
            InterpOrder::Cubic => self.eval_cubic(&cell, &t),
        })
    }

    fn eval_multilinear(&self, cell: &[usize], t: &[f64]) -> f64 {
        let d = self.grid.dim();
        let corners = 1usize << d;
        let mut acc = 0.0;
        for c in 0..corners {
            let mut w = 1.0;
            let mut flat = 0usize;
            for a in 0..d {
                let hi = (c >> a) & 1 == 1;
                w *= if hi { t[a] } else { 1.0 - t[a] };
                flat += (cell[a] + hi as usize) * self.grid.strides[a];
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        acc
    }

    /// Catmull-Rom value on one axis from 4 consecutive samples.
    #[inline]
    fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
        0.5 * (2.0 * p[1]
            + (-p[0] + p[2]) * t
            + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * t * t
            + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * t * t * t)
    }

    /// Sample along `axis` at node offset `k` relative to the cell, with
    /// quadratic extrapolation ghosts at the box edges, recursing over the
    /// remaining axes.
    fn cubic_axis(&self, axis: usize, cell: &[usize], t: &[f64], flat_partial: usize) -> f64 {
        let n = self.grid.points[axis];
        let stride = self.grid.strides[axis];
        let i = cell[axis];
        let fetch = |k: isize| -> f64 {
            // k is the sample offset i-1 ..= i+2 clamped with quadratic ghosts.
            let idx = i as isize + k;
            let sample = |j: usize| {
                let flat = flat_partial + j * stride;
                if axis + 1 == self.grid.dim() {
                    self.values[flat]
                } else {
                    self.cubic_axis(axis + 1, cell, t, flat)
                }
            };
            if idx < 0 {
                3.0 * sample(0) - 3.0 * sample(1) + sample(2)
            } else if idx as usize >= n {
                3.0 * sample(n - 1) - 3.0 * sample(n - 2) + sample(n - 3)
            } else {
                sample(idx as usize)
            }
        };
        let p = [fetch(-1), fetch(0), fetch(1), fetch(2)];
        Self::catmull_rom(p, t[axis])
    }

    fn eval_cubic(&self, cell: &[usize], t: &[f64]) -> f64 {
        if self.grid.points.iter().any(|&n| n < 3) {
            return self.eval_multilinear(cell, t);
        }
        self.cubic_axis(0, cell, t, 0)
    }

    /// Central-difference nodal gradient component along `axis`; second-order
    /// one-sided at the two boundary layers.
    pub fn node_gradient_axis(&self, flat: usize, axis: usize) -> f64 {
        let multi = self.grid.multi_index(flat);
        let n = self.grid.points[axis];
        let h = self.grid.spacing[axis];
        let s = self.grid.strides[axis];
        let i = multi[axis];
        if i == 0 {
            (-3.0 * self.values[flat] + 4.0 * self.values[flat + s] - self.values[flat + 2 * s]) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * self.values[flat] - 4.0 * self.values[flat - s] + self.values[flat - 2 * s]) / (2.0 * h)
        } else {
            (self.values[flat + s] - self.values[flat - s]) / (2.0 * h)
        }
    }

    /// Full nodal gradient.
    pub fn node_gradient(&self, flat: usize) -> Vec<f64> {
        (0..self.grid.dim()).map(|a| self.node_gradient_axis(flat, a)).collect()
    }

    /// One ScalarField per gradient component (central differences of the
    /// nodal data), carrying the requested interpolation order.
    pub fn gradient_fields(&self, interp: InterpOrder) -> Vec<ScalarField> {
        let d = self.grid.dim();
        (0..d)
            .map(|a| {
                let values: Vec<f64> = (0..self.grid.len()).map(|k| self.node_gradient_axis(k, a)).collect();
                ScalarField {
                    grid: self.grid.clone(),
                    values,
                    interp,
                }
            })
            .collect()
    }

    /// Interpolated gradient at `x`. The second return is false when any axis
    /// had to fall back to a one-sided boundary stencil (accuracy downgrade).
    pub fn gradient_with_flag(&self, x: &[f64]) -> Result<(Vec<f64>, bool)> {
        let (cell, t) = self.grid.locate(x)?;
        let d = self.grid.dim();
        // One spacing from the boundary keeps every stencil node centered.
        let centered = (0..d).all(|a| cell[a] >= 1 && cell[a] + 3 <= self.grid.points[a]);
        let mut g = vec![0.0; d];
        for a in 0..d {
            let comp = self.gradient_component_local(a, &cell, &t);
            g[a] = comp;
        }
        if !centered {
            log::debug!("gradient at {x:?} used a one-sided boundary stencil");
        }
        Ok((g, centered))
    }

    /// Gradient at `x`, interpolating nodal central differences.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.gradient_with_flag(x)?.0)
    }

    fn gradient_component_local(&self, axis: usize, cell: &[usize], t: &[f64]) -> f64 {
        // Interpolate the nodal-gradient values over the interpolation stencil.
        let d = self.grid.dim();
        match self.interp {
            InterpOrder::Multilinear => {
                let corners = 1usize << d;
                let mut acc = 0.0;
                for c in 0..corners {
                    let mut w = 1.0;
                    let mut flat = 0usize;
                    for a in 0..d {
                        let hi = (c >> a) & 1 == 1;
                        w *= if hi { t[a] } else { 1.0 - t[a] };
                        flat += (cell[a] + hi as usize) * self.grid.strides[a];
                    }
                    if w != 0.0 {
                        acc += w * self.node_gradient_axis(flat, axis);
                    }
                }
                acc
            }
            InterpOrder::Cubic => self.cubic_axis_map(0, cell, t, 0, &mut |flat| self.node_gradient_axis(flat, axis)),
        }
    }

    /// Cubic interpolation of an arbitrary nodal map (used for gradient fields).
    fn cubic_axis_map(
        &self,
        axis: usize,
        cell: &[usize],
        t: &[f64],
        flat_partial: usize,
        node_fn: &mut dyn FnMut(usize) -> f64,
    ) -> f64 {
        if self.grid.points.iter().any(|&n| n < 3) {
            // Degenerate axis: multilinear on the nodal map.
            let d = self.grid.dim();
            let corners = 1usize << d;
            let mut acc = 0.0;
            for c in 0..corners {
                let mut w = 1.0;
                let mut flat = 0usize;
                for a in 0..d {
                    let hi = (c >> a) & 1 == 1;
                    w *= if hi { t[a] } else { 1.0 - t[a] };
                    flat += (cell[a] + hi as usize) * self.grid.strides[a];
                }
                if w != 0.0 {
                    acc += w * node_fn(flat);
                }
            }
            return acc;
        }
        let n = self.grid.points[axis];
        let stride = self.grid.strides[axis];
        let i = cell[axis];
        let mut fetch = |k: isize| -> f64 {
            let idx = i as isize + k;
            let mut sample = |j: usize| {
                let flat = flat_partial + j * stride;
                if axis + 1 == self.grid.dim() {
                    node_fn(flat)
                } else {
                    self.cubic_axis_map(axis + 1, cell, t, flat, node_fn)
                }
            };
            if idx < 0 {
                3.0 * sample(0) - 3.0 * sample(1) + sample(2)
            } else if idx as usize >= n {
                3.0 * sample(n - 1) - 3.0 * sample(n - 2) + sample(n - 3)
            } else {
                sample(idx as usize)
            }
        };
        let p = [fetch(-1), fetch(0), fetch(1), fetch(2)];
        Self::catmull_rom(p, t[axis])
    }

    /// Finite-difference Hessian at an interior node (two-layer margin).
    pub fn node_hessian(&self, flat: usize) -> Result<Vec<f64>> {
        let d = self.grid.dim();
        let multi = self.grid.multi_index(flat);
        for a in 0..d {
            if multi[a] == 0 || multi[a] + 1 >= self.grid.points[a] {
                return Err(Error::DegenerateRegion(
                    "hessian stencil needs one interior layer".into(),
                ));
            }
        }
        let mut hess = vec![0.0; d * d];
        for a in 0..d {
            let sa = self.grid.strides[a];
            let ha = self.grid.spacing[a];
            hess[a * d + a] =
                (self.values[flat + sa] - 2.0 * self.values[flat] + self.values[flat - sa]) / (ha * ha);
            for b in (a + 1)..d {
                let sb = self.grid.strides[b];
                let hb = self.grid.spacing[b];
                let v = (self.values[flat + sa + sb] - self.values[flat + sa - sb]
                    - self.values[flat - sa + sb]
                    + self.values[flat - sa - sb])
                    / (4.0 * ha * hb);
                hess[a * d + b] = v;
                hess[b * d + a] = v;
            }
        }
        Ok(hess)
    }

    /// Resample this field onto another grid contained in its box.
    pub fn resample(&self, grid: BoxGrid, interp: InterpOrder) -> Result<ScalarField> {
        let values: Vec<f64> = (0..grid.len())
            .map(|k| self.eval(&grid.node_flat(k)))
            .collect::<Result<_>>()?;
        ScalarField::new(grid, values, interp)
    }

    // ---- serialization ----------------------------------------------------

    const MAGIC: &'static [u8; 4] = b"GRD1";

    /// Flat binary layout: magic, dim, interp byte, per-axis (lower, upper,
    /// points), then row-major 64-bit float payload, all little endian.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.grid.dim() as u32).to_le_bytes())?;
        let interp: u8 = match self.interp {
            InterpOrder::Multilinear => 0,
            InterpOrder::Cubic => 1,
        };
        w.write_all(&[interp, 0, 0, 0])?;
        for a in 0..self.grid.dim() {
            w.write_all(&self.grid.lower[a].to_le_bytes())?;
            w.write_all(&self.grid.upper[a].to_le_bytes())?;
            w.write_all(&(self.grid.points[a] as u32).to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<ScalarField> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("bad field magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let interp = match b4[0] {
            0 => InterpOrder::Multilinear,
            1 => InterpOrder::Cubic,
            x => return Err(Error::Format(format!("bad interp tag {x}"))),
        };
        let mut lower = vec![0.0; d];
        let mut upper = vec![0.0; d];
        let mut points = vec![0usize; d];
        let mut b8 = [0u8; 8];
        for a in 0..d {
            r.read_exact(&mut b8)?;
            lower[a] = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            upper[a] = f64::from_le_bytes(b8);
            r.read_exact(&mut b4)?;
            points[a] = u32::from_le_bytes(b4) as usize;
        }
        let grid = BoxGrid::new(lower, upper, points)?;
        let mut values = vec![0.0; grid.len()];
        for v in values.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        ScalarField::new(grid, values, interp)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut f)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<ScalarField> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_binary(&mut f)
    }

    /// CSV export: header `x0,..,x{d-1},value`, one row per node in row-major
    /// order, floats printed with full precision.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let d = self.grid.dim();
        let header: Vec<String> = (0..d).map(|a| format!("x{a}")).collect();
        writeln!(w, "{},value", header.join(","))?;
        for (k, node) in self.grid.nodes() {
            let coords: Vec<String> = node.iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(w, "{},{:.17e}", coords.join(","), self.values[k])?;
        }
        Ok(())
    }
}

/// Symmetric eigenvalue range by cyclic Jacobi; `mat` is `d x d` row-major.
pub fn sym_eig_range(mat: &[f64], d: usize) -> (f64, f64) {
    if d == 1 {
        return (mat[0], mat[0]);
    }
    let mut a = mat.to_vec();
    for _sweep in 0..32 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..d {
        lo = lo.min(a[i * d + i]);
        hi = hi.max(a[i * d + i]);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad(x: &[f64]) -> f64 {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn multilinear_exact_at_nodes() {
        let grid = BoxGrid::cube(-1.0, 1.0, 11, 2).unwrap();
        let f = ScalarField::from_fn(grid, InterpOrder::Multilinear, quad).unwrap();
        for (k, node) in f.grid().nodes() {
            assert_eq!(f.eval(&node).unwrap(), f.node_value(k));
        }
    }

    #[test]
    fn constant_field_everywhere() {
        let grid = BoxGrid::cube(-2.0, 2.0, 9, 2).unwrap();
        let f = ScalarField::from_fn(grid, InterpOrder::Multilinear, |_| 3.25).unwrap();
        assert_relative_eq!(f.eval(&[0.13, -1.4]).unwrap(), 3.25, epsilon = 1e-14);
    }

    #[test]
    fn multilinear_reproduces_affine() {
        let grid = BoxGrid::cube(-1.0, 1.0, 7, 3).unwrap();
        let f = ScalarField::from_fn(grid, InterpOrder::Multilinear, |x| {
            1.0 + 2.0 * x[0] - 0.5 * x[1] + 0.25 * x[2]
        })
        .unwrap();
        let x = [0.123, -0.456, 0.789];
        assert_relative_eq!(
            f.eval(&x).unwrap(),
            1.0 + 2.0 * x[0] - 0.5 * x[1] + 0.25 * x[2],
            epsilon = 1e-13
        );
    }

    // Quadratic field sampled on an h=0.01 grid, evaluated mid-cell: the
    // multilinear error is O(h^2). Oracle: the analytic value 1.25e-5.
    #[test]
    fn quadratic_interpolation_error_is_second_order() {
        let grid = BoxGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![201, 201]).unwrap();
        let f = ScalarField::from_fn(grid, InterpOrder::Multilinear, quad).unwrap();
        let x = [0.005, 0.0];
        let exact = 1.25e-5;
        let got = f.eval(&x).unwrap();
        let h = 0.01;
        assert!((got - exact).abs() <= h * h, "err {}", (got - exact).abs());
    }

    #[test]
    fn cubic_reproduces_quadratics_and_is_third_order_on_cubics() {
        let grid = BoxGrid::cube(-1.0, 1.0, 21, 1).unwrap();
        let q = ScalarField::from_fn(grid.clone(), InterpOrder::Cubic, |x| {
            1.5 * x[0] * x[0] - 0.5 * x[0] + 2.0
        })
        .unwrap();
        let x = [0.333];
        assert_relative_eq!(q.eval(&x).unwrap(), 1.5 * x[0] * x[0] - 0.5 * x[0] + 2.0, epsilon = 1e-13);
        // Catmull-Rom slopes are central differences, so cubics carry an
        // O(h^3) error rather than being reproduced exactly.
        let c = ScalarField::from_fn(grid, InterpOrder::Cubic, |x| x[0].powi(3)).unwrap();
        let err = (c.eval(&x).unwrap() - x[0].powi(3)).abs();
        assert!(err < 1e-3, "cubic interp error {err}");
    }

    #[test]
    fn gradient_exact_on_affine() {
        let grid = BoxGrid::cube(-1.0, 1.0, 11, 2).unwrap();
        let f = ScalarField::from_fn(grid, InterpOrder::Multilinear, |x| 3.0 * x[0] - 2.0 * x[1] + 1.0).unwrap();
        let (g, centered) = f.gradient_with_flag(&[0.17, -0.21]).unwrap();
        assert!(centered);
        assert_relative_eq!(g[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(g[1], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_exact_on_quadratic_at_node() {
        let grid = BoxGrid::new(vec![0.0, 1.0], vec![2.0, 3.0], vec![201, 201]).unwrap();
        let f = ScalarField::from_fn(grid, InterpOrder::Multilinear, quad).unwrap();
        let g = f.gradient(&[1.0, 2.0]).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-10 && (g[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn gradient_second_order_under_refinement() {
        // Max interior error of the interpolated FD gradient halves by ~4x
        // per refinement for a smooth non-polynomial function.
        let f_true = |x: &[f64]| (x[0] * 1.3).sin() * (x[1] * 0.7).cos();
        let gx = |x: &[f64]| 1.3 * (x[0] * 1.3).cos() * (x[1] * 0.7).cos();
        let err = |n: usize| -> f64 {
            let grid = BoxGrid::cube(-1.0, 1.0, n, 2).unwrap();
            let f = ScalarField::from_fn(grid, InterpOrder::Multilinear, f_true).unwrap();
            let mut e: f64 = 0.0;
            for &p in &[[-0.51, 0.304], [0.217, -0.113], [0.402, 0.351]] {
                let g = f.gradient(&p).unwrap();
                e = e.max((g[0] - gx(&p)).abs());
            }
            e
        };
        let (e1, e2) = (err(41), err(81));
        assert!(e1 / e2 >= 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn out_of_bounds_eval_is_an_error() {
        let grid = BoxGrid::cube(-1.0, 1.0, 5, 2).unwrap();
        let f = ScalarField::from_fn(grid, InterpOrder::Multilinear, quad).unwrap();
        assert!(f.eval(&[1.5, 0.0]).is_err());
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let grid = BoxGrid::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![7, 9]).unwrap();
        let f = ScalarField::from_fn(grid, InterpOrder::Cubic, |x| (x[0] + 0.3).exp() * x[1]).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let g = ScalarField::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(f.values(), g.values());
        assert_eq!(f.grid(), g.grid());
        assert_eq!(f.interp(), g.interp());
    }

    #[test]
    fn hessian_of_quadratic() {
        let grid = BoxGrid::cube(-1.0, 1.0, 21, 2).unwrap();
        let f = ScalarField::from_fn(grid, InterpOrder::Multilinear, |x| {
            x[0] * x[0] + 0.5 * x[0] * x[1] + 2.0 * x[1] * x[1]
        })
        .unwrap();
        let k = f.grid().flat_index(&[10, 10]);
        let h = f.node_hessian(k).unwrap();
        assert_relative_eq!(h[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(h[1], 0.5, epsilon = 1e-9);
        assert_relative_eq!(h[3], 4.0, epsilon = 1e-9);
        let (lo, hi) = sym_eig_range(&h, 2);
        assert!(lo > 1.8 && hi < 4.2);
    }
}
