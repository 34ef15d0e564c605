//! Dyadic grids on axis-aligned boxes and the discrete norms used throughout.
//!
//! A [`Grid`] of level `Jg` has `2^Jg + 1` nodes per axis, nodes `0` and
//! `2^Jg` lying on the boundary. Node values are stored row-major with axis 0
//! slowest. Quadrature is the rectangle rule over interior nodes, so for two
//! fields `a, b` the discrete inner product is `∏h_i · Σ_interior a·b`.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pcg, DirichletSpectrum};

/// Smallest admissible grid level.
pub const MIN_LEVEL: u32 = 3;
/// Largest grid level we allow (per axis); keeps 2D node counts addressable.
pub const MAX_LEVEL: u32 = 14;

/// An axis-aligned box in one or two dimensions with Dirichlet faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
}

impl Domain {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "domain dimension must be 1 or 2, got {}",
                bounds.len()
            )));
        }
        let mut lower = [0.0; 2];
        let mut upper = [1.0; 2];
        for (axis, &(a, b)) in bounds.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::InvalidArgument(format!(
                    "axis {axis}: need finite a < b, got [{a}, {b}]"
                )));
            }
            lower[axis] = a;
            upper[axis] = b;
        }
        Ok(Self {
            dim: bounds.len(),
            lower,
            upper,
        })
    }

    /// The unit interval or unit square.
    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(&vec![(0.0, 1.0); dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.length(a)).product()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.dim).map(|a| (self.lower[a], self.upper[a])).collect()
    }

    /// Whether `x` lies in the closed box.
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lower[a] && x[a] <= self.upper[a])
    }

    /// Whether `x` lies strictly inside the box.
    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|a| x[a] > self.lower[a] && x[a] < self.upper[a])
    }
}

/// Uniform dyadic grid over a [`Domain`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    domain: Domain,
    level: u32,
}

impl Grid {
    pub fn new(domain: Domain, level: u32) -> Result<Self> {
        if !(MIN_LEVEL..=MAX_LEVEL).contains(&level) {
            return Err(Error::InvalidArgument(format!(
                "grid level must lie in [{MIN_LEVEL}, {MAX_LEVEL}], got {level}"
            )));
        }
        if domain.dim() == 2 && level > 11 {
            return Err(Error::InvalidArgument(format!(
                "2D grid level {level} is too large"
            )));
        }
        Ok(Self { domain, level })
    }

    /// Unit interval/square grid; panics only on an out-of-range level.
    pub fn unit(dim: usize, level: u32) -> Result<Self> {
        Self::new(Domain::unit(dim)?, level)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Number of cells per axis, `2^Jg`.
    pub fn cells(&self) -> usize {
        1 << self.level
    }

    /// Number of nodes per axis, `2^Jg + 1`.
    pub fn nodes_per_axis(&self) -> usize {
        self.cells() + 1
    }

    /// Number of interior nodes per axis, `2^Jg - 1`.
    pub fn interior_per_axis(&self) -> usize {
        self.cells() - 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(self.dim() as u32)
    }

    pub fn interior_count(&self) -> usize {
        self.interior_per_axis().pow(self.dim() as u32)
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.domain.length(axis) / self.cells() as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim())
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Product of the spacings: the quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// One level finer over the same domain.
    pub fn refine(&self) -> Result<Self> {
        Self::new(self.domain, self.level + 1)
    }

    pub fn coarsen(&self) -> Result<Self> {
        Self::new(self.domain, self.level.saturating_sub(1))
    }

    /// Per-axis node indices of a flat node index.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let n = self.nodes_per_axis();
        match self.dim() {
            1 => [idx, 0],
            _ => [idx / n, idx % n],
        }
    }

    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        match self.dim() {
            1 => mi[0],
            _ => mi[0] * self.nodes_per_axis() + mi[1],
        }
    }

    /// Physical coordinates of a node (unused trailing entries are zero).
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        let mut x = [0.0; 2];
        for (a, xa) in x.iter_mut().enumerate().take(self.dim()) {
            *xa = self.domain.lower(a) + mi[a] as f64 * self.spacing(a);
        }
        x
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let last = self.cells();
        let mi = self.multi_index(idx);
        (0..self.dim()).any(|a| mi[a] == 0 || mi[a] == last)
    }

    /// Distance, in nodes, from a node to the nearest boundary face.
    pub fn boundary_distance(&self, idx: usize) -> usize {
        let last = self.cells();
        let mi = self.multi_index(idx);
        (0..self.dim())
            .map(|a| mi[a].min(last - mi[a]))
            .min()
            .unwrap_or(0)
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        (0..self.node_count()).map(|i| !self.is_boundary(i)).collect()
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.node_count()).map(|i| self.is_boundary(i)).collect()
    }

    /// Flat node indices of the interior nodes, in interior-vector order.
    pub fn interior_indices(&self) -> Vec<usize> {
        let m = self.interior_per_axis();
        match self.dim() {
            1 => (1..=m).collect(),
            _ => {
                let mut out = Vec::with_capacity(m * m);
                for i in 1..=m {
                    for j in 1..=m {
                        out.push(self.flat_index([i, j]));
                    }
                }
                out
            }
        }
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "level {} dim {} vs level {} dim {}",
                self.level,
                self.dim(),
                other.level,
                other.dim()
            )));
        }
        Ok(())
    }
}

/// A real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    /// Wraps node values; rejects wrong lengths and non-finite entries.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} node values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {} at node {i}",
                values[i]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.node_count()],
        }
    }

    /// Samples `f` at every node; `f` receives a slice of length `dim`.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = grid.dim();
        let values = (0..grid.node_count())
            .map(|i| f(&grid.coords(i)[..d]))
            .collect();
        Self { grid, values }
    }

    /// Zero-boundary field from an interior vector.
    pub fn from_interior(grid: Grid, interior: &[f64]) -> Self {
        debug_assert_eq!(interior.len(), grid.interior_count());
        let mut out = Self::zeros(grid);
        for (k, idx) in grid.interior_indices().into_iter().enumerate() {
            out.values[idx] = interior[k];
        }
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn interior_values(&self) -> Vec<f64> {
        self.grid
            .interior_indices()
            .into_iter()
            .map(|i| self.values[i])
            .collect()
    }

    /// Copy with every boundary node set to zero.
    pub fn with_zero_boundary(&self) -> Self {
        let mut out = self.clone();
        for i in 0..out.values.len() {
            if self.grid.is_boundary(i) {
                out.values[i] = 0.0;
            }
        }
        out
    }

    /// Copy whose boundary nodes carry the boundary values of `other`.
    pub fn with_boundary_of(&self, other: &GridFunction) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let mut out = self.clone();
        for i in 0..out.values.len() {
            if self.grid.is_boundary(i) {
                out.values[i] = other.values[i];
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn interior_min(&self) -> f64 {
        self.grid
            .interior_indices()
            .into_iter()
            .map(|i| self.values[i])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn boundary_min(&self) -> f64 {
        (0..self.values.len())
            .filter(|&i| self.grid.is_boundary(i))
            .map(|i| self.values[i])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn boundary_max(&self) -> f64 {
        (0..self.values.len())
            .filter(|&i| self.grid.is_boundary(i))
            .map(|i| self.values[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `|value|` over interior nodes.
    pub fn interior_sup(&self) -> f64 {
        self.grid
            .interior_indices()
            .into_iter()
            .map(|i| self.values[i].abs())
            .fold(0.0, f64::max)
    }

    /// Injection onto a coarser grid over the same domain (every coarse node
    /// is a fine node).
    pub fn restrict(&self, coarse: Grid) -> Result<Self> {
        if coarse.domain() != self.grid.domain() || coarse.level() > self.grid.level() {
            return Err(Error::GridMismatch("restriction needs a coarser grid on the same domain".into()));
        }
        let stride = 1usize << (self.grid.level() - coarse.level());
        let values = (0..coarse.node_count())
            .map(|i| {
                let mi = coarse.multi_index(i);
                self.values[self.grid.flat_index([mi[0] * stride, mi[1] * stride])]
            })
            .collect();
        Ok(Self { grid: coarse, values })
    }

    /// Whether the field vanishes on every node within `margin` nodes of the boundary.
    pub fn vanishes_near_boundary(&self, margin: usize) -> bool {
        (0..self.values.len())
            .filter(|&i| self.grid.boundary_distance(i) < margin)
            .all(|i| self.values[i] == 0.0)
    }
}

macro_rules! impl_binop {
    ($tr:ident, $method:ident, $op:tt) => {
        /// # Panics
        /// Panics when the operands live on different grids.
        impl $tr<&GridFunction> for &GridFunction {
            type Output = GridFunction;
            fn $method(self, rhs: &GridFunction) -> GridFunction {
                self.zip_map(rhs, |a, b| a $op b)
                    .expect("grid function operands must share a grid")
            }
        }
    };
}

impl_binop!(Add, add, +);
impl_binop!(Sub, sub, -);
impl_binop!(Mul, mul, *);

/// Discrete `L²` inner product: rectangle rule over interior nodes.
pub fn l2_inner(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(interior_dot(a, b))
}

pub(crate) fn interior_dot(a: &GridFunction, b: &GridFunction) -> f64 {
    let g = &a.grid;
    let n = g.nodes_per_axis();
    let sum: f64 = match g.dim() {
        1 => a.values[1..n - 1]
            .iter()
            .zip(&b.values[1..n - 1])
            .map(|(x, y)| x * y)
            .sum(),
        _ => (1..n - 1)
            .map(|i| {
                let r = i * n;
                a.values[r + 1..r + n - 1]
                    .iter()
                    .zip(&b.values[r + 1..r + n - 1])
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            })
            .sum(),
    };
    g.cell_volume() * sum
}

pub fn l2_norm(a: &GridFunction) -> f64 {
    interior_dot(a, a).sqrt()
}

/// Largest absolute node value.
pub fn sup_norm(a: &GridFunction) -> f64 {
    a.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Second-order central Laplacian at interior nodes; boundary output is zero.
pub fn discrete_laplacian(a: &GridFunction) -> GridFunction {
    let g = a.grid;
    let n = g.nodes_per_axis();
    let mut out = vec![0.0; g.node_count()];
    let v = &a.values;
    match g.dim() {
        1 => {
            let w = 1.0 / (g.spacing(0) * g.spacing(0));
            for i in 1..n - 1 {
                out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) * w;
            }
        }
        _ => {
            let wx = 1.0 / (g.spacing(0) * g.spacing(0));
            let wy = 1.0 / (g.spacing(1) * g.spacing(1));
            for i in 1..n - 1 {
                for j in 1..n - 1 {
                    let k = i * n + j;
                    out[k] = (v[k + n] - 2.0 * v[k] + v[k - n]) * wx
                        + (v[k + 1] - 2.0 * v[k] + v[k - 1]) * wy;
                }
            }
        }
    }
    GridFunction {
        grid: g,
        values: out,
    }
}

/// Applies the zero-Dirichlet interior Laplacian to an interior vector.
pub(crate) fn interior_laplacian(grid: &Grid, x: &[f64], out: &mut [f64]) {
    let m = grid.interior_per_axis();
    match grid.dim() {
        1 => {
            let w = 1.0 / (grid.spacing(0) * grid.spacing(0));
            for i in 0..m {
                let left = if i > 0 { x[i - 1] } else { 0.0 };
                let right = if i + 1 < m { x[i + 1] } else { 0.0 };
                out[i] = (left - 2.0 * x[i] + right) * w;
            }
        }
        _ => {
            let wx = 1.0 / (grid.spacing(0) * grid.spacing(0));
            let wy = 1.0 / (grid.spacing(1) * grid.spacing(1));
            for i in 0..m {
                for j in 0..m {
                    let k = i * m + j;
                    let up = if i > 0 { x[k - m] } else { 0.0 };
                    let down = if i + 1 < m { x[k + m] } else { 0.0 };
                    let left = if j > 0 { x[k - 1] } else { 0.0 };
                    let right = if j + 1 < m { x[k + 1] } else { 0.0 };
                    out[k] = (up - 2.0 * x[k] + down) * wx + (left - 2.0 * x[k] + right) * wy;
                }
            }
        }
    }
}

/// Iteration cap for the dual-norm CG solve.
const DUAL_NORM_MAX_ITER: usize = 500;

/// Surrogate of the `(H²_0)*` norm: `sqrt(aᵀ W M⁻¹ W a)` with `M` the Gram matrix
/// of `⟨φ,φ⟩ + ⟨Δφ,Δφ⟩` on zero-boundary fields.
///
/// `M = w (I + L²)` where `L` is the interior Laplacian and `w` the cell volume,
/// so the norm is `sqrt(w aᵀ (I + L²)⁻¹ a)`. The system is solved by CG
/// preconditioned with `(I − L)⁻²`, whose spectrum brackets `I + L²` within a
/// factor of two.
pub fn h2_dual_norm(a: &GridFunction, tol: f64) -> Result<f64> {
    let grid = a.grid;
    let rhs = a.interior_values();
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let spectrum = DirichletSpectrum::new(&grid);
    let apply = |x: &[f64], y: &mut [f64]| {
        let mut lx = vec![0.0; x.len()];
        interior_laplacian(&grid, x, &mut lx);
        interior_laplacian(&grid, &lx, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += xi;
        }
    };
    let precond = |r: &[f64], z: &mut [f64]| {
        z.copy_from_slice(r);
        spectrum.apply_multiplier(z, |lam| 1.0 / ((1.0 - lam) * (1.0 - lam)));
    };
    let out = pcg(apply, precond, &rhs, None, tol, DUAL_NORM_MAX_ITER)?;
    let q: f64 = rhs.iter().zip(&out.x).map(|(a, b)| a * b).sum();
    Ok((grid.cell_volume() * q.max(0.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn g1(level: u32) -> Grid {
        Grid::unit(1, level).unwrap()
    }

    #[test]
    fn domain_rejects_bad_bounds() {
        assert!(Domain::new(&[(1.0, 0.0)]).is_err());
        assert!(Domain::new(&[]).is_err());
        assert!(Domain::new(&[(0.0, 1.0); 3]).is_err());
        assert!(Grid::unit(1, 2).is_err());
    }

    #[test]
    fn restriction_samples_shared_nodes() {
        let fine = Grid::unit(2, 6).unwrap();
        let coarse = Grid::unit(2, 4).unwrap();
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let r = GridFunction::from_fn(fine, f).restrict(coarse).unwrap();
        assert_eq!(r, GridFunction::from_fn(coarse, f));
        assert!(GridFunction::zeros(coarse).restrict(fine).is_err());
    }

    #[test]
    fn masks_partition_nodes() {
        for dim in 1..=2 {
            let g = Grid::unit(dim, 4).unwrap();
            let interior = g.interior_mask();
            let boundary = g.boundary_mask();
            assert!(interior.iter().zip(&boundary).all(|(a, b)| a ^ b));
            let count = interior.iter().filter(|&&b| b).count();
            assert_eq!(count, g.interior_count());
            assert_eq!(count, 15usize.pow(dim as u32));
        }
    }

    #[test]
    fn inner_product_of_constants() {
        let g = g1(6);
        let one = GridFunction::constant(g, 1.0);
        let v = l2_inner(&one, &one).unwrap();
        // interior volume (1 - h)
        assert_relative_eq!(v, 1.0 - g.spacing(0), epsilon = 1e-14);
        assert_eq!(l2_inner(&GridFunction::zeros(g), &one).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_grid_mismatch() {
        let a = GridFunction::zeros(g1(4));
        let b = GridFunction::zeros(g1(5));
        assert!(matches!(l2_inner(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn quadrature_is_second_order() {
        // x(1-x) has nonzero end slopes, so the rule shows its O(h²) error
        let err = |level| {
            let a = GridFunction::from_fn(g1(level), |x| x[0] * (1.0 - x[0]));
            let one = GridFunction::constant(g1(level), 1.0);
            (l2_inner(&a, &one).unwrap() - 1.0 / 6.0).abs()
        };
        for level in 4..8 {
            let ratio = err(level) / err(level + 1);
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn sine_norm_converges() {
        // the rectangle rule is exact for sin² on a uniform grid, so the
        // error sits at rounding level
        let mut prev = f64::INFINITY;
        for level in 4..9 {
            let s = GridFunction::from_fn(g1(level), |x| (PI * x[0]).sin());
            let err = (l2_norm(&s).powi(2) - 0.5).abs();
            assert!(err <= prev.max(1e-14));
            prev = err;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn sup_norm_of_parabola() {
        let a = GridFunction::from_fn(g1(6), |x| x[0] * (1.0 - x[0]));
        assert_relative_eq!(sup_norm(&a), 0.25, epsilon = 1e-15);
        assert_eq!(sup_norm(&GridFunction::constant(g1(4), -3.0)), 3.0);
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let a = GridFunction::from_fn(g1(5), |x| x[0] * x[0]);
        let l = discrete_laplacian(&a);
        for i in g1(5).interior_indices() {
            assert_relative_eq!(l.value(i), 2.0, epsilon = 1e-9);
        }
        let g2 = Grid::unit(2, 4).unwrap();
        let b = GridFunction::from_fn(g2, |x| x[0] * x[0] + x[1] * x[1]);
        let l2 = discrete_laplacian(&b);
        for i in g2.interior_indices() {
            assert_relative_eq!(l2.value(i), 4.0, epsilon = 1e-9);
        }
        let c = discrete_laplacian(&GridFunction::constant(g2, 7.0));
        assert_eq!(sup_norm(&c), 0.0);
    }

    #[test]
    fn interior_laplacian_matches_field_laplacian() {
        let g = Grid::unit(2, 4).unwrap();
        let f = GridFunction::from_fn(g, |x| (3.0 * x[0]).sin() * x[1] * (1.0 - x[1]))
            .with_zero_boundary();
        let mut out = vec![0.0; g.interior_count()];
        interior_laplacian(&g, &f.interior_values(), &mut out);
        let direct = discrete_laplacian(&f).interior_values();
        for (a, b) in out.iter().zip(&direct) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn dual_norm_of_zero_is_zero() {
        assert_eq!(h2_dual_norm(&GridFunction::zeros(g1(5)), 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn dual_norm_on_eigenvector() {
        // Dense oracle on a tiny grid: eigenvectors of M = w(I + L²) are the
        // discrete sines v_k, with eigenvalue w(1 + λ_k²).
        let g = g1(4);
        let m = g.interior_per_axis();
        let w = g.cell_volume();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            let mut le = vec![0.0; m];
            interior_laplacian(&g, &e, &mut le);
            let mut lle = vec![0.0; m];
            interior_laplacian(&g, &le, &mut lle);
            for j in 0..m {
                dense[(j, i)] = w * (e[j] + lle[j]);
            }
        }
        let eig = nalgebra::SymmetricEigen::new(dense);
        for k in [0, 3, m - 1] {
            let vec = eig.eigenvectors.column(k).into_owned();
            let lambda = eig.eigenvalues[k];
            let field = GridFunction::from_interior(g, vec.as_slice());
            let expected = l2_norm(&field) * w.sqrt() / lambda.sqrt();
            let got = h2_dual_norm(&field, 1e-12).unwrap();
            assert_relative_eq!(got, expected, max_relative = 1e-8);
        }
    }

    #[test]
    fn laplacian_symmetric_on_zero_boundary_fields() {
        let g = Grid::unit(2, 4).unwrap();
        let a = GridFunction::from_fn(g, |x| (x[0] * 7.0).cos() + x[1]).with_zero_boundary();
        let b = GridFunction::from_fn(g, |x| (x[1] * 5.0).sin() * x[0]).with_zero_boundary();
        let lhs = l2_inner(&discrete_laplacian(&a), &b).unwrap();
        let rhs = l2_inner(&a, &discrete_laplacian(&b)).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }
}
