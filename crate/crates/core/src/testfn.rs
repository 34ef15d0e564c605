//! Smooth compactly supported test functions and weighted dictionaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::pde::RIESZ_MARGIN;
use crate::wavelet::WaveletBasis;

/// `C^∞` step: 0 for `t ≤ 0`, 1 for `t ≥ 1`.
pub fn smooth_step(t: f64) -> f64 {
    let e = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let (a, b) = (e(t), e(1.0 - t));
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Radially symmetric plateau bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    /// Radius of the region where the bump equals `amplitude`.
    pub inner: f64,
    /// Support radius.
    pub outer: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn new(center: &[f64], inner: f64, outer: f64, amplitude: f64) -> Result<Self> {
        if !(0.0 <= inner && inner < outer) {
            return Err(Error::InvalidArgument(format!(
                "bump radii must satisfy 0 <= inner < outer, got {inner}, {outer}"
            )));
        }
        let mut c = [0.0; 2];
        c[..center.len()].copy_from_slice(center);
        Ok(Self {
            center: c,
            inner,
            outer,
            amplitude,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c).powi(2))
            .sum::<f64>()
            .sqrt();
        self.amplitude * smooth_step((self.outer - r) / (self.outer - self.inner))
    }

    pub fn sample(&self, grid: Grid) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.eval(x))
    }
}

/// A test function with its weight in the dual-ball norm.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub id: String,
    pub psi: GridFunction,
    pub weight: f64,
}

/// Checks that every entry keeps the required boundary margin.
pub fn validate_dictionary(dict: &[TestFunction]) -> Result<()> {
    for t in dict {
        if !t.psi.vanishes_near_boundary(RIESZ_MARGIN) {
            return Err(Error::BoundaryMargin { margin: RIESZ_MARGIN });
        }
    }
    Ok(())
}

/// Dictionary of bumps with unit weights.
pub fn bump_dictionary(grid: Grid, bumps: &[Bump]) -> Result<Vec<TestFunction>> {
    let dict: Vec<TestFunction> = bumps
        .iter()
        .enumerate()
        .map(|(i, b)| TestFunction {
            id: format!("bump{i}"),
            psi: b.sample(grid),
            weight: 1.0,
        })
        .collect();
    validate_dictionary(&dict)?;
    Ok(dict)
}

/// Default smoothness index `α = 2 + 3d/2 + 1/2` for the ball weights.
pub fn default_alpha(dim: usize) -> f64 {
    2.0 + 1.5 * dim as f64 + 0.5
}

/// Wavelet atoms of levels `0..=max_level` that keep the boundary margin,
/// weighted by `2^{l(α + d/2)}`. Falls back to three plateau bumps when no
/// atom qualifies.
pub fn wavelet_dictionary(basis: &WaveletBasis, max_level: u32, alpha: f64) -> Result<Vec<TestFunction>> {
    let dim = basis.grid().dim();
    let mut dict = Vec::new();
    for l in 0..=max_level.min(basis.max_level()) as i32 {
        for r in 0..basis.level_count(l) {
            let psi = basis.atom(l, r)?;
            if psi.vanishes_near_boundary(RIESZ_MARGIN) {
                dict.push(TestFunction {
                    id: format!("w{l}_{r}"),
                    psi,
                    weight: (l as f64 * (alpha + dim as f64 / 2.0)).exp2(),
                });
            }
        }
    }
    if dict.is_empty() {
        return bump_dictionary(*basis.grid(), &default_bumps(dim));
    }
    Ok(dict)
}

/// Three interior plateau bumps.
pub fn default_bumps(dim: usize) -> Vec<Bump> {
    let centers: [[f64; 2]; 3] = [[0.35, 0.5], [0.5, 0.5], [0.65, 0.5]];
    centers
        .iter()
        .map(|c| Bump::new(&c[..dim], 0.05, 0.2, 1.0).expect("valid radii"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_and_bump_shape() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        let b = Bump::new(&[0.5], 0.1, 0.3, 2.0).unwrap();
        assert_eq!(b.eval(&[0.55]), 2.0);
        assert_eq!(b.eval(&[0.81]), 0.0);
        assert!(b.eval(&[0.7]) > 0.0 && b.eval(&[0.7]) < 2.0);
        assert!(Bump::new(&[0.5], 0.3, 0.1, 1.0).is_err());
    }

    #[test]
    fn dictionaries_respect_margin() {
        let grid = Grid::unit(1, 9).unwrap();
        let basis = WaveletBasis::new(grid, 6, 2, 3).unwrap();
        let d = wavelet_dictionary(&basis, 3, default_alpha(1)).unwrap();
        assert!(!d.is_empty());
        assert!(d.iter().all(|t| t.id.starts_with('w')));
        let coarse = WaveletBasis::new(Grid::unit(1, 6).unwrap(), 6, 2, 1).unwrap();
        let fallback = wavelet_dictionary(&coarse, 1, default_alpha(1)).unwrap();
        assert_eq!(fallback.len(), 3);
        let bad = Bump::new(&[0.05], 0.0, 0.1, 1.0).unwrap();
        assert!(matches!(
            bump_dictionary(grid, &[bad]),
            Err(Error::BoundaryMargin { .. })
        ));
    }
}
