//! Small dense/sparse linear algebra kernels: banded Cholesky, preconditioned
//! conjugate gradients and the sine-transform diagonalisation of the
//! zero-Dirichlet grid Laplacian.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Cholesky factor of a symmetric positive-definite banded matrix.
///
/// Row `i` stores entries `j ∈ [i - bw, i]` of the lower triangle.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factorises the matrix whose lower band is produced by `entry(i, j)`
    /// for `i - bw <= j <= i`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                band[i * w + (j + bw - i)] = entry(i, j);
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = band[i * w + (j + bw - i)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "matrix not positive definite at row {i} (pivot {s})"
                        )));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.band[k * w + (i + bw - k)] * x[k];
            }
            x[i] = s / self.band[i * w + bw];
        }
    }
}

/// Result of a PCG solve.
#[derive(Debug, Clone)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for a symmetric positive-definite
/// operator. Stops when `‖b − Ax‖ ≤ tol · ‖b‖`.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<PcgOutcome> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(PcgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r = vec![0.0; n];
    apply(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(PcgOutcome {
                x,
                iterations: it,
                relative_residual: res,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= tol {
        return Ok(PcgOutcome {
            x,
            iterations: max_iter,
            relative_residual: res,
        });
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// Orthonormal type-I discrete sine transform of length `m`, computed through
/// a complex FFT of length `2(m + 1)`.
#[derive(Clone)]
struct SineTransform {
    m: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl SineTransform {
    fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            m,
            fft: planner.plan_fft_forward(2 * (m + 1)),
        }
    }

    /// In-place orthonormal DST-I (its own inverse).
    fn apply(&self, x: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        let m = self.m;
        let n = 2 * (m + 1);
        buf.clear();
        buf.resize(n, Complex::new(0.0, 0.0));
        for k in 0..m {
            buf[k + 1].re = x[k];
            buf[n - 1 - k].re = -x[k];
        }
        self.fft.process(buf);
        let scale = (2.0 / (m + 1) as f64).sqrt();
        for k in 0..m {
            // FFT of the odd extension equals -2i · Σ x sin(...)
            x[k] = -0.5 * buf[k + 1].im * scale;
        }
    }
}

/// Eigen-decomposition of the zero-Dirichlet interior Laplacian on a grid.
///
/// Lets us apply any function of the Laplacian, `q(L)`, in `O(N log N)`.
#[derive(Clone)]
pub struct DirichletSpectrum {
    dim: usize,
    m: usize,
    transforms: Vec<SineTransform>,
    eig: Vec<Vec<f64>>,
}

impl DirichletSpectrum {
    pub fn new(grid: &Grid) -> Self {
        let m = grid.interior_per_axis();
        let mut transforms = Vec::new();
        let mut eig = Vec::new();
        for axis in 0..grid.dim() {
            let h = grid.spacing(axis);
            transforms.push(SineTransform::new(m));
            eig.push(
                (1..=m)
                    .map(|k| {
                        let s = (std::f64::consts::PI * k as f64 / (2.0 * (m + 1) as f64)).sin();
                        -4.0 * s * s / (h * h)
                    })
                    .collect(),
            );
        }
        Self {
            dim: grid.dim(),
            m,
            transforms,
            eig,
        }
    }

    /// Eigenvalues of the interior Laplacian (all negative).
    pub fn eigenvalues(&self) -> Vec<f64> {
        match self.dim {
            1 => self.eig[0].clone(),
            _ => {
                let mut out = Vec::with_capacity(self.m * self.m);
                for a in &self.eig[0] {
                    for b in &self.eig[1] {
                        out.push(a + b);
                    }
                }
                out
            }
        }
    }

    /// Replaces `x` by `q(L) x`.
    pub fn apply_multiplier(&self, x: &mut [f64], q: impl Fn(f64) -> f64) {
        let m = self.m;
        let mut buf = Vec::new();
        match self.dim {
            1 => {
                self.transforms[0].apply(x, &mut buf);
                for (xi, lam) in x.iter_mut().zip(&self.eig[0]) {
                    *xi *= q(*lam);
                }
                self.transforms[0].apply(x, &mut buf);
            }
            _ => {
                self.transform_2d(x, &mut buf);
                for i in 0..m {
                    for j in 0..m {
                        x[i * m + j] *= q(self.eig[0][i] + self.eig[1][j]);
                    }
                }
                self.transform_2d(x, &mut buf);
            }
        }
    }

    fn transform_2d(&self, x: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        let m = self.m;
        for row in x.chunks_mut(m) {
            self.transforms[1].apply(row, buf);
        }
        let mut col = vec![0.0; m];
        for j in 0..m {
            for i in 0..m {
                col[i] = x[i * m + j];
            }
            self.transforms[0].apply(&mut col, buf);
            for i in 0..m {
                x[i * m + j] = col[i];
            }
        }
    }
}

impl std::fmt::Debug for DirichletSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirichletSpectrum")
            .field("dim", &self.dim)
            .field("m", &self.m)
            .finish()
    }
}
