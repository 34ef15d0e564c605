//! Finite-difference Schrödinger operator `S_f = Δ/2 − f` with Dirichlet
//! data, its Green operator, the linearised forward map and the Riesz
//! representer of a linear functional in the LAN geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{discrete_laplacian, interior_laplacian, Grid, GridFunction};
use crate::linalg::{pcg, BandedCholesky, DirichletSpectrum};

/// Default relative tolerance for linear solves.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Node margin a test function must keep from the boundary.
pub const RIESZ_MARGIN: usize = 2;
/// Largest 2D grid level solved by banded factorization under `Auto`.
pub const DIRECT_MAX_LEVEL_2D: u32 = 8;
const PCG_MAX_ITER: usize = 5000;
const REFINEMENT_STEPS: usize = 3;

/// A positive potential `f` together with `φ = log f`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    f: GridFunction,
    phi: GridFunction,
    floor: f64,
}

impl PotentialField {
    /// Wraps `f`, checking `min f ≥ floor ≥ 0`.
    pub fn new(f: GridFunction, floor: f64) -> Result<Self> {
        if floor < 0.0 || !floor.is_finite() {
            return Err(Error::InvalidArgument(format!("potential floor must be non-negative, got {floor}")));
        }
        let min = f.min_value();
        if min < floor {
            return Err(Error::PotentialFloor { min, floor });
        }
        let phi = f.map(f64::ln);
        Ok(Self { f, phi, floor })
    }

    /// `f = exp(φ)`; always strictly positive.
    pub fn from_log(phi: GridFunction) -> Self {
        let f = phi.map(f64::exp);
        Self { f, phi, floor: 0.0 }
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        Self::new(GridFunction::constant(grid, c), 0.0)
    }

    pub fn f(&self) -> &GridFunction {
        &self.f
    }

    /// `log f`; `-inf` where `f = 0`.
    pub fn phi(&self) -> &GridFunction {
        &self.phi
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn grid(&self) -> &Grid {
        self.f.grid()
    }
}

/// How the interior system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Banded Cholesky in 1D and for 2D grids up to level 8, PCG above.
    #[default]
    Auto,
    Direct,
    /// Conjugate gradients preconditioned by the constant-potential operator.
    Iterative,
}

#[derive(Debug, Clone)]
enum Factor {
    Direct(BandedCholesky),
    Iterative { spectrum: DirichletSpectrum, shift: f64 },
}

/// Assembled interior system `A = −S_f = −Δ_h/2 + f` (symmetric positive
/// definite for `f ≥ 0`) with boundary data `g`.
#[derive(Debug, Clone)]
pub struct SchrodingerSystem {
    grid: Grid,
    potential: PotentialField,
    boundary: GridFunction,
    f_int: Vec<f64>,
    factor: Factor,
    norm_inf: f64,
}

impl SchrodingerSystem {
    /// Assembles the system; only boundary nodes of `boundary` are read.
    pub fn new(potential: &PotentialField, boundary: &GridFunction, kind: SolverKind) -> Result<Self> {
        let grid = *potential.grid();
        if boundary.grid() != &grid {
            return Err(Error::GridMismatch("potential and boundary data grids differ".into()));
        }
        let f_int = potential.f().interior_values();
        let direct = match kind {
            SolverKind::Direct => true,
            SolverKind::Iterative => false,
            SolverKind::Auto => grid.dim() == 1 || grid.level() <= DIRECT_MAX_LEVEL_2D,
        };
        let m = grid.interior_per_axis();
        let c0 = 0.5 / grid.spacing(0).powi(2);
        let c1 = if grid.dim() == 2 { 0.5 / grid.spacing(1).powi(2) } else { 0.0 };
        let diag_const = 2.0 * (c0 + c1);
        let factor = if direct {
            let bw = if grid.dim() == 1 { 1 } else { m };
            let chol = BandedCholesky::factor(f_int.len(), bw, |i, j| {
                if i == j {
                    diag_const + f_int[i]
                } else if grid.dim() == 1 {
                    -c0
                } else if i - j == m {
                    -c0
                } else if i - j == 1 && i % m != 0 {
                    -c1
                } else {
                    0.0
                }
            })?;
            Factor::Direct(chol)
        } else {
            let shift = f_int.iter().sum::<f64>() / f_int.len() as f64;
            Factor::Iterative {
                spectrum: DirichletSpectrum::new(&grid),
                shift,
            }
        };
        let fmax = f_int.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            grid,
            potential: potential.clone(),
            boundary: boundary.clone(),
            f_int,
            factor,
            norm_inf: 2.0 * diag_const + fmax,
        })
    }

    /// System with the default solver choice and boundary data `g ≡ 1`.
    pub fn homogeneous(potential: &PotentialField) -> Result<Self> {
        Self::new(potential, &GridFunction::constant(*potential.grid(), 1.0), SolverKind::Auto)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential(&self) -> &PotentialField {
        &self.potential
    }

    pub fn boundary(&self) -> &GridFunction {
        &self.boundary
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.factor, Factor::Direct(_))
    }

    /// `y = A x` on interior vectors.
    pub fn apply_matrix(&self, x: &[f64], y: &mut [f64]) {
        interior_laplacian(&self.grid, x, y);
        for ((yi, xi), fi) in y.iter_mut().zip(x).zip(&self.f_int) {
            *yi = -0.5 * *yi + fi * xi;
        }
    }

    /// Solves `A x = b` on interior vectors.
    pub fn solve_interior(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        match &self.factor {
            Factor::Direct(chol) => {
                let mut x = b.to_vec();
                chol.solve_in_place(&mut x);
                let mut r = vec![0.0; b.len()];
                for _ in 0..REFINEMENT_STEPS {
                    let err = self.backward_error(&x, b, &mut r);
                    if err <= tol {
                        return Ok(x);
                    }
                    chol.solve_in_place(&mut r);
                    x.iter_mut().zip(&r).for_each(|(xi, di)| *xi += di);
                }
                let err = self.backward_error(&x, b, &mut r);
                if err <= tol {
                    Ok(x)
                } else {
                    Err(Error::NoConvergence {
                        iterations: REFINEMENT_STEPS,
                        residual: err,
                    })
                }
            }
            Factor::Iterative { spectrum, shift } => {
                let shift = *shift;
                let out = pcg(
                    |x, y| self.apply_matrix(x, y),
                    |r, z| {
                        z.copy_from_slice(r);
                        spectrum.apply_multiplier(z, |lam| 1.0 / (shift - 0.5 * lam));
                    },
                    b,
                    None,
                    tol,
                    PCG_MAX_ITER,
                )?;
                Ok(out.x)
            }
        }
    }

    /// Normwise backward error `‖b − Ax‖ / (‖A‖‖x‖ + ‖b‖)`; leaves the
    /// residual in `r`.
    fn backward_error(&self, x: &[f64], b: &[f64], r: &mut [f64]) -> f64 {
        self.apply_matrix(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let rn = r.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let xn = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let bn = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let denom = self.norm_inf * xn + bn;
        if denom == 0.0 {
            0.0
        } else {
            rn / denom
        }
    }

    /// Right-hand side contribution of the boundary data to `A u = b`.
    fn boundary_rhs(&self) -> Vec<f64> {
        let grid = &self.grid;
        let n = grid.nodes_per_axis();
        grid.interior_indices()
            .iter()
            .map(|&idx| {
                let mi = grid.multi_index(idx);
                let mut acc = 0.0;
                for axis in 0..grid.dim() {
                    let c = 0.5 / grid.spacing(axis).powi(2);
                    for step in [-1i64, 1] {
                        let mut nb = mi;
                        nb[axis] = (mi[axis] as i64 + step) as usize;
                        if nb[axis] == 0 || nb[axis] == n - 1 {
                            acc += c * self.boundary.value(grid.flat_index(nb));
                        }
                    }
                }
                acc
            })
            .collect()
    }
}

/// Solves `Δu/2 − fu = 0`, `u = g` on the boundary.
pub fn solve_forward(sys: &SchrodingerSystem, tol: f64) -> Result<GridFunction> {
    let gmin = sys.boundary.boundary_min();
    if !(gmin > 0.0) {
        return Err(Error::BoundaryNotPositive(gmin));
    }
    let b = sys.boundary_rhs();
    let x = sys.solve_interior(&b, tol)?;
    GridFunction::from_interior(sys.grid, &x).with_boundary_of(&sys.boundary)
}

/// `S_f a = Δ_h a/2 − f a` at interior nodes (using the boundary values of
/// `a` in the stencil), zero on the boundary.
pub fn apply_sf(sys: &SchrodingerSystem, a: &GridFunction) -> Result<GridFunction> {
    if a.grid() != &sys.grid {
        return Err(Error::GridMismatch("field and system grids differ".into()));
    }
    let lap = discrete_laplacian(a);
    let f = sys.potential.f();
    let vals: Vec<f64> = (0..sys.grid.node_count())
        .map(|i| {
            if sys.grid.is_boundary(i) {
                0.0
            } else {
                0.5 * lap.value(i) - f.value(i) * a.value(i)
            }
        })
        .collect();
    GridFunction::new(sys.grid, vals)
}

/// `V_f h`: the solution of `S_f v = h` with `v = 0` on the boundary.
pub fn solve_green(sys: &SchrodingerSystem, h: &GridFunction, tol: f64) -> Result<GridFunction> {
    if h.grid() != &sys.grid {
        return Err(Error::GridMismatch("field and system grids differ".into()));
    }
    let b: Vec<f64> = h.interior_values().iter().map(|v| -v).collect();
    let x = sys.solve_interior(&b, tol)?;
    Ok(GridFunction::from_interior(sys.grid, &x))
}

/// Linearised forward map `DG_f[h] = V_f[h u_f]`.
pub fn score(sys: &SchrodingerSystem, u_f: &GridFunction, h: &GridFunction, tol: f64) -> Result<GridFunction> {
    let hu = h.zip_map(u_f, |a, b| a * b)?;
    solve_green(sys, &hu, tol)
}

fn check_margin(psi: &GridFunction) -> Result<()> {
    if psi.vanishes_near_boundary(RIESZ_MARGIN) {
        Ok(())
    } else {
        Err(Error::BoundaryMargin { margin: RIESZ_MARGIN })
    }
}

/// `S_f[ψ/u]`, the field whose squared norm is the information bound for
/// `⟨f, ψ⟩`.
pub fn information_field(sys: &SchrodingerSystem, u_f0: &GridFunction, psi: &GridFunction) -> Result<GridFunction> {
    check_margin(psi)?;
    let q = psi.zip_map(u_f0, |p, u| p / u)?.with_zero_boundary();
    apply_sf(sys, &q)
}

/// `Ψ̃ = S_f S_f[ψ/u] / u`.
pub fn riesz_representer(sys: &SchrodingerSystem, u_f0: &GridFunction, psi: &GridFunction) -> Result<GridFunction> {
    let t = information_field(sys, u_f0, psi)?;
    let tt = apply_sf(sys, &t)?;
    Ok(tt.zip_map(u_f0, |a, u| a / u)?.with_zero_boundary())
}

/// The same representer through the expanded pointwise formula
/// `[¼Δ²q − ½Δ(fq) − ½fΔq + f²q]/u`, `q = ψ/u`.
pub fn riesz_representer_expanded(
    sys: &SchrodingerSystem,
    u_f0: &GridFunction,
    psi: &GridFunction,
) -> Result<GridFunction> {
    check_margin(psi)?;
    let f = sys.potential.f();
    let q = psi.zip_map(u_f0, |p, u| p / u)?.with_zero_boundary();
    let lq = discrete_laplacian(&q);
    let llq = discrete_laplacian(&lq);
    let fq = (f * &q).with_zero_boundary();
    let lfq = discrete_laplacian(&fq);
    let vals: Vec<f64> = (0..sys.grid.node_count())
        .map(|i| {
            if sys.grid.is_boundary(i) {
                return 0.0;
            }
            let fi = f.value(i);
            let num = 0.25 * llq.value(i) - 0.5 * lfq.value(i) - 0.5 * fi * lq.value(i) + fi * fi * q.value(i);
            num / u_f0.value(i)
        })
        .collect();
    GridFunction::new(sys.grid, vals)
}

/// `f̂ = Δ_h u / (2u)` on interior nodes, or zero if `min u < floor` or
/// `sup |Δ_h u| > cap`.
pub fn invert_pointwise(u: &GridFunction, floor: f64, cap: f64) -> GridFunction {
    let grid = *u.grid();
    if !(u.interior_min() >= floor) {
        return GridFunction::zeros(grid);
    }
    let lap = discrete_laplacian(u);
    if lap.interior_sup() > cap {
        return GridFunction::zeros(grid);
    }
    let vals = (0..grid.node_count())
        .map(|i| {
            if grid.is_boundary(i) {
                0.0
            } else {
                lap.value(i) / (2.0 * u.value(i))
            }
        })
        .collect();
    GridFunction::new(grid, vals).unwrap_or_else(|_| GridFunction::zeros(grid))
}

/// Discrete mean exit time `m = V_0[−1]` of Brownian motion.
pub fn mean_exit_time(grid: Grid) -> Result<GridFunction> {
    let sys = SchrodingerSystem::homogeneous(&PotentialField::constant(grid, 0.0)?)?;
    solve_green(&sys, &GridFunction::constant(grid, -1.0), DEFAULT_TOL)
}

/// Default truncation floor `½ g_min exp(−budget · max m)`.
pub fn default_floor(g_min: f64, sup_budget: f64, grid: Grid) -> Result<f64> {
    let m = mean_exit_time(grid)?.max_value();
    Ok(0.5 * g_min * (-sup_budget * m).exp())
}

/// Default truncation cap `10 sup |Δ_h u_0|`.
pub fn default_cap(u0: &GridFunction) -> f64 {
    10.0 * discrete_laplacian(u0).interior_sup()
}

/// Convenience: `u_f` for potential `f` and boundary data `g`.
pub fn forward_map(f: &PotentialField, g: &GridFunction, tol: f64) -> Result<GridFunction> {
    let sys = SchrodingerSystem::new(f, g, SolverKind::Auto)?;
    solve_forward(&sys, tol)
}
