//! Gaussian white-noise observations `Y = u_f + εW` on the grid and their
//! log-likelihood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{interior_dot, Grid, GridFunction};
use crate::pde::{forward_map, PotentialField};

/// Noisy field `y` with its noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: GridFunction,
    pub eps: f64,
    pub truth_id: Option<String>,
}

impl Observation {
    pub fn new(y: GridFunction, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise level must be non-negative, got {eps}")));
        }
        Ok(Self { y, eps, truth_id: None })
    }

    pub fn grid(&self) -> &Grid {
        self.y.grid()
    }

    /// The noise realisation `(y − u₀)/ε` given the noiseless field.
    pub fn noise(&self, u0: &GridFunction) -> Result<GridFunction> {
        if self.eps == 0.0 {
            return Ok(GridFunction::zeros(*self.grid()));
        }
        Ok(self.y.zip_map(u0, |y, u| (y - u) / self.eps)?.with_zero_boundary())
    }

    /// Sample size `n = ε⁻²` of the equivalent regression experiment.
    pub fn sample_size(&self) -> f64 {
        self.eps.powi(-2)
    }
}

/// Discrete white noise: independent `N(0, 1/cell volume)` at interior nodes.
pub fn white_noise<R: Rng>(grid: Grid, rng: &mut R) -> GridFunction {
    let sd = grid.cell_volume().sqrt().recip();
    let vals: Vec<f64> = (0..grid.interior_count())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    GridFunction::from_interior(grid, &vals)
}

/// `y = u + εW` with `W` drawn from `seed`; boundary nodes keep `u`.
pub fn observe(u: &GridFunction, eps: f64, seed: u64) -> Result<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = white_noise(*u.grid(), &mut rng);
    let y = u.zip_map(&w, |a, b| a + eps * b)?;
    Observation::new(y, eps)
}

/// Solves the forward problem for `f0` and adds noise.
pub fn generate_observation(
    f0: &PotentialField,
    g: &GridFunction,
    eps: f64,
    seed: u64,
    tol: f64,
) -> Result<Observation> {
    observe(&forward_map(f0, g, tol)?, eps, seed)
}

/// `ℓ(u) = (⟨Y,u⟩ − ½‖u‖²)/ε²` with interior quadrature.
pub fn log_likelihood(obs: &Observation, u: &GridFunction) -> Result<f64> {
    if obs.y.grid() != u.grid() {
        return Err(Error::GridMismatch("observation and field grids differ".into()));
    }
    if obs.eps <= 0.0 {
        return Err(Error::InvalidArgument("log-likelihood needs a positive noise level".into()));
    }
    Ok((interior_dot(&obs.y, u) - 0.5 * interior_dot(u, u)) / (obs.eps * obs.eps))
}

/// `ℓ(f) = ℓ(u_f)`.
pub fn log_likelihood_of_potential(obs: &Observation, f: &PotentialField, g: &GridFunction, tol: f64) -> Result<f64> {
    log_likelihood(obs, &forward_map(f, g, tol)?)
}
