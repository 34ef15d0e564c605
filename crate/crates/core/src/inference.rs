//! Posterior sampling over the prior's coefficient boxes, posterior
//! summaries and credible sets, and the least-squares plug-in estimator.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{discrete_laplacian, h2_dual_norm, interior_dot, l2_inner, GridFunction};
use crate::linalg::{pcg, DirichletSpectrum};
use crate::obsmodel::Observation;
use crate::pde::{invert_pointwise, score, solve_forward, PotentialField, SchrodingerSystem, SolverKind};
use crate::stats::upper_order_statistic;
use crate::testfn::TestFunction;
use crate::wavelet::{draw_prior_tree, CoefficientTree, PriorConfig, WaveletBasis};

/// Minimum number of draws for a credible set.
pub const MIN_DRAWS: usize = 100;
const RHO_MIN: f64 = 1e-3;
const RHO_MAX: f64 = 3.0;
const START_STEPS: usize = 50;
const START_TOL: f64 = 1e-3;
const WALL_FRACTION: f64 = 0.999;

/// Proposal family of the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposal {
    /// Isotropic reflected jitter, one level at a time.
    #[default]
    Blockwise,
    /// Joint Gaussian moves shaped by the Gauss-Newton covariance, started
    /// from a damped Gauss-Newton fit. Moves leaving the box are rejected.
    Laplace,
}

/// Sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcParams {
    /// Full sweeps over all levels.
    pub iterations: usize,
    pub burn_in_fraction: f64,
    pub max_stored: usize,
    /// Initial proposal scale relative to the box half-width.
    pub rho: f64,
    pub target_acceptance: f64,
    /// Block steps per level between scale updates during burn-in.
    pub adapt_batch: usize,
    pub tol: f64,
    pub solver: SolverKind,
    pub proposal: Proposal,
}

impl Default for McmcParams {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in_fraction: 0.2,
            max_stored: 10_000,
            rho: 0.3,
            target_acceptance: 0.25,
            adapt_batch: 50,
            tol: 1e-10,
            solver: SolverKind::Auto,
            proposal: Proposal::Blockwise,
        }
    }
}

impl McmcParams {
    pub fn burn_in(&self) -> usize {
        (self.iterations as f64 * self.burn_in_fraction).round() as usize
    }

    pub fn thinning(&self) -> usize {
        (self.iterations - self.burn_in()).div_ceil(self.max_stored.max(1)).max(1)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.burn_in_fraction) || self.iterations <= self.burn_in() {
            return Err(Error::InvalidArgument("burn-in must leave at least one iteration".into()));
        }
        if !(self.rho > 0.0) || !(0.0 < self.target_acceptance && self.target_acceptance < 1.0) {
            return Err(Error::InvalidArgument("proposal scale and target acceptance must be positive".into()));
        }
        Ok(())
    }
}

/// Folds `x` into `[-a, a]` by reflection at the walls.
pub fn reflect(x: f64, a: f64) -> f64 {
    if x.abs() <= a {
        return x;
    }
    if a == 0.0 {
        return 0.0;
    }
    let m = (x + a).rem_euclid(4.0 * a);
    let m = if m > 2.0 * a { 4.0 * a - m } else { m };
    (m - a).clamp(-a, a)
}

/// Current chain position with its cached forward solution.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub coeffs: CoefficientTree,
    pub f: GridFunction,
    pub u: GridFunction,
    pub loglik: f64,
}

/// Resumable sampler position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
    pub coeffs: Vec<f64>,
    pub rho: Vec<f64>,
    pub iteration: usize,
    pub batch_accepts: Vec<usize>,
    pub batch_steps: Vec<usize>,
    /// Column-major Cholesky factor of the Laplace proposal; empty for
    /// blockwise proposals.
    #[serde(default)]
    pub preconditioner: Vec<f64>,
}

/// Level-blocked reflected random-walk Metropolis sampler.
pub struct Sampler<'a> {
    obs: &'a Observation,
    g: &'a GridFunction,
    prior: PriorConfig,
    basis: &'a WaveletBasis,
    params: McmcParams,
    seed: u64,
    rng: ChaCha8Rng,
    state: ChainState,
    rho: Vec<f64>,
    iteration: usize,
    batch_accepts: Vec<usize>,
    batch_steps: Vec<usize>,
    accepts: Vec<usize>,
    steps: Vec<usize>,
    atoms: Vec<GridFunction>,
    half_widths: Vec<f64>,
    chol: Option<DMatrix<f64>>,
}

impl<'a> Sampler<'a> {
    /// Starts at the zero tree.
    pub fn new(
        obs: &'a Observation,
        g: &'a GridFunction,
        prior: PriorConfig,
        basis: &'a WaveletBasis,
        params: McmcParams,
        seed: u64,
    ) -> Result<Self> {
        let dim = basis.grid().dim();
        let start = CoefficientTree::zeros(dim, basis.coarse_level(), prior.max_level);
        Self::with_start(obs, g, prior, basis, params, seed, start)
    }

    /// Starts at `start`; the Laplace proposal first moves it to a damped
    /// Gauss-Newton fit.
    pub fn with_start(
        obs: &'a Observation,
        g: &'a GridFunction,
        prior: PriorConfig,
        basis: &'a WaveletBasis,
        params: McmcParams,
        seed: u64,
        start: CoefficientTree,
    ) -> Result<Self> {
        let mut s = Self::build(obs, g, prior, basis, params, seed, start)?;
        if params.proposal == Proposal::Laplace {
            s.state = s.fit(s.state.clone())?;
            s.chol = Some(s.laplace_factor(&s.state)?);
        }
        Ok(s)
    }

    fn build(
        obs: &'a Observation,
        g: &'a GridFunction,
        prior: PriorConfig,
        basis: &'a WaveletBasis,
        params: McmcParams,
        seed: u64,
        start: CoefficientTree,
    ) -> Result<Self> {
        params.validate()?;
        if obs.eps <= 0.0 {
            return Err(Error::InvalidArgument("sampling needs a positive noise level".into()));
        }
        if obs.grid() != basis.grid() || g.grid() != basis.grid() {
            return Err(Error::GridMismatch("observation, boundary data and basis grids differ".into()));
        }
        if prior.max_level > basis.max_level() {
            return Err(Error::LevelOverflow {
                level: prior.max_level as i32,
                max: basis.max_level() as i32,
            });
        }
        if !prior.contains(&start) {
            return Err(Error::InvalidArgument("start point lies outside the prior support".into()));
        }
        let dim = basis.grid().dim();
        let (atoms, half_widths) = if params.proposal == Proposal::Laplace {
            let mut atoms = Vec::new();
            let mut widths = Vec::new();
            for (l, c) in start.levels() {
                for r in 0..c.len() {
                    atoms.push(basis.atom(l, r)?);
                    widths.push(prior.half_width(l, dim));
                }
            }
            (atoms, widths)
        } else {
            (Vec::new(), Vec::new())
        };
        let levels = match params.proposal {
            Proposal::Blockwise => prior.max_level as usize + 2,
            Proposal::Laplace => 1,
        };
        let mut s = Self {
            obs,
            g,
            prior,
            basis,
            params,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: ChainState {
                f: GridFunction::zeros(*basis.grid()),
                u: GridFunction::zeros(*basis.grid()),
                coeffs: start.clone(),
                loglik: 0.0,
            },
            rho: vec![params.rho; levels],
            iteration: 0,
            batch_accepts: vec![0; levels],
            batch_steps: vec![0; levels],
            accepts: vec![0; levels],
            steps: vec![0; levels],
            atoms,
            half_widths,
            chol: None,
        };
        s.state = s.evaluate(start)?;
        Ok(s)
    }

    /// Restores a sampler from a checkpoint.
    pub fn restore(
        obs: &'a Observation,
        g: &'a GridFunction,
        prior: PriorConfig,
        basis: &'a WaveletBasis,
        params: McmcParams,
        cp: &Checkpoint,
    ) -> Result<Self> {
        let tree = CoefficientTree::from_flat(basis.grid().dim(), basis.coarse_level(), prior.max_level, &cp.coeffs)?;
        let mut s = Self::build(obs, g, prior, basis, params, cp.seed, tree)?;
        if cp.rho.len() != s.rho.len() || cp.batch_steps.len() != s.rho.len() || cp.batch_accepts.len() != s.rho.len() {
            return Err(Error::InvalidArgument("checkpoint has the wrong number of levels".into()));
        }
        if params.proposal == Proposal::Laplace {
            let k = s.half_widths.len();
            if cp.preconditioner.len() != k * k {
                return Err(Error::InvalidArgument("checkpoint lacks the Laplace preconditioner".into()));
            }
            s.chol = Some(DMatrix::from_column_slice(k, k, &cp.preconditioner));
        }
        s.rng.set_stream(cp.stream);
        s.rng.set_word_pos(cp.word_pos);
        s.rho = cp.rho.clone();
        s.iteration = cp.iteration;
        s.batch_accepts = cp.batch_accepts.clone();
        s.batch_steps = cp.batch_steps.clone();
        Ok(s)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            seed: self.seed,
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
            coeffs: self.state.coeffs.to_flat(),
            rho: self.rho.clone(),
            iteration: self.iteration,
            batch_accepts: self.batch_accepts.clone(),
            batch_steps: self.batch_steps.clone(),
            preconditioner: self.chol.as_ref().map(|c| c.as_slice().to_vec()).unwrap_or_default(),
        }
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Post-burn-in acceptance rate per level (`-1` first).
    pub fn acceptance(&self) -> Vec<f64> {
        self.accepts
            .iter()
            .zip(&self.steps)
            .map(|(&a, &n)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect()
    }

    fn evaluate(&self, coeffs: CoefficientTree) -> Result<ChainState> {
        let phi = self.basis.synthesize(&coeffs)?;
        let pot = PotentialField::from_log(phi);
        let sys = SchrodingerSystem::new(&pot, self.g, self.params.solver)?;
        let u = solve_forward(&sys, self.params.tol)?;
        let eps2 = self.obs.eps * self.obs.eps;
        let loglik = (interior_dot(&self.obs.y, &u) - 0.5 * interior_dot(&u, &u)) / eps2;
        Ok(ChainState {
            coeffs,
            f: pot.f().clone(),
            u,
            loglik,
        })
    }

    /// One Metropolis step on the coefficients of level `l`; returns whether
    /// the proposal was accepted.
    pub fn block_step(&mut self, l: i32) -> Result<bool> {
        let k = (l + 1) as usize;
        let a = self.prior.half_width(l, self.basis.grid().dim());
        let sigma = self.rho[k] * a;
        let mut prop = self.state.coeffs.clone();
        for b in prop.level_mut(l) {
            let z: f64 = self.rng.sample(StandardNormal);
            *b = reflect(*b + sigma * z, a);
        }
        let accept = self.metropolis(prop)?;
        self.tally(k, accept);
        Ok(accept)
    }

    /// One joint Laplace-shaped move of all coefficients.
    pub fn joint_step(&mut self) -> Result<bool> {
        let chol = self
            .chol
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("joint steps need the Laplace proposal".into()))?;
        let k = self.half_widths.len();
        let z = DVector::from_fn(k, |_, _| self.rng.sample::<f64, _>(StandardNormal));
        let step = chol * z * self.rho[0];
        let mut flat = self.state.coeffs.to_flat();
        let mut inside = true;
        for ((b, d), a) in flat.iter_mut().zip(step.iter()).zip(&self.half_widths) {
            *b += d;
            inside &= b.abs() <= *a;
        }
        let accept = if inside {
            let prop = CoefficientTree::from_flat(self.basis.grid().dim(), self.basis.coarse_level(), self.prior.max_level, &flat)?;
            self.metropolis(prop)?
        } else {
            // Keep the uniform draw so the stream does not depend on the wall.
            let _: f64 = self.rng.random();
            false
        };
        self.tally(0, accept);
        Ok(accept)
    }

    fn metropolis(&mut self, prop: CoefficientTree) -> Result<bool> {
        let cand = self.evaluate(prop).map_err(|e| Error::ChainFailure {
            iteration: self.iteration,
            state: self.state.coeffs.to_flat(),
            source: Box::new(e),
        })?;
        let log_u: f64 = self.rng.random::<f64>().ln();
        let accept = log_u < cand.loglik - self.state.loglik;
        if accept {
            self.state = cand;
        }
        Ok(accept)
    }

    fn tally(&mut self, k: usize, accept: bool) {
        if self.iteration < self.params.burn_in() {
            self.batch_steps[k] += 1;
            self.batch_accepts[k] += accept as usize;
            if self.batch_steps[k] == self.params.adapt_batch {
                let rate = self.batch_accepts[k] as f64 / self.batch_steps[k] as f64;
                self.rho[k] = (self.rho[k] * (2.0 * (rate - self.params.target_acceptance)).exp()).clamp(RHO_MIN, RHO_MAX);
                self.batch_steps[k] = 0;
                self.batch_accepts[k] = 0;
            }
        } else {
            self.steps[k] += 1;
            self.accepts[k] += accept as usize;
        }
    }

    /// One sweep: every level once (blockwise) or one joint move (Laplace).
    /// The Laplace covariance is refreshed at a quarter and half of burn-in.
    pub fn sweep(&mut self) -> Result<()> {
        match self.params.proposal {
            Proposal::Blockwise => {
                for l in -1..=self.prior.max_level as i32 {
                    self.block_step(l)?;
                }
            }
            Proposal::Laplace => {
                let burn = self.params.burn_in();
                if self.iteration > 0 && (self.iteration == burn / 4 || self.iteration == burn / 2) {
                    self.chol = Some(self.laplace_factor(&self.state)?);
                }
                self.joint_step()?;
            }
        }
        self.iteration += 1;
        Ok(())
    }

    /// Gauss-Newton precision (including the box variance `a²/3` per
    /// coefficient) and log-likelihood gradient at `state`.
    fn normal_equations(&self, state: &ChainState) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let pot = PotentialField::from_log(self.basis.synthesize(&state.coeffs)?);
        let sys = SchrodingerSystem::new(&pot, self.g, self.params.solver)?;
        let jac = self
            .atoms
            .iter()
            .map(|a| score(&sys, &state.u, &(a * &state.f), self.params.tol))
            .collect::<Result<Vec<_>>>()?;
        let resid = &self.obs.y - &state.u;
        let eps2 = self.obs.eps * self.obs.eps;
        let k = jac.len();
        let mut h = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..=i {
                let v = interior_dot(&jac[i], &jac[j]) / eps2;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
            h[(i, i)] += 3.0 / (self.half_widths[i] * self.half_widths[i]);
        }
        let grad = DVector::from_iterator(k, jac.iter().map(|d| interior_dot(&resid, d) / eps2));
        Ok((h, grad))
    }

    fn laplace_factor(&self, state: &ChainState) -> Result<DMatrix<f64>> {
        let (h, _) = self.normal_equations(state)?;
        let cov = h
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("Gauss-Newton precision is not positive definite".into()))?
            .inverse();
        let k = cov.nrows();
        // Symmetrise against round-off before factoring.
        let cov = (&cov + cov.transpose()) * 0.5;
        cov.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::InvalidArgument(format!("Laplace covariance of size {k} is not positive definite")))
    }

    /// Damped Gauss-Newton ascent of the log-likelihood inside the box.
    fn fit(&self, mut state: ChainState) -> Result<ChainState> {
        let mut lambda = 1e-2;
        for _ in 0..START_STEPS {
            let (h, grad) = self.normal_equations(&state)?;
            let flat = state.coeffs.to_flat();
            let mut gain = None;
            for _ in 0..10 {
                let mut m = h.clone();
                for i in 0..m.nrows() {
                    m[(i, i)] *= 1.0 + lambda;
                }
                let Some(delta) = m.cholesky().map(|c| c.solve(&grad)) else {
                    lambda *= 4.0;
                    continue;
                };
                let cand: Vec<f64> = flat
                    .iter()
                    .zip(delta.iter())
                    .zip(&self.half_widths)
                    .map(|((b, d), a)| (b + d).clamp(-WALL_FRACTION * a, WALL_FRACTION * a))
                    .collect();
                let tree = CoefficientTree::from_flat(self.basis.grid().dim(), self.basis.coarse_level(), self.prior.max_level, &cand)?;
                match self.evaluate(tree) {
                    Ok(c) if c.loglik > state.loglik => {
                        gain = Some(c.loglik - state.loglik);
                        state = c;
                        lambda = (lambda / 3.0).max(1e-9);
                        break;
                    }
                    _ => lambda *= 4.0,
                }
            }
            match gain {
                Some(g) if g > START_TOL => {}
                _ => break,
            }
        }
        Ok(state)
    }

    /// Runs to the configured iteration count, storing thinned post-burn-in
    /// draws and the functionals `⟨f, ψ_i⟩`.
    pub fn run(mut self, dictionary: &[TestFunction]) -> Result<PosteriorRun> {
        let burn = self.params.burn_in();
        let thin = self.params.thinning();
        let mut draws = Vec::new();
        let mut functionals = vec![Vec::new(); dictionary.len()];
        while self.iteration < self.params.iterations {
            self.sweep()?;
            let t = self.iteration;
            if t > burn && (t - burn) % thin == 0 {
                debug_assert!(self.prior.contains(&self.state.coeffs));
                draws.push(self.state.coeffs.to_flat());
                for (out, tf) in functionals.iter_mut().zip(dictionary) {
                    out.push(l2_inner(&self.state.f, &tf.psi)?);
                }
            }
        }
        Ok(PosteriorRun {
            draws,
            functionals,
            psi_ids: dictionary.iter().map(|t| t.id.clone()).collect(),
            acceptance: self.acceptance(),
            rho: self.rho.clone(),
            seed: self.seed,
            params: self.params,
            prior: self.prior,
            dim: self.basis.grid().dim(),
            coarse_level: self.basis.coarse_level(),
        })
    }
}

/// Stored output of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorRun {
    /// Thinned draws as level-ordered flat coefficient arrays.
    pub draws: Vec<Vec<f64>>,
    /// `functionals[i][k] = ⟨f_k, ψ_i⟩`.
    pub functionals: Vec<Vec<f64>>,
    pub psi_ids: Vec<String>,
    pub acceptance: Vec<f64>,
    pub rho: Vec<f64>,
    pub seed: u64,
    pub params: McmcParams,
    pub prior: PriorConfig,
    pub dim: usize,
    pub coarse_level: u32,
}

impl PosteriorRun {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn tree(&self, k: usize) -> Result<CoefficientTree> {
        CoefficientTree::from_flat(self.dim, self.coarse_level, self.prior.max_level, &self.draws[k])
    }
}

/// Convenience wrapper: a chain from the zero tree.
pub fn mcmc_run(
    obs: &Observation,
    g: &GridFunction,
    prior: PriorConfig,
    basis: &WaveletBasis,
    params: McmcParams,
    dictionary: &[TestFunction],
    seed: u64,
) -> Result<PosteriorRun> {
    Sampler::new(obs, g, prior, basis, params, seed)?.run(dictionary)
}

/// Node-wise average of `f = exp(φ)` over the stored draws.
pub fn posterior_mean(run: &PosteriorRun, basis: &WaveletBasis) -> Result<GridFunction> {
    if run.is_empty() {
        return Err(Error::TooFewDraws { got: 0, need: 1 });
    }
    let mut acc = vec![0.0; basis.grid().node_count()];
    for k in 0..run.len() {
        let f = basis.synthesize(&run.tree(k)?)?;
        for (a, v) in acc.iter_mut().zip(f.values()) {
            *a += v.exp();
        }
    }
    let n = run.len() as f64;
    GridFunction::new(*basis.grid(), acc.into_iter().map(|v| v / n).collect())
}

/// Centre and radius of the symmetric credible interval from functional
/// draws.
pub fn credible_interval_from_draws(draws: &[f64], beta: f64) -> Result<(f64, f64)> {
    check_beta(beta)?;
    if draws.len() < MIN_DRAWS {
        return Err(Error::TooFewDraws {
            got: draws.len(),
            need: MIN_DRAWS,
        });
    }
    let center = crate::stats::mean(draws);
    let dev: Vec<f64> = draws.iter().map(|v| (v - center).abs()).collect();
    Ok((center, upper_order_statistic(&dev, 1.0 - beta)))
}

/// Credible interval for `⟨f, ψ_i⟩`, dictionary entry `i` of the run.
pub fn credible_interval(run: &PosteriorRun, i: usize, beta: f64) -> Result<(f64, f64)> {
    let draws = run
        .functionals
        .get(i)
        .ok_or_else(|| Error::InvalidArgument(format!("no test function {i} in run")))?;
    credible_interval_from_draws(draws, beta)
}

/// Radius of the weighted max-norm ball from per-function draws.
pub fn credible_ball_from_draws(functionals: &[Vec<f64>], weights: &[f64], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let n = functionals.first().map_or(0, Vec::len);
    if n < MIN_DRAWS {
        return Err(Error::TooFewDraws { got: n, need: MIN_DRAWS });
    }
    let centers: Vec<f64> = functionals.iter().map(|d| crate::stats::mean(d)).collect();
    let stat: Vec<f64> = (0..n)
        .map(|k| {
            functionals
                .iter()
                .zip(&centers)
                .zip(weights)
                .map(|((d, c), w)| (d[k] - c).abs() / w)
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(upper_order_statistic(&stat, 1.0 - beta))
}

/// Credible ball radius over the run's dictionary with the given weights.
pub fn credible_ball_radius(run: &PosteriorRun, weights: &[f64], beta: f64) -> Result<f64> {
    if weights.len() != run.functionals.len() {
        return Err(Error::InvalidArgument("one weight per test function is required".into()));
    }
    credible_ball_from_draws(&run.functionals, weights, beta)
}

fn check_beta(beta: f64) -> Result<()> {
    if 0.0 < beta && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("beta must lie in (0,1), got {beta}")))
    }
}

/// Default penalty `λ = ε² 2^{4J}`.
pub fn default_lambda(eps: f64, level: u32) -> f64 {
    eps * eps * (4.0 * level as f64).exp2()
}

/// Minimiser of `‖u − Y‖² + λ‖Δ_h u‖²` over fields with boundary trace `g`.
pub fn least_squares_u(obs: &Observation, g: &GridFunction, lambda: f64, tol: f64) -> Result<GridFunction> {
    let grid = *obs.grid();
    if g.grid() != &grid {
        return Err(Error::GridMismatch("boundary data and observation grids differ".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalty must be non-negative, got {lambda}")));
    }
    let spectrum = DirichletSpectrum::new(&grid);
    let boundary_only = GridFunction::new(
        grid,
        (0..grid.node_count())
            .map(|i| if grid.is_boundary(i) { g.value(i) } else { 0.0 })
            .collect(),
    )?;
    let bg = discrete_laplacian(&boundary_only).interior_values();
    let mut lbg = bg.clone();
    crate::grid::interior_laplacian(&grid, &bg, &mut lbg);
    let rhs: Vec<f64> = obs
        .y
        .interior_values()
        .iter()
        .zip(&lbg)
        .map(|(y, l)| y - lambda * l)
        .collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        let mut t = vec![0.0; x.len()];
        crate::grid::interior_laplacian(&grid, x, &mut t);
        crate::grid::interior_laplacian(&grid, &t, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi + lambda * *o;
        }
    };
    let precond = |r: &[f64], z: &mut [f64]| {
        z.copy_from_slice(r);
        spectrum.apply_multiplier(z, |mu| 1.0 / (1.0 + lambda * mu * mu));
    };
    let mut x0 = rhs.clone();
    precond(&rhs, &mut x0);
    let out = pcg(apply, precond, &rhs, Some(&x0), tol, 50)?;
    GridFunction::from_interior(grid, &out.x).with_boundary_of(g)
}

/// Truncation and smoothing settings for the plug-in estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluginParams {
    pub lambda: f64,
    pub floor: f64,
    pub cap: f64,
    pub tol: f64,
}

/// `f̂ = Δû/(2û)` with truncation.
pub fn plugin_estimator(obs: &Observation, g: &GridFunction, params: &PluginParams) -> Result<GridFunction> {
    let u = least_squares_u(obs, g, params.lambda, params.tol)?;
    Ok(invert_pointwise(&u, params.floor, params.cap))
}

/// Prior Monte Carlo estimate of `Π(‖f − f₀‖_{(H²₀)*} < η)` for each `η`,
/// with binomial standard errors. The same draws serve every `η`.
pub fn prior_small_ball_curve(
    cfg: &PriorConfig,
    basis: &WaveletBasis,
    f0: &GridFunction,
    etas: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if n_samples < 1000 {
        return Err(Error::InvalidArgument(format!("need at least 1000 prior samples, got {n_samples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dist = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let tree = draw_prior_tree(cfg, basis, &mut rng)?;
        let f = basis.synthesize(&tree)?.map(f64::exp);
        dist.push(h2_dual_norm(&(&f - f0), 1e-10)?);
    }
    let n = n_samples as f64;
    Ok(etas
        .iter()
        .map(|&eta| {
            let p = dist.iter().filter(|&&d| d < eta).count() as f64 / n;
            (p, (p * (1.0 - p) / n).sqrt())
        })
        .collect())
}

/// Single-radius form of [`prior_small_ball_curve`].
pub fn prior_small_ball_probe(
    cfg: &PriorConfig,
    basis: &WaveletBasis,
    f0: &GridFunction,
    eta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    Ok(prior_small_ball_curve(cfg, basis, f0, &[eta], n_samples, seed)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_norm, Grid};
    use crate::obsmodel::observe;
    use crate::pde::forward_map;
    use crate::stats::{ks_uniform, normal_quantile};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn toy() -> (WaveletBasis, PriorConfig, GridFunction) {
        let grid = Grid::unit(1, 6).unwrap();
        let basis = WaveletBasis::new(grid, 4, 1, 1).unwrap();
        (basis, PriorConfig::new(1.0, 2, 1).unwrap(), GridFunction::constant(grid, 1.0))
    }

    fn gaussian(n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sd * rand_distr::Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect()
    }

    #[test]
    fn reflection_stays_in_box() {
        assert_eq!(reflect(0.3, 1.0), 0.3);
        assert_relative_eq!(reflect(1.2, 1.0), 0.8, epsilon = 1e-15);
        assert_relative_eq!(reflect(-1.5, 1.0), -0.5, epsilon = 1e-15);
        assert_relative_eq!(reflect(3.5, 1.0), -0.5, epsilon = 1e-15);
        assert_eq!(reflect(5.0, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn reflection_is_in_range(x in -100.0f64..100.0, a in 0.01f64..5.0) {
            let r = reflect(x, a);
            prop_assert!(r.abs() <= a);
        }
    }

    #[test]
    fn flat_likelihood_recovers_uniform_prior() {
        let (basis, prior, g) = toy();
        let u = forward_map(&PotentialField::constant(*basis.grid(), 1.0).unwrap(), &g, 1e-12).unwrap();
        let obs = observe(&u, 1e6, 1).unwrap();
        let params = McmcParams {
            iterations: 25_000,
            ..Default::default()
        };
        let run = mcmc_run(&obs, &g, prior, &basis, params, &[], 3).unwrap();
        assert_eq!(run.len(), 10_000);
        for (idx, l) in [(0, -1), (3, 0), (7, 1)] {
            let a = prior.half_width(l, 1);
            let x: Vec<f64> = run.draws.iter().map(|d| d[idx]).collect();
            assert!(ks_uniform(&x, -a, a) <= 0.05, "coefficient {idx}");
        }
    }

    #[test]
    fn chain_is_deterministic_and_resumable() {
        let (basis, prior, g) = toy();
        let u = forward_map(&PotentialField::constant(*basis.grid(), 1.5).unwrap(), &g, 1e-12).unwrap();
        let obs = observe(&u, 0.05, 2).unwrap();
        for proposal in [Proposal::Blockwise, Proposal::Laplace] {
            let params = McmcParams {
                iterations: 200,
                proposal,
                ..Default::default()
            };
            let mut a = Sampler::new(&obs, &g, prior, &basis, params, 9).unwrap();
            for _ in 0..23 {
                a.sweep().unwrap();
            }
            let cp = a.checkpoint();
            assert_eq!(cp.preconditioner.is_empty(), proposal == Proposal::Blockwise);
            let mut b = Sampler::restore(&obs, &g, prior, &basis, params, &cp).unwrap();
            for _ in 0..40 {
                a.sweep().unwrap();
                b.sweep().unwrap();
            }
            assert_eq!(a.state().coeffs, b.state().coeffs);
            let r1 = mcmc_run(&obs, &g, prior, &basis, params, &[], 4).unwrap();
            let r2 = mcmc_run(&obs, &g, prior, &basis, params, &[], 4).unwrap();
            assert_eq!(r1.draws, r2.draws);
            assert!(r1.draws.iter().all(|d| prior.contains(&CoefficientTree::from_flat(1, 1, 1, d).unwrap())));
        }
    }

    #[test]
    fn laplace_start_fits_noiseless_data() {
        let (basis, prior, g) = toy();
        let truth = CoefficientTree::from_flat(1, 1, 1, &[0.2, -0.1, 0.05, 0.1, 0.0, 0.01, -0.01, 0.0]).unwrap();
        let f = PotentialField::from_log(basis.synthesize(&truth).unwrap());
        let u = forward_map(&f, &g, 1e-12).unwrap();
        let obs = Observation::new(u, 1e-3).unwrap();
        let params = McmcParams {
            iterations: 10,
            proposal: Proposal::Laplace,
            ..Default::default()
        };
        let s = Sampler::new(&obs, &g, prior, &basis, params, 1).unwrap();
        let lap = Sampler::new(&obs, &g, prior, &basis, McmcParams { proposal: Proposal::Blockwise, ..params }, 1).unwrap();
        assert!(s.state().loglik > lap.state().loglik);
        // Within 0.1 nats of the noiseless optimum; f itself is only weakly
        // identified at the finest level.
        let best = crate::obsmodel::log_likelihood(&obs, &obs.y).unwrap();
        assert!(best - s.state().loglik < 0.1);
    }

    #[test]
    fn posterior_mean_matches_functionals() {
        let (basis, prior, g) = toy();
        let u = forward_map(&PotentialField::constant(*basis.grid(), 1.5).unwrap(), &g, 1e-12).unwrap();
        let obs = observe(&u, 0.05, 2).unwrap();
        let psi = crate::testfn::bump_dictionary(*basis.grid(), &crate::testfn::default_bumps(1)).unwrap();
        let params = McmcParams {
            iterations: 600,
            ..Default::default()
        };
        let run = mcmc_run(&obs, &g, prior, &basis, params, &psi, 5).unwrap();
        let fbar = posterior_mean(&run, &basis).unwrap();
        assert!(fbar.min_value() > 0.0);
        for (i, tf) in psi.iter().enumerate() {
            let m = crate::stats::mean(&run.functionals[i]);
            assert_relative_eq!(l2_inner(&fbar, &tf.psi).unwrap(), m, max_relative = 1e-10);
        }
    }

    #[test]
    fn credible_interval_gaussian_and_degenerate() {
        let x = gaussian(10_000, 2.0, 7);
        let (_, r) = credible_interval_from_draws(&x, 0.1).unwrap();
        assert!((r / (2.0 * normal_quantile(0.95)) - 1.0).abs() < 0.05);
        let same = vec![3.0; 200];
        assert_eq!(credible_interval_from_draws(&same, 0.1).unwrap(), (3.0, 0.0));
        assert!(matches!(
            credible_interval_from_draws(&same[..50], 0.1),
            Err(Error::TooFewDraws { .. })
        ));
        let tiny = credible_interval_from_draws(&x, 1.0 - 1e-9).unwrap().1;
        let min_dev = x.iter().map(|v| (v - crate::stats::mean(&x)).abs()).fold(f64::INFINITY, f64::min);
        assert_eq!(tiny, min_dev);
        let mut prev = f64::INFINITY;
        for beta in [0.05, 0.1, 0.3, 0.6] {
            let r = credible_interval_from_draws(&x, beta).unwrap().1;
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn credible_ball_max_of_gaussians() {
        let f = vec![gaussian(10_000, 1.0, 1), gaussian(10_000, 1.0, 2)];
        let r = credible_ball_from_draws(&f, &[1.0, 1.0], 0.1).unwrap();
        // P(max(|Z1|,|Z2|) <= r) = (2Φ(r)−1)² = 0.9
        let exact = normal_quantile(0.5 + 0.9f64.sqrt() / 2.0);
        assert!((r / exact - 1.0).abs() < 0.05, "{r} vs {exact}");
        let single = credible_ball_from_draws(&f[..1], &[1.0], 0.1).unwrap();
        assert_eq!(single, credible_interval_from_draws(&f[0], 0.1).unwrap().1);
    }

    #[test]
    fn least_squares_limits() {
        let grid = Grid::unit(1, 6).unwrap();
        let g = GridFunction::from_fn(grid, |x| 1.0 + x[0]);
        let f0 = PotentialField::from_log(GridFunction::from_fn(grid, |x| (2.0 * x[0]).sin()));
        let u0 = forward_map(&f0, &g, 1e-12).unwrap();
        let clean = Observation::new(u0.clone(), 0.1).unwrap();
        let u = least_squares_u(&clean, &g, 0.0, 1e-12).unwrap();
        assert!(l2_norm(&(&u - &u0)) < 1e-10);
        let stiff = least_squares_u(&clean, &g, 1e12, 1e-12).unwrap();
        assert!(discrete_laplacian(&stiff).interior_sup() < 1e-6);
        // smoothing beats the raw data
        let mut wins = 0;
        for rep in 0..20 {
            let obs = observe(&u0, 0.05, rep).unwrap();
            let uh = least_squares_u(&obs, &g, default_lambda(0.05, 1), 1e-10).unwrap();
            if l2_norm(&(&uh - &u0)) < l2_norm(&(&obs.y - &u0)) {
                wins += 1;
            }
        }
        assert!(wins >= 18);
    }

    #[test]
    fn plugin_truncation_branch() {
        let grid = Grid::unit(1, 6).unwrap();
        let g = GridFunction::constant(grid, 1.0);
        let obs = Observation::new(GridFunction::constant(grid, 0.01), 0.1).unwrap();
        let p = PluginParams {
            lambda: 0.0,
            floor: 0.5,
            cap: 1e9,
            tol: 1e-10,
        };
        let fh = plugin_estimator(&obs, &g, &p).unwrap();
        assert_eq!(crate::grid::sup_norm(&fh), 0.0);
    }

    #[test]
    fn small_ball_probe_limits_and_monotonicity() {
        let (basis, prior, _) = toy();
        let f0 = GridFunction::constant(*basis.grid(), 1.0);
        let etas = [0.0, 0.01, 0.05, 0.2, 1e6];
        let curve = prior_small_ball_curve(&prior, &basis, &f0, &etas, 1000, 3).unwrap();
        assert_eq!(curve[0].0, 0.0);
        assert_eq!(curve[4].0, 1.0);
        assert!(curve.windows(2).all(|w| w[0].0 <= w[1].0));
        assert!(prior_small_ball_probe(&prior, &basis, &f0, 1.0, 10, 0).is_err());
    }
}
