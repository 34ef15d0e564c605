//! LAN geometry at the truth, the Gaussian limit of linear functionals, and
//! the replicated BvM, coverage and contraction-rate experiments.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::grid::{l2_inner, l2_norm, Grid, GridFunction};
use crate::inference::{
    credible_ball_from_draws, credible_interval_from_draws, posterior_mean, McmcParams, PosteriorRun, Proposal, Sampler,
};
use crate::obsmodel::{observe, Observation};
use crate::pde::{information_field, riesz_representer, score, solve_forward, PotentialField, SchrodingerSystem, SolverKind};
use crate::stats::{effective_sample_size, ks_band, ks_normal, mean, median, normal_quantile, ols_slope, upper_order_statistic, variance};
use crate::testfn::{bump_dictionary, validate_dictionary, Bump, TestFunction};
use crate::wavelet::{interior_point_margin, PriorConfig, WaveletBasis, LEVEL_MARGIN};

/// Slack applied to the KS null band for autocorrelated draws.
pub const KS_SLACK: f64 = 1.5;
const SIGMA_FLOOR: f64 = 1e-12;

/// `‖DG_{f₀}[h]‖`.
pub fn lan_norm(sys: &SchrodingerSystem, u0: &GridFunction, h: &GridFunction, tol: f64) -> Result<f64> {
    Ok(l2_norm(&score(sys, u0, h, tol)?))
}

/// Centred Gaussian law of `(X(ψ_1), …, X(ψ_k))`.
#[derive(Debug, Clone)]
pub struct LimitLaw {
    pub ids: Vec<String>,
    pub sigma: DMatrix<f64>,
    root: DMatrix<f64>,
}

impl LimitLaw {
    /// Factorises `Σ` after flooring its eigenvalues at `1e-12 · max(1, λ_max)`.
    pub fn from_sigma(ids: Vec<String>, sigma: DMatrix<f64>) -> Result<Self> {
        let k = sigma.nrows();
        if sigma.ncols() != k || ids.len() != k {
            return Err(Error::InvalidArgument("covariance must be square with one id per row".into()));
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let floor = SIGMA_FLOOR * top.max(1.0);
        if eig.eigenvalues.iter().any(|&l| l < -floor) {
            return Err(Error::InvalidArgument("covariance is not positive semidefinite".into()));
        }
        let scales = eig.eigenvalues.map(|l| if l > floor { l.sqrt() } else { 0.0 });
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&scales);
        Ok(Self { ids, sigma, root })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.sigma[(i, i)]
    }

    /// Square root `R` with `R Rᵀ = Σ` (up to the eigenvalue floor).
    pub fn root(&self) -> &DMatrix<f64> {
        &self.root
    }
}

/// `Σ_ij = ⟨S_{f₀}[ψ_i/u₀], S_{f₀}[ψ_j/u₀]⟩`.
pub fn limit_covariance(sys: &SchrodingerSystem, u0: &GridFunction, dict: &[TestFunction]) -> Result<LimitLaw> {
    validate_dictionary(dict)?;
    let fields = dict
        .iter()
        .map(|t| information_field(sys, u0, &t.psi))
        .collect::<Result<Vec<_>>>()?;
    let k = dict.len();
    let mut sigma = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = l2_inner(&fields[i], &fields[j])?;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    LimitLaw::from_sigma(dict.iter().map(|t| t.id.clone()).collect(), sigma)
}

/// `n × k` matrix of draws from `N(0, Σ)`.
pub fn sample_limit_law(law: &LimitLaw, n: usize, seed: u64) -> DMatrix<f64> {
    let k = law.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, k);
    let mut z = nalgebra::DVector::zeros(k);
    for r in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = &law.root * &z;
        for c in 0..k {
            out[(r, c)] = x[c];
        }
    }
    out
}

/// The data-generating potential with its cached forward solution.
#[derive(Debug, Clone)]
pub struct Truth {
    pub f0: PotentialField,
    pub g: GridFunction,
    pub sys: SchrodingerSystem,
    pub u0: GridFunction,
}

impl Truth {
    pub fn new(f0: PotentialField, g: GridFunction, tol: f64) -> Result<Self> {
        let sys = SchrodingerSystem::new(&f0, &g, SolverKind::Auto)?;
        let u0 = solve_forward(&sys, tol)?;
        Ok(Self { f0, g, sys, u0 })
    }
}

/// Per-functional BvM summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvmReport {
    pub psi_id: String,
    /// KS distance of standardised draws to `N(0,1)`.
    pub ks: f64,
    pub ess: f64,
    /// `1.5 · 1.36/√ESS`.
    pub ks_band: f64,
    /// `(⟨f̄,ψ⟩ − ⟨f̃,ψ⟩)/ε`, with `f̃` the efficient centring.
    pub centering: f64,
    pub sigma_ii: f64,
    /// Posterior standard deviation over `ε √Σ_ii`.
    pub sd_ratio: f64,
}

/// Efficient centring `⟨f₀,ψ⟩ + ε⟨DG_{f₀}[Ψ̃], W⟩`.
pub fn efficient_center(truth: &Truth, obs: &Observation, psi: &GridFunction, tol: f64) -> Result<f64> {
    let w = obs.noise(&truth.u0)?;
    let rep = riesz_representer(&truth.sys, &truth.u0, psi)?;
    let dg = score(&truth.sys, &truth.u0, &rep, tol)?;
    Ok(l2_inner(truth.f0.f(), psi)? + obs.eps * l2_inner(&dg, &w)?)
}

/// KS, ESS and centring diagnostics of the functional draws of `run`
/// against the limit law.
pub fn bvm_diagnostic(
    run: &PosteriorRun,
    law: &LimitLaw,
    obs: &Observation,
    truth: &Truth,
    dict: &[TestFunction],
    tol: f64,
) -> Result<Vec<BvmReport>> {
    if run.functionals.len() != law.dim() || dict.len() != law.dim() {
        return Err(Error::InvalidArgument("run, law and dictionary sizes differ".into()));
    }
    (0..law.dim())
        .map(|i| {
            let x = &run.functionals[i];
            let sigma_ii = law.variance(i);
            let center = mean(x);
            let (ks, sd_ratio) = standardized_ks(x, obs.eps * sigma_ii.sqrt());
            let ess = effective_sample_size(x);
            let ftilde = efficient_center(truth, obs, &dict[i].psi, tol)?;
            Ok(BvmReport {
                psi_id: law.ids[i].clone(),
                ks,
                ess,
                ks_band: KS_SLACK * ks_band(ess),
                centering: (center - ftilde) / obs.eps,
                sigma_ii,
                sd_ratio,
            })
        })
        .collect()
}

/// KS distance of `(x − mean)/scale` to `N(0,1)` and the ratio
/// `sd(x)/scale`.
pub fn standardized_ks(x: &[f64], scale: f64) -> (f64, f64) {
    let c = mean(x);
    let z: Vec<f64> = x.iter().map(|v| (v - c) / scale).collect();
    (ks_normal(&z), variance(x).sqrt() / scale)
}

/// How the truncation level is chosen per noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelChoice {
    Fixed(u32),
    /// `J = round(−2 log₂ε/(2s+4+d))`, clamped to the grid.
    Rule,
}

/// Everything a replicated experiment needs besides the noise level.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub truth: Truth,
    pub amplitude: f64,
    pub smoothness: u32,
    pub moments: usize,
    pub coarse_level: u32,
    pub level: LevelChoice,
    pub mcmc: McmcParams,
    pub dictionary: Vec<TestFunction>,
    pub tol: f64,
}

/// Output of one simulated data set and chain.
#[derive(Debug, Clone)]
pub struct Replication {
    pub eps: f64,
    pub seed: u64,
    pub level: u32,
    pub obs: Observation,
    pub run: PosteriorRun,
    pub fbar: GridFunction,
    /// `‖f̄ − f₀‖`.
    pub error: f64,
    /// 90% posterior quantile of `‖f − f̄‖`.
    pub spread: f64,
}

impl ExperimentSpec {
    pub fn level_for(&self, eps: f64) -> u32 {
        let grid = self.truth.f0.grid();
        let max = grid.level().saturating_sub(LEVEL_MARGIN + self.coarse_level);
        match self.level {
            LevelChoice::Fixed(j) => j,
            LevelChoice::Rule => PriorConfig::level_rule(eps, self.smoothness, grid.dim(), max.max(1)),
        }
    }

    pub fn model_for(&self, eps: f64) -> Result<(WaveletBasis, PriorConfig)> {
        let level = self.level_for(eps);
        let basis = WaveletBasis::new(*self.truth.f0.grid(), self.moments, self.coarse_level, level)?;
        Ok((basis, PriorConfig::new(self.amplitude, self.smoothness, level)?))
    }

    /// `ε*` of the truth's coefficients under the prior used at `eps`.
    pub fn interior_margin(&self, eps: f64) -> Result<f64> {
        let (basis, prior) = self.model_for(eps)?;
        Ok(interior_point_margin(&basis.analyze(self.truth.f0.phi())?, &prior))
    }

    /// Fresh data at noise level `eps`, a fresh chain, and its summaries.
    pub fn replicate(&self, eps: f64, seed: u64) -> Result<Replication> {
        let (basis, prior) = self.model_for(eps)?;
        let obs = observe(&self.truth.u0, eps, derive_seed(seed, 0))?;
        let sampler = Sampler::new(&obs, &self.truth.g, prior, &basis, self.mcmc, derive_seed(seed, 1))?;
        let mut run = sampler.run(&self.dictionary)?;
        let fbar = posterior_mean(&run, &basis)?;
        let error = l2_norm(&(&fbar - self.truth.f0.f()));
        let dists = (0..run.len())
            .map(|k| Ok(l2_norm(&(&basis.synthesize(&run.tree(k)?)?.map(f64::exp) - &fbar))))
            .collect::<Result<Vec<f64>>>()?;
        let spread = upper_order_statistic(&dists, 0.9);
        run.draws.clear();
        Ok(Replication {
            eps,
            seed,
            level: prior.max_level,
            obs,
            run,
            fbar,
            error,
            spread,
        })
    }

    /// Runs `n_reps` replications concurrently; tolerates up to 5% failures.
    pub fn replicate_many(&self, eps: f64, n_reps: usize, seed: u64) -> Result<Vec<(usize, Replication)>> {
        let margin = self.interior_margin(eps)?;
        if margin <= 0.0 {
            return Err(Error::InvalidArgument(format!("truth violates the interior point condition at eps {eps} (margin {margin})")));
        }
        let results: Vec<(usize, Result<Replication>)> = (0..n_reps)
            .into_par_iter()
            .map(|rep| (rep, self.replicate(eps, derive_seed(seed, rep as u64))))
            .collect();
        let failed: Vec<String> = results
            .iter()
            .filter_map(|(_, r)| r.as_ref().err().map(|e| e.to_string()))
            .collect();
        if failed.len() * 20 > n_reps {
            return Err(Error::ReplicationFailures {
                failed: failed.len(),
                total: n_reps,
                first: failed[0].clone(),
            });
        }
        Ok(results.into_iter().filter_map(|(i, r)| r.ok().map(|r| (i, r))).collect())
    }
}

/// One row of experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    pub seed: u64,
    pub eps: f64,
    pub rep: usize,
    pub psi_id: String,
    pub value_kind: String,
    pub value: f64,
}

/// Coverage summary for one test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub psi_id: String,
    /// Empirical coverage per credibility level `β`.
    pub coverage: Vec<f64>,
    /// Mean of `ε⁻¹ R_ε` per `β`.
    pub mean_scaled_radius: Vec<f64>,
    /// `Φ⁻¹(1 − β/2) √Σ_ii` per `β`.
    pub target_scaled_radius: Vec<f64>,
    /// Variance of `ε⁻¹(⟨f̄,ψ⟩ − ⟨f₀,ψ⟩)` over replications divided by `Σ_ii`.
    pub centering_variance_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub eps: f64,
    pub betas: Vec<f64>,
    pub replications: usize,
    pub per_psi: Vec<CoverageSummary>,
    /// Coverage of the weighted credible ball per `β`.
    pub ball_coverage: Vec<f64>,
    pub mean_scaled_ball_radius: Vec<f64>,
    pub records: Vec<Record>,
}

/// Per-replication interval and ball outcomes: `(covered, scaled radius)`
/// per `(ψ, β)` and per `β` for the ball.
type CoverageOutcome = (Vec<Vec<(bool, f64)>>, Vec<(bool, f64)>, Vec<f64>);

fn coverage_outcome(functionals: &[Vec<f64>], truth_values: &[f64], weights: &[f64], betas: &[f64], eps: f64) -> Result<CoverageOutcome> {
    let mut per_psi = Vec::new();
    let mut centers = Vec::new();
    for (draws, t) in functionals.iter().zip(truth_values) {
        let mut row = Vec::new();
        for &beta in betas {
            let (c, r) = credible_interval_from_draws(draws, beta)?;
            row.push(((t - c).abs() <= r, r / eps));
        }
        centers.push(mean(draws));
        per_psi.push(row);
    }
    let mut ball = Vec::new();
    for &beta in betas {
        let r = credible_ball_from_draws(functionals, weights, beta)?;
        let dev = centers
            .iter()
            .zip(truth_values)
            .zip(weights)
            .map(|((c, t), w)| (c - t).abs() / w)
            .fold(0.0, f64::max);
        ball.push((dev <= r, r / eps));
    }
    Ok((per_psi, ball, centers))
}

/// Frequentist coverage of credible intervals and balls over replications.
pub fn coverage_experiment(spec: &ExperimentSpec, eps: f64, betas: &[f64], n_reps: usize, seed: u64) -> Result<CoverageTable> {
    if n_reps < 50 {
        return Err(Error::InvalidArgument(format!("coverage needs at least 50 replications, got {n_reps}")));
    }
    let reps = spec.replicate_many(eps, n_reps, seed)?;
    coverage_from_replications(spec, eps, betas, &reps, seed)
}

/// Coverage table from existing replications.
pub fn coverage_from_replications(
    spec: &ExperimentSpec,
    eps: f64,
    betas: &[f64],
    reps: &[(usize, Replication)],
    seed: u64,
) -> Result<CoverageTable> {
    let law = limit_covariance(&spec.truth.sys, &spec.truth.u0, &spec.dictionary)?;
    let truth_values = spec
        .dictionary
        .iter()
        .map(|t| l2_inner(spec.truth.f0.f(), &t.psi))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = spec.dictionary.iter().map(|t| t.weight).collect();
    let k = spec.dictionary.len();
    let nb = betas.len();
    let mut covered = vec![vec![0usize; nb]; k];
    let mut radius = vec![vec![0.0; nb]; k];
    let mut ball_cov = vec![0usize; nb];
    let mut ball_rad = vec![0.0; nb];
    let mut center_err = vec![Vec::new(); k];
    let mut records = Vec::new();
    for (rep, r) in reps {
        let (per_psi, ball, centers) = coverage_outcome(&r.run.functionals, &truth_values, &weights, betas, eps)?;
        for i in 0..k {
            for b in 0..nb {
                covered[i][b] += per_psi[i][b].0 as usize;
                radius[i][b] += per_psi[i][b].1;
                let id = &spec.dictionary[i].id;
                records.push(record("coverage", seed, eps, *rep, id, &format!("covered_beta{}", betas[b]), per_psi[i][b].0 as u8 as f64));
                records.push(record("coverage", seed, eps, *rep, id, &format!("scaled_radius_beta{}", betas[b]), per_psi[i][b].1));
            }
            center_err[i].push((centers[i] - truth_values[i]) / eps);
            records.push(record("coverage", seed, eps, *rep, &spec.dictionary[i].id, "scaled_center_error", (centers[i] - truth_values[i]) / eps));
        }
        for b in 0..nb {
            ball_cov[b] += ball[b].0 as usize;
            ball_rad[b] += ball[b].1;
            records.push(record("coverage", seed, eps, *rep, "ball", &format!("covered_beta{}", betas[b]), ball[b].0 as u8 as f64));
            records.push(record("coverage", seed, eps, *rep, "ball", &format!("scaled_radius_beta{}", betas[b]), ball[b].1));
        }
    }
    let n = reps.len() as f64;
    let per_psi = (0..k)
        .map(|i| CoverageSummary {
            psi_id: spec.dictionary[i].id.clone(),
            coverage: covered[i].iter().map(|&c| c as f64 / n).collect(),
            mean_scaled_radius: radius[i].iter().map(|r| r / n).collect(),
            target_scaled_radius: betas.iter().map(|b| normal_quantile(1.0 - b / 2.0) * law.variance(i).sqrt()).collect(),
            centering_variance_ratio: variance(&center_err[i]) / law.variance(i),
        })
        .collect();
    Ok(CoverageTable {
        eps,
        betas: betas.to_vec(),
        replications: reps.len(),
        per_psi,
        ball_coverage: ball_cov.iter().map(|&c| c as f64 / n).collect(),
        mean_scaled_ball_radius: ball_rad.iter().map(|r| r / n).collect(),
        records,
    })
}

fn record(experiment: &str, seed: u64, eps: f64, rep: usize, psi_id: &str, kind: &str, value: f64) -> Record {
    Record {
        experiment: experiment.into(),
        seed,
        eps,
        rep,
        psi_id: psi_id.into(),
        value_kind: kind.into(),
        value,
    }
}

/// Median summaries at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub eps: f64,
    pub level: u32,
    pub median_error: f64,
    pub median_spread: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// Least-squares slope of log median error against log ε.
    pub slope: f64,
    /// `2s/(2s+4+d)`.
    pub exponent: f64,
    pub records: Vec<Record>,
}

/// Theoretical contraction exponent `2s/(2s+4+d)`.
pub fn rate_exponent(smoothness: u32, dim: usize) -> f64 {
    2.0 * smoothness as f64 / (2.0 * smoothness as f64 + 4.0 + dim as f64)
}

/// Posterior-mean errors over a decreasing list of noise levels. Also
/// returns the replications for further diagnostics.
pub fn rate_experiment(
    spec: &ExperimentSpec,
    eps_list: &[f64],
    n_reps: usize,
    seed: u64,
) -> Result<(RateTable, Vec<Vec<(usize, Replication)>>)> {
    if eps_list.len() < 3 || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("eps list must be strictly decreasing with at least 3 entries".into()));
    }
    let mut rows = Vec::new();
    let mut all = Vec::new();
    let mut records = Vec::new();
    for (k, &eps) in eps_list.iter().enumerate() {
        let reps = spec.replicate_many(eps, n_reps, derive_seed(seed, k as u64))?;
        let errors: Vec<f64> = reps.iter().map(|(_, r)| r.error).collect();
        let spreads: Vec<f64> = reps.iter().map(|(_, r)| r.spread).collect();
        for (rep, r) in &reps {
            records.push(record("rates", seed, eps, *rep, "", "l2_error", r.error));
            records.push(record("rates", seed, eps, *rep, "", "spread_q90", r.spread));
        }
        rows.push(RateRow {
            eps,
            level: spec.level_for(eps),
            median_error: median(&errors),
            median_spread: median(&spreads),
            replications: reps.len(),
        });
        all.push(reps);
    }
    let x: Vec<f64> = rows.iter().map(|r| r.eps.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.median_error.ln()).collect();
    let dim = spec.truth.f0.grid().dim();
    Ok((
        RateTable {
            rows,
            slope: ols_slope(&x, &y),
            exponent: rate_exponent(spec.smoothness, dim),
            records,
        },
        all,
    ))
}

/// Medians of the BvM diagnostics at one noise level, over replications
/// and dictionary elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvmRow {
    pub eps: f64,
    pub median_ks: f64,
    pub median_ks_band: f64,
    pub median_ess: f64,
    pub median_sd_ratio: f64,
    pub median_abs_centering: f64,
}

/// BvM rows for replications grouped by noise level.
pub fn bvm_rows(spec: &ExperimentSpec, groups: &[Vec<(usize, Replication)>], seed: u64) -> Result<(Vec<BvmRow>, Vec<Record>)> {
    let law = limit_covariance(&spec.truth.sys, &spec.truth.u0, &spec.dictionary)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for reps in groups {
        let Some((_, first)) = reps.first() else { continue };
        let eps = first.eps;
        let (mut ks, mut band, mut ess, mut sdr, mut cen) = (vec![], vec![], vec![], vec![], vec![]);
        for (rep, r) in reps {
            for b in bvm_diagnostic(&r.run, &law, &r.obs, &spec.truth, &spec.dictionary, spec.tol)? {
                records.push(record("bvm", seed, eps, *rep, &b.psi_id, "ks", b.ks));
                records.push(record("bvm", seed, eps, *rep, &b.psi_id, "ess", b.ess));
                records.push(record("bvm", seed, eps, *rep, &b.psi_id, "sd_ratio", b.sd_ratio));
                records.push(record("bvm", seed, eps, *rep, &b.psi_id, "scaled_centering", b.centering));
                ks.push(b.ks);
                band.push(b.ks_band);
                ess.push(b.ess);
                sdr.push(b.sd_ratio);
                cen.push(b.centering.abs());
            }
        }
        rows.push(BvmRow {
            eps,
            median_ks: median(&ks),
            median_ks_band: median(&band),
            median_ess: median(&ess),
            median_sd_ratio: median(&sdr),
            median_abs_centering: median(&cen),
        });
    }
    Ok((rows, records))
}

/// Replications at each noise level followed by [`bvm_rows`].
pub fn bvm_experiment(spec: &ExperimentSpec, eps_list: &[f64], n_reps: usize, seed: u64) -> Result<(Vec<BvmRow>, Vec<Record>)> {
    let groups = eps_list
        .iter()
        .enumerate()
        .map(|(k, &eps)| spec.replicate_many(eps, n_reps, derive_seed(seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    bvm_rows(spec, &groups, seed)
}

/// Declarative form of an [`ExperimentSpec`]: the truth is
/// `f₀ = exp(bump)`, the boundary data constant, and the dictionary a row of
/// bumps along the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub grid_level: u32,
    pub coarse_level: u32,
    pub moments: usize,
    pub amplitude: f64,
    pub smoothness: u32,
    /// `None` selects the bandwidth rule.
    pub level: Option<u32>,
    pub truth_height: f64,
    pub truth_inner: f64,
    pub truth_outer: f64,
    pub boundary: f64,
    pub psi_centers: Vec<f64>,
    pub psi_inner: f64,
    pub psi_outer: f64,
    pub mcmc: McmcParams,
    pub tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            grid_level: 8,
            coarse_level: 2,
            moments: 6,
            amplitude: 3.0,
            smoothness: 3,
            level: None,
            truth_height: 0.5,
            truth_inner: 0.1,
            truth_outer: 0.35,
            boundary: 600.0,
            psi_centers: vec![0.35, 0.5, 0.65],
            psi_inner: 0.0,
            psi_outer: 0.3,
            mcmc: McmcParams {
                iterations: 100_000,
                proposal: Proposal::Laplace,
                ..McmcParams::default()
            },
            tol: 1e-10,
        }
    }
}

impl ExperimentConfig {
    pub fn build(&self) -> Result<ExperimentSpec> {
        let grid = Grid::unit(self.dim, self.grid_level)?;
        let centre = |c: f64| -> Vec<f64> {
            let mut x = vec![0.5; self.dim];
            x[0] = c;
            x
        };
        let phi0 = Bump::new(&centre(0.5), self.truth_inner, self.truth_outer, self.truth_height)?.sample(grid);
        let truth = Truth::new(PotentialField::from_log(phi0), GridFunction::constant(grid, self.boundary), self.tol)?;
        let bumps = self
            .psi_centers
            .iter()
            .map(|&c| Bump::new(&centre(c), self.psi_inner, self.psi_outer, 1.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentSpec {
            truth,
            amplitude: self.amplitude,
            smoothness: self.smoothness,
            moments: self.moments,
            coarse_level: self.coarse_level,
            level: self.level.map_or(LevelChoice::Rule, LevelChoice::Fixed),
            mcmc: self.mcmc,
            dictionary: bump_dictionary(grid, &bumps)?,
            tol: self.tol,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::testfn::{bump_dictionary, default_bumps, Bump};
    use approx::assert_relative_eq;

    fn truth(level: u32) -> Truth {
        let grid = Grid::unit(1, level).unwrap();
        let phi = Bump::new(&[0.5], 0.05, 0.3, 0.5).unwrap().sample(grid);
        Truth::new(PotentialField::from_log(phi), GridFunction::constant(grid, 1.0), 1e-12).unwrap()
    }

    #[test]
    fn lan_norm_basics() {
        let t = truth(8);
        let grid = *t.u0.grid();
        assert_eq!(lan_norm(&t.sys, &t.u0, &GridFunction::zeros(grid), 1e-12).unwrap(), 0.0);
        let psi = &bump_dictionary(grid, &default_bumps(1)).unwrap()[1].psi;
        let rep = riesz_representer(&t.sys, &t.u0, psi).unwrap();
        let n2 = lan_norm(&t.sys, &t.u0, &rep, 1e-12).unwrap().powi(2);
        assert_relative_eq!(n2, l2_inner(psi, &rep).unwrap(), max_relative = 1e-8);
        let law = limit_covariance(&t.sys, &t.u0, &bump_dictionary(grid, &default_bumps(1)).unwrap()).unwrap();
        assert_relative_eq!(law.variance(1), n2, max_relative = 1e-8);
    }

    #[test]
    fn preimage_variance_matches_analytic_operator() {
        // ψ = q·u₀ with q = ((x−a)(b−x))⁴ on [a,b], so Σ = ‖½q'' − f₀q‖²
        let t = truth(9);
        let grid = *t.u0.grid();
        let (a, b) = (0.3, 0.7);
        let q = |x: f64| if x > a && x < b { ((x - a) * (b - x)).powi(4) } else { 0.0 };
        let q2 = |x: f64| {
            if x <= a || x >= b {
                return 0.0;
            }
            let p = (x - a) * (b - x);
            let dp = a + b - 2.0 * x;
            12.0 * p * p * dp * dp - 8.0 * p.powi(3)
        };
        let f0 = |x: f64| Bump::new(&[0.5], 0.05, 0.3, 0.5).unwrap().eval(&[x]).exp();
        let psi = GridFunction::from_fn(grid, |x| q(x[0])).zip_map(&t.u0, |a, b| a * b).unwrap();
        let dict = vec![TestFunction {
            id: "pre".into(),
            psi,
            weight: 1.0,
        }];
        let law = limit_covariance(&t.sys, &t.u0, &dict).unwrap();
        let n = 200_000;
        let exact: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                (0.5 * q2(x) - f0(x) * q(x)).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        assert_relative_eq!(law.variance(0), exact, max_relative = 1e-3);
    }

    #[test]
    fn permutation_and_duplicates() {
        let t = truth(7);
        let grid = *t.u0.grid();
        let mut dict = bump_dictionary(grid, &default_bumps(1)).unwrap();
        let a = limit_covariance(&t.sys, &t.u0, &dict).unwrap();
        dict.swap(0, 2);
        let b = limit_covariance(&t.sys, &t.u0, &dict).unwrap();
        assert_relative_eq!(a.sigma[(0, 1)], b.sigma[(2, 1)], max_relative = 1e-14);
        let dup = vec![dict[0].clone(), dict[0].clone()];
        let c = limit_covariance(&t.sys, &t.u0, &dup).unwrap();
        assert_eq!(c.sigma.row(0), c.sigma.row(1));
        let draws = sample_limit_law(&c, 100, 1);
        assert!((0..100).all(|r| (draws[(r, 0)] - draws[(r, 1)]).abs() < 1e-9 * draws[(r, 0)].abs().max(1.0)));
    }

    #[test]
    fn limit_law_sampling() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let law = LimitLaw::from_sigma(vec!["a".into(), "b".into()], sigma.clone()).unwrap();
        let n = 100_000;
        let x = sample_limit_law(&law, n, 3);
        for i in 0..2 {
            for j in 0..2 {
                let c = crate::stats::covariance(&x.column(i).iter().cloned().collect::<Vec<_>>(), &x.column(j).iter().cloned().collect::<Vec<_>>());
                assert!((c / sigma[(i, j)] - 1.0).abs() < 0.05);
            }
        }
        assert_eq!(sample_limit_law(&law, 10, 4), sample_limit_law(&law, 10, 4));
        let zero = LimitLaw::from_sigma(vec!["z".into()], DMatrix::zeros(1, 1)).unwrap();
        assert!(sample_limit_law(&zero, 10, 1).iter().all(|v| *v == 0.0));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(LimitLaw::from_sigma(vec!["a".into(), "b".into()], bad).is_err());
    }

    #[test]
    fn ks_of_exact_gaussian_draws_is_in_band() {
        let law = LimitLaw::from_sigma(vec!["a".into()], DMatrix::from_element(1, 1, 4.0)).unwrap();
        let eps = 0.05;
        let x: Vec<f64> = sample_limit_law(&law, 10_000, 8).column(0).iter().map(|v| 1.3 + eps * v).collect();
        let (ks, ratio) = standardized_ks(&x, eps * 2.0);
        assert!(ks <= KS_SLACK * ks_band(10_000.0));
        assert!((ratio - 1.0).abs() < 0.03);
        // scaling the functional by 2 leaves z invariant; shifting leaves KS invariant
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v + 5.0).collect();
        assert_relative_eq!(standardized_ks(&x2, eps * 4.0).0, ks, epsilon = 1e-12);
    }

    #[test]
    fn coverage_with_gaussian_stub() {
        // posterior stub: N(truth + ε√Σ Z₀, ε²Σ) per replication; coverage ≈ 1 − β
        let sd = 0.3;
        let truth_value = [1.0];
        let n_reps = 400;
        let mut hits = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..n_reps {
            let shift: f64 = StandardNormal.sample(&mut rng);
            let draws: Vec<f64> = (0..2000)
                .map(|_| 1.0 + sd * shift + sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            let (cov, _, _) = coverage_outcome(&[draws], &truth_value, &[1.0], &[0.5], 0.1).unwrap();
            hits += cov[0][0].0 as usize;
        }
        let p = hits as f64 / n_reps as f64;
        let se = (0.25 / n_reps as f64).sqrt();
        assert!((p - 0.5).abs() <= 3.0 * se, "{p}");
    }

    #[test]
    fn default_experiment_builds_with_interior_truth() {
        let spec = ExperimentConfig::default().build().unwrap();
        assert_eq!(spec.dictionary.len(), 3);
        assert_eq!(spec.level_for(0.2), 1);
        assert_eq!(spec.level_for(0.025), 1);
        assert!(spec.interior_margin(0.025).unwrap() > 2.5);
        let bad = ExperimentConfig {
            amplitude: 1e-3,
            ..ExperimentConfig::default()
        }
        .build()
        .unwrap();
        assert!(bad.interior_margin(0.025).unwrap() < 0.0);
        assert!(bad.replicate_many(0.025, 2, 0).is_err());
    }

    #[test]
    fn exponents() {
        assert_relative_eq!(rate_exponent(3, 1), 6.0 / 11.0);
        assert_relative_eq!(rate_exponent(3, 2), 0.5);
    }
}
