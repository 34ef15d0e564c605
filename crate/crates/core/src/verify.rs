//! Deterministic self-checks shared by the `verify` and `oracle` commands
//! and by the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::fkoracle::{fk_forward_estimate, interpolate, PathConfig};
use crate::grid::{h2_dual_norm, l2_inner, l2_norm, sup_norm, Grid, GridFunction};
use crate::inference::{McmcParams, Proposal, Sampler};
use crate::linalg::DirichletSpectrum;
use crate::obsmodel::{log_likelihood, observe};
use crate::pde::{
    apply_sf, forward_map, mean_exit_time, riesz_representer, score, solve_green, PotentialField, SchrodingerSystem,
    SolverKind,
};
use crate::wavelet::{prior_sup_bound, sample_prior, PriorConfig, WaveletBasis};

/// Frozen regression bound for `‖V_f h‖ ≤ C ‖h‖_{(H²₀)*}`.
pub const C_DUAL_GREEN: f64 = 3.0;
/// Frozen regression bound for `‖u_f − u_h‖ ≤ c ‖f − h‖_{(H²₀)*}`.
pub const C_FORWARD_STABILITY: f64 = 4.0;
/// Frozen regression bound for `‖V_f q − V_h q‖ ≤ c ‖f − h‖ ‖q‖_∞`.
pub const C_GREEN_STABILITY: f64 = 0.1;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
            detail,
        }
    }
}

/// Settings of the invariant suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub dim: usize,
    pub level: u32,
    pub pairs: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            level: 8,
            pairs: 20,
            seed: 1,
            tol: 1e-12,
        }
    }
}

/// Smooth series `Σ a_k sin(k₁πt₁) sin(k₂πt₂)` vanishing on the boundary.
#[derive(Debug, Clone)]
pub struct SineSeries {
    terms: Vec<(f64, f64, f64)>,
}

impl SineSeries {
    /// Modes up to 5 per axis with `N(0,1)/|k|²` amplitudes.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        let k2max = if dim == 1 { 1 } else { 5 };
        for k1 in 1..=5 {
            for k2 in 1..=k2max {
                let z: f64 = rng.sample(StandardNormal);
                terms.push((k1 as f64, k2 as f64, z / (k1 * k1 + k2 * k2) as f64));
            }
        }
        Self { terms }
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        use std::f64::consts::PI;
        let t2 = t.get(1).copied();
        self.terms
            .iter()
            .map(|&(k1, k2, a)| a * (k1 * PI * t[0]).sin() * t2.map_or(1.0, |y| (k2 * PI * y).sin()))
            .sum()
    }

    pub fn sample(&self, grid: Grid) -> GridFunction {
        let d = *grid.domain();
        GridFunction::from_fn(grid, |x| {
            let t: Vec<f64> = (0..grid.dim()).map(|a| (x[a] - d.lower(a)) / d.length(a)).collect();
            self.eval(&t)
        })
    }
}

/// Smooth positive potential: a prior draw with `s = 3` and `B` chosen so
/// the coarse box has half-width 2.
pub fn random_potential(grid: Grid, seed: u64) -> Result<PotentialField> {
    let j = grid.level().saturating_sub(4).min(2);
    let basis = WaveletBasis::new(grid, 4, 1, j)?;
    let amplitude = 2f64.powf(1.0 - 3.0 - grid.dim() as f64 / 2.0);
    let (_, f) = sample_prior(&PriorConfig::new(amplitude, 3, j)?, &basis, seed)?;
    PotentialField::new(f, 0.0)
}

/// Positive boundary data `1 + ½a t₁ + ¼ sin(2πt₂ + θ)` with random `a ∈ [0,1)`, `θ`.
pub fn random_boundary(grid: Grid, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, phase): (f64, f64) = (rng.random::<f64>(), rng.random::<f64>() * 6.0);
    let d = *grid.domain();
    GridFunction::from_fn(grid, |x| {
        let t0 = (x[0] - d.lower(0)) / d.length(0);
        let t1 = if grid.dim() > 1 { (x[1] - d.lower(1)) / d.length(1) } else { 0.0 };
        1.0 + 0.5 * a * t0 + 0.25 * (2.0 * std::f64::consts::PI * t1 + phase).sin()
    })
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Relative L² errors against `cosh(2(x−½))/cosh(1)` (`f ≡ 2`, `g ≡ 1`) at
/// each level.
pub fn closed_form_errors(levels: &[u32], tol: f64) -> Result<Vec<f64>> {
    levels
        .iter()
        .map(|&lv| {
            let grid = Grid::unit(1, lv)?;
            let u = forward_map(&PotentialField::constant(grid, 2.0)?, &GridFunction::constant(grid, 1.0), tol)?;
            let exact = GridFunction::from_fn(grid, |x| (2.0 * (x[0] - 0.5)).cosh() / 1f64.cosh());
            Ok(l2_norm(&(&u - &exact)) / l2_norm(&exact))
        })
        .collect()
}

/// Closed-form solver accuracy at `Jg = 8` and the refinement ratios.
pub fn check_solver_closed_form(tol: f64) -> Result<Vec<Check>> {
    let e = closed_form_errors(&[6, 7, 8], tol)?;
    let mut out = vec![Check::at_most("solver_error_jg8", e[2], 1e-3, format!("errors {e:?}"))];
    for k in 0..2 {
        let r = e[k] / e[k + 1];
        out.push(Check {
            name: format!("solver_refinement_ratio_{}", 7 + k),
            passed: (3.0..=5.0).contains(&r),
            value: r,
            threshold: 4.0,
            detail: "ratio must lie in [3, 5]".into(),
        });
    }
    Ok(out)
}

/// `S∘V = Id`, `V∘S = Id` on zero-boundary fields and symmetry of `V`.
pub fn check_inverse_identities(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let grid = Grid::unit(cfg.dim, cfg.level)?;
    let (mut sv, mut vs, mut sym) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..cfg.pairs as u64 {
        let s = derive_seed(cfg.seed, k);
        let sys = SchrodingerSystem::homogeneous(&random_potential(grid, s)?)?;
        let h1 = SineSeries::random(cfg.dim, derive_seed(s, 1)).sample(grid);
        let h2 = SineSeries::random(cfg.dim, derive_seed(s, 2)).sample(grid);
        let v1 = solve_green(&sys, &h1, cfg.tol)?;
        let v2 = solve_green(&sys, &h2, cfg.tol)?;
        sv = sv.max(l2_norm(&(&apply_sf(&sys, &v1)? - &h1)) / l2_norm(&h1));
        let back = solve_green(&sys, &apply_sf(&sys, &h1)?, cfg.tol)?;
        vs = vs.max(l2_norm(&(&back - &h1)) / l2_norm(&h1));
        sym = sym.max(relative(l2_inner(&v1, &h2)?, l2_inner(&h1, &v2)?));
    }
    Ok(vec![
        Check::at_most("inverse_s_after_v", sv, 1e-8, format!("{} random inputs", cfg.pairs)),
        Check::at_most("inverse_v_after_s", vs, 1e-8, format!("{} random inputs", cfg.pairs)),
        Check::at_most("green_symmetry", sym, 1e-8, format!("{} random pairs", cfg.pairs)),
    ])
}

/// Worst ratios of the stability inequalities over random pairs, each
/// divided by its bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRatios {
    pub green_l2: f64,
    pub green_sup: f64,
    pub dual_green: f64,
    pub forward: f64,
    pub green_difference: f64,
    pub jensen: f64,
}

/// Largest observed constants of the stability inequalities; the first two
/// are normalised by their exact grid bounds `1/λ_min(−Δ_h/2)` and
/// `max m`, the Jensen entry is `min u_f` over its lower bound (inverted,
/// so `≤ 1` passes).
pub fn stability_ratios(cfg: &VerifyConfig) -> Result<StabilityRatios> {
    let grid = Grid::unit(cfg.dim, cfg.level)?;
    let lam_min = DirichletSpectrum::new(&grid)
        .eigenvalues()
        .iter()
        .map(|l| -0.5 * l)
        .fold(f64::INFINITY, f64::min);
    let m_max = mean_exit_time(grid)?.max_value();
    let mut r = StabilityRatios {
        green_l2: 0.0,
        green_sup: 0.0,
        dual_green: 0.0,
        forward: 0.0,
        green_difference: 0.0,
        jensen: 0.0,
    };
    for k in 0..cfg.pairs as u64 {
        let s = derive_seed(cfg.seed, 100 + k);
        let f1 = random_potential(grid, derive_seed(s, 0))?;
        let f2 = random_potential(grid, derive_seed(s, 1))?;
        let g = random_boundary(grid, derive_seed(s, 2));
        let h = SineSeries::random(cfg.dim, derive_seed(s, 3)).sample(grid);
        let sys1 = SchrodingerSystem::new(&f1, &g, SolverKind::Auto)?;
        let sys2 = SchrodingerSystem::new(&f2, &g, SolverKind::Auto)?;
        let v1 = solve_green(&sys1, &h, cfg.tol)?;
        let v2 = solve_green(&sys2, &h, cfg.tol)?;
        r.green_l2 = r.green_l2.max(l2_norm(&v1) * lam_min / l2_norm(&h));
        r.green_sup = r.green_sup.max(sup_norm(&v1) / (m_max * sup_norm(&h)));
        r.dual_green = r.dual_green.max(l2_norm(&v1) / h2_dual_norm(&h, cfg.tol)?);
        let u1 = crate::pde::solve_forward(&sys1, cfg.tol)?;
        let u2 = crate::pde::solve_forward(&sys2, cfg.tol)?;
        let df = (f1.f() - f2.f()).with_zero_boundary();
        r.forward = r.forward.max(l2_norm(&(&u1 - &u2)) / h2_dual_norm(&df, cfg.tol)?);
        r.green_difference = r.green_difference.max(l2_norm(&(&v1 - &v2)) / (l2_norm(&df) * sup_norm(&h)));
        let bound = g.boundary_min() * (-sup_norm(f1.f()) * m_max).exp();
        r.jensen = r.jensen.max(bound / u1.min_value());
    }
    Ok(r)
}

/// Stability bounds against exact grid constants and frozen calibrated ones.
pub fn check_stability(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let r = stability_ratios(cfg)?;
    let n = format!("{} random pairs", cfg.pairs);
    Ok(vec![
        Check::at_most("green_l2_bound", r.green_l2, 1.0 + 1e-9, n.clone()),
        Check::at_most("green_sup_bound", r.green_sup, 1.0 + 1e-9, n.clone()),
        Check::at_most("green_dual_norm_bound", r.dual_green, C_DUAL_GREEN, n.clone()),
        Check::at_most("forward_stability", r.forward, C_FORWARD_STABILITY, n.clone()),
        Check::at_most("green_potential_stability", r.green_difference, C_GREEN_STABILITY, n.clone()),
        Check::at_most("exit_time_lower_bound", r.jensen, 1.0, n),
    ])
}

/// `r(t) = ‖G(f+th) − G(f) − t DG_f[h]‖` at `t`, `t/2`, `t/4`.
pub fn taylor_remainders(cfg: &VerifyConfig, ts: &[f64]) -> Result<Vec<f64>> {
    let grid = Grid::unit(cfg.dim, cfg.level)?;
    let f = random_potential(grid, derive_seed(cfg.seed, 200))?;
    let g = random_boundary(grid, derive_seed(cfg.seed, 201));
    let h = SineSeries::random(cfg.dim, derive_seed(cfg.seed, 202)).sample(grid);
    let sys = SchrodingerSystem::new(&f, &g, SolverKind::Auto)?;
    let u = crate::pde::solve_forward(&sys, cfg.tol)?;
    let dg = score(&sys, &u, &h, cfg.tol)?;
    ts.iter()
        .map(|&t| {
            let ft = PotentialField::new(f.f() + &h.scale(t), 0.0)?;
            let ut = forward_map(&ft, &g, cfg.tol)?;
            Ok(l2_norm(&(&(&ut - &u) - &dg.scale(t))))
        })
        .collect()
}

/// Quadratic Taylor remainder of the forward map.
pub fn check_score_taylor(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let r = taylor_remainders(cfg, &[1e-2, 5e-3, 2.5e-3])?;
    Ok([(0, 1e-2), (1, 5e-3)]
        .iter()
        .map(|&(k, t)| {
            let q = r[k] / r[k + 1];
            Check {
                name: format!("score_taylor_ratio_t{t}"),
                passed: (3.5..=4.5).contains(&q),
                value: q,
                threshold: 4.0,
                detail: "ratio must lie in [3.5, 4.5]".into(),
            }
        })
        .collect())
}

/// `(1 − |x − ½|²/R²)⁸` inside the ball of radius `R` about the centre of
/// the unit box, zero outside.
fn poly_bump(x: &[f64], radius: f64) -> f64 {
    let r2: f64 = x.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() / (radius * radius);
    if r2 < 1.0 {
        (1.0 - r2).powi(8)
    } else {
        0.0
    }
}

/// Riesz discrepancies `max_h |⟨DG[Ψ̃],DG[h]⟩ − ⟨ψ,h⟩| / (‖ψ‖‖h‖)` at
/// each level, with `Ψ̃` computed once on a grid `fine_extra` levels finer
/// and restricted.
pub fn riesz_discrepancies(dim: usize, levels: &[u32], fine_extra: u32, n_h: usize, seed: u64, tol: f64) -> Result<Vec<f64>> {
    let top = *levels.iter().max().ok_or_else(|| Error::InvalidArgument("no levels".into()))?;
    let phi0 = |x: &[f64]| 0.5 * poly_bump(x, 0.35);
    let psi = |x: &[f64]| poly_bump(x, 0.3);
    let setup = |grid: Grid| -> Result<(SchrodingerSystem, GridFunction)> {
        let f0 = PotentialField::from_log(GridFunction::from_fn(grid, phi0));
        let g = random_boundary(grid, seed);
        let sys = SchrodingerSystem::new(&f0, &g, SolverKind::Auto)?;
        let u0 = crate::pde::solve_forward(&sys, tol)?;
        Ok((sys, u0))
    };
    let fine = Grid::unit(dim, top + fine_extra)?;
    let (sys_f, u_f) = setup(fine)?;
    let rep_fine = riesz_representer(&sys_f, &u_f, &GridFunction::from_fn(fine, psi))?;
    let hs: Vec<SineSeries> = (0..n_h).map(|k| SineSeries::random(dim, derive_seed(seed, k as u64))).collect();
    levels
        .iter()
        .map(|&lv| {
            let grid = Grid::unit(dim, lv)?;
            let (sys, u0) = setup(grid)?;
            let psi = GridFunction::from_fn(grid, psi);
            let dg_rep = score(&sys, &u0, &rep_fine.restrict(grid)?, tol)?;
            let mut worst = 0.0f64;
            for s in &hs {
                let h = s.sample(grid);
                let lhs = l2_inner(&dg_rep, &score(&sys, &u0, &h, tol)?)?;
                let rhs = l2_inner(&psi, &h)?;
                worst = worst.max((lhs - rhs).abs() / (l2_norm(&psi) * l2_norm(&h)));
            }
            Ok(worst)
        })
        .collect()
}

/// Riesz identity at the configured level and its refinement ratio.
pub fn check_riesz(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let extra = if cfg.dim == 1 { 3 } else { 2 };
    let d = riesz_discrepancies(cfg.dim, &[cfg.level - 1, cfg.level], extra, 10, derive_seed(cfg.seed, 300), cfg.tol)?;
    let ratio = d[0] / d[1];
    Ok(vec![
        Check::at_most("riesz_identity", d[1], 1e-2, format!("relative discrepancy at Jg={}", cfg.level)),
        Check {
            name: "riesz_refinement_ratio".into(),
            passed: (3.0..=5.0).contains(&ratio),
            value: ratio,
            threshold: 4.0,
            detail: format!("discrepancies {d:?}; ratio must lie in [3, 5]"),
        },
    ])
}

/// Worst relative defect of the likelihood-ratio identity.
pub fn likelihood_identity_defect(cfg: &VerifyConfig) -> Result<f64> {
    let grid = Grid::unit(cfg.dim, cfg.level)?;
    let mut worst = 0.0f64;
    for k in 0..cfg.pairs as u64 {
        let s = derive_seed(cfg.seed, 400 + k);
        let g = random_boundary(grid, derive_seed(s, 0));
        let f0 = random_potential(grid, derive_seed(s, 1))?;
        let f1 = random_potential(grid, derive_seed(s, 2))?;
        let f2 = random_potential(grid, derive_seed(s, 3))?;
        let eps = 0.05;
        let u0 = forward_map(&f0, &g, cfg.tol)?;
        let obs = observe(&u0, eps, derive_seed(s, 4))?;
        let w = obs.noise(&u0)?;
        let u1 = forward_map(&f1, &g, cfg.tol)?;
        let u2 = forward_map(&f2, &g, cfg.tol)?;
        let lhs = log_likelihood(&obs, &u1)? - log_likelihood(&obs, &u2)?;
        let d1 = l2_norm(&(&u1 - &u0)).powi(2);
        let d2 = l2_norm(&(&u2 - &u0)).powi(2);
        let rhs = -(d1 - d2) / (2.0 * eps * eps) + l2_inner(&(&u1 - &u2), &w)? / eps;
        worst = worst.max(relative(lhs, rhs));
    }
    Ok(worst)
}

pub fn check_likelihood_identity(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    Ok(vec![Check::at_most(
        "likelihood_identity",
        likelihood_identity_defect(cfg)?,
        1e-8,
        format!("{} random pairs", cfg.pairs),
    )])
}

/// Box membership and the sup bound `C(B)` over prior draws.
pub fn check_prior_support(dim: usize, n: usize, seed: u64) -> Result<Vec<Check>> {
    let grid = Grid::unit(dim, if dim == 1 { 9 } else { 7 })?;
    let basis = WaveletBasis::new(grid, 4, 1, 3)?;
    let cfg = PriorConfig::new(1.0, 3, 3)?;
    let bound = prior_sup_bound(&cfg, &basis);
    let (mut outside, mut worst) = (0usize, 0.0f64);
    for k in 0..n as u64 {
        let (tree, f) = sample_prior(&cfg, &basis, derive_seed(seed, k))?;
        outside += !cfg.contains(&tree) as usize;
        worst = worst.max(sup_norm(&f.map(f64::ln)) / bound);
    }
    Ok(vec![
        Check::at_most("prior_box_violations", outside as f64, 0.0, format!("{n} draws")),
        Check::at_most("prior_sup_over_bound", worst, 1.0, format!("{n} draws, C(B) = {bound:.4}")),
    ])
}

/// The invariant suite run by the `verify` command.
pub fn run_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    if cfg.dim == 1 {
        out.extend(check_solver_closed_form(cfg.tol)?);
    }
    out.extend(check_inverse_identities(cfg)?);
    out.extend(check_stability(cfg)?);
    out.extend(check_score_taylor(cfg)?);
    out.extend(check_riesz(cfg)?);
    out.extend(check_likelihood_identity(cfg)?);
    out.extend(check_prior_support(cfg.dim, 1000, cfg.seed)?);
    Ok(out)
}

/// One Feynman–Kac probe against the grid solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub point: Vec<f64>,
    pub pde: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    /// `(mc − pde)/stderr`.
    pub z: f64,
}

/// Settings of the Feynman–Kac cross-check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub dim: usize,
    pub level: u32,
    pub n_paths: usize,
    /// Time step as a multiple of the squared grid spacing.
    pub dt_factor: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            level: 6,
            n_paths: 100_000,
            dt_factor: 0.25,
            seed: 1,
        }
    }
}

/// Compares `u_f` at five interior nodes with Feynman–Kac estimates for one
/// prior-draw potential.
pub fn fk_cross_validation(cfg: &OracleConfig) -> Result<Vec<ProbeReport>> {
    let grid = Grid::unit(cfg.dim, cfg.level)?;
    let f = random_potential(grid, derive_seed(cfg.seed, 0))?;
    let g = random_boundary(grid, derive_seed(cfg.seed, 1));
    let u = forward_map(&f, &g, 1e-12)?;
    let dt = cfg.dt_factor * grid.min_spacing().powi(2);
    let probes: [[f64; 2]; 5] = if cfg.dim == 1 {
        [[0.2, 0.0], [0.35, 0.0], [0.5, 0.0], [0.65, 0.0], [0.8, 0.0]]
    } else {
        [[0.25, 0.5], [0.5, 0.25], [0.5, 0.5], [0.75, 0.5], [0.375, 0.625]]
    };
    probes
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let d = grid.domain();
            let x: Vec<f64> = (0..cfg.dim).map(|a| d.lower(a) + p[a] * d.length(a)).collect();
            let pc = PathConfig::new(cfg.n_paths, derive_seed(cfg.seed, 10 + k as u64)).with_dt(dt);
            let e = fk_forward_estimate(&f, &g, &x, &pc)?;
            let pde = interpolate(&u, &x);
            Ok(ProbeReport {
                point: x,
                pde,
                mc_mean: e.mean,
                mc_stderr: e.stderr,
                z: (e.mean - pde) / e.stderr,
            })
        })
        .collect()
}

/// The two-coefficient model: `j₀ = 0`, `J = 0`, `d = 1`.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub basis: WaveletBasis,
    pub prior: PriorConfig,
    pub g: GridFunction,
    pub obs: crate::obsmodel::Observation,
}

impl ToyModel {
    pub fn new(level: u32, amplitude: f64, truth: [f64; 2], eps: f64, seed: u64) -> Result<Self> {
        let grid = Grid::unit(1, level)?;
        let basis = WaveletBasis::new(grid, 4, 0, 0)?;
        let prior = PriorConfig::new(amplitude, 3, 0)?;
        let g = GridFunction::constant(grid, 1.0);
        let phi = basis.synthesize(&crate::wavelet::CoefficientTree::from_flat(1, 0, 0, &truth)?)?;
        let u0 = forward_map(&PotentialField::from_log(phi), &g, 1e-12)?;
        let obs = observe(&u0, eps, seed)?;
        Ok(Self { basis, prior, g, obs })
    }

    pub fn log_posterior(&self, b: [f64; 2]) -> Result<f64> {
        let tree = crate::wavelet::CoefficientTree::from_flat(1, 0, 0, &b)?;
        let f = PotentialField::from_log(self.basis.synthesize(&tree)?);
        log_likelihood(&self.obs, &forward_map(&f, &self.g, 1e-12)?)
    }

    /// Midpoint-rule posterior means and standard deviations of both
    /// coefficients on an `n × n` grid. A first pass over the whole prior box
    /// locates the region where the log-density is within 40 of its maximum;
    /// the second pass integrates over that region clipped to the box.
    pub fn quadrature_moments(&self, n: usize) -> Result<([f64; 2], [f64; 2])> {
        let a = [self.prior.half_width(-1, 1), self.prior.half_width(0, 1)];
        let full = [(-a[0], a[0]), (-a[1], a[1])];
        let (lp, nodes) = self.log_density_grid(full, n)?;
        let top = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut window = [(f64::INFINITY, f64::NEG_INFINITY); 2];
        for i in 0..n {
            for j in 0..n {
                if lp[i * n + j] > top - 40.0 {
                    for (k, idx) in [i, j].into_iter().enumerate() {
                        window[k].0 = window[k].0.min(nodes[k][idx]);
                        window[k].1 = window[k].1.max(nodes[k][idx]);
                    }
                }
            }
        }
        for k in 0..2 {
            let cell = 2.0 * a[k] / n as f64;
            window[k] = ((window[k].0 - cell).max(-a[k]), (window[k].1 + cell).min(a[k]));
        }
        let (lp, nodes) = self.log_density_grid(window, n)?;
        let top = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut m, mut q) = (0.0, [0.0; 2], [0.0; 2]);
        for i in 0..n {
            for j in 0..n {
                let w = (lp[i * n + j] - top).exp();
                z += w;
                for (k, v) in [nodes[0][i], nodes[1][j]].into_iter().enumerate() {
                    m[k] += w * v;
                    q[k] += w * v * v;
                }
            }
        }
        let mean = [m[0] / z, m[1] / z];
        let sd = [(q[0] / z - mean[0] * mean[0]).max(0.0).sqrt(), (q[1] / z - mean[1] * mean[1]).max(0.0).sqrt()];
        Ok((mean, sd))
    }

    fn log_density_grid(&self, window: [(f64, f64); 2], n: usize) -> Result<(Vec<f64>, [Vec<f64>; 2])> {
        let nodes = window.map(|(lo, hi)| (0..n).map(|i| lo + (i as f64 + 0.5) * (hi - lo) / n as f64).collect::<Vec<_>>());
        let mut lp = Vec::with_capacity(n * n);
        for &x in &nodes[0] {
            for &y in &nodes[1] {
                lp.push(self.log_posterior([x, y])?);
            }
        }
        Ok((lp, nodes))
    }

    /// Posterior means of both coefficients from one chain.
    pub fn mcmc_means(&self, iterations: usize, proposal: Proposal, seed: u64) -> Result<[f64; 2]> {
        let params = McmcParams {
            iterations,
            proposal,
            ..McmcParams::default()
        };
        let run = Sampler::new(&self.obs, &self.g, self.prior, &self.basis, params, seed)?.run(&[])?;
        let n = run.draws.len() as f64;
        let mut m = [0.0; 2];
        for d in &run.draws {
            m[0] += d[0] / n;
            m[1] += d[1] / n;
        }
        Ok(m)
    }
}
