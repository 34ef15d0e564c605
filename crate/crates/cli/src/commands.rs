//! Subcommands. Each writes its tables through [`Artifacts`]; the caller
//! writes the manifest.

use serde::Serialize;

use schrodinger_core::asymptotics::{bvm_experiment, coverage_experiment, rate_experiment, ExperimentSpec, Record};
use schrodinger_core::derive_seed;
use schrodinger_core::grid::l2_inner;
use schrodinger_core::inference::credible_interval;
use schrodinger_core::verify::{fk_cross_validation, run_suite};
use schrodinger_core::wavelet::sample_prior;

use crate::config::RunConfig;
use crate::{io, Artifacts, CliError};

/// Largest accepted `|z|` of a Feynman–Kac probe.
pub const ORACLE_Z_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Solve the forward problem for the configured truth; dump f and u.
    Forward,
    /// Cross-check the grid solver against Feynman–Kac path averages.
    Oracle,
    /// Run the invariant suite.
    Verify,
    /// Draw from the prior at every configured noise level.
    SamplePrior,
    /// One data set and one chain per noise level.
    Mcmc,
    /// Replicated BvM diagnostics.
    Bvm,
    /// Replicated credible-set coverage.
    Coverage,
    /// Replicated contraction rates.
    Rates,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Oracle => "oracle",
            Command::Verify => "verify",
            Command::SamplePrior => "sample-prior",
            Command::Mcmc => "mcmc",
            Command::Bvm => "bvm",
            Command::Coverage => "coverage",
            Command::Rates => "rates",
        }
    }
}

pub fn run(command: Command, cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    match command {
        Command::Forward => forward(cfg, art),
        Command::Oracle => oracle(cfg, art),
        Command::Verify => verify(cfg, art),
        Command::SamplePrior => prior(cfg, art),
        Command::Mcmc => mcmc(cfg, art),
        Command::Bvm => bvm(cfg, art),
        Command::Coverage => coverage(cfg, art),
        Command::Rates => rates(cfg, art),
    }
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

fn write_records(art: &mut Artifacts, name: &str, records: &[Record]) -> Result<(), CliError> {
    let mut w = art.csv(name)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows<T: Serialize>(art: &mut Artifacts, name: &str, rows: &[T]) -> Result<(), CliError> {
    let mut w = art.csv(name)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn axis_headers(dim: usize) -> Vec<String> {
    (0..dim).map(|a| format!("x{a}")).collect()
}

fn forward(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let spec = cfg.experiment.build().map_err(|e| CliError::Config(format!("experiment: {e}")))?;
    let t = &spec.truth;
    io::write_field(&art.path("f.field"), t.f0.f())?;
    io::write_field(&art.path("u.field"), &t.u0)?;
    let grid = *t.u0.grid();
    let dim = grid.dim();
    let mut w = art.csv("forward.csv")?;
    let mut header: Vec<String> = ["experiment", "seed", "eps", "node"].map(String::from).to_vec();
    header.extend(axis_headers(dim));
    header.extend(["f", "u"].map(String::from));
    w.write_record(&header)?;
    for k in 0..grid.node_count() {
        let x = grid.coords(k);
        let mut row = vec!["forward".to_string(), cfg.seed.to_string(), String::new(), k.to_string()];
        row.extend(x[..dim].iter().map(|v| v.to_string()));
        row.push(t.f0.f().values()[k].to_string());
        row.push(t.u0.values()[k].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    art.progress(&format!("forward: {} nodes, min u {:.6}", grid.node_count(), t.u0.interior_min()));
    Ok(())
}

fn oracle(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let reports = fk_cross_validation(&cfg.oracle)?;
    let dim = cfg.oracle.dim;
    let mut w = art.csv("oracle.csv")?;
    let mut header: Vec<String> = ["experiment", "seed", "eps", "probe"].map(String::from).to_vec();
    header.extend(axis_headers(dim));
    header.extend(["pde", "mc_mean", "mc_stderr", "z"].map(String::from));
    w.write_record(&header)?;
    for (k, r) in reports.iter().enumerate() {
        let mut row = vec!["oracle".to_string(), cfg.oracle.seed.to_string(), String::new(), k.to_string()];
        row.extend(r.point.iter().map(|v| v.to_string()));
        row.extend([r.pde, r.mc_mean, r.mc_stderr, r.z].map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let worst = reports.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    art.progress(&format!("oracle: {} probes, max |z| {worst:.2}", reports.len()));
    if worst > ORACLE_Z_LIMIT {
        return Err(CliError::Numerical(format!("Feynman-Kac probe |z| = {worst:.2} exceeds {ORACLE_Z_LIMIT}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckRow<'a> {
    experiment: &'a str,
    seed: u64,
    eps: Option<f64>,
    check: &'a str,
    passed: bool,
    value: f64,
    threshold: f64,
    detail: &'a str,
}

fn verify(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let checks = run_suite(&cfg.verify)?;
    let rows: Vec<CheckRow> = checks
        .iter()
        .map(|c| CheckRow {
            experiment: "verify",
            seed: cfg.verify.seed,
            eps: None,
            check: &c.name,
            passed: c.passed,
            value: c.value,
            threshold: c.threshold,
            detail: &c.detail,
        })
        .collect();
    write_rows(art, "verify.csv", &rows)?;
    for c in &checks {
        art.progress(&format!(
            "{} {}: {:.3e} (limit {:.3e})",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        ));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Numerical(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            checks.len(),
            failed.join(", ")
        )));
    }
    Ok(())
}

fn prior(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let spec = cfg.experiment_spec()?;
    let mut records = Vec::new();
    for (k, &eps) in cfg.run.eps.iter().enumerate() {
        let (basis, prior) = spec.model_for(eps)?;
        let seed = derive_seed(cfg.seed, k as u64);
        let mut trees = Vec::with_capacity(cfg.run.prior_draws);
        for draw in 0..cfg.run.prior_draws {
            let (tree, f) = sample_prior(&prior, &basis, derive_seed(seed, draw as u64))?;
            for t in &spec.dictionary {
                records.push(record("sample-prior", cfg.seed, eps, draw, &t.id, "functional", l2_inner(&f, &t.psi)?));
            }
            let sup = f.values().iter().map(|v| v.ln().abs()).fold(0.0, f64::max);
            records.push(record("sample-prior", cfg.seed, eps, draw, "", "sup_log_f", sup));
            trees.push(tree);
        }
        io::write_coefficients(&art.path(&format!("prior_eps{k}.coef")), &trees)?;
        art.progress(&format!("sample-prior: eps {eps}, J {}, {} draws", prior.max_level, trees.len()));
    }
    write_records(art, "prior.csv", &records)
}

#[derive(Serialize)]
struct DrawRow<'a> {
    experiment: &'a str,
    seed: u64,
    eps: f64,
    draw: usize,
    psi_id: &'a str,
    value: f64,
}

fn mcmc(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let spec = cfg.experiment_spec()?;
    let mut records = Vec::new();
    let mut draws = csv::Writer::from_path(art.path("mcmc_draws.csv"))?;
    for (k, &eps) in cfg.run.eps.iter().enumerate() {
        let r = spec.replicate(eps, derive_seed(cfg.seed, k as u64))?;
        io::write_observation(&art.path(&format!("obs_eps{k}.obs")), &r.obs)?;
        io::write_field(&art.path(&format!("fbar_eps{k}.field")), &r.fbar)?;
        let run = &r.run;
        for (i, id) in run.psi_ids.iter().enumerate() {
            let f = &run.functionals[i];
            records.push(record("mcmc", cfg.seed, eps, 0, id, "posterior_mean", f.iter().sum::<f64>() / f.len() as f64));
            for &beta in &cfg.run.betas {
                let (lo, hi) = credible_interval(run, i, beta)?;
                records.push(record("mcmc", cfg.seed, eps, 0, id, &format!("ci_lower_{beta}"), lo));
                records.push(record("mcmc", cfg.seed, eps, 0, id, &format!("ci_upper_{beta}"), hi));
            }
            for (d, &v) in f.iter().enumerate() {
                draws.serialize(DrawRow {
                    experiment: "mcmc",
                    seed: cfg.seed,
                    eps,
                    draw: d,
                    psi_id: id,
                    value: v,
                })?;
            }
        }
        records.push(record("mcmc", cfg.seed, eps, 0, "", "error", r.error));
        records.push(record("mcmc", cfg.seed, eps, 0, "", "spread", r.spread));
        records.push(record("mcmc", cfg.seed, eps, 0, "", "level", r.level as f64));
        for (b, &a) in run.acceptance.iter().enumerate() {
            records.push(record("mcmc", cfg.seed, eps, 0, "", &format!("acceptance_{b}"), a));
        }
        art.progress(&format!("mcmc: eps {eps}, error {:.4}, spread {:.4}", r.error, r.spread));
    }
    draws.flush()?;
    write_records(art, "mcmc.csv", &records)
}

#[derive(Serialize)]
struct BvmSummary<'a> {
    experiment: &'a str,
    seed: u64,
    eps: f64,
    median_ks: f64,
    median_ks_band: f64,
    median_ess: f64,
    median_sd_ratio: f64,
    median_abs_centering: f64,
}

fn bvm(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let spec = cfg.experiment_spec()?;
    art.progress(&format!("bvm: {} noise levels x {} replications", cfg.run.eps.len(), cfg.run.replications));
    let (rows, records) = bvm_experiment(&spec, &cfg.run.eps, cfg.run.replications, cfg.seed)?;
    write_records(art, "bvm.csv", &records)?;
    let summary: Vec<BvmSummary> = rows
        .iter()
        .map(|r| BvmSummary {
            experiment: "bvm",
            seed: cfg.seed,
            eps: r.eps,
            median_ks: r.median_ks,
            median_ks_band: r.median_ks_band,
            median_ess: r.median_ess,
            median_sd_ratio: r.median_sd_ratio,
            median_abs_centering: r.median_abs_centering,
        })
        .collect();
    for r in &rows {
        art.progress(&format!("bvm: eps {}, median KS {:.3}, sd ratio {:.3}", r.eps, r.median_ks, r.median_sd_ratio));
    }
    write_rows(art, "bvm_summary.csv", &summary)
}

#[derive(Serialize)]
struct CoverageRow {
    experiment: &'static str,
    seed: u64,
    eps: f64,
    psi_id: String,
    beta: f64,
    coverage: f64,
    mean_scaled_radius: f64,
    target_scaled_radius: Option<f64>,
    centering_variance_ratio: Option<f64>,
    replications: usize,
}

fn coverage(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let spec = cfg.experiment_spec()?;
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for (k, &eps) in cfg.run.eps.iter().enumerate() {
        art.progress(&format!("coverage: eps {eps}, {} replications", cfg.run.coverage_replications));
        let seed = derive_seed(cfg.seed, k as u64);
        let t = coverage_experiment(&spec, eps, &cfg.run.betas, cfg.run.coverage_replications, seed)?;
        for (b, &beta) in t.betas.iter().enumerate() {
            for p in &t.per_psi {
                summary.push(CoverageRow {
                    experiment: "coverage",
                    seed: cfg.seed,
                    eps,
                    psi_id: p.psi_id.clone(),
                    beta,
                    coverage: p.coverage[b],
                    mean_scaled_radius: p.mean_scaled_radius[b],
                    target_scaled_radius: Some(p.target_scaled_radius[b]),
                    centering_variance_ratio: Some(p.centering_variance_ratio),
                    replications: t.replications,
                });
                art.progress(&format!("coverage: {} beta {beta}: {:.3}", p.psi_id, p.coverage[b]));
            }
            summary.push(CoverageRow {
                experiment: "coverage",
                seed: cfg.seed,
                eps,
                psi_id: "ball".into(),
                beta,
                coverage: t.ball_coverage[b],
                mean_scaled_radius: t.mean_scaled_ball_radius[b],
                target_scaled_radius: None,
                centering_variance_ratio: None,
                replications: t.replications,
            });
        }
        records.extend(t.records);
    }
    write_records(art, "coverage.csv", &records)?;
    write_rows(art, "coverage_summary.csv", &summary)
}

#[derive(Serialize)]
struct RateSummary<'a> {
    experiment: &'a str,
    seed: u64,
    eps: f64,
    level: u32,
    median_error: f64,
    median_spread: f64,
    replications: usize,
}

#[derive(Serialize)]
struct RateFit<'a> {
    experiment: &'a str,
    seed: u64,
    eps: Option<f64>,
    slope: f64,
    exponent: f64,
}

fn rates(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let eps = &cfg.run.eps;
    if eps.len() < 3 || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Config("run.eps: rates need at least 3 strictly decreasing noise levels".into()));
    }
    let spec: ExperimentSpec = cfg.experiment_spec()?;
    art.progress(&format!("rates: {} noise levels x {} replications", eps.len(), cfg.run.replications));
    let (table, _) = rate_experiment(&spec, eps, cfg.run.replications, cfg.seed)?;
    write_records(art, "rates.csv", &table.records)?;
    let rows: Vec<RateSummary> = table
        .rows
        .iter()
        .map(|r| RateSummary {
            experiment: "rates",
            seed: cfg.seed,
            eps: r.eps,
            level: r.level,
            median_error: r.median_error,
            median_spread: r.median_spread,
            replications: r.replications,
        })
        .collect();
    write_rows(art, "rates_summary.csv", &rows)?;
    write_rows(
        art,
        "rates_fit.csv",
        &[RateFit {
            experiment: "rates",
            seed: cfg.seed,
            eps: None,
            slope: table.slope,
            exponent: table.exponent,
        }],
    )?;
    art.progress(&format!("rates: slope {:.3}, theory {:.3}", table.slope, table.exponent));
    Ok(())
}
