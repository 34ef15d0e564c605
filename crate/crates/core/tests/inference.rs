use schrodinger_core::grid::{l2_norm, Grid, GridFunction};
use schrodinger_core::inference::{
    default_lambda, mcmc_run, plugin_estimator, posterior_mean, McmcParams, PluginParams, Proposal, Sampler,
};
use schrodinger_core::obsmodel::{observe, Observation};
use schrodinger_core::pde::{forward_map, PotentialField};
use schrodinger_core::stats::{effective_sample_size, mean, median, variance};
use schrodinger_core::verify::ToyModel;
use schrodinger_core::wavelet::{sample_prior, PriorConfig, WaveletBasis};

fn toy() -> ToyModel {
    ToyModel::new(7, 0.1, [0.5, 0.06], 5e-4, 5).unwrap()
}

#[test]
fn toy_posterior_matches_quadrature() {
    let toy = toy();
    let (mean_q, _) = toy.quadrature_moments(200).unwrap();
    for (proposal, iters) in [(Proposal::Blockwise, 100_000), (Proposal::Laplace, 100_000)] {
        let m = toy.mcmc_means(iters, proposal, 11).unwrap();
        for k in 0..2 {
            let rel = (m[k] - mean_q[k]).abs() / mean_q[k].abs();
            assert!(rel < 0.02, "{proposal:?} coefficient {k}: {} vs {}", m[k], mean_q[k]);
        }
    }
}

/// Flows between coarse bins of the toy posterior are balanced: for every
/// bin pair the net count of single-kernel transitions is within four
/// batch-means standard errors of zero.
#[test]
fn detailed_balance_on_toy_model() {
    let toy = toy();
    let (m, sd) = toy.quadrature_moments(100).unwrap();
    let bin = |b: &[f64]| -> usize {
        let cut = |x: f64, k: usize| -> usize {
            let z = (x - m[k]) / sd[k];
            if z < -0.5 {
                0
            } else if z < 0.5 {
                1
            } else {
                2
            }
        };
        3 * cut(b[0], 0) + cut(b[1], 1)
    };
    for proposal in [Proposal::Blockwise, Proposal::Laplace] {
        let params = McmcParams {
            iterations: 100_000,
            burn_in_fraction: 0.05,
            proposal,
            ..Default::default()
        };
        let mut s = Sampler::new(&toy.obs, &toy.g, toy.prior, &toy.basis, params, 21).unwrap();
        while s.iteration() < params.burn_in() {
            s.sweep().unwrap();
        }
        let (batches, per_batch) = (50, 1_000);
        let mut net = vec![vec![0.0; 81]; batches];
        let mut prev = bin(&s.state().coeffs.to_flat());
        for row in net.iter_mut() {
            for _ in 0..per_batch {
                let steps: &[i32] = if proposal == Proposal::Blockwise { &[-1, 0] } else { &[0] };
                for &l in steps {
                    if proposal == Proposal::Blockwise {
                        s.block_step(l).unwrap();
                    } else {
                        s.joint_step().unwrap();
                    }
                    let cur = bin(&s.state().coeffs.to_flat());
                    if cur != prev {
                        row[9 * prev + cur] += 1.0;
                        row[9 * cur + prev] -= 1.0;
                    }
                    prev = cur;
                }
            }
        }
        let mut moving = 0;
        for a in 0..9 {
            for b in (a + 1)..9 {
                let d: Vec<f64> = net.iter().map(|r| r[9 * a + b]).collect();
                let total: f64 = d.iter().sum();
                let se = (batches as f64 * variance(&d)).sqrt();
                if se > 0.0 {
                    moving += 1;
                    assert!(total.abs() <= 4.0 * se, "{proposal:?} bins {a}->{b}: net {total}, se {se}");
                } else {
                    assert_eq!(total, 0.0);
                }
            }
        }
        assert!(moving >= 8, "{proposal:?}: too few bin pairs exchanged mass");
    }
}

#[test]
fn flat_likelihood_mean_matches_prior_monte_carlo() {
    let grid = Grid::unit(1, 6).unwrap();
    let basis = WaveletBasis::new(grid, 4, 1, 1).unwrap();
    let prior = PriorConfig::new(0.3, 2, 1).unwrap();
    let g = GridFunction::constant(grid, 1.0);
    let u = forward_map(&PotentialField::constant(grid, 1.0).unwrap(), &g, 1e-12).unwrap();
    let obs = observe(&u, 1e6, 1).unwrap();
    let params = McmcParams {
        iterations: 25_000,
        ..Default::default()
    };
    let run = mcmc_run(&obs, &g, prior, &basis, params, &[], 3).unwrap();
    let fbar = posterior_mean(&run, &basis).unwrap();
    let node_draws = |k: usize| -> Vec<f64> {
        (0..run.len())
            .map(|i| basis.synthesize(&run.tree(i).unwrap()).unwrap().values()[k].exp())
            .collect()
    };
    for node in [8, 32, 50] {
        let prior_mc: Vec<f64> = (0..10_000)
            .map(|s| sample_prior(&prior, &basis, 1_000 + s).unwrap().1.values()[node])
            .collect();
        let chain = node_draws(node);
        let se = (variance(&prior_mc) / prior_mc.len() as f64 + variance(&chain) / effective_sample_size(&chain)).sqrt();
        let got = fbar.values()[node];
        assert!((got - mean(&prior_mc)).abs() <= 4.0 * se, "node {node}: {got} vs {}", mean(&prior_mc));
        assert!((got - mean(&chain)).abs() < 1e-12);
    }
    assert!(fbar.values().iter().all(|&v| v > 0.0));
}

fn plugin(obs: &Observation, g: &GridFunction, lambda: f64) -> GridFunction {
    let p = PluginParams {
        lambda,
        floor: 1e-3,
        cap: 1e6,
        tol: 1e-10,
    };
    plugin_estimator(obs, g, &p).unwrap()
}

#[test]
fn noiseless_plugin_converges_under_refinement() {
    // Data from the closed-form solution for f ≡ 2, g ≡ 1.
    let mut errors = Vec::new();
    for level in [5, 6, 7] {
        let grid = Grid::unit(1, level).unwrap();
        let g = GridFunction::constant(grid, 1.0);
        let u = GridFunction::from_fn(grid, |x| (2.0 * (x[0] - 0.5)).cosh() / 1f64.cosh());
        let fh = plugin(&Observation::new(u, 0.1).unwrap(), &g, 0.0);
        errors.push(l2_norm(&(&fh - &GridFunction::constant(grid, 2.0))));
    }
    assert!(errors[0] < 1e-3);
    assert!(errors.windows(2).all(|w| w[1] < w[0] / 3.0), "{errors:?}");
}

#[test]
fn plugin_error_decreases_with_noise_level() {
    let grid = Grid::unit(1, 6).unwrap();
    let g = GridFunction::constant(grid, 1.0);
    let f0 = PotentialField::from_log(GridFunction::from_fn(grid, |x| 0.5 * (std::f64::consts::PI * x[0]).sin()));
    let u0 = forward_map(&f0, &g, 1e-12).unwrap();
    let medians: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&eps| {
            let errs: Vec<f64> = (0..10)
                .map(|rep| {
                    let obs = observe(&u0, eps, 100 + rep).unwrap();
                    let level = PriorConfig::level_rule(eps, 3, 1, 3);
                    l2_norm(&(&plugin(&obs, &g, default_lambda(eps, level)) - f0.f()))
                })
                .collect();
            median(&errs)
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}
