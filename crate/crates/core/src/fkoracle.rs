//! Monte Carlo evaluation of `u_f` and `V_f[h]` through Brownian paths
//! stopped at the boundary (Euler–Maruyama, first-crossing clipping, with
//! an optional Brownian-bridge crossing test between steps).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::pde::PotentialField;

/// Paths per shard; each shard has its own derived stream.
const SHARD: usize = 1000;

/// Simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    /// Time step; `None` means a quarter of the squared minimum grid spacing.
    pub dt: Option<f64>,
    pub n_paths: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Also stop a step whose endpoints are inside when the Brownian bridge
    /// between them leaves the domain.
    #[serde(default = "default_bridge")]
    pub bridge: bool,
}

fn default_bridge() -> bool {
    true
}

impl PathConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            dt: None,
            n_paths,
            max_steps: 10_000_000,
            seed,
            bridge: true,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_bridge(mut self, bridge: bool) -> Self {
        self.bridge = bridge;
        self
    }

    fn validate(&self, grid: &Grid) -> Result<f64> {
        let dt = self.dt.unwrap_or(grid.min_spacing().powi(2) / 4.0);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        if self.n_paths < 100 {
            return Err(Error::InvalidArgument(format!("need at least 100 paths, got {}", self.n_paths)));
        }
        Ok(dt)
    }
}

/// Sample mean with its standard error and exit-time statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    /// Average exit time over uncensored paths.
    pub mean_exit_time: f64,
    pub censored: usize,
}

/// Multilinear interpolation of a grid field at a point of the closed domain.
pub fn interpolate(a: &GridFunction, x: &[f64]) -> f64 {
    let grid = a.grid();
    let n = grid.cells();
    let mut base = [0usize; 2];
    let mut frac = [0.0; 2];
    for axis in 0..grid.dim() {
        let t = (x[axis] - grid.domain().lower(axis)) / grid.spacing(axis);
        let t = t.clamp(0.0, n as f64);
        let i = (t.floor() as usize).min(n - 1);
        base[axis] = i;
        frac[axis] = t - i as f64;
    }
    if grid.dim() == 1 {
        let v0 = a.value(base[0]);
        let v1 = a.value(base[0] + 1);
        v0 + frac[0] * (v1 - v0)
    } else {
        let at = |di: usize, dj: usize| a.value(grid.flat_index([base[0] + di, base[1] + dj]));
        let (s, t) = (frac[0], frac[1]);
        (1.0 - s) * ((1.0 - t) * at(0, 0) + t * at(0, 1)) + s * ((1.0 - t) * at(1, 0) + t * at(1, 1))
    }
}

/// Multilinear interpolation with the grid geometry unpacked once.
struct Sampler<'a> {
    values: &'a [f64],
    dim: usize,
    cells: usize,
    stride: usize,
    lo: [f64; 2],
    inv_h: [f64; 2],
}

impl<'a> Sampler<'a> {
    fn new(a: &'a GridFunction) -> Self {
        let grid = a.grid();
        let dim = grid.dim();
        let mut lo = [0.0; 2];
        let mut inv_h = [0.0; 2];
        for axis in 0..dim {
            lo[axis] = grid.domain().lower(axis);
            inv_h[axis] = 1.0 / grid.spacing(axis);
        }
        Self {
            values: a.values(),
            dim,
            cells: grid.cells(),
            stride: grid.nodes_per_axis(),
            lo,
            inv_h,
        }
    }

    #[inline]
    fn locate(&self, x: f64, axis: usize) -> (usize, f64) {
        let t = ((x - self.lo[axis]) * self.inv_h[axis]).clamp(0.0, self.cells as f64);
        let i = (t as usize).min(self.cells - 1);
        (i, t - i as f64)
    }

    #[inline]
    fn eval(&self, x: &[f64; 2]) -> f64 {
        let (i, s) = self.locate(x[0], 0);
        if self.dim == 1 {
            let v = &self.values[i..i + 2];
            return v[0] + s * (v[1] - v[0]);
        }
        let (j, t) = self.locate(x[1], 1);
        let r0 = &self.values[i * self.stride + j..i * self.stride + j + 2];
        let r1 = &self.values[(i + 1) * self.stride + j..(i + 1) * self.stride + j + 2];
        (1.0 - s) * ((1.0 - t) * r0[0] + t * r0[1]) + s * ((1.0 - t) * r1[0] + t * r1[1])
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    sum: f64,
    sum_sq: f64,
    tau: f64,
    done: usize,
    censored: usize,
}

enum Integrand<'a> {
    Boundary(&'a GridFunction),
    Source(&'a GridFunction),
}

fn simulate(f: &PotentialField, what: Integrand<'_>, x: &[f64], cfg: &PathConfig) -> Result<Estimate> {
    let grid = *f.grid();
    let dt = cfg.validate(&grid)?;
    let dim = grid.dim();
    if x.len() != dim || !grid.domain().contains_strictly(x) {
        return Err(Error::InvalidArgument(format!("start point {x:?} is not strictly interior")));
    }
    match &what {
        Integrand::Boundary(g) | Integrand::Source(g) if g.grid() != &grid => {
            return Err(Error::GridMismatch("data and potential grids differ".into()));
        }
        _ => {}
    }
    let lo = [grid.domain().lower(0), if dim == 2 { grid.domain().lower(1) } else { 0.0 }];
    let hi = [grid.domain().upper(0), if dim == 2 { grid.domain().upper(1) } else { 0.0 }];
    let sq = dt.sqrt();
    let f_at = Sampler::new(f.f());
    let h_at = match &what {
        Integrand::Source(h) => Some(Sampler::new(h)),
        Integrand::Boundary(_) => None,
    };
    let shards = cfg.n_paths.div_ceil(SHARD);

    let run_shard = |k: usize| -> Tally {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let count = SHARD.min(cfg.n_paths - k * SHARD);
        let mut t = Tally::default();
        for _ in 0..count {
            let mut pos = [x[0], if dim == 2 { x[1] } else { 0.0 }];
            let mut discount: f64 = 0.0; // ∫ f ds so far
            let mut acc = 0.0; // ∫ h e^{-∫f} dt so far
            let mut time = 0.0;
            let mut exited = false;
            for _ in 0..cfg.max_steps {
                let fv = f_at.eval(&pos);
                let mut next = pos;
                for axis in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    next[axis] += sq * z;
                }
                // fraction of the step until the first face crossing
                let mut theta: f64 = 1.0;
                for axis in 0..dim {
                    if next[axis] < lo[axis] {
                        theta = theta.min((pos[axis] - lo[axis]) / (pos[axis] - next[axis]));
                    } else if next[axis] > hi[axis] {
                        theta = theta.min((hi[axis] - pos[axis]) / (next[axis] - pos[axis]));
                    }
                }
                // a bridge with both ends inside crosses face `a` with
                // probability exp(−2 d₀ d₁ / dt)
                let mut bridged = None;
                if theta == 1.0 && cfg.bridge {
                    'faces: for axis in 0..dim {
                        for (d0, d1, face) in [
                            (pos[axis] - lo[axis], next[axis] - lo[axis], lo[axis]),
                            (hi[axis] - pos[axis], hi[axis] - next[axis], hi[axis]),
                        ] {
                            let e = 2.0 * d0 * d1 / dt;
                            if e < 30.0 && rng.random::<f64>() < (-e).exp() {
                                bridged = Some((axis, face));
                                break 'faces;
                            }
                        }
                    }
                    if bridged.is_some() {
                        theta = 0.5;
                    }
                }
                let step = theta * dt;
                if let Some(h) = &h_at {
                    acc += h.eval(&pos) * (-discount).exp() * step;
                }
                discount += fv * step;
                time += step;
                if let Some((axis, face)) = bridged {
                    for a in 0..dim {
                        pos[a] = 0.5 * (pos[a] + next[a]);
                    }
                    pos[axis] = face;
                    exited = true;
                    break;
                }
                if theta < 1.0 {
                    for axis in 0..dim {
                        next[axis] = (pos[axis] + theta * (next[axis] - pos[axis])).clamp(lo[axis], hi[axis]);
                    }
                    pos = next;
                    exited = true;
                    break;
                }
                pos = next;
            }
            if !exited {
                t.censored += 1;
                continue;
            }
            let value = match &what {
                Integrand::Boundary(g) => interpolate(g, &pos[..dim]) * (-discount).exp(),
                Integrand::Source(_) => -acc,
            };
            t.sum += value;
            t.sum_sq += value * value;
            t.tau += time;
            t.done += 1;
        }
        t
    };

    let tallies: Vec<Tally> = (0..shards).into_par_iter().map(run_shard).collect();
    let total = tallies.iter().fold(Tally::default(), |a, b| Tally {
        sum: a.sum + b.sum,
        sum_sq: a.sum_sq + b.sum_sq,
        tau: a.tau + b.tau,
        done: a.done + b.done,
        censored: a.censored + b.censored,
    });
    if total.censored * 100 > cfg.n_paths {
        return Err(Error::Censored {
            censored: total.censored,
            total: cfg.n_paths,
        });
    }
    let n = total.done as f64;
    let mean = total.sum / n;
    let var = ((total.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(Estimate {
        mean,
        stderr: (var / n).sqrt(),
        mean_exit_time: total.tau / n,
        censored: total.censored,
    })
}

/// `u_f(x) = E^x[g(X_τ) exp(−∫₀^τ f(X_s) ds)]`; only the boundary values of
/// `g` are used.
pub fn fk_forward_estimate(f: &PotentialField, g: &GridFunction, x: &[f64], cfg: &PathConfig) -> Result<Estimate> {
    simulate(f, Integrand::Boundary(g), x, cfg)
}

/// `V_f[h](x) = −E^x[∫₀^τ h(X_t) exp(−∫₀^t f) dt]`, the solution of
/// `Δv/2 − fv = h` with zero boundary values.
pub fn fk_green_estimate(f: &PotentialField, h: &GridFunction, x: &[f64], cfg: &PathConfig) -> Result<Estimate> {
    simulate(f, Integrand::Source(h), x, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn within(e: &Estimate, target: f64, k: f64) -> bool {
        (e.mean - target).abs() <= k * e.stderr.max(1e-12)
    }

    #[test]
    fn interpolation_is_exact_on_bilinear() {
        let g = Grid::unit(2, 3).unwrap();
        let a = GridFunction::from_fn(g, |x| 1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[1]);
        for p in [[0.13, 0.77], [1.0, 0.5], [0.0, 0.0]] {
            let exact = 1.0 + 2.0 * p[0] - p[1] + 3.0 * p[0] * p[1];
            assert!((interpolate(&a, &p) - exact).abs() < 1e-12);
            assert!((Sampler::new(&a).eval(&p) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn martingale_with_zero_potential() {
        let g = Grid::unit(2, 4).unwrap();
        let f = PotentialField::constant(g, 0.0).unwrap();
        let e = fk_forward_estimate(&f, &GridFunction::constant(g, 1.0), &[0.3, 0.6], &PathConfig::new(500, 1)).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn bridge_test_removes_overshoot_bias() {
        let g = Grid::unit(1, 5).unwrap();
        let f = PotentialField::constant(g, 0.0).unwrap();
        let one = GridFunction::constant(g, 1.0);
        let cfg = PathConfig::new(20_000, 9).with_dt(2.5e-3);
        let bridged = fk_forward_estimate(&f, &one, &[0.5], &cfg).unwrap();
        let clipped = fk_forward_estimate(&f, &one, &[0.5], &cfg.with_bridge(false)).unwrap();
        assert!((bridged.mean_exit_time - 0.25).abs() < 0.01, "{bridged:?}");
        assert!(clipped.mean_exit_time - 0.25 > 0.015, "{clipped:?}");
    }

    #[test]
    fn gamblers_ruin() {
        let g = Grid::unit(1, 5).unwrap();
        let f = PotentialField::constant(g, 0.0).unwrap();
        let bd = GridFunction::from_fn(g, |x| x[0]);
        let e = fk_forward_estimate(&f, &bd, &[0.3], &PathConfig::new(4000, 3).with_dt(4e-5)).unwrap();
        assert!(within(&e, 0.3, 3.0), "{e:?}");
    }

    #[test]
    fn exit_time_from_green() {
        let g = Grid::unit(1, 5).unwrap();
        let f = PotentialField::constant(g, 0.0).unwrap();
        let zero = fk_green_estimate(&f, &GridFunction::zeros(g), &[0.5], &PathConfig::new(200, 0)).unwrap();
        assert_eq!((zero.mean, zero.stderr), (0.0, 0.0));
        let e = fk_green_estimate(&f, &GridFunction::constant(g, -1.0), &[0.5], &PathConfig::new(4000, 9).with_dt(4e-5))
            .unwrap();
        assert!(within(&e, 0.25, 3.0), "{e:?}");
        assert!((e.mean - e.mean_exit_time).abs() < 1e-12);
    }

    #[test]
    fn seeds_are_deterministic_and_validated() {
        let g = Grid::unit(1, 4).unwrap();
        let f = PotentialField::constant(g, 1.0).unwrap();
        let one = GridFunction::constant(g, 1.0);
        let cfg = PathConfig::new(2500, 42);
        let a = fk_forward_estimate(&f, &one, &[0.4], &cfg).unwrap();
        let b = fk_forward_estimate(&f, &one, &[0.4], &cfg).unwrap();
        assert_eq!(a, b);
        assert!(fk_forward_estimate(&f, &one, &[0.4], &PathConfig::new(10, 0)).is_err());
        assert!(fk_forward_estimate(&f, &one, &[1.0], &cfg).is_err());
        let capped = PathConfig {
            max_steps: 2,
            ..cfg
        };
        assert!(matches!(
            fk_forward_estimate(&f, &one, &[0.5], &capped),
            Err(Error::Censored { .. })
        ));
    }
}
