//! Monte Carlo machinery: time grid, Brownian ensemble, regression-based
//! conditional expectations and discrete norm estimators.
//!
//! Arrays are node-major with particles contiguous inside a node:
//! `w[(k * N + p) * d + j]`. Every parallel reduction splits the particle
//! range into fixed-size chunks and combines chunk partials in order, so
//! results do not depend on the thread count.

pub mod dump;
pub mod process;
pub mod regression;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use dump::{read_state, write_state, StateHeader};
pub use process::ProcessPair;
pub use regression::{conditional_expectation, RegressionBasis, Regressor};

/// Particles per reduction chunk.
pub(crate) const CHUNK: usize = 2048;

/// Uniform grid `t_k = k T / M`, `k = 0..=M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("M", "grid needs at least one step"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid("T", format!("must be positive, got {horizon}")));
        }
        Ok(TimeGrid { steps, horizon })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        (k as f64 / self.steps as f64) * self.horizon
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.t(k)).collect()
    }
}

/// `N` Brownian paths on a [`TimeGrid`].
///
/// Particle `p` draws from its own ChaCha8 stream (`seed`, stream `p`), so
/// the ensemble is reproducible and independent of how work is scheduled.
#[derive(Clone, Debug)]
pub struct Ensemble {
    grid: TimeGrid,
    n_particles: usize,
    d: usize,
    seed: u64,
    increments: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Ensemble {
    pub fn generate(grid: TimeGrid, n_particles: usize, d: usize, seed: u64) -> Result<Self> {
        if n_particles < 2 {
            return Err(Error::invalid("N", "regression needs at least two particles"));
        }
        if d == 0 {
            return Err(Error::invalid("d", "Brownian dimension must be positive"));
        }
        let m = grid.steps();
        let sd = grid.dt().sqrt();
        let per_particle: Vec<Vec<f64>> = (0..n_particles)
            .into_par_iter()
            .map(|p| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(p as u64);
                (0..m * d)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        g * sd
                    })
                    .collect()
            })
            .collect();

        let mut increments = vec![0.0; m * n_particles * d];
        let mut cumulative = vec![0.0; (m + 1) * n_particles * d];
        for (p, row) in per_particle.iter().enumerate() {
            for k in 0..m {
                for j in 0..d {
                    let dw = row[k * d + j];
                    increments[(k * n_particles + p) * d + j] = dw;
                    let prev = cumulative[(k * n_particles + p) * d + j];
                    cumulative[((k + 1) * n_particles + p) * d + j] = prev + dw;
                }
            }
        }
        Ok(Ensemble { grid, n_particles, d, seed, increments, cumulative })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `W_{t_k}` for all particles, `N × d`.
    pub fn w_node(&self, k: usize) -> &[f64] {
        let len = self.n_particles * self.d;
        &self.cumulative[k * len..(k + 1) * len]
    }

    /// `ΔW_k = W_{t_{k+1}} - W_{t_k}` for all particles, `N × d`.
    pub fn dw_node(&self, k: usize) -> &[f64] {
        let len = self.n_particles * self.d;
        &self.increments[k * len..(k + 1) * len]
    }

    #[inline]
    pub fn w(&self, k: usize, p: usize, j: usize) -> f64 {
        self.cumulative[(k * self.n_particles + p) * self.d + j]
    }

    #[inline]
    pub fn dw(&self, k: usize, p: usize, j: usize) -> f64 {
        self.increments[(k * self.n_particles + p) * self.d + j]
    }

    pub fn path(&self, p: usize) -> PathView<'_> {
        PathView { ens: self, particle: p }
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }
}

/// One particle's discrete Brownian path.
#[derive(Clone, Copy, Debug)]
pub struct PathView<'a> {
    ens: &'a Ensemble,
    particle: usize,
}

impl PathView<'_> {
    pub fn w(&self, k: usize, j: usize) -> f64 {
        self.ens.w(k, self.particle, j)
    }

    pub fn last_node(&self) -> usize {
        self.ens.grid.steps()
    }
}

/// Deterministic chunked sum over `0..len`; `f` maps a chunk range to its partial.
pub(crate) fn chunked_sum<A, F>(len: usize, zero: A, f: F, add: impl Fn(&mut A, &A)) -> A
where
    A: Send + Clone,
    F: Fn(std::ops::Range<usize>) -> A + Sync + Send,
{
    let chunks = len.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
        .collect();
    let mut acc = zero;
    for part in &parts {
        add(&mut acc, part);
    }
    acc
}

/// Sample mean with the fixed chunk order.
pub(crate) fn sample_mean(values: &[f64]) -> f64 {
    let total = chunked_sum(values.len(), 0.0, |r| values[r].iter().sum::<f64>(), |a, b| *a += *b);
    total / values.len() as f64
}
