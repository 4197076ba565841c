//! Sampled-point falsification of the growth assumptions.
//!
//! Each checker draws `samples` points from a fixed distribution: `t` uniform
//! on `[0, T]`, `y, ȳ` componentwise uniform on `[-r_y, r_y]`, `z, z̄`
//! entrywise uniform on `[-r_z, r_z]`. The Lipschitz check pairs every
//! point either with an independent draw or with a nearby perturbation at a
//! log-uniform scale in `[1e-6, 1]`, so discontinuities are hit.
//!
//! A pass is evidence, not proof.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{norm, row, Generator, ModelParams, Point};
use crate::error::{Error, Result};

/// Relative slack absorbing floating-point roundoff in bound comparisons.
const ROUNDOFF: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SamplingBox {
    pub r_y: f64,
    pub r_z: f64,
}

impl Default for SamplingBox {
    fn default() -> Self {
        SamplingBox { r_y: 5.0, r_z: 5.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Assumption {
    H1,
    H2,
    H4,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleTuple {
    pub t: f64,
    pub y: Vec<f64>,
    pub ybar: Vec<f64>,
    pub z: Vec<f64>,
    pub zbar: Vec<f64>,
}

impl SampleTuple {
    fn point(&self) -> Point<'_> {
        Point { t: self.t, y: &self.y, ybar: &self.ybar, z: &self.z, zbar: &self.zbar }
    }

    fn y_radius(&self) -> f64 {
        norm(&self.y).max(norm(&self.ybar))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub sample: usize,
    pub component: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub tuple: SampleTuple,
    /// Second point of the pair for the Lipschitz check.
    pub partner: Option<SampleTuple>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub assumption: Assumption,
    pub samples: usize,
    pub seed: u64,
    pub passed: bool,
    pub violation: Option<Violation>,
}

struct Sampler {
    rng: ChaCha8Rng,
    n: usize,
    d: usize,
    horizon: f64,
    bx: SamplingBox,
}

impl Sampler {
    fn new(p: &ModelParams, seed: u64, bx: SamplingBox) -> Self {
        Sampler { rng: ChaCha8Rng::seed_from_u64(seed), n: p.n, d: p.d, horizon: p.horizon, bx }
    }

    fn uniform(&mut self, r: f64) -> f64 {
        r * (2.0 * self.rng.random::<f64>() - 1.0)
    }

    /// Uniform on `[-r, r]`, except that one draw in five is pushed towards
    /// zero on a log scale so that thresholds near the origin get exercised.
    fn coord(&mut self, r: f64) -> f64 {
        if self.rng.random::<f64>() < 0.2 {
            let mag = r * 10f64.powf(-6.0 * self.rng.random::<f64>());
            if self.rng.random::<bool>() { mag } else { -mag }
        } else {
            self.uniform(r)
        }
    }

    fn vec(&mut self, len: usize, r: f64) -> Vec<f64> {
        (0..len).map(|_| self.coord(r)).collect()
    }

    fn tuple(&mut self) -> SampleTuple {
        let t = self.horizon * self.rng.random::<f64>();
        let (n, nd, ry, rz) = (self.n, self.n * self.d, self.bx.r_y, self.bx.r_z);
        SampleTuple {
            t,
            y: self.vec(n, ry),
            ybar: self.vec(n, ry),
            z: self.vec(nd, rz),
            zbar: self.vec(nd, rz),
        }
    }

    /// Either an independent draw at the same time, or `base` with one
    /// coordinate moved by a log-uniformly scaled amount.
    fn partner(&mut self, base: &SampleTuple) -> SampleTuple {
        if self.rng.random::<bool>() {
            let mut other = self.tuple();
            other.t = base.t;
            return other;
        }
        let scale = 10f64.powf(-6.0 * self.rng.random::<f64>());
        let mut other = base.clone();
        let (n, nd) = (self.n, self.n * self.d);
        let slot = self.rng.random_range(0..2 * (n + nd));
        let (ry, rz) = (self.bx.r_y * scale, self.bx.r_z * scale);
        if slot < n {
            other.y[slot] += self.uniform(ry);
        } else if slot < 2 * n {
            other.ybar[slot - n] += self.uniform(ry);
        } else if slot < 2 * n + nd {
            other.z[slot - 2 * n] += self.uniform(rz);
        } else {
            other.zbar[slot - 2 * n - nd] += self.uniform(rz);
        }
        other
    }
}

fn exceeds(lhs: f64, rhs: f64) -> bool {
    !(lhs <= rhs + ROUNDOFF * (1.0 + rhs.abs()))
}

fn require_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::invalid("samples", "must be at least 1"));
    }
    Ok(())
}

fn require_dims(gen: &dyn Generator, p: &ModelParams) -> Result<()> {
    if gen.n() != p.n || gen.d() != p.d {
        return Err(Error::invalid(
            "generator",
            format!("dimensions ({}, {}) do not match params ({}, {})", gen.n(), gen.d(), p.n, p.d),
        ));
    }
    Ok(())
}

fn off_diagonal_power_sum(z: &[f64], zbar: &[f64], i: usize, n: usize, d: usize, delta: f64) -> f64 {
    let e = 1.0 + delta;
    let cross: f64 = (0..n).filter(|&j| j != i).map(|j| norm(row(z, j, d)).powf(e)).sum();
    cross + norm(zbar).powf(e)
}

pub fn check_h1(gen: &dyn Generator, p: &ModelParams, samples: usize, seed: u64) -> Result<AssumptionReport> {
    check_h1_in(gen, p, samples, seed, SamplingBox::default())
}

/// `|f^i| ≤ a_t + φ(|y|∨|ȳ|) + (γ/2)|z^i|² + K(Σ_{j≠i}|z^j|^{1+δ} + |z̄|^{1+δ})`.
pub fn check_h1_in(
    gen: &dyn Generator,
    p: &ModelParams,
    samples: usize,
    seed: u64,
    bx: SamplingBox,
) -> Result<AssumptionReport> {
    require_samples(samples)?;
    require_dims(gen, p)?;
    let mut sampler = Sampler::new(p, seed, bx);
    for s in 0..samples {
        let x = sampler.tuple();
        let pt = x.point();
        let base = p.a.eval(x.t) + p.phi.eval(x.y_radius());
        for i in 0..p.n {
            let lhs = gen.component(i, &pt).abs();
            let zi = norm(row(&x.z, i, p.d));
            let rhs = base
                + 0.5 * p.gamma * zi * zi
                + p.k * off_diagonal_power_sum(&x.z, &x.zbar, i, p.n, p.d, p.delta);
            if exceeds(lhs, rhs) {
                return Ok(failed(Assumption::H1, samples, seed, s, i, lhs, rhs, x, None));
            }
        }
    }
    Ok(passed(Assumption::H1, samples, seed))
}

pub fn check_h2(gen: &dyn Generator, p: &ModelParams, samples: usize, seed: u64) -> Result<AssumptionReport> {
    check_h2_in(gen, p, samples, seed, SamplingBox::default())
}

/// Local Lipschitz estimate, componentwise, over sampled pairs sharing `t`.
pub fn check_h2_in(
    gen: &dyn Generator,
    p: &ModelParams,
    samples: usize,
    seed: u64,
    bx: SamplingBox,
) -> Result<AssumptionReport> {
    require_samples(samples)?;
    require_dims(gen, p)?;
    let (n, d) = (p.n, p.d);
    let mut sampler = Sampler::new(p, seed, bx);
    let diff = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(a, b)| a - b).collect() };
    for s in 0..samples {
        let x1 = sampler.tuple();
        let x2 = sampler.partner(&x1);
        let (p1, p2) = (x1.point(), x2.point());
        let scale = p.phi.eval(x1.y_radius().max(x2.y_radius()));
        let (nz1, nzb1, nz2, nzb2) = (norm(&x1.z), norm(&x1.zbar), norm(&x2.z), norm(&x2.zbar));
        let quad_weight = 1.0 + nz1 + nzb1 + nz2 + nzb2;
        let pow = |v: f64| v.powf(p.delta);
        let sub_weight = 1.0 + pow(nz1) + pow(nzb1) + pow(nz2) + pow(nzb2);
        let dy = norm(&diff(&x1.y, &x2.y));
        let dybar = norm(&diff(&x1.ybar, &x2.ybar));
        let dz = diff(&x1.z, &x2.z);
        let dzbar = norm(&diff(&x1.zbar, &x2.zbar));
        for i in 0..n {
            let lhs = (gen.component(i, &p1) - gen.component(i, &p2)).abs();
            let dzi = norm(row(&dz, i, d));
            let dzoff: f64 = (0..n).filter(|&j| j != i).map(|j| norm(row(&dz, j, d))).sum();
            let rhs = scale * (quad_weight * (dy + dybar + dzi) + sub_weight * (dzbar + dzoff));
            if exceeds(lhs, rhs) {
                return Ok(failed(Assumption::H2, samples, seed, s, i, lhs, rhs, x1, Some(x2)));
            }
        }
    }
    Ok(passed(Assumption::H2, samples, seed))
}

pub fn check_h4(gen: &dyn Generator, p: &ModelParams, samples: usize, seed: u64) -> Result<AssumptionReport> {
    check_h4_in(gen, p, samples, seed, SamplingBox::default())
}

/// `sgn(y^i) f^i ≤ α_t + β_t(|y|∨|ȳ|) + η_t log(|z|+1) + (γ/2)|z^i|²`.
pub fn check_h4_in(
    gen: &dyn Generator,
    p: &ModelParams,
    samples: usize,
    seed: u64,
    bx: SamplingBox,
) -> Result<AssumptionReport> {
    require_samples(samples)?;
    require_dims(gen, p)?;
    let mut sampler = Sampler::new(p, seed, bx);
    for s in 0..samples {
        let x = sampler.tuple();
        let pt = x.point();
        let base = p.alpha.eval(x.t)
            + p.beta.eval(x.t) * x.y_radius()
            + p.eta.eval(x.t) * norm(&x.z).ln_1p();
        for i in 0..p.n {
            let sign = if x.y[i] > 0.0 {
                1.0
            } else if x.y[i] < 0.0 {
                -1.0
            } else {
                0.0
            };
            let lhs = sign * gen.component(i, &pt);
            let zi = norm(row(&x.z, i, p.d));
            let rhs = base + 0.5 * p.gamma * zi * zi;
            if exceeds(lhs, rhs) {
                return Ok(failed(Assumption::H4, samples, seed, s, i, lhs, rhs, x, None));
            }
        }
    }
    Ok(passed(Assumption::H4, samples, seed))
}

fn passed(assumption: Assumption, samples: usize, seed: u64) -> AssumptionReport {
    AssumptionReport { assumption, samples, seed, passed: true, violation: None }
}

#[allow(clippy::too_many_arguments)]
fn failed(
    assumption: Assumption,
    samples: usize,
    seed: u64,
    sample: usize,
    component: usize,
    lhs: f64,
    rhs: f64,
    tuple: SampleTuple,
    partner: Option<SampleTuple>,
) -> AssumptionReport {
    AssumptionReport {
        assumption,
        samples,
        seed,
        passed: false,
        violation: Some(Violation { sample, component, lhs, rhs, tuple, partner }),
    }
}
