//! Least-squares estimation of `E[· | W_{t_k}]`.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{chunked_sum, sample_mean, Ensemble, CHUNK};
use crate::error::{Error, Result};

/// Gram matrices with a worse condition number are treated as singular.
const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionBasis {
    /// Monomials of total degree `≤ degree` in the standardized state `W_{t_k}/√t_k`.
    Polynomial { degree: usize },
    /// Indicators of `bins` equal-width cells per coordinate of `W_{t_k}`.
    PiecewiseBins { bins: usize },
}

impl RegressionBasis {
    /// Cubic for one Brownian dimension, quadratic otherwise.
    pub fn default_for(d: usize) -> Self {
        if d == 1 {
            RegressionBasis::Polynomial { degree: 3 }
        } else {
            RegressionBasis::Polynomial { degree: 2 }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RegressionBasis::Polynomial { degree } if *degree > 8 => {
                Err(Error::invalid("basis.degree", "degrees above 8 are numerically unusable"))
            }
            RegressionBasis::PiecewiseBins { bins } if *bins == 0 => {
                Err(Error::invalid("basis.bins", "need at least one bin"))
            }
            _ => Ok(()),
        }
    }
}

/// Exponent vectors of all monomials in `d` variables of total degree `≤ degree`.
fn multi_indices(d: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(d: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(d, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|a| (a.iter().sum::<usize>(), std::cmp::Reverse(a.clone())));
    out
}

#[derive(Debug)]
enum NodePlan {
    /// `F_{t_k}` is trivial (or empirically so): project onto constants.
    Mean,
    Polynomial {
        scale: f64,
        chol: Cholesky<f64, Dyn>,
        condition: f64,
    },
    Bins {
        cell: Vec<u32>,
        cells: usize,
        condition: f64,
    },
    Singular {
        condition: f64,
    },
}

/// Per-node least-squares projector on one ensemble.
///
/// Factorizations are computed once and reused for every projection at a node.
#[derive(Debug)]
pub struct Regressor<'a> {
    ens: &'a Ensemble,
    basis: RegressionBasis,
    exponents: Vec<Vec<usize>>,
    plans: Vec<NodePlan>,
    fallbacks: AtomicUsize,
}

impl<'a> Regressor<'a> {
    pub fn new(ens: &'a Ensemble, basis: &RegressionBasis) -> Result<Self> {
        basis.validate()?;
        let d = ens.d();
        let exponents = match basis {
            RegressionBasis::Polynomial { degree } => multi_indices(d, *degree),
            RegressionBasis::PiecewiseBins { .. } => Vec::new(),
        };
        let m = ens.grid().steps();
        let plans = (0..=m)
            .into_par_iter()
            .map(|k| plan_node(ens, basis, &exponents, k))
            .collect();
        Ok(Regressor { ens, basis: basis.clone(), exponents, plans, fallbacks: AtomicUsize::new(0) })
    }

    pub fn ensemble(&self) -> &'a Ensemble {
        self.ens
    }

    pub fn basis(&self) -> &RegressionBasis {
        &self.basis
    }

    /// Condition number of the design at node `k` (`1` for the trivial node).
    pub fn condition(&self, k: usize) -> f64 {
        match &self.plans[k] {
            NodePlan::Mean => 1.0,
            NodePlan::Polynomial { condition, .. }
            | NodePlan::Bins { condition, .. }
            | NodePlan::Singular { condition } => *condition,
        }
    }

    /// Number of projections that fell back to the sample mean so far.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    /// Least-squares projection of `values` onto the basis at node `k`,
    /// evaluated back on every particle.
    pub fn project(&self, k: usize, values: &[f64]) -> Result<Vec<f64>> {
        let n = self.ens.n_particles();
        if values.len() != n {
            return Err(Error::invalid("values", format!("expected {n} entries, got {}", values.len())));
        }
        if let Some(&first) = values.first() {
            if values.iter().all(|v| v.to_bits() == first.to_bits()) {
                return Ok(values.to_vec());
            }
        }
        match &self.plans[k] {
            NodePlan::Mean => Ok(vec![sample_mean(values); n]),
            NodePlan::Singular { condition } => {
                Err(Error::SingularRegression { node: k, condition: *condition })
            }
            NodePlan::Polynomial { scale, chol, .. } => {
                let w = self.ens.w_node(k);
                let d = self.ens.d();
                let nb = self.exponents.len();
                let rhs = chunked_sum(
                    n,
                    vec![0.0; nb],
                    |r| {
                        let mut acc = vec![0.0; nb];
                        let mut phi = vec![0.0; nb];
                        for p in r {
                            features(&w[p * d..(p + 1) * d], *scale, &self.exponents, &mut phi);
                            for (a, f) in acc.iter_mut().zip(&phi) {
                                *a += f * values[p];
                            }
                        }
                        acc
                    },
                    add_vec,
                );
                let coef = chol.solve(&DVector::from_vec(rhs));
                let mut out = vec![0.0; n];
                out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
                    let mut phi = vec![0.0; nb];
                    for (off, o) in chunk.iter_mut().enumerate() {
                        let p = c * CHUNK + off;
                        features(&w[p * d..(p + 1) * d], *scale, &self.exponents, &mut phi);
                        *o = phi.iter().zip(coef.iter()).map(|(f, b)| f * b).sum();
                    }
                });
                Ok(out)
            }
            NodePlan::Bins { cell, cells, .. } => {
                let cells = *cells;
                let (sums, counts) = chunked_sum(
                    n,
                    (vec![0.0; cells], vec![0usize; cells]),
                    |r| {
                        let mut s = vec![0.0; cells];
                        let mut c = vec![0usize; cells];
                        for p in r {
                            s[cell[p] as usize] += values[p];
                            c[cell[p] as usize] += 1;
                        }
                        (s, c)
                    },
                    |a, b| {
                        add_vec(&mut a.0, &b.0);
                        a.1.iter_mut().zip(&b.1).for_each(|(x, y)| *x += *y);
                    },
                );
                let means: Vec<f64> = sums
                    .iter()
                    .zip(&counts)
                    .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
                    .collect();
                Ok(cell.iter().map(|&c| means[c as usize]).collect())
            }
        }
    }

    /// [`Regressor::project`], falling back to the sample mean on a singular design.
    pub fn project_or_mean(&self, k: usize, values: &[f64]) -> Vec<f64> {
        match self.project(k, values) {
            Ok(v) => v,
            Err(e) => {
                self.fallbacks.fetch_add(1, Ordering::Relaxed);
                log::warn!("{e}; using the sample mean");
                vec![sample_mean(values); values.len()]
            }
        }
    }
}

fn add_vec(a: &mut Vec<f64>, b: &Vec<f64>) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
}

#[inline]
fn features(w: &[f64], scale: f64, exponents: &[Vec<usize>], out: &mut [f64]) {
    for (o, e) in out.iter_mut().zip(exponents) {
        let mut v = 1.0;
        for (x, &p) in w.iter().zip(e) {
            v *= (x * scale).powi(p as i32);
        }
        *o = v;
    }
}

fn plan_node(ens: &Ensemble, basis: &RegressionBasis, exponents: &[Vec<usize>], k: usize) -> NodePlan {
    let t = ens.grid().t(k);
    if k == 0 || t == 0.0 {
        return NodePlan::Mean;
    }
    let n = ens.n_particles();
    let d = ens.d();
    let w = ens.w_node(k);
    match basis {
        RegressionBasis::Polynomial { .. } => {
            let nb = exponents.len();
            let scale = 1.0 / t.sqrt();
            let gram = chunked_sum(
                n,
                vec![0.0; nb * nb],
                |r| {
                    let mut acc = vec![0.0; nb * nb];
                    let mut phi = vec![0.0; nb];
                    for p in r {
                        features(&w[p * d..(p + 1) * d], scale, exponents, &mut phi);
                        for a in 0..nb {
                            for b in 0..nb {
                                acc[a * nb + b] += phi[a] * phi[b];
                            }
                        }
                    }
                    acc
                },
                add_vec,
            );
            let g = DMatrix::from_row_slice(nb, nb, &gram);
            let eig = g.clone().symmetric_eigenvalues();
            let (lo, hi) = eig.iter().fold((f64::INFINITY, 0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
            let gram_cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            let condition = gram_cond.sqrt();
            if !(gram_cond < MAX_GRAM_CONDITION) {
                return NodePlan::Singular { condition };
            }
            match g.cholesky() {
                Some(chol) => NodePlan::Polynomial { scale, chol, condition },
                None => NodePlan::Singular { condition },
            }
        }
        RegressionBasis::PiecewiseBins { bins } => {
            let bins = *bins;
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for p in 0..n {
                for j in 0..d {
                    lo[j] = lo[j].min(w[p * d + j]);
                    hi[j] = hi[j].max(w[p * d + j]);
                }
            }
            let cells = bins.pow(d as u32);
            let mut counts = vec![0usize; cells];
            let cell: Vec<u32> = (0..n)
                .map(|p| {
                    let mut idx = 0usize;
                    for j in 0..d {
                        let width = (hi[j] - lo[j]) / bins as f64;
                        let b = if width > 0.0 {
                            (((w[p * d + j] - lo[j]) / width) as usize).min(bins - 1)
                        } else {
                            0
                        };
                        idx = idx * bins + b;
                    }
                    counts[idx] += 1;
                    idx as u32
                })
                .collect();
            let occupied: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
            let condition = (*occupied.iter().max().unwrap_or(&1) as f64
                / *occupied.iter().min().unwrap_or(&1) as f64)
                .sqrt();
            NodePlan::Bins { cell, cells, condition }
        }
    }
}

/// One-shot `E[values | W_{t_k}]`; build a [`Regressor`] when projecting repeatedly.
pub fn conditional_expectation(
    values: &[f64],
    k: usize,
    ens: &Ensemble,
    basis: &RegressionBasis,
) -> Result<Vec<f64>> {
    if k > ens.grid().steps() {
        return Err(Error::invalid("k", format!("node {k} beyond grid end {}", ens.grid().steps())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values", "must be finite"));
    }
    basis.validate()?;
    let exponents = match basis {
        RegressionBasis::Polynomial { degree } => multi_indices(ens.d(), *degree),
        RegressionBasis::PiecewiseBins { .. } => Vec::new(),
    };
    let mut plans: Vec<NodePlan> = (0..k).map(|_| NodePlan::Mean).collect();
    plans.push(plan_node(ens, basis, &exponents, k));
    let reg = Regressor { ens, basis: basis.clone(), exponents, plans, fallbacks: AtomicUsize::new(0) };
    reg.project(k, values)
}
