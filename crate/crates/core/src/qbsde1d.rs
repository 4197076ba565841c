//! Backward regression solver for one scalar quadratic BSDE with a frozen
//! environment, plus the a priori bounds that size its truncation radius.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{bmo_exponent, c_delta_k_n};
use crate::error::{Error, Result};
use crate::mc::{Ensemble, RegressionBasis, Regressor, CHUNK};
use crate::model::{norm, ModelParams};

/// `|Y_t|` ceiling for the scalar equation with frozen environment norms
/// `(‖U‖_{S∞[t,T]}, ‖V‖_{BMO[t,T]})` and terminal bound `eta_norm`.
pub fn bound_y(p: &ModelParams, t: f64, eta_norm: f64, u_sup: f64, v_bmo: f64) -> Result<f64> {
    let (tail, vterm) = growth_terms(p, t, u_sup, v_bmo)?;
    let gp = p.gamma.powf(bmo_exponent(p.delta));
    Ok(std::f64::consts::LN_2 / p.gamma + eta_norm + tail.0 + tail.1 + gp * vterm)
}

/// `E_τ[∫_τ^T |Z|² ds]` ceiling given the solution's own sup bound `y_sup`.
pub fn bound_z(p: &ModelParams, t: f64, eta_norm: f64, y_sup: f64, u_sup: f64, v_bmo: f64) -> Result<f64> {
    let (tail, vterm) = growth_terms(p, t, u_sup, v_bmo)?;
    let g = p.gamma;
    let bracket = 1.0 + 2.0 * tail.0 + 2.0 * tail.1 + 2.0 * vterm;
    Ok((2.0 * g * eta_norm).exp() / (g * g) + (2.0 * g * y_sup).exp() / g * bracket)
}

/// `(∫_t^T a, φ(‖U‖)(T−t))` and `C_{δ,K,n} ‖V‖^{2(1+δ)/(1−δ)} (T−t)`.
fn growth_terms(p: &ModelParams, t: f64, u_sup: f64, v_bmo: f64) -> Result<((f64, f64), f64)> {
    if !(0.0..1.0).contains(&p.delta) {
        return Err(Error::DeltaOutOfRange(p.delta));
    }
    if u_sup < 0.0 || v_bmo < 0.0 {
        return Err(Error::invalid("env_norms", "must be nonnegative"));
    }
    let rest = (p.horizon - t).max(0.0);
    let a_int = p.a.integral(t.min(p.horizon), p.horizon);
    let c = c_delta_k_n(p.delta, p.k, p.n)?;
    let vterm = if c == 0.0 { 0.0 } else { c * v_bmo.powf(2.0 * bmo_exponent(p.delta)) * rest };
    Ok(((a_int, p.phi.eval(u_sup) * rest), vterm))
}

/// Data certifying the growth of a frozen generator: model constants plus
/// the norms of the frozen environment and of the terminal value.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthCertificate {
    pub params: ModelParams,
    pub eta_norm: f64,
    pub u_sup: f64,
    pub v_bmo: f64,
}

impl GrowthCertificate {
    pub fn bound_y(&self, t: f64) -> Result<f64> {
        bound_y(&self.params, t, self.eta_norm, self.u_sup, self.v_bmo)
    }

    /// `safety · sqrt(bound_z)` with the sup bound of `Y` taken from [`bound_y`].
    pub fn truncation_radius(&self, t: f64, safety: f64) -> Result<f64> {
        let y = self.bound_y(t)?;
        let bz = bound_z(&self.params, t, self.eta_norm, y, self.u_sup, self.v_bmo)?;
        Ok(safety * bz.sqrt())
    }
}

/// `z ↦ f(t_k, z)` on particle `p`, the environment already substituted.
pub trait FrozenGenerator1D: Sync {
    fn value(&self, k: usize, p: usize, z: &[f64]) -> f64;
    fn certificate(&self) -> &GrowthCertificate;
}

/// A [`FrozenGenerator1D`] backed by a closure.
pub struct FnGenerator1D<F> {
    pub f: F,
    pub cert: GrowthCertificate,
}

impl<F: Fn(usize, usize, &[f64]) -> f64 + Sync> FrozenGenerator1D for FnGenerator1D<F> {
    fn value(&self, k: usize, p: usize, z: &[f64]) -> f64 {
        (self.f)(k, p, z)
    }
    fn certificate(&self) -> &GrowthCertificate {
        &self.cert
    }
}

/// Time stepping of the `ds` integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Left-point rule: `Y_k = E_k[Y_{k+1}] + f(t_k, Z_k) dt`.
    Explicit,
    /// Trapezoidal rule: half of the generator from each end of the step.
    #[default]
    Trapezoidal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solve1DOptions {
    /// Radial cap on `|Z|`; `None` derives it from the certificate.
    pub trunc_r: Option<f64>,
    pub safety: f64,
    /// Blow-up guard on `max |Y_k|`; `None` means `10 · bound_y`.
    pub guard: Option<f64>,
    pub scheme: Scheme,
    /// Regress `Y_{k+1} - Z_k ΔW_k` instead of `Y_{k+1}` for the `Y` update.
    /// The subtracted term has zero conditional mean, so the target is
    /// unchanged, but the sampling error of the fitted slope no longer
    /// accumulates from node to node.
    pub martingale_control: bool,
}

impl Default for Solve1DOptions {
    fn default() -> Self {
        Solve1DOptions { trunc_r: None, safety: 3.0, guard: None, scheme: Scheme::default(), martingale_control: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solve1DResult {
    pub start: usize,
    pub end: usize,
    /// `[node][particle]`, nodes `start..=end`.
    pub y: Vec<f64>,
    /// `[node][particle][j]`; the row at `end` is the one-step predictor used by the scheme.
    pub z: Vec<f64>,
    pub truncation_hits: usize,
    pub trunc_r: f64,
    pub guard: f64,
    /// Regression condition number per node of the window.
    pub conditions: Vec<f64>,
}

impl Solve1DResult {
    pub fn y_node(&self, k: usize) -> &[f64] {
        let np = self.y.len() / (self.end - self.start + 1);
        &self.y[(k - self.start) * np..(k - self.start + 1) * np]
    }

    pub fn z_node(&self, k: usize) -> &[f64] {
        let w = self.z.len() / (self.end - self.start + 1);
        &self.z[(k - self.start) * w..(k - self.start + 1) * w]
    }
}

/// Whole-grid solve with default options.
pub fn solve_1d(
    eta: &[f64],
    g: &dyn FrozenGenerator1D,
    ens: &Ensemble,
    basis: &RegressionBasis,
    trunc_r: f64,
) -> Result<Solve1DResult> {
    let reg = Regressor::new(ens, basis)?;
    let opts = Solve1DOptions { trunc_r: Some(trunc_r), ..Default::default() };
    solve_1d_window(eta, g, &reg, 0, ens.grid().steps(), &opts)
}

/// Backward induction on the absolute nodes `start..=end` with `Y_end = eta`.
pub fn solve_1d_window(
    eta: &[f64],
    g: &dyn FrozenGenerator1D,
    reg: &Regressor<'_>,
    start: usize,
    end: usize,
    opts: &Solve1DOptions,
) -> Result<Solve1DResult> {
    let ens = reg.ensemble();
    let (np, d) = (ens.n_particles(), ens.d());
    if end <= start || end > ens.grid().steps() {
        return Err(Error::invalid("window", format!("{start}..={end} is not a nonempty range of the grid")));
    }
    if eta.len() != np {
        return Err(Error::invalid("eta", format!("expected {np} values, got {}", eta.len())));
    }
    let cert = g.certificate();
    let eta_max = eta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eta_max > cert.eta_norm * (1.0 + 1e-12) {
        return Err(Error::invalid("eta", format!("max |eta| = {eta_max} exceeds declared bound {}", cert.eta_norm)));
    }
    let t0 = ens.grid().t(start);
    let trunc_r = match opts.trunc_r {
        Some(r) => r,
        None => cert.truncation_radius(t0, opts.safety)?,
    };
    if !(trunc_r > 0.0) || trunc_r.is_nan() {
        return Err(Error::invalid("trunc_R", format!("must be positive, got {trunc_r}")));
    }
    let guard = match opts.guard {
        Some(gd) => gd,
        None => 10.0 * cert.bound_y(t0)?,
    };

    let dt = ens.grid().dt();
    let nodes = end - start + 1;
    let mut y = vec![0.0; nodes * np];
    let mut z = vec![0.0; nodes * np * d];
    let mut hits = 0usize;
    let mut conditions = vec![1.0; nodes];
    y[(nodes - 1) * np..].copy_from_slice(eta);
    conditions[nodes - 1] = reg.condition(end);

    // Projection of an `F_{k+1}` field onto `F_k`: returns (E_k[v], Z estimate).
    let step_z = |k: usize, v: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let ev = reg.project_or_mean(k, v);
        let dw = ens.dw_node(k);
        let mut zk = vec![0.0; np * d];
        for j in 0..d {
            let prod: Vec<f64> = (0..np).map(|p| (v[p] - ev[p]) * dw[p * d + j]).collect();
            let proj = reg.project_or_mean(k, &prod);
            for p in 0..np {
                zk[p * d + j] = proj[p] / dt;
            }
        }
        (ev, zk)
    };
    let truncate = |zk: &mut [f64]| -> usize {
        zk.par_chunks_mut(d * CHUNK)
            .map(|block| {
                let mut h = 0;
                for row in block.chunks_mut(d) {
                    let r = norm(row);
                    if r > trunc_r {
                        row.iter_mut().for_each(|v| *v *= trunc_r / r);
                        h += 1;
                    }
                }
                h
            })
            .sum()
    };
    let gen_values = |k: usize, zk: &[f64]| -> Vec<f64> {
        (0..np).into_par_iter().map(|p| g.value(k, p, &zk[p * d..(p + 1) * d])).collect()
    };

    if opts.scheme == Scheme::Trapezoidal {
        let (_, mut zend) = step_z(end - 1, eta);
        hits += truncate(&mut zend);
        z[(nodes - 1) * np * d..].copy_from_slice(&zend);
    }

    for k in (start..end).rev() {
        let l = k - start;
        let next_y = &y[(l + 1) * np..(l + 2) * np];
        let target: Vec<f64> = match opts.scheme {
            Scheme::Explicit => next_y.to_vec(),
            Scheme::Trapezoidal => {
                let zn = &z[(l + 1) * np * d..(l + 2) * np * d];
                let gn = gen_values(k + 1, zn);
                next_y.iter().zip(&gn).map(|(yv, gv)| yv + 0.5 * dt * gv).collect()
            }
        };
        let (mut ey, mut zk) = step_z(k, &target);
        hits += truncate(&mut zk);
        if opts.martingale_control {
            let dw = ens.dw_node(k);
            let corrected: Vec<f64> = (0..np)
                .map(|p| target[p] - (0..d).map(|j| zk[p * d + j] * dw[p * d + j]).sum::<f64>())
                .collect();
            ey = reg.project_or_mean(k, &corrected);
        }
        let gk = gen_values(k, &zk);
        let weight = match opts.scheme {
            Scheme::Explicit => dt,
            Scheme::Trapezoidal => 0.5 * dt,
        };
        let yk: Vec<f64> = ey.iter().zip(&gk).map(|(e, gv)| e + weight * gv).collect();
        let max_abs = yk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(max_abs <= guard) {
            return Err(Error::BlowUp { node: k, max_abs, guard });
        }
        y[l * np..(l + 1) * np].copy_from_slice(&yk);
        z[l * np * d..(l + 1) * np * d].copy_from_slice(&zk);
        conditions[l] = reg.condition(k);
    }
    Ok(Solve1DResult { start, end, y, z, truncation_hits: hits, trunc_r, guard, conditions })
}
