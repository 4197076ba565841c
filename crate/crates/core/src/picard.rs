//! The decoupling map Γ and its fixed-point iteration on a terminal window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::constants::{contraction_coefficients, ConstantsLedger, ContractionCoefficients};
use crate::error::{Error, Result};
use crate::mc::{ProcessPair, Regressor, TimeGrid};
use crate::model::{Generator, ModelParams, Point};
use crate::qbsde1d::{solve_1d_window, FrozenGenerator1D, GrowthCertificate, Solve1DOptions};

/// Relative slack on the ball checks; the proxies are statistical estimates.
pub const BALL_SLACK: f64 = 0.05;

/// `H(z; i)`: `h` (row-major `n × d`) with row `i` (0-based) replaced by `z`.
pub fn row_substitute(h: &[f64], n: usize, d: usize, z: &[f64], i: usize) -> Result<Vec<f64>> {
    if i >= n {
        return Err(Error::invalid("i", format!("row {i} out of range for n = {n}")));
    }
    if h.len() != n * d || z.len() != d {
        return Err(Error::invalid("H", format!("expected {n}x{d} matrix and length-{d} row")));
    }
    let mut out = h.to_vec();
    out[i * d..(i + 1) * d].copy_from_slice(z);
    Ok(out)
}

/// The terminal window `[T − ε, T]` on the grid together with the ball radii.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallSpec {
    /// Window length actually used, a whole number of steps.
    pub eps: f64,
    pub k1: f64,
    pub k2: f64,
    pub log_k2: f64,
    pub start: usize,
    pub end: usize,
    /// False when the window is longer than the ledger's `eps0` allows.
    pub certified: bool,
}

/// Whole steps contained in `len`, forgiving round-off in `len / dt`.
pub(crate) fn whole_steps(len: f64, dt: f64) -> usize {
    let r = len / dt;
    if !r.is_finite() {
        return if r > 0.0 { usize::MAX } else { 0 };
    }
    (r * (1.0 + 1e-9)).floor() as usize
}

impl BallSpec {
    /// Terminal window of length `eps` (rounded down to whole steps), which must not exceed `eps0`.
    pub fn new(eps: f64, ledger: &ConstantsLedger, grid: &TimeGrid) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
        }
        if eps.ln() > ledger.log_eps0 + 1e-12 {
            return Err(Error::invalid("eps", format!("{eps} exceeds eps0 = {:e}", ledger.eps0)));
        }
        let steps = whole_steps(eps, grid.dt()).min(grid.steps());
        if steps == 0 {
            return Err(Error::GridTooCoarse { t_lambda: eps, dt: grid.dt() });
        }
        let end = grid.steps();
        Ok(Self::window(end - steps, end, ledger, grid, true))
    }

    /// Arbitrary node range with the radii of `ledger`; `certified` records
    /// whether its length respects the ledger's window bound.
    pub fn window(start: usize, end: usize, ledger: &ConstantsLedger, grid: &TimeGrid, certified: bool) -> Self {
        BallSpec {
            eps: grid.t(end) - grid.t(start),
            k1: ledger.k1,
            k2: ledger.k2,
            log_k2: ledger.log_k2,
            start,
            end,
            certified,
        }
    }

    pub fn contains_sup(&self, sup: f64) -> bool {
        sup <= 2.0 * self.k1 * (1.0 + BALL_SLACK)
    }

    pub fn contains_bmo(&self, bmo: f64) -> bool {
        if bmo == 0.0 {
            return true;
        }
        2.0 * bmo.ln() <= (2.0 * (1.0 + BALL_SLACK)).ln() + self.log_k2
    }
}

/// Frozen slot of component `i`: `z ↦ f^i(t_k, U, E[U], V(z; i), E[V])`.
struct Frozen<'a> {
    gen: &'a dyn Generator,
    uv: &'a ProcessPair,
    grid: &'a TimeGrid,
    i: usize,
    cert: GrowthCertificate,
}

impl FrozenGenerator1D for Frozen<'_> {
    fn value(&self, k: usize, p: usize, z: &[f64]) -> f64 {
        let d = z.len();
        let mut v: SmallVec<[f64; 16]> = SmallVec::from_slice(self.uv.z_at(k, p));
        v[self.i * d..(self.i + 1) * d].copy_from_slice(z);
        let x = Point {
            t: self.grid.t(k),
            y: self.uv.y_at(k, p),
            ybar: self.uv.mean_y(k),
            z: &v,
            zbar: self.uv.mean_z(k),
        };
        self.gen.component(self.i, &x)
    }

    fn certificate(&self) -> &GrowthCertificate {
        &self.cert
    }
}

/// Per-application diagnostics of Γ.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GammaStats {
    pub truncation_hits: usize,
    pub max_condition: f64,
}

/// `Γ(U, V)` on the window of `uv`. `eta` holds terminal values laid out
/// `[particle][component]`, bounded by `eta_bound`.
pub fn apply_gamma(
    uv: &ProcessPair,
    gen: &dyn Generator,
    params: &ModelParams,
    eta: &[f64],
    eta_bound: f64,
    reg: &Regressor<'_>,
    opts: &Solve1DOptions,
) -> Result<(ProcessPair, GammaStats)> {
    let ens = reg.ensemble();
    let (n, d, np) = (uv.n(), uv.d(), uv.n_particles());
    if gen.n() != n || gen.d() != d || ens.d() != d || ens.n_particles() != np {
        return Err(Error::invalid("generator", "dimensions do not match the iterate"));
    }
    if eta.len() != np * n {
        return Err(Error::invalid("eta", format!("expected {} values, got {}", np * n, eta.len())));
    }
    let u_sup = uv.sup_norm_estimate();
    let v_bmo = uv.bmo_norm_estimate(reg);
    let (start, end) = (uv.start(), uv.end());
    let solved: Vec<Result<_>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let frozen = Frozen {
                gen,
                uv,
                grid: ens.grid(),
                i,
                cert: GrowthCertificate { params: params.clone(), eta_norm: eta_bound, u_sup, v_bmo },
            };
            let eta_i: Vec<f64> = eta.chunks(n).map(|r| r[i]).collect();
            solve_1d_window(&eta_i, &frozen, reg, start, end, opts)
                .map_err(|e| Error::Component { component: i, source: Box::new(e) })
        })
        .collect();
    let mut out = ProcessPair::zeros(n, d, np, start, end, uv.dt())?;
    let mut stats = GammaStats::default();
    for (i, r) in solved.into_iter().enumerate() {
        let r = r?;
        out.set_component(i, &r.y, &r.z);
        stats.truncation_hits += r.truncation_hits;
        stats.max_condition = r.conditions.iter().copied().fold(stats.max_condition, f64::max);
    }
    out.refresh_means();
    Ok((out, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `U ≡ 0`, `V ≡ 0`.
    Zero,
    /// `U_t ≡ ξ` per particle, `V ≡ 0`.
    #[default]
    TerminalFlat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init,
    pub solve: Solve1DOptions,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { tol: 1e-6, max_iter: 50, init: Init::default(), solve: Solve1DOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `S∞` proxy of `Y_m − Y_{m−1}`.
    pub dy_sup: f64,
    /// BMO proxy of `Z_m − Z_{m−1}`.
    pub dz_bmo: f64,
    /// `sqrt(dy_sup² + dz_bmo²)`.
    pub combined: f64,
    /// `combined_m / combined_{m−1}` from the second iteration on.
    pub ratio: Option<f64>,
    pub sup_proxy: f64,
    pub bmo_proxy: f64,
    pub in_ball_sup: bool,
    pub in_ball_bmo: bool,
    pub truncation_hits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PicardTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub tol: f64,
    pub init: Init,
    pub initial_in_ball: bool,
    pub ball: BallSpec,
}

impl PicardTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Every iterate, the initializer included, inside the slackened ball.
    pub fn all_in_ball(&self) -> bool {
        self.initial_in_ball && self.records.iter().all(|r| r.in_ball_sup && r.in_ball_bmo)
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.ratio).collect()
    }
}

fn initial_pair(init: Init, eta: &[f64], n: usize, d: usize, np: usize, ball: &BallSpec, dt: f64) -> Result<ProcessPair> {
    let mut uv = ProcessPair::zeros(n, d, np, ball.start, ball.end, dt)?;
    if init == Init::TerminalFlat {
        for k in ball.start..=ball.end {
            uv.y_node_mut(k).copy_from_slice(eta);
        }
    }
    uv.refresh_means();
    Ok(uv)
}

/// Picard iteration `(U, V) ← Γ(U, V)` on the window of `ball`.
#[allow(clippy::too_many_arguments)]
pub fn picard_solve_from(
    gen: &dyn Generator,
    params: &ModelParams,
    eta: &[f64],
    eta_bound: f64,
    reg: &Regressor<'_>,
    ball: &BallSpec,
    opts: &PicardOptions,
) -> Result<(ProcessPair, PicardTrace)> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter", "must be at least 1"));
    }
    let ens = reg.ensemble();
    let (n, d, np) = (params.n, params.d, ens.n_particles());
    let mut cur = initial_pair(opts.init, eta, n, d, np, ball, ens.grid().dt())?;
    let initial_in_ball = ball.contains_sup(cur.sup_norm_estimate()) && ball.contains_bmo(cur.bmo_norm_estimate(reg));
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    for it in 1..=opts.max_iter {
        let (next, stats) = apply_gamma(&cur, gen, params, eta, eta_bound, reg, &opts.solve)?;
        let diff = next.difference(&cur)?;
        let dy_sup = diff.sup_norm_estimate();
        let dz_bmo = diff.bmo_norm_estimate(reg);
        let combined = dy_sup.hypot(dz_bmo);
        let ratio = records.last().map(|prev| {
            if prev.combined == 0.0 {
                0.0
            } else {
                combined / prev.combined
            }
        });
        let sup_proxy = next.sup_norm_estimate();
        let bmo_proxy = next.bmo_norm_estimate(reg);
        records.push(IterationRecord {
            iteration: it,
            dy_sup,
            dz_bmo,
            combined,
            ratio,
            sup_proxy,
            bmo_proxy,
            in_ball_sup: ball.contains_sup(sup_proxy),
            in_ball_bmo: ball.contains_bmo(bmo_proxy),
            truncation_hits: stats.truncation_hits,
        });
        log::debug!("picard {it}: dY {dy_sup:.3e} dZ {dz_bmo:.3e}");
        cur = next;
        if dy_sup < opts.tol && dz_bmo < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("picard iteration stopped at max_iter = {} without reaching tol", opts.max_iter);
    }
    let trace = PicardTrace { records, converged, tol: opts.tol, init: opts.init, initial_in_ball, ball: ball.clone() };
    Ok((cur, trace))
}

/// [`picard_solve_from`] with terminal values drawn from `tc` on the ensemble.
pub fn picard_solve(
    gen: &dyn Generator,
    tc: &crate::model::TerminalCondition,
    params: &ModelParams,
    reg: &Regressor<'_>,
    ball: &BallSpec,
    opts: &PicardOptions,
) -> Result<(ProcessPair, PicardTrace)> {
    let eta = tc.values(reg.ensemble())?;
    picard_solve_from(gen, params, &eta, tc.bound, reg, ball, opts)
}

/// Observed contraction against the theoretical coefficients.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionReport {
    pub eps: f64,
    pub observed_ratios: Vec<f64>,
    pub max_observed_ratio: f64,
    pub coefficients: ContractionCoefficients,
    /// `sqrt(max(coef_U, coef_V / c1²))`.
    pub implied_ratio: f64,
    pub note: &'static str,
}

pub fn contraction_report(
    trace: &PicardTrace,
    params: &ModelParams,
    c1: f64,
    c2: f64,
    l4: f64,
) -> Result<ContractionReport> {
    if trace.iterations() < 3 {
        return Err(Error::invalid("trace", format!("need at least 3 iterations, have {}", trace.iterations())));
    }
    let b = &trace.ball;
    let coefficients = contraction_coefficients(b.eps, b.k1, b.k2, params, c1, c2, l4)?;
    let observed_ratios = trace.ratios();
    let max_observed_ratio = observed_ratios.iter().copied().fold(0.0, f64::max);
    Ok(ContractionReport {
        eps: b.eps,
        implied_ratio: coefficients.implied_ratio(c1),
        coefficients,
        max_observed_ratio,
        observed_ratios,
        note: "observed ratios use S-infinity and BMO proxies on grid nodes; the coefficients are the theoretical ceiling form",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_substitution_examples() {
        let h = vec![0.0; 4];
        assert_eq!(row_substitute(&h, 2, 2, &[1.0, 0.0], 0).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let h = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(row_substitute(&h, 3, 2, &h[2..4], 1).unwrap(), h);
        let once = row_substitute(&h, 3, 2, &[9.0, 9.0], 2).unwrap();
        assert_eq!(row_substitute(&once, 3, 2, &h[4..6], 2).unwrap(), h);
        assert!(row_substitute(&h, 3, 2, &[0.0, 0.0], 3).is_err());
    }

    #[test]
    fn whole_steps_forgives_roundoff() {
        assert_eq!(whole_steps(0.3, 0.1), 3);
        assert_eq!(whole_steps(0.29, 0.1), 2);
        assert_eq!(whole_steps(0.05, 0.1), 0);
        assert_eq!(whole_steps(f64::INFINITY, 0.1), usize::MAX);
    }

    #[test]
    fn ball_membership_uses_log_radius() {
        let b = BallSpec { eps: 0.1, k1: 1.0, k2: f64::INFINITY, log_k2: 1000.0, start: 0, end: 1, certified: true };
        assert!(b.contains_bmo(1e200));
        assert!(b.contains_sup(2.1));
        assert!(!b.contains_sup(2.11));
    }
}
