//! The explicit constants of the local and global existence argument.
//!
//! Several of these grow like `exp(4γK1)` and overflow binary64 for
//! moderate inputs, so each overflow-prone quantity is also carried as its
//! natural logarithm. The plain value is `exp(log)` and may be `inf` or
//! underflow to `0`; comparisons in the solver use the log form.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// `C_{δ,K,n} = ((1-δ)/2) (1+δ)^{(1+δ)/(1-δ)} (nK)^{2/(1-δ)}`.
pub fn c_delta_k_n(delta: f64, k: f64, n: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::DeltaOutOfRange(delta));
    }
    if !(k.is_finite() && k >= 0.0) {
        return Err(Error::invalid("K", format!("must be nonnegative, got {k}")));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if k == 0.0 {
        return Ok(0.0);
    }
    let p = (1.0 + delta) / (1.0 - delta);
    Ok(0.5 * (1.0 - delta) * (1.0 + delta).powf(p) * (n as f64 * k).powf(2.0 / (1.0 - delta)))
}

/// Exponent `(1+δ)/(1-δ)` shared by every BMO term.
pub fn bmo_exponent(delta: f64) -> f64 {
    (1.0 + delta) / (1.0 - delta)
}

/// `ln(e^a + e^b)` without overflow.
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Radius constants of the local ball: `(K1, ln K2)`.
fn ball_radii_log(p: &ModelParams) -> (f64, f64) {
    let n = p.n as f64;
    let g = p.gamma;
    let k1 = n / g * 2f64.ln() + 0.5 + n * (p.c0 + p.c1);
    let log_k2 = log_add(
        (n / (g * g)).ln() + 2.0 * g * p.c1,
        (n / g).ln() + 4.0 * g * k1 + (2.0 + 2.0 * p.c0).ln(),
    );
    (k1, log_k2)
}

/// `K1 = (n/γ) log 2 + 1/2 + n(C0 + C1)` and
/// `K2 = (n/γ²) e^{2γC1} + (n/γ) e^{4γK1} (2 + 2C0)`.
pub fn local_ball(p: &ModelParams) -> Result<(f64, f64)> {
    p.validate()?;
    let n = p.n as f64;
    let g = p.gamma;
    let k1 = n / g * 2f64.ln() + 0.5 + n * (p.c0 + p.c1);
    let k2 = n / (g * g) * (2.0 * g * p.c1).exp() + n / g * (4.0 * g * k1).exp() * (2.0 + 2.0 * p.c0);
    Ok((k1, k2))
}

/// Natural log of the local window length `ε0`.
///
/// The subscript in the `C`-terms is read as `C_{δ,K,n}`.
pub fn local_step_log(p: &ModelParams) -> Result<f64> {
    p.validate()?;
    let n = p.n as f64;
    let g = p.gamma;
    let (k1, log_k2) = ball_radii_log(p);
    let phi = p.phi.eval(2.0 * k1);
    if !phi.is_finite() {
        return Err(Error::PhiNotFinite(phi));
    }
    let c = c_delta_k_n(p.delta, p.k, p.n)?;
    let e = bmo_exponent(p.delta);
    // ln(C (2 K2)^e), or -inf when C vanishes.
    let log_ck = if c == 0.0 { f64::NEG_INFINITY } else { c.ln() + e * (2f64.ln() + log_k2) };
    let log_phi = if phi == 0.0 { f64::NEG_INFINITY } else { phi.ln() };

    let log_den1 = log_add((n).ln() + log_phi, (n * g.powf(e) + 1.0).ln() + log_ck);
    let log_den2 = log_add(2f64.ln() + log_phi, 4f64.ln() + log_ck);
    if log_den1 == f64::NEG_INFINITY && log_den2 == f64::NEG_INFINITY {
        return Err(Error::DegenerateStep);
    }
    // (γ/n) e^{-4γK1} K2 = (1/γ) e^{2γC1 - 4γK1} + (2 + 2C0).
    let log_num2 = log_add(-g.ln() + 2.0 * g * p.c1 - 4.0 * g * k1, (2.0 + 2.0 * p.c0).ln());
    let r1 = k1.ln() - log_den1;
    let r2 = log_num2 - log_den2;
    Ok(r1.min(r2))
}

/// `ε0`: the largest local window on which the fixed-point map preserves its ball.
pub fn local_step(p: &ModelParams) -> Result<f64> {
    local_step_log(p).map(f64::exp)
}

/// `C3 = (n/γ) log(2e^{γC1} + 2) + 2n(1 + 2n/γ)(C2 + 2T) + 4nC2` and
/// `λ = C3 exp(2nC2(γ+1) + 4nγT)`.
pub fn apriori_lambda(p: &ModelParams) -> Result<(f64, f64)> {
    let (c3, _) = apriori_lambda_log(p)?;
    Ok((c3, lambda_from(c3, p)))
}

fn lambda_exponent(p: &ModelParams) -> f64 {
    let n = p.n as f64;
    2.0 * n * p.c2 * (p.gamma + 1.0) + 4.0 * n * p.gamma * p.horizon
}

fn lambda_from(c3: f64, p: &ModelParams) -> f64 {
    c3 * lambda_exponent(p).exp()
}

/// `(C3, ln λ)`.
pub fn apriori_lambda_log(p: &ModelParams) -> Result<(f64, f64)> {
    p.validate()?;
    let n = p.n as f64;
    let g = p.gamma;
    let gc1 = g * p.c1;
    let log_term = if gc1.exp().is_finite() {
        (2.0 * gc1.exp() + 2.0).ln()
    } else {
        gc1 + 2f64.ln() + (-gc1).exp().ln_1p()
    };
    let c3 = n / g * log_term + 2.0 * n * (1.0 + 2.0 * n / g) * (p.c2 + 2.0 * p.horizon) + 4.0 * n * p.c2;
    Ok((c3, c3.ln() + lambda_exponent(p)))
}

/// `C log(1+x) ≤ x²/y + C log(1+Cy)`; returns right side minus left side.
pub fn log_inequality_gap(x: f64, y: f64, c: f64) -> Result<f64> {
    for (name, v) in [("x", x), ("y", y), ("C", c)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(name, format!("must be positive, got {v}")));
        }
    }
    Ok(x * x / y + c * (c * y).ln_1p() - c * x.ln_1p())
}

/// Diagnostic contraction coefficients of the fixed-point map on a window of length `eps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContractionCoefficients {
    /// Multiplies `‖ΔU‖²_{S∞}`.
    pub coef_u: f64,
    /// Multiplies `‖ΔV‖²_{BMO}`.
    pub coef_v: f64,
}

impl ContractionCoefficients {
    /// Contraction factor in the norm `(‖Y‖² + c1²‖Z‖²)^{1/2}` implied by the coefficients.
    pub fn implied_ratio(&self, c1: f64) -> f64 {
        self.coef_u.max(self.coef_v / (c1 * c1)).sqrt()
    }
}

pub fn contraction_coefficients(
    eps: f64,
    k1: f64,
    k2: f64,
    p: &ModelParams,
    c1: f64,
    c2: f64,
    l4: f64,
) -> Result<ContractionCoefficients> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    for (name, v) in [("c1", c1), ("c2", c2), ("L4", l4)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(name, format!("must be positive, got {v}")));
        }
    }
    let n = p.n as f64;
    let phi2 = p.phi.eval(2.0 * k1).powi(2);
    let t = p.horizon;
    let coef_u = 64.0 * n * eps * phi2 * (t + 16.0 * c2 * c2 * k2 + 8.0 * k2);
    let lc = l4 * l4 * c2 * c2;
    let coef_v = 96.0 * 3f64.sqrt() * n * eps.powf(1.0 - p.delta) * phi2
        * (1.0 + n * lc)
        * (t.powf(p.delta) + 8.0 + 12.0 * lc * k2 + 4.0 * k2);
    Ok(ContractionCoefficients { coef_u, coef_v })
}

/// Every explicit constant, computed once from `ModelParams`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantsLedger {
    pub c_dkn: f64,
    pub k1: f64,
    pub k2: f64,
    pub log_k2: f64,
    pub eps0: f64,
    pub log_eps0: f64,
    pub c3: f64,
    pub lambda: f64,
    pub log_lambda: f64,
    /// Window length of the stitched solve: `ε0` with the terminal bound replaced by `λ`.
    pub t_lambda: f64,
    pub log_t_lambda: f64,
}

impl ConstantsLedger {
    pub fn new(p: &ModelParams) -> Result<Self> {
        let c_dkn = c_delta_k_n(p.delta, p.k, p.n)?;
        let (k1, k2) = local_ball(p)?;
        let (_, log_k2) = ball_radii_log(p);
        let log_eps0 = local_step_log(p)?;
        let (c3, log_lambda) = apriori_lambda_log(p)?;
        let lambda = lambda_from(c3, p);
        let log_t_lambda = local_step_log(&p.with_terminal_bound(lambda))?;
        Ok(ConstantsLedger {
            c_dkn,
            k1,
            k2,
            log_k2,
            eps0: log_eps0.exp(),
            log_eps0,
            c3,
            lambda,
            log_lambda,
            t_lambda: log_t_lambda.exp(),
            log_t_lambda,
        })
    }

    /// Ledger for a window whose terminal bound is `λ`; its `eps0` is `t_lambda`.
    pub fn for_stitched_window(&self, p: &ModelParams) -> Result<Self> {
        Self::new(&p.with_terminal_bound(self.lambda))
    }

    /// Human-readable formula for every ledger field.
    pub fn formulas() -> Vec<(&'static str, &'static str)> {
        vec![
            ("c_dkn", "((1-delta)/2) (1+delta)^((1+delta)/(1-delta)) (n K)^(2/(1-delta))"),
            ("k1", "(n/gamma) ln 2 + 1/2 + n (C0 + C1)"),
            ("k2", "(n/gamma^2) exp(2 gamma C1) + (n/gamma) exp(4 gamma K1) (2 + 2 C0)"),
            (
                "eps0",
                "min( K1 / (n phi(2K1) + (n gamma^p + 1) C_dKn (2K2)^p), (gamma/n) exp(-4 gamma K1) K2 / (2 phi(2K1) + 4 C_dKn (2K2)^p) ), p = (1+delta)/(1-delta)",
            ),
            ("c3", "(n/gamma) ln(2 exp(gamma C1) + 2) + 2n (1 + 2n/gamma)(C2 + 2T) + 4n C2"),
            ("lambda", "C3 exp(2n C2 (gamma+1) + 4n gamma T)"),
            ("t_lambda", "eps0 evaluated with C1 replaced by lambda"),
        ]
    }
}
