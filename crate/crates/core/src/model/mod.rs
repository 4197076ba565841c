//! Problem definition: structural constants, generators and terminal conditions.
//!
//! A mean-field BSDE on `[0, T]` is fixed by its generator
//! `f(t, y, ȳ, z, z̄) ∈ R^n`, where `ȳ = E[Y_t]` and `z̄ = E[Z_t]`, and a
//! bounded terminal value `ξ`. [`ModelParams`] carries the growth data the
//! generator is certified against; the checkers in [`checks`] falsify that
//! certificate on sampled points.

pub mod checks;
pub mod generators;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::mc::PathView;

pub use checks::{
    check_h1, check_h1_in, check_h2, check_h2_in, check_h4, check_h4_in, Assumption,
    AssumptionReport, SampleTuple, SamplingBox, Violation,
};
pub use generators::{DiagonalQuadratic, LogGrowth, MeanFieldLinear, ZeroGenerator};

/// Relative slack used when comparing quadrature results against declared bounds.
const QUADRATURE_SLACK: f64 = 1e-10;
const QUADRATURE_PANELS: usize = 2048;

/// A deterministic scalar function, either of time (`a_t`, `α_t`, ...) or of a
/// nonnegative radius (`φ`).
///
/// Deserializes from a bare number (constant) or `{ intercept, slope }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarFn {
    Constant(f64),
    Affine { intercept: f64, slope: f64 },
}

impl ScalarFn {
    pub const ZERO: ScalarFn = ScalarFn::Constant(0.0);

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Constant(c) => c,
            ScalarFn::Affine { intercept, slope } => intercept + slope * x,
        }
    }

    /// Composite Simpson quadrature of the function over `[lo, hi]`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        integrate(|t| self.eval(t), lo, hi)
    }
}

impl Default for ScalarFn {
    fn default() -> Self {
        ScalarFn::ZERO
    }
}

/// Composite Simpson rule with a fixed panel count.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let m = QUADRATURE_PANELS;
    let h = (hi - lo) / m as f64;
    let mut acc = f(lo) + f(hi);
    for j in 1..m {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * j as f64);
    }
    acc * h / 3.0
}

/// Structural constants and functions of the growth assumptions.
///
/// `c0` bounds `∫₀ᵀ a_t dt`, `c1` bounds `‖ξ‖_∞` and `c2` bounds
/// `∫₀ᵀ (α_t + β_t + η_t log(1 + η_t)) dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub delta: f64,
    pub phi: ScalarFn,
    pub a: ScalarFn,
    pub alpha: ScalarFn,
    pub beta: ScalarFn,
    pub eta: ScalarFn,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
}

impl ModelParams {
    /// Parameters with every function identically zero; callers fill in the rest.
    pub fn basic(n: usize, d: usize, horizon: f64, gamma: f64) -> Self {
        ModelParams {
            n,
            d,
            horizon,
            gamma,
            k: 0.0,
            delta: 0.0,
            phi: ScalarFn::ZERO,
            a: ScalarFn::ZERO,
            alpha: ScalarFn::ZERO,
            beta: ScalarFn::ZERO,
            eta: ScalarFn::ZERO,
            c0: 0.0,
            c1: 0.0,
            c2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "state dimension must be positive"));
        }
        if self.d == 0 {
            return Err(Error::invalid("d", "Brownian dimension must be positive"));
        }
        positive("T", self.horizon)?;
        positive("gamma", self.gamma)?;
        nonnegative("K", self.k)?;
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::DeltaOutOfRange(self.delta));
        }
        nonnegative("C0", self.c0)?;
        nonnegative("C1", self.c1)?;
        nonnegative("C2", self.c2)?;

        // phi: nonnegative and nondecreasing on a geometric grid of radii.
        let mut prev = self.phi.eval(0.0);
        if !(prev.is_finite() && prev >= 0.0) {
            return Err(Error::invalid("phi", format!("phi(0) = {prev} must be finite and >= 0")));
        }
        for j in 0..=200 {
            let r = 1e-6 * 10f64.powf(j as f64 * 0.05);
            let v = self.phi.eval(r);
            if !v.is_finite() || v < prev {
                return Err(Error::invalid("phi", format!("not nondecreasing at r = {r:.3e}")));
            }
            prev = v;
        }

        for (name, f) in [("a", &self.a), ("alpha", &self.alpha), ("beta", &self.beta), ("eta", &self.eta)] {
            for j in 0..=256 {
                let t = self.horizon * j as f64 / 256.0;
                let v = f.eval(t);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(name, format!("must be nonnegative, got {v} at t = {t}")));
                }
            }
        }

        let a_int = self.a.integral(0.0, self.horizon);
        if a_int > self.c0 * (1.0 + QUADRATURE_SLACK) + QUADRATURE_SLACK {
            return Err(Error::invalid("C0", format!("integral of a is {a_int}, exceeds C0 = {}", self.c0)));
        }
        let h5 = self.h5_integral(0.0, self.horizon);
        if h5 > self.c2 * (1.0 + QUADRATURE_SLACK) + QUADRATURE_SLACK {
            return Err(Error::invalid("C2", format!("integral of alpha+beta+eta log(1+eta) is {h5}, exceeds C2 = {}", self.c2)));
        }
        Ok(())
    }

    /// `∫_lo^hi (α + β + η log(1 + η)) dt`.
    pub fn h5_integral(&self, lo: f64, hi: f64) -> f64 {
        integrate(
            |t| {
                let e = self.eta.eval(t);
                self.alpha.eval(t) + self.beta.eval(t) + e * e.ln_1p()
            },
            lo,
            hi,
        )
    }

    /// Copy with the terminal bound replaced; used to size the stitching window.
    pub fn with_terminal_bound(&self, c1: f64) -> Self {
        ModelParams { c1, ..self.clone() }
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        ModelParams { horizon, ..self.clone() }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be nonnegative and finite, got {v}")))
    }
}

/// One evaluation point of a generator. `z` and `zbar` are row-major `n × d`.
#[derive(Clone, Copy, Debug)]
pub struct Point<'a> {
    pub t: f64,
    pub y: &'a [f64],
    pub ybar: &'a [f64],
    pub z: &'a [f64],
    pub zbar: &'a [f64],
}

/// A generator `f(t, y, ȳ, z, z̄)`.
///
/// Implementations provide [`Generator::component`]; [`Generator::eval`] is
/// assembled from it so the two agree exactly.
pub trait Generator: Send + Sync {
    fn n(&self) -> usize;
    fn d(&self) -> usize;
    fn component(&self, i: usize, x: &Point<'_>) -> f64;

    fn name(&self) -> &str {
        "anonymous"
    }

    fn eval(&self, x: &Point<'_>) -> Vec<f64> {
        (0..self.n()).map(|i| self.component(i, x)).collect()
    }
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn row(z: &[f64], i: usize, d: usize) -> &[f64] {
    &z[i * d..(i + 1) * d]
}

/// How the terminal value is computed from a discrete Brownian path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalKind {
    /// `ξ ≡ value` (one entry per component).
    Constant { value: Vec<f64> },
    /// Every component equals `clamp(W_T^1, -clamp, clamp)`.
    ClampedBrownian { n: usize, clamp: f64 },
}

/// Bounded terminal functional `ξ = g(W_{t_0}, ..., W_{t_M})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalCondition {
    pub kind: TerminalKind,
    pub bound: f64,
}

impl TerminalCondition {
    pub fn new(kind: TerminalKind, bound: f64, params: &ModelParams) -> Result<Self> {
        nonnegative("terminal.bound", bound)?;
        if bound > params.c1 * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "terminal.bound",
                format!("declared bound {bound} exceeds C1 = {}", params.c1),
            ));
        }
        let n = match &kind {
            TerminalKind::Constant { value } => {
                let v = norm(value);
                if v > bound * (1.0 + 1e-12) {
                    return Err(Error::invalid("terminal.value", format!("|value| = {v} exceeds bound {bound}")));
                }
                value.len()
            }
            TerminalKind::ClampedBrownian { n, clamp } => {
                nonnegative("terminal.clamp", *clamp)?;
                *n
            }
        };
        if n != params.n {
            return Err(Error::invalid("terminal", format!("has {n} components, model has n = {}", params.n)));
        }
        Ok(TerminalCondition { kind, bound })
    }

    pub fn n(&self) -> usize {
        match &self.kind {
            TerminalKind::Constant { value } => value.len(),
            TerminalKind::ClampedBrownian { n, .. } => *n,
        }
    }

    pub fn eval_path(&self, path: &PathView<'_>) -> SmallVec<[f64; 8]> {
        match &self.kind {
            TerminalKind::Constant { value } => value.iter().copied().collect(),
            TerminalKind::ClampedBrownian { n, clamp } => {
                let w = path.w(path.last_node(), 0).clamp(-clamp, *clamp);
                std::iter::repeat_n(w, *n).collect()
            }
        }
    }

    /// Terminal values on every particle, laid out `[particle][component]`.
    /// Rejects the ensemble if any path violates the declared bound.
    pub fn values(&self, ens: &crate::mc::Ensemble) -> Result<Vec<f64>> {
        let n = self.n();
        let mut out = Vec::with_capacity(ens.n_particles() * n);
        for p in 0..ens.n_particles() {
            let v = self.eval_path(&ens.path(p));
            let r = norm(&v);
            if r > self.bound * (1.0 + 1e-12) {
                return Err(Error::TerminalBound { particle: p, value: r, bound: self.bound });
            }
            out.extend_from_slice(&v);
        }
        Ok(out)
    }
}
