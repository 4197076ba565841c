//! Benchmark catalog: generators with certified parameters and, where one
//! exists, an independent closed-form solution.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{Ensemble, ProcessPair};
use crate::model::{
    check_h1, check_h2, check_h4, norm, AssumptionReport, DiagonalQuadratic, Generator, LogGrowth, MeanFieldLinear,
    ModelParams, Point, ScalarFn, TerminalCondition, TerminalKind, ZeroGenerator,
};

/// Names accepted by [`BenchmarkCase::by_name`].
pub const CATALOG: [&str; 4] = ["zero", "meanfield_linear", "colehopf_diagonal", "loggrowth"];

/// Closed-form solution of a case.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Oracle {
    /// `Y ≡ c` componentwise, `Z ≡ 0`.
    Constant { value: Vec<f64> },
    /// `Y_t = c e^{rate (T − t)}` in every component, `Z ≡ 0`.
    Exponential { c: f64, rate: f64, n: usize },
    /// `Y^i_t = W_t + (γ/2)(T − t)`, `Z^i ≡ 1`, for the unclamped terminal value.
    ColeHopf { gamma: f64, n: usize },
}

impl Oracle {
    /// `(Y, Z)` at time `t` for Brownian state `w`; `Z` is row-major `n × d`.
    pub fn eval(&self, t: f64, horizon: f64, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = w.len();
        match self {
            Oracle::Constant { value } => (value.clone(), vec![0.0; value.len() * d]),
            Oracle::Exponential { c, rate, n } => (vec![c * (rate * (horizon - t)).exp(); *n], vec![0.0; n * d]),
            Oracle::ColeHopf { gamma, n } => {
                let y = w[0] + 0.5 * gamma * (horizon - t);
                let mut z = vec![0.0; n * d];
                for i in 0..*n {
                    z[i * d] = 1.0;
                }
                (vec![y; *n], z)
            }
        }
    }
}

/// Expected error levels of a case at given resolutions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerance {
    pub m: usize,
    pub n_particles: usize,
    /// Bound on `max_k` RMS error of `Y`.
    pub y: f64,
    /// Bound on the node-averaged RMS error of `Z`.
    pub z: f64,
}

/// Oracle comparison of a solved pair, node by node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleErrors {
    /// RMS over particles of `|Y − Y*|` per node.
    pub rms_y: Vec<f64>,
    /// RMS over particles of `|Z − Z*|` per node; `0` at the last node, where `Z` is not part of the solution.
    pub rms_z: Vec<f64>,
    /// `|E[Y] − E[Y*]|` per node, Euclidean over components.
    pub mean_y: Vec<f64>,
    pub y0_abs: f64,
    pub max_rms_y: f64,
    pub mean_rms_z: f64,
    pub max_mean_y: f64,
}

/// One-step residual `Y_{k+1} − Y_k + f dt − Z ΔW` of the oracle on an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualCheck {
    /// `max_k |mean_p residual_{k,p}|`.
    pub residual: f64,
    /// `10 dt² + 4 max_k sd_k / √N`.
    pub allowance: f64,
    pub passed: bool,
}

#[derive(Clone)]
pub struct BenchmarkCase {
    pub name: String,
    pub params: ModelParams,
    pub generator: Arc<dyn Generator>,
    pub terminal: TerminalCondition,
    pub oracle: Option<Oracle>,
    pub tolerances: Vec<Tolerance>,
}

impl fmt::Debug for BenchmarkCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BenchmarkCase")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("terminal", &self.terminal)
            .field("oracle", &self.oracle)
            .finish()
    }
}

/// Numeric knobs of the catalog; missing entries take the documented defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseArgs {
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub n: Option<usize>,
    pub c: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
    pub clamp: Option<f64>,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive, got {v}")))
    }
}

impl BenchmarkCase {
    /// `f ≡ 0`, `ξ ≡ c` in each of `n` components.
    pub fn zero(c: f64, n: usize, horizon: f64) -> Result<Self> {
        let mut p = ModelParams::basic(n, 1, horizon, 1.0);
        p.phi = ScalarFn::Constant(1.0);
        let bound = c.abs() * (n as f64).sqrt();
        p.c1 = bound;
        p.validate()?;
        let value = vec![c; n];
        let terminal = TerminalCondition::new(TerminalKind::Constant { value: value.clone() }, bound, &p)?;
        Ok(BenchmarkCase {
            name: "zero".into(),
            generator: Arc::new(ZeroGenerator { n, d: 1 }),
            params: p,
            terminal,
            oracle: Some(Oracle::Constant { value }),
            tolerances: vec![Tolerance { m: 1, n_particles: 2, y: 0.0, z: 0.0 }],
        })
    }

    /// `f^i = a y^i + b ȳ^i`, `ξ ≡ c`; the solution is the deterministic `c e^{(a+b)(T−t)}`.
    pub fn meanfield_linear(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::meanfield_linear_with(a, b, c, 1, 1.0)
    }

    pub fn meanfield_linear_with(a: f64, b: f64, c: f64, n: usize, horizon: f64) -> Result<Self> {
        let s = a.abs() + b.abs();
        let mut p = ModelParams::basic(n, 1, horizon, 1.0);
        p.phi = ScalarFn::Affine { intercept: s, slope: s };
        p.beta = ScalarFn::Constant(s);
        p.c2 = s * horizon;
        let bound = c.abs() * (n as f64).sqrt();
        p.c1 = bound;
        p.validate()?;
        let terminal = TerminalCondition::new(TerminalKind::Constant { value: vec![c; n] }, bound, &p)?;
        Ok(BenchmarkCase {
            name: "meanfield_linear".into(),
            generator: Arc::new(MeanFieldLinear { n, d: 1, a, b }),
            params: p,
            terminal,
            oracle: Some(Oracle::Exponential { c, rate: a + b, n }),
            tolerances: vec![
                Tolerance { m: 25, n_particles: 1_000, y: 0.03 * c.abs().max(1e-12), z: 1e-12 },
                Tolerance { m: 50, n_particles: 10_000, y: 0.02 * c.abs().max(1e-12), z: 1e-12 },
                Tolerance { m: 100, n_particles: 100_000, y: 0.01 * c.abs().max(1e-12), z: 1e-12 },
            ],
        })
    }

    /// `f^i = (γ/2)|z^i|²` with `ξ^i = clamp(W_T, ±6√T)`, `d = 1`.
    pub fn colehopf_diagonal(gamma: f64, n: usize) -> Result<Self> {
        Self::colehopf_diagonal_with(gamma, n, 1.0, None)
    }

    pub fn colehopf_diagonal_with(gamma: f64, n: usize, horizon: f64, clamp: Option<f64>) -> Result<Self> {
        check_positive("gamma", gamma)?;
        let clamp = clamp.unwrap_or(6.0 * horizon.sqrt());
        let mut p = ModelParams::basic(n, 1, horizon, gamma);
        p.phi = ScalarFn::Affine { intercept: gamma, slope: gamma };
        let bound = clamp * (n as f64).sqrt();
        p.c1 = bound;
        p.validate()?;
        let terminal = TerminalCondition::new(TerminalKind::ClampedBrownian { n, clamp }, bound, &p)?;
        Ok(BenchmarkCase {
            name: "colehopf_diagonal".into(),
            generator: Arc::new(DiagonalQuadratic { n, d: 1, gamma }),
            params: p,
            terminal,
            oracle: Some(Oracle::ColeHopf { gamma, n }),
            // Clamping at 6√T shifts Y by far less than these levels.
            tolerances: vec![
                Tolerance { m: 25, n_particles: 1_000, y: 0.15, z: 0.15 },
                Tolerance { m: 50, n_particles: 10_000, y: 0.06, z: 0.05 },
                Tolerance { m: 100, n_particles: 100_000, y: 0.03, z: 0.03 },
            ],
        })
    }

    /// `n = 2`: `f^1 = (γ/2)|z^1|² + κ log(1+|z^2|)` and symmetrically; no oracle.
    pub fn loggrowth(gamma: f64, kappa: f64) -> Result<Self> {
        Self::loggrowth_with(gamma, kappa, 1.0, None)
    }

    pub fn loggrowth_with(gamma: f64, kappa: f64, horizon: f64, clamp: Option<f64>) -> Result<Self> {
        check_positive("gamma", gamma)?;
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::invalid("kappa", format!("must be nonnegative, got {kappa}")));
        }
        let clamp = clamp.unwrap_or(6.0 * horizon.sqrt());
        let mut p = ModelParams::basic(2, 1, horizon, gamma);
        p.k = kappa;
        p.delta = 0.0;
        let lip = gamma.max(kappa);
        p.phi = ScalarFn::Affine { intercept: lip, slope: lip };
        p.eta = ScalarFn::Constant(kappa);
        p.c2 = kappa * kappa.ln_1p() * horizon;
        let bound = clamp * 2f64.sqrt();
        p.c1 = bound;
        p.validate()?;
        let terminal = TerminalCondition::new(TerminalKind::ClampedBrownian { n: 2, clamp }, bound, &p)?;
        Ok(BenchmarkCase {
            name: "loggrowth".into(),
            generator: Arc::new(LogGrowth { n: 2, d: 1, gamma, kappa }),
            params: p,
            terminal,
            oracle: None,
            tolerances: Vec::new(),
        })
    }

    /// Catalog lookup with defaults: `T = 1`, `c = 1`, `a = b = 0.5`, `γ = 1`, `n = 1`, `κ = 0.1`.
    pub fn by_name(name: &str, args: &CaseArgs) -> Result<Self> {
        let horizon = args.horizon.unwrap_or(1.0);
        check_positive("T", horizon)?;
        let n = args.n.unwrap_or(1);
        let gamma = args.gamma.unwrap_or(1.0);
        match name {
            "zero" => Self::zero(args.c.unwrap_or(1.0), n, horizon),
            "meanfield_linear" => Self::meanfield_linear_with(
                args.a.unwrap_or(0.5),
                args.b.unwrap_or(0.5),
                args.c.unwrap_or(1.0),
                n,
                horizon,
            ),
            "colehopf_diagonal" => Self::colehopf_diagonal_with(gamma, n, horizon, args.clamp),
            "loggrowth" => {
                if args.n.is_some_and(|v| v != 2) {
                    return Err(Error::invalid("case.n", "loggrowth is defined for n = 2 only"));
                }
                Self::loggrowth_with(gamma, args.kappa.unwrap_or(0.1), horizon, args.clamp)
            }
            other => Err(Error::invalid("case.name", format!("unknown case '{other}'; known: {}", CATALOG.join(", ")))),
        }
    }

    /// Every catalog case at default arguments.
    pub fn catalog() -> Result<Vec<Self>> {
        CATALOG.iter().map(|n| Self::by_name(n, &CaseArgs::default())).collect()
    }

    /// The certificate checks that apply to every case.
    pub fn check_assumptions(&self, samples: usize, seed: u64) -> Result<Vec<AssumptionReport>> {
        let g = self.generator.as_ref();
        Ok(vec![
            check_h1(g, &self.params, samples, seed)?,
            check_h2(g, &self.params, samples, seed.wrapping_add(1))?,
            check_h4(g, &self.params, samples, seed.wrapping_add(2))?,
        ])
    }

    pub fn tolerance_at(&self, m: usize, n_particles: usize) -> Option<&Tolerance> {
        self.tolerances.iter().find(|t| t.m == m && t.n_particles == n_particles)
    }

    /// Oracle errors of `pair` (which must cover the whole grid).
    pub fn oracle_errors(&self, pair: &ProcessPair, ens: &Ensemble) -> Option<OracleErrors> {
        let oracle = self.oracle.as_ref()?;
        let grid = ens.grid();
        let (np, d, n) = (ens.n_particles(), ens.d(), self.params.n);
        let horizon = grid.horizon();
        let mut rms_y = Vec::new();
        let mut rms_z = Vec::new();
        let mut mean_y = Vec::new();
        for k in pair.nodes() {
            let t = grid.t(k);
            let w = ens.w_node(k);
            let (mut sy, mut sz) = (0.0, 0.0);
            let mut oracle_mean = vec![0.0; n];
            for p in 0..np {
                let (oy, oz) = oracle.eval(t, horizon, &w[p * d..(p + 1) * d]);
                let dy: Vec<f64> = pair.y_at(k, p).iter().zip(&oy).map(|(a, b)| a - b).collect();
                sy += norm(&dy).powi(2);
                if k < grid.steps() {
                    let dz: Vec<f64> = pair.z_at(k, p).iter().zip(&oz).map(|(a, b)| a - b).collect();
                    sz += norm(&dz).powi(2);
                }
                oracle_mean.iter_mut().zip(&oy).for_each(|(m, v)| *m += v / np as f64);
            }
            rms_y.push((sy / np as f64).sqrt());
            rms_z.push((sz / np as f64).sqrt());
            let dm: Vec<f64> = pair.mean_y(k).iter().zip(&oracle_mean).map(|(a, b)| a - b).collect();
            mean_y.push(norm(&dm));
        }
        let inner = rms_z.len().saturating_sub(1).max(1);
        Some(OracleErrors {
            y0_abs: rms_y[0],
            max_rms_y: rms_y.iter().copied().fold(0.0, f64::max),
            mean_rms_z: rms_z.iter().take(inner).sum::<f64>() / inner as f64,
            max_mean_y: mean_y.iter().copied().fold(0.0, f64::max),
            rms_y,
            rms_z,
            mean_y,
        })
    }

    /// Residual of the oracle in the discrete equation, one step at a time.
    pub fn residual_check(&self, ens: &Ensemble) -> Option<ResidualCheck> {
        let oracle = self.oracle.as_ref()?;
        let grid = ens.grid();
        let (np, d, n) = (ens.n_particles(), ens.d(), self.params.n);
        let (horizon, dt) = (grid.horizon(), grid.dt());
        let g = self.generator.as_ref();
        let eval_node = |k: usize| -> Vec<(Vec<f64>, Vec<f64>)> {
            let w = ens.w_node(k);
            (0..np).map(|p| oracle.eval(grid.t(k), horizon, &w[p * d..(p + 1) * d])).collect()
        };
        let mean = |vals: &[(Vec<f64>, Vec<f64>)], z: bool| -> Vec<f64> {
            let len = if z { n * d } else { n };
            let mut m = vec![0.0; len];
            for (y, zz) in vals {
                let src = if z { zz } else { y };
                m.iter_mut().zip(src).for_each(|(a, b)| *a += b / np as f64);
            }
            m
        };
        let (mut worst, mut worst_sd) = (0.0f64, 0.0f64);
        let mut next = eval_node(0);
        for k in 0..grid.steps() {
            let cur = next;
            next = eval_node(k + 1);
            let (my, mz) = (mean(&cur, false), mean(&cur, true));
            let dw = ens.dw_node(k);
            for i in 0..n {
                let r: Vec<f64> = (0..np)
                    .map(|p| {
                        let (y, z) = &cur[p];
                        let x = Point { t: grid.t(k), y, ybar: &my, z, zbar: &mz };
                        let mart: f64 = (0..d).map(|j| z[i * d + j] * dw[p * d + j]).sum();
                        next[p].0[i] - y[i] + g.component(i, &x) * dt - mart
                    })
                    .collect();
                let m = r.iter().sum::<f64>() / np as f64;
                let sd = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (np as f64 - 1.0).max(1.0)).sqrt();
                worst = worst.max(m.abs());
                worst_sd = worst_sd.max(sd);
            }
        }
        let allowance = 10.0 * dt * dt + 4.0 * worst_sd / (np as f64).sqrt();
        Some(ResidualCheck { residual: worst, allowance, passed: worst <= allowance })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::TimeGrid;

    #[test]
    fn oracle_values() {
        let z = BenchmarkCase::zero(0.3, 2, 1.0).unwrap();
        assert_eq!(z.oracle.unwrap().eval(0.4, 1.0, &[1.7]), (vec![0.3, 0.3], vec![0.0, 0.0]));

        let m = BenchmarkCase::meanfield_linear(0.5, 0.5, 1.0).unwrap();
        let (y, zz) = m.oracle.unwrap().eval(0.0, 1.0, &[0.0]);
        assert!((y[0] - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(zz, vec![0.0]);

        let c = BenchmarkCase::colehopf_diagonal(1.0, 3).unwrap();
        let o = c.oracle.unwrap();
        assert_eq!(o.eval(0.0, 1.0, &[0.0]).0, vec![0.5; 3]);
        assert_eq!(o.eval(0.7, 1.0, &[0.2]).1, vec![1.0; 3]);
    }

    #[test]
    fn b_zero_is_plain_linear() {
        let m = BenchmarkCase::meanfield_linear(0.4, 0.0, 2.0).unwrap();
        assert_eq!(m.oracle, Some(Oracle::Exponential { c: 2.0, rate: 0.4, n: 1 }));
    }

    #[test]
    fn loggrowth_kappa_zero_matches_colehopf() {
        let lg = BenchmarkCase::loggrowth(1.0, 0.0).unwrap();
        let ch = BenchmarkCase::colehopf_diagonal(1.0, 2).unwrap();
        let z = [0.3, -1.2];
        let x = Point { t: 0.2, y: &[0.0, 0.0], ybar: &[0.0, 0.0], z: &z, zbar: &[0.0, 0.0] };
        assert_eq!(lg.generator.eval(&x), ch.generator.eval(&x));
        assert_eq!(lg.terminal.kind, ch.terminal.kind);
    }

    #[test]
    fn loggrowth_h5_integral_in_closed_form() {
        let kappa = 0.3;
        let lg = BenchmarkCase::loggrowth(1.0, kappa).unwrap();
        let want = kappa * kappa.ln_1p();
        assert!((lg.params.h5_integral(0.0, 1.0) - want).abs() < 1e-14);
        assert!(lg.params.h5_integral(0.0, 1.0) <= lg.params.c2 * (1.0 + 1e-12));
    }

    #[test]
    fn every_case_passes_its_checks() {
        for case in BenchmarkCase::catalog().unwrap() {
            for rep in case.check_assumptions(10_000, 17).unwrap() {
                assert!(rep.passed, "{}: {:?}", case.name, rep);
            }
        }
    }

    #[test]
    fn residual_self_check_at_fine_resolution() {
        let ens = Ensemble::generate(TimeGrid::new(200, 1.0).unwrap(), 10_000, 1, 3).unwrap();
        for case in BenchmarkCase::catalog().unwrap() {
            if let Some(r) = case.residual_check(&ens) {
                assert!(r.passed, "{}: {r:?}", case.name);
            }
        }
    }

    #[test]
    fn unknown_case_rejected() {
        assert!(BenchmarkCase::by_name("nope", &CaseArgs::default()).is_err());
        let args = CaseArgs { n: Some(3), ..Default::default() };
        assert!(BenchmarkCase::by_name("loggrowth", &args).is_err());
    }
}
