//! Declarative run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{BenchmarkCase, CaseArgs};
use crate::error::{Error, Result};
use crate::global::{GlobalOptions, WindowPolicy};
use crate::mc::RegressionBasis;
use crate::model::{SamplingBox, ScalarFn, TerminalCondition};
use crate::picard::{Init, PicardOptions};
use crate::qbsde1d::{Scheme, Solve1DOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    pub name: String,
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

impl CaseSection {
    pub fn named(name: &str) -> Self {
        Self::with_args(name, &CaseArgs::default())
    }

    pub fn with_args(name: &str, a: &CaseArgs) -> Self {
        CaseSection {
            name: name.into(),
            horizon: a.horizon,
            n: a.n,
            c: a.c,
            a: a.a,
            b: a.b,
            gamma: a.gamma,
            kappa: a.kappa,
            clamp: a.clamp,
        }
    }

    pub fn args(&self) -> CaseArgs {
        CaseArgs {
            horizon: self.horizon,
            n: self.n,
            c: self.c,
            a: self.a,
            b: self.b,
            gamma: self.gamma,
            kappa: self.kappa,
            clamp: self.clamp,
        }
    }
}

/// Overrides of the certificate carried by a case; the generator is unchanged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(rename = "K")]
    pub k: Option<f64>,
    pub delta: Option<f64>,
    pub phi: Option<ScalarFn>,
    pub a: Option<ScalarFn>,
    pub alpha: Option<ScalarFn>,
    pub beta: Option<ScalarFn>,
    pub eta: Option<ScalarFn>,
    #[serde(rename = "C0")]
    pub c0: Option<f64>,
    #[serde(rename = "C1")]
    pub c1: Option<f64>,
    #[serde(rename = "C2")]
    pub c2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "M")]
    pub m: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { m: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { n: 10_000, seed: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    Theoretical,
    #[default]
    Auto,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub window: WindowMode,
    /// Steps per window when `window = "fixed"`.
    pub window_steps: Option<usize>,
    pub scheme: Scheme,
    pub init: Init,
    /// Multiplier on the square-rooted `Z` bound giving the truncation radius.
    pub safety: f64,
    /// Subtract `Z_k ΔW_k` before the `Y` regression.
    pub martingale_control: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: 1e-6,
            max_iter: 50,
            window: WindowMode::Auto,
            window_steps: None,
            scheme: Scheme::default(),
            init: Init::default(),
            safety: 3.0,
            martingale_control: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub c1: f64,
    pub c2: f64,
    #[serde(rename = "L4")]
    pub l4: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection { c1: 1.0, c2: 1.0, l4: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSection {
    pub samples: usize,
    pub seed: u64,
    pub r_y: f64,
    pub r_z: f64,
}

impl Default for ChecksSection {
    fn default() -> Self {
        let b = SamplingBox::default();
        ChecksSection { samples: 10_000, seed: 0, r_y: b.r_y, r_z: b.r_z }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub prefix: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), prefix: "run".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HooksSection {
    /// Rescales the solved `Y` so its sup proxy is `1.01 λ` before verification.
    pub inject_lambda_violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// `(M, N)` pairs.
    pub pairs: Vec<(usize, usize)>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { pairs: vec![(25, 1_000), (50, 10_000), (100, 100_000)] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: CaseSection,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub basis: Option<RegressionBasis>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub checks: ChecksSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub hooks: HooksSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// A config running catalog case `name` at default settings.
    pub fn for_case(name: &str) -> Self {
        RunConfig {
            case: CaseSection::named(name),
            params: ParamOverrides::default(),
            grid: GridSection::default(),
            ensemble: EnsembleSection::default(),
            basis: None,
            solver: SolverSection::default(),
            diagnostics: DiagnosticsSection::default(),
            checks: ChecksSection::default(),
            output: OutputSection::default(),
            hooks: HooksSection::default(),
            sweep: SweepSection::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let field = |f: &str, why: &str| Err(Error::Config(format!("{f}: {why}")));
        if self.grid.m == 0 {
            return field("grid.M", "must be at least 1");
        }
        if self.ensemble.n < 2 {
            return field("ensemble.N", "must be at least 2");
        }
        if !(self.solver.tol > 0.0) {
            return field("solver.tol", "must be positive");
        }
        if self.solver.max_iter == 0 {
            return field("solver.max_iter", "must be at least 1");
        }
        if !(self.solver.safety > 0.0) {
            return field("solver.safety", "must be positive");
        }
        match (self.solver.window, self.solver.window_steps) {
            (WindowMode::Fixed, None) => return field("solver.window_steps", "required when window = \"fixed\""),
            (WindowMode::Fixed, Some(0)) => return field("solver.window_steps", "must be at least 1"),
            (WindowMode::Auto | WindowMode::Theoretical, Some(_)) => {
                return field("solver.window_steps", "only valid with window = \"fixed\"")
            }
            _ => {}
        }
        if self.checks.samples == 0 {
            return field("checks.samples", "must be at least 1");
        }
        if self.sweep.pairs.iter().any(|&(m, n)| m == 0 || n < 2) {
            return field("sweep.pairs", "need M >= 1 and N >= 2");
        }
        if let Some(b) = &self.basis {
            b.validate().map_err(|e| Error::Config(format!("basis: {e}")))?;
        }
        self.build_case()?;
        Ok(())
    }

    /// The catalog case with certificate overrides applied and re-validated.
    pub fn build_case(&self) -> Result<BenchmarkCase> {
        let wrap = |e: Error| Error::Config(format!("case: {e}"));
        let mut case = BenchmarkCase::by_name(&self.case.name, &self.case.args()).map_err(wrap)?;
        let o = &self.params;
        let p = &mut case.params;
        if let Some(v) = o.k {
            p.k = v;
        }
        if let Some(v) = o.delta {
            p.delta = v;
        }
        for (slot, v) in [
            (&mut p.phi, &o.phi),
            (&mut p.a, &o.a),
            (&mut p.alpha, &o.alpha),
            (&mut p.beta, &o.beta),
            (&mut p.eta, &o.eta),
        ] {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        if let Some(v) = o.c0 {
            p.c0 = v;
        }
        if let Some(v) = o.c1 {
            p.c1 = v;
        }
        if let Some(v) = o.c2 {
            p.c2 = v;
        }
        let wrap_p = |e: Error| Error::Config(format!("params: {e}"));
        p.validate().map_err(wrap_p)?;
        case.terminal = TerminalCondition::new(case.terminal.kind.clone(), case.terminal.bound, p).map_err(wrap_p)?;
        Ok(case)
    }

    pub fn basis_for(&self, d: usize) -> RegressionBasis {
        self.basis.clone().unwrap_or_else(|| RegressionBasis::default_for(d))
    }

    pub fn sampling_box(&self) -> SamplingBox {
        SamplingBox { r_y: self.checks.r_y, r_z: self.checks.r_z }
    }

    pub fn global_options(&self) -> GlobalOptions {
        let policy = match self.solver.window {
            WindowMode::Theoretical => WindowPolicy::Theoretical,
            WindowMode::Auto => WindowPolicy::Auto,
            WindowMode::Fixed => WindowPolicy::Fixed(self.solver.window_steps.unwrap_or(1)),
        };
        GlobalOptions {
            picard: PicardOptions {
                tol: self.solver.tol,
                max_iter: self.solver.max_iter,
                init: self.solver.init,
                solve: Solve1DOptions {
                    safety: self.solver.safety,
                    scheme: self.solver.scheme,
                    martingale_control: self.solver.martingale_control,
                    ..Default::default()
                },
            },
            policy,
        }
    }
}
