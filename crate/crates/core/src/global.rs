//! Backward stitching of local solutions over `[0, T]` and the global checks.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constants::{log_add, ConstantsLedger};
use crate::error::{Error, Result};
use crate::mc::{ProcessPair, Regressor, TimeGrid};
use crate::model::{Generator, ModelParams, TerminalCondition};
use crate::picard::{picard_solve_from, whole_steps, BallSpec, PicardOptions, PicardTrace};

/// Printed with every report that quotes an estimated norm.
pub const PROXY_CAVEAT: &str = "S-infinity and BMO values are discrete proxies (maxima over particles and grid nodes, \
BMO stopping times restricted to grid nodes, conditional expectations by regression); they estimate, and do not equal, the continuum norms";

/// How window lengths are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "steps")]
pub enum WindowPolicy {
    /// Windows of length `t_λ`; the grid must resolve that length.
    Theoretical,
    /// `t_λ` when the grid resolves it, otherwise one grid step per window.
    #[default]
    Auto,
    /// A fixed number of grid steps per window.
    Fixed(usize),
}

/// Where a window's terminal values come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalSource {
    Xi,
    /// `Y` of the window with this index at the shared node.
    Stitched(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StitchPlan {
    pub t_lambda: f64,
    pub log_t_lambda: f64,
    pub policy: WindowPolicy,
    pub window_steps: usize,
    /// Absolute node ranges `(start, end)`, latest window first.
    pub windows: Vec<(usize, usize)>,
    pub sources: Vec<TerminalSource>,
    /// True when every window is no longer than `t_λ`.
    pub certified: bool,
}

impl StitchPlan {
    /// Windows cover `0..=M`, adjacent windows share exactly one node, and none is empty.
    pub fn tiles(&self, grid: &TimeGrid) -> bool {
        let Some(&(_, last)) = self.windows.first() else { return false };
        let Some(&(first, _)) = self.windows.last() else { return false };
        last == grid.steps()
            && first == 0
            && self.windows.iter().all(|(s, e)| s < e)
            && self.windows.windows(2).all(|w| w[1].1 == w[0].0)
    }
}

fn windows_of(steps_per: usize, total: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut end = total;
    while end > 0 {
        let start = end.saturating_sub(steps_per);
        out.push((start, end));
        end = start;
    }
    out
}

fn resolved_steps(ledger: &ConstantsLedger, grid: &TimeGrid) -> usize {
    if ledger.log_t_lambda < grid.dt().ln() - 1e-9 {
        0
    } else {
        whole_steps(ledger.log_t_lambda.exp(), grid.dt()).max(1)
    }
}

/// Windows of length `t_λ` backward from `T`.
pub fn plan_stitch(p: &ModelParams, ledger: &ConstantsLedger, grid: &TimeGrid) -> Result<StitchPlan> {
    plan_stitch_with(p, ledger, grid, WindowPolicy::Theoretical)
}

pub fn plan_stitch_with(
    p: &ModelParams,
    ledger: &ConstantsLedger,
    grid: &TimeGrid,
    policy: WindowPolicy,
) -> Result<StitchPlan> {
    if (p.horizon - grid.horizon()).abs() > 1e-12 * p.horizon {
        return Err(Error::invalid("grid", format!("horizon {} differs from T = {}", grid.horizon(), p.horizon)));
    }
    let m = grid.steps();
    let theory = resolved_steps(ledger, grid);
    let (steps, certified) = match policy {
        WindowPolicy::Theoretical => {
            if theory == 0 {
                return Err(Error::GridTooCoarse { t_lambda: ledger.t_lambda, dt: grid.dt() });
            }
            (theory.min(m), true)
        }
        WindowPolicy::Auto if theory > 0 => (theory.min(m), true),
        WindowPolicy::Auto => (1, false),
        WindowPolicy::Fixed(0) => return Err(Error::invalid("window_steps", "must be at least 1")),
        WindowPolicy::Fixed(s) => (s.min(m), s.min(m) <= theory),
    };
    let windows = windows_of(steps, m);
    let sources = (0..windows.len())
        .map(|w| if w == 0 { TerminalSource::Xi } else { TerminalSource::Stitched(w - 1) })
        .collect();
    Ok(StitchPlan {
        t_lambda: ledger.t_lambda,
        log_t_lambda: ledger.log_t_lambda,
        policy,
        window_steps: steps,
        windows,
        sources,
        certified,
    })
}

/// Outcome of a one-sided check `value ≤ ceiling`, compared in log space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub ceiling: f64,
    pub log_ceiling: f64,
    /// `ceiling − value`; `inf` when the ceiling overflows.
    pub margin: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &'static str, value: f64, log_ceiling: f64) -> Self {
        let ceiling = log_ceiling.exp();
        let passed = value <= 0.0 || value.ln() <= log_ceiling;
        CheckResult { name, value, ceiling, log_ceiling, margin: ceiling - value, passed }
    }
}

/// `S∞` proxy of `Y` against `λ`.
pub fn verify_apriori(pair: &ProcessPair, ledger: &ConstantsLedger) -> CheckResult {
    CheckResult::new("apriori_sup_le_lambda", pair.sup_norm_estimate(), ledger.log_lambda)
}

/// Natural log of `4[n e^{γC1}/γ² + (n/γ) e^{γλ}((λ+2)C2 + (λγ + 1 + 4n/γ)(C2 + 2T))]`.
pub fn bmo_ceiling_log(p: &ModelParams, lambda: f64) -> f64 {
    let n = p.n as f64;
    let g = p.gamma;
    let inner = (lambda + 2.0) * p.c2 + (lambda * g + 1.0 + 4.0 * n / g) * (p.c2 + 2.0 * p.horizon);
    let first = n.ln() - 2.0 * g.ln() + g * p.c1;
    let second = n.ln() - g.ln() + g * lambda + inner.ln();
    4f64.ln() + log_add(first, second)
}

/// Squared BMO proxy of `Z` against the global ceiling.
pub fn verify_bmo_membership(
    pair: &ProcessPair,
    p: &ModelParams,
    ledger: &ConstantsLedger,
    reg: &Regressor<'_>,
) -> CheckResult {
    let b = pair.bmo_norm_estimate(reg);
    CheckResult::new("bmo_sq_le_ceiling", b * b, bmo_ceiling_log(p, ledger.lambda))
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GlobalOptions {
    pub picard: PicardOptions,
    pub policy: WindowPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowReport {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub certified: bool,
    pub iterations: usize,
    pub converged: bool,
    pub terminal_sup: f64,
    pub final_dy_sup: f64,
    pub final_dz_bmo: f64,
    pub wall_ms: f64,
    pub trace: PicardTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GlobalReport {
    pub plan: StitchPlan,
    pub ledger: ConstantsLedger,
    pub window_ledger: ConstantsLedger,
    pub windows: Vec<WindowReport>,
    pub stitch_continuity: bool,
    pub converged: bool,
    pub apriori: CheckResult,
    pub bmo: CheckResult,
    pub sup_proxy: f64,
    pub bmo_proxy: f64,
    pub t_lambda_note: &'static str,
    pub caveat: &'static str,
    pub wall_ms: f64,
}

/// Solves window by window from `T` backward, each window's terminal data
/// being the solved `Y` of the window after it.
pub fn solve_global(
    gen: &dyn Generator,
    tc: &TerminalCondition,
    p: &ModelParams,
    reg: &Regressor<'_>,
    opts: &GlobalOptions,
) -> Result<(ProcessPair, GlobalReport)> {
    let clock = Instant::now();
    let ens = reg.ensemble();
    let grid = ens.grid();
    let ledger = ConstantsLedger::new(p)?;
    let window_ledger = ledger.for_stitched_window(p)?;
    let plan = plan_stitch_with(p, &ledger, grid, opts.policy)?;
    let theory = resolved_steps(&ledger, grid);

    let xi = tc.values(ens)?;
    let mut total: Option<ProcessPair> = None;
    let mut reports = Vec::with_capacity(plan.windows.len());
    let mut continuity = true;
    let n = p.n;
    for (w, &(start, end)) in plan.windows.iter().enumerate() {
        let wall = Instant::now();
        let (eta, eta_bound, led) = match &total {
            None => (xi.clone(), tc.bound, &ledger),
            Some(later) => (later.y_node(end).to_vec(), window_ledger.lambda, &window_ledger),
        };
        let terminal_sup = eta.chunks(n).map(crate::model::norm).fold(0.0, f64::max);
        if w > 0 && !(terminal_sup <= 0.0 || terminal_sup.ln() <= ledger.log_lambda) {
            return Err(Error::StitchBound { window: w, sup: terminal_sup, lambda: ledger.lambda });
        }
        let certified = end - start <= theory;
        let ball = BallSpec::window(start, end, led, grid, certified);
        let (pair, trace) = picard_solve_from(gen, p, &eta, eta_bound, reg, &ball, &opts.picard)
            .map_err(|e| Error::Window { window: w, source: Box::new(e) })?;
        if let Some(later) = &total {
            continuity &= later
                .y_node(end)
                .iter()
                .zip(&eta)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        }
        let last = trace.records.last();
        reports.push(WindowReport {
            index: w,
            start,
            end,
            t_start: grid.t(start),
            t_end: grid.t(end),
            certified,
            iterations: trace.iterations(),
            converged: trace.converged,
            terminal_sup,
            final_dy_sup: last.map_or(0.0, |r| r.dy_sup),
            final_dz_bmo: last.map_or(0.0, |r| r.dz_bmo),
            wall_ms: wall.elapsed().as_secs_f64() * 1e3,
            trace,
        });
        total = Some(match total {
            None => pair,
            Some(later) => later.prepend(&pair)?,
        });
    }
    let mut pair = total.expect("plan has at least one window");
    pair.refresh_means();
    let apriori = verify_apriori(&pair, &ledger);
    let bmo = verify_bmo_membership(&pair, p, &ledger, reg);
    let report = GlobalReport {
        converged: reports.iter().all(|r| r.converged),
        sup_proxy: apriori.value,
        bmo_proxy: bmo.value.sqrt(),
        plan,
        ledger,
        window_ledger,
        windows: reports,
        stitch_continuity: continuity,
        apriori,
        bmo,
        t_lambda_note: "t_lambda is eps0 evaluated with the terminal bound C1 replaced by lambda",
        caveat: PROXY_CAVEAT,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
    };
    Ok((pair, report))
}
