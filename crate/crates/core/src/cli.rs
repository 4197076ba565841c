//! Command-line driver. [`run`] is the whole program, minus process exit.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::bench::{BenchmarkCase, OracleErrors, CATALOG};
use crate::config::RunConfig;
use crate::constants::ConstantsLedger;
use crate::error::{Error, Result};
use crate::global::{solve_global, verify_apriori, GlobalReport, PROXY_CAVEAT};
use crate::mc::{write_state, Ensemble, ProcessPair, Regressor, TimeGrid};
use crate::model::{check_h1_in, check_h2_in, check_h4_in, norm, AssumptionReport};
use crate::picard::{contraction_report, ContractionReport};

/// Process exit statuses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[repr(i32)]
pub enum Exit {
    Pass = 0,
    CheckFailed = 1,
    Config = 2,
    BlowUp = 3,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn for_error(e: &Error) -> Exit {
        if e.is_blow_up() {
            return Exit::BlowUp;
        }
        match e {
            Error::StitchBound { .. } | Error::TerminalBound { .. } => Exit::CheckFailed,
            Error::Window { source, .. } | Error::Component { source, .. } => Exit::for_error(source),
            _ => Exit::Config,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mfbsde", version, about = "Mean-field quadratic BSDE solver and bound checker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Catalog case to run with default settings when no config is given.
    #[arg(long, global = true)]
    pub case: Option<String>,
    /// Overrides `ensemble.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also dump the solved fields (JSON header plus binary blob).
    #[arg(long, global = true)]
    pub save_state: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the constants ledger as JSON.
    Constants,
    /// Run the assumption checkers.
    Check,
    /// Checks, global solve and verification; writes report JSON and node CSV.
    Solve,
    /// Solve every catalog case.
    Bench,
    /// Convergence study over the configured (M, N) pairs.
    Sweep,
    /// List catalog case names.
    Catalog,
}

/// Parses `args` (including the program name) and runs; stdout goes to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Exit::Config.code() } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(exit) => exit.code(),
        Err(e) => {
            eprintln!("error: {e}");
            Exit::for_error(&e).code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.case) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => {
            let cfg = RunConfig::for_case(name);
            cfg.build_case()?;
            cfg
        }
        (None, None) => return Err(Error::Config("either --config or --case is required".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.ensemble.seed = seed;
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<Exit> {
    match cli.command {
        Command::Catalog => {
            for name in CATALOG {
                writeln!(out, "{name}")?;
            }
            Ok(Exit::Pass)
        }
        Command::Constants => cmd_constants(&load_config(cli)?, out),
        Command::Check => cmd_check(&load_config(cli)?, out),
        Command::Solve => cmd_solve(&load_config(cli)?, cli.save_state, out),
        Command::Bench => {
            let base = if cli.config.is_some() || cli.case.is_some() {
                load_config(cli)?
            } else {
                let mut c = RunConfig::for_case("zero");
                if let Some(seed) = cli.seed {
                    c.ensemble.seed = seed;
                }
                if let Some(dir) = &cli.out {
                    c.output.dir = dir.clone();
                }
                c
            };
            cmd_bench(&base, out)
        }
        Command::Sweep => cmd_sweep(&load_config(cli)?, out),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

/// Ledger JSON for the configured case.
pub fn constants_json(cfg: &RunConfig) -> Result<serde_json::Value> {
    let case = cfg.build_case()?;
    let ledger = ConstantsLedger::new(&case.params)?;
    let formulas: serde_json::Map<String, serde_json::Value> =
        ConstantsLedger::formulas().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    Ok(json!({
        "case": case.name,
        "params": case.params,
        "c_dkn": ledger.c_dkn,
        "k1": ledger.k1,
        "k2": ledger.k2,
        "log_k2": ledger.log_k2,
        "eps0": ledger.eps0,
        "log_eps0": ledger.log_eps0,
        "c3": ledger.c3,
        "lambda": ledger.lambda,
        "log_lambda": ledger.log_lambda,
        "t_lambda": ledger.t_lambda,
        "log_t_lambda": ledger.log_t_lambda,
        "formulas": formulas,
        "note": "non-finite values are written as null; the log_ fields stay finite",
    }))
}

pub fn cmd_constants(cfg: &RunConfig, out: &mut dyn Write) -> Result<Exit> {
    writeln!(out, "{}", to_json(&constants_json(cfg)?)?)?;
    Ok(Exit::Pass)
}

/// H1, H2 and H4 on the configured case and sampling box.
pub fn run_checks(cfg: &RunConfig, case: &BenchmarkCase) -> Result<Vec<AssumptionReport>> {
    let g = case.generator.as_ref();
    let (s, seed, bx) = (cfg.checks.samples, cfg.checks.seed, cfg.sampling_box());
    Ok(vec![
        check_h1_in(g, &case.params, s, seed, bx)?,
        check_h2_in(g, &case.params, s, seed.wrapping_add(1), bx)?,
        check_h4_in(g, &case.params, s, seed.wrapping_add(2), bx)?,
    ])
}

pub fn cmd_check(cfg: &RunConfig, out: &mut dyn Write) -> Result<Exit> {
    let case = cfg.build_case()?;
    let reports = run_checks(cfg, &case)?;
    let passed = reports.iter().all(|r| r.passed);
    writeln!(out, "{}", to_json(&json!({ "case": case.name, "passed": passed, "reports": reports }))?)?;
    Ok(if passed { Exit::Pass } else { Exit::CheckFailed })
}

/// One row of the per-node CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeRow {
    pub t: f64,
    pub mean_y: Vec<f64>,
    pub sup_abs_y: f64,
    pub bmo_to_go: f64,
    pub oracle_err_y: Option<f64>,
    pub oracle_err_z: Option<f64>,
}

/// Everything a solve produces.
#[derive(Debug)]
pub struct SolveOutcome {
    pub case: BenchmarkCase,
    pub checks: Vec<AssumptionReport>,
    pub pair: ProcessPair,
    pub report: GlobalReport,
    pub oracle: Option<OracleErrors>,
    pub contraction: Option<ContractionReport>,
    pub rows: Vec<NodeRow>,
    pub injected: bool,
}

impl SolveOutcome {
    pub fn checks_passed(&self) -> bool {
        self.checks.iter().all(|r| r.passed)
    }

    pub fn passed(&self) -> bool {
        self.checks_passed() && self.report.apriori.passed && self.report.bmo.passed
    }
}

/// Error raised by [`solve_case`] together with the checks run before it.
#[derive(Debug)]
pub struct SolveFailure {
    pub case: String,
    pub checks: Vec<AssumptionReport>,
    pub error: Option<Error>,
}

/// Checks, then the global solve and the oracle comparison. A failed
/// assumption check stops before solving.
pub fn solve_case(cfg: &RunConfig) -> std::result::Result<SolveOutcome, SolveFailure> {
    let fail = |case: &str, checks: Vec<AssumptionReport>, e: Option<Error>| SolveFailure {
        case: case.into(),
        checks,
        error: e,
    };
    let case = cfg.build_case().map_err(|e| fail(&cfg.case.name, vec![], Some(e)))?;
    let checks = run_checks(cfg, &case).map_err(|e| fail(&case.name, vec![], Some(e)))?;
    if !checks.iter().all(|r| r.passed) {
        return Err(fail(&case.name, checks, None));
    }
    let inner = || -> Result<SolveOutcome> {
        let p = &case.params;
        let grid = TimeGrid::new(cfg.grid.m, p.horizon)?;
        let ens = Ensemble::generate(grid, cfg.ensemble.n, p.d, cfg.ensemble.seed)?;
        let reg = Regressor::new(&ens, &cfg.basis_for(p.d))?;
        let (mut pair, mut report) =
            solve_global(case.generator.as_ref(), &case.terminal, p, &reg, &cfg.global_options())?;
        let mut injected = false;
        if cfg.hooks.inject_lambda_violation {
            let sup = pair.sup_norm_estimate();
            let target = 1.01 * report.ledger.lambda;
            if sup > 0.0 && target.is_finite() {
                let scale = target / sup;
                let mut y = pair.y_raw().to_vec();
                y.iter_mut().for_each(|v| *v *= scale);
                pair = ProcessPair::from_fields(p.n, p.d, ens.n_particles(), 0, grid.dt(), y, pair.z_raw().to_vec())?;
                report.apriori = verify_apriori(&pair, &report.ledger);
                report.sup_proxy = report.apriori.value;
                injected = true;
            } else {
                log::warn!("lambda violation hook skipped: sup {sup}, lambda {}", report.ledger.lambda);
            }
        }
        let oracle = case.oracle_errors(&pair, &ens);
        let contraction = report.windows.first().and_then(|w| {
            let d = &cfg.diagnostics;
            contraction_report(&w.trace, p, d.c1, d.c2, d.l4).ok()
        });
        let to_go = pair.bmo_to_go(&reg);
        let rows = pair
            .nodes()
            .map(|k| NodeRow {
                t: grid.t(k),
                mean_y: pair.mean_y(k).to_vec(),
                sup_abs_y: pair.y_node(k).chunks(p.n).map(norm).fold(0.0, f64::max),
                bmo_to_go: to_go[k],
                oracle_err_y: oracle.as_ref().map(|o| o.rms_y[k]),
                oracle_err_z: oracle.as_ref().map(|o| o.rms_z[k]),
            })
            .collect();
        Ok(SolveOutcome { case: case.clone(), checks: checks.clone(), pair, report, oracle, contraction, rows, injected })
    };
    inner().map_err(|e| fail(&case.name, checks.clone(), Some(e)))
}

/// CSV header: `t, mean_Y_1..n, sup_abs_Y, bmo_to_go, oracle_err_Y, oracle_err_Z`.
pub fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("mean_Y_{i}")));
    h.extend(["sup_abs_Y", "bmo_to_go", "oracle_err_Y", "oracle_err_Z"].map(String::from));
    h
}

pub fn write_nodes_csv<W: Write>(rows: &[NodeRow], n: usize, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(csv_header(n))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.mean_y.iter().map(|v| v.to_string()));
        rec.push(r.sup_abs_y.to_string());
        rec.push(r.bmo_to_go.to_string());
        rec.push(opt(r.oracle_err_y));
        rec.push(opt(r.oracle_err_z));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

fn outcome_json(o: &SolveOutcome, cfg: &RunConfig) -> serde_json::Value {
    json!({
        "status": if o.passed() { "pass" } else { "check_failed" },
        "case": o.case.name,
        "config": cfg,
        "checks": o.checks,
        "global": o.report,
        "oracle": o.oracle,
        "contraction": o.contraction,
        "lambda_violation_injected": o.injected,
        "caveat": PROXY_CAVEAT,
    })
}

fn failure_json(f: &SolveFailure, cfg: &RunConfig) -> serde_json::Value {
    json!({
        "status": match &f.error { None => "check_failed".to_string(), Some(e) => format!("error: {e}") },
        "case": f.case,
        "config": cfg,
        "checks": f.checks,
        "caveat": PROXY_CAVEAT,
    })
}

fn failure_exit(f: &SolveFailure) -> Exit {
    f.error.as_ref().map_or(Exit::CheckFailed, Exit::for_error)
}

/// Output file paths for a run.
pub fn output_paths(dir: &Path, prefix: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{prefix}_report.json")),
        dir.join(format!("{prefix}_nodes.csv")),
        dir.join(format!("{prefix}_state")),
    )
}

fn solve_and_write(cfg: &RunConfig, save_state: bool) -> Result<(Exit, serde_json::Value)> {
    fs::create_dir_all(&cfg.output.dir)?;
    let (report_path, csv_path, state_path) = output_paths(&cfg.output.dir, &cfg.output.prefix);
    match solve_case(cfg) {
        Ok(o) => {
            write_nodes_csv(&o.rows, o.case.params.n, fs::File::create(&csv_path)?)?;
            fs::write(&report_path, to_json(&outcome_json(&o, cfg))?)?;
            if save_state {
                write_state(&state_path, &o.pair, cfg.ensemble.seed)?;
            }
            let exit = if o.passed() { Exit::Pass } else { Exit::CheckFailed };
            let summary = json!({
                "case": o.case.name,
                "exit": exit.code(),
                "windows": o.report.windows.len(),
                "window_policy": o.report.plan.policy,
                "certified_windows": o.report.plan.certified,
                "converged": o.report.converged,
                "y0": o.pair.mean_y(0),
                "sup_proxy": o.report.sup_proxy,
                "bmo_proxy": o.report.bmo_proxy,
                "apriori_passed": o.report.apriori.passed,
                "bmo_passed": o.report.bmo.passed,
                "oracle_y0_err": o.oracle.as_ref().map(|e| e.y0_abs),
                "oracle_max_rms_y": o.oracle.as_ref().map(|e| e.max_rms_y),
                "oracle_mean_rms_z": o.oracle.as_ref().map(|e| e.mean_rms_z),
                "report": report_path,
                "csv": csv_path,
            });
            Ok((exit, summary))
        }
        Err(f) => {
            fs::write(&report_path, to_json(&failure_json(&f, cfg))?)?;
            let exit = failure_exit(&f);
            if let Some(e) = &f.error {
                eprintln!("error: {e}");
            }
            Ok((exit, json!({ "case": f.case, "exit": exit.code(), "report": report_path })))
        }
    }
}

pub fn cmd_solve(cfg: &RunConfig, save_state: bool, out: &mut dyn Write) -> Result<Exit> {
    let (exit, summary) = solve_and_write(cfg, save_state)?;
    writeln!(out, "{}", to_json(&summary)?)?;
    Ok(exit)
}

pub fn cmd_bench(base: &RunConfig, out: &mut dyn Write) -> Result<Exit> {
    let mut worst = Exit::Pass;
    let mut rows = Vec::new();
    for name in CATALOG {
        let mut cfg = base.clone();
        cfg.case = crate::config::CaseSection::named(name);
        cfg.params = Default::default();
        cfg.output.prefix = format!("{}_{name}", base.output.prefix);
        let (exit, summary) = solve_and_write(&cfg, false)?;
        let tol = BenchmarkCase::by_name(name, &Default::default())?
            .tolerance_at(cfg.grid.m, cfg.ensemble.n)
            .cloned();
        let within = match (&tol, summary.get("oracle_max_rms_y").and_then(|v| v.as_f64())) {
            (Some(t), Some(e)) => Some(e <= t.y.max(1e-12)),
            _ => None,
        };
        worst = worst.max(exit);
        if within == Some(false) {
            worst = worst.max(Exit::CheckFailed);
        }
        rows.push(json!({ "summary": summary, "tolerance": tol, "within_tolerance": within }));
    }
    writeln!(out, "{}", to_json(&json!({ "cases": rows, "exit": worst.code() }))?)?;
    Ok(worst)
}

pub fn cmd_sweep(base: &RunConfig, out: &mut dyn Write) -> Result<Exit> {
    fs::create_dir_all(&base.output.dir)?;
    let path = base.output.dir.join(format!("{}_sweep.csv", base.output.prefix));
    let mut wr = csv::Writer::from_path(&path)?;
    wr.write_record(["M", "N", "y0_err", "max_rms_y", "mean_rms_z", "max_mean_y", "apriori", "bmo"])?;
    let mut worst = Exit::Pass;
    let mut errs = Vec::new();
    for &(m, n) in &base.sweep.pairs {
        let mut cfg = base.clone();
        cfg.grid.m = m;
        cfg.ensemble.n = n;
        match solve_case(&cfg) {
            Ok(o) => {
                let e = o.oracle.as_ref();
                let f = |g: fn(&OracleErrors) -> f64| e.map(|x| g(x).to_string()).unwrap_or_default();
                wr.write_record([
                    m.to_string(),
                    n.to_string(),
                    f(|x| x.y0_abs),
                    f(|x| x.max_rms_y),
                    f(|x| x.mean_rms_z),
                    f(|x| x.max_mean_y),
                    o.report.apriori.passed.to_string(),
                    o.report.bmo.passed.to_string(),
                ])?;
                errs.push(e.map(|x| x.max_rms_y));
                if !o.passed() {
                    worst = worst.max(Exit::CheckFailed);
                }
            }
            Err(f) => {
                worst = worst.max(failure_exit(&f));
                errs.push(None);
            }
        }
    }
    wr.flush()?;
    let known: Option<Vec<f64>> = errs.iter().copied().collect();
    let monotone = known.map(|v| v.windows(2).all(|w| w[1] < w[0]));
    writeln!(
        out,
        "{}",
        to_json(&json!({ "csv": path, "max_rms_y": errs, "monotone_decrease": monotone, "exit": worst.code() }))?
    )?;
    Ok(worst)
}
