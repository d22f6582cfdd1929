//! Batch front-end. Each subcommand reads one JSON config, writes its table
//! (CSV or JSON) and a JSON summary into the output directory, and prints the
//! summary on stdout.
//!
//! Exit codes: 0 all checks pass, 1 a verification check failed, 2 invalid
//! input (config, expression, grid or pricing error).

pub mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{Experiment, ExperimentConfig};

use crate::error::{Error, ExprError};
use crate::expansion::{expansion_term, signed_residual};
use crate::lattice::{LatticeKind, LatticeModel};
use crate::pricing::{price_under_demand, price_zero_demand, pricing_measure};
use crate::verify::{
    check_convergence, check_equivalence, check_martingale, check_optimality, check_terminal_density,
    decay_factors, OptimalityOptions, VerificationReport, DEFAULT_DENSITY_SAMPLES,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT_ERROR: i32 = 2;

const DEFAULT_CONVERGENCE_TOLERANCE: f64 = 5e-4;
const DEFAULT_ORDER_RANGE: [f64; 2] = [0.9, 1.1];

#[derive(Debug, Parser)]
#[command(name = "price-impact", version, about = "Equilibrium prices under large-investor demand")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Format of the table artifact; summaries are always JSON.
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    pub format: TableFormat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price surfaces under zero demand and under the configured demand.
    Price(CommonArgs),
    /// First-order expansion and residuals over the epsilon ladder.
    Expand(CommonArgs),
    /// Martingale, density and optimality checks (plus convergence when configured).
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Testing only: corrupt an input to make a check fail.
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
    },
    /// Lattice Bachelier prices against the closed form over the step ladder.
    Converge(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Shift the root price by 0.1 before the martingale check.
    CorruptRoot,
    /// Let the market maker hold `+H` in the optimality check.
    ReverseHolding,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config: {0}")]
    Config(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn to_json(&self) -> Value {
        let mut body = json!({ "message": self.to_string() });
        let kind = match self {
            CliError::Io { .. } => "Io",
            CliError::Config(_) => "ConfigError",
            CliError::Csv(_) => "Io",
            CliError::Model(e) => {
                match e {
                    Error::Expr(ExprError::Syntax { offset, expected }) => {
                        body["offset"] = json!(offset);
                        body["expected"] = json!(expected);
                    }
                    Error::Expr(ExprError::UnknownIdentifier { name, offset }) => {
                        body["offset"] = json!(offset);
                        body["identifier"] = json!(name);
                    }
                    _ => {}
                }
                e.kind()
            }
        };
        body["kind"] = json!(kind);
        json!({ "schema": "price-impact/error/v1", "error": body })
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Price(args) => run_price(&args),
        Command::Expand(args) => run_expand(&args),
        Command::Verify { common, inject_fault } => run_verify(&common, inject_fault),
        Command::Converge(args) => run_converge(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io::stderr(), "{}", serde_json::to_string(&e.to_json()).unwrap());
            EXIT_INPUT_ERROR
        }
    }
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(&args.config).map_err(|source| CliError::Io { path: args.config.clone(), source })?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })
}

fn write_table<R: Serialize>(args: &CommonArgs, name: &str, rows: &[R]) -> Result<PathBuf, CliError> {
    let path = match args.format {
        TableFormat::Csv => {
            let path = args.out.join(format!("{name}.csv"));
            let file = fs::File::create(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            let mut w = csv::Writer::from_writer(io::BufWriter::new(file));
            for row in rows {
                w.serialize(row)?;
            }
            w.flush().map_err(|source| CliError::Io { path: path.clone(), source })?;
            path
        }
        TableFormat::Json => {
            let path = args.out.join(format!("{name}.json"));
            let mut text = serde_json::to_vec_pretty(rows)?;
            text.push(b'\n');
            write_file(&path, &text)?;
            path
        }
    };
    Ok(path)
}

fn write_summary(args: &CommonArgs, name: &str, summary: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_vec_pretty(summary)?;
    text.push(b'\n');
    write_file(&args.out.join(format!("{name}.json")), &text)?;
    let _ = io::stdout().write_all(&text);
    Ok(())
}

fn node_id(lattice: &LatticeModel, step: usize, index: usize) -> String {
    match lattice.kind() {
        LatticeKind::PathTree if step == 0 => String::new(),
        LatticeKind::PathTree => lattice.node_label(step, index),
        LatticeKind::Recombining => index.to_string(),
    }
}

fn parameters(cfg: &ExperimentConfig, exp: &Experiment) -> Value {
    let grid = exp.lattice.grid();
    json!({
        "payoff": exp.claim.payoff().to_string(),
        "theta": (0..grid.intervals()).map(|i| exp.demand.theta_expression(i).to_string()).collect::<Vec<_>>(),
        "gamma": exp.utility.gamma,
        "initial_wealth": exp.utility.initial_wealth,
        "horizon": grid.horizon(),
        "partition": grid.partition(),
        "substeps": grid.substeps(),
        "seed": cfg.run.seed,
    })
}

fn lattice_stats(lattice: &LatticeModel) -> Value {
    json!({
        "kind": lattice.kind(),
        "steps": lattice.steps(),
        "intervals": lattice.grid().intervals(),
        "nodes": lattice.total_nodes(),
    })
}

#[derive(Serialize)]
struct PriceRow {
    step: usize,
    t: f64,
    node: String,
    b: f64,
    s0: f64,
    sh: f64,
    impact: f64,
}

pub fn run_price(args: &CommonArgs) -> Result<i32, CliError> {
    let cfg = load(args)?;
    let exp = cfg.build()?;
    let lattice = &exp.lattice;
    let s0 = price_zero_demand(lattice, &exp.claim)?;
    let sh = price_under_demand(lattice, &exp.claim, &exp.demand, &exp.utility)?;
    prepare_out(&args.out)?;

    let mut rows = Vec::with_capacity(lattice.total_nodes());
    for step in 0..=lattice.steps() {
        for i in 0..lattice.node_count(step) {
            let (a, b) = (s0.price(step, i), sh.price(step, i));
            rows.push(PriceRow {
                step,
                t: lattice.time(step),
                node: node_id(lattice, step, i),
                b: lattice.state(step, i),
                s0: a,
                sh: b,
                impact: b - a,
            });
        }
    }
    write_table(args, "price", &rows)?;
    let summary = json!({
        "schema": "price-impact/price-summary/v1",
        "parameters": parameters(&cfg, &exp),
        "lattice": lattice_stats(lattice),
        "root": { "s0": s0.root(), "sh": sh.root(), "impact": sh.root() - s0.root() },
    });
    write_summary(args, "price_summary", &summary)?;
    Ok(EXIT_PASS)
}

#[derive(Serialize)]
struct ExpandRow {
    epsilon: f64,
    priced_root: f64,
    expansion_root: f64,
    xi_root: f64,
    xi_over_epsilon: f64,
}

pub fn run_expand(args: &CommonArgs) -> Result<i32, CliError> {
    let cfg = load(args)?;
    let exp = cfg.build()?;
    if cfg.run.epsilons.is_empty() {
        return Err(Error::InvalidParameter("run.epsilons must list at least one epsilon".into()).into());
    }
    let expansion = expansion_term(&exp.lattice, &exp.claim, &exp.demand, &exp.utility)?;
    let rows = cfg
        .run
        .epsilons
        .iter()
        .map(|&eps| {
            let r = signed_residual(&exp.lattice, &exp.claim, &exp.demand, &exp.utility, &expansion, eps)?;
            Ok(ExpandRow {
                epsilon: eps,
                priced_root: r.priced_root,
                expansion_root: r.expansion_root,
                xi_root: r.xi_root(),
                xi_over_epsilon: r.ratio_root(),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    prepare_out(&args.out)?;
    write_table(args, "expand", &rows)?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.xi_over_epsilon).collect();
    let summary = json!({
        "schema": "price-impact/expand-summary/v1",
        "parameters": parameters(&cfg, &exp),
        "lattice": lattice_stats(&exp.lattice),
        "s0_root": expansion.zero_demand().root(),
        "first_order_root": expansion.root(),
        "decay_factors": decay_factors(&ratios),
    });
    write_summary(args, "expand_summary", &summary)?;
    Ok(EXIT_PASS)
}

pub fn run_verify(args: &CommonArgs, fault: Option<Fault>) -> Result<i32, CliError> {
    let cfg = load(args)?;
    let exp = cfg.build()?;
    let (lattice, claim, demand, utility) = (&exp.lattice, &exp.claim, &exp.demand, &exp.utility);

    let surface = price_under_demand(lattice, claim, demand, utility)?;
    let density = pricing_measure(lattice, &surface, demand, utility)?;
    let checked = match fault {
        Some(Fault::CorruptRoot) => surface.with_perturbed_price(0, 0, 0.1),
        _ => surface.clone(),
    };
    let samples = cfg.run.density_samples.unwrap_or(DEFAULT_DENSITY_SAMPLES);
    let mut reports: Vec<VerificationReport> = vec![
        check_martingale(lattice, &checked, &density, demand)?,
        check_equivalence(lattice, &density),
        check_terminal_density(lattice, &surface, &density, demand, utility, samples, cfg.run.seed)?,
    ];
    let options = OptimalityOptions {
        perturbation: cfg.run.perturbation,
        reverse_holding: fault == Some(Fault::ReverseHolding),
    };
    reports.extend(check_optimality(lattice, claim, demand, utility, options)?);

    if !cfg.run.step_ladder.is_empty() {
        let spec = cfg.bachelier()?;
        let tol = cfg.run.convergence_tolerance.unwrap_or(DEFAULT_CONVERGENCE_TOLERANCE);
        let range = cfg.run.order_range.unwrap_or(DEFAULT_ORDER_RANGE);
        let study = check_convergence(&spec, &cfg.run.step_ladder, tol)?;
        reports.push(study.report.clone());
        reports.push(study.order_report((range[0], range[1])));
    }

    let pass = reports.iter().all(|r| r.pass);
    prepare_out(&args.out)?;
    let bundle = json!({
        "schema": "price-impact/verify-report/v1",
        "parameters": parameters(&cfg, &exp),
        "lattice": lattice_stats(lattice),
        "fault": fault.map(|f| format!("{f:?}")),
        "pass": pass,
        "reports": reports,
    });
    write_summary(args, "verify", &bundle)?;
    Ok(if pass { EXIT_PASS } else { EXIT_CHECK_FAILED })
}

pub fn run_converge(args: &CommonArgs) -> Result<i32, CliError> {
    let cfg = load(args)?;
    if cfg.run.step_ladder.is_empty() {
        return Err(Error::InvalidParameter("run.step_ladder must list at least one step count".into()).into());
    }
    let spec = cfg.bachelier()?;
    let tol = cfg.run.convergence_tolerance.unwrap_or(DEFAULT_CONVERGENCE_TOLERANCE);
    let range = cfg.run.order_range.unwrap_or(DEFAULT_ORDER_RANGE);
    let study = check_convergence(&spec, &cfg.run.step_ladder, tol)?;
    let order = study.order_report((range[0], range[1]));
    let pass = study.report.pass && order.pass;
    prepare_out(&args.out)?;
    write_table(args, "converge", &study.rows)?;
    let summary = json!({
        "schema": "price-impact/converge-summary/v1",
        "bachelier": spec,
        "order": study.order,
        "pass": pass,
        "reports": [study.report, order],
    });
    write_summary(args, "converge_summary", &summary)?;
    Ok(if pass { EXIT_PASS } else { EXIT_CHECK_FAILED })
}
