//! Subcommand dispatch and output persistence.
//!
//! Every run writes `report.json`, `manifest.json` and the canonical
//! `config.toml` into the output directory, plus CSV dumps where they
//! apply. Reports hold no timings so identical configs give identical
//! bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tdbsde::asian::{bonus_portfolio, solve_bonus, SmoothingSpec, SmoothingVariant};
use tdbsde::continuous_ratchet::{check_feasibility, construct_drawdown_portfolio, DrawdownSpec};
use tdbsde::discrete_ratchet::{classify, RatchetSolver, RatchetSpec};
use tdbsde::harness::{
    for_each_path, run_convergence_study, run_hedge_report, ConvergenceMetric, EnsembleConfig,
    PolicyKind, StrategySpec,
};
use tdbsde::market::{check_assumptions, Ensemble, MarketPaths, Measure, ShortRateModel, TimeGrid};
use tdbsde::obpi::{solve_for_capital, BenchmarkSpec, PARTICIPATION_TOL};
use tdbsde::stats::McEstimate;
use tdbsde::withdrawal::{
    fixed_point_residual, nested_mc_oracle, picard_iterate, solve_picard, WalkTree, WithdrawalSpec,
};

use crate::config::{AsianVariant, ConfigErrors, Policy, Product, RunConfig};

/// Version of the `report.json` layout.
pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Classify,
    HedgeRatchetDiscrete,
    HedgeRatchetContinuous,
    HedgeAsian,
    SolveWithdrawal,
    ObpiLambda,
    Convergence,
    CheckAssumptions,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::HedgeRatchetDiscrete => "hedge-ratchet-discrete",
            Command::HedgeRatchetContinuous => "hedge-ratchet-continuous",
            Command::HedgeAsian => "hedge-asian",
            Command::SolveWithdrawal => "solve-withdrawal",
            Command::ObpiLambda => "obpi-lambda",
            Command::Convergence => "convergence",
            Command::CheckAssumptions => "check-assumptions",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid config:\n{0}")]
    Config(#[from] ConfigErrors),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Model(#[from] tdbsde::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// 2 for config and usage problems, 3 for refusals and failures of the
    /// numerical modules, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Usage(_) => 2,
            RunError::Model(_) => 3,
            RunError::Io { .. } => 4,
        }
    }
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: String,
    pub passed: bool,
    pub forced: bool,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

struct Payload {
    result: Value,
    passed: bool,
    summary: String,
    csv: Vec<(&'static str, String)>,
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    command: &'a str,
    product: &'a str,
    status: &'a str,
    passed: bool,
    forced: bool,
    partial: bool,
    tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    result: Value,
}

#[derive(Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    command: &'a str,
    config_sha256: String,
    config: &'a str,
    seed: u64,
    paths: usize,
    offset: usize,
    steps: usize,
    forced: bool,
    versions: Value,
    outputs: Vec<OutputFile>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<OutputFile, RunError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| RunError::Io { path, source })?;
    Ok(OutputFile {
        file: name.to_string(),
        sha256: sha256_hex(bytes),
    })
}

fn csv<const N: usize>(header: &str, rows: impl Iterator<Item = [f64; N]>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

/// Runs `command` on a validated config and persists its artifacts.
pub fn dispatch(config: &RunConfig, command: Command, force: bool) -> Result<Outcome, RunError> {
    config.validate()?;
    let (tolerance, loosened) = config.tolerance();
    if loosened && !force {
        return Err(RunError::Usage(format!(
            "tolerance {tolerance} is looser than the default {} for {}; pass --force to accept it (the report is marked)",
            config.product.default_tolerance(),
            config.product.kind()
        )));
    }
    let forced = loosened;
    let model = config.model.build()?;
    let grid = config.grid()?;
    check_product(config, command)?;

    let out_dir = PathBuf::from(&config.run.out);
    fs::create_dir_all(&out_dir).map_err(|source| RunError::Io {
        path: out_dir.clone(),
        source,
    })?;

    let started = Instant::now();
    let computed = compute(config, command, &model, grid, tolerance);
    let elapsed = started.elapsed().as_secs_f64();

    let canonical = config.to_toml();
    let mut outputs = vec![write(&out_dir, "config.toml", canonical.as_bytes())?];
    let (report, result) = match computed {
        Ok(payload) => {
            for (name, text) in &payload.csv {
                outputs.push(write(&out_dir, name, text.as_bytes())?);
            }
            let report = Report {
                schema_version: REPORT_SCHEMA,
                command: command.name(),
                product: config.product.kind(),
                status: "ok",
                passed: payload.passed,
                forced,
                partial: false,
                tolerance,
                error: None,
                result: payload.result,
            };
            (report, Ok((payload.passed, payload.summary)))
        }
        Err(e) => {
            let report = Report {
                schema_version: REPORT_SCHEMA,
                command: command.name(),
                product: config.product.kind(),
                status: "error",
                passed: false,
                forced,
                partial: true,
                tolerance,
                error: Some(e.to_string()),
                result: Value::Null,
            };
            (report, Err(e))
        }
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    outputs.push(write(&out_dir, "report.json", text.as_bytes())?);

    let manifest = Manifest {
        schema_version: REPORT_SCHEMA,
        command: command.name(),
        config_sha256: sha256_hex(canonical.as_bytes()),
        config: &canonical,
        seed: config.run.seed,
        paths: config.run.paths,
        offset: config.run.offset,
        steps: config.grid.steps,
        forced,
        versions: json!({
            "tdbsde": tdbsde::VERSION,
            "tdbsde-cli": env!("CARGO_PKG_VERSION"),
            "report_schema": REPORT_SCHEMA,
        }),
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&out_dir, "manifest.json", text.as_bytes())?;

    let (passed, summary) = result?;
    let mark = if forced { " [forced tolerance]" } else { "" };
    Ok(Outcome {
        summary: format!(
            "{}: {} ({summary}; {elapsed:.2}s){mark}",
            command.name(),
            if passed { "PASS" } else { "FAIL" }
        ),
        passed,
        forced,
        out_dir,
    })
}

fn check_product(config: &RunConfig, command: Command) -> Result<(), RunError> {
    let kind = config.product.kind();
    let ok = match command {
        Command::Classify => matches!(
            config.product,
            Product::RatchetDiscrete(_) | Product::RatchetContinuous(_)
        ),
        Command::HedgeRatchetDiscrete => matches!(config.product, Product::RatchetDiscrete(_)),
        Command::HedgeRatchetContinuous => matches!(config.product, Product::RatchetContinuous(_)),
        Command::HedgeAsian => matches!(config.product, Product::Asian(_)),
        Command::SolveWithdrawal => matches!(config.product, Product::Withdrawal(_)),
        Command::ObpiLambda => matches!(config.product, Product::Obpi(_)),
        Command::Convergence => match &config.product {
            Product::Asian(a) => a.variant == AsianVariant::Average,
            Product::RatchetDiscrete(_) | Product::RatchetContinuous(_) => true,
            _ => false,
        },
        Command::CheckAssumptions => true,
    };
    if ok {
        Ok(())
    } else {
        Err(RunError::Usage(format!(
            "`{}` does not apply to the {kind} product",
            command.name()
        )))
    }
}

fn ensemble(config: &RunConfig) -> EnsembleConfig {
    let mut e = EnsembleConfig::new(
        config.run.paths,
        config.run.seed,
        config.run.measure.measure(),
    );
    e.offset = config.run.offset;
    e.antithetic = config.run.antithetic;
    e
}

/// The first path of the configured ensemble, for CSV dumps.
fn first_path(
    config: &RunConfig,
    model: &ShortRateModel,
    grid: TimeGrid,
    measure: Measure,
) -> tdbsde::Result<MarketPaths> {
    let ens = Ensemble::simulate_range(
        model,
        grid,
        config.run.offset,
        1,
        config.run.seed,
        measure,
        config.run.antithetic,
    )?;
    Ok(ens.paths.into_iter().next().expect("one path"))
}

fn strategy(product: &Product) -> tdbsde::Result<StrategySpec> {
    Ok(match product {
        Product::RatchetDiscrete(p) => StrategySpec::DiscreteRatchet {
            spec: RatchetSpec::new(p.gamma, p.g, p.anniversaries.clone())?,
            policy: match p.policy {
                Policy::Bond => PolicyKind::Bond,
                Policy::Payout => PolicyKind::Payout,
                Policy::Fund => PolicyKind::Fund(p.fund_weight),
            },
            initial: p.initial,
        },
        Product::RatchetContinuous(p) => StrategySpec::ContinuousRatchet {
            spec: drawdown_spec(p)?,
            initial: p.initial,
        },
        Product::Asian(p) => StrategySpec::Asian {
            spec: SmoothingSpec::new(p.beta, p.gamma, p.weight, SmoothingVariant::Average)?,
            initial: p.initial,
        },
        _ => unreachable!("checked by check_product"),
    })
}

fn drawdown_spec(p: &crate::config::ContinuousProduct) -> tdbsde::Result<DrawdownSpec> {
    DrawdownSpec::new(p.gamma, p.g, p.fund_start, p.u)?.with_vol_cap(p.vol_cap)
}

fn compute(
    config: &RunConfig,
    command: Command,
    model: &ShortRateModel,
    grid: TimeGrid,
    tolerance: f64,
) -> tdbsde::Result<Payload> {
    let measure = config.run.measure.measure();
    match command {
        Command::Classify => match &config.product {
            Product::RatchetDiscrete(p) => {
                let spec = RatchetSpec::new(p.gamma, p.g, p.anniversaries.clone())?;
                let c = classify(model, &spec, &grid)?;
                Ok(Payload {
                    summary: format!("{}: {}", c.label, c.binding),
                    result: to_value(&c),
                    passed: true,
                    csv: Vec::new(),
                })
            }
            Product::RatchetContinuous(p) => {
                let spec = drawdown_spec(p)?;
                let f = check_feasibility(model, &spec, grid, config.run.paths, config.run.seed)?;
                let verdict = if f.construction_feasible() {
                    "feasible"
                } else {
                    "infeasible"
                };
                Ok(Payload {
                    summary: format!(
                        "{verdict}: initial level {:.6}, P(exceed) = {}",
                        f.initial_level, f.p_exceed.value
                    ),
                    result: json!({ "feasible": f.construction_feasible(), "report": to_value(&f) }),
                    passed: true,
                    csv: Vec::new(),
                })
            }
            _ => unreachable!("checked by check_product"),
        },
        Command::HedgeRatchetDiscrete => {
            let strat = strategy(&config.product)?;
            let StrategySpec::DiscreteRatchet {
                spec,
                policy,
                initial,
            } = &strat
            else {
                unreachable!()
            };
            let solver = RatchetSolver::new(model, spec.clone(), grid)?;
            let rep = run_hedge_report(model, &strat, grid, &ensemble(config), Some(tolerance))?;
            let market = first_path(config, model, grid, measure)?;
            let boxed: Box<dyn tdbsde::discrete_ratchet::SurplusPolicy> = match policy {
                PolicyKind::Bond => Box::new(tdbsde::discrete_ratchet::BondSurplus),
                PolicyKind::Payout => Box::new(tdbsde::discrete_ratchet::ZeroSurplus),
                PolicyKind::Fund(w) => Box::new(tdbsde::discrete_ratchet::FundSurplus(*w)),
            };
            let path = solver.solve(*initial, boxed.as_ref(), &market)?;
            Ok(Payload {
                summary: format!(
                    "{}, {} = {:e}",
                    solver.classification.label, rep.metric, rep.metric_value
                ),
                passed: rep.passed,
                result: json!({ "classification": to_value(&solver.classification), "hedge": to_value(&rep) }),
                csv: vec![(
                    "paths.csv",
                    csv("t,Y,X,pi,reserve,surplus", path.csv_rows()),
                )],
            })
        }
        Command::HedgeRatchetContinuous => {
            let strat = strategy(&config.product)?;
            let StrategySpec::ContinuousRatchet { spec, initial } = &strat else {
                unreachable!()
            };
            let rep = run_hedge_report(model, &strat, grid, &ensemble(config), Some(tolerance))?;
            let market = first_path(config, model, grid, measure)?;
            let path = construct_drawdown_portfolio(*initial, spec, &market)?;
            Ok(Payload {
                summary: format!(
                    "{} violations, {} = {:e}",
                    rep.violations, rep.metric, rep.metric_value
                ),
                passed: rep.passed,
                result: to_value(&rep),
                csv: vec![("paths.csv", csv("t,X,pi,V,M,K,L,R,slack", path.csv_rows()))],
            })
        }
        Command::HedgeAsian => {
            let Product::Asian(p) = &config.product else {
                unreachable!()
            };
            if p.variant == AsianVariant::Bonus {
                return hedge_bonus(config, model, grid, tolerance);
            }
            let strat = strategy(&config.product)?;
            let rep = run_hedge_report(model, &strat, grid, &ensemble(config), Some(tolerance))?;
            let market = first_path(config, model, grid, measure)?;
            let spec = SmoothingSpec::new(p.beta, p.gamma, p.weight, SmoothingVariant::Average)?;
            let sol = tdbsde::asian::solve_average(p.initial, &spec, &market)?;
            Ok(Payload {
                summary: format!("{} = {:e}", rep.metric, rep.metric_value),
                passed: rep.passed,
                result: to_value(&rep),
                csv: vec![("paths.csv", csv("t,Y,Z,M,running_avg", sol.csv_rows()))],
            })
        }
        Command::SolveWithdrawal => solve_withdrawal(config, model, tolerance),
        Command::ObpiLambda => {
            let Product::Obpi(p) = &config.product else {
                unreachable!()
            };
            let ens = Ensemble::simulate_range(
                model,
                grid,
                config.run.offset,
                config.run.paths,
                config.run.seed,
                Measure::Q,
                config.run.antithetic,
            )?;
            let (sol, pos) = solve_for_capital(&BenchmarkSpec::new(p.weight)?, &ens, p.capital)?;
            let parity_z = sol.parity_residual.abs() / sol.parity_std_err;
            let passed = parity_z <= tolerance && sol.residual.abs() < PARTICIPATION_TOL;
            Ok(Payload {
                summary: format!(
                    "lambda = {}, fee = {}, parity z = {parity_z:.2}",
                    sol.lambda, sol.fee
                ),
                passed,
                result: json!({
                    "lambda": sol.lambda,
                    "fee": sol.fee,
                    "parity_z": parity_z,
                    "solution": to_value(&sol),
                    "position": to_value(&pos),
                }),
                csv: vec![(
                    "paths.csv",
                    csv("t,r,discount,D,sigma", ens.paths[0].csv_rows()),
                )],
            })
        }
        Command::Convergence => {
            let strat = strategy(&config.product)?;
            let table = run_convergence_study(
                model,
                &strat,
                None,
                grid,
                config.run.levels,
                config.run.paths,
                config.run.seed,
                measure,
            )?;
            let passed = match table.metric {
                ConvergenceMetric::FubiniResidual => table.min_order().is_some_and(|o| o >= 0.5),
                ConvergenceMetric::DrawdownGap => {
                    table.rows.windows(2).all(|w| w[1].residual < w[0].residual)
                }
                _ => table.rows.iter().all(|r| r.max <= tolerance),
            };
            let last = table.rows.last().expect("at least two rows");
            Ok(Payload {
                summary: format!(
                    "{:?} {:e} at n = {}, min order {}",
                    table.metric,
                    last.residual,
                    last.steps,
                    table
                        .min_order()
                        .map_or("n/a".into(), |o| format!("{o:.3}"))
                ),
                passed,
                csv: vec![("convergence.csv", table.to_csv())],
                result: to_value(&table),
            })
        }
        Command::CheckAssumptions => {
            let rep = check_assumptions(model, grid, config.run.paths, config.run.seed)?;
            Ok(Payload {
                summary: if rep.holds() {
                    "all assumptions hold on the sample".into()
                } else {
                    rep.violations.join("; ")
                },
                passed: rep.holds(),
                result: to_value(&rep),
                csv: Vec::new(),
            })
        }
    }
}

fn hedge_bonus(
    config: &RunConfig,
    model: &ShortRateModel,
    grid: TimeGrid,
    tolerance: f64,
) -> tdbsde::Result<Payload> {
    let Product::Asian(p) = &config.product else {
        unreachable!()
    };
    let spec = SmoothingSpec::new(p.beta, p.gamma, p.weight, SmoothingVariant::Bonus)?;
    let mut terminal = Vec::with_capacity(config.run.paths);
    let mut worst: f64 = 0.0;
    let mut y0 = f64::NAN;
    let mut first = None;
    for_each_path(model, grid, &ensemble(config), |_, market| {
        let sol = solve_bonus(&spec, market)?;
        let g = bonus_portfolio(&sol);
        for ((y, s), g) in sol.y.iter().zip(&sol.s_tilde).zip(&g) {
            worst = worst.max((y - sol.beta * s - g).abs() / sol.y0);
        }
        y0 = sol.y0;
        terminal.push(sol.y[sol.y.len() - 1]);
        if first.is_none() {
            first = Some(csv("t,Y,Z,M,running_avg", sol.csv_rows()));
        }
        Ok(())
    })?;
    let est = if config.run.antithetic {
        McEstimate::from_antithetic(&terminal)
    } else {
        McEstimate::from_samples(&terminal)
    };
    let z = est.z_score(y0);
    let passed = worst <= tolerance && z < 4.0;
    Ok(Payload {
        summary: format!("Y(0) = {y0}, decomposition gap {worst:e}, martingale z = {z:.2}"),
        passed,
        result: json!({
            "initial_value": y0,
            "decomposition_gap": worst,
            "terminal_mean": to_value(&est),
            "martingale_z": z,
        }),
        csv: first.map(|c| vec![("paths.csv", c)]).unwrap_or_default(),
    })
}

fn solve_withdrawal(
    config: &RunConfig,
    model: &ShortRateModel,
    tolerance: f64,
) -> tdbsde::Result<Payload> {
    let Product::Withdrawal(p) = &config.product else {
        unreachable!()
    };
    let spec = WithdrawalSpec::new(p.gamma, p.consumption, p.horizon, config.grid.maturity)?;
    let tree = WalkTree::build(model, &spec, p.depth)?;
    let sol = solve_picard(&tree, &spec, tolerance, p.max_iter)?;
    let residual = fixed_point_residual(&tree, &sol, &spec);
    let mut passed = sol.converged && sol.values.iter().all(|y| *y > 0.0);
    let oracle = if p.oracle_paths > 0 {
        let two = picard_iterate(&tree, &spec, 2).root();
        let mc = nested_mc_oracle(
            model,
            &spec,
            p.depth,
            p.oracle_paths,
            2,
            config.run.seed,
            1 << 40,
        )?;
        let agree = (mc.estimate.mean - two).abs() <= 3.0 * mc.estimate.std_err;
        passed &= agree;
        json!({ "tree_two_step_root": two, "estimate": to_value(&mc), "agrees": agree })
    } else {
        Value::Null
    };
    let csv = if p.depth <= 10 {
        vec![(
            "paths.csv",
            csv("node,level,t,r,discount,Y,Q", sol.csv_rows(&tree)),
        )]
    } else {
        Vec::new()
    };
    Ok(Payload {
        summary: format!(
            "root value {} after {} iterations, contraction ratio {}",
            sol.root(),
            sol.iterations(),
            sol.contraction_ratio()
                .map_or("n/a".into(), |r| format!("{r:.4}"))
        ),
        passed,
        result: json!({
            "root_value": sol.root(),
            "iterations": sol.iterations(),
            "deltas": sol.deltas,
            "contraction_ratio": sol.contraction_ratio(),
            "depth": p.depth,
            "gamma_t": spec.gamma_t(),
            "converged": sol.converged,
            "fixed_point_residual": residual,
            "annuity_tail": tree.annuity_tail,
            "oracle": oracle,
        }),
        csv,
    })
}
