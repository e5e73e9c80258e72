//! Ensemble-level verification shared by the strategy modules: hedge
//! reports, coupled-noise convergence studies and negative controls.

use serde::{Deserialize, Serialize};

use crate::asian::{solve_average, verify_average_identities, SmoothingSolution, SmoothingSpec};
use crate::continuous_ratchet::{
    self, construct_drawdown_portfolio, verify_drawdown, DrawdownSpec,
};
use crate::discrete_ratchet::{
    self, perturbed, verify_terminal, BondSurplus, FundSurplus, RatchetSolver, RatchetSpec,
    SurplusPolicy, ZeroSurplus,
};
use crate::error::{invalid, Error, Result};
use crate::market::{
    simulate_rate, BrownianPath, Ensemble, MarketPaths, Measure, ShortRateModel, TimeGrid,
};
use crate::obpi::{solve_participation, BenchmarkSpec};
use crate::stats::{median, quantile, CompensatedSum, McEstimate};

/// Paths simulated per batch; even so antithetic pairs never straddle.
const BATCH: usize = 64;
/// Largest grid a convergence study will allocate.
pub const MAX_STUDY_STEPS: usize = 1 << 20;

/// Surplus handling for the discrete ratchet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Bond,
    Payout,
    Fund(f64),
}

impl PolicyKind {
    fn policy(self) -> Box<dyn SurplusPolicy> {
        match self {
            PolicyKind::Bond => Box::new(BondSurplus),
            PolicyKind::Payout => Box::new(ZeroSurplus),
            PolicyKind::Fund(w) => Box::new(FundSurplus(w)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    DiscreteRatchet {
        spec: RatchetSpec,
        policy: PolicyKind,
        initial: f64,
    },
    ContinuousRatchet {
        spec: DrawdownSpec,
        initial: f64,
    },
    Asian {
        spec: SmoothingSpec,
        initial: f64,
    },
}

impl StrategySpec {
    pub fn id(&self) -> String {
        match self {
            StrategySpec::DiscreteRatchet { spec, policy, .. } => {
                format!(
                    "ratchet-discrete(gamma={}, g={}, policy={policy:?})",
                    spec.gamma, spec.g
                )
            }
            StrategySpec::ContinuousRatchet { spec, .. } => {
                format!(
                    "ratchet-continuous(gamma={}, g={}, u={})",
                    spec.gamma, spec.g, spec.u
                )
            }
            StrategySpec::Asian { spec, .. } => {
                format!(
                    "asian(beta={}, gamma={}, w={})",
                    spec.beta, spec.gamma, spec.benchmark.weight
                )
            }
        }
    }

    /// Default acceptance tolerance on the headline residual.
    pub fn default_tolerance(&self) -> f64 {
        match self {
            StrategySpec::DiscreteRatchet { .. } => 1e-10,
            StrategySpec::ContinuousRatchet { .. } => 0.02,
            StrategySpec::Asian { .. } => 1e-3,
        }
    }

    /// Name of the headline residual.
    pub fn metric(&self) -> &'static str {
        match self {
            StrategySpec::DiscreteRatchet { .. } => "max relative terminal residual",
            StrategySpec::ContinuousRatchet { .. } => "median terminal drawdown gap",
            StrategySpec::Asian { .. } => "mean relative terminal-identity residual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub paths: usize,
    /// Index of the first path; streams are keyed by path index, so disjoint
    /// ranges of one seed tile a larger ensemble.
    pub offset: usize,
    pub seed: u64,
    pub measure: Measure,
    pub antithetic: bool,
}

impl EnsembleConfig {
    pub fn new(paths: usize, seed: u64, measure: Measure) -> Self {
        Self {
            paths,
            offset: 0,
            seed,
            measure,
            antithetic: false,
        }
    }
}

/// Calls `f` for every path of the ensemble, simulated in batches.
pub fn for_each_path(
    model: &ShortRateModel,
    grid: TimeGrid,
    config: &EnsembleConfig,
    mut f: impl FnMut(usize, &MarketPaths) -> Result<()>,
) -> Result<()> {
    if config.paths == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let total = if config.antithetic {
        if !config.offset.is_multiple_of(2) {
            return Err(invalid(
                "offset",
                "antithetic ensembles start on an even path",
            ));
        }
        config.paths.div_ceil(2) * 2
    } else {
        config.paths
    };
    let end = config.offset + total;
    let mut offset = config.offset;
    while offset < end {
        let count = BATCH.min(end - offset);
        let batch = Ensemble::simulate_range(
            model,
            grid,
            offset,
            count,
            config.seed,
            config.measure,
            config.antithetic,
        )?;
        for (k, p) in batch.paths.iter().enumerate() {
            f(offset + k, p)?;
        }
        offset += count;
    }
    Ok(())
}

/// Summary of a residual sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub max: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

impl ResidualStats {
    pub fn from_abs(xs: &[f64]) -> Self {
        let abs: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
        let mut acc = CompensatedSum::default();
        for x in &abs {
            acc.add(*x);
        }
        Self {
            mean: acc.value() / abs.len() as f64,
            max: abs.iter().copied().fold(0.0, f64::max),
            p50: quantile(&abs, 0.5),
            p95: quantile(&abs, 0.95),
            p99: quantile(&abs, 0.99),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeReport {
    pub strategy: String,
    pub paths: usize,
    pub steps: usize,
    pub metric: String,
    pub metric_value: f64,
    pub tolerance: f64,
    /// Terminal residuals relative to the initial value.
    pub residual: ResidualStats,
    pub violations: usize,
    /// Mean discounted-value increment over its standard error, per step.
    pub drift_z: Vec<f64>,
    pub max_abs_drift_z: f64,
    pub self_financing_max: f64,
    pub passed: bool,
}

struct PathOutcome {
    residual: f64,
    violations: usize,
    discounted: Vec<f64>,
    self_financing: f64,
}

fn evaluate(
    strategy: &StrategySpec,
    solver: Option<&RatchetSolver>,
    market: &MarketPaths,
) -> Result<PathOutcome> {
    match strategy {
        StrategySpec::DiscreteRatchet {
            spec,
            policy,
            initial,
        } => {
            let solver = solver.expect("solver built for discrete ratchet");
            let path = solver.solve(*initial, policy.policy().as_ref(), market)?;
            let anniversaries = &path.anniversary_nodes;
            let violations = anniversaries
                .iter()
                .filter(|&&k| path.surplus[k] < 0.0)
                .count();
            Ok(PathOutcome {
                residual: verify_terminal(&path, market, spec).relative,
                violations,
                self_financing: discrete_ratchet::self_financing_residual(&path, market),
                discounted: path.y,
            })
        }
        StrategySpec::ContinuousRatchet { spec, initial } => {
            let path = construct_drawdown_portfolio(*initial, spec, market)?;
            let rep = verify_drawdown(&path);
            let mut violations = rep.violations;
            if !(rep.skorohod_ok && rep.m_bound_ok && rep.psi_bound_ok && rep.positive) {
                violations += 1;
            }
            Ok(PathOutcome {
                residual: rep.reflection_gap,
                violations,
                self_financing: continuous_ratchet::self_financing_residual(&path, market),
                discounted: path
                    .x
                    .iter()
                    .zip(&market.discount)
                    .map(|(x, d)| x * d)
                    .collect(),
            })
        }
        StrategySpec::Asian { spec, initial } => {
            let sol = solve_average(*initial, spec, market)?;
            let rep = verify_average_identities(&sol);
            let (terminal, _, _) = rep.relative(*initial);
            Ok(PathOutcome {
                residual: terminal,
                violations: usize::from(!rep.positive),
                // the value is built from benchmark gains only
                self_financing: 0.0,
                discounted: sol.y,
            })
        }
    }
}

fn solver_for(
    model: &ShortRateModel,
    strategy: &StrategySpec,
    grid: TimeGrid,
) -> Result<Option<RatchetSolver>> {
    match strategy {
        StrategySpec::DiscreteRatchet { spec, .. } => {
            Ok(Some(RatchetSolver::new(model, spec.clone(), grid)?))
        }
        _ => Ok(None),
    }
}

/// Simulates the ensemble, runs the strategy on every path and aggregates.
pub fn run_hedge_report(
    model: &ShortRateModel,
    strategy: &StrategySpec,
    grid: TimeGrid,
    config: &EnsembleConfig,
    tolerance: Option<f64>,
) -> Result<HedgeReport> {
    let tolerance = tolerance.unwrap_or_else(|| strategy.default_tolerance());
    let solver = solver_for(model, strategy, grid)?;
    let n = grid.steps();
    let mut residuals = Vec::with_capacity(config.paths);
    let mut violations = 0;
    let mut sf_max: f64 = 0.0;
    let mut sums = vec![CompensatedSum::default(); n];
    let mut squares = vec![CompensatedSum::default(); n];
    let mut units = 0usize;
    let mut pending: Option<Vec<f64>> = None;

    for_each_path(model, grid, config, |_, market| {
        let out = evaluate(strategy, solver.as_ref(), market)?;
        residuals.push(out.residual);
        violations += out.violations;
        sf_max = sf_max.max(out.self_financing);
        let inc: Vec<f64> = out.discounted.windows(2).map(|w| w[1] - w[0]).collect();
        let sample = if config.antithetic {
            match pending.take() {
                None => {
                    pending = Some(inc);
                    return Ok(());
                }
                Some(first) => first.iter().zip(&inc).map(|(a, b)| 0.5 * (a + b)).collect(),
            }
        } else {
            inc
        };
        for (i, x) in sample.iter().enumerate() {
            sums[i].add(*x);
            squares[i].add(x * x);
        }
        units += 1;
        Ok(())
    })?;

    let drift_z: Vec<f64> = (0..n)
        .map(|i| {
            let m = units as f64;
            let mean = sums[i].value() / m;
            let var = ((squares[i].value() - m * mean * mean) / (m - 1.0)).max(0.0);
            let se = (var / m).sqrt();
            if se > 0.0 {
                mean / se
            } else if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY * mean.signum()
            }
        })
        .collect();
    let max_abs_drift_z = drift_z.iter().map(|z| z.abs()).fold(0.0, f64::max);
    let residual = ResidualStats::from_abs(&residuals);
    let metric_value = match strategy {
        StrategySpec::DiscreteRatchet { .. } => residual.max,
        StrategySpec::ContinuousRatchet { .. } => median(&residuals),
        StrategySpec::Asian { .. } => residual.mean,
    };
    Ok(HedgeReport {
        strategy: strategy.id(),
        paths: residuals.len(),
        steps: n,
        metric: strategy.metric().into(),
        metric_value,
        tolerance,
        residual,
        violations,
        drift_z,
        max_abs_drift_z,
        self_financing_max: sf_max,
        passed: metric_value <= tolerance && violations == 0,
    })
}

/// Residual used for convergence rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceMetric {
    TerminalResidual,
    FubiniResidual,
    DrawdownGap,
    SelfFinancing,
}

impl ConvergenceMetric {
    /// Metric used when none is requested.
    pub fn default_for(strategy: &StrategySpec) -> Self {
        match strategy {
            StrategySpec::DiscreteRatchet { .. } => ConvergenceMetric::TerminalResidual,
            StrategySpec::ContinuousRatchet { .. } => ConvergenceMetric::DrawdownGap,
            StrategySpec::Asian { .. } => ConvergenceMetric::FubiniResidual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub steps: usize,
    /// Aggregate used for the order: median for the drawdown gap, mean
    /// otherwise.
    pub residual: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// `log2(e_{n/2} / e_n)` against the previous row.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub strategy: String,
    pub metric: ConvergenceMetric,
    pub paths: usize,
    pub rows: Vec<ConvergenceRow>,
    /// Share of paths whose residual decreases at every refinement.
    pub monotone_fraction: f64,
}

impl ConvergenceTable {
    pub fn min_order(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.order).reduce(f64::min)
    }

    /// Rows `steps, residual, order` (empty order on the first row).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("steps,residual,mean,median,max,order\n");
        for r in &self.rows {
            let order = r.order.map(|o| o.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.steps, r.residual, r.mean, r.median, r.max, order
            ));
        }
        out
    }
}

fn path_metric(
    strategy: &StrategySpec,
    metric: ConvergenceMetric,
    solver: Option<&RatchetSolver>,
    market: &MarketPaths,
) -> Result<f64> {
    match (strategy, metric) {
        (StrategySpec::Asian { spec, initial }, m) => {
            let sol = solve_average(*initial, spec, market)?;
            let (terminal, fubini, _) = verify_average_identities(&sol).relative(*initial);
            match m {
                ConvergenceMetric::TerminalResidual => Ok(terminal.abs()),
                ConvergenceMetric::FubiniResidual => Ok(fubini.abs()),
                ConvergenceMetric::SelfFinancing => Ok(0.0),
                ConvergenceMetric::DrawdownGap => {
                    Err(invalid("metric", "drawdown gap needs a continuous ratchet"))
                }
            }
        }
        (StrategySpec::ContinuousRatchet { spec, initial }, m) => {
            let path = construct_drawdown_portfolio(*initial, spec, market)?;
            match m {
                ConvergenceMetric::DrawdownGap => Ok(verify_drawdown(&path).reflection_gap.abs()),
                ConvergenceMetric::TerminalResidual => {
                    Ok(verify_drawdown(&path).terminal_residual.abs())
                }
                ConvergenceMetric::SelfFinancing => {
                    Ok(continuous_ratchet::self_financing_residual(&path, market))
                }
                ConvergenceMetric::FubiniResidual => {
                    Err(invalid("metric", "Fubini residual needs an asian strategy"))
                }
            }
        }
        (StrategySpec::DiscreteRatchet { .. }, m) => {
            let out = evaluate(strategy, solver, market)?;
            match m {
                ConvergenceMetric::TerminalResidual => Ok(out.residual.abs()),
                ConvergenceMetric::SelfFinancing => Ok(out.self_financing),
                _ => Err(invalid(
                    "metric",
                    "discrete ratchet supports terminal or self-financing",
                )),
            }
        }
    }
}

/// Runs the strategy on coupled grids `base, 2 base, …` where every finer
/// path is a Brownian-bridge refinement of the coarser one.
#[allow(clippy::too_many_arguments)]
pub fn run_convergence_study(
    model: &ShortRateModel,
    strategy: &StrategySpec,
    metric: Option<ConvergenceMetric>,
    base: TimeGrid,
    levels: usize,
    paths: usize,
    seed: u64,
    measure: Measure,
) -> Result<ConvergenceTable> {
    if levels < 2 {
        return Err(invalid("levels", "need at least two grids"));
    }
    if paths == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if !base.steps().is_power_of_two() {
        return Err(invalid("steps", "convergence grids must be powers of two"));
    }
    let finest = base
        .steps()
        .checked_shl(levels as u32 - 1)
        .unwrap_or(usize::MAX);
    if finest > MAX_STUDY_STEPS {
        return Err(Error::BudgetExceeded {
            needed: finest as u128,
            budget: MAX_STUDY_STEPS as u128,
        });
    }
    let metric = metric.unwrap_or_else(|| ConvergenceMetric::default_for(strategy));
    let mut grids = vec![base];
    for k in 1..levels {
        grids.push(grids[k - 1].refined());
    }
    let solvers = grids
        .iter()
        .map(|g| solver_for(model, strategy, *g))
        .collect::<Result<Vec<_>>>()?;

    let mut values = vec![Vec::with_capacity(paths); levels];
    let mut monotone = 0usize;
    for p in 0..paths {
        let mut noise = BrownianPath::sample(base, seed, p as u64);
        let mut prev = f64::INFINITY;
        let mut decreasing = true;
        for level in 0..levels {
            if level > 0 {
                noise = noise.refined();
            }
            let market = simulate_rate(model, &noise, measure)?;
            let e = path_metric(strategy, metric, solvers[level].as_ref(), &market)?;
            decreasing &= e < prev;
            prev = e;
            values[level].push(e);
        }
        monotone += usize::from(decreasing);
    }

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels);
    for (level, vs) in values.iter().enumerate() {
        let est = McEstimate::from_samples(vs);
        let med = median(vs);
        let residual = if metric == ConvergenceMetric::DrawdownGap {
            med
        } else {
            est.mean
        };
        let order = rows.last().and_then(|r| {
            (r.residual > 0.0 && residual > 0.0).then(|| (r.residual / residual).log2())
        });
        rows.push(ConvergenceRow {
            steps: grids[level].steps(),
            residual,
            mean: est.mean,
            median: med,
            max: vs.iter().copied().fold(0.0, f64::max),
            order,
        });
    }
    Ok(ConvergenceTable {
        strategy: strategy.id(),
        metric,
        paths,
        rows,
        monotone_fraction: monotone as f64 / paths as f64,
    })
}

/// A deliberately broken variant and whether the checks caught it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeControl {
    pub module: String,
    pub name: String,
    pub metric: f64,
    pub threshold: f64,
    pub detected: bool,
}

impl NegativeControl {
    fn new(module: &str, name: &str, metric: f64, threshold: f64) -> Self {
        Self {
            module: module.into(),
            name: name.into(),
            metric,
            threshold,
            detected: metric > threshold,
        }
    }
}

/// Shifts the whole value path down by `fraction · Y(0)`: a hedger that
/// starts short of the premium but promises participation on all of it.
pub fn underfunded(sol: &SmoothingSolution, fraction: f64) -> SmoothingSolution {
    let mut out = sol.clone();
    let shift = fraction * sol.y0;
    for y in &mut out.y {
        *y -= shift;
    }
    let n = out.y.len() - 1;
    let dt = out.maturity / n as f64;
    let mut acc = 0.0;
    out.running_avg[0] = 0.0;
    for i in 0..n {
        acc += 0.5 * (out.y[i] + out.y[i + 1]) * dt;
        out.running_avg[i + 1] = acc / out.maturity;
    }
    out
}

/// Runs one broken variant per module and reports whether each is caught.
pub fn run_negative_controls(seed: u64) -> Result<Vec<NegativeControl>> {
    let cir = ShortRateModel::cir(0.5, 0.04, 0.1, 0.04)?;
    let grid = TimeGrid::new(1.0, 64)?;
    let mut out = Vec::new();

    // market: bond martingale test fed with real-world paths
    let tilted = cir.with_risk_premium(1.0)?;
    let ens = Ensemble::simulate(&tilted, grid, 10_000, seed, Measure::P, false)?;
    let total: Vec<f64> = ens
        .paths
        .iter()
        .map(|p| p.discounted_bond(64) - p.discounted_bond(0))
        .collect();
    let z = McEstimate::from_samples(&total).z_score(0.0);
    out.push(NegativeControl::new(
        "market",
        "martingale test under P",
        z,
        4.0,
    ));

    // obpi: participation off the budget by 2%
    let q = Ensemble::simulate(&cir, grid, 4000, seed, Measure::Q, true)?;
    let bench = BenchmarkSpec::new(0.5)?;
    let sol = solve_participation(&bench, &q)?;
    let wrong = sol.lambda * 1.02;
    let n = q.len() as f64;
    let call: f64 = q
        .paths
        .iter()
        .map(|p| {
            let s = crate::obpi::simulate_benchmark(&bench, p).map(|s| s[64])?;
            Ok((wrong * s - 1.0).max(0.0) * p.discount[64])
        })
        .sum::<Result<f64>>()?
        / n;
    let budget = (sol.bond0 + call - 1.0).abs();
    out.push(NegativeControl::new(
        "obpi",
        "participation bumped by 2%",
        budget,
        1e-8,
    ));

    // discrete ratchet: bond position bumped once
    let d0 = q.initial_bond()?;
    let gamma = 0.9;
    let spec = RatchetSpec::new(gamma, -(gamma * d0).ln(), vec![0.0, 1.0])?;
    let solver = RatchetSolver::new(&cir, spec.clone(), grid)?;
    let mut worst: f64 = f64::INFINITY;
    for p in q.paths.iter().take(50) {
        let path = solver.solve_case2(1.0, p)?;
        let bad = perturbed(&path, p, 10, 0.01);
        worst = worst.min(verify_terminal(&bad, p, &spec).relative.abs());
    }
    out.push(NegativeControl::new(
        "discrete_ratchet",
        "perturbed bond position",
        worst,
        1e-10,
    ));

    // continuous ratchet: the fund alone, with no lock-in reserve, in a
    // market volatile enough for drawdowns to show on a coarse grid
    let volatile = ShortRateModel::vasicek(0.1, 0.04, 0.05, 0.04)?;
    let long = TimeGrid::new(5.0, 64)?;
    let bench = BenchmarkSpec::new(1.0)?;
    let mut violated = 0usize;
    let ens = Ensemble::simulate(&volatile, long, 200, seed, Measure::P, false)?;
    for p in &ens.paths {
        let x = crate::obpi::simulate_benchmark(&bench, p)?;
        let mut best = f64::NEG_INFINITY;
        let hit = (0..=64).any(|i| {
            best = best.max(x[i]);
            x[i] < best * p.bond[i] * (1.0 - 1e-10)
        });
        violated += usize::from(hit);
    }
    let share = violated as f64 / ens.len() as f64;
    out.push(NegativeControl::new(
        "continuous_ratchet",
        "uninsured fund",
        share,
        0.0,
    ));

    // asian: start 2% short of the premium
    let spec = SmoothingSpec::new(0.6, 0.4, 0.5, crate::asian::SmoothingVariant::Average)?;
    let mut worst: f64 = f64::INFINITY;
    for p in q.paths.iter().take(50) {
        let sol = underfunded(&solve_average(1.0, &spec, p)?, 0.02);
        worst = worst.min(verify_average_identities(&sol).terminal_residual.abs());
    }
    out.push(NegativeControl::new(
        "asian",
        "underfunded start",
        worst,
        1e-3,
    ));

    // withdrawal: iterate stopped early is not a fixed point
    let ws = crate::withdrawal::WithdrawalSpec::new(0.05, 1.0, 40.0, 1.0)?;
    let tree = crate::withdrawal::WalkTree::build(&cir, &ws, 8)?;
    let early = crate::withdrawal::picard_iterate(&tree, &ws, 2);
    let residual = crate::withdrawal::fixed_point_residual(&tree, &early, &ws);
    out.push(NegativeControl::new(
        "withdrawal",
        "two Picard steps only",
        residual,
        1e-10,
    ));

    Ok(out)
}
