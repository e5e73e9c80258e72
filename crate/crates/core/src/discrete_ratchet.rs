//! Ratchet guarantee with discrete anniversaries.
//!
//! The claim at the horizon is `γ max_k X(t_k) e^{g(T - t_k)}` over the
//! anniversaries `0 = t_0 < … < t_n = T`, where `X` is the hedging
//! portfolio itself. Which initial values admit a solution depends only on
//! the deterministic bounds `γ e^{g(T - t_m)} sup D(t_m)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::{MarketPaths, ShortRateModel, TimeGrid};
use crate::obpi::{discounted_benchmark, BenchmarkSpec};

/// Absolute tolerance for equality of the bounds with 1.
pub const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatchetSpec {
    pub gamma: f64,
    pub g: f64,
    /// Anniversary times, starting at 0 and ending at the horizon.
    pub anniversaries: Vec<f64>,
}

impl RatchetSpec {
    pub fn new(gamma: f64, g: f64, anniversaries: Vec<f64>) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", "must be finite and > 0"));
        }
        if !(g >= 0.0 && g.is_finite()) {
            return Err(invalid("g", "must be finite and >= 0"));
        }
        if anniversaries.len() < 2 || anniversaries[0] != 0.0 {
            return Err(invalid(
                "anniversaries",
                "need at least t_0 = 0 and the horizon",
            ));
        }
        if anniversaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("anniversaries", "must be strictly increasing"));
        }
        Ok(Self {
            gamma,
            g,
            anniversaries,
        })
    }

    /// `periods` equal periods on `[0, maturity]`.
    pub fn equally_spaced(gamma: f64, g: f64, maturity: f64, periods: usize) -> Result<Self> {
        if periods == 0 {
            return Err(invalid("periods", "must be >= 1"));
        }
        let times = (0..=periods)
            .map(|k| {
                if k == periods {
                    maturity
                } else {
                    maturity * k as f64 / periods as f64
                }
            })
            .collect();
        Self::new(gamma, g, times)
    }

    pub fn maturity(&self) -> f64 {
        self.anniversaries[self.anniversaries.len() - 1]
    }

    /// Grid indices of the anniversaries.
    pub fn indices(&self, grid: &TimeGrid) -> Result<Vec<usize>> {
        if (self.maturity() - grid.maturity()).abs() > 1e-12 * grid.maturity() {
            return Err(Error::GridMismatch(format!(
                "last anniversary {} differs from grid horizon {}",
                self.maturity(),
                grid.maturity()
            )));
        }
        self.anniversaries
            .iter()
            .map(|&t| {
                grid.index_of(t)
                    .ok_or(Error::OffGridAnniversary { time: t })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseLabel {
    /// Shortfall possible: only `Y = 0`.
    Case1Shortfall,
    /// Fixed return: every `Y(0) >= 0`, all in the bond.
    Case2FixedReturn,
    /// Surplus to be invested at every anniversary.
    Case3Surplus,
    /// Unfair to one side: only `Y = 0`.
    Case4Unfair,
}

impl CaseLabel {
    pub fn admits_nonzero(self) -> bool {
        matches!(self, Self::Case2FixedReturn | Self::Case3Surplus)
    }

    pub fn reason(self) -> &'static str {
        match self {
            Self::Case1Shortfall => {
                "the lock-in level can exceed the bond, aversion to a shortfall"
            }
            Self::Case2FixedReturn => "the guarantee is a fixed return",
            Self::Case3Surplus => "the ratchet binds with certainty and leaves a surplus",
            Self::Case4Unfair => "the guarantee never binds with certainty, the contract is unfair",
        }
    }
}

impl std::fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Case1Shortfall => "Case1_Shortfall",
            Self::Case2FixedReturn => "Case2_FixedReturn",
            Self::Case3Surplus => "Case3_Surplus",
            Self::Case4Unfair => "Case4_Unfair",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnniversaryBound {
    pub time: f64,
    /// `γ e^{g(T - t)} sup D(t)`; infinite when the bond is unbounded.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: CaseLabel,
    /// `γ e^{gT} D(0)`.
    pub initial_level: f64,
    pub bounds: Vec<AnniversaryBound>,
    /// The sub-condition that decided the label.
    pub binding: String,
}

/// Decides the case from the deterministic full-support bounds.
pub fn classify(
    model: &ShortRateModel,
    spec: &RatchetSpec,
    grid: &TimeGrid,
) -> Result<Classification> {
    spec.indices(grid)?;
    let t_end = spec.maturity();
    let bounds: Vec<AnniversaryBound> = spec
        .anniversaries
        .iter()
        .enumerate()
        .map(|(m, &t)| {
            let tau = if m + 1 == spec.anniversaries.len() {
                0.0
            } else {
                t_end - t
            };
            let sup_d = if tau == 0.0 {
                1.0
            } else {
                model.sup_bond_price(t, t_end)
            };
            AnniversaryBound {
                time: t,
                bound: spec.gamma * (spec.g * tau).exp() * sup_d,
            }
        })
        .collect();
    let initial_level = bounds[0].bound;

    if let Some(b) = bounds.iter().find(|b| b.bound > 1.0 + UNIT_TOL) {
        return Ok(Classification {
            label: CaseLabel::Case1Shortfall,
            initial_level,
            binding: format!("γe^{{g(T-t)}}sup D(t) = {} > 1 at t = {}", b.bound, b.time),
            bounds,
        });
    }
    let (label, binding) = if (initial_level - 1.0).abs() <= UNIT_TOL {
        (CaseLabel::Case2FixedReturn, "γe^{gT}D(0) = 1".to_string())
    } else if (spec.gamma - 1.0).abs() <= UNIT_TOL {
        (
            CaseLabel::Case3Surplus,
            "γ = 1 and D(T) = 1 bind at the horizon".to_string(),
        )
    } else if let Some(b) = model
        .is_deterministic()
        .then(|| {
            bounds[1..bounds.len() - 1]
                .iter()
                .find(|b| (b.bound - 1.0).abs() <= UNIT_TOL)
        })
        .flatten()
    {
        (
            CaseLabel::Case3Surplus,
            format!("deterministic rates bind at t = {}", b.time),
        )
    } else {
        (
            CaseLabel::Case4Unfair,
            format!("γe^{{gT}}D(0) = {initial_level} < 1 and no anniversary binds with certainty"),
        )
    };
    Ok(Classification {
        label,
        initial_level,
        bounds,
        binding,
    })
}

/// How the surplus left at an anniversary is carried to the next one.
pub trait SurplusPolicy {
    fn name(&self) -> String;

    /// Discounted value at each node of one unit invested at node 0, or
    /// `None` when the surplus is paid out instead of invested.
    fn growth(&self, market: &MarketPaths) -> Result<Option<Vec<f64>>>;

    /// Fraction of the carried surplus held in the bond.
    fn bond_weight(&self) -> f64;
}

/// Surplus bought as bonds; the budget identity holds pathwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct BondSurplus;

/// Surplus paid out at each anniversary.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroSurplus;

/// Surplus invested in a constant-mix fund with the given bond weight.
#[derive(Debug, Clone, Copy)]
pub struct FundSurplus(pub f64);

impl SurplusPolicy for BondSurplus {
    fn name(&self) -> String {
        "bond".into()
    }

    fn growth(&self, market: &MarketPaths) -> Result<Option<Vec<f64>>> {
        Ok(Some(
            (0..=market.steps())
                .map(|i| market.discounted_bond(i))
                .collect(),
        ))
    }

    fn bond_weight(&self) -> f64 {
        1.0
    }
}

impl SurplusPolicy for ZeroSurplus {
    fn name(&self) -> String {
        "zero".into()
    }

    fn growth(&self, _: &MarketPaths) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }

    fn bond_weight(&self) -> f64 {
        0.0
    }
}

impl SurplusPolicy for FundSurplus {
    fn name(&self) -> String {
        format!("fund(w={})", self.0)
    }

    fn growth(&self, market: &MarketPaths) -> Result<Option<Vec<f64>>> {
        discounted_benchmark(&BenchmarkSpec::new(self.0)?, market).map(Some)
    }

    fn bond_weight(&self) -> f64 {
        self.0
    }
}

/// Portfolio and claim state along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgePath {
    pub times: Vec<f64>,
    pub y0: f64,
    /// Discounted value `Y = e^{-∫r} X`.
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    /// Amount in the bond held over `[t_i, t_{i+1})`.
    pub pi: Vec<f64>,
    /// Amount withdrawn at node `i` before rebalancing.
    pub payout: Vec<f64>,
    /// Discounted ratchet reserve.
    pub reserve: Vec<f64>,
    /// `Y - reserve`.
    pub surplus: Vec<f64>,
    /// Lock-in level `γ max_k X(t_k) e^{g(T - t_k)}` after each node.
    pub level: Vec<f64>,
    pub anniversary_nodes: Vec<usize>,
}

impl HedgePath {
    fn zero(market: &MarketPaths, nodes: Vec<usize>) -> Self {
        let n = market.steps() + 1;
        Self {
            times: market.grid.times(),
            y0: 0.0,
            y: vec![0.0; n],
            x: vec![0.0; n],
            pi: vec![0.0; n],
            payout: vec![0.0; n],
            reserve: vec![0.0; n],
            surplus: vec![0.0; n],
            level: vec![0.0; n],
            anniversary_nodes: nodes,
        }
    }

    /// Rows `t, Y, X, pi, reserve, surplus`.
    pub fn csv_rows(&self) -> impl Iterator<Item = [f64; 6]> + '_ {
        (0..self.times.len()).map(move |i| {
            [
                self.times[i],
                self.y[i],
                self.x[i],
                self.pi[i],
                self.reserve[i],
                self.surplus[i],
            ]
        })
    }
}

/// Classifies once and builds paths for the admissible cases.
#[derive(Debug, Clone)]
pub struct RatchetSolver {
    pub spec: RatchetSpec,
    pub grid: TimeGrid,
    pub classification: Classification,
    nodes: Vec<usize>,
}

impl RatchetSolver {
    pub fn new(model: &ShortRateModel, spec: RatchetSpec, grid: TimeGrid) -> Result<Self> {
        let classification = classify(model, &spec, &grid)?;
        let nodes = spec.indices(&grid)?;
        Ok(Self {
            spec,
            grid,
            classification,
            nodes,
        })
    }

    fn check(&self, y0: f64, market: &MarketPaths, want: CaseLabel) -> Result<()> {
        if !(y0 >= 0.0 && y0.is_finite()) {
            return Err(invalid("y0", "must be finite and >= 0"));
        }
        if market.grid != self.grid {
            return Err(Error::GridMismatch(
                "market path was simulated on another grid".into(),
            ));
        }
        let label = self.classification.label;
        if !label.admits_nonzero() && y0 > 0.0 {
            return Err(Error::ZeroSolutionOnly {
                reason: format!("{label}: {}", label.reason()),
                initial: y0,
            });
        }
        if label != want && label.admits_nonzero() {
            return Err(invalid(
                "case",
                format!("claim is {label}, construction requested for {want}"),
            ));
        }
        Ok(())
    }

    /// Builds the path for whichever case applies.
    pub fn solve(
        &self,
        y0: f64,
        policy: &dyn SurplusPolicy,
        market: &MarketPaths,
    ) -> Result<HedgePath> {
        match self.classification.label {
            CaseLabel::Case2FixedReturn => self.solve_case2(y0, market),
            CaseLabel::Case3Surplus => self.solve_case3(y0, policy, market),
            label => {
                self.check(y0, market, label)?;
                Ok(HedgePath::zero(market, self.nodes.clone()))
            }
        }
    }

    /// Fixed return: `X(t) = γ Y(0) e^{gT} D(t)`, fully in the bond.
    pub fn solve_case2(&self, y0: f64, market: &MarketPaths) -> Result<HedgePath> {
        self.check(y0, market, CaseLabel::Case2FixedReturn)?;
        let units = self.spec.gamma * y0 * (self.spec.g * self.grid.maturity()).exp();
        let mut path = HedgePath::zero(market, self.nodes.clone());
        path.y0 = y0;
        for i in 0..=market.steps() {
            let x = units * market.bond[i];
            path.x[i] = x;
            path.y[i] = units * market.discounted_bond(i);
            path.pi[i] = x;
            path.reserve[i] = path.y[i];
            path.level[i] = units;
        }
        Ok(path)
    }

    /// Surplus case: hold the locked-in level as bonds and carry the
    /// surplus with `policy`.
    pub fn solve_case3(
        &self,
        y0: f64,
        policy: &dyn SurplusPolicy,
        market: &MarketPaths,
    ) -> Result<HedgePath> {
        self.check(y0, market, CaseLabel::Case3Surplus)?;
        let gamma = self.spec.gamma;
        let g = self.spec.g;
        let t_end = self.grid.maturity();
        let growth = policy.growth(market)?;
        let w = policy.bond_weight();
        let mut path = HedgePath::zero(market, self.nodes.clone());
        path.y0 = y0;

        let mut level = 0.0;
        // bonds held for the locked-in level, and the surplus leg
        let mut carried = 0.0;
        let mut carried_from = 0usize;
        let mut next = 0usize;
        for i in 0..=market.steps() {
            let disc_bond = market.discounted_bond(i);
            let surplus_value = match &growth {
                Some(gr) if i > 0 => carried * gr[i] / gr[carried_from],
                _ => 0.0,
            };
            let y = if i == 0 {
                y0
            } else {
                level * disc_bond + surplus_value
            };
            path.y[i] = y;
            path.x[i] = y / market.discount[i];

            if next < self.nodes.len() && self.nodes[next] == i {
                let t = self.grid.time(i);
                let lock = gamma * path.x[i] * (g * (t_end - t)).exp();
                level = level.max(lock);
                let reserve = level * disc_bond;
                let s = y - reserve;
                if s < -UNIT_TOL * y0.max(f64::MIN_POSITIVE) {
                    return Err(Error::NegativeSurplus {
                        surplus: s,
                        node: i,
                        path: market.stream as usize,
                    });
                }
                let s = s.max(0.0);
                if growth.is_some() {
                    carried = s;
                    carried_from = i;
                } else {
                    path.payout[i] = s / market.discount[i];
                    carried = 0.0;
                }
                next += 1;
            }
            path.level[i] = level;
            path.reserve[i] = level * disc_bond;
            path.surplus[i] = match &growth {
                Some(gr) => carried * gr[i] / gr[carried_from],
                None => y - path.reserve[i],
            };
            path.pi[i] = level * market.bond[i] + w * path.surplus[i] / market.discount[i];
        }
        Ok(path)
    }
}

/// Terminal check of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalResidual {
    /// `Y(T) - γ max_k Y(t_k) e^{-∫_{t_k}^T r} e^{g(T - t_k)}`.
    pub residual: f64,
    /// Residual divided by `Y(0)` (absolute when `Y(0) = 0`).
    pub relative: f64,
}

pub fn verify_terminal(
    path: &HedgePath,
    market: &MarketPaths,
    spec: &RatchetSpec,
) -> TerminalResidual {
    let n = market.steps();
    let t_end = market.grid.maturity();
    let claim = path
        .anniversary_nodes
        .iter()
        .map(|&k| {
            path.y[k]
                * market.discount_between(k, n)
                * (spec.g * (t_end - market.grid.time(k))).exp()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let residual = path.y[n] - spec.gamma * claim;
    let relative = if path.y0 > 0.0 {
        residual / path.y0
    } else {
        residual
    };
    TerminalResidual { residual, relative }
}

/// Largest one-step gap `|X(t_{i+1}) - π D(t_{i+1})/D(t_i) - (X - payout - π) e^{∫r}|`
/// relative to `X(0)`.
pub fn self_financing_residual(path: &HedgePath, market: &MarketPaths) -> f64 {
    let scale = path.x[0].abs().max(f64::MIN_POSITIVE);
    (0..market.steps())
        .map(|i| {
            let bank = (market.integral[i + 1] - market.integral[i]).exp();
            let pred = path.pi[i] * market.bond[i + 1] / market.bond[i]
                + (path.x[i] - path.payout[i] - path.pi[i]) * bank;
            (path.x[i + 1] - pred).abs() / scale
        })
        .fold(0.0, f64::max)
}

/// Negative control: scales the bond amount at `step` by `1 + bump` and
/// rebuilds the portfolio forward through the self-financing recursion,
/// keeping every other bond amount unchanged.
pub fn perturbed(path: &HedgePath, market: &MarketPaths, step: usize, bump: f64) -> HedgePath {
    let mut out = path.clone();
    out.pi[step] *= 1.0 + bump;
    for i in step..market.steps() {
        let bank = (market.integral[i + 1] - market.integral[i]).exp();
        out.x[i + 1] = out.pi[i] * market.bond[i + 1] / market.bond[i]
            + (out.x[i] - out.payout[i] - out.pi[i]) * bank;
        out.y[i + 1] = out.x[i + 1] * market.discount[i + 1];
    }
    out
}
