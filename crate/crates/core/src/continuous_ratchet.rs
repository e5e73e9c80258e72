//! Continuously monitored ratchet: portfolios under a drawdown constraint.
//!
//! With `φ(t) = γ D(t) e^{g(T-t)}` and `c0 = φ(0)`, the portfolio must
//! satisfy `X(t) ≥ γ sup_{s≤t} X(s) e^{g(T-s)} D(t)`. In bond units
//! `V = X / D` the solution reflects the log-ratio `L` of an auxiliary fund
//! off its running maximum `K`:
//!
//! ```text
//! M(t) = V(0) exp(∫ (1 - φ) dK),    V = M [c0 + (1 - c0) ρ e^{-K}]
//! ```
//!
//! where `ρ = R / R(0)` and `R = S / D` is the fund in bond units.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::{Ensemble, MarketPaths, Measure, ShortRateModel, TimeGrid};
use crate::obpi::{simulate_benchmark, BenchmarkSpec};
use crate::stats::proportion_ci;

/// Tolerance for equality of lock-in levels with 1.
pub const LEVEL_TOL: f64 = 1e-12;
/// Default cap on `|σ(t)|` along simulated paths.
pub const DEFAULT_VOL_CAP: f64 = 1.0;
/// Relative tolerance of the constraint check.
pub const SLACK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawdownSpec {
    pub gamma: f64,
    pub g: f64,
    /// Initial value of the auxiliary fund.
    pub fund_start: f64,
    /// Fraction of the fund held in the bond.
    pub u: f64,
    pub vol_cap: f64,
}

impl DrawdownSpec {
    pub fn new(gamma: f64, g: f64, fund_start: f64, u: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", "must be finite and > 0"));
        }
        if !(g >= 0.0 && g.is_finite()) {
            return Err(invalid("g", "must be finite and >= 0"));
        }
        if !(fund_start > 0.0 && fund_start.is_finite()) {
            return Err(invalid("fund_start", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&u) {
            return Err(invalid("u", "fund bond fraction must lie in [0, 1]"));
        }
        Ok(Self {
            gamma,
            g,
            fund_start,
            u,
            vol_cap: DEFAULT_VOL_CAP,
        })
    }

    pub fn with_vol_cap(mut self, cap: f64) -> Result<Self> {
        if cap.is_nan() || cap <= 0.0 {
            return Err(invalid("vol_cap", "must be > 0"));
        }
        self.vol_cap = cap;
        Ok(self)
    }

    /// `φ(t_i) = γ D(t_i) e^{g(T - t_i)}` along a path.
    pub fn levels(&self, market: &MarketPaths) -> Vec<f64> {
        let t_end = market.grid.maturity();
        (0..=market.steps())
            .map(|i| self.gamma * market.bond[i] * (self.g * (t_end - market.grid.time(i))).exp())
            .collect()
    }
}

/// Free path `L` and its reflector `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkorohodDecomposition {
    pub l: Vec<f64>,
    pub k: Vec<f64>,
}

impl SkorohodDecomposition {
    /// `K(0) = 0`, `K` non-decreasing, `K = max(0, max L)`, `K ≥ L`, and
    /// `K` moves only where `L` sets a new maximum.
    pub fn invariants_hold(&self) -> bool {
        let (l, k) = (&self.l, &self.k);
        if k.is_empty() || k[0] != 0.0 {
            return false;
        }
        let mut run = 0.0f64;
        for i in 0..k.len() {
            run = run.max(l[i]);
            if k[i] != run || k[i] < l[i] {
                return false;
            }
            if i > 0 && k[i] < k[i - 1] {
                return false;
            }
            if i > 0 && k[i] > k[i - 1] && k[i] != l[i] {
                return false;
            }
        }
        true
    }
}

/// `K(t_i) = max(0, max_{j≤i} L(t_j))`.
pub fn skorohod_map(l: &[f64]) -> Result<SkorohodDecomposition> {
    if l.first() != Some(&0.0) {
        return Err(invalid("L", "free path must start at 0"));
    }
    let mut k = Vec::with_capacity(l.len());
    let mut run = 0.0f64;
    for &x in l {
        if x.is_nan() {
            return Err(invalid("L", "NaN in free path"));
        }
        run = run.max(x);
        k.push(run);
    }
    Ok(SkorohodDecomposition { l: l.to_vec(), k })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawdownPath {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    /// Amount in the bond over `[t_i, t_{i+1})`.
    pub pi: Vec<f64>,
    pub v: Vec<f64>,
    pub m: Vec<f64>,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    /// Fund in bond units.
    pub r: Vec<f64>,
    /// Fund value.
    pub fund: Vec<f64>,
    /// `V - c0 M`.
    pub psi: Vec<f64>,
    /// `(X - γ max_{j≤i} X_j e^{g(T - t_j)} D) / X`.
    pub constraint_slack: Vec<f64>,
    pub initial_level: f64,
    /// Node from which the portfolio is frozen, if the fund ran out.
    pub frozen_at: Option<usize>,
    /// The lock-in level reaches 1 at the horizon, where `L = +∞`.
    pub singular_terminal: bool,
}

impl DrawdownPath {
    /// Rows `t, X, pi, V, M, K, L, R, constraint_slack`.
    pub fn csv_rows(&self) -> impl Iterator<Item = [f64; 9]> + '_ {
        (0..self.times.len()).map(move |i| {
            [
                self.times[i],
                self.x[i],
                self.pi[i],
                self.v[i],
                self.m[i],
                self.k[i],
                self.l[i],
                self.r[i],
                self.constraint_slack[i],
            ]
        })
    }
}

/// Builds the drawdown-constrained portfolio with initial capital `x`.
///
/// `K` enters `M` through a left-endpoint Stieltjes sum. When the horizon
/// level equals 1 the free path blows up at `T`; the positions held at
/// `t_{n-1}` are then carried over the last step.
pub fn construct_drawdown_portfolio(
    x: f64,
    spec: &DrawdownSpec,
    market: &MarketPaths,
) -> Result<DrawdownPath> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(invalid("x", "initial capital must be > 0"));
    }
    let n = market.steps();
    for (i, s) in market.bond_vol.iter().enumerate() {
        if s.abs() > spec.vol_cap {
            return Err(Error::UnboundedVolatility {
                value: *s,
                cap: spec.vol_cap,
                node: i,
            });
        }
    }
    let phi = spec.levels(market);
    let c0 = phi[0];
    if c0 >= 1.0 - LEVEL_TOL {
        return Err(Error::Infeasible(format!(
            "γe^{{gT}}D(0) = {c0} must be < 1"
        )));
    }
    if let Some(i) = phi[..n].iter().position(|p| *p >= 1.0) {
        return Err(Error::Infeasible(format!(
            "lock-in level γe^{{g(T-t)}}D(t) = {} >= 1 at t = {} before the horizon",
            phi[i],
            market.grid.time(i)
        )));
    }
    if phi[n] > 1.0 + LEVEL_TOL {
        return Err(Error::Infeasible(format!(
            "terminal level γ = {} > 1",
            phi[n]
        )));
    }
    let singular = phi[n] >= 1.0 - LEVEL_TOL;

    let fund: Vec<f64> = simulate_benchmark(&BenchmarkSpec::new(spec.u)?, market)?
        .into_iter()
        .map(|s| s * spec.fund_start)
        .collect();
    let r: Vec<f64> = fund.iter().zip(&market.bond).map(|(s, d)| s / d).collect();
    let frozen_at = r.iter().position(|v| !(*v > 0.0 && v.is_finite()));
    let live = frozen_at.unwrap_or(n + 1);

    let ln_free = (1.0 - c0).ln();
    let mut l = vec![0.0; n + 1];
    for i in 1..live.min(n + 1) {
        l[i] = if i == n && singular {
            f64::INFINITY
        } else {
            ln_free + (r[i] / r[0]).ln() + (phi[i] / c0).ln() - (1.0 - phi[i]).ln()
        };
    }
    for i in live..=n {
        l[i] = l[live - 1];
    }
    let sk = skorohod_map(&l)?;
    let k = sk.k;

    let v0 = x / market.bond[0];
    let mut m = vec![v0; n + 1];
    let mut v = vec![v0; n + 1];
    let mut growth = 0.0;
    for i in 1..=n {
        if i >= live {
            m[i] = m[i - 1];
            v[i] = v[i - 1];
            continue;
        }
        let rho = r[i] / r[0];
        if i == n && singular {
            m[i] = m[i - 1];
            let psi_prev = v[i - 1] - c0 * m[i - 1];
            v[i] = c0 * m[i] + psi_prev * r[i] / r[i - 1];
        } else {
            growth += (1.0 - phi[i - 1]) * (k[i] - k[i - 1]);
            m[i] = v0 * growth.exp();
            v[i] = m[i] * (c0 + (1.0 - c0) * rho * (-k[i]).exp());
        }
    }

    let xs: Vec<f64> = v.iter().zip(&market.bond).map(|(v, d)| v * d).collect();
    let psi: Vec<f64> = v.iter().zip(&m).map(|(v, m)| v - c0 * m).collect();
    let pi: Vec<f64> = (0..=n)
        .map(|i| {
            let reserve = c0 * m[i] * market.bond[i];
            reserve + spec.u * (xs[i] - reserve)
        })
        .collect();
    let t_end = market.grid.maturity();
    let mut best = f64::NEG_INFINITY;
    let slack = (0..=n)
        .map(|i| {
            best = best.max(xs[i] * (spec.g * (t_end - market.grid.time(i))).exp());
            (xs[i] - spec.gamma * best * market.bond[i]) / xs[i]
        })
        .collect();

    Ok(DrawdownPath {
        times: market.grid.times(),
        x: xs,
        pi,
        v,
        m,
        k,
        l,
        r,
        fund,
        psi,
        constraint_slack: slack,
        initial_level: c0,
        frozen_at,
        singular_terminal: singular,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawdownReport {
    /// Nodes with slack below `-SLACK_TOL`.
    pub violations: usize,
    pub min_slack: f64,
    /// `(X(T) - γ max_grid X(s) e^{g(T-s)}) / X(T)`.
    pub terminal_residual: f64,
    /// `ψ(T) / V(T)`: gap between the terminal value and the lock-in level
    /// carried by `M`.
    pub reflection_gap: f64,
    pub skorohod_ok: bool,
    /// `M ≤ V(0) e^K` at every node.
    pub m_bound_ok: bool,
    /// `0 ≤ ψ ≤ (1 - c0) V(0) ρ` at every node.
    pub psi_bound_ok: bool,
    pub positive: bool,
}

pub fn verify_drawdown(path: &DrawdownPath) -> DrawdownReport {
    let n = path.x.len() - 1;
    let c0 = path.initial_level;
    let v0 = path.v[0];
    let rel = 1e-12;
    let violations = path
        .constraint_slack
        .iter()
        .filter(|s| **s < -SLACK_TOL)
        .count();
    let min_slack = path
        .constraint_slack
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let sk = SkorohodDecomposition {
        l: path.l.clone(),
        k: path.k.clone(),
    };
    let m_bound_ok = path
        .m
        .iter()
        .zip(&path.k)
        .all(|(m, k)| *m <= v0 * k.exp() * (1.0 + rel));
    let psi_bound_ok = path.psi.iter().zip(&path.r).all(|(psi, r)| {
        let cap = (1.0 - c0) * v0 * r / path.r[0];
        *psi >= -rel * v0 && *psi <= cap * (1.0 + rel)
    });
    DrawdownReport {
        violations,
        min_slack,
        terminal_residual: path.constraint_slack[n],
        reflection_gap: path.psi[n] / path.v[n],
        skorohod_ok: sk.invariants_hold(),
        m_bound_ok,
        psi_bound_ok,
        positive: path.x.iter().all(|x| *x > 0.0),
    }
}

/// Largest per-step gap of `X(t_{i+1})` against holding `π` in the bond and
/// the rest in the bank account, relative to `X(0)`.
pub fn self_financing_residual(path: &DrawdownPath, market: &MarketPaths) -> f64 {
    (0..market.steps())
        .map(|i| {
            let bank = (market.integral[i + 1] - market.integral[i]).exp();
            let pred =
                path.pi[i] * market.bond[i + 1] / market.bond[i] + (path.x[i] - path.pi[i]) * bank;
            (path.x[i + 1] - pred).abs() / path.x[0]
        })
        .fold(0.0, f64::max)
}

/// Probability of an event, exact when decided by deterministic bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub exact: bool,
}

impl ProbabilityEstimate {
    fn exact(p: f64) -> Self {
        Self {
            value: p,
            lo: p,
            hi: p,
            exact: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `γ e^{gT} D(0)`.
    pub initial_level: f64,
    /// `γ max_t e^{g(T-t)} sup D(t)` over grid nodes.
    pub deterministic_sup: f64,
    /// `P(sup_t γ e^{g(T-t)} D(t) > 1)`.
    pub p_exceed: ProbabilityEstimate,
    /// `P(sup_t γ e^{g(T-t)} D(t) = 1)`.
    pub p_attain: ProbabilityEstimate,
    pub paths: usize,
    pub max_bond_vol: f64,
}

impl FeasibilityReport {
    /// Sufficient conditions for the drawdown construction.
    pub fn construction_feasible(&self) -> bool {
        self.initial_level < 1.0 - LEVEL_TOL && self.deterministic_sup <= 1.0 + LEVEL_TOL
    }
}

/// Deterministic bounds first, Monte-Carlo estimates with 95% Wald
/// intervals where the bounds do not decide.
pub fn check_feasibility(
    model: &ShortRateModel,
    spec: &DrawdownSpec,
    grid: TimeGrid,
    sample_size: usize,
    seed: u64,
) -> Result<FeasibilityReport> {
    let t_end = grid.maturity();
    let deterministic_sup = (0..=grid.steps())
        .map(|i| {
            let t = grid.time(i);
            let sup_d = if i == grid.steps() {
                1.0
            } else {
                model.sup_bond_price(t, t_end)
            };
            spec.gamma * (spec.g * (t_end - t)).exp() * sup_d
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let initial_level = spec.gamma * (spec.g * t_end).exp() * model.bond_price(t_end, model.r0);

    let ens = Ensemble::simulate(model, grid, sample_size.max(1), seed, Measure::P, false)?;
    let mut exceed = 0;
    let mut attain = 0;
    let mut max_vol = 0.0f64;
    for p in &ens.paths {
        let sup = spec.levels(p).into_iter().fold(f64::NEG_INFINITY, f64::max);
        if sup > 1.0 + LEVEL_TOL {
            exceed += 1;
        } else if sup >= 1.0 - LEVEL_TOL {
            attain += 1;
        }
        max_vol = p.bond_vol.iter().fold(max_vol, |a, s| a.max(s.abs()));
    }
    let n = ens.len();
    let mc = |hits: usize| {
        let (p, lo, hi) = proportion_ci(hits, n, 1.96);
        ProbabilityEstimate {
            value: p,
            lo,
            hi,
            exact: false,
        }
    };
    let terminal_over = spec.gamma > 1.0 + LEVEL_TOL;
    let p_exceed = if terminal_over {
        ProbabilityEstimate::exact(1.0)
    } else if deterministic_sup <= 1.0 + LEVEL_TOL {
        ProbabilityEstimate::exact(0.0)
    } else {
        mc(exceed)
    };
    let unit_terminal = (spec.gamma - 1.0).abs() <= LEVEL_TOL;
    let p_attain = if terminal_over {
        ProbabilityEstimate::exact(0.0)
    } else if unit_terminal && p_exceed.exact {
        // the horizon level is exactly 1 and nothing exceeds it
        ProbabilityEstimate::exact(1.0)
    } else if deterministic_sup < 1.0 - LEVEL_TOL {
        ProbabilityEstimate::exact(0.0)
    } else {
        mc(attain)
    };
    Ok(FeasibilityReport {
        initial_level,
        deterministic_sup,
        p_exceed,
        p_attain,
        paths: n,
        max_bond_vol: max_vol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub seed: u64,
    pub stream: u64,
    pub node: usize,
    pub time: f64,
    pub rate: f64,
    /// Rate barrier `h(t)` below which `e^{-gt} D(t) / D(0) > 1`.
    pub barrier: f64,
    /// `e^{-gt} D(t) / D(0)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub witness: Option<Witness>,
    pub paths_tried: usize,
    /// `min (r(t) - h(t))` over every searched node; negative iff found.
    pub min_margin: f64,
    pub seed: u64,
}

/// Searches real-world CIR paths for a node with `e^{-gt} D(t) > D(0)`,
/// i.e. `r(t) < h(t) = (gt - n(t) + n(0) - m(0) r0) / (-m(t))` with
/// `D(t) = exp(n(t) - m(t) r(t))`.
pub fn cir_infeasibility_witness(
    model: &ShortRateModel,
    g: f64,
    grid: TimeGrid,
    max_tries: usize,
    seed: u64,
) -> Result<WitnessReport> {
    if !model.is_cir() {
        return Err(Error::Unsupported(
            "witness search is defined for CIR".into(),
        ));
    }
    let t_end = grid.maturity();
    let (n0, m0) = model.affine(t_end);
    let d0 = (n0 - m0 * model.r0).exp();
    let barrier: Vec<(f64, f64)> = (1..grid.steps())
        .map(|i| {
            let t = grid.time(i);
            let (nt, mt) = model.affine(t_end - t);
            ((g * t - nt + n0 - m0 * model.r0) / (-mt), mt)
        })
        .collect();
    let mut min_margin = f64::INFINITY;
    let batch = 256;
    let mut tried = 0;
    while tried < max_tries {
        let count = batch.min(max_tries - tried);
        let ens = Ensemble::simulate_range(model, grid, tried, count, seed, Measure::P, false)?;
        for (offset, p) in ens.paths.iter().enumerate() {
            for (j, &(h, _)) in barrier.iter().enumerate() {
                let i = j + 1;
                let margin = p.rate[i] - h;
                min_margin = min_margin.min(margin);
                if margin < 0.0 {
                    let t = grid.time(i);
                    return Ok(WitnessReport {
                        witness: Some(Witness {
                            seed,
                            stream: p.stream,
                            node: i,
                            time: t,
                            rate: p.rate[i],
                            barrier: h,
                            ratio: (-g * t).exp() * p.bond[i] / d0,
                        }),
                        paths_tried: tried + offset + 1,
                        min_margin,
                        seed,
                    });
                }
            }
        }
        tried += count;
    }
    Ok(WitnessReport {
        witness: None,
        paths_tried: tried,
        min_margin,
        seed,
    })
}
