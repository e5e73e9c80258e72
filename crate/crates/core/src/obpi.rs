//! Static option-based portfolio insurance on a constant-mix benchmark.
//!
//! Capital `x` buys the bond paying `x` at the horizon and a call on
//! `x λ S(T)` struck at `x`. The participation `λ` balances the budget and
//! does not depend on `x`, so every routine here works per unit capital.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::{Ensemble, MarketPaths};
use crate::stats::McEstimate;

/// Benchmark holding a constant fraction `weight` of its value in the bond
/// and the rest in the bank account, started at `S(0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub weight: f64,
}

impl BenchmarkSpec {
    pub fn new(weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(invalid("weight", "constant-mix weight must lie in [0, 1]"));
        }
        Ok(Self { weight })
    }
}

/// Benchmark value `S(t_i)` along one market path.
///
/// Log-Euler step of `dS/S = w dD/D + (1 - w) r dt`:
/// `Δ ln S = w Δ ln D + (1 - w) Δ∫r + w(1 - w) σ² Δt / 2`, which is exact
/// for `w ∈ {0, 1}` and keeps `S > 0`.
pub fn simulate_benchmark(spec: &BenchmarkSpec, market: &MarketPaths) -> Result<Vec<f64>> {
    let spec = BenchmarkSpec::new(spec.weight)?;
    let w = spec.weight;
    let dt = market.grid.dt();
    let n = market.steps();
    let mut s = Vec::with_capacity(n + 1);
    let mut ln_s = 0.0;
    s.push(1.0);
    for i in 0..n {
        let bond_leg = if w == 0.0 {
            0.0
        } else {
            w * (market.bond[i + 1] / market.bond[i]).ln()
        };
        let bank_leg = if w == 1.0 {
            0.0
        } else {
            (1.0 - w) * (market.integral[i + 1] - market.integral[i])
        };
        let sigma = market.bond_vol[i];
        ln_s += bond_leg + bank_leg + 0.5 * w * (1.0 - w) * sigma * sigma * dt;
        s.push(ln_s.exp());
    }
    Ok(s)
}

/// Discounted benchmark `e^{-∫r} S`.
pub fn discounted_benchmark(spec: &BenchmarkSpec, market: &MarketPaths) -> Result<Vec<f64>> {
    let s = simulate_benchmark(spec, market)?;
    Ok(s.iter().zip(&market.discount).map(|(s, d)| s * d).collect())
}

/// Per-path `(S̃(T), e^{-∫_0^T r})`.
fn terminal_pairs(spec: &BenchmarkSpec, ensemble: &Ensemble) -> Result<Vec<(f64, f64)>> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    ensemble
        .paths
        .iter()
        .map(|p| {
            let s = simulate_benchmark(spec, p)?;
            let n = p.steps();
            Ok((s[n] * p.discount[n], p.discount[n]))
        })
        .collect()
}

fn estimate(ensemble: &Ensemble, xs: &[f64]) -> McEstimate {
    if ensemble.antithetic {
        McEstimate::from_antithetic(xs)
    } else {
        McEstimate::from_samples(xs)
    }
}

/// `E^Q[e^{-∫r} (scale S(T) - strike)^+]`.
pub fn price_call(
    spec: &BenchmarkSpec,
    strike: f64,
    scale: f64,
    ensemble: &Ensemble,
) -> Result<McEstimate> {
    let pairs = terminal_pairs(spec, ensemble)?;
    let xs: Vec<f64> = pairs
        .iter()
        .map(|(st, df)| (scale * st - strike * df).max(0.0))
        .collect();
    Ok(estimate(ensemble, &xs))
}

/// `E^Q[e^{-∫r} (strike - scale S(T))^+]`.
pub fn price_put(
    spec: &BenchmarkSpec,
    strike: f64,
    scale: f64,
    ensemble: &Ensemble,
) -> Result<McEstimate> {
    let pairs = terminal_pairs(spec, ensemble)?;
    let xs: Vec<f64> = pairs
        .iter()
        .map(|(st, df)| (strike * df - scale * st).max(0.0))
        .collect();
    Ok(estimate(ensemble, &xs))
}

/// Annual fee that finances the put when deducted continuously.
pub fn fee_from_participation(lambda: f64, maturity: f64) -> f64 {
    -lambda.ln() / maturity
}

/// Budget tolerance on `|D(0) + C(λ) - 1|`.
pub const PARTICIPATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObpiSolution {
    pub lambda: f64,
    /// Call price per unit capital.
    pub call: McEstimate,
    /// Put price per unit capital.
    pub put: McEstimate,
    pub fee: f64,
    pub bond0: f64,
    /// `D(0) + C - 1` at the returned `λ`.
    pub residual: f64,
    /// `C - P - (λ S(0) - D(0))`.
    pub parity_residual: f64,
    pub parity_std_err: f64,
    pub bracket: (f64, f64),
    pub maturity: f64,
}

/// Positions for a concrete capital amount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObpiPosition {
    pub capital: f64,
    pub bond_cost: f64,
    pub call_cost: f64,
    pub fund_amount: f64,
    pub put_cost: f64,
}

impl ObpiSolution {
    pub fn for_capital(&self, x: f64) -> ObpiPosition {
        ObpiPosition {
            capital: x,
            bond_cost: x * self.bond0,
            call_cost: x * self.call.mean,
            fund_amount: x * self.lambda,
            put_cost: x * self.put.mean,
        }
    }
}

/// Solves `D(0) + C(λ S(T) - 1) = 1` by bisection with common random
/// numbers, so the estimated budget is monotone in `λ`.
pub fn solve_participation(spec: &BenchmarkSpec, ensemble: &Ensemble) -> Result<ObpiSolution> {
    let pairs = terminal_pairs(spec, ensemble)?;
    let d0 = ensemble.initial_bond()?;
    if d0 >= 1.0 {
        return Err(Error::NoOptionBudget(d0));
    }
    let maturity = ensemble.grid().ok_or(Error::EmptyEnsemble)?.maturity();
    let n = pairs.len() as f64;
    let budget = |lambda: f64| {
        let c: f64 = pairs
            .iter()
            .map(|(st, df)| (lambda * st - df).max(0.0))
            .sum::<f64>()
            / n;
        d0 + c - 1.0
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut f_hi = budget(hi);
    let mut grow = 0;
    while f_hi < 0.0 {
        lo = hi;
        hi *= 2.0;
        f_hi = budget(hi);
        grow += 1;
        if grow > 60 {
            return Err(Error::NoBracket {
                lo: 0.0,
                hi,
                f_lo: d0 - 1.0,
                f_hi,
            });
        }
    }
    let bracket = (lo, hi);
    let mut lambda = hi;
    let mut residual = f_hi;
    for _ in 0..200 {
        if residual.abs() < PARTICIPATION_TOL {
            break;
        }
        lambda = 0.5 * (lo + hi);
        residual = budget(lambda);
        if residual < 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }

    let call = price_call(spec, 1.0, lambda, ensemble)?;
    let put = price_put(spec, 1.0, lambda, ensemble)?;
    let parity: Vec<f64> = pairs.iter().map(|(st, df)| lambda * st - df).collect();
    let parity_se = estimate(ensemble, &parity).std_err;
    Ok(ObpiSolution {
        lambda,
        call,
        put,
        fee: fee_from_participation(lambda, maturity),
        bond0: d0,
        residual,
        parity_residual: call.mean - put.mean - (lambda - d0),
        parity_std_err: parity_se,
        bracket,
        maturity,
    })
}

/// Solves per unit of capital and sizes the positions for `capital`; the
/// participation factor does not depend on the amount invested.
pub fn solve_for_capital(
    spec: &BenchmarkSpec,
    ensemble: &Ensemble,
    capital: f64,
) -> Result<(ObpiSolution, ObpiPosition)> {
    if !(capital > 0.0 && capital.is_finite()) {
        return Err(invalid("capital", "must be > 0"));
    }
    let sol = solve_participation(spec, ensemble)?;
    let pos = sol.for_capital(capital);
    Ok((sol, pos))
}
