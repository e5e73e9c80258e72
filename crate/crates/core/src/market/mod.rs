//! Bank account, short rate and the zero-coupon bond maturing at the horizon.

mod grid;
mod model;
mod noise;
mod paths;

pub use grid::TimeGrid;
pub use model::{RateDynamics, ShortRateModel};
pub use noise::{path_rng, BrownianPath};
pub use paths::{simulate_rate, Ensemble, MarketPaths, Measure};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Default truncation horizon for annuity factors, in years.
pub const DEFAULT_ANNUITY_HORIZON: f64 = 40.0;
/// Default number of Simpson intervals for annuity factors.
pub const DEFAULT_ANNUITY_INTERVALS: usize = 128;

/// Truncated annuity factor `∫_0^H P(tau; r) dtau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnuityFactor {
    pub value: f64,
    /// Flat-yield extrapolation of the neglected tail `∫_H^∞`.
    pub tail: f64,
}

/// Simpson weights and affine coefficients for repeated annuity
/// evaluations at different rates.
#[derive(Debug, Clone)]
pub struct AnnuityTable {
    weights: Vec<f64>,
    ln_a: Vec<f64>,
    b: Vec<f64>,
    horizon: f64,
}

impl AnnuityTable {
    pub fn new(model: &ShortRateModel, horizon: f64, intervals: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", "must be > 0"));
        }
        if intervals < 2 || !intervals.is_multiple_of(2) {
            return Err(invalid("intervals", "Simpson needs an even count >= 2"));
        }
        let h = horizon / intervals as f64;
        let mut weights = Vec::with_capacity(intervals + 1);
        let mut ln_a = Vec::with_capacity(intervals + 1);
        let mut b = Vec::with_capacity(intervals + 1);
        for k in 0..=intervals {
            let w = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            weights.push(w * h / 3.0);
            let (la, bb) = model.affine(k as f64 * h);
            ln_a.push(la);
            b.push(bb);
        }
        Ok(Self {
            weights,
            ln_a,
            b,
            horizon,
        })
    }

    pub fn eval(&self, r: f64) -> AnnuityFactor {
        let mut value = 0.0;
        for ((w, la), b) in self.weights.iter().zip(&self.ln_a).zip(&self.b) {
            value += w * (la - b * r).exp();
        }
        let last = (self.ln_a[self.ln_a.len() - 1] - self.b[self.b.len() - 1] * r).exp();
        let yield_ = -last.ln() / self.horizon;
        let tail = if yield_ > 0.0 {
            last / yield_
        } else {
            f64::INFINITY
        };
        AnnuityFactor { value, tail }
    }
}

/// Price at time `T` of a unit-rate continuous annuity paid over
/// `[T, T + horizon]` when `r(T) = rate`.
pub fn annuity_factor(model: &ShortRateModel, rate: f64, horizon: f64) -> Result<AnnuityFactor> {
    Ok(AnnuityTable::new(model, horizon, DEFAULT_ANNUITY_INTERVALS)?.eval(rate))
}

/// Diagnostic check of the market assumptions on simulated paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub paths: usize,
    /// Fraction of simulated rate values below zero (non-negative rates).
    pub negative_rate_fraction: f64,
    /// Extremes of `D(t)` over nodes strictly before the horizon.
    pub min_bond_before_maturity: f64,
    pub max_bond_before_maturity: f64,
    /// Nodes before the horizon with `D(t) >= 1`.
    pub bond_at_or_above_par: usize,
    /// `D(T) = 1` on every path.
    pub terminal_par: bool,
    /// The risk premium is a finite constant, hence bounded.
    pub premium_bounded: bool,
    pub violations: Vec<String>,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Simulates `sample_size` real-world paths and reports how the model
/// fares against non-negative rates, `0 < D(t) < 1 = D(T)` and a bounded
/// risk premium. Nothing is rejected.
pub fn check_assumptions(
    model: &ShortRateModel,
    grid: TimeGrid,
    sample_size: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    let ens = Ensemble::simulate(model, grid, sample_size.max(1), seed, Measure::P, false)?;
    let n = grid.steps();
    let mut negative = 0usize;
    let mut total = 0usize;
    let mut min_d = f64::INFINITY;
    let mut max_d = f64::NEG_INFINITY;
    let mut above = 0usize;
    let mut terminal_par = true;
    for p in &ens.paths {
        negative += p.rate.iter().filter(|r| **r < 0.0).count();
        total += p.rate.len();
        for &d in &p.bond[..n] {
            min_d = min_d.min(d);
            max_d = max_d.max(d);
            if d >= 1.0 {
                above += 1;
            }
        }
        terminal_par &= p.bond[n] == 1.0;
    }
    let negative_rate_fraction = negative as f64 / total as f64;
    let premium_bounded = model.risk_premium.is_finite();
    let mut violations = Vec::new();
    if negative > 0 {
        violations.push(format!(
            "rates below zero on {:.4}% of nodes",
            100.0 * negative_rate_fraction
        ));
    }
    if above > 0 || min_d <= 0.0 {
        violations.push(format!(
            "bond outside (0, 1) before maturity at {above} nodes (range [{min_d}, {max_d}])"
        ));
    }
    if !terminal_par {
        violations.push("D(T) != 1".to_string());
    }
    if !premium_bounded {
        violations.push("risk premium unbounded".to_string());
    }
    Ok(AssumptionReport {
        paths: ens.len(),
        negative_rate_fraction,
        min_bond_before_maturity: min_d,
        max_bond_before_maturity: max_d,
        bond_at_or_above_par: above,
        terminal_par,
        premium_bounded,
        violations,
    })
}
