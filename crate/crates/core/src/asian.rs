//! Profit sharing on the average portfolio value.
//!
//! Two claims are solved explicitly, both with a constant-mix benchmark `S`:
//!
//! * participation in the average, `Y(T) = β Y(0) S̃(T) + γ/T ∫_0^T Y ds`,
//! * a bonus on top of the benchmark, `Y(T) = β S̃(T) + γ/T ∫_0^T Y ds`.
//!
//! With `V̂ = c S̃` and `dV̂ = M dW^Q`, both are solved by
//! `Z(t) = M(t) / (1 - γ + γ t/T)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::MarketPaths;
use crate::obpi::{discounted_benchmark, BenchmarkSpec};

/// Tolerance on `β + γ = 1`.
pub const CONDITION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingVariant {
    /// Participation in the average of the portfolio itself.
    Average,
    /// Benchmark plus bonus on the average.
    Bonus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub beta: f64,
    pub gamma: f64,
    pub benchmark: BenchmarkSpec,
    pub variant: SmoothingVariant,
}

impl SmoothingSpec {
    pub fn new(beta: f64, gamma: f64, weight: f64, variant: SmoothingVariant) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(invalid("beta", "must be finite and >= 0"));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", "must be finite and >= 0"));
        }
        Ok(Self {
            beta,
            gamma,
            benchmark: BenchmarkSpec::new(weight)?,
            variant,
        })
    }

    /// `β E^Q[S̃(T)] + γ - 1`; `E^Q[S̃(T)] = 1` for a constant-mix benchmark.
    pub fn condition_gap(&self) -> f64 {
        self.beta + self.gamma - 1.0
    }
}

/// `h(t) = (T - t) / (T - γT + γt)`.
pub fn weight(t: f64, gamma: f64, maturity: f64) -> f64 {
    (maturity - t) / (maturity - gamma * maturity + gamma * t)
}

/// `h'(t) = -T / (T + γt - γT)^2`.
pub fn weight_derivative(t: f64, gamma: f64, maturity: f64) -> f64 {
    let den = maturity + gamma * t - gamma * maturity;
    -maturity / (den * den)
}

/// Discounted benchmark and the integrand of its representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMartingale {
    pub s_tilde: Vec<f64>,
    /// `M = c S̃ w σ`.
    pub integrand: Vec<f64>,
    pub scale: f64,
}

impl BenchmarkMartingale {
    /// `c S̃(T) - c S̃(0) - Σ M(t_i) ΔW_i`.
    pub fn reconstruction_residual(&self, dw: &[f64]) -> f64 {
        let n = self.s_tilde.len() - 1;
        let sum: f64 = self.integrand[..n].iter().zip(dw).map(|(m, w)| m * w).sum();
        self.scale * (self.s_tilde[n] - self.s_tilde[0]) - sum
    }
}

/// `dS̃ = S̃ w σ dW^Q` for the constant-mix benchmark, scaled by `c`.
pub fn martingale_integrand(
    benchmark: &BenchmarkSpec,
    market: &MarketPaths,
    c: f64,
) -> Result<BenchmarkMartingale> {
    let s_tilde = discounted_benchmark(benchmark, market)?;
    let w = benchmark.weight;
    let integrand = s_tilde
        .iter()
        .zip(&market.bond_vol)
        .map(|(s, sigma)| c * s * w * sigma)
        .collect();
    Ok(BenchmarkMartingale {
        s_tilde,
        integrand,
        scale: c,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSolution {
    pub times: Vec<f64>,
    pub y0: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub integrand: Vec<f64>,
    pub s_tilde: Vec<f64>,
    /// `(1/T) ∫_0^t Y ds`, trapezoid.
    pub running_avg: Vec<f64>,
    pub h: Vec<f64>,
    /// Driving `ΔW^Q`.
    pub dw: Vec<f64>,
    /// Scale `c` of the benchmark leg.
    pub scale: f64,
    pub beta: f64,
    pub gamma: f64,
    pub maturity: f64,
}

impl SmoothingSolution {
    /// Rows `t, Y, Z, M, running_avg`.
    pub fn csv_rows(&self) -> impl Iterator<Item = [f64; 5]> + '_ {
        (0..self.times.len()).map(move |i| {
            [
                self.times[i],
                self.y[i],
                self.z[i],
                self.integrand[i],
                self.running_avg[i],
            ]
        })
    }
}

fn build(
    y0: f64,
    scale: f64,
    spec: &SmoothingSpec,
    market: &MarketPaths,
) -> Result<SmoothingSolution> {
    let grid = market.grid;
    let t_end = grid.maturity();
    let n = grid.steps();
    let mart = martingale_integrand(&spec.benchmark, market, scale)?;
    let constant = spec.gamma == 1.0;
    let z: Vec<f64> = (0..=n)
        .map(|i| {
            if constant {
                0.0
            } else {
                mart.integrand[i] / (1.0 - spec.gamma + spec.gamma * grid.time(i) / t_end)
            }
        })
        .collect();
    let mut y = Vec::with_capacity(n + 1);
    y.push(y0);
    for i in 0..n {
        y.push(y[i] + z[i] * market.dw_q[i]);
    }
    let dt = grid.dt();
    let mut running_avg = Vec::with_capacity(n + 1);
    running_avg.push(0.0);
    let mut acc = 0.0;
    for i in 0..n {
        acc += 0.5 * (y[i] + y[i + 1]) * dt;
        running_avg.push(acc / t_end);
    }
    let h = (0..=n)
        .map(|i| weight(grid.time(i), spec.gamma, t_end))
        .collect();
    Ok(SmoothingSolution {
        times: grid.times(),
        y0,
        y,
        z,
        integrand: mart.integrand,
        s_tilde: mart.s_tilde,
        running_avg,
        h,
        dw: market.dw_q.clone(),
        scale,
        beta: spec.beta,
        gamma: spec.gamma,
        maturity: t_end,
    })
}

/// Participation in the average. Needs `β + γ = 1`; otherwise only
/// `Y = Z = 0` solves the claim.
pub fn solve_average(
    y0: f64,
    spec: &SmoothingSpec,
    market: &MarketPaths,
) -> Result<SmoothingSolution> {
    if !(y0 >= 0.0 && y0.is_finite()) {
        return Err(invalid("y0", "must be finite and >= 0"));
    }
    if spec.gamma > 1.0 {
        return Err(invalid("gamma", "must lie in [0, 1]"));
    }
    let gap = spec.condition_gap();
    if gap.abs() > CONDITION_TOL {
        if y0 > 0.0 {
            return Err(Error::ZeroSolutionOnly {
                reason: format!("βE[S̃]+γ=1 fails (βE[S̃]+γ-1 = {gap:e})"),
                initial: y0,
            });
        }
        return build(0.0, 0.0, spec, market);
    }
    build(y0, spec.beta * y0, spec, market)
}

/// Benchmark plus bonus: `Y(0) = β E^Q[S̃] / (1 - γ)`.
pub fn solve_bonus(spec: &SmoothingSpec, market: &MarketPaths) -> Result<SmoothingSolution> {
    if spec.gamma >= 1.0 {
        return Err(Error::NoSolution(format!(
            "γ = {} >= 1: then there exists no solution",
            spec.gamma
        )));
    }
    if spec.beta.is_nan() || spec.beta <= 0.0 {
        return Err(invalid("beta", "must be > 0"));
    }
    build(spec.beta / (1.0 - spec.gamma), spec.beta, spec, market)
}

/// Value of the bonus-only portfolio `G` with `Y = β S̃ + G` for the
/// benchmark-plus-bonus claim, by Euler steps of its own integrand.
pub fn bonus_portfolio(sol: &SmoothingSolution) -> Vec<f64> {
    let (beta, gamma, t_end) = (sol.beta, sol.gamma, sol.maturity);
    let n = sol.times.len() - 1;
    let mut g = Vec::with_capacity(n + 1);
    g.push(gamma * beta / (1.0 - gamma));
    for i in 0..n {
        let t = sol.times[i];
        let integrand =
            gamma * (1.0 - t / t_end) * sol.integrand[i] / (1.0 - gamma + gamma * t / t_end);
        g.push(g[i] + integrand * sol.dw[i]);
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageReport {
    /// `Y(T) - c S̃(T) - γ/T ∫ Y ds`.
    pub terminal_residual: f64,
    /// `(1/T) ∫ Y ds - Y(0) - Σ (1 - t_j/T) Z_j ΔW_j`.
    pub fubini_residual: f64,
    /// `Σ h M ΔW + Σ (V̂ - V̂(0)) h' Δt`.
    pub parts_residual: f64,
    /// Smallest running average after time 0.
    pub min_running_avg: f64,
    /// Running average strictly positive after 0 (or identically 0 when
    /// `Y(0) = 0`).
    pub positive: bool,
}

impl AverageReport {
    /// Residuals divided by `Y(0)`, or unchanged for the zero solution.
    pub fn relative(&self, y0: f64) -> (f64, f64, f64) {
        let s = if y0 > 0.0 { y0 } else { 1.0 };
        (
            self.terminal_residual / s,
            self.fubini_residual / s,
            self.parts_residual / s,
        )
    }
}

pub fn verify_average_identities(sol: &SmoothingSolution) -> AverageReport {
    let n = sol.times.len() - 1;
    let t_end = sol.maturity;
    let dt = t_end / n as f64;
    let avg = sol.running_avg[n];
    let terminal_residual = sol.y[n] - sol.scale * sol.s_tilde[n] - sol.gamma * avg;
    let fubini: f64 = (0..n)
        .map(|j| (1.0 - sol.times[j] / t_end) * sol.z[j] * sol.dw[j])
        .sum();
    let fubini_residual = avg - sol.y0 - fubini;
    let lhs: f64 = (0..n)
        .map(|j| sol.h[j] * sol.integrand[j] * sol.dw[j])
        .sum();
    let rhs: f64 = (0..n)
        .map(|j| {
            let v_hat = sol.scale * (sol.s_tilde[j] - sol.s_tilde[0]);
            -v_hat * weight_derivative(sol.times[j], sol.gamma, t_end) * dt
        })
        .sum();
    let min_running_avg = sol.running_avg[1..]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let positive = if sol.y0 > 0.0 {
        min_running_avg > 0.0
    } else {
        sol.running_avg.iter().all(|a| *a == 0.0)
    };
    AverageReport {
        terminal_residual,
        fubini_residual,
        parts_residual: lhs - rhs,
        min_running_avg,
        positive,
    }
}
