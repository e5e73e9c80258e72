use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use super::model::ShortRateModel;
use super::noise::BrownianPath;
use crate::error::{Error, Result};

/// Probability measure the driving noise is sampled under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    /// Real-world.
    P,
    /// Risk-neutral (bank-account numeraire).
    Q,
}

/// One joint path of rate, bank-account discounting and the bond maturing
/// at the grid horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPaths {
    pub grid: TimeGrid,
    pub measure: Measure,
    /// Observable short rate `r(t_i)`.
    pub rate: Vec<f64>,
    /// Trapezoid approximation of `∫_0^{t_i} r ds`.
    pub integral: Vec<f64>,
    /// `exp(-∫_0^{t_i} r ds)`.
    pub discount: Vec<f64>,
    /// Bond price `D(t_i) = exp(n(t_i) - m(t_i) r(t_i))`.
    pub bond: Vec<f64>,
    /// Bond volatility `sigma(t_i) = -m(t_i) b(r(t_i))`.
    pub bond_vol: Vec<f64>,
    /// Increments of the risk-neutral Brownian motion.
    pub dw_q: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
}

impl MarketPaths {
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// `exp(-∫_{t_i}^{t_j} r ds)` under the shared trapezoid quadrature.
    pub fn discount_between(&self, i: usize, j: usize) -> f64 {
        (self.integral[i] - self.integral[j]).exp()
    }

    /// Discounted bond `exp(-∫_0^t r) D(t)`.
    pub fn discounted_bond(&self, i: usize) -> f64 {
        self.discount[i] * self.bond[i]
    }

    /// Rows `t, r, discount, D, sigma`.
    pub fn csv_rows(&self) -> impl Iterator<Item = [f64; 5]> + '_ {
        (0..=self.steps()).map(move |i| {
            [
                self.grid.time(i),
                self.rate[i],
                self.discount[i],
                self.bond[i],
                self.bond_vol[i],
            ]
        })
    }
}

/// Simulates the rate and derives discounting and the bond from it.
pub fn simulate_rate(
    model: &ShortRateModel,
    noise: &BrownianPath,
    measure: Measure,
) -> Result<MarketPaths> {
    let model = model.validated()?;
    let grid = *noise.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let maturity = grid.maturity();

    let mut state = model.r0;
    let mut rate = Vec::with_capacity(n + 1);
    rate.push(model.observed_rate(state));
    for &dw in noise.increments() {
        state = model.step(state, dt, dw, measure);
        rate.push(model.observed_rate(state));
    }

    let mut integral = Vec::with_capacity(n + 1);
    integral.push(0.0);
    for i in 0..n {
        let prev = integral[i];
        integral.push(prev + 0.5 * (rate[i] + rate[i + 1]) * dt);
    }
    let discount = integral.iter().map(|x| (-x).exp()).collect();

    let mut bond = Vec::with_capacity(n + 1);
    let mut bond_vol = Vec::with_capacity(n + 1);
    for (i, &r) in rate.iter().enumerate() {
        let tau = if i == n { 0.0 } else { maturity - grid.time(i) };
        let (ln_a, b) = model.affine(tau);
        bond.push((ln_a - b * r).exp());
        bond_vol.push(-b * model.diffusion(r));
    }

    let dw_q = match measure {
        Measure::Q => noise.increments().to_vec(),
        Measure::P => noise
            .increments()
            .iter()
            .map(|dw| dw + model.risk_premium * dt)
            .collect(),
    };

    Ok(MarketPaths {
        grid,
        measure,
        rate,
        integral,
        discount,
        bond,
        bond_vol,
        dw_q,
        seed: noise.seed(),
        stream: noise.stream(),
    })
}

/// A batch of market paths, optionally in antithetic pairs `(2k, 2k+1)`.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub paths: Vec<MarketPaths>,
    pub antithetic: bool,
}

impl Ensemble {
    /// `count` paths from `seed`. With `antithetic`, path `2k + 1` is driven
    /// by the negated noise of path `2k`, both from stream `k`; `count` is
    /// rounded up to even.
    pub fn simulate(
        model: &ShortRateModel,
        grid: TimeGrid,
        count: usize,
        seed: u64,
        measure: Measure,
        antithetic: bool,
    ) -> Result<Self> {
        Self::simulate_range(model, grid, 0, count, seed, measure, antithetic)
    }

    /// Paths `offset .. offset + count` of the ensemble defined by `seed`.
    pub fn simulate_range(
        model: &ShortRateModel,
        grid: TimeGrid,
        offset: usize,
        count: usize,
        seed: u64,
        measure: Measure,
        antithetic: bool,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let mut paths = Vec::with_capacity(count + 1);
        if antithetic {
            let pairs = count.div_ceil(2);
            let first = offset / 2;
            for k in first..first + pairs {
                let w = BrownianPath::sample(grid, seed, k as u64);
                paths.push(simulate_rate(model, &w, measure)?);
                paths.push(simulate_rate(model, &w.negated(), measure)?);
            }
        } else {
            for k in offset..offset + count {
                let w = BrownianPath::sample(grid, seed, k as u64);
                paths.push(simulate_rate(model, &w, measure)?);
            }
        }
        Ok(Self { paths, antithetic })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn grid(&self) -> Option<TimeGrid> {
        self.paths.first().map(|p| p.grid)
    }

    /// Bond price at time 0 (identical on every path).
    pub fn initial_bond(&self) -> Result<f64> {
        self.paths
            .first()
            .map(|p| p.bond[0])
            .ok_or(Error::EmptyEnsemble)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 256).unwrap()
    }

    #[test]
    fn degenerate_vasicek_is_flat() {
        let m = ShortRateModel::vasicek(0.0, 0.0, 0.0, 0.05).unwrap();
        let w = BrownianPath::sample(grid(), 3, 0);
        let p = simulate_rate(&m, &w, Measure::Q).unwrap();
        for i in 0..=256 {
            let t = grid().time(i);
            assert_eq!(p.rate[i], 0.05);
            assert!((p.bond[i] - (-0.05 * (1.0 - t)).exp()).abs() < 1e-15);
            assert_eq!(p.bond_vol[i], 0.0);
        }
    }

    #[test]
    fn terminal_bond_is_par_bit_exact() {
        let m = ShortRateModel::cir(0.5, 0.04, 0.1, 0.04).unwrap();
        for k in 0..20 {
            let w = BrownianPath::sample(grid(), 42, k);
            let p = simulate_rate(&m, &w, Measure::P).unwrap();
            assert_eq!(p.bond[256], 1.0);
        }
    }

    #[test]
    fn reproducible_paths() {
        let m = ShortRateModel::cir(0.5, 0.04, 0.1, 0.04)
            .unwrap()
            .with_risk_premium(0.2)
            .unwrap();
        let a = Ensemble::simulate(&m, grid(), 6, 9, Measure::P, false).unwrap();
        let b = Ensemble::simulate(&m, grid(), 6, 9, Measure::P, false).unwrap();
        assert_eq!(a.paths, b.paths);
    }

    #[test]
    fn batches_compose() {
        let m = ShortRateModel::vasicek(0.1, 0.05, 0.01, 0.05).unwrap();
        let whole = Ensemble::simulate(&m, grid(), 10, 5, Measure::Q, false).unwrap();
        let head = Ensemble::simulate_range(&m, grid(), 0, 5, 5, Measure::Q, false).unwrap();
        let tail = Ensemble::simulate_range(&m, grid(), 5, 5, 5, Measure::Q, false).unwrap();
        let joined: Vec<_> = head.paths.into_iter().chain(tail.paths).collect();
        assert_eq!(whole.paths, joined);
    }

    #[test]
    fn risk_neutral_increments_shift_under_p() {
        let m = ShortRateModel::vasicek(0.1, 0.05, 0.01, 0.05)
            .unwrap()
            .with_risk_premium(0.5)
            .unwrap();
        let w = BrownianPath::sample(grid(), 1, 0);
        let p = simulate_rate(&m, &w, Measure::P).unwrap();
        let dt = grid().dt();
        for (q, dw) in p.dw_q.iter().zip(w.increments()) {
            assert!((q - dw - 0.5 * dt).abs() < 1e-15);
        }
    }
}
