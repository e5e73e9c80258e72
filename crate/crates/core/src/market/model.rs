//! One-factor affine short-rate models.
//!
//! Parameters are risk-neutral. Under the real-world measure the rate drift
//! is shifted by `diffusion(r) * risk_premium`, which keeps the bond's
//! market price of risk equal to the (constant) premium.

use serde::{Deserialize, Serialize};

use super::paths::Measure;
use crate::error::{invalid, Result};

/// Short-rate dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase", deny_unknown_fields)]
pub enum RateDynamics {
    /// `dr = a (b - r) dt + sigma dW`, stepped exactly.
    Vasicek { speed: f64, mean: f64, vol: f64 },
    /// `dr = kappa (theta - r) dt + sigma sqrt(r) dW`, full-truncation Euler.
    Cir { speed: f64, mean: f64, vol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortRateModel {
    pub dynamics: RateDynamics,
    pub r0: f64,
    /// Constant market price of risk of the bond.
    #[serde(default)]
    pub risk_premium: f64,
}

impl ShortRateModel {
    pub fn vasicek(speed: f64, mean: f64, vol: f64, r0: f64) -> Result<Self> {
        Self {
            dynamics: RateDynamics::Vasicek { speed, mean, vol },
            r0,
            risk_premium: 0.0,
        }
        .validated()
    }

    pub fn cir(speed: f64, mean: f64, vol: f64, r0: f64) -> Result<Self> {
        Self {
            dynamics: RateDynamics::Cir { speed, mean, vol },
            r0,
            risk_premium: 0.0,
        }
        .validated()
    }

    /// Deterministic constant rate `r`.
    pub fn constant(r: f64) -> Result<Self> {
        Self::vasicek(0.0, 0.0, 0.0, r)
    }

    pub fn with_risk_premium(mut self, theta: f64) -> Result<Self> {
        self.risk_premium = theta;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let finite = |name, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, "must be finite"))
            }
        };
        finite("r0", self.r0)?;
        finite("risk_premium", self.risk_premium)?;
        match self.dynamics {
            RateDynamics::Vasicek { speed, mean, vol } => {
                finite("speed", speed)?;
                finite("mean", mean)?;
                finite("vol", vol)?;
                if speed < 0.0 {
                    return Err(invalid("speed", "must be >= 0"));
                }
                if vol < 0.0 {
                    return Err(invalid("vol", "must be >= 0"));
                }
            }
            RateDynamics::Cir { speed, mean, vol } => {
                finite("speed", speed)?;
                finite("mean", mean)?;
                finite("vol", vol)?;
                if speed <= 0.0 || mean <= 0.0 {
                    return Err(invalid("speed", "CIR requires speed * mean > 0"));
                }
                if vol < 0.0 {
                    return Err(invalid("vol", "must be >= 0"));
                }
                if self.r0 < 0.0 {
                    return Err(invalid("r0", "CIR requires r0 >= 0"));
                }
            }
        }
        Ok(self)
    }

    pub fn rate_vol(&self) -> f64 {
        match self.dynamics {
            RateDynamics::Vasicek { vol, .. } | RateDynamics::Cir { vol, .. } => vol,
        }
    }

    pub fn is_cir(&self) -> bool {
        matches!(self.dynamics, RateDynamics::Cir { .. })
    }

    /// No noise enters the rate.
    pub fn is_deterministic(&self) -> bool {
        self.rate_vol() == 0.0
    }

    /// Diffusion coefficient `b(r)` of the rate.
    pub fn diffusion(&self, r: f64) -> f64 {
        match self.dynamics {
            RateDynamics::Vasicek { vol, .. } => vol,
            RateDynamics::Cir { vol, .. } => vol * r.max(0.0).sqrt(),
        }
    }

    /// Advances the rate state over `dt` given the Brownian increment `dw`
    /// of the simulating measure.
    ///
    /// For CIR the state may dip below zero; the observable rate is
    /// [`ShortRateModel::observed_rate`] of the state.
    pub fn step(&self, state: f64, dt: f64, dw: f64, measure: Measure) -> f64 {
        let premium = match measure {
            Measure::Q => 0.0,
            Measure::P => self.risk_premium,
        };
        match self.dynamics {
            RateDynamics::Vasicek { speed, mean, vol } => {
                if speed == 0.0 {
                    state + vol * premium * dt + vol * dw
                } else {
                    let target = mean + vol * premium / speed;
                    let decay = (-speed * dt).exp();
                    let sd = vol * ((-(-2.0 * speed * dt).exp_m1()) / (2.0 * speed * dt)).sqrt();
                    target + (state - target) * decay + sd * dw
                }
            }
            RateDynamics::Cir { speed, mean, vol } => {
                let r = state.max(0.0);
                let b = vol * r.sqrt();
                state + (speed * (mean - r) + b * premium) * dt + b * dw
            }
        }
    }

    pub fn observed_rate(&self, state: f64) -> f64 {
        match self.dynamics {
            RateDynamics::Vasicek { .. } => state,
            RateDynamics::Cir { .. } => state.max(0.0),
        }
    }

    /// `(ln A(tau), B(tau))` with zero-coupon price `P = A exp(-B r)` for
    /// time to maturity `tau`.
    pub fn affine(&self, tau: f64) -> (f64, f64) {
        if tau == 0.0 {
            return (0.0, 0.0);
        }
        match self.dynamics {
            RateDynamics::Vasicek { speed, mean, vol } => {
                if speed.abs() < 1e-10 {
                    (vol * vol * tau.powi(3) / 6.0, tau)
                } else {
                    let b = -(-speed * tau).exp_m1() / speed;
                    let ln_a = (mean - vol * vol / (2.0 * speed * speed)) * (b - tau)
                        - vol * vol * b * b / (4.0 * speed);
                    (ln_a, b)
                }
            }
            RateDynamics::Cir { speed, mean, vol } => {
                if vol == 0.0 {
                    let b = -(-speed * tau).exp_m1() / speed;
                    (-mean * (tau - b), b)
                } else {
                    let h = (speed * speed + 2.0 * vol * vol).sqrt();
                    let em1 = (h * tau).exp_m1();
                    let denom = (speed + h) * em1 + 2.0 * h;
                    let b = 2.0 * em1 / denom;
                    let ln_a = 2.0 * speed * mean / (vol * vol)
                        * ((2.0 * h).ln() + 0.5 * (speed + h) * tau - denom.ln());
                    (ln_a, b)
                }
            }
        }
    }

    /// Zero-coupon bond price with time to maturity `tau` at rate `r`.
    pub fn bond_price(&self, tau: f64, r: f64) -> f64 {
        let (ln_a, b) = self.affine(tau);
        (ln_a - b * r).exp()
    }

    /// Rate path of the noiseless model at time `t`.
    pub fn deterministic_rate(&self, t: f64) -> f64 {
        match self.dynamics {
            RateDynamics::Vasicek { speed, mean, .. } | RateDynamics::Cir { speed, mean, .. } => {
                mean + (self.r0 - mean) * (-speed * t).exp()
            }
        }
    }

    /// Supremum over attainable rates of the price at time `t` of the bond
    /// maturing at `maturity`.
    ///
    /// CIR rates reach any neighbourhood of zero, Vasicek rates are
    /// unbounded below, and noiseless models follow one path.
    pub fn sup_bond_price(&self, t: f64, maturity: f64) -> f64 {
        let tau = maturity - t;
        if tau <= 0.0 {
            return 1.0;
        }
        if t == 0.0 {
            return self.bond_price(tau, self.r0);
        }
        if self.is_deterministic() {
            return self.bond_price(tau, self.deterministic_rate(t));
        }
        match self.dynamics {
            RateDynamics::Vasicek { .. } => f64::INFINITY,
            RateDynamics::Cir { .. } => self.affine(tau).0.exp(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pull_to_par() {
        for m in [
            ShortRateModel::vasicek(0.1, 0.05, 0.01, 0.05).unwrap(),
            ShortRateModel::cir(0.5, 0.04, 0.1, 0.04).unwrap(),
            ShortRateModel::constant(0.05).unwrap(),
        ] {
            assert_eq!(m.bond_price(0.0, 0.3), 1.0);
        }
    }

    #[test]
    fn constant_rate_bond() {
        let m = ShortRateModel::constant(0.05).unwrap();
        let p = m.bond_price(3.0, 0.05);
        assert!((p - (-0.15f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn noiseless_cir_matches_integrated_rate() {
        // r(t) = θ + (r0-θ)e^{-κt}; ∫_0^τ r = θτ + (r0-θ)(1-e^{-κτ})/κ
        let m = ShortRateModel::cir(0.5, 0.04, 0.0, 0.02).unwrap();
        let tau: f64 = 2.0;
        let integral = 0.04 * tau + (0.02 - 0.04) * (1.0 - (-0.5 * tau).exp()) / 0.5;
        assert!((m.bond_price(tau, 0.02) - (-integral).exp()).abs() < 1e-14);
    }

    #[test]
    fn vasicek_small_speed_limit() {
        let a = ShortRateModel::vasicek(1e-6, 0.0, 0.02, 0.03).unwrap();
        let z = ShortRateModel::vasicek(0.0, 0.0, 0.02, 0.03).unwrap();
        assert!((a.bond_price(5.0, 0.03) - z.bond_price(5.0, 0.03)).abs() < 1e-6);
    }

    #[test]
    fn parameter_validation() {
        assert!(ShortRateModel::cir(0.5, 0.0, 0.1, 0.04).is_err());
        assert!(ShortRateModel::cir(0.5, 0.04, 0.1, -0.01).is_err());
        assert!(ShortRateModel::vasicek(0.1, 0.05, -0.01, 0.0).is_err());
        assert!(ShortRateModel::vasicek(f64::NAN, 0.05, 0.01, 0.0).is_err());
    }

    #[test]
    fn cir_state_is_truncated() {
        let m = ShortRateModel::cir(0.5, 0.04, 0.1, 0.0).unwrap();
        assert_eq!(m.observed_rate(-0.01), 0.0);
        assert_eq!(m.diffusion(-0.01), 0.0);
    }
}
