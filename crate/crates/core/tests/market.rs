use statrs::distribution::{ContinuousCDF, Normal};
use tdbsde::market::{
    annuity_factor, check_assumptions, simulate_rate, BrownianPath, Ensemble, Measure,
    ShortRateModel, TimeGrid,
};
use tdbsde::stats::McEstimate;

/// Textbook CIR zero-coupon price, written out independently of the crate.
fn cir_bond_oracle(kappa: f64, theta: f64, sigma: f64, r: f64, tau: f64) -> f64 {
    let h = (kappa * kappa + 2.0 * sigma * sigma).sqrt();
    let e = (h * tau).exp();
    let denom = 2.0 * h + (kappa + h) * (e - 1.0);
    let a = (2.0 * h * ((kappa + h) * tau / 2.0).exp() / denom)
        .powf(2.0 * kappa * theta / (sigma * sigma));
    let b = 2.0 * (e - 1.0) / denom;
    a * (-b * r).exp()
}

#[test]
fn cir_initial_bond_matches_closed_form() {
    let m = ShortRateModel::cir(0.5, 0.04, 0.1, 0.04).unwrap();
    let g = TimeGrid::new(1.0, 256).unwrap();
    let p = simulate_rate(&m, &BrownianPath::sample(g, 42, 0), Measure::Q).unwrap();
    let oracle = cir_bond_oracle(0.5, 0.04, 0.1, 0.04, 1.0);
    assert!(
        (p.bond[0] - oracle).abs() < 1e-14,
        "{} vs {}",
        p.bond[0],
        oracle
    );
    for i in [17, 100, 255] {
        let tau = 1.0 - g.time(i);
        let o = cir_bond_oracle(0.5, 0.04, 0.1, p.rate[i], tau);
        assert!((p.bond[i] - o).abs() < 1e-13);
    }
}

#[test]
fn vasicek_discounted_terminal_bond_prices_at_d0() {
    let m = ShortRateModel::vasicek(0.1, 0.05, 0.01, 0.05).unwrap();
    let g = TimeGrid::new(1.0, 50).unwrap();
    let ens = Ensemble::simulate(&m, g, 100_000, 2024, Measure::Q, false).unwrap();
    let xs: Vec<f64> = ens
        .paths
        .iter()
        .map(|p| p.discount[50] * p.bond[50])
        .collect();
    let est = McEstimate::from_samples(&xs);
    let d0 = ens.initial_bond().unwrap();
    assert!(
        est.z_score(d0) < 3.0,
        "mean {} d0 {} se {}",
        est.mean,
        d0,
        est.std_err
    );
}

#[test]
fn vasicek_negative_rates_match_gaussian_marginal() {
    // r(t) ~ N(b + (r0-b)e^{-at}, σ²(1-e^{-2at})/(2a)) under P with zero premium
    let (a, b, s, r0) = (0.1, 0.05, 0.05, 0.01);
    let m = ShortRateModel::vasicek(a, b, s, r0).unwrap();
    let g = TimeGrid::new(10.0, 40).unwrap();
    let paths = 4000;
    let rep = check_assumptions(&m, g, paths, 5).unwrap();
    let mut expected = 0.0;
    for i in 0..=40 {
        let t = g.time(i);
        if t == 0.0 {
            continue;
        }
        let mean = b + (r0 - b) * (-a * t).exp();
        let sd = s * ((1.0 - (-2.0 * a * t).exp()) / (2.0 * a)).sqrt();
        expected += Normal::new(mean, sd).unwrap().cdf(0.0);
    }
    expected /= 41.0;
    assert!(rep.negative_rate_fraction > 0.0);
    assert!(!rep.holds());
    // node fractions are correlated along a path; 10% relative slack
    assert!(
        (rep.negative_rate_fraction - expected).abs() < 0.1 * expected,
        "{} vs {}",
        rep.negative_rate_fraction,
        expected
    );
}

#[test]
fn cir_annuity_matches_nested_monte_carlo() {
    // E^Q[∫_0^H e^{-∫_0^s r} ds] by simulation against the affine quadrature
    let m = ShortRateModel::cir(0.5, 0.04, 0.1, 0.04).unwrap();
    let h = 30.0;
    let quad = annuity_factor(&m, 0.04, h).unwrap().value;
    let g = TimeGrid::new(h, 600).unwrap();
    let ens = Ensemble::simulate(&m, g, 4000, 77, Measure::Q, true).unwrap();
    let dt = g.dt();
    let xs: Vec<f64> = ens
        .paths
        .iter()
        .map(|p| {
            (0..600)
                .map(|i| 0.5 * (p.discount[i] + p.discount[i + 1]) * dt)
                .sum()
        })
        .collect();
    let est = McEstimate::from_antithetic(&xs);
    // Euler/trapezoid bias at dt = 0.05 is far below the MC error here
    assert!(
        est.z_score(quad) < 3.0,
        "mc {} ± {} vs {}",
        est.mean,
        est.std_err,
        quad
    );
}

#[test]
fn vasicek_refinement_changes_bond_by_quadrature_only() {
    let m = ShortRateModel::vasicek(0.1, 0.05, 0.01, 0.05).unwrap();
    let g = TimeGrid::new(1.0, 32).unwrap();
    let w = BrownianPath::sample(g, 3, 0);
    let fine_w = w.refined();
    let coarse = simulate_rate(&m, &w, Measure::Q).unwrap();
    let fine = simulate_rate(&m, &fine_w, Measure::Q).unwrap();
    // exact Vasicek steps: shared nodes differ only through the bridge
    // scaling of the exact-step noise, O(dt) in the rate
    let mut worst: f64 = 0.0;
    for i in 0..=32 {
        worst = worst.max((coarse.bond[i] - fine.bond[2 * i]).abs());
    }
    assert!(worst < 1e-3, "{worst}");
}
