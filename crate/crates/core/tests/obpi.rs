use tdbsde::market::{Ensemble, Measure, ShortRateModel, TimeGrid};
use tdbsde::obpi::{
    discounted_benchmark, price_call, simulate_benchmark, solve_participation, BenchmarkSpec,
};
use tdbsde::stats::McEstimate;

fn cir() -> ShortRateModel {
    ShortRateModel::cir(0.5, 0.04, 0.1, 0.04).unwrap()
}

#[test]
fn bank_account_and_bond_benchmarks_are_exact() {
    let g = TimeGrid::new(1.0, 64).unwrap();
    let e = Ensemble::simulate(&cir(), g, 4, 9, Measure::Q, false).unwrap();
    for p in &e.paths {
        let bank = discounted_benchmark(&BenchmarkSpec::new(0.0).unwrap(), p).unwrap();
        assert!(bank.iter().all(|s| (s - 1.0).abs() < 1e-14));
        let bond = simulate_benchmark(&BenchmarkSpec::new(1.0).unwrap(), p).unwrap();
        for (s, d) in bond.iter().zip(&p.bond) {
            assert!((s - d / p.bond[0]).abs() < 1e-13);
        }
    }
}

#[test]
fn discounted_benchmark_is_a_martingale() {
    let g = TimeGrid::new(1.0, 64).unwrap();
    let e = Ensemble::simulate(&cir(), g, 100_000, 11, Measure::Q, true).unwrap();
    let spec = BenchmarkSpec::new(0.6).unwrap();
    let xs: Vec<f64> = e
        .paths
        .iter()
        .map(|p| *discounted_benchmark(&spec, p).unwrap().last().unwrap())
        .collect();
    let est = McEstimate::from_antithetic(&xs);
    assert!(est.z_score(1.0) < 3.0, "{} ± {}", est.mean, est.std_err);
}

#[test]
fn zero_strike_call_is_the_forward() {
    let g = TimeGrid::new(1.0, 64).unwrap();
    let e = Ensemble::simulate(&cir(), g, 20_000, 12, Measure::Q, true).unwrap();
    let c = price_call(&BenchmarkSpec::new(0.6).unwrap(), 0.0, 1.0, &e).unwrap();
    assert!(c.z_score(1.0) < 3.0, "{} ± {}", c.mean, c.std_err);
}

#[test]
fn call_price_matches_plain_euler_monte_carlo() {
    // independent oracle: multiplicative Euler benchmark, other seed, no antithetics
    let g = TimeGrid::new(1.0, 128).unwrap();
    let w = 0.6;
    let main = Ensemble::simulate(&cir(), g, 40_000, 13, Measure::Q, true).unwrap();
    let c = price_call(&BenchmarkSpec::new(w).unwrap(), 1.0, 1.2, &main).unwrap();
    let other = Ensemble::simulate(&cir(), g, 80_000, 1013, Measure::Q, false).unwrap();
    let dt = g.dt();
    let xs: Vec<f64> = other
        .paths
        .iter()
        .map(|p| {
            let mut s = 1.0;
            for i in 0..128 {
                let dd = (p.bond[i + 1] - p.bond[i]) / p.bond[i];
                s *= 1.0 + w * dd + (1.0 - w) * 0.5 * (p.rate[i] + p.rate[i + 1]) * dt;
            }
            p.discount[128] * (1.2 * s - 1.0).max(0.0)
        })
        .collect();
    let o = McEstimate::from_samples(&xs);
    let se = (c.std_err.powi(2) + o.std_err.powi(2)).sqrt();
    assert!(
        (c.mean - o.mean).abs() < 3.0 * se,
        "{} vs {} (se {se})",
        c.mean,
        o.mean
    );
}

#[test]
fn degenerate_bond_benchmark_gives_unit_participation() {
    let m = ShortRateModel::constant(0.05).unwrap();
    let g = TimeGrid::new(1.0, 50).unwrap();
    let e = Ensemble::simulate(&m, g, 8, 0, Measure::Q, true).unwrap();
    let sol = solve_participation(&BenchmarkSpec::new(1.0).unwrap(), &e).unwrap();
    assert!((sol.lambda - 1.0).abs() < 1e-8, "{}", sol.lambda);
    assert!(sol.fee.abs() < 1e-7);
}

#[test]
fn participation_scales_out_of_capital() {
    let g = TimeGrid::new(5.0, 60).unwrap();
    let e = Ensemble::simulate(&cir(), g, 4000, 3, Measure::Q, true).unwrap();
    let sol = solve_participation(&BenchmarkSpec::new(0.6).unwrap(), &e).unwrap();
    assert!(sol.residual.abs() < 1e-8);
    let one = sol.for_capital(1.0);
    let hundred = sol.for_capital(100.0);
    assert_eq!(one.fund_amount, sol.lambda);
    assert_eq!(hundred.fund_amount, 100.0 * sol.lambda);
    assert!(sol.parity_residual.abs() < 4.0 * sol.parity_std_err + 1e-15);
    assert_eq!(sol.fee, -sol.lambda.ln() / 5.0);
}

#[test]
fn participation_falls_with_rate_volatility() {
    // long bond-heavy benchmark so the protective put is worth something
    let g = TimeGrid::new(10.0, 80).unwrap();
    let spec = BenchmarkSpec::new(0.9).unwrap();
    let lambdas: Vec<f64> = [0.01, 0.02, 0.03]
        .iter()
        .map(|&vol| {
            let m = ShortRateModel::vasicek(0.1, 0.05, vol, 0.05).unwrap();
            let e = Ensemble::simulate(&m, g, 4000, 21, Measure::Q, true).unwrap();
            let sol = solve_participation(&spec, &e).unwrap();
            assert!(sol.lambda > 0.0 && sol.lambda < 1.0);
            sol.lambda
        })
        .collect();
    assert!(
        lambdas[0] > lambdas[1] && lambdas[1] > lambdas[2],
        "{lambdas:?}"
    );
}
