use tdbsde::asian::{
    bonus_portfolio, martingale_integrand, solve_average, solve_bonus, verify_average_identities,
    SmoothingSpec, SmoothingVariant,
};
use tdbsde::market::{simulate_rate, BrownianPath, Ensemble, Measure, ShortRateModel, TimeGrid};
use tdbsde::obpi::BenchmarkSpec;
use tdbsde::stats::McEstimate;
use tdbsde::Error;

fn vasicek() -> ShortRateModel {
    ShortRateModel::vasicek(0.1, 0.05, 0.01, 0.05).unwrap()
}

fn average(beta: f64, gamma: f64) -> SmoothingSpec {
    SmoothingSpec::new(beta, gamma, 0.5, SmoothingVariant::Average).unwrap()
}

fn bonus(beta: f64, gamma: f64) -> SmoothingSpec {
    SmoothingSpec::new(beta, gamma, 0.5, SmoothingVariant::Bonus).unwrap()
}

fn one_path(n: usize, stream: u64) -> tdbsde::market::MarketPaths {
    let g = TimeGrid::new(1.0, n).unwrap();
    simulate_rate(&vasicek(), &BrownianPath::sample(g, 3, stream), Measure::Q).unwrap()
}

/// Mean absolute residuals on coupled grids `n, 2n, 4n`.
fn refinement(
    n: usize,
    paths: u64,
    pick: impl Fn(&tdbsde::asian::AverageReport) -> f64,
) -> Vec<f64> {
    let g = TimeGrid::new(1.0, n).unwrap();
    let mut level: Vec<BrownianPath> = (0..paths).map(|k| BrownianPath::sample(g, 17, k)).collect();
    let mut out = Vec::new();
    for _ in 0..3 {
        let mut acc = 0.0;
        for w in &level {
            let p = simulate_rate(&vasicek(), w, Measure::Q).unwrap();
            let sol = solve_average(1.0, &average(0.6, 0.4), &p).unwrap();
            acc += pick(&verify_average_identities(&sol)).abs();
        }
        out.push(acc / paths as f64);
        level = level.iter().map(|w| w.refined()).collect();
    }
    out
}

#[test]
fn zero_initial_value_gives_zero_solution() {
    let sol = solve_average(0.0, &average(0.6, 0.4), &one_path(64, 0)).unwrap();
    assert!(sol.y.iter().chain(&sol.z).all(|v| *v == 0.0));
    let rep = verify_average_identities(&sol);
    assert!(rep.positive);
    assert_eq!(rep.fubini_residual, 0.0);
}

#[test]
fn full_average_participation_keeps_value_constant() {
    let sol = solve_average(2.0, &average(0.0, 1.0), &one_path(64, 1)).unwrap();
    assert!(sol.y.iter().all(|y| *y == 2.0));
    assert!(sol.z.iter().all(|z| *z == 0.0));
    let rep = verify_average_identities(&sol);
    assert!(rep.terminal_residual.abs() < 1e-14);
}

#[test]
fn broken_condition_refuses_positive_value() {
    let err = solve_average(1.0, &average(0.6, 0.5), &one_path(16, 2)).unwrap_err();
    assert!(matches!(err, Error::ZeroSolutionOnly { .. }));
    assert!(err.to_string().contains("βE[S̃]+γ=1"), "{err}");
}

#[test]
fn bonus_initial_values() {
    let p = one_path(64, 3);
    assert_eq!(solve_bonus(&bonus(0.5, 0.5), &p).unwrap().y0, 1.0);
    let plain = solve_bonus(&bonus(0.7, 0.0), &p).unwrap();
    assert_eq!(plain.y0, 0.7);
    assert_eq!(plain.z, plain.integrand);
    let err = solve_bonus(&bonus(0.5, 1.0), &p).unwrap_err();
    assert!(matches!(err, Error::NoSolution(_)));
    assert!(err.to_string().contains("no solution"));
}

#[test]
fn integrand_trivial_cases() {
    let p = one_path(64, 4);
    let cash = martingale_integrand(&BenchmarkSpec::new(0.0).unwrap(), &p, 1.0).unwrap();
    assert!(cash.integrand.iter().all(|m| *m == 0.0));
    assert!(cash.reconstruction_residual(&p.dw_q).abs() < 1e-14);
    let spec = BenchmarkSpec::new(0.7).unwrap();
    let one = martingale_integrand(&spec, &p, 1.0).unwrap();
    let two = martingale_integrand(&spec, &p, 2.0).unwrap();
    for (a, b) in one.integrand.iter().zip(&two.integrand) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn bond_benchmark_reconstruction_converges() {
    let g = TimeGrid::new(1.0, 64).unwrap();
    let spec = BenchmarkSpec::new(1.0).unwrap();
    let mut level: Vec<BrownianPath> = (0..300).map(|k| BrownianPath::sample(g, 5, k)).collect();
    let mut errs = Vec::new();
    for _ in 0..3 {
        let e = level
            .iter()
            .map(|w| {
                let p = simulate_rate(&vasicek(), w, Measure::Q).unwrap();
                martingale_integrand(&spec, &p, 1.0)
                    .unwrap()
                    .reconstruction_residual(&p.dw_q)
                    .abs()
            })
            .fold(0.0, f64::max);
        errs.push(e);
        level = level.iter().map(|w| w.refined()).collect();
    }
    for w in errs.windows(2) {
        assert!((w[0] / w[1]).log2() >= 0.5, "{errs:?}");
    }
}

#[test]
fn terminal_identity_converges() {
    let e = refinement(512, 200, |r| r.terminal_residual);
    assert!(e[2] < 1e-3, "{e:?}");
    for w in e.windows(2) {
        assert!((w[0] / w[1]).log2() >= 0.5, "{e:?}");
    }
}

#[test]
fn fubini_identity_converges() {
    let e = refinement(512, 200, |r| r.fubini_residual);
    assert!(e[2] < 1e-3, "{e:?}");
    for w in e.windows(2) {
        assert!((w[0] / w[1]).log2() >= 0.5, "{e:?}");
    }
}

#[test]
fn integration_by_parts_converges() {
    let e = refinement(512, 200, |r| r.parts_residual);
    for w in e.windows(2) {
        assert!((w[0] / w[1]).log2() >= 0.5, "{e:?}");
    }
}

#[test]
fn value_is_a_positive_martingale() {
    let g = TimeGrid::new(1.0, 128).unwrap();
    let ens = Ensemble::simulate(&vasicek(), g, 4000, 6, Measure::Q, true).unwrap();
    let mut xs = Vec::new();
    for p in &ens.paths {
        let sol = solve_average(1.0, &average(0.6, 0.4), p).unwrap();
        assert!(sol.y.iter().all(|y| *y > 0.0));
        assert!(verify_average_identities(&sol).positive);
        xs.push(sol.y[128] - 1.0);
    }
    let est = McEstimate::from_antithetic(&xs);
    assert!(est.z_score(0.0) < 4.0, "{} ± {}", est.mean, est.std_err);
}

#[test]
fn solution_is_linear_in_initial_value() {
    let p = one_path(256, 7);
    let a = solve_average(1.0, &average(0.6, 0.4), &p).unwrap();
    let b = solve_average(4.0, &average(0.6, 0.4), &p).unwrap();
    for (x, y) in a.y.iter().zip(&b.y) {
        assert_eq!(4.0 * x, *y);
    }
}

#[test]
fn benchmark_plus_bonus_decomposition() {
    let p = one_path(1024, 8);
    let sol = solve_bonus(&bonus(0.5, 0.3), &p).unwrap();
    let g = bonus_portfolio(&sol);
    assert!((g[0] - 0.5 * 0.3 / 0.7).abs() < 1e-15);
    let worst = (0..=1024)
        .map(|i| (sol.y[i] - 0.5 * sol.s_tilde[i] - g[i]).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst}");
}
