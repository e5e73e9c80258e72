use tdbsde::continuous_ratchet::{
    check_feasibility, cir_infeasibility_witness, construct_drawdown_portfolio,
    self_financing_residual, verify_drawdown, DrawdownSpec,
};
use tdbsde::market::{simulate_rate, BrownianPath, Ensemble, Measure, ShortRateModel, TimeGrid};
use tdbsde::stats::median;
use tdbsde::Error;

fn cir() -> ShortRateModel {
    ShortRateModel::cir(0.5, 0.04, 0.1, 0.04).unwrap()
}

#[test]
fn deterministic_rate_portfolio_grows_at_the_short_rate() {
    // with u = 0 and r constant the fund is flat in bond units, K = L and
    // the closed form collapses to X(t) = x e^{rt}
    let m = ShortRateModel::constant(0.05).unwrap();
    let spec = DrawdownSpec::new(0.5, 0.0, 1.0, 0.0).unwrap();
    let mut errors = Vec::new();
    for n in [256, 512, 1024] {
        let g = TimeGrid::new(1.0, n).unwrap();
        let p = simulate_rate(&m, &BrownianPath::zero(g), Measure::Q).unwrap();
        let path = construct_drawdown_portfolio(1.0, &spec, &p).unwrap();
        let err = (0..=n)
            .map(|i| (path.x[i] - (0.05 * g.time(i)).exp()).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    assert!(errors[0] < 1e-3, "{errors:?}");
    assert!(
        errors[1] < 0.6 * errors[0] && errors[2] < 0.6 * errors[1],
        "{errors:?}"
    );
}

#[test]
fn unit_lock_in_satisfies_the_drawdown_constraint() {
    let g = TimeGrid::new(1.0, 256).unwrap();
    let ens = Ensemble::simulate(&cir(), g, 300, 4, Measure::P, false).unwrap();
    for u in [1.0, 0.5, 0.0] {
        let spec = DrawdownSpec::new(1.0, 0.0, 1.0, u).unwrap();
        for p in &ens.paths {
            let path = construct_drawdown_portfolio(1.0, &spec, p).unwrap();
            assert!(path.singular_terminal);
            let rep = verify_drawdown(&path);
            assert_eq!(rep.violations, 0, "u={u} min slack {}", rep.min_slack);
            assert!(rep.skorohod_ok && rep.m_bound_ok && rep.psi_bound_ok && rep.positive);
            assert_eq!(rep.terminal_residual, 0.0);
        }
    }
}

#[test]
fn constraint_slack_matches_direct_running_maximum() {
    let g = TimeGrid::new(1.0, 128).unwrap();
    let ens = Ensemble::simulate(&cir(), g, 50, 5, Measure::P, false).unwrap();
    let spec = DrawdownSpec::new(0.8, 0.02, 1.0, 0.3).unwrap();
    for p in &ens.paths {
        let path = construct_drawdown_portfolio(1.0, &spec, p).unwrap();
        let mut best: f64 = 0.0;
        for i in 0..=128 {
            best = best.max(path.x[i] * (0.02 * (1.0 - g.time(i))).exp());
            assert!(path.x[i] >= 0.8 * best * p.bond[i] * (1.0 - 1e-10));
        }
    }
}

#[test]
fn portfolio_is_linear_in_capital() {
    let g = TimeGrid::new(1.0, 128).unwrap();
    let ens = Ensemble::simulate(&cir(), g, 10, 6, Measure::P, false).unwrap();
    let spec = DrawdownSpec::new(1.0, 0.0, 1.0, 0.5).unwrap();
    for p in &ens.paths {
        let a = construct_drawdown_portfolio(1.0, &spec, p).unwrap();
        let b = construct_drawdown_portfolio(2.0, &spec, p).unwrap();
        for (x, y) in a.x.iter().zip(&b.x) {
            assert_eq!(2.0 * x, *y);
        }
    }
}

#[test]
fn reflection_gap_shrinks_under_refinement() {
    let spec = DrawdownSpec::new(1.0, 0.0, 1.0, 0.5).unwrap();
    let coarse = TimeGrid::new(1.0, 128).unwrap();
    let mut medians = Vec::new();
    let mut sf = Vec::new();
    let noises: Vec<BrownianPath> = (0..200)
        .map(|k| BrownianPath::sample(coarse, 8, k))
        .collect();
    let mut level: Vec<BrownianPath> = noises;
    for _ in 0..3 {
        let mut gaps = Vec::new();
        let mut worst: f64 = 0.0;
        for w in &level {
            let p = simulate_rate(&cir(), w, Measure::P).unwrap();
            let path = construct_drawdown_portfolio(1.0, &spec, &p).unwrap();
            gaps.push(verify_drawdown(&path).reflection_gap);
            worst = worst.max(self_financing_residual(&path, &p));
        }
        medians.push(median(&gaps));
        sf.push(worst);
        level = level.iter().map(|w| w.refined()).collect();
    }
    assert!(medians[0] < 0.02, "{medians:?}");
    assert!(
        medians[1] < medians[0] && medians[2] < medians[1],
        "{medians:?}"
    );
    assert!(sf[1] < 0.75 * sf[0] && sf[2] < 0.75 * sf[1], "{sf:?}");
}

#[test]
fn half_lock_in_misses_the_terminal_condition() {
    let g = TimeGrid::new(1.0, 128).unwrap();
    let ens = Ensemble::simulate(&cir(), g, 200, 9, Measure::P, false).unwrap();
    let spec = DrawdownSpec::new(0.5, 0.0, 1.0, 0.5).unwrap();
    let missed = ens
        .paths
        .iter()
        .filter(|p| {
            let rep = verify_drawdown(&construct_drawdown_portfolio(1.0, &spec, p).unwrap());
            assert_eq!(rep.violations, 0);
            rep.terminal_residual > 0.1
        })
        .count();
    assert!(missed > 100, "{missed}");
}

#[test]
fn lock_in_above_one_is_infeasible() {
    let g = TimeGrid::new(1.0, 16).unwrap();
    let p = simulate_rate(&cir(), &BrownianPath::sample(g, 1, 0), Measure::P).unwrap();
    let spec = DrawdownSpec::new(1.01, 0.0, 1.0, 0.5).unwrap();
    assert!(matches!(
        construct_drawdown_portfolio(1.0, &spec, &p),
        Err(Error::Infeasible(_))
    ));
    let tight = spec.with_vol_cap(1e-6).unwrap();
    let ok = DrawdownSpec {
        gamma: 1.0,
        ..tight
    };
    assert!(matches!(
        construct_drawdown_portfolio(1.0, &ok, &p),
        Err(Error::UnboundedVolatility { .. })
    ));
}

#[test]
fn feasibility_decided_by_bounds() {
    let g = TimeGrid::new(1.0, 64).unwrap();
    let unit = check_feasibility(
        &cir(),
        &DrawdownSpec::new(1.0, 0.0, 1.0, 0.5).unwrap(),
        g,
        100,
        1,
    )
    .unwrap();
    assert!(unit.p_exceed.exact && unit.p_exceed.value == 0.0);
    assert!(unit.p_attain.exact && unit.p_attain.value == 1.0);
    assert!(unit.construction_feasible());
    let over = check_feasibility(
        &cir(),
        &DrawdownSpec::new(1.01, 0.0, 1.0, 0.5).unwrap(),
        g,
        100,
        1,
    )
    .unwrap();
    assert!(over.p_exceed.exact && over.p_exceed.value == 1.0);
    let mild = check_feasibility(
        &cir(),
        &DrawdownSpec::new(0.9, 0.02, 1.0, 0.5).unwrap(),
        g,
        1000,
        1,
    )
    .unwrap();
    assert!(mild.p_exceed.exact && mild.p_exceed.value == 0.0);
}

#[test]
fn vasicek_exceedance_matches_independent_count() {
    let m = ShortRateModel::vasicek(0.1, 0.02, 0.03, 0.0).unwrap();
    let g = TimeGrid::new(1.0, 64).unwrap();
    let spec = DrawdownSpec::new(0.99, 0.0, 1.0, 0.5).unwrap();
    let rep = check_feasibility(&m, &spec, g, 20_000, 2).unwrap();
    assert!(!rep.p_exceed.exact);
    let ens = Ensemble::simulate(&m, g, 20_000, 1002, Measure::P, false).unwrap();
    let hits = ens
        .paths
        .iter()
        .filter(|p| (0..=64).any(|i| 0.99 * p.bond[i] > 1.0 + 1e-12))
        .count();
    let q = hits as f64 / 20_000.0;
    let half = rep.p_exceed.hi - rep.p_exceed.value;
    assert!(rep.p_exceed.value > 0.0);
    assert!(
        (rep.p_exceed.value - q).abs() < 2.0 * half.max(1e-3),
        "{} vs {q}",
        rep.p_exceed.value
    );
}

#[test]
fn cir_witness_found_and_reproducible() {
    let g = TimeGrid::new(1.0, 256).unwrap();
    let rep = cir_infeasibility_witness(&cir(), 0.0, g, 10_000, 42).unwrap();
    let w = rep.witness.expect("witness");
    assert!(rep.min_margin < 0.0);
    // replay the reported path independently
    let p = simulate_rate(
        &cir(),
        &BrownianPath::sample(g, w.seed, w.stream),
        Measure::P,
    )
    .unwrap();
    assert!(p.bond[w.node] > p.bond[0]);
    assert_eq!(p.rate[w.node], w.rate);
    let again = cir_infeasibility_witness(&cir(), 0.0, g, 10_000, 42).unwrap();
    assert_eq!(again, rep);
}

#[test]
fn no_witness_without_noise_or_with_large_guaranteed_rate() {
    let g = TimeGrid::new(1.0, 64).unwrap();
    let flat = ShortRateModel::cir(0.5, 0.04, 0.0, 0.04).unwrap();
    let rep = cir_infeasibility_witness(&flat, 0.1, g, 50, 1).unwrap();
    assert!(rep.witness.is_none() && rep.min_margin > 0.0);
    let rep = cir_infeasibility_witness(&cir(), 1.0, g, 500, 1).unwrap();
    assert!(rep.witness.is_none() && rep.min_margin > 0.0);
    assert_eq!(rep.paths_tried, 500);
}
