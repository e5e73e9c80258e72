use tdbsde::asian::{SmoothingSpec, SmoothingVariant};
use tdbsde::continuous_ratchet::DrawdownSpec;
use tdbsde::discrete_ratchet::RatchetSpec;
use tdbsde::harness::{
    run_convergence_study, run_hedge_report, run_negative_controls, ConvergenceMetric,
    EnsembleConfig, PolicyKind, StrategySpec,
};
use tdbsde::market::{Measure, ShortRateModel, TimeGrid};
use tdbsde::Error;

fn cir() -> ShortRateModel {
    ShortRateModel::cir(0.5, 0.04, 0.1, 0.04).unwrap()
}

fn asian() -> StrategySpec {
    StrategySpec::Asian {
        spec: SmoothingSpec::new(0.6, 0.4, 0.5, SmoothingVariant::Average).unwrap(),
        initial: 1.0,
    }
}

#[test]
fn fixed_return_report_is_exact_and_deterministic() {
    let g = TimeGrid::new(1.0, 64).unwrap();
    let d0 = cir().bond_price(1.0, 0.04);
    let strategy = StrategySpec::DiscreteRatchet {
        spec: RatchetSpec::new(1.0, -d0.ln(), vec![0.0, 1.0]).unwrap(),
        policy: PolicyKind::Bond,
        initial: 1.0,
    };
    let cfg = EnsembleConfig::new(300, 3, Measure::Q);
    let rep = run_hedge_report(&cir(), &strategy, g, &cfg, None).unwrap();
    assert!(rep.passed);
    assert!(rep.residual.max < 1e-12, "{:?}", rep.residual);
    assert_eq!(rep.paths, 300);
    assert_eq!(rep.drift_z.len(), 64);
    assert!(rep.self_financing_max < 1e-12);
    assert_eq!(
        rep,
        run_hedge_report(&cir(), &strategy, g, &cfg, None).unwrap()
    );
}

#[test]
fn surplus_report_has_no_drift() {
    let g = TimeGrid::new(1.0, 32).unwrap();
    let strategy = StrategySpec::DiscreteRatchet {
        spec: RatchetSpec::equally_spaced(1.0, 0.0, 1.0, 4).unwrap(),
        policy: PolicyKind::Bond,
        initial: 1.0,
    };
    let mut cfg = EnsembleConfig::new(4000, 5, Measure::Q);
    cfg.antithetic = true;
    let rep = run_hedge_report(&cir(), &strategy, g, &cfg, None).unwrap();
    assert!(rep.passed && rep.violations == 0);
    // 32 nodes at 4.5 SE would flag by chance well under 1% of the time
    assert!(rep.max_abs_drift_z < 4.5, "{}", rep.max_abs_drift_z);
}

#[test]
fn asian_report_meets_tolerance_on_fine_grid() {
    let g = TimeGrid::new(1.0, 1 << 12).unwrap();
    let m = ShortRateModel::vasicek(0.1, 0.05, 0.01, 0.05).unwrap();
    let rep = run_hedge_report(
        &m,
        &asian(),
        g,
        &EnsembleConfig::new(100, 7, Measure::Q),
        None,
    )
    .unwrap();
    assert!(rep.passed, "{}", rep.metric_value);
    assert!(rep.metric_value < 1e-3);
}

#[test]
fn tight_tolerance_fails_the_report() {
    let g = TimeGrid::new(1.0, 64).unwrap();
    let rep = run_hedge_report(
        &cir(),
        &asian(),
        g,
        &EnsembleConfig::new(50, 7, Measure::Q),
        Some(1e-12),
    )
    .unwrap();
    assert!(!rep.passed);
}

#[test]
fn asian_convergence_order() {
    let m = ShortRateModel::vasicek(0.1, 0.05, 0.01, 0.05).unwrap();
    let base = TimeGrid::new(1.0, 256).unwrap();
    let t = run_convergence_study(&m, &asian(), None, base, 3, 100, 1, Measure::Q).unwrap();
    assert_eq!(t.metric, ConvergenceMetric::FubiniResidual);
    assert_eq!(
        t.rows.iter().map(|r| r.steps).collect::<Vec<_>>(),
        vec![256, 512, 1024]
    );
    assert!(t.rows[0].order.is_none());
    assert!(t.min_order().unwrap() >= 0.5, "{:?}", t.rows);
    assert!(t.to_csv().lines().count() == 4);
}

#[test]
fn drawdown_gap_shrinks_on_most_paths() {
    let strategy = StrategySpec::ContinuousRatchet {
        spec: DrawdownSpec::new(1.0, 0.0, 1.0, 0.5).unwrap(),
        initial: 1.0,
    };
    let base = TimeGrid::new(1.0, 128).unwrap();
    let t = run_convergence_study(&cir(), &strategy, None, base, 3, 200, 2, Measure::P).unwrap();
    assert!(
        t.rows.windows(2).all(|w| w[1].residual < w[0].residual),
        "{:?}",
        t.rows
    );
    assert!(t.monotone_fraction >= 0.9, "{}", t.monotone_fraction);
}

#[test]
fn deterministic_fixed_return_rows_are_exact() {
    let m = ShortRateModel::constant(0.05).unwrap();
    let strategy = StrategySpec::DiscreteRatchet {
        spec: RatchetSpec::equally_spaced(1.0, 0.05, 1.0, 4).unwrap(),
        policy: PolicyKind::Bond,
        initial: 1.0,
    };
    let base = TimeGrid::new(1.0, 16).unwrap();
    let t = run_convergence_study(&m, &strategy, None, base, 3, 3, 1, Measure::Q).unwrap();
    assert!(t.rows.iter().all(|r| r.max < 1e-13), "{:?}", t.rows);
}

#[test]
fn study_guards() {
    let base = TimeGrid::new(1.0, 1 << 18).unwrap();
    assert!(matches!(
        run_convergence_study(&cir(), &asian(), None, base, 4, 1, 1, Measure::Q),
        Err(Error::BudgetExceeded { .. })
    ));
    let odd = TimeGrid::new(1.0, 100).unwrap();
    assert!(run_convergence_study(&cir(), &asian(), None, odd, 2, 1, 1, Measure::Q).is_err());
    let base = TimeGrid::new(1.0, 16).unwrap();
    assert!(run_convergence_study(
        &cir(),
        &asian(),
        Some(ConvergenceMetric::DrawdownGap),
        base,
        2,
        1,
        1,
        Measure::Q
    )
    .is_err());
}

#[test]
fn every_negative_control_is_detected() {
    let controls = run_negative_controls(11).unwrap();
    let modules: Vec<&str> = controls.iter().map(|c| c.module.as_str()).collect();
    for m in [
        "market",
        "obpi",
        "discrete_ratchet",
        "continuous_ratchet",
        "asian",
        "withdrawal",
    ] {
        assert!(modules.contains(&m), "{m}");
    }
    for c in &controls {
        assert!(
            c.detected,
            "{} / {}: {} <= {}",
            c.module, c.name, c.metric, c.threshold
        );
    }
}
