use std::path::PathBuf;

use market_core::analytics::{
    exp_stats, fit_exponential, ks_critical_1pct, ks_statistic, sample_values, threshold_report, CostModel,
    ValueModel,
};
use market_core::report::{dispute_routing, listing_values_usd};
use market_core::{load_scenario, run};

#[test]
fn exponential_samples_pass_ks() {
    let model = ValueModel::Exponential { lambda: 1.0 / 60.0 };
    let xs = sample_values(&model, 50_000, 5).unwrap();
    let d = ks_statistic(&xs, &model).unwrap();
    assert!(d < ks_critical_1pct(xs.len()), "D = {d}");
    // A wrong rate is rejected.
    let wrong = ValueModel::Exponential { lambda: 1.0 / 50.0 };
    assert!(ks_statistic(&xs, &wrong).unwrap() > ks_critical_1pct(xs.len()));
}

#[test]
fn pareto_median_and_mean() {
    let m = ValueModel::Pareto { alpha: 3.0, xmin: 10.0 };
    assert!((m.median() - 10.0 * 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
    assert!((m.mean().unwrap() - 15.0).abs() < 1e-12);
    assert_eq!(ValueModel::Pareto { alpha: 1.0, xmin: 1.0 }.mean(), None);
    let xs = sample_values(&m, 200_000, 9).unwrap();
    let below = xs.iter().filter(|&&x| x <= m.median()).count() as f64 / xs.len() as f64;
    assert!((below - 0.5).abs() < 0.005);
}

#[test]
fn fifty_dollar_threshold_under_a_sixty_dollar_mean() {
    let lambda = 1.0 / 60.0;
    let s = exp_stats(lambda).unwrap();
    assert!((s.mean - 60.0).abs() < 1e-9);
    assert!((s.median - 60.0 * std::f64::consts::LN_2).abs() < 1e-9);
    let xs = sample_values(&ValueModel::Exponential { lambda }, 200_000, 3).unwrap();
    let r = threshold_report(&xs, 50.0, &CostModel::default()).unwrap();
    let expected = 1.0 - (-50.0 * lambda).exp();
    assert!((r.fraction_below - expected).abs() < 0.005, "{} vs {expected}", r.fraction_below);
    let direct = xs.iter().filter(|&&x| x <= 50.0).count();
    assert_eq!(r.count_below, direct);
}

#[test]
fn trace_driven_routing_reconciles_with_the_model() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/large/thresholds.json");
    let out = run(&load_scenario(&path).unwrap()).unwrap();
    let values = listing_values_usd(&out.trace);
    assert_eq!(values.len(), 10_000);
    let fitted = fit_exponential(&values).unwrap();
    assert!((fitted * 60.0 - 1.0).abs() < 0.05, "fitted rate {fitted}");

    let routing = dispute_routing(&out.trace);
    let threshold = routing.threshold_usd_cents;
    let below = routing.values_usd_cents.iter().filter(|&&v| v <= threshold).count();
    assert_eq!(routing.internal, below);
    assert_eq!(routing.external, routing.values_usd_cents.len() - below);
    assert!(routing.internal > 0 && routing.external > 0);

    let r = threshold_report(&values, threshold as f64 / 100.0, &CostModel::default()).unwrap();
    let direct = values.iter().filter(|&&v| v <= threshold as f64 / 100.0).count();
    assert_eq!(r.count_below, direct);
    let expected = 1.0 - (-(threshold as f64 / 100.0) / 60.0).exp();
    assert!((r.fraction_below - expected).abs() < 0.02, "{} vs {expected}", r.fraction_below);
}
