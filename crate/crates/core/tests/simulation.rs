use dynprice_core::demand::{likelihood_features, ItemId, ItemState};
use dynprice_core::simulator::{
    run_experiment, run_trial, MarketConfig, PassiveConfig, PolicyKind, PolicySpec, TsPolicyConfig,
};
use dynprice_core::solver::LinearConstraint;
use dynprice_core::thompson::{init_posterior, posterior_update, CovarianceMode, TsConfig};

fn small_market(seed: u64) -> MarketConfig {
    MarketConfig {
        basket_size: 12,
        horizon: 60,
        seed,
        ..Default::default()
    }
}

#[test]
fn prices_respect_every_constraint() {
    let mut cfg = small_market(9);
    cfg.max_rel_change = Some(0.15);
    cfg.basket_linear = Some(LinearConstraint {
        weights: vec![1.0; 12],
        bound: 150.0,
    });
    for spec in [
        PolicySpec::Passive(PassiveConfig::default()),
        PolicySpec::Ts(TsPolicyConfig::default()),
    ] {
        let r = run_trial(&cfg, 0, &spec).unwrap();
        let mut prev = vec![cfg.initial_price; 12];
        for rec in &r.records {
            let total: f64 = rec.prices.iter().sum();
            assert!(total >= 150.0 - 1e-6, "day {}: basket total {total}", rec.day);
            for (p, q) in rec.prices.iter().zip(&prev) {
                assert!(*p >= 10.0 - 1e-9 && *p <= 20.0 + 1e-9);
                let lo = (q * 0.85).max(10.0);
                let hi = (q * 1.15).min(20.0);
                assert!(
                    *p >= lo - 1e-6 && *p <= hi + 1e-6,
                    "day {}: {p} outside [{lo}, {hi}]",
                    rec.day
                );
            }
            prev = rec.prices.clone();
        }
    }
}

#[test]
fn thompson_samples_are_negative_and_recorded() {
    let r = run_trial(&small_market(4), 1, &PolicySpec::Ts(TsPolicyConfig::default())).unwrap();
    assert_eq!(r.policy, PolicyKind::Ts);
    for rec in &r.records {
        let g = rec.sampled_gamma.as_ref().unwrap();
        assert_eq!(g.len(), 12);
        assert!(g.iter().all(|x| *x < 0.0));
        assert!(rec.demands.iter().all(|d| *d >= 0.0));
        let total: f64 = (0..12).map(|i| rec.item_revenue(i)).sum();
        assert!((total - rec.basket_revenue).abs() <= 1e-9 * (1.0 + total));
    }
}

#[test]
fn experiment_pairs_policies_on_shared_markets() {
    let cfg = small_market(2);
    let specs = [
        PolicySpec::Passive(PassiveConfig::default()),
        PolicySpec::Ts(TsPolicyConfig::default()),
    ];
    let results = run_experiment(&cfg, 3, &specs, 3).unwrap();
    assert_eq!(results.len(), 6);
    for trial in 0..3 {
        let of = |k| results.iter().find(|r| r.trial_id == trial && r.policy == k).unwrap();
        let (a, b) = (of(PolicyKind::Passive), of(PolicyKind::Ts));
        // day-1 forecasts come from the shared market draw
        assert_eq!(a.records[0].forecasts, b.records[0].forecasts);
    }
}

/// Sequential updates in full mode with a ridge term equal the batch
/// posterior whose precision accumulates `ridge * I` once per update.
#[test]
fn ridge_updates_match_batch_precision() {
    use nalgebra::{DMatrix, DVector};
    let b = 3;
    let mut cfg = TsConfig::new(vec![-1.0, -2.0, -1.5], 0.5, 2.0);
    cfg.mode = CovarianceMode::Full;
    cfg.ridge = 0.05;
    let mut post = init_posterior(&cfg, b).unwrap();
    let basket: Vec<ItemState> = (0..b)
        .map(|i| ItemState::new(ItemId(i as u64), 12.0 + i as f64, 2.0 + i as f64).unwrap())
        .collect();
    let days = [
        [11.0, 14.0, 13.0],
        [12.5, 12.0, 15.0],
        [10.0, 13.5, 14.0],
        [13.0, 15.0, 12.0],
    ];
    let revenues = [70.0, 95.0, 80.0, 88.0];
    // P_t mu_t = P_{t-1} mu_{t-1} + r_t theta_t / s2, so the batch mean solves
    // P_T mu = P_0 mu_0 + sum_t r_t theta_t / s2
    let mut prec = DMatrix::<f64>::identity(b, b) / 0.5;
    let mut rhs = DVector::from_vec(vec![-1.0, -2.0, -1.5]) / 0.5;
    for (prices, rev) in days.iter().zip(revenues) {
        let f = likelihood_features(&basket, prices).unwrap();
        post = posterior_update(&post, &f, rev).unwrap();
        let t = DVector::from_vec(f.theta.clone());
        prec += &t * t.transpose() / 2.0 + DMatrix::identity(b, b) * 0.05;
        rhs += &t * ((rev - f.baseline_revenue) / 2.0);
    }
    let cov = prec.try_inverse().unwrap();
    let mean = &cov * &rhs;
    let got = post.covariance_matrix();
    for i in 0..b {
        assert!(
            (post.mean()[i] - mean[i]).abs() < 1e-10,
            "{} vs {}",
            post.mean()[i],
            mean[i]
        );
        for j in 0..b {
            assert!((got[(i, j)] - cov[(i, j)]).abs() < 1e-12);
        }
    }
}
