use ott_core::allocator::{solve, AllocationEntry, AllocationProblem, Neutrality};
use ott_core::analytics::annualize;
use ott_core::backtest::{run_ott, BacktestConfig};
use ott_core::ledger::replay;
use ott_core::market_data::{align, to_series, CandleSeries};
use ott_core::screening::pearson;
use ott_core::signal::{step_signals, PairState, SignalKind, Thresholds};
use ott_core::synthetic::{generate, SyntheticSpec};
use proptest::prelude::*;

fn series_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (5usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0..100.0f64, n),
            prop::collection::vec(-100.0..100.0f64, n),
        )
    })
}

fn single_pair(ep: [f64; 2], var: [f64; 2], rho: f64, prices: [f64; 2], lambda: f64) -> AllocationProblem {
    let c = rho * (var[0] * var[1]).sqrt();
    AllocationProblem {
        currencies: vec!["CAD".into(), "USD".into()],
        entries: vec![AllocationEntry {
            pair_index: 0,
            label: "CAD/USD".into(),
            long: 0,
            short: 1,
            ep,
            cov: [[var[0], c], [c, var[1]]],
        }],
        tw: vec![0.0, 0.0],
        tc: 0.001,
        lambda,
        prices: prices.to_vec(),
        neutrality: Neutrality::PriceWeighted,
    }
}

proptest! {
    #[test]
    fn pearson_symmetric_and_affine_invariant((x, y) in series_strategy(), a in 0.1..10.0f64, b in -50.0..50.0f64) {
        let (Ok(r), Ok(r2)) = (pearson(&x, &y), pearson(&y, &x)) else { return Ok(()) };
        prop_assert!((r - r2).abs() < 1e-12);
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson(&xs, &y).unwrap() - r).abs() < 1e-9);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((pearson(&neg, &y).unwrap() + r).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn align_is_idempotent(gaps in prop::collection::vec(0usize..3, 20..40), limit in 0usize..4) {
        let mk = |offset: usize| {
            let mut t = 0i64;
            let pts: Vec<(i64, f64)> = gaps.iter().enumerate().map(|(i, g)| {
                t += 60 * (1 + ((*g + offset) % 3) as i64 / 2);
                (t, 100.0 + i as f64)
            }).collect();
            CandleSeries::from_closes(60, pts)
        };
        let input = vec![("CAD".to_string(), mk(0)), ("USD".to_string(), mk(1))];
        if let Ok(m) = align(&input, limit) {
            let again = align(&to_series(&m), limit).unwrap();
            prop_assert_eq!(again, m);
        }
    }

    #[test]
    fn signal_events_alternate(z in prop::collection::vec(-10.0..10.0f64, 1..200), k_open in 1.0..5.0f64, frac in 0.0..0.99f64) {
        let th = Thresholds::new(k_open, k_open * frac, 0.01).unwrap();
        let mut state = PairState::default();
        let mut last = SignalKind::Close;
        for (t, v) in z.iter().enumerate() {
            let (next, ev) = step_signals(state, *v, &th, t as i64);
            if let Some(e) = ev {
                prop_assert_ne!(e.kind, last);
                last = e.kind;
            }
            state = next;
        }
    }

    #[test]
    fn allocator_deterministic_and_price_scale_invariant(
        ep in prop::array::uniform2(-3e-3..3e-3f64),
        var in prop::array::uniform2(1e-6..1e-3f64),
        rho in -0.9..0.9f64,
        prices in prop::array::uniform2(500.0..5000.0f64),
        scale in 0.01..100.0f64,
        lambda in 0.0..3.0f64,
    ) {
        let p = single_pair(ep, var, rho, prices, lambda);
        let a = solve(&p).unwrap();
        let b = solve(&p).unwrap();
        prop_assert_eq!(&a.weights, &b.weights);
        let scaled = single_pair(ep, var, rho, [prices[0] * scale, prices[1] * scale], lambda);
        let c = solve(&scaled).unwrap();
        prop_assert!((a.weights.pairs[0].long - c.weights.pairs[0].long).abs() < 1e-9);
    }

    #[test]
    fn larger_lambda_never_increases_weight(
        ep in prop::array::uniform2(-3e-3..3e-3f64),
        var in prop::array::uniform2(1e-6..1e-3f64),
        rho in -0.9..0.9f64,
        l1 in 0.0..3.0f64,
        dl in 0.0..3.0f64,
    ) {
        let lo = solve(&single_pair(ep, var, rho, [2000.0, 2100.0], l1)).unwrap();
        let hi = solve(&single_pair(ep, var, rho, [2000.0, 2100.0], l1 + dl)).unwrap();
        prop_assert!(hi.weights.pairs[0].long <= lo.weights.pairs[0].long + 1e-9);
    }

    #[test]
    fn constant_growth_annualizes_exactly(g in -0.001..0.001f64, n in 10usize..500, interval in prop::sample::select(vec![60i64, 300, 3600])) {
        let curve: Vec<(i64, f64)> = (0..n).map(|i| (i as i64 * interval, 100.0 * (1.0 + g).powi(i as i32))).collect();
        let (r, sigma) = annualize(&curve, interval).unwrap();
        let expected = (1.0 + g).powf(31_536_000.0 / interval as f64) - 1.0;
        prop_assert!((r - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        prop_assert!(sigma < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trade_log_replays_to_final_balances(seed in 0u64..1000) {
        let n = 3_000;
        let spec = SyntheticSpec::four_currencies(seed, n);
        let data = generate(&spec).unwrap();
        let t = |i: usize| spec.start + i as i64 * spec.interval;
        let cfg = BacktestConfig::new("USD", (t(0), t(800)), (t(800), t(n)), 2.0, 0.5);
        let r = run_ott(&cfg, &data).unwrap();
        let replayed = replay(&r.currencies, &r.initial_balances, &r.trades);
        for (a, b) in replayed.iter().zip(&r.final_balances) {
            prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
        }
        prop_assert_eq!(r.equity_curve.len(), n - 800);
    }
}
