//! Acceptance gate. Runs as a plain binary (`harness = false`) so that every
//! criterion prints one PASS/FAIL line; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ott_core::allocator::{brute_force_solve, solve, AllocationEntry, AllocationProblem, Neutrality};
use ott_core::analytics::pnl_base_currency;
use ott_core::backtest::{run_distance_method, run_ott, run_ott_observed, BacktestConfig};
use ott_core::ledger::Ledger;
use ott_core::output::{write_equity, write_trades};
use ott_core::screening::{engle_granger, Significance};
use ott_core::signal::{formation_stats, Direction, PairSpread};
use ott_core::synthetic::{generate, SyntheticSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn pnl_statement() -> Outcome {
    let start = Instant::now();
    let codes = ["USD", "CAD", "GBP", "EUR"];
    let bal = |v: [f64; 4]| codes.iter().zip(v).map(|(c, v)| (c.to_string(), v)).collect::<Vec<_>>();
    let rates = |v: [f64; 4]| {
        codes
            .iter()
            .zip(v)
            .map(|(c, v)| (c.to_string(), v))
            .collect::<BTreeMap<_, _>>()
    };
    let s = pnl_base_currency(
        &bal([10_000.0; 4]),
        &bal([12_000.0, 8_000.0, 9_000.0, 13_000.0]),
        &rates([1.0, 0.789606, 1.318623, 1.125842]),
        &rates([1.0, 5783.40 / 8000.0, 10_035.00 / 9000.0, 12_746.22 / 13_000.0]),
        "USD",
    );
    let elapsed = start.elapsed();
    match s {
        Ok(s) => {
            // The published start total is the sum of unrounded rows; the
            // printed rows sum to 42,340.71, one cent under.
            let ok = (s.total_start - 42_340.72).abs() <= 0.01 + 1e-6
                && (s.total_end - 40_564.62).abs() <= 0.01 + 1e-6
                && (s.pct_change * 100.0 + 4.19).abs() <= 0.01
                && elapsed < Duration::from_millis(1);
            outcome(
                ok,
                format!(
                    "start {:.2}, end {:.2}, change {:.2}%, {:?}",
                    s.total_start,
                    s.total_end,
                    s.pct_change * 100.0,
                    elapsed
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn threshold_arithmetic() -> Outcome {
    // A ±a square wave with 2m samples has sample std a·sqrt(2m / (2m − 1)).
    let m = 50;
    let target = 0.024017;
    let a = target / (2.0 * m as f64 / (2.0 * m as f64 - 1.0)).sqrt();
    let values: Vec<f64> = (0..2 * m).map(|i| if i % 2 == 0 { a } else { -a }).collect();
    let spread = PairSpread {
        pair: ("CAD".into(), "USD".into()),
        rows: (0, 1),
        values,
    };
    match formation_stats(&spread, 0..2 * m, 7.0, 6.0) {
        Ok(s) => {
            let (o, c) = (s.thresholds.open_level, s.thresholds.close_level);
            outcome(
                (o - 0.168122).abs() < 1e-4 && (c - 0.144102).abs() < 1e-4,
                format!("std {:.6}: open {o:.6}, close {c:.6}", s.std),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn synthetic_config(n: usize, formation: usize) -> BacktestConfig {
    let spec = SyntheticSpec::four_currencies(0, n);
    let t = |i: usize| spec.start + i as i64 * spec.interval;
    let mut cfg = BacktestConfig::new("USD", (t(0), t(formation)), (t(formation), t(n)), 2.0, 0.5);
    cfg.lambda = 1.0;
    cfg
}

fn market_neutrality() -> Outcome {
    let n = 12_000;
    let data = match generate(&SyntheticSpec::four_currencies(11, n)) {
        Ok(d) => d,
        Err(e) => return outcome(false, e.to_string()),
    };
    let cfg = synthetic_config(n, 2_000);
    let tc = cfg.tc;
    let mut worst = 0.0f64;
    let mut held = 0.0f64;
    let mut openings = 0;
    let result = run_ott_observed(&cfg, &data, |snap| {
        held = held.max(snap.eth_held.abs());
        for p in snap.opened {
            let (spend_c, spent) = p.spent;
            let (recv_c, received) = p.received;
            let t = data.index_of_timestamp(p.opened_at).expect("open timestamp on grid");
            let bought = spent * (1.0 - tc) / data.value(spend_c, t);
            let sold = received / ((1.0 - tc) * data.value(recv_c, t));
            worst = worst.max((bought - sold).abs() / bought);
            openings += 1;
        }
    });
    match result {
        Ok(r) => outcome(
            r.openings >= 200 && openings == r.openings && worst <= 1e-9 && held == 0.0,
            format!(
                "{} trading intervals, {openings} openings, worst residual {worst:.2e}, max asset held {held}",
                r.equity_curve.len()
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn no_leverage() -> Outcome {
    let mut checked = 0usize;
    let (mut worst_tw, mut lowest_tw) = (0.0f64, 0.0f64);
    let mut min_balance = f64::INFINITY;
    for seed in 0..4 {
        let n = 6_000;
        let data = generate(&SyntheticSpec::four_currencies(100 + seed, n)).expect("synthetic data");
        for lambda in [0.0, 1.0] {
            let mut cfg = synthetic_config(n, 1_500);
            cfg.lambda = lambda;
            let r = run_ott_observed(&cfg, &data, |snap| {
                checked += 1;
                for (&tw, &b) in snap.committed.iter().zip(&snap.balances) {
                    worst_tw = worst_tw.max(tw);
                    lowest_tw = lowest_tw.min(tw);
                    min_balance = min_balance.min(b);
                }
            });
            if let Err(e) = r {
                return outcome(false, e.to_string());
            }
        }
        // The distance method shares the ledger; check its end state too.
        let cfg = synthetic_config(n, 1_500);
        match run_distance_method(&cfg, &data) {
            Ok(r) => min_balance = r.final_balances.iter().copied().fold(min_balance, f64::min),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    outcome(
        worst_tw <= 1.0 + 1e-9 && lowest_tw >= 0.0 && min_balance >= 0.0,
        format!("{checked} intervals, committed in [{lowest_tw:.6}, {worst_tw:.6}], min balance {min_balance:.2}"),
    )
}

fn random_problem(rng: &mut ChaCha8Rng) -> AllocationProblem {
    let k = rng.random_range(2..=4);
    let currencies: Vec<String> = ["CAD", "EUR", "GBP", "USD"][..k]
        .iter()
        .map(|c| c.to_string())
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))).collect();
    let n_pairs = rng.random_range(1..=pairs.len().min(3));
    let mut entries = Vec::new();
    for idx in 0..n_pairs {
        let pick = rng.random_range(0..pairs.len());
        let (i, j) = pairs.remove(pick);
        let (long, short) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
        let vl: f64 = rng.random_range(1e-6..4e-4);
        let vs: f64 = rng.random_range(1e-6..4e-4);
        let rho: f64 = rng.random_range(-0.9..0.99);
        let cov_ls = rho * (vl * vs).sqrt();
        entries.push(AllocationEntry {
            pair_index: idx,
            label: format!("{}/{}", currencies[i], currencies[j]),
            long,
            short,
            ep: [rng.random_range(-2e-3..4e-3), rng.random_range(-2e-3..4e-3)],
            cov: [[vl, cov_ls], [cov_ls, vs]],
        });
    }
    let lambda = [0.0, 0.5, 1.0, 2.0][rng.random_range(0..4)];
    AllocationProblem {
        tw: (0..k)
            .map(|_| {
                if rng.random_bool(0.5) {
                    0.0
                } else {
                    rng.random_range(0.0..0.8)
                }
            })
            .collect(),
        prices: (0..k).map(|_| rng.random_range(1500.0..3000.0)).collect(),
        currencies,
        entries,
        tc: 0.001,
        lambda,
        neutrality: Neutrality::PriceWeighted,
    }
}

fn optimizer_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_gap = f64::NEG_INFINITY;
    for i in 0..100 {
        let p = random_problem(&mut rng);
        let qp = match solve(&p) {
            Ok(a) => p.objective(&a.weights),
            Err(e) => return outcome(false, format!("problem {i}: {e}")),
        };
        let grid = match brute_force_solve(&p, 0.01) {
            Ok(w) => p.objective(&w),
            Err(e) => return outcome(false, format!("problem {i}: {e}")),
        };
        worst_gap = worst_gap.max(grid - qp);
    }
    let elapsed = start.elapsed();
    outcome(
        worst_gap <= 1e-3 && elapsed < Duration::from_secs(10),
        format!("100 problems, worst oracle excess {worst_gap:.2e}, {elapsed:.2?}"),
    )
}

fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut level = 0.0;
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            level += e;
            level
        })
        .collect()
}

fn cointegration_monte_carlo() -> Outcome {
    let start = Instant::now();
    let n = 500;
    let mut coint_pass = 0;
    let mut indep_pass = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_walk(&mut rng, n);
        let mut u = 0.0;
        let y: Vec<f64> = x
            .iter()
            .map(|xi| {
                let e: f64 = StandardNormal.sample(&mut rng);
                u = 0.5 * u + e;
                1.0 + 0.8 * xi + u
            })
            .collect();
        if engle_granger(&x, &y, Significance::FivePercent)
            .map(|r| r.cointegrated)
            .unwrap_or(false)
        {
            coint_pass += 1;
        }
        let a = random_walk(&mut rng, n);
        let b = random_walk(&mut rng, n);
        if engle_granger(&a, &b, Significance::FivePercent)
            .map(|r| r.cointegrated)
            .unwrap_or(false)
        {
            indep_pass += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        coint_pass >= 180 && indep_pass <= 20 && elapsed < Duration::from_secs(30),
        format!("cointegrated {coint_pass}/200, independent {indep_pass}/200, {elapsed:.2?}"),
    )
}

fn round_trip_conservation() -> Outcome {
    let codes = vec!["CAD".to_string(), "USD".to_string()];
    let prices = [2500.0, 2000.0];
    let pair = (0, 1);
    let weights = ott_core::allocator::PairWeight { long: 0.5, short: -0.4 };
    let run = |tc: f64| -> ott_core::Result<(Vec<f64>, f64, f64)> {
        let mut l = Ledger::new(codes.clone(), vec![10_000.0, 10_000.0])?;
        l.open_position(0, pair, Direction::SpendSecond, weights, &prices, tc, 0)?;
        let t = l.close_position(0, &prices, tc, 300, 1)?;
        Ok((l.balances(), t.spent_amt, t.returned_amt))
    };
    match (run(0.0), run(0.001)) {
        (Ok((b0, _, _)), Ok((b1, spent, returned))) => {
            let exact = b0 == vec![10_000.0, 10_000.0];
            let loss = spent - returned;
            let expected = spent * (1.0 - 0.999f64.powi(4));
            let rel = (loss - expected).abs() / expected;
            let usd_ok = (b1[1] - (10_000.0 - expected)).abs() <= 1e-9 * 10_000.0 && b1[0] == 10_000.0;
            outcome(
                exact && rel <= 1e-9 && usd_ok,
                format!("tc=0 balances {b0:?}; tc=0.001 loss {loss:.9} vs {expected:.9} (rel {rel:.1e})"),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e.to_string()),
    }
}

fn determinism() -> Outcome {
    let n = 4_000;
    let data = generate(&SyntheticSpec::four_currencies(11, n)).expect("synthetic data");
    let cfg = synthetic_config(n, 1_000);
    let render = || -> ott_core::Result<(Vec<u8>, Vec<u8>, usize)> {
        let r = run_ott(&cfg, &data)?;
        let (mut trades, mut equity) = (Vec::new(), Vec::new());
        write_trades(&mut trades, &r.trades)?;
        write_equity(&mut equity, &r.equity_curve)?;
        Ok((trades, equity, r.trades.len()))
    };
    match (render(), render()) {
        (Ok(a), Ok(b)) => outcome(
            a == b && a.2 > 0,
            format!(
                "{} round trips; trade log {} bytes, equity curve {} bytes, identical",
                a.2,
                a.0.len(),
                a.1.len()
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, e.to_string()),
    }
}

fn desk_scale() -> Outcome {
    let year = 105_120;
    let formation = 8_640;
    let n = year + formation;
    let data = generate(&SyntheticSpec::four_currencies(21, n)).expect("synthetic data");
    let cfg = synthetic_config(n, formation);
    let start = Instant::now();
    let r = run_ott(&cfg, &data);
    let elapsed = start.elapsed();
    match r {
        Ok(r) => outcome(
            elapsed < Duration::from_secs(60),
            format!(
                "{} intervals, 6 spreads, {} round trips, {elapsed:.2?}",
                r.equity_curve.len(),
                r.trades.len()
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("base-currency P&L statement", pnl_statement),
        ("threshold arithmetic", threshold_arithmetic),
        ("market neutrality", market_neutrality),
        ("no leverage", no_leverage),
        ("optimizer vs brute-force oracle", optimizer_oracle),
        ("cointegration Monte-Carlo", cointegration_monte_carlo),
        ("round-trip conservation", round_trip_conservation),
        ("determinism", determinism),
        ("desk-scale performance", desk_scale),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!(
        "NOTE headline returns: non-gating; they need the original exchange candles and tuned thresholds, which are not bundled"
    );
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
