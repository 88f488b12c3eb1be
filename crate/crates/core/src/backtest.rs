//! Simulation of the spread strategy and its two baselines over a
//! formation/trading split of one price matrix.

use serde::{Deserialize, Serialize};

use crate::allocator::{
    self, build_problem, FormationReturns, Neutrality, OpenSignal, PairWeight, ProblemDump, MIN_WEIGHT,
};
use crate::error::{Error, Result};
use crate::ledger::{Ledger, RealizedTrade, Side};
use crate::market_data::{log_prices, PriceMatrix};
use crate::signal::{
    build_spreads, formation_stats, step_signals, z_score, Direction, FormationStats, PairState, SignalKind,
};

pub const DEFAULT_TC: f64 = 0.001;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_INITIAL_BALANCE: f64 = 10_000.0;
pub const DEFAULT_DM_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Strategy {
    /// Multivariate spread trading with QP allocation.
    Ott,
    /// Distance method baseline.
    Dm,
    /// Buy and hold the asset.
    Bh,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ott => "OTT",
            Strategy::Dm => "DM",
            Strategy::Bh => "BH",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "OTT" => Ok(Strategy::Ott),
            "DM" => Ok(Strategy::Dm),
            "BH" => Ok(Strategy::Bh),
            _ => Err(Error::validation(
                "strategy",
                format!("expected OTT, DM or BH, got `{s}`"),
            )),
        }
    }
}

/// Time ranges are half-open `[start, end)` unix seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub asset: String,
    pub base: String,
    pub formation: (i64, i64),
    pub trading: (i64, i64),
    pub k_open: f64,
    pub k_close: f64,
    pub lambda: f64,
    pub tc: f64,
    pub initial_balance: f64,
    pub neutrality: Neutrality,
    pub dm_multiplier: f64,
    /// Keep every allocation problem and its solution.
    pub record_allocations: bool,
    /// Keep per-pair `(timestamp, z, event)` rows.
    pub record_signals: bool,
}

impl BacktestConfig {
    pub fn new(base: &str, formation: (i64, i64), trading: (i64, i64), k_open: f64, k_close: f64) -> Self {
        BacktestConfig {
            asset: "ETH".into(),
            base: base.into(),
            formation,
            trading,
            k_open,
            k_close,
            lambda: DEFAULT_LAMBDA,
            tc: DEFAULT_TC,
            initial_balance: DEFAULT_INITIAL_BALANCE,
            neutrality: Neutrality::PriceWeighted,
            dm_multiplier: DEFAULT_DM_MULTIPLIER,
            record_allocations: false,
            record_signals: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTraceRow {
    pub pair: String,
    pub timestamp: i64,
    pub z: f64,
    pub event: Option<SignalKind>,
}

/// Ledger state after one trading interval, handed to observers.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSnapshot<'a> {
    pub timestamp: i64,
    pub balances: Vec<f64>,
    pub committed: Vec<f64>,
    /// Asset held across the interval boundary; the conversions never leave any.
    pub eth_held: f64,
    /// Positions opened during this interval.
    pub opened: &'a [crate::ledger::Position],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub strategy: Strategy,
    pub currencies: Vec<String>,
    pub base: String,
    pub interval: i64,
    pub initial_balances: Vec<f64>,
    pub final_balances: Vec<f64>,
    /// `(timestamp, portfolio value in base)` per trading interval.
    pub equity_curve: Vec<(i64, f64)>,
    pub trades: Vec<RealizedTrade>,
    pub openings: usize,
    pub formation: Vec<Option<FormationStats>>,
    pub pair_labels: Vec<String>,
    pub allocations: Vec<ProblemDump>,
    pub signal_trace: Vec<SignalTraceRow>,
}

struct Split {
    formation: std::ops::Range<usize>,
    trading: std::ops::Range<usize>,
    base: usize,
}

fn split(config: &BacktestConfig, data: &PriceMatrix) -> Result<Split> {
    if config.formation.0 >= config.formation.1 {
        return Err(Error::validation("formation", "start must precede end"));
    }
    if config.trading.0 >= config.trading.1 {
        return Err(Error::validation("trading", "start must precede end"));
    }
    if config.formation.1 > config.trading.0 {
        return Err(Error::validation(
            "trading",
            format!(
                "trading start {} precedes formation end {}; the periods must not overlap",
                config.trading.0, config.formation.1
            ),
        ));
    }
    let base = data
        .index_of(&config.base)
        .ok_or_else(|| Error::validation("base", format!("{} is not among the currencies", config.base)))?;
    let formation = data.range_of(config.formation.0, config.formation.1);
    let trading = data.range_of(config.trading.0, config.trading.1);
    if trading.is_empty() {
        return Err(Error::Config("trading range contains no data".into()));
    }
    Ok(Split {
        formation,
        trading,
        base,
    })
}

fn prices_at(data: &PriceMatrix, t: usize) -> Vec<f64> {
    (0..data.n_currencies()).map(|c| data.value(c, t)).collect()
}

fn initial_ledger(config: &BacktestConfig, data: &PriceMatrix) -> Result<Ledger> {
    Ledger::new(
        data.currencies().to_vec(),
        vec![config.initial_balance; data.n_currencies()],
    )
}

/// Runs the multivariate spread strategy: formation statistics once, then
/// for each trading timestamp close signals first, then one allocation for
/// every pair that signals an open. Positions still open at the final
/// timestamp are closed there.
pub fn run_ott(config: &BacktestConfig, data: &PriceMatrix) -> Result<BacktestResult> {
    run_ott_observed(config, data, |_| {})
}

/// [`run_ott`] with a callback after every trading interval.
pub fn run_ott_observed(
    config: &BacktestConfig,
    data: &PriceMatrix,
    mut observe: impl FnMut(&StepSnapshot<'_>),
) -> Result<BacktestResult> {
    let sp = split(config, data)?;
    if config.lambda < 0.0 {
        return Err(Error::validation("lambda", "must be >= 0"));
    }
    let log_m = log_prices(data)?;
    let spreads = build_spreads(&log_m);
    let formation: Vec<Option<FormationStats>> = spreads
        .iter()
        .map(
            |s| match formation_stats(s, sp.formation.clone(), config.k_open, config.k_close) {
                Ok(st) => Ok(Some(st)),
                Err(Error::DegenerateSpread(name)) => {
                    log::warn!("{name}: degenerate formation spread, pair skipped");
                    Ok(None)
                }
                Err(e) => Err(e),
            },
        )
        .collect::<Result<_>>()?;
    let mean_reversion: Vec<Option<f64>> = formation.iter().map(|f| f.map(|s| s.mean_reversion)).collect();
    let returns = FormationReturns::from_prices(&data.slice(sp.formation.clone())?)?;

    let mut ledger = initial_ledger(config, data)?;
    let initial_balances = ledger.balances();
    let mut states = vec![PairState::default(); spreads.len()];
    let mut trades = Vec::new();
    let mut equity = Vec::with_capacity(sp.trading.len());
    let mut allocations = Vec::new();
    let mut trace = Vec::new();
    let mut openings = 0;
    let last = sp.trading.end - 1;

    for t in sp.trading.clone() {
        let ts = data.timestamps()[t];
        let prices = prices_at(data, t);
        let mut opens = Vec::new();

        for (i, s) in spreads.iter().enumerate() {
            let Some(stats) = &formation[i] else { continue };
            let z = z_score(s.values[t], stats);
            let (next, event) = step_signals(states[i], z, &stats.thresholds, ts);
            if config.record_signals {
                trace.push(SignalTraceRow {
                    pair: s.name(),
                    timestamp: ts,
                    z,
                    event: event.map(|e| e.kind),
                });
            }
            match event.map(|e| e.kind) {
                Some(SignalKind::Close) => {
                    trades.push(ledger.close_position(i, &prices, config.tc, ts, sp.base)?);
                    states[i] = next;
                }
                Some(SignalKind::Open) if t < last => opens.push((i, next, event.map(|e| e.direction))),
                Some(SignalKind::Open) => states[i].last_z = z,
                None => states[i] = next,
            }
        }

        if !opens.is_empty() {
            let signals: Vec<OpenSignal> = opens
                .iter()
                .map(|&(i, _, dir)| OpenSignal {
                    pair_index: i,
                    label: spreads[i].name(),
                    rows: spreads[i].rows,
                    direction: dir.expect("open events carry a direction"),
                })
                .collect();
            let mut problem = build_problem(
                data.currencies(),
                &signals,
                &mean_reversion,
                &returns,
                &ledger.trading_weights(),
                config.tc,
                config.lambda,
                &prices,
            )?;
            problem.neutrality = config.neutrality;
            let allocation = allocator::solve(&problem)?;
            for ((entry, w), (i, next, dir)) in problem.entries.iter().zip(&allocation.weights.pairs).zip(&opens) {
                debug_assert_eq!(entry.pair_index, *i);
                if w.long > MIN_WEIGHT {
                    ledger.open_position(
                        *i,
                        spreads[*i].rows,
                        dir.expect("direction"),
                        *w,
                        &prices,
                        config.tc,
                        ts,
                    )?;
                    states[*i] = *next;
                    openings += 1;
                } else {
                    states[*i].last_z = next.last_z;
                }
            }
            if config.record_allocations {
                allocations.push(ProblemDump {
                    timestamp: ts,
                    problem,
                    solution: allocation,
                });
            }
        }

        if t == last {
            for i in ledger.open_pairs() {
                let mut trade = ledger.close_position(i, &prices, config.tc, ts, sp.base)?;
                trade.forced = true;
                trades.push(trade);
                states[i] = PairState::default();
            }
        }

        let opened: Vec<_> = ledger
            .positions()
            .iter()
            .filter(|p| p.opened_at == ts)
            .cloned()
            .collect();
        observe(&StepSnapshot {
            timestamp: ts,
            balances: ledger.balances(),
            committed: ledger.trading_weights(),
            eth_held: 0.0,
            opened: &opened,
        });
        equity.push((ts, ledger.value_in(sp.base, &prices)));
    }

    Ok(BacktestResult {
        strategy: Strategy::Ott,
        currencies: data.currencies().to_vec(),
        base: config.base.clone(),
        interval: data.interval(),
        initial_balances,
        final_balances: ledger.balances(),
        equity_curve: equity,
        trades,
        openings,
        formation,
        pair_labels: spreads.iter().map(|s| s.name()).collect(),
        allocations,
        signal_trace: trace,
    })
}

/// Distance method baseline: prices normalized to 1 at the formation start,
/// open when the normalized distance leaves its formation mean by more than
/// `dm_multiplier` formation standard deviations, close when it crosses the
/// mean. Each trade spends a fixed notional, the spent currency's initial
/// balance split equally across the pairs it belongs to.
pub fn run_distance_method(config: &BacktestConfig, data: &PriceMatrix) -> Result<BacktestResult> {
    let sp = split(config, data)?;
    if sp.formation.len() < 2 {
        return Err(Error::Config(
            "distance method needs at least 2 formation samples".into(),
        ));
    }
    let k = data.n_currencies();
    let anchor = sp.formation.start;
    let spreads = build_spreads(&log_prices(data)?);

    struct DmPair {
        rows: (usize, usize),
        label: String,
        mean: f64,
        std: f64,
    }
    let distance = |rows: (usize, usize), t: usize| {
        data.value(rows.0, t) / data.value(rows.0, anchor) - data.value(rows.1, t) / data.value(rows.1, anchor)
    };
    let pairs: Vec<Option<DmPair>> = spreads
        .iter()
        .map(|s| {
            let d: Vec<f64> = sp.formation.clone().map(|t| distance(s.rows, t)).collect();
            let n = d.len() as f64;
            let mean = d.iter().sum::<f64>() / n;
            let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if !(std > 1e-13 * (1.0 + mean.abs())) {
                log::warn!("{}: zero formation distance deviation, pair skipped", s.name());
                None
            } else {
                Some(DmPair {
                    rows: s.rows,
                    label: s.name(),
                    mean,
                    std,
                })
            }
        })
        .collect();

    let mut ledger = initial_ledger(config, data)?;
    let initial_balances = ledger.balances();
    let notional: Vec<f64> = initial_balances.iter().map(|b| b / (k - 1) as f64).collect();
    let mut open_sign = vec![0.0f64; pairs.len()];
    let mut trades = Vec::new();
    let mut equity = Vec::with_capacity(sp.trading.len());
    let mut trace = Vec::new();
    let mut openings = 0;
    let last = sp.trading.end - 1;

    for t in sp.trading.clone() {
        let ts = data.timestamps()[t];
        let prices = prices_at(data, t);
        let dev: Vec<Option<f64>> = pairs
            .iter()
            .map(|p| p.as_ref().map(|p| distance(p.rows, t) - p.mean))
            .collect();

        for (i, p) in pairs.iter().enumerate() {
            let (Some(p), Some(d)) = (p, dev[i]) else { continue };
            if open_sign[i] != 0.0 && d * open_sign[i] <= 0.0 {
                trades.push(ledger.close_position(i, &prices, config.tc, ts, sp.base)?);
                open_sign[i] = 0.0;
                if config.record_signals {
                    trace.push(SignalTraceRow {
                        pair: p.label.clone(),
                        timestamp: ts,
                        z: d / p.std,
                        event: Some(SignalKind::Close),
                    });
                }
            }
        }
        if t < last {
            for (i, p) in pairs.iter().enumerate() {
                let (Some(p), Some(d)) = (p, dev[i]) else { continue };
                if open_sign[i] != 0.0 || d.abs() <= config.dm_multiplier * p.std {
                    continue;
                }
                let direction = Direction::from_z(d);
                let (spend_c, _) = direction.legs(p.rows);
                let amount = notional[spend_c].min(ledger.free(spend_c));
                if amount <= 0.0 {
                    continue;
                }
                let long = amount / ledger.capital(spend_c);
                let weights = PairWeight { long, short: -long };
                ledger.open_amount(i, p.rows, direction, amount, weights, &prices, config.tc, ts)?;
                open_sign[i] = d.signum();
                openings += 1;
                if config.record_signals {
                    trace.push(SignalTraceRow {
                        pair: p.label.clone(),
                        timestamp: ts,
                        z: d / p.std,
                        event: Some(SignalKind::Open),
                    });
                }
            }
        } else {
            for i in ledger.open_pairs() {
                let mut trade = ledger.close_position(i, &prices, config.tc, ts, sp.base)?;
                trade.forced = true;
                trades.push(trade);
                open_sign[i] = 0.0;
            }
        }
        equity.push((ts, ledger.value_in(sp.base, &prices)));
    }

    Ok(BacktestResult {
        strategy: Strategy::Dm,
        currencies: data.currencies().to_vec(),
        base: config.base.clone(),
        interval: data.interval(),
        initial_balances,
        final_balances: ledger.balances(),
        equity_curve: equity,
        trades,
        openings,
        formation: Vec::new(),
        pair_labels: spreads.iter().map(|s| s.name()).collect(),
        allocations: Vec::new(),
        signal_trace: trace,
    })
}

/// Buy and hold: every currency balance buys the asset at the first trading
/// timestamp and sells it back into the same currency at the last one.
/// Intermediate values are marked at liquidation value (exit fee included).
pub fn run_buy_hold(config: &BacktestConfig, data: &PriceMatrix) -> Result<BacktestResult> {
    let sp = split(config, data)?;
    let k = data.n_currencies();
    let first = sp.trading.start;
    let last = sp.trading.end - 1;
    let tc = config.tc;
    let initial = vec![config.initial_balance; k];
    let eth: Vec<f64> = (0..k).map(|c| initial[c] * (1.0 - tc) / data.value(c, first)).collect();
    let total_eth: f64 = eth.iter().sum();

    let equity: Vec<(i64, f64)> = sp
        .trading
        .clone()
        .map(|t| (data.timestamps()[t], total_eth * data.value(sp.base, t) * (1.0 - tc)))
        .collect();
    let final_balances: Vec<f64> = (0..k).map(|c| eth[c] * data.value(c, last) * (1.0 - tc)).collect();

    let (open_ts, close_ts) = (data.timestamps()[first], data.timestamps()[last]);
    let trades = (0..k)
        .map(|c| {
            let fx = data.value(sp.base, last) / data.value(c, last);
            RealizedTrade {
                pair: (data.currencies()[c].clone(), config.asset.clone()),
                direction: Direction::SpendFirst,
                side: Side::Long,
                open_ts,
                close_ts,
                holding_hours: (close_ts - open_ts) as f64 / 3600.0,
                spent_ccy: data.currencies()[c].clone(),
                spent_amt: initial[c],
                recv_ccy: config.asset.clone(),
                recv_amt: eth[c],
                eth: eth[c],
                returned_amt: final_balances[c],
                pnl_base: (final_balances[c] - initial[c]) * fx,
                forced: false,
            }
        })
        .collect();

    Ok(BacktestResult {
        strategy: Strategy::Bh,
        currencies: data.currencies().to_vec(),
        base: config.base.clone(),
        interval: data.interval(),
        initial_balances: initial,
        final_balances,
        equity_curve: equity,
        trades,
        openings: k,
        formation: Vec::new(),
        pair_labels: Vec::new(),
        allocations: Vec::new(),
        signal_trace: Vec::new(),
    })
}

pub fn run(strategy: Strategy, config: &BacktestConfig, data: &PriceMatrix) -> Result<BacktestResult> {
    match strategy {
        Strategy::Ott => run_ott(config, data),
        Strategy::Dm => run_distance_method(config, data),
        Strategy::Bh => run_buy_hold(config, data),
    }
}
