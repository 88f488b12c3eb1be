//! Browser bindings. Every export takes and returns a JSON string so the page
//! needs no generated type glue; errors come back as `{"error": "..."}`.

use ott_core::allocator::{solve, AllocationProblem};
use ott_core::analytics::{annualize, grid_search, half_open_range, HeatmapGrid};
use ott_core::backtest::{run, BacktestConfig, Strategy};
use ott_core::synthetic::{generate, SyntheticSpec};
use ott_core::PriceMatrix;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn default_seed() -> u64 {
    11
}
fn default_n() -> usize {
    4000
}
fn default_split() -> f64 {
    0.5
}
fn default_k_open() -> f64 {
    2.0
}
fn default_k_close() -> f64 {
    0.5
}
fn default_lambda() -> f64 {
    1.0
}
fn default_tc() -> f64 {
    0.001
}

/// A synthetic four-currency market and the thresholds to trade it with.
#[derive(Debug, Clone, Deserialize)]
pub struct MarketParams {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Fraction of the sample used for formation.
    #[serde(default = "default_split")]
    pub formation_fraction: f64,
    #[serde(default = "default_k_open")]
    pub k_open: f64,
    #[serde(default = "default_k_close")]
    pub k_close: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_tc")]
    pub tc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub timestamps: Vec<i64>,
    pub equity: Vec<f64>,
    pub total_return: f64,
    pub annualized_return: f64,
    pub round_trips: usize,
    pub openings: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    pub base: String,
    pub currencies: Vec<String>,
    pub trading_start: i64,
    pub runs: Vec<StrategyRun>,
}

fn market(p: &MarketParams) -> Result<(PriceMatrix, BacktestConfig), String> {
    if p.n < 100 || p.n > 200_000 {
        return Err("n must lie in [100, 200000]".into());
    }
    if !(p.formation_fraction > 0.0 && p.formation_fraction < 1.0) {
        return Err("formation_fraction must lie strictly between 0 and 1".into());
    }
    let spec = SyntheticSpec::four_currencies(p.seed, p.n);
    let data = generate(&spec).map_err(|e| e.to_string())?;
    let ts = data.timestamps();
    let cut = ((p.n as f64 * p.formation_fraction) as usize).clamp(1, p.n - 1);
    let end = ts[p.n - 1] + spec.interval;
    let mut cfg = BacktestConfig::new("USD", (ts[0], ts[cut]), (ts[cut], end), p.k_open, p.k_close);
    cfg.lambda = p.lambda;
    cfg.tc = p.tc;
    Ok((data, cfg))
}

/// Runs OTT, DM and BH on the same synthetic market.
pub fn simulate_value(p: &MarketParams) -> Result<Simulation, String> {
    let (data, cfg) = market(p)?;
    let mut runs = Vec::new();
    for strategy in [Strategy::Ott, Strategy::Dm, Strategy::Bh] {
        let r = run(strategy, &cfg, &data).map_err(|e| format!("{}: {e}", strategy.as_str()))?;
        let (annualized_return, _) = annualize(&r.equity_curve, r.interval).map_err(|e| e.to_string())?;
        let first = r.equity_curve.first().map(|e| e.1).unwrap_or(1.0);
        let last = r.equity_curve.last().map(|e| e.1).unwrap_or(first);
        runs.push(StrategyRun {
            strategy,
            timestamps: r.equity_curve.iter().map(|e| e.0).collect(),
            equity: r.equity_curve.iter().map(|e| e.1).collect(),
            total_return: last / first - 1.0,
            annualized_return,
            round_trips: r.trades.len(),
            openings: r.openings,
        });
    }
    Ok(Simulation {
        base: cfg.base.clone(),
        currencies: data.currencies().to_vec(),
        trading_start: cfg.trading.0,
        runs,
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct HeatmapParams {
    #[serde(flatten)]
    pub market: MarketParams,
    pub k_open: [f64; 2],
    pub k_close: [f64; 2],
    pub step: f64,
}

/// Threshold grid on the formation part of the synthetic market.
pub fn heatmap_value(p: &HeatmapParams) -> Result<HeatmapGrid, String> {
    let (data, cfg) = market(&p.market)?;
    let opens = half_open_range(p.k_open[0], p.k_open[1], p.step).map_err(|e| e.to_string())?;
    let closes = half_open_range(p.k_close[0], p.k_close[1], p.step).map_err(|e| e.to_string())?;
    if opens.len() * closes.len() > 400 {
        return Err("grid too large for the page (max 400 cells)".into());
    }
    grid_search(&cfg, &data, &opens, &closes, default_split()).map_err(|e| e.to_string())
}

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    let value = match result {
        Ok(v) => serde_json::to_value(v).map_err(|e| e.to_string()),
        Err(e) => Err(e),
    };
    match value {
        Ok(v) => v.to_string(),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

fn parse<'a, T: Deserialize<'a>>(json: &'a str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| format!("bad parameters: {e}"))
}

#[wasm_bindgen]
pub fn simulate(params: &str) -> String {
    respond(parse(params).and_then(|p| simulate_value(&p)))
}

/// Solves one allocation problem given in the solver's own JSON form.
#[wasm_bindgen]
pub fn solve_allocation(problem: &str) -> String {
    respond(parse::<AllocationProblem>(problem).and_then(|p| solve(&p).map_err(|e| e.to_string())))
}

#[wasm_bindgen]
pub fn threshold_heatmap(params: &str) -> String {
    respond(parse(params).and_then(|p| heatmap_value(&p)))
}
