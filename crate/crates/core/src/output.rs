//! CSV and JSON writers for run artifacts. All output uses LF line endings
//! and Rust's shortest round-trip float formatting, so identical inputs give
//! identical bytes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analytics::{HeatmapGrid, IndicatorTable};
use crate::backtest::SignalTraceRow;
use crate::error::Result;
use crate::ledger::RealizedTrade;
use crate::screening::CorrCointReport;

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn write_screening<W: Write>(w: W, reports: &[CorrCointReport]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["pair", "mean_corr", "coint_pass_rate", "windows"])?;
    for r in reports {
        out.write_record([
            format!("{}/{}", r.pair.0, r.pair.1),
            r.mean_correlation.to_string(),
            r.coint_pass_rate.to_string(),
            r.window_count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub const TRADE_LOG_HEADER: [&str; 12] = [
    "open_ts",
    "close_ts",
    "pair",
    "direction",
    "spent_ccy",
    "spent_amt",
    "recv_ccy",
    "recv_amt",
    "eth",
    "pnl_base",
    "holding_hours",
    "forced",
];

pub fn write_trades<W: Write>(w: W, trades: &[RealizedTrade]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(TRADE_LOG_HEADER)?;
    for t in trades {
        out.write_record([
            t.open_ts.to_string(),
            t.close_ts.to_string(),
            t.pair_label(),
            t.direction.as_str().to_string(),
            t.spent_ccy.clone(),
            t.spent_amt.to_string(),
            t.recv_ccy.clone(),
            t.recv_amt.to_string(),
            t.eth.to_string(),
            t.pnl_base.to_string(),
            t.holding_hours.to_string(),
            t.forced.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_equity<W: Write>(w: W, curve: &[(i64, f64)]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["timestamp", "value_base"])?;
    for (ts, v) in curve {
        out.write_record([ts.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Failed cells leave `metric` empty.
pub fn write_heatmap<W: Write>(w: W, grid: &HeatmapGrid) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["k_open", "k_close", "metric"])?;
    for c in &grid.cells {
        out.write_record([
            c.k_open.to_string(),
            c.k_close.to_string(),
            c.metric.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_signal_trace<W: Write>(w: W, rows: &[SignalTraceRow]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["pair", "timestamp", "z", "event"])?;
    for r in rows {
        let event = match r.event {
            Some(crate::signal::SignalKind::Open) => "open",
            Some(crate::signal::SignalKind::Close) => "close",
            None => "",
        };
        out.write_record([
            r.pair.clone(),
            r.timestamp.to_string(),
            r.z.to_string(),
            event.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Headline figures of one backtest run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_name: String,
    pub strategy: String,
    pub base: String,
    pub currencies: Vec<String>,
    pub interval: i64,
    pub k_open: f64,
    pub k_close: f64,
    pub lambda: f64,
    pub tc: f64,
    pub initial_value: f64,
    pub final_value: f64,
    pub total_return: f64,
    pub annualized_return: f64,
    pub annualized_sigma: f64,
    /// `None` when volatility is zero.
    pub sharpe: Option<f64>,
    pub risk_free: f64,
    pub openings: usize,
    pub initial_balances: Vec<f64>,
    pub final_balances: Vec<f64>,
    pub indicators: IndicatorTable,
}

pub fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    let text = serde_json_string(value)?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

fn serde_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, serde_json::ser::PrettyFormatter::with_indent(b"  "));
    value
        .serialize(&mut ser)
        .map_err(|e| crate::error::Error::Io(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}
