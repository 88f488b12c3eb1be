//! Base-currency P&L statements, return and risk figures, trade indicators
//! and the threshold grid search.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::{run_ott, BacktestConfig};
use crate::error::{Error, Result};
use crate::ledger::{RealizedTrade, Side};
use crate::market_data::PriceMatrix;

pub const SECONDS_PER_YEAR: f64 = 31_536_000.0;
pub const DEFAULT_RISK_FREE: f64 = 0.04;
pub const DEFAULT_TUNE_SPLIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnLRow {
    pub currency: String,
    pub start_amount: f64,
    pub start_rate: f64,
    pub start_value: f64,
    pub end_amount: f64,
    pub end_rate: f64,
    pub end_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnLStatement {
    pub base: String,
    pub rows: Vec<PnLRow>,
    pub total_start: f64,
    pub total_end: f64,
    /// Fractional change, `-0.0419` for a 4.19% loss.
    pub pct_change: f64,
}

/// Values start and end balances in `base`. Rates are units of base per
/// unit of currency. Totals are summed in currency-code order so they do not
/// depend on the order of the inputs.
pub fn pnl_base_currency(
    start_balances: &[(String, f64)],
    end_balances: &[(String, f64)],
    fx_start: &BTreeMap<String, f64>,
    fx_end: &BTreeMap<String, f64>,
    base: &str,
) -> Result<PnLStatement> {
    let rate = |fx: &BTreeMap<String, f64>, c: &str, when: &str| -> Result<f64> {
        if c == base {
            return Ok(fx.get(c).copied().unwrap_or(1.0));
        }
        fx.get(c)
            .copied()
            .filter(|r| r.is_finite() && *r > 0.0)
            .ok_or_else(|| Error::Config(format!("missing {when} rate for {c} in {base}")))
    };
    let ends: BTreeMap<&str, f64> = end_balances.iter().map(|(c, v)| (c.as_str(), *v)).collect();
    let mut starts: Vec<&(String, f64)> = start_balances.iter().collect();
    starts.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rows = Vec::with_capacity(starts.len());
    for (c, start_amount) in starts {
        let end_amount = *ends
            .get(c.as_str())
            .ok_or_else(|| Error::Config(format!("no end balance for {c}")))?;
        let (start_rate, end_rate) = (rate(fx_start, c, "start")?, rate(fx_end, c, "end")?);
        rows.push(PnLRow {
            currency: c.clone(),
            start_amount: *start_amount,
            start_rate,
            start_value: start_amount * start_rate,
            end_amount,
            end_rate,
            end_value: end_amount * end_rate,
        });
    }
    if ends.len() != rows.len() {
        return Err(Error::Config("start and end balances list different currencies".into()));
    }
    let total_start: f64 = rows.iter().map(|r| r.start_value).sum();
    let total_end: f64 = rows.iter().map(|r| r.end_value).sum();
    if total_start <= 0.0 {
        return Err(Error::Config("starting portfolio has no value".into()));
    }
    Ok(PnLStatement {
        base: base.to_string(),
        rows,
        total_start,
        total_end,
        pct_change: total_end / total_start - 1.0,
    })
}

/// Returns `(annualized return, annualized sigma)` of an equity curve.
pub fn annualize(curve: &[(i64, f64)], interval_seconds: i64) -> Result<(f64, f64)> {
    if curve.len() < 2 {
        return Err(Error::Data("equity curve needs at least 2 points".into()));
    }
    if interval_seconds <= 0 {
        return Err(Error::validation("interval", "must be positive"));
    }
    if let Some(&(ts, v)) = curve.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain {
            currency: "equity".into(),
            timestamp: ts,
            value: v,
        });
    }
    let elapsed = (curve[curve.len() - 1].0 - curve[0].0) as f64;
    if elapsed <= 0.0 {
        return Err(Error::Data("equity curve spans no time".into()));
    }
    let growth = curve[curve.len() - 1].1 / curve[0].1;
    let ret = growth.powf(SECONDS_PER_YEAR / elapsed) - 1.0;

    let logs: Vec<f64> = curve.windows(2).map(|w| (w[1].1 / w[0].1).ln()).collect();
    let sigma = if logs.len() < 2 {
        0.0
    } else {
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() * (SECONDS_PER_YEAR / interval_seconds as f64).sqrt()
    };
    Ok((ret, sigma))
}

pub fn sharpe(annualized_return: f64, annualized_sigma: f64, risk_free: f64) -> Result<f64> {
    if !(annualized_sigma > 0.0) {
        return Err(Error::ZeroVariance("Sharpe ratio undefined for zero volatility".into()));
    }
    Ok((annualized_return - risk_free) / annualized_sigma)
}

/// A ratio that may be unbounded; serializes `+inf` as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio(pub f64);

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Ratio(v)),
            Raw::Text(t) if t == "inf" => Ok(Ratio(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad ratio `{t}`"))),
        }
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Trade statistics. Each round trip counts as two trades (open and
/// close); percentages and averages are taken over round trips. A trade
/// wins when its base-currency P&L is strictly positive; everything else
/// counts as losing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorTable {
    pub number_of_trades: usize,
    pub pct_winning: f64,
    pub pct_losing: f64,
    pub pct_long_wins: f64,
    pub pct_short_wins: f64,
    pub win_loss_ratio: Ratio,
    pub average_loss: f64,
    pub average_win: f64,
    pub largest_loss: f64,
    pub largest_win: f64,
    pub avg_holding_hrs: f64,
}

pub fn indicators(trades: &[RealizedTrade]) -> IndicatorTable {
    let n = trades.len();
    if n == 0 {
        return IndicatorTable {
            number_of_trades: 0,
            pct_winning: 0.0,
            pct_losing: 0.0,
            pct_long_wins: 0.0,
            pct_short_wins: 0.0,
            win_loss_ratio: Ratio(0.0),
            average_loss: 0.0,
            average_win: 0.0,
            largest_loss: 0.0,
            largest_win: 0.0,
            avg_holding_hrs: 0.0,
        };
    }
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let wins: Vec<f64> = trades.iter().map(|t| t.pnl_base).filter(|p| *p > 0.0).collect();
    let losses: Vec<f64> = trades.iter().map(|t| t.pnl_base).filter(|p| *p <= 0.0).collect();
    let side_pct = |side: Side| {
        let of_side: Vec<_> = trades.iter().filter(|t| t.side == side).collect();
        pct(of_side.iter().filter(|t| t.pnl_base > 0.0).count(), of_side.len())
    };
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    IndicatorTable {
        number_of_trades: 2 * n,
        pct_winning: pct(wins.len(), n),
        pct_losing: pct(losses.len(), n),
        pct_long_wins: side_pct(Side::Long),
        pct_short_wins: side_pct(Side::Short),
        win_loss_ratio: Ratio(if losses.is_empty() {
            f64::INFINITY
        } else {
            wins.len() as f64 / losses.len() as f64
        }),
        average_loss: mean(&losses),
        average_win: mean(&wins),
        largest_loss: losses.iter().copied().fold(0.0, f64::min),
        largest_win: wins.iter().copied().fold(0.0, f64::max),
        avg_holding_hrs: trades.iter().map(|t| t.holding_hours).sum::<f64>() / n as f64,
    }
}

/// Values `start, start + step, …` strictly below `end`.
pub fn half_open_range(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() {
        return Err(Error::validation(
            "tune_step",
            "range bounds must be finite and the step positive",
        ));
    }
    let count = ((end - start) / step - 1e-9).ceil().max(0.0) as usize;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub k_open: f64,
    pub k_close: f64,
    /// Annualized base-currency return; `None` when the backtest failed.
    pub metric: Option<f64>,
    pub trades: usize,
    pub error: Option<String>,
}

/// Only admissible cells (`k_close < k_open`) are present, ordered by
/// `k_open` then `k_close`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub k_open: Vec<f64>,
    pub k_close: Vec<f64>,
    pub cells: Vec<HeatmapCell>,
}

impl HeatmapGrid {
    /// Best cell by metric; ties keep the earliest cell.
    pub fn best(&self) -> Option<&HeatmapCell> {
        self.cells
            .iter()
            .filter(|c| c.metric.is_some())
            .fold(None, |best: Option<&HeatmapCell>, c| match best {
                Some(b) if b.metric >= c.metric => Some(b),
                _ => Some(c),
            })
    }

    pub fn cell(&self, k_open: f64, k_close: f64) -> Option<&HeatmapCell> {
        self.cells.iter().find(|c| c.k_open == k_open && c.k_close == k_close)
    }
}

/// Splits the formation range of `config` into an inner formation part
/// (fraction `split`) and an inner trading part.
pub fn tuning_config(config: &BacktestConfig, data: &PriceMatrix, split: f64) -> Result<BacktestConfig> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::validation("tune_split", "must lie strictly between 0 and 1"));
    }
    let range = data.range_of(config.formation.0, config.formation.1);
    if range.len() < 4 {
        return Err(Error::Config("formation range too short to tune on".into()));
    }
    let cut = range.start + ((range.len() as f64 * split).round() as usize).clamp(1, range.len() - 1);
    let ts = data.timestamps();
    let mut inner = config.clone();
    inner.formation = (ts[range.start], ts[cut]);
    inner.trading = (ts[cut], ts[range.end - 1] + data.interval());
    Ok(inner)
}

/// Runs one backtest per admissible threshold pair on formation data only.
/// Cells run in parallel on the current rayon pool; results are ordered by
/// cell index regardless of scheduling.
pub fn grid_search(
    config: &BacktestConfig,
    data: &PriceMatrix,
    k_open: &[f64],
    k_close: &[f64],
    split: f64,
) -> Result<HeatmapGrid> {
    if k_open.is_empty() || k_close.is_empty() {
        return Err(Error::validation("tune", "threshold ranges must be non-empty"));
    }
    let inner = tuning_config(config, data, split)?;
    let admissible: Vec<(f64, f64)> = k_open
        .iter()
        .flat_map(|&o| {
            k_close
                .iter()
                .filter(move |&&c| c < o && c >= 0.0)
                .map(move |&c| (o, c))
        })
        .collect();
    if admissible.is_empty() {
        return Err(Error::validation(
            "tune",
            "no threshold pair satisfies k_close < k_open",
        ));
    }
    let cells = admissible
        .par_iter()
        .map(|&(o, c)| {
            let mut cfg = inner.clone();
            cfg.k_open = o;
            cfg.k_close = c;
            let outcome = run_ott(&cfg, data)
                .and_then(|r| annualize(&r.equity_curve, r.interval).map(|(ret, _)| (ret, r.trades.len())));
            match outcome {
                Ok((ret, trades)) => HeatmapCell {
                    k_open: o,
                    k_close: c,
                    metric: Some(ret),
                    trades,
                    error: None,
                },
                Err(e) => HeatmapCell {
                    k_open: o,
                    k_close: c,
                    metric: None,
                    trades: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(HeatmapGrid {
        k_open: k_open.to_vec(),
        k_close: k_close.to_vec(),
        cells,
    })
}
