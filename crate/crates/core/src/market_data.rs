//! OHLCVT candle ingestion and alignment into a currency × time price matrix.
//!
//! Input files follow the Kraken OHLCVT layout: one file per (asset, quote
//! currency, interval), seven comma-separated columns and no header:
//! `timestamp,open,high,low,close,volume,trades`.

use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of consecutive missing intervals that `align` forward-fills.
pub const DEFAULT_GAP_FILL_LIMIT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candle {
    pub timestamp: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub trades: u64,
}

/// Timestamp-sorted candles sampled on a fixed interval (seconds).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandleSeries {
    pub interval: i64,
    pub candles: Vec<Candle>,
}

impl CandleSeries {
    pub fn len(&self) -> usize {
        self.candles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candles.is_empty()
    }

    /// Builds a series from `(timestamp, close)` points, using the close for
    /// every price field. Handy for synthetic data and tests.
    pub fn from_closes(interval: i64, points: impl IntoIterator<Item = (i64, f64)>) -> Self {
        let candles = points
            .into_iter()
            .map(|(timestamp, close)| Candle {
                timestamp,
                open: close,
                high: close,
                low: close,
                close,
                volume: 0.0,
                trades: 0,
            })
            .collect();
        CandleSeries { interval, candles }
    }
}

fn field<T: std::str::FromStr>(raw: &str, name: &str, line: usize) -> Result<T> {
    raw.trim().parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {name} `{raw}`"),
    })
}

/// Parses OHLCVT rows from any reader. See [`load_ohlcvt`].
pub fn parse_ohlcvt<R: Read>(reader: R, expected_interval: i64) -> Result<CandleSeries> {
    if expected_interval <= 0 {
        return Err(Error::validation("interval", "must be positive"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut candles = Vec::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 7 {
            return Err(Error::Parse {
                line,
                message: format!("expected 7 fields, found {}", record.len()),
            });
        }
        let candle = Candle {
            timestamp: field(&record[0], "timestamp", line)?,
            open: field(&record[1], "open", line)?,
            high: field(&record[2], "high", line)?,
            low: field(&record[3], "low", line)?,
            close: field(&record[4], "close", line)?,
            volume: field(&record[5], "volume", line)?,
            trades: field(&record[6], "trades", line)?,
        };
        let prices = [candle.open, candle.high, candle.low, candle.close, candle.volume];
        if prices.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                message: "non-finite value".into(),
            });
        }
        if !(candle.low <= candle.open.min(candle.close) && candle.open.max(candle.close) <= candle.high) {
            return Err(Error::Parse {
                line,
                message: "price bounds violated (need low <= open, close <= high)".into(),
            });
        }
        if candle.volume < 0.0 {
            return Err(Error::Parse {
                line,
                message: "negative volume".into(),
            });
        }
        candles.push(candle);
    }

    candles.sort_by_key(|c| c.timestamp);
    for w in candles.windows(2) {
        let step = w[1].timestamp - w[0].timestamp;
        if step == 0 {
            return Err(Error::Data(format!("duplicate timestamp {}", w[0].timestamp)));
        }
        if step % expected_interval != 0 {
            return Err(Error::Data(format!(
                "timestamp {} is off the {}-second grid",
                w[1].timestamp, expected_interval
            )));
        }
    }
    Ok(CandleSeries {
        interval: expected_interval,
        candles,
    })
}

/// Reads one OHLCVT CSV file. Rows are sorted by timestamp; duplicates and
/// rows off the expected interval grid are rejected.
pub fn load_ohlcvt(path: impl AsRef<Path>, expected_interval: i64) -> Result<CandleSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_ohlcvt(file, expected_interval)
}

/// Close prices of one asset in `|c|` currencies on a shared timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceMatrix {
    currencies: Vec<String>,
    timestamps: Vec<i64>,
    values: Vec<Vec<f64>>,
    interval: i64,
}

impl PriceMatrix {
    pub fn new(currencies: Vec<String>, timestamps: Vec<i64>, values: Vec<Vec<f64>>, interval: i64) -> Result<Self> {
        if currencies.len() < 2 {
            return Err(Error::Alignment("need at least 2 currencies".into()));
        }
        if timestamps.len() < 2 {
            return Err(Error::Alignment(format!(
                "need at least 2 aligned timestamps, got {}",
                timestamps.len()
            )));
        }
        if values.len() != currencies.len() {
            return Err(Error::Alignment("row count differs from currency count".into()));
        }
        for (code, row) in currencies.iter().zip(&values) {
            if row.len() != timestamps.len() {
                return Err(Error::Alignment(format!("row {code} has wrong length")));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Alignment(format!("row {code} has non-finite values")));
            }
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Alignment("timestamps must be strictly increasing".into()));
        }
        let mut seen = currencies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != currencies.len() {
            return Err(Error::Alignment("duplicate currency code".into()));
        }
        Ok(PriceMatrix {
            currencies,
            timestamps,
            values,
            interval,
        })
    }

    pub fn currencies(&self) -> &[String] {
        &self.currencies
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn interval(&self) -> i64 {
        self.interval
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_currencies(&self) -> usize {
        self.currencies.len()
    }

    pub fn row(&self, currency: usize) -> &[f64] {
        &self.values[currency]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value(&self, currency: usize, t: usize) -> f64 {
        self.values[currency][t]
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.currencies.iter().position(|c| c == code)
    }

    /// Index range of timestamps in `[start, end)`.
    pub fn index_of_timestamp(&self, ts: i64) -> Option<usize> {
        self.timestamps.binary_search(&ts).ok()
    }

    pub fn range_of(&self, start: i64, end: i64) -> Range<usize> {
        let lo = self.timestamps.partition_point(|&t| t < start);
        let hi = self.timestamps.partition_point(|&t| t < end);
        lo..hi.max(lo)
    }

    pub fn slice(&self, range: Range<usize>) -> Result<PriceMatrix> {
        PriceMatrix::new(
            self.currencies.clone(),
            self.timestamps[range.clone()].to_vec(),
            self.values.iter().map(|r| r[range.clone()].to_vec()).collect(),
            self.interval,
        )
    }

    /// Sub-matrix restricted to timestamps in `[start, end)`.
    pub fn slice_time(&self, start: i64, end: i64) -> Result<PriceMatrix> {
        self.slice(self.range_of(start, end))
    }

    /// Keeps only the listed currencies, in the listed order.
    pub fn select(&self, codes: &[String]) -> Result<PriceMatrix> {
        let mut values = Vec::with_capacity(codes.len());
        for code in codes {
            let i = self
                .index_of(code)
                .ok_or_else(|| Error::Config(format!("unknown currency {code}")))?;
            values.push(self.values[i].clone());
        }
        PriceMatrix::new(codes.to_vec(), self.timestamps.clone(), values, self.interval)
    }

    fn map_values(&self, values: Vec<Vec<f64>>) -> PriceMatrix {
        PriceMatrix {
            currencies: self.currencies.clone(),
            timestamps: self.timestamps.clone(),
            values,
            interval: self.interval,
        }
    }
}

/// Aligns per-currency candle series on the union of their timestamps.
///
/// A currency missing a timestamp is forward-filled from its previous close
/// when the surrounding gap spans at most `gap_fill_limit` intervals. Longer
/// gaps, and anything before a series' first observation, drop the timestamp
/// from every row.
pub fn align(series: &[(String, CandleSeries)], gap_fill_limit: usize) -> Result<PriceMatrix> {
    if series.len() < 2 {
        return Err(Error::Alignment("need at least 2 currencies".into()));
    }
    let interval = series[0].1.interval;
    if interval <= 0 {
        return Err(Error::Alignment("interval must be positive".into()));
    }
    if let Some((code, s)) = series.iter().find(|(_, s)| s.interval != interval) {
        return Err(Error::Alignment(format!(
            "{code} has interval {} but {} expected",
            s.interval, interval
        )));
    }

    let mut union: Vec<i64> = series
        .iter()
        .flat_map(|(_, s)| s.candles.iter().map(|c| c.timestamp))
        .collect();
    union.sort_unstable();
    union.dedup();
    let Some(&union_last) = union.last() else {
        return Err(Error::Alignment("all series are empty".into()));
    };

    let limit = gap_fill_limit as i64;
    let filled: Vec<Vec<Option<f64>>> = series
        .iter()
        .map(|(_, s)| {
            let candles = &s.candles;
            let mut j = 0;
            union
                .iter()
                .map(|&t| {
                    while j < candles.len() && candles[j].timestamp < t {
                        j += 1;
                    }
                    if j < candles.len() && candles[j].timestamp == t {
                        return Some(candles[j].close);
                    }
                    let prev = candles[..j].last()?;
                    let gap = match candles.get(j) {
                        Some(next) => (next.timestamp - prev.timestamp) / interval - 1,
                        None => (union_last - prev.timestamp) / interval,
                    };
                    (gap <= limit).then_some(prev.close)
                })
                .collect()
        })
        .collect();

    let keep: Vec<usize> = (0..union.len())
        .filter(|&i| filled.iter().all(|row| row[i].is_some()))
        .collect();
    let timestamps = keep.iter().map(|&i| union[i]).collect();
    let values = filled
        .iter()
        .map(|row| keep.iter().map(|&i| row[i].unwrap_or(f64::NAN)).collect())
        .collect();
    let currencies = series.iter().map(|(c, _)| c.clone()).collect();
    PriceMatrix::new(currencies, timestamps, values, interval)
}

/// Element-wise natural logarithm of a price matrix.
pub fn log_prices(m: &PriceMatrix) -> Result<PriceMatrix> {
    let mut values = Vec::with_capacity(m.n_currencies());
    for (c, row) in m.values.iter().enumerate() {
        let mut out = Vec::with_capacity(row.len());
        for (t, &v) in row.iter().enumerate() {
            if v <= 0.0 || v.is_nan() {
                return Err(Error::Domain {
                    currency: m.currencies[c].clone(),
                    timestamp: m.timestamps[t],
                    value: v,
                });
            }
            out.push(v.ln());
        }
        values.push(out);
    }
    Ok(m.map_values(values))
}

/// Converts an aligned matrix back into one candle series per currency.
pub fn to_series(m: &PriceMatrix) -> Vec<(String, CandleSeries)> {
    m.currencies
        .iter()
        .zip(&m.values)
        .map(|(code, row)| {
            let points = m.timestamps.iter().copied().zip(row.iter().copied());
            (code.clone(), CandleSeries::from_closes(m.interval, points))
        })
        .collect()
}
