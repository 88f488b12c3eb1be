//! Run configuration: a flat TOML file with typed keys.

use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use ott_core::analytics::{DEFAULT_RISK_FREE, DEFAULT_TUNE_SPLIT};
use ott_core::backtest::{BacktestConfig, Strategy, DEFAULT_INITIAL_BALANCE, DEFAULT_LAMBDA, DEFAULT_TC};
use ott_core::market_data::DEFAULT_GAP_FILL_LIMIT;
use ott_core::screening::WEEK_SECONDS;
use ott_core::Error;
use serde::Deserialize;

/// Timestamps may be unix seconds, a date, or an RFC 3339 date-time, quoted
/// or as native TOML values.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawTime {
    Unix(i64),
    Text(String),
    Toml(toml::value::Datetime),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data_dir: PathBuf,
    #[serde(default = "default_asset")]
    asset: String,
    currencies: Vec<String>,
    base: String,
    interval: i64,
    formation_start: RawTime,
    formation_end: RawTime,
    trading_start: RawTime,
    trading_end: RawTime,
    k_open: f64,
    k_close: f64,
    lambda: Option<f64>,
    tc: Option<f64>,
    risk_free: Option<f64>,
    strategy: Option<String>,
    gap_fill_limit: Option<usize>,
    output_dir: Option<PathBuf>,
    run_name: Option<String>,
    initial_balance: Option<f64>,
    corr_min: Option<f64>,
    coint_min: Option<f64>,
    screen_window: Option<i64>,
    screen: Option<bool>,
    tune_k_open: Option<[f64; 2]>,
    tune_k_close: Option<[f64; 2]>,
    tune_step: Option<f64>,
    tune_split: Option<f64>,
}

fn default_asset() -> String {
    "ETH".into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub asset: String,
    pub currencies: Vec<String>,
    pub base: String,
    pub interval: i64,
    pub formation: (i64, i64),
    pub trading: (i64, i64),
    pub k_open: f64,
    pub k_close: f64,
    pub lambda: f64,
    pub tc: f64,
    pub risk_free: f64,
    pub strategy: Strategy,
    pub gap_fill_limit: usize,
    pub output_dir: PathBuf,
    pub run_name: String,
    pub initial_balance: f64,
    pub corr_min: f64,
    pub coint_min: f64,
    pub screen_window: i64,
    /// Screen the formation window first and trade only the bucket.
    pub screen: bool,
    /// Half-open `[start, end)` candidate ranges.
    pub tune_k_open: (f64, f64),
    pub tune_k_close: (f64, f64),
    pub tune_step: f64,
    pub tune_split: f64,
}

pub const DEFAULT_CORR_MIN: f64 = 0.9;
pub const DEFAULT_COINT_MIN: f64 = 0.5;

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::validation(field, message)
}

fn to_unix(field: &str, raw: &RawTime) -> Result<i64, Error> {
    let text = match raw {
        RawTime::Unix(t) => return Ok(*t),
        RawTime::Text(s) => s.clone(),
        RawTime::Toml(d) => d.to_string(),
    };
    if let Ok(d) = DateTime::parse_from_rfc3339(&text) {
        return Ok(d.timestamp());
    }
    if let Ok(d) = NaiveDateTime::parse_from_str(&text, "%Y-%m-%dT%H:%M:%S") {
        return Ok(Utc.from_utc_datetime(&d).timestamp());
    }
    if let Ok(d) = NaiveDate::parse_from_str(&text, "%Y-%m-%d") {
        return Ok(Utc
            .from_utc_datetime(&d.and_hms_opt(0, 0, 0).expect("midnight"))
            .timestamp());
    }
    Err(invalid(
        field,
        format!("`{text}` is not unix seconds, YYYY-MM-DD or an RFC 3339 date-time"),
    ))
}

pub fn format_ts(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Parses and validates a config file. Relative `data_dir` and `output_dir`
/// resolve against the config file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| invalid("config", e.to_string()))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { root.join(p) };

    let strategy: Strategy = raw.strategy.as_deref().unwrap_or("OTT").parse()?;
    let cfg = RunConfig {
        data_dir: resolve(raw.data_dir),
        asset: raw.asset,
        currencies: raw.currencies,
        base: raw.base,
        interval: raw.interval,
        formation: (
            to_unix("formation_start", &raw.formation_start)?,
            to_unix("formation_end", &raw.formation_end)?,
        ),
        trading: (
            to_unix("trading_start", &raw.trading_start)?,
            to_unix("trading_end", &raw.trading_end)?,
        ),
        k_open: raw.k_open,
        k_close: raw.k_close,
        lambda: raw.lambda.unwrap_or(DEFAULT_LAMBDA),
        tc: raw.tc.unwrap_or(DEFAULT_TC),
        risk_free: raw.risk_free.unwrap_or(DEFAULT_RISK_FREE),
        strategy,
        gap_fill_limit: raw.gap_fill_limit.unwrap_or(DEFAULT_GAP_FILL_LIMIT),
        output_dir: resolve(raw.output_dir.unwrap_or_else(|| PathBuf::from("runs"))),
        run_name: raw.run_name.unwrap_or_else(|| strategy.as_str().to_ascii_lowercase()),
        initial_balance: raw.initial_balance.unwrap_or(DEFAULT_INITIAL_BALANCE),
        corr_min: raw.corr_min.unwrap_or(DEFAULT_CORR_MIN),
        coint_min: raw.coint_min.unwrap_or(DEFAULT_COINT_MIN),
        screen_window: raw.screen_window.unwrap_or(WEEK_SECONDS),
        screen: raw.screen.unwrap_or(false),
        tune_k_open: raw.tune_k_open.map(|r| (r[0], r[1])).unwrap_or((2.0, 12.0)),
        tune_k_close: raw.tune_k_close.map(|r| (r[0], r[1])).unwrap_or((1.0, 11.0)),
        tune_step: raw.tune_step.unwrap_or(1.0),
        tune_split: raw.tune_split.unwrap_or(DEFAULT_TUNE_SPLIT),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.currencies.len() < 2 {
            return Err(invalid("currencies", "need at least 2 currencies"));
        }
        let mut sorted = self.currencies.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.currencies.len() {
            return Err(invalid("currencies", "duplicate currency code"));
        }
        if !self.currencies.contains(&self.base) {
            return Err(invalid("base", format!("{} is not listed in currencies", self.base)));
        }
        if self.interval <= 0 || self.interval % 60 != 0 {
            return Err(invalid(
                "interval",
                "must be a positive whole number of minutes, in seconds",
            ));
        }
        if self.formation.0 >= self.formation.1 {
            return Err(invalid("formation_end", "must be after formation_start"));
        }
        if self.trading.0 >= self.trading.1 {
            return Err(invalid("trading_end", "must be after trading_start"));
        }
        if self.trading.0 < self.formation.1 {
            return Err(invalid(
                "trading_start",
                format!(
                    "trading_start {} is before formation_end {}; the periods must not overlap",
                    format_ts(self.trading.0),
                    format_ts(self.formation.1)
                ),
            ));
        }
        if !(self.k_close >= 0.0 && self.k_open > self.k_close) {
            return Err(invalid(
                "k_close",
                format!("need 0 <= k_close < k_open, got {} and {}", self.k_close, self.k_open),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid("lambda", "must be >= 0"));
        }
        if !(0.0..=0.05).contains(&self.tc) {
            return Err(invalid("tc", "must lie in [0, 0.05]"));
        }
        if !(self.initial_balance > 0.0) {
            return Err(invalid("initial_balance", "must be positive"));
        }
        if !self.risk_free.is_finite() {
            return Err(invalid("risk_free", "must be finite"));
        }
        if self.screen_window < 3 * self.interval {
            return Err(invalid("screen_window", "must span at least 3 intervals"));
        }
        if !(self.tune_step > 0.0) {
            return Err(invalid("tune_step", "must be positive"));
        }
        if !(self.tune_split > 0.0 && self.tune_split < 1.0) {
            return Err(invalid("tune_split", "must lie strictly between 0 and 1"));
        }
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) || self.run_name.starts_with('.') {
            return Err(invalid("run_name", "must be a plain directory name"));
        }
        Ok(())
    }

    pub fn backtest_config(&self) -> BacktestConfig {
        let mut c = BacktestConfig::new(&self.base, self.formation, self.trading, self.k_open, self.k_close);
        c.asset = self.asset.clone();
        c.lambda = self.lambda;
        c.tc = self.tc;
        c.initial_balance = self.initial_balance;
        c
    }

    /// Kraken OHLCVT naming: `ETHUSD_5.csv` for 5-minute ETH/USD candles.
    pub fn data_file(&self, currency: &str) -> PathBuf {
        self.data_dir
            .join(format!("{}{}_{}.csv", self.asset, currency, self.interval / 60))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, body).unwrap();
        (dir, path)
    }

    const BASE: &str = r#"
data_dir = "data"
currencies = ["CAD", "USD"]
base = "USD"
interval = 300
formation_start = 2021-01-01
formation_end = "2021-02-01"
trading_start = "2021-02-01T00:00:00Z"
trading_end = 1617235200
k_open = 9
k_close = 7
"#;

    #[test]
    fn defaults_apply() {
        let (dir, path) = write(BASE);
        let c = parse_config(&path).unwrap();
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.tc, 0.001);
        assert_eq!(c.risk_free, 0.04);
        assert_eq!(c.strategy, Strategy::Ott);
        assert_eq!(c.formation, (1_609_459_200, 1_612_137_600));
        assert_eq!(c.trading.0, 1_612_137_600);
        assert_eq!(c.data_dir, dir.path().join("data"));
        assert_eq!(c.data_file("USD"), dir.path().join("data/ETHUSD_5.csv"));
    }

    #[test]
    fn overlap_names_both_dates() {
        let (_d, path) = write(&BASE.replace(
            "trading_start = \"2021-02-01T00:00:00Z\"",
            "trading_start = \"2021-01-15\"",
        ));
        let e = parse_config(&path).unwrap_err().to_string();
        assert!(
            e.contains("trading_start") && e.contains("2021-01-15T00:00:00Z") && e.contains("2021-02-01T00:00:00Z"),
            "{e}"
        );
    }

    #[test]
    fn invariants_name_their_field() {
        for (from, to, field) in [
            ("k_close = 7", "k_close = 9", "k_close"),
            ("base = \"USD\"", "base = \"EUR\"", "base"),
            ("k_open = 9", "k_open = 9\nlambda = -1", "lambda"),
            ("k_open = 9", "k_open = 9\ntc = -0.1", "tc"),
            ("k_open = 9", "k_open = 9\nstrategy = \"XYZ\"", "strategy"),
        ] {
            let (_d, path) = write(&BASE.replace(from, to));
            match parse_config(&path) {
                Err(Error::Validation { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let (_d, path) = write(&format!("{BASE}\nk_opn = 3\n"));
        assert!(parse_config(&path).is_err());
    }
}
