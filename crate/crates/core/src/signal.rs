//! Log-price spreads, formation statistics and the per-pair open/close state
//! machine.
//!
//! For a pair `(c1, c2)` the spread is `ln P_c1 − ln P_c2`. A positive
//! z-score means the asset is relatively expensive in `c1`, so the position
//! spends `c2` to buy the asset and sells it into `c1`; negative z-scores
//! mirror that.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::PriceMatrix;
use crate::screening::pair_indices;

/// Minimum formation samples for spread statistics.
pub const MIN_FORMATION_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpread {
    pub pair: (String, String),
    /// Row indices of `pair.0` and `pair.1` in the source matrix.
    pub rows: (usize, usize),
    pub values: Vec<f64>,
}

impl PairSpread {
    pub fn name(&self) -> String {
        format!("{}:{}", self.pair.0, self.pair.1)
    }
}

/// One spread per unordered currency pair, first currency lexicographically
/// earlier.
pub fn build_spreads(log_m: &PriceMatrix) -> Vec<PairSpread> {
    let codes = log_m.currencies();
    pair_indices(log_m)
        .into_iter()
        .map(|(i, j)| PairSpread {
            pair: (codes[i].clone(), codes[j].clone()),
            rows: (i, j),
            values: log_m.row(i).iter().zip(log_m.row(j)).map(|(a, b)| a - b).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub k_open: f64,
    pub k_close: f64,
    /// `k_open · σ` in spread units.
    pub open_level: f64,
    /// `k_close · σ` in spread units.
    pub close_level: f64,
}

impl Thresholds {
    pub fn new(k_open: f64, k_close: f64, std: f64) -> Result<Self> {
        validate_multipliers(k_open, k_close)?;
        Ok(Thresholds {
            k_open,
            k_close,
            open_level: k_open * std,
            close_level: k_close * std,
        })
    }
}

pub fn validate_multipliers(k_open: f64, k_close: f64) -> Result<()> {
    if !(k_close > 0.0) || !k_close.is_finite() {
        return Err(Error::validation("k_close", format!("must be positive, got {k_close}")));
    }
    if !(k_open > k_close) || !k_open.is_finite() {
        return Err(Error::validation(
            "k_open",
            format!("must exceed k_close ({k_close}), got {k_open}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormationStats {
    pub mean: f64,
    pub std: f64,
    pub thresholds: Thresholds,
    /// Average intervals from an open-level excursion to the next mean crossing.
    pub mean_reversion: f64,
    /// True when no excursion completed and `mean_reversion` is the fallback.
    pub mr_fallback: bool,
    pub excursions: usize,
}

/// Mean number of intervals from the start of an excursion beyond
/// `open_level` to the next time the demeaned spread reaches or crosses
/// zero. Unresolved excursions are ignored. Returns `(mean, count)`.
pub fn mean_reversion_time(demeaned: &[f64], open_level: f64) -> (Option<f64>, usize) {
    let mut total = 0usize;
    let mut count = 0usize;
    let mut t = 0;
    while t < demeaned.len() {
        let d = demeaned[t];
        if d.abs() >= open_level && d != 0.0 {
            let sign = d.signum();
            match (t + 1..demeaned.len()).find(|&u| demeaned[u] * sign <= 0.0) {
                Some(u) => {
                    total += u - t;
                    count += 1;
                    t = u;
                    continue;
                }
                None => break,
            }
        }
        t += 1;
    }
    if count == 0 {
        (None, 0)
    } else {
        (Some(total as f64 / count as f64), count)
    }
}

/// Moments, thresholds and mean-reversion time of a spread over the
/// formation index range. Uses the sample (n − 1) standard deviation.
pub fn formation_stats(
    spread: &PairSpread,
    formation: std::ops::Range<usize>,
    k_open: f64,
    k_close: f64,
) -> Result<FormationStats> {
    validate_multipliers(k_open, k_close)?;
    if formation.end > spread.values.len() || formation.start >= formation.end {
        return Err(Error::Config(format!(
            "formation range {formation:?} outside spread of length {}",
            spread.values.len()
        )));
    }
    let window = &spread.values[formation];
    if window.len() < MIN_FORMATION_SAMPLES {
        return Err(Error::Config(format!(
            "formation window has {} samples, need at least {MIN_FORMATION_SAMPLES}",
            window.len()
        )));
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    // Rounding in the mean leaves ~1e-17 residue on a constant series.
    if !(std > 1e-13 * (1.0 + mean.abs())) {
        return Err(Error::DegenerateSpread(spread.name()));
    }
    let thresholds = Thresholds::new(k_open, k_close, std)?;
    let demeaned: Vec<f64> = window.iter().map(|v| v - mean).collect();
    let (mr, excursions) = mean_reversion_time(&demeaned, thresholds.open_level);
    let mr_fallback = mr.is_none();
    if mr_fallback {
        log::info!(
            "{}: no completed excursion beyond {k_open}σ in formation; mean reversion time falls back to half the window",
            spread.name()
        );
    }
    Ok(FormationStats {
        mean,
        std,
        thresholds,
        mean_reversion: mr.unwrap_or(n / 2.0),
        mr_fallback,
        excursions,
    })
}

pub fn z_score(value: f64, stats: &FormationStats) -> f64 {
    (value - stats.mean) / stats.std
}

/// Which currency of the pair is spent to buy the asset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Spend `c1`, receive `c2` (z < 0).
    SpendFirst,
    /// Spend `c2`, receive `c1` (z > 0).
    SpendSecond,
}

impl Direction {
    pub fn from_z(z: f64) -> Self {
        if z > 0.0 {
            Direction::SpendSecond
        } else {
            Direction::SpendFirst
        }
    }

    /// `(spent, received)` row indices for a pair `(c1, c2)`.
    pub fn legs<T: Copy>(self, pair: (T, T)) -> (T, T) {
        match self {
            Direction::SpendFirst => (pair.0, pair.1),
            Direction::SpendSecond => (pair.1, pair.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::SpendFirst => "spend_first",
            Direction::SpendSecond => "spend_second",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Position {
    None,
    Open { direction: Direction, opened_at: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub position: Position,
    pub last_z: f64,
}

impl Default for PairState {
    fn default() -> Self {
        PairState {
            position: Position::None,
            last_z: 0.0,
        }
    }
}

impl PairState {
    pub fn is_open(&self) -> bool {
        matches!(self.position, Position::Open { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SignalKind {
    Open,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalEvent {
    pub kind: SignalKind,
    pub direction: Direction,
    pub timestamp: i64,
}

/// Advances one pair by one observation. Thresholds are in σ units, so the
/// tests are `|z| > k_open` to open and `|z| < k_close` to close.
pub fn step_signals(state: PairState, z: f64, thresholds: &Thresholds, t: i64) -> (PairState, Option<SignalEvent>) {
    match state.position {
        Position::None if z.abs() > thresholds.k_open => {
            let direction = Direction::from_z(z);
            (
                PairState {
                    position: Position::Open {
                        direction,
                        opened_at: t,
                    },
                    last_z: z,
                },
                Some(SignalEvent {
                    kind: SignalKind::Open,
                    direction,
                    timestamp: t,
                }),
            )
        }
        Position::Open { direction, .. } if z.abs() < thresholds.k_close => (
            PairState {
                position: Position::None,
                last_z: z,
            },
            Some(SignalEvent {
                kind: SignalKind::Close,
                direction,
                timestamp: t,
            }),
        ),
        _ => (PairState { last_z: z, ..state }, None),
    }
}
