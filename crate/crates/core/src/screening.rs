//! Correlation and cointegration screening of the currency bucket.
//!
//! The unit-root test follows the common OLS formulation of the augmented
//! Dickey-Fuller regression: `Δy_t = α + γ y_{t-1} + Σ δ_i Δy_{t-i} + ε_t`,
//! with the lag count chosen by AIC over a common sample, then refit on the
//! largest sample for the chosen lag. Critical values come from MacKinnon's
//! (2010) response surfaces.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::PriceMatrix;

/// One week, the default screening window.
pub const WEEK_SECONDS: i64 = 7 * 24 * 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Significance {
    OnePercent,
    #[default]
    FivePercent,
    TenPercent,
}

impl Significance {
    fn column(self) -> usize {
        match self {
            Significance::OnePercent => 0,
            Significance::FivePercent => 1,
            Significance::TenPercent => 2,
        }
    }
}

/// Deterministic terms in the ADF regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    None,
    Constant,
}

impl Trend {
    fn terms(self) -> usize {
        match self {
            Trend::None => 0,
            Trend::Constant => 1,
        }
    }
}

// MacKinnon (2010) tau surfaces, rows = 1%, 5%, 10%; crit = b0 + b1/T + b2/T^2 + b3/T^3.
const TAU_N_1: [[f64; 4]; 3] = [
    [-2.56574, -2.2358, -3.627, 0.0],
    [-1.94100, -0.2686, -3.365, 31.223],
    [-1.61682, 0.2656, -2.714, 25.364],
];
const TAU_C_1: [[f64; 4]; 3] = [
    [-3.43035, -6.5393, -16.786, -79.433],
    [-2.86154, -2.8903, -4.234, -40.040],
    [-2.56677, -1.5384, -2.809, 0.0],
];
const TAU_C_2: [[f64; 4]; 3] = [
    [-3.89644, -10.9519, -33.527, 0.0],
    [-3.33613, -6.1101, -6.823, 0.0],
    [-3.04445, -4.2412, -2.720, 0.0],
];

fn surface(coefs: &[f64; 4], nobs: usize) -> f64 {
    let inv = 1.0 / nobs as f64;
    coefs[0] + coefs[1] * inv + coefs[2] * inv * inv + coefs[3] * inv * inv * inv
}

/// Critical value of the Dickey-Fuller tau statistic.
///
/// `n_vars` is 1 for a plain unit-root test and 2 for the Engle-Granger
/// residual test on a bivariate regression.
pub fn mackinnon_critical(n_vars: usize, trend: Trend, nobs: usize, level: Significance) -> Result<f64> {
    let table = match (n_vars, trend) {
        (1, Trend::None) => &TAU_N_1,
        (1, Trend::Constant) => &TAU_C_1,
        (2, Trend::Constant) => &TAU_C_2,
        _ => {
            return Err(Error::Config(format!(
                "no critical values for {n_vars} variables with {trend:?}"
            )))
        }
    };
    Ok(surface(&table[level.column()], nobs))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Data(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Data("pearson needs at least 3 observations".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance(
            "correlation undefined for a constant series".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

struct OlsFit {
    coef: DVector<f64>,
    ssr: f64,
    /// Standard errors of the coefficients.
    se: DVector<f64>,
}

/// OLS through normal equations on RMS-scaled columns. Scaling leaves the
/// fitted values, t-statistics and SSR unchanged while keeping the Gram
/// matrix well conditioned.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::Data(format!(
            "regression needs more than {k} observations, got {n}"
        )));
    }
    let scale: Vec<f64> = (0..k)
        .map(|j| {
            let rms = (x.column(j).norm_squared() / n as f64).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect();
    let mut xs = x.clone();
    for (j, s) in scale.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let gram = xs.tr_mul(&xs);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::ZeroVariance("singular regression design".into()))?;
    let coef_s = chol.solve(&xs.tr_mul(y));
    let resid = y - &xs * &coef_s;
    let ssr = resid.norm_squared();
    let sigma2 = ssr / (n - k) as f64;
    let inv = chol.inverse();
    let mut coef = coef_s.clone();
    let mut se = DVector::zeros(k);
    for j in 0..k {
        coef[j] = coef_s[j] / scale[j];
        se[j] = (sigma2 * inv[(j, j)]).sqrt() / scale[j];
    }
    Ok(OlsFit { coef, ssr, se })
}

/// Default ADF lag cap: ⌈12·(n/100)^{1/4}⌉.
pub fn default_max_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub used_lag: usize,
    pub nobs: usize,
    pub critical_value: f64,
    pub reject_unit_root: bool,
}

/// Design matrix `[deterministic, y_{t-1}, Δy_{t-1..t-lags}]` using the last
/// `nobs` usable rows.
fn adf_design(series: &[f64], diff: &[f64], lags: usize, nobs: usize, trend: Trend) -> (DMatrix<f64>, DVector<f64>) {
    let d = trend.terms();
    let k = d + 1 + lags;
    let first = diff.len() - nobs;
    let x = DMatrix::from_fn(nobs, k, |r, c| {
        let t = first + r;
        if c < d {
            1.0
        } else if c == d {
            series[t]
        } else {
            diff[t - (c - d)]
        }
    });
    let y = DVector::from_iterator(nobs, diff[first..].iter().copied());
    (x, y)
}

fn aic(ssr: f64, nobs: usize, k: usize) -> f64 {
    let n = nobs as f64;
    n * ((2.0 * std::f64::consts::PI).ln() + (ssr / n).ln() + 1.0) + 2.0 * k as f64
}

/// Augmented Dickey-Fuller test with the given deterministic terms, AIC lag
/// selection up to `max_lag`, and a decision at `level`.
pub fn adf_with(series: &[f64], max_lag: usize, trend: Trend, level: Significance) -> Result<AdfResult> {
    let n = series.len();
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in ADF input".into()));
    }
    if series.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::ZeroVariance("ADF input is constant".into()));
    }
    let cap = (n / 2).saturating_sub(trend.terms() + 1);
    let max_lag = max_lag.min(cap);
    if n <= max_lag + 10 {
        return Err(Error::Data(format!(
            "ADF needs more than {} observations, got {n}",
            max_lag + 10
        )));
    }
    let diff: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();

    // Lag search on the common sample that supports `max_lag`.
    let common = diff.len() - max_lag;
    let (full_x, y) = adf_design(series, &diff, max_lag, common, trend);
    let base = trend.terms() + 1;
    let mut best: Option<(f64, usize)> = None;
    for lags in 0..=max_lag {
        let k = base + lags;
        let fit = ols(&full_x.columns(0, k).into_owned(), &y)?;
        let ic = aic(fit.ssr, common, k);
        if best.is_none_or(|(b, _)| ic < b) {
            best = Some((ic, lags));
        }
    }
    let used_lag = best.map(|(_, l)| l).unwrap_or(0);

    let nobs = diff.len() - used_lag;
    let (x, y) = adf_design(series, &diff, used_lag, nobs, trend);
    let fit = ols(&x, &y)?;
    let j = trend.terms();
    let statistic = fit.coef[j] / fit.se[j];
    let critical_value = mackinnon_critical(1, trend, nobs, level)?;
    Ok(AdfResult {
        statistic,
        used_lag,
        nobs,
        critical_value,
        reject_unit_root: statistic < critical_value,
    })
}

/// ADF with a constant, decided at 5%.
pub fn adf_test(series: &[f64], max_lag: usize) -> Result<AdfResult> {
    adf_with(series, max_lag, Trend::Constant, Significance::FivePercent)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngleGrangerResult {
    pub alpha: f64,
    pub beta: f64,
    pub adf_statistic: f64,
    pub critical_value: f64,
    pub cointegrated: bool,
}

/// Two-step Engle-Granger test regressing `y` on `x` with an intercept, then
/// testing the residuals for a unit root against the bivariate critical
/// values. Perfectly collinear inputs are reported as cointegrated with a
/// statistic of −∞.
pub fn engle_granger(x: &[f64], y: &[f64], level: Significance) -> Result<EngleGrangerResult> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Data(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    if n < 12 {
        return Err(Error::Data("Engle-Granger needs at least 12 observations".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("Engle-Granger input is constant".into()));
    }
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    let critical_value = mackinnon_critical(2, Trend::Constant, n - 1, level)?;

    let resid: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - alpha - beta * a).collect();
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let r_squared = 1.0 - ssr / syy;
    if r_squared >= 1.0 - 100.0 * f64::EPSILON.sqrt() {
        return Ok(EngleGrangerResult {
            alpha,
            beta,
            adf_statistic: f64::NEG_INFINITY,
            critical_value,
            cointegrated: true,
        });
    }
    let adf = adf_with(&resid, default_max_lag(n), Trend::None, level)?;
    Ok(EngleGrangerResult {
        alpha,
        beta,
        adf_statistic: adf.statistic,
        critical_value,
        cointegrated: adf.statistic < critical_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrCointReport {
    pub pair: (String, String),
    pub mean_correlation: f64,
    pub coint_pass_rate: f64,
    pub window_count: usize,
}

/// Unordered currency pairs of a matrix as row-index tuples, with the first
/// element the lexicographically earlier code.
pub fn pair_indices(m: &PriceMatrix) -> Vec<(usize, usize)> {
    let codes = m.currencies();
    let mut out = Vec::new();
    for i in 0..codes.len() {
        for j in (i + 1)..codes.len() {
            if codes[i] <= codes[j] {
                out.push((i, j));
            } else {
                out.push((j, i));
            }
        }
    }
    out.sort_by(|a, b| (&codes[a.0], &codes[a.1]).cmp(&(&codes[b.0], &codes[b.1])));
    out
}

/// Per-pair average rolling correlation and Engle-Granger pass rate over
/// consecutive, non-overlapping windows of `window_seconds`. A trailing
/// partial window is ignored.
pub fn rolling_relationships(
    m: &PriceMatrix,
    window_seconds: i64,
    level: Significance,
) -> Result<Vec<CorrCointReport>> {
    let width = (window_seconds / m.interval()) as usize;
    if width < 3 {
        return Err(Error::Config(format!(
            "screening window spans {width} samples, need at least 3"
        )));
    }
    let windows = m.len() / width;
    if windows == 0 {
        return Err(Error::Config(format!(
            "data has {} samples, shorter than one {width}-sample window",
            m.len()
        )));
    }
    let codes = m.currencies();
    pair_indices(m)
        .into_iter()
        .map(|(i, j)| {
            let per_window: Vec<(f64, bool)> = (0..windows)
                .into_par_iter()
                .map(|w| {
                    let range = w * width..(w + 1) * width;
                    let (a, b) = (&m.row(i)[range.clone()], &m.row(j)[range]);
                    let r = pearson(a, b)?;
                    let eg = engle_granger(a, b, level)?;
                    Ok((r, eg.cointegrated))
                })
                .collect::<Result<_>>()?;
            let mean_correlation = per_window.iter().map(|(r, _)| r).sum::<f64>() / windows as f64;
            let passed = per_window.iter().filter(|(_, c)| *c).count();
            Ok(CorrCointReport {
                pair: (codes[i].clone(), codes[j].clone()),
                mean_correlation,
                coint_pass_rate: passed as f64 / windows as f64,
                window_count: windows,
            })
        })
        .collect()
}

/// Chooses the trading bucket: currencies whose every pairwise report meets
/// both thresholds. Failing currencies are dropped one at a time, most
/// failing pairs first, then lowest mean `correlation + pass rate`, then
/// name.
pub fn select_bucket(reports: &[CorrCointReport], corr_min: f64, coint_min: f64) -> Result<Vec<String>> {
    let mut remaining: Vec<String> = Vec::new();
    for r in reports {
        for c in [&r.pair.0, &r.pair.1] {
            if !remaining.contains(c) {
                remaining.push(c.clone());
            }
        }
    }
    let find = |a: &str, b: &str| {
        reports
            .iter()
            .find(|r| (r.pair.0 == a && r.pair.1 == b) || (r.pair.0 == b && r.pair.1 == a))
    };
    for (i, a) in remaining.iter().enumerate() {
        for b in &remaining[i + 1..] {
            if find(a, b).is_none() {
                return Err(Error::Config(format!("missing screening report for {a}:{b}")));
            }
        }
    }
    let admissible = |r: &CorrCointReport| r.mean_correlation >= corr_min && r.coint_pass_rate >= coint_min;

    loop {
        let mut worst: Option<(usize, f64, &String)> = None;
        for c in &remaining {
            let mine: Vec<&CorrCointReport> = remaining
                .iter()
                .filter(|o| *o != c)
                .filter_map(|o| find(c, o))
                .collect();
            let failing = mine.iter().filter(|r| !admissible(r)).count();
            if failing == 0 {
                continue;
            }
            let score = mine.iter().map(|r| r.mean_correlation + r.coint_pass_rate).sum::<f64>() / mine.len() as f64;
            let worse = match worst {
                None => true,
                Some((wf, ws, wn)) => failing > wf || (failing == wf && (score < ws || (score == ws && c < wn))),
            };
            if worse {
                worst = Some((failing, score, c));
            }
        }
        match worst {
            None => break,
            Some((_, _, c)) => {
                let c = c.clone();
                log::info!("screening drops {c}");
                remaining.retain(|x| *x != c);
            }
        }
        if remaining.len() < 2 {
            break;
        }
    }
    if remaining.len() < 2 {
        return Err(Error::Screening(format!(
            "fewer than 2 currencies satisfy correlation >= {corr_min} and pass rate >= {coint_min}"
        )));
    }
    Ok(remaining)
}
