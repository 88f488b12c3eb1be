//! Seeded synthetic markets: one asset quoted in several fiat currencies.
//!
//! The asset follows a geometric random walk with drift in a reference currency, each
//! fiat rate drifts as a slow log random walk, and every quote carries its own
//! AR(1) log deviation. The deviations are what the spread strategy trades.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::PriceMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n: usize,
    pub start: i64,
    pub interval: i64,
    /// `(code, units of reference currency per unit)`.
    pub currencies: Vec<(String, f64)>,
    pub asset_start: f64,
    /// Per-interval log drift of the asset.
    pub asset_drift: f64,
    /// Per-interval log volatility of the asset.
    pub asset_vol: f64,
    /// Per-interval log volatility of each fiat rate.
    pub fx_vol: f64,
    /// Per-interval innovation of the quote deviations.
    pub noise_vol: f64,
    /// AR(1) coefficient of the quote deviations.
    pub noise_phi: f64,
}

impl SyntheticSpec {
    /// Four currencies on 5-minute bars: a rising asset, near-flat fiat rates
    /// and fast-reverting quote noise.
    pub fn four_currencies(seed: u64, n: usize) -> Self {
        SyntheticSpec {
            seed,
            n,
            start: 1_609_459_200,
            interval: 300,
            currencies: vec![
                ("CAD".into(), 0.79),
                ("EUR".into(), 1.13),
                ("GBP".into(), 1.32),
                ("USD".into(), 1.0),
            ],
            asset_start: 2000.0,
            asset_drift: 2e-5,
            asset_vol: 0.002,
            fx_vol: 0.00002,
            noise_vol: 0.0012,
            noise_phi: 0.8,
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<PriceMatrix> {
    if spec.n == 0 || spec.currencies.is_empty() {
        return Err(Error::validation(
            "synthetic",
            "need at least one timestamp and one currency",
        ));
    }
    if !(0.0..1.0).contains(&spec.noise_phi.abs()) {
        return Err(Error::validation("noise_phi", "must lie in (-1, 1)"));
    }
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::validation("synthetic", e.to_string()));
    let (asset_d, fx_d, noise_d) = (normal(spec.asset_vol)?, normal(spec.fx_vol)?, normal(spec.noise_vol)?);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let k = spec.currencies.len();
    let mut rows = vec![Vec::with_capacity(spec.n); k];
    let mut log_asset = spec.asset_start.ln();
    let mut log_fx: Vec<f64> = spec.currencies.iter().map(|(_, r)| r.ln()).collect();
    let mut dev = vec![0.0; k];
    for t in 0..spec.n {
        if t > 0 {
            log_asset += spec.asset_drift + asset_d.sample(&mut rng);
            for x in log_fx.iter_mut() {
                *x += fx_d.sample(&mut rng);
            }
        }
        for c in 0..k {
            dev[c] = spec.noise_phi * dev[c] + noise_d.sample(&mut rng);
            rows[c].push((log_asset - log_fx[c] + dev[c]).exp());
        }
    }
    let timestamps = (0..spec.n as i64).map(|i| spec.start + i * spec.interval).collect();
    PriceMatrix::new(
        spec.currencies.iter().map(|(c, _)| c.clone()).collect(),
        timestamps,
        rows,
        spec.interval,
    )
}
