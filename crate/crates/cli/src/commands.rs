use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ott_core::analytics::{annualize, grid_search, half_open_range, indicators, sharpe, HeatmapGrid};
use ott_core::backtest::{run, BacktestResult};
use ott_core::market_data::{align, load_ohlcvt};
use ott_core::output::{write_equity, write_heatmap, write_json, write_screening, write_trades, RunSummary};
use ott_core::screening::{rolling_relationships, select_bucket, Significance};
use ott_core::{Error, PriceMatrix};
use serde::Serialize;

use crate::config::RunConfig;

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Loads every configured currency and keeps `[start, end)`.
pub fn load_data(cfg: &RunConfig, start: i64, end: i64) -> Result<PriceMatrix> {
    let mut series = Vec::with_capacity(cfg.currencies.len());
    for c in &cfg.currencies {
        let path = cfg.data_file(c);
        let s = load_ohlcvt(&path, cfg.interval).with_context(|| format!("loading {}", path.display()))?;
        series.push((c.clone(), s));
    }
    let m = align(&series, cfg.gap_fill_limit)?;
    Ok(m.slice_time(start, end)?)
}

fn screen_bucket(cfg: &RunConfig, formation: &PriceMatrix, out: Option<&Path>) -> Result<Vec<String>> {
    let reports = rolling_relationships(formation, cfg.screen_window, Significance::FivePercent)?;
    if let Some(dir) = out {
        write_screening(create(&dir.join("screening.csv"))?, &reports)?;
    }
    let bucket = select_bucket(&reports, cfg.corr_min, cfg.coint_min)?;
    if let Some(dir) = out {
        std::fs::write(dir.join("bucket.txt"), bucket.join("\n") + "\n")?;
    }
    Ok(bucket)
}

pub fn run_dir(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let dir = out.join(&cfg.run_name);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn cmd_screen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg, cfg.formation.0, cfg.formation.1)?;
    let dir = run_dir(cfg, out)?;
    let bucket = screen_bucket(cfg, &data, Some(&dir))?;
    println!("bucket: {}", bucket.join(", "));
    Ok(())
}

#[derive(Serialize)]
struct BestCell {
    k_open: f64,
    k_close: f64,
    annualized_return: f64,
    trades: usize,
    cells: usize,
    failed_cells: usize,
}

pub fn cmd_tune(cfg: &RunConfig, out: &Path) -> Result<HeatmapGrid> {
    let data = load_data(cfg, cfg.formation.0, cfg.formation.1)?;
    let opens = half_open_range(cfg.tune_k_open.0, cfg.tune_k_open.1, cfg.tune_step)?;
    let closes = half_open_range(cfg.tune_k_close.0, cfg.tune_k_close.1, cfg.tune_step)?;
    let grid = grid_search(&cfg.backtest_config(), &data, &opens, &closes, cfg.tune_split)?;
    let dir = run_dir(cfg, out)?;
    write_heatmap(create(&dir.join("heatmap.csv"))?, &grid)?;
    let failed = grid.cells.iter().filter(|c| c.metric.is_none()).count();
    for c in grid.cells.iter().filter(|c| c.error.is_some()) {
        log::warn!(
            "cell ({}, {}) failed: {}",
            c.k_open,
            c.k_close,
            c.error.as_deref().unwrap_or("")
        );
    }
    let Some(best) = grid.best() else {
        bail!(TuneFailed(grid.cells.len()));
    };
    write_json(
        create(&dir.join("best.json"))?,
        &BestCell {
            k_open: best.k_open,
            k_close: best.k_close,
            annualized_return: best.metric.expect("best has a metric"),
            trades: best.trades,
            cells: grid.cells.len(),
            failed_cells: failed,
        },
    )?;
    println!(
        "best: k_open {} k_close {} ({} cells, {failed} failed)",
        best.k_open,
        best.k_close,
        grid.cells.len()
    );
    Ok(grid)
}

#[derive(Debug)]
pub struct TuneFailed(pub usize);

impl std::fmt::Display for TuneFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "all {} grid cells failed", self.0)
    }
}

impl std::error::Error for TuneFailed {}

fn summarize(cfg: &RunConfig, data: &PriceMatrix, r: &BacktestResult) -> Result<RunSummary> {
    let base = data
        .index_of(&r.base)
        .ok_or_else(|| anyhow!("base {} missing from data", r.base))?;
    let first = data.range_of(cfg.trading.0, cfg.trading.1).start;
    let initial_value: f64 = r
        .initial_balances
        .iter()
        .enumerate()
        .map(|(c, b)| b * data.value(base, first) / data.value(c, first))
        .sum();
    let final_value = r.equity_curve.last().map(|e| e.1).unwrap_or(initial_value);
    let (annualized_return, annualized_sigma) = annualize(&r.equity_curve, r.interval)?;
    let sharpe = match sharpe(annualized_return, annualized_sigma, cfg.risk_free) {
        Ok(s) => Some(s),
        Err(Error::ZeroVariance(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(RunSummary {
        run_name: cfg.run_name.clone(),
        strategy: r.strategy.as_str().to_string(),
        base: r.base.clone(),
        currencies: r.currencies.clone(),
        interval: r.interval,
        k_open: cfg.k_open,
        k_close: cfg.k_close,
        lambda: cfg.lambda,
        tc: cfg.tc,
        initial_value,
        final_value,
        total_return: final_value / initial_value - 1.0,
        annualized_return,
        annualized_sigma,
        sharpe,
        risk_free: cfg.risk_free,
        openings: r.openings,
        initial_balances: r.initial_balances.clone(),
        final_balances: r.final_balances.clone(),
        indicators: indicators(&r.trades),
    })
}

pub fn cmd_backtest(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let mut data = load_data(cfg, cfg.formation.0, cfg.trading.1)?;
    let dir = run_dir(cfg, out)?;
    if cfg.screen {
        let formation = data.slice_time(cfg.formation.0, cfg.formation.1)?;
        let bucket = screen_bucket(cfg, &formation, Some(&dir))?;
        if !bucket.contains(&cfg.base) {
            return Err(Error::Screening(format!("base currency {} was screened out", cfg.base)).into());
        }
        data = data.select(&bucket)?;
    }
    let result = run(cfg.strategy, &cfg.backtest_config(), &data)?;
    write_trades(create(&dir.join("trades.csv"))?, &result.trades)?;
    write_equity(create(&dir.join("equity.csv"))?, &result.equity_curve)?;
    let summary = summarize(cfg, &data, &result)?;
    write_json(create(&dir.join("summary.json"))?, &summary)?;
    println!(
        "{} {}: total return {:.4}%, annualized {:.4}%, {} round trips",
        summary.run_name,
        summary.strategy,
        summary.total_return * 100.0,
        summary.annualized_return * 100.0,
        result.trades.len()
    );
    Ok(summary)
}

#[derive(Debug)]
pub struct NoRuns(pub PathBuf);

impl std::fmt::Display for NoRuns {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no completed runs (summary.json) under {}", self.0.display())
    }
}

impl std::error::Error for NoRuns {}

fn strategy_rank(s: &str) -> usize {
    match s {
        "BH" => 0,
        "DM" => 1,
        _ => 2,
    }
}

/// Collects `*/summary.json` under `root` into `comparison.csv`. When two
/// directories report the same run name, the more recently written summary
/// wins.
pub fn cmd_report(root: &Path) -> Result<Vec<RunSummary>> {
    let entries = std::fs::read_dir(root).map_err(|e| anyhow::Error::new(NoRuns(root.to_path_buf())).context(e))?;
    let mut latest: BTreeMap<String, (std::time::SystemTime, PathBuf, RunSummary)> = BTreeMap::new();
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    dirs.sort();
    for dir in dirs {
        let path = dir.join("summary.json");
        let Ok(meta) = std::fs::metadata(&path) else { continue };
        let text = std::fs::read_to_string(&path)?;
        let summary: RunSummary = serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
        let mtime = meta.modified()?;
        match latest.get(&summary.run_name) {
            Some((t, other, _)) => {
                let (keep, drop) = if mtime > *t { (&path, other) } else { (other, &path) };
                log::warn!(
                    "duplicate run name `{}`: using {} over {}",
                    summary.run_name,
                    keep.display(),
                    drop.display()
                );
                if mtime > *t {
                    latest.insert(summary.run_name.clone(), (mtime, path, summary));
                }
            }
            None => {
                latest.insert(summary.run_name.clone(), (mtime, path, summary));
            }
        }
    }
    if latest.is_empty() {
        bail!(NoRuns(root.to_path_buf()));
    }
    let mut runs: Vec<RunSummary> = latest.into_values().map(|(_, _, s)| s).collect();
    runs.sort_by(|a, b| {
        strategy_rank(&a.strategy)
            .cmp(&strategy_rank(&b.strategy))
            .then_with(|| a.run_name.cmp(&b.run_name))
    });

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(&root.join("comparison.csv"))?);
    w.write_record([
        "run_name",
        "strategy",
        "interval",
        "lambda",
        "tc",
        "total_return",
        "annualized_return",
        "annualized_sigma",
        "sharpe",
        "number_of_trades",
        "pct_winning",
        "win_loss_ratio",
    ])?;
    for s in &runs {
        w.write_record([
            s.run_name.clone(),
            s.strategy.clone(),
            s.interval.to_string(),
            s.lambda.to_string(),
            s.tc.to_string(),
            s.total_return.to_string(),
            s.annualized_return.to_string(),
            s.annualized_sigma.to_string(),
            s.sharpe.map(|v| v.to_string()).unwrap_or_default(),
            s.indicators.number_of_trades.to_string(),
            s.indicators.pct_winning.to_string(),
            s.indicators.win_loss_ratio.to_string(),
        ])?;
        println!(
            "{:<20} {:<4} return {:>9.4}%  annualized {:>9.4}%  sharpe {}",
            s.run_name,
            s.strategy,
            s.total_return * 100.0,
            s.annualized_return * 100.0,
            s.sharpe.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
        );
    }
    w.flush()?;
    Ok(runs)
}
