//! Position sizing for pairs that signal an open at the same timestamp.
//!
//! Each signalled pair `n` gets a long weight `w_l ∈ [0, 1]` on the currency
//! it spends and a short weight `w_s ∈ [−1, 0]` on the currency it receives,
//! both fractions of that currency's capital. The allocator maximizes
//!
//! ```text
//! Σ W_n · (EP_n ⊙ [1, −1])ᵀ  −  λ Σ W_n · (COV_n ⊙ [[1, −1], [−1, 1]]) · W_nᵀ
//! ```
//!
//! subject to the boxes on `w_l`, `w_s`, the per-currency budget
//! `tw_c + Σ w_long − Σ w_short ≤ 1`, and the neutrality relation
//! `−w_s (1 + tc) P_long = w_l (1 − tc) P_short`. Neutrality fixes
//! `w_s = −κ w_l`, leaving one free variable per pair.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::PriceMatrix;
use crate::qp::{solve_qp, QpProblem};
use crate::signal::Direction;

/// Weights below this are treated as "do not open".
pub const MIN_WEIGHT: f64 = 1e-12;

/// How the neutrality relation turns a long weight into a short weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Neutrality {
    /// `−w_s (1 + tc) P_long = w_l (1 − tc) P_short`, prices multiplying weights.
    #[default]
    PriceWeighted,
    /// `−w_s (1 + tc) / P_long = w_l (1 − tc) / P_short`, equal asset quantity
    /// per unit weight.
    EthQuantity,
}

impl Neutrality {
    /// `κ` such that `w_short = −κ · w_long`.
    pub fn ratio(self, tc: f64, price_long: f64, price_short: f64) -> f64 {
        match self {
            Neutrality::PriceWeighted => (1.0 - tc) * price_short / ((1.0 + tc) * price_long),
            Neutrality::EthQuantity => (1.0 - tc) * price_long / ((1.0 + tc) * price_short),
        }
    }
}

/// Per-currency statistics of per-interval log returns over the formation
/// window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationReturns {
    pub mean: Vec<f64>,
    /// Sample covariance matrix, `|c| × |c|`.
    pub cov: Vec<Vec<f64>>,
}

impl FormationReturns {
    /// From a price matrix (not log prices) restricted to the formation window.
    pub fn from_prices(m: &PriceMatrix) -> Result<Self> {
        if m.len() < 3 {
            return Err(Error::Config("formation window too short for return statistics".into()));
        }
        let rets: Vec<Vec<f64>> = m
            .rows()
            .iter()
            .map(|row| row.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
            .collect();
        let n = (m.len() - 1) as f64;
        let mean: Vec<f64> = rets.iter().map(|r| r.iter().sum::<f64>() / n).collect();
        let k = rets.len();
        let mut cov = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let s: f64 = rets[i]
                    .iter()
                    .zip(&rets[j])
                    .map(|(a, b)| (a - mean[i]) * (b - mean[j]))
                    .sum::<f64>()
                    / (n - 1.0);
                cov[i][j] = s;
                cov[j][i] = s;
            }
        }
        Ok(FormationReturns { mean, cov })
    }
}

/// A pair that signalled an open, with its currency rows already resolved
/// into (spent, received).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSignal {
    /// Index of the pair in the backtest's spread list.
    pub pair_index: usize,
    pub label: String,
    pub rows: (usize, usize),
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationEntry {
    pub pair_index: usize,
    pub label: String,
    pub long: usize,
    pub short: usize,
    /// `(mr · r_long, mr · r_short)`.
    pub ep: [f64; 2],
    /// Covariance of `(long, short)` returns.
    pub cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub currencies: Vec<String>,
    pub entries: Vec<AllocationEntry>,
    pub tw: Vec<f64>,
    pub tc: f64,
    pub lambda: f64,
    pub prices: Vec<f64>,
    #[serde(default)]
    pub neutrality: Neutrality,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairWeight {
    pub long: f64,
    pub short: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Weights {
    pub pairs: Vec<PairWeight>,
}

impl Weights {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Solver output with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub weights: Weights,
    pub objective: f64,
    pub kkt_residual: f64,
    /// Entry indices forced to zero because a currency budget was exhausted.
    pub excluded: Vec<usize>,
    /// Entry indices whose covariance needed eigenvalue clamping.
    pub clamped: Vec<usize>,
}

/// Assembles the allocation problem for the pairs that signal an open now.
#[allow(clippy::too_many_arguments)]
pub fn build_problem(
    currencies: &[String],
    signals: &[OpenSignal],
    mean_reversion: &[Option<f64>],
    returns: &FormationReturns,
    tw: &[f64],
    tc: f64,
    lambda: f64,
    prices: &[f64],
) -> Result<AllocationProblem> {
    let k = currencies.len();
    if tw.len() != k || prices.len() != k || returns.mean.len() != k {
        return Err(Error::Config("per-currency inputs disagree on currency count".into()));
    }
    let entries = signals
        .iter()
        .map(|s| {
            let mr = mean_reversion
                .get(s.pair_index)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Config(format!("no formation statistics for {}", s.label)))?;
            let (long, short) = s.direction.legs(s.rows);
            Ok(AllocationEntry {
                pair_index: s.pair_index,
                label: s.label.clone(),
                long,
                short,
                ep: [mr * returns.mean[long], mr * returns.mean[short]],
                cov: [
                    [returns.cov[long][long], returns.cov[long][short]],
                    [returns.cov[short][long], returns.cov[short][short]],
                ],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p = AllocationProblem {
        currencies: currencies.to_vec(),
        entries,
        tw: tw.to_vec(),
        tc,
        lambda,
        prices: prices.to_vec(),
        neutrality: Neutrality::PriceWeighted,
    };
    p.validate()?;
    Ok(p)
}

impl AllocationProblem {
    pub fn validate(&self) -> Result<()> {
        let k = self.currencies.len();
        if self.tw.len() != k || self.prices.len() != k {
            return Err(Error::Config("per-currency inputs disagree on currency count".into()));
        }
        if !(0.0..=0.05).contains(&self.tc) {
            return Err(Error::validation(
                "tc",
                format!("must be in [0, 0.05], got {}", self.tc),
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::validation(
                "lambda",
                format!("must be >= 0, got {}", self.lambda),
            ));
        }
        if self.prices.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::Config("prices must be positive".into()));
        }
        for e in &self.entries {
            if e.long >= k || e.short >= k || e.long == e.short {
                return Err(Error::Config(format!("bad currency rows for {}", e.label)));
            }
            if e.ep.iter().chain(e.cov.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("non-finite statistics for {}", e.label)));
            }
        }
        Ok(())
    }

    pub fn kappa(&self, entry: &AllocationEntry) -> f64 {
        self.neutrality
            .ratio(self.tc, self.prices[entry.long], self.prices[entry.short])
    }

    /// Short weight implied by neutrality for a given long weight.
    pub fn short_for(&self, entry: &AllocationEntry, long: f64) -> f64 {
        if long == 0.0 {
            0.0
        } else {
            -self.kappa(entry) * long
        }
    }

    /// The bi-objective value of a weight matrix, evaluated term by term.
    pub fn objective(&self, w: &Weights) -> f64 {
        self.entries
            .iter()
            .zip(&w.pairs)
            .map(|(e, pw)| self.entry_objective(e, pw.long, pw.short))
            .sum()
    }

    /// `W_n · (EP_n ⊙ [1, −1])ᵀ − λ W_n · (COV_n ⊙ [[1, −1], [−1, 1]]) · W_nᵀ`
    pub fn entry_objective(&self, e: &AllocationEntry, long: f64, short: f64) -> f64 {
        let profit = long * e.ep[0] - short * e.ep[1];
        let cov = psd_cov(e.cov).0;
        let risk = long * long * cov[0][0] - 2.0 * long * short * cov[0][1] + short * short * cov[1][1];
        profit - self.lambda * risk
    }

    /// Per-currency budget usage `tw_c + Σ longs − Σ shorts`.
    pub fn budget_usage(&self, w: &Weights) -> Vec<f64> {
        let mut used = self.tw.clone();
        for (e, pw) in self.entries.iter().zip(&w.pairs) {
            used[e.long] += pw.long;
            used[e.short] -= pw.short;
        }
        used
    }
}

/// Symmetrizes a 2×2 covariance and clamps negative eigenvalues at zero.
fn psd_cov(cov: [[f64; 2]; 2]) -> ([[f64; 2]; 2], bool) {
    let off = 0.5 * (cov[0][1] + cov[1][0]);
    let sym = Matrix2::new(cov[0][0], off, off, cov[1][1]);
    let det = sym[(0, 0)] * sym[(1, 1)] - off * off;
    if sym[(0, 0)] >= 0.0 && sym[(1, 1)] >= 0.0 && det >= 0.0 {
        return ([[sym[(0, 0)], off], [off, sym[(1, 1)]]], false);
    }
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let fixed = eig.eigenvectors * Matrix2::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let o = 0.5 * (fixed[(0, 1)] + fixed[(1, 0)]);
    ([[fixed[(0, 0)], o], [o, fixed[(1, 1)]]], true)
}

/// Solves the allocation problem with the active-set QP solver.
pub fn solve(p: &AllocationProblem) -> Result<Allocation> {
    p.validate()?;
    let n = p.entries.len();
    let mut weights = vec![PairWeight { long: 0.0, short: 0.0 }; n];
    let budget: Vec<f64> = p.tw.iter().map(|t| 1.0 - t).collect();

    let mut excluded = Vec::new();
    let mut clamped = Vec::new();
    let mut free = Vec::new();
    for (i, e) in p.entries.iter().enumerate() {
        if budget[e.long] <= 0.0 || budget[e.short] <= 0.0 {
            log::debug!("{}: currency budget exhausted, pair gets zero weight", e.label);
            excluded.push(i);
        } else {
            free.push(i);
        }
    }

    let mut kkt_residual = 0.0;
    if !free.is_empty() {
        let nv = free.len();
        let kappa: Vec<f64> = free.iter().map(|&i| p.kappa(&p.entries[i])).collect();
        let mut h = DMatrix::zeros(nv, nv);
        let mut c = DVector::zeros(nv);
        for (v, &i) in free.iter().enumerate() {
            let e = &p.entries[i];
            let (cov, was_clamped) = psd_cov(e.cov);
            if was_clamped {
                log::debug!("{}: covariance not PSD, eigenvalues clamped", e.label);
                clamped.push(i);
            }
            let k = kappa[v];
            let q = cov[0][0] + 2.0 * k * cov[0][1] + k * k * cov[1][1];
            h[(v, v)] = 2.0 * p.lambda * q.max(0.0);
            c[v] = -(e.ep[0] + k * e.ep[1]);
        }

        // Rows: long box, short box (κ x ≤ 1), lower bound, then one budget
        // row per currency that any free pair touches.
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for v in 0..nv {
            let mut r = vec![0.0; nv];
            r[v] = 1.0;
            rows.push((r, 1.0));
            let mut r = vec![0.0; nv];
            r[v] = kappa[v];
            rows.push((r, 1.0));
            let mut r = vec![0.0; nv];
            r[v] = -1.0;
            rows.push((r, 0.0));
        }
        for (ci, b) in budget.iter().enumerate() {
            let mut r = vec![0.0; nv];
            for (v, &i) in free.iter().enumerate() {
                let e = &p.entries[i];
                if e.long == ci {
                    r[v] += 1.0;
                }
                if e.short == ci {
                    r[v] += kappa[v];
                }
            }
            if r.iter().any(|x| *x != 0.0) {
                rows.push((r, *b));
            }
        }
        let m = rows.len();
        let a = DMatrix::from_fn(m, nv, |r, col| rows[r].0[col]);
        let b = DVector::from_iterator(m, rows.iter().map(|r| r.1));
        let qp = QpProblem { h, c, a, b };
        let sol = solve_qp(&qp, DVector::zeros(nv))?;
        kkt_residual = sol.kkt_residual;
        for (v, &i) in free.iter().enumerate() {
            let long = sol.x[v].clamp(0.0, 1.0);
            let long = if long < MIN_WEIGHT { 0.0 } else { long };
            weights[i] = PairWeight {
                long,
                short: p.short_for(&p.entries[i], long),
            };
        }
    }

    let weights = Weights { pairs: weights };
    Ok(Allocation {
        objective: p.objective(&weights),
        weights,
        kkt_residual,
        excluded,
        clamped,
    })
}

/// Exhaustive grid search over long weights `0, step, 2·step, …, 1`, kept
/// as an independent check on [`solve`]. Feasibility is tested directly on
/// the weight boxes and budgets; ties go to the smallest total weight, then
/// the lexicographically smallest weight vector.
pub fn brute_force_solve(p: &AllocationProblem, step: f64) -> Result<Weights> {
    p.validate()?;
    let n = p.entries.len();
    if n > 4 {
        return Err(Error::Config(format!("brute force supports at most 4 pairs, got {n}")));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step must be in (0, 1], got {step}")));
    }
    if n == 0 {
        return Ok(Weights::default());
    }
    let ticks = (1.0 / step).round() as usize;
    let grid: Vec<f64> = (0..=ticks).map(|i| (i as f64 * step).min(1.0)).collect();
    const TOL: f64 = 1e-12;

    // Neutrality from the literal relation, independent of `kappa`.
    let short_of = |e: &AllocationEntry, long: f64| {
        let (pl, ps, tc) = (p.prices[e.long], p.prices[e.short], p.tc);
        match p.neutrality {
            Neutrality::PriceWeighted => -long * (1.0 - tc) * ps / ((1.0 + tc) * pl),
            Neutrality::EthQuantity => -long * (1.0 - tc) * pl / ((1.0 + tc) * ps),
        }
    };
    // value[n][g] = objective contribution of entry n at grid point g
    let value: Vec<Vec<f64>> = p
        .entries
        .iter()
        .map(|e| grid.iter().map(|&l| p.entry_objective(e, l, short_of(e, l))).collect())
        .collect();

    struct Search<'a> {
        p: &'a AllocationProblem,
        grid: &'a [f64],
        value: &'a [Vec<f64>],
        short_of: &'a dyn Fn(&AllocationEntry, f64) -> f64,
        usage: Vec<f64>,
        picks: Vec<usize>,
        best: Option<(f64, f64, Vec<f64>)>,
    }

    impl Search<'_> {
        fn visit(&mut self, depth: usize, objective: f64) {
            if depth == self.picks.len() {
                let current: Vec<f64> = self.picks.iter().map(|&g| self.grid[g]).collect();
                let total: f64 = current.iter().sum();
                let better = match &self.best {
                    None => true,
                    Some((bo, bt, bv)) => {
                        objective > *bo || (objective == *bo && (total < *bt || (total == *bt && current < *bv)))
                    }
                };
                if better {
                    self.best = Some((objective, total, current));
                }
                return;
            }
            let e = &self.p.entries[depth];
            for g in 0..self.grid.len() {
                let long = self.grid[g];
                let short = (self.short_of)(e, long);
                // Usage grows with the long weight, so the first infeasible
                // grid point ends this branch.
                if short < -1.0 - TOL
                    || self.usage[e.long] + long > 1.0 + TOL
                    || self.usage[e.short] - short > 1.0 + TOL
                {
                    break;
                }
                self.usage[e.long] += long;
                self.usage[e.short] -= short;
                self.picks[depth] = g;
                self.visit(depth + 1, objective + self.value[depth][g]);
                self.usage[e.long] -= long;
                self.usage[e.short] += short;
            }
            self.picks[depth] = 0;
        }
    }

    let mut search = Search {
        p,
        grid: &grid,
        value: &value,
        short_of: &short_of,
        usage: p.tw.clone(),
        picks: vec![0; n],
        best: None,
    };
    search.visit(0, 0.0);
    let best = search.best.map(|b| b.2).unwrap_or_else(|| vec![0.0; n]);
    Ok(Weights {
        pairs: p
            .entries
            .iter()
            .zip(best)
            .map(|(e, long)| PairWeight {
                long,
                short: if long == 0.0 { 0.0 } else { short_of(e, long) },
            })
            .collect(),
    })
}

/// Audit record of one allocation decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDump {
    pub timestamp: i64,
    pub problem: AllocationProblem,
    pub solution: Allocation,
}
