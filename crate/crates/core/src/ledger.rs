//! Fiat balances, open pair positions and the four-leg conversions.
//!
//! Opening a position spends one currency on the asset and sells the asset
//! straight into the other currency in the same interval, so no asset
//! balance survives an interval. Closing reverses both legs.
//!
//! Each currency tracks its own settled capital plus two in-flight
//! quantities: amounts spent into open positions (`out`) and amounts received
//! from them (`held`), which must stay in the balance until the position is
//! closed. The committed fraction `(out + held) / (balance + out)` is the
//! trading weight `tw` seen by the allocator and always lies in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::allocator::{PairWeight, MIN_WEIGHT};
use crate::error::{Error, Result};
use crate::signal::Direction;

/// Relative tolerance for spend-versus-free-balance checks.
const SPEND_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub pair_index: usize,
    pub pair: (String, String),
    pub direction: Direction,
    pub opened_at: i64,
    /// `(currency row, amount)` paid out at open.
    pub spent: (usize, f64),
    /// `(currency row, amount)` received at open.
    pub received: (usize, f64),
    /// Asset bought with the spent currency.
    pub eth_bought: f64,
    /// Asset sold for the received currency.
    pub eth_sold: f64,
    pub entry_weights: PairWeight,
    /// Prices of (spent, received) currencies at open.
    pub entry_prices: (f64, f64),
}

impl Position {
    /// The asset quantity that transited the ledger.
    pub fn eth_transited(&self) -> f64 {
        self.eth_bought
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Spent the pair's first currency (long the spread).
    Long,
    /// Spent the pair's second currency (short the spread).
    Short,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Long => "long",
            Side::Short => "short",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedTrade {
    pub pair: (String, String),
    pub direction: Direction,
    pub side: Side,
    pub open_ts: i64,
    pub close_ts: i64,
    pub holding_hours: f64,
    pub spent_ccy: String,
    pub spent_amt: f64,
    pub recv_ccy: String,
    pub recv_amt: f64,
    pub eth: f64,
    /// Amount of the spent currency returned at close.
    pub returned_amt: f64,
    pub pnl_base: f64,
    /// Closed by the end of the trading period rather than by a signal.
    pub forced: bool,
}

impl RealizedTrade {
    pub fn pair_label(&self) -> String {
        format!("{}:{}", self.pair.0, self.pair.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    currencies: Vec<String>,
    settled: Vec<f64>,
    positions: Vec<Position>,
    out: Vec<f64>,
    held: Vec<f64>,
}

impl Ledger {
    pub fn new(currencies: Vec<String>, balances: Vec<f64>) -> Result<Self> {
        if currencies.len() != balances.len() {
            return Err(Error::Config("one balance per currency required".into()));
        }
        if balances.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::validation("initial_balance", "balances must be finite and >= 0"));
        }
        let k = currencies.len();
        Ok(Ledger {
            currencies,
            settled: balances,
            positions: Vec::new(),
            out: vec![0.0; k],
            held: vec![0.0; k],
        })
    }

    pub fn currencies(&self) -> &[String] {
        &self.currencies
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn balance(&self, c: usize) -> f64 {
        if self.out[c] == 0.0 && self.held[c] == 0.0 {
            return self.settled[c];
        }
        (self.settled[c] - self.out[c] + self.held[c]).max(0.0)
    }

    pub fn balances(&self) -> Vec<f64> {
        (0..self.currencies.len()).map(|c| self.balance(c)).collect()
    }

    /// Balance plus amounts out in open positions: the base that weights
    /// are fractions of.
    pub fn capital(&self, c: usize) -> f64 {
        self.balance(c) + self.out[c]
    }

    /// Balance not earmarked for closing open positions.
    pub fn free(&self, c: usize) -> f64 {
        (self.balance(c) - self.held[c]).max(0.0)
    }

    pub fn committed(&self, c: usize) -> f64 {
        let cap = self.capital(c);
        if cap <= 0.0 {
            0.0
        } else {
            (self.out[c] + self.held[c]) / cap
        }
    }

    pub fn trading_weights(&self) -> Vec<f64> {
        (0..self.currencies.len()).map(|c| self.committed(c)).collect()
    }

    /// Value of all balances in `base` using cross rates implied by the
    /// asset prices: `FX(c → base) = P_base / P_c`.
    pub fn value_in(&self, base: usize, prices: &[f64]) -> f64 {
        (0..self.currencies.len())
            .map(|c| self.balance(c) * prices[base] / prices[c])
            .sum()
    }

    fn refresh(&mut self) {
        self.out.iter_mut().for_each(|v| *v = 0.0);
        self.held.iter_mut().for_each(|v| *v = 0.0);
        for p in &self.positions {
            self.out[p.spent.0] += p.spent.1;
            self.held[p.received.0] += p.received.1;
        }
    }

    pub fn is_open(&self, pair_index: usize) -> bool {
        self.positions.iter().any(|p| p.pair_index == pair_index)
    }

    /// Opens a position spending `amount` of the spent currency. Prefer
    /// [`Ledger::open_position`], which sizes from allocator weights.
    #[allow(clippy::too_many_arguments)]
    pub fn open_amount(
        &mut self,
        pair_index: usize,
        pair: (usize, usize),
        direction: Direction,
        amount: f64,
        weights: PairWeight,
        prices: &[f64],
        tc: f64,
        t: i64,
    ) -> Result<&Position> {
        if self.is_open(pair_index) {
            return Err(Error::InfeasibleWeight(format!(
                "pair {pair_index} already has an open position"
            )));
        }
        if !(amount > 0.0) || !amount.is_finite() {
            return Err(Error::InfeasibleWeight("position must spend a positive amount".into()));
        }
        let (spend_c, recv_c) = direction.legs(pair);
        let free = self.free(spend_c);
        if amount > free * (1.0 + SPEND_TOL) {
            return Err(Error::InfeasibleWeight(format!(
                "spending {amount} {} exceeds free balance {free}",
                self.currencies[spend_c]
            )));
        }
        let amount = amount.min(free);
        let (p_spend, p_recv) = (prices[spend_c], prices[recv_c]);
        let eth_bought = amount * (1.0 - tc) / p_spend;
        let eth_sold = eth_bought;
        let received = eth_sold * p_recv * (1.0 - tc);
        self.positions.push(Position {
            pair_index,
            pair: (self.currencies[pair.0].clone(), self.currencies[pair.1].clone()),
            direction,
            opened_at: t,
            spent: (spend_c, amount),
            received: (recv_c, received),
            eth_bought,
            eth_sold,
            entry_weights: weights,
            entry_prices: (p_spend, p_recv),
        });
        self.refresh();
        Ok(self.positions.last().expect("just pushed"))
    }

    /// Opens a position sized by the allocator: spends `w_long` of the spent
    /// currency's capital, buys the asset and sells it into the other
    /// currency at the current prices, paying `tc` on both legs.
    #[allow(clippy::too_many_arguments)]
    pub fn open_position(
        &mut self,
        pair_index: usize,
        pair: (usize, usize),
        direction: Direction,
        weights: PairWeight,
        prices: &[f64],
        tc: f64,
        t: i64,
    ) -> Result<&Position> {
        if !(weights.long > MIN_WEIGHT) || weights.long > 1.0 + SPEND_TOL {
            return Err(Error::InfeasibleWeight(format!(
                "long weight {} outside (0, 1]",
                weights.long
            )));
        }
        let (spend_c, _) = direction.legs(pair);
        let amount = weights.long * self.capital(spend_c);
        self.open_amount(pair_index, pair, direction, amount, weights, prices, tc, t)
    }

    /// Closes the position of `pair_index`, converting the full received
    /// amount back into the spent currency. P&L is valued in `base` at the
    /// close-time implied cross rate.
    pub fn close_position(
        &mut self,
        pair_index: usize,
        prices: &[f64],
        tc: f64,
        t: i64,
        base: usize,
    ) -> Result<RealizedTrade> {
        let idx = self
            .positions
            .iter()
            .position(|p| p.pair_index == pair_index)
            .ok_or_else(|| Error::InfeasibleWeight(format!("pair {pair_index} has no open position")))?;
        if t <= self.positions[idx].opened_at {
            return Err(Error::Data(format!(
                "close at {t} does not follow open at {}",
                self.positions[idx].opened_at
            )));
        }
        let pos = self.positions.remove(idx);
        let (spend_c, spent) = pos.spent;
        let (recv_c, received) = pos.received;
        let (p_spend, p_recv) = (prices[spend_c], prices[recv_c]);
        let eth_back = received * (1.0 - tc) / p_recv;
        // Same four legs as eth_back · p_spend · (1 − tc), grouped so that
        // unchanged prices cancel exactly.
        let fee = (1.0 - tc).powi(4);
        let returned = spent * fee * ((pos.entry_prices.1 * p_spend) / (pos.entry_prices.0 * p_recv));
        debug_assert!((returned - eth_back * p_spend * (1.0 - tc)).abs() <= 1e-9 * returned.max(1.0));
        self.settled[spend_c] += returned - spent;
        self.refresh();

        let pnl_base = (returned - spent) * prices[base] / p_spend;
        let side = if spend_c == pair_row_first(&pos, &self.currencies) {
            Side::Long
        } else {
            Side::Short
        };
        Ok(RealizedTrade {
            pair: pos.pair.clone(),
            direction: pos.direction,
            side,
            open_ts: pos.opened_at,
            close_ts: t,
            holding_hours: (t - pos.opened_at) as f64 / 3600.0,
            spent_ccy: self.currencies[spend_c].clone(),
            spent_amt: spent,
            recv_ccy: self.currencies[recv_c].clone(),
            recv_amt: received,
            eth: pos.eth_bought,
            returned_amt: returned,
            pnl_base,
            forced: false,
        })
    }

    pub fn open_pairs(&self) -> Vec<usize> {
        self.positions.iter().map(|p| p.pair_index).collect()
    }
}

fn pair_row_first(pos: &Position, currencies: &[String]) -> usize {
    currencies.iter().position(|c| *c == pos.pair.0).unwrap_or(usize::MAX)
}

/// Re-applies a trade log to starting balances.
pub fn replay(currencies: &[String], initial: &[f64], trades: &[RealizedTrade]) -> Vec<f64> {
    let mut balances = initial.to_vec();
    for t in trades {
        if let Some(c) = currencies.iter().position(|c| *c == t.spent_ccy) {
            balances[c] += t.returned_amt - t.spent_amt;
        }
    }
    balances
}
