//! Shapley values of cooperative games whose outcome is a per-sample vector.
//!
//! Values follow the loss convention used for pruning: a game maps the set
//! of *retained* players to a loss, and a player's attribution is the
//! expected loss increase when it is removed. Per sample, attributions sum
//! to `v(∅) - v(P)`.

mod axioms;
mod exact;
mod sampling;

use std::ops::Range;

pub use axioms::{axiom_residuals, linearity_gap, AxiomChecks, AxiomReport, LinearCombination};
pub use exact::{exact_shapley, EXACT_LIMIT};
pub use sampling::{permutation, sampled_shapley};

use crate::error::{Error, Result};

/// Set of retained players.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Coalition(Vec<bool>);

impl Coalition {
    pub fn full(players: usize) -> Self {
        Coalition(vec![true; players])
    }

    pub fn empty(players: usize) -> Self {
        Coalition(vec![false; players])
    }

    /// Players whose bit is set in `bits` are retained.
    pub fn from_bits(bits: u64, players: usize) -> Self {
        Coalition((0..players).map(|i| bits >> i & 1 == 1).collect())
    }

    pub fn from_members(members: &[usize], players: usize) -> Self {
        let mut c = Self::empty(players);
        for &m in members {
            c.0[m] = true;
        }
        c
    }

    pub fn players(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, player: usize) -> bool {
        self.0[player]
    }

    pub fn insert(&mut self, player: usize) {
        self.0[player] = true;
    }

    pub fn remove(&mut self, player: usize) {
        self.0[player] = false;
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Players not in the coalition, ascending.
    pub fn absent(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| !self.0[i]).collect()
    }

    pub fn as_bits(&self) -> u64 {
        self.0.iter().enumerate().filter(|(_, &b)| b).fold(0, |acc, (i, _)| acc | 1 << i)
    }
}

/// A characteristic function with a per-sample outcome.
///
/// Implementations must be deterministic and safe to evaluate concurrently.
pub trait Game: Sync {
    fn players(&self) -> usize;

    /// Number of samples `M` in every outcome vector.
    fn samples(&self) -> usize;

    /// Outcome for `coalition` restricted to the samples in `samples`.
    fn value(&self, coalition: &Coalition, samples: Range<usize>) -> Result<Vec<f64>>;

    /// Outcomes along a removal path: row `t` (of `order.len() + 1`, each
    /// `samples.len()` wide) holds the value after the first `t` players of
    /// `order` were removed from the full coalition.
    ///
    /// Games that can update incrementally should override this.
    fn removal_path(&self, order: &[usize], samples: Range<usize>) -> Result<Vec<f64>> {
        let mut coalition = Coalition::full(self.players());
        let mut rows = Vec::with_capacity((order.len() + 1) * samples.len());
        rows.extend(self.value(&coalition, samples.clone())?);
        for &p in order {
            coalition.remove(p);
            rows.extend(self.value(&coalition, samples.clone())?);
        }
        Ok(rows)
    }
}

impl<G: Game + ?Sized> Game for &G {
    fn players(&self) -> usize {
        (**self).players()
    }
    fn samples(&self) -> usize {
        (**self).samples()
    }
    fn value(&self, coalition: &Coalition, samples: Range<usize>) -> Result<Vec<f64>> {
        (**self).value(coalition, samples)
    }
    fn removal_path(&self, order: &[usize], samples: Range<usize>) -> Result<Vec<f64>> {
        (**self).removal_path(order, samples)
    }
}

/// A game given by an explicit table: `values[bits]` is the outcome vector
/// of the coalition whose members are the set bits.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGame {
    players: usize,
    values: Vec<Vec<f64>>,
}

impl TableGame {
    pub fn new(players: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        if players > EXACT_LIMIT || values.len() != 1 << players {
            return Err(Error::config(format!(
                "a {players}-player table needs {} entries, got {}",
                1u64.checked_shl(players as u32).unwrap_or(0),
                values.len()
            )));
        }
        let m = values[0].len();
        if m == 0 || values.iter().any(|v| v.len() != m) {
            return Err(Error::config("table rows must be non-empty and equally long"));
        }
        Ok(TableGame { players, values })
    }

    /// Builds the table by evaluating `f` on every coalition.
    pub fn from_fn(players: usize, f: impl Fn(&Coalition) -> Vec<f64>) -> Result<Self> {
        let values = (0..1u64 << players).map(|bits| f(&Coalition::from_bits(bits, players))).collect();
        Self::new(players, values)
    }
}

impl Game for TableGame {
    fn players(&self) -> usize {
        self.players
    }

    fn samples(&self) -> usize {
        self.values[0].len()
    }

    fn value(&self, coalition: &Coalition, samples: Range<usize>) -> Result<Vec<f64>> {
        Ok(self.values[coalition.as_bits() as usize][samples].to_vec())
    }
}

/// Per-sample, per-player attributions `R` (`M × N`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    values: Vec<f64>,
    samples: usize,
    players: usize,
    permutations: usize,
    seed: Option<u64>,
}

impl AttributionMatrix {
    pub(crate) fn new(
        values: Vec<f64>,
        samples: usize,
        players: usize,
        permutations: usize,
        seed: Option<u64>,
    ) -> Self {
        debug_assert_eq!(values.len(), samples * players);
        AttributionMatrix { values, samples, players, permutations, seed }
    }

    /// Wraps a row-major `samples × players` matrix of per-sample scores.
    pub fn from_values(values: Vec<f64>, samples: usize, players: usize) -> Result<Self> {
        if samples == 0 || values.len() != samples * players {
            return Err(Error::shape(format!("{} values do not form a {samples}x{players} matrix", values.len())));
        }
        Ok(Self::new(values, samples, players, 0, None))
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn players(&self) -> usize {
        self.players
    }

    /// Permutations sampled; 0 for exact enumeration.
    pub fn permutations(&self) -> usize {
        self.permutations
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, sample: usize, player: usize) -> f64 {
        self.values[sample * self.players + player]
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        &self.values[sample * self.players..(sample + 1) * self.players]
    }

    pub fn column(&self, player: usize) -> Vec<f64> {
        (0..self.samples).map(|s| self.get(s, player)).collect()
    }

    /// Mean over samples, per player.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![Kahan::default(); self.players];
        for row in self.values.chunks(self.players) {
            for (a, &v) in acc.iter_mut().zip(row) {
                a.add(v);
            }
        }
        acc.iter().map(|a| a.total() / self.samples as f64).collect()
    }

    /// Population standard deviation over samples, per player.
    pub fn std(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut acc = vec![Kahan::default(); self.players];
        for row in self.values.chunks(self.players) {
            for ((a, &v), mu) in acc.iter_mut().zip(row).zip(&mean) {
                a.add((v - mu) * (v - mu));
            }
        }
        acc.iter().map(|a| (a.total() / self.samples as f64).sqrt()).collect()
    }
}

/// Compensated (Kahan–Babuška) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Samples per work item; fixed so results never depend on thread count.
pub(crate) const SAMPLE_CHUNK: usize = 256;

pub(crate) fn sample_chunks(m: usize, chunk: usize) -> Vec<Range<usize>> {
    (0..m).step_by(chunk.max(1)).map(|s| s..(s + chunk).min(m)).collect()
}
