//! Fixed-bin online histograms over a single feature, plus the Jaccard
//! similarity used as the distribution quality metric.
//!
//! Counts are exact integers; normalization happens at evaluation time so
//! online updates never lose precision. Bins are half-open [edge, edge')
//! with the top edge closed. Samples outside [lo, hi] land in dedicated
//! underflow/overflow counters and stay part of the mass function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 32;
pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub total: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(lo < hi, "histogram range must be non-empty");
        assert!(bins > 0, "histogram needs at least one bin");
        Self {
            lo,
            hi,
            bins,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
            total: 0,
        }
    }

    pub fn same_binning(&self, other: &Histogram) -> bool {
        self.bins == other.bins && self.lo == other.lo && self.hi == other.hi
    }

    /// Slot index in the extended layout: 0 = underflow, 1..=bins interior,
    /// bins + 1 = overflow.
    fn slot(&self, x: f64) -> usize {
        if x < self.lo {
            0
        } else if x > self.hi {
            self.bins + 1
        } else {
            let width = (self.hi - self.lo) / self.bins as f64;
            let b = ((x - self.lo) / width) as usize;
            1 + b.min(self.bins - 1)
        }
    }

    pub fn update(&mut self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::Data(format!("non-finite histogram sample {x}")));
        }
        match self.slot(x) {
            0 => self.underflow += 1,
            s if s == self.bins + 1 => self.overflow += 1,
            s => self.counts[s - 1] += 1,
        }
        self.total += 1;
        Ok(())
    }

    /// Removes one previously recorded sample; used by sliding windows.
    pub fn remove(&mut self, x: f64) {
        let slot = self.slot(x);
        let counter = match slot {
            0 => &mut self.underflow,
            s if s == self.bins + 1 => &mut self.overflow,
            s => &mut self.counts[s - 1],
        };
        debug_assert!(*counter > 0 && self.total > 0);
        *counter = counter.saturating_sub(1);
        self.total = self.total.saturating_sub(1);
    }

    fn mass_of_slot(&self, slot: usize, alpha: f64) -> f64 {
        if self.total == 0 && alpha == 0.0 {
            return 0.0;
        }
        let count = match slot {
            0 => self.underflow,
            s if s == self.bins + 1 => self.overflow,
            s => self.counts[s - 1],
        };
        let denom = self.total as f64 + alpha * (self.bins + 2) as f64;
        (count as f64 + alpha) / denom
    }

    /// Normalized mass of the bin containing `x`; 0 for an empty histogram.
    pub fn eval_at(&self, x: f64) -> f64 {
        self.eval_at_smoothed(x, 0.0)
    }

    pub fn eval_at_smoothed(&self, x: f64, alpha: f64) -> f64 {
        self.mass_of_slot(self.slot(x), alpha)
    }

    /// Maximum normalized mass over all slots, under/overflow included.
    pub fn max_mass(&self) -> f64 {
        self.max_mass_smoothed(0.0)
    }

    pub fn max_mass_smoothed(&self, alpha: f64) -> f64 {
        (0..self.bins + 2)
            .map(|s| self.mass_of_slot(s, alpha))
            .fold(0.0, f64::max)
    }

    /// Normalized masses in extended slot order [underflow, interior.., overflow].
    pub fn masses(&self, alpha: f64) -> Vec<f64> {
        (0..self.bins + 2).map(|s| self.mass_of_slot(s, alpha)).collect()
    }
}

/// Jaccard similarity of two equally binned histograms over normalized
/// masses: sum of bin-wise minima over sum of bin-wise maxima plus `eps`.
pub fn jaccard(p: &Histogram, q: &Histogram, eps: f64) -> Result<f64> {
    jaccard_smoothed(p, q, eps, 0.0)
}

pub fn jaccard_smoothed(p: &Histogram, q: &Histogram, eps: f64, alpha: f64) -> Result<f64> {
    if !p.same_binning(q) {
        return Err(Error::BinningMismatch);
    }
    let mut min_sum = 0.0;
    let mut max_sum = 0.0;
    for slot in 0..p.bins + 2 {
        let a = p.mass_of_slot(slot, alpha);
        let b = q.mass_of_slot(slot, alpha);
        min_sum += a.min(b);
        max_sum += a.max(b);
    }
    Ok(min_sum / (max_sum + eps))
}
