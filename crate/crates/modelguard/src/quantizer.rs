//! Maps real regression outputs onto discrete bins so regression can be
//! validated like classification. Classification outputs pass through as
//! identity.

use serde::{Deserialize, Serialize};

use crate::data::OutputVector;
use crate::schema::{Schema, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputQuantizer {
    /// Class labels are already discrete.
    Identity { classes: usize },
    /// Enlarge by `factor`, then bin [lo, hi) into `bins` half-open bins
    /// with the top edge closed.
    Binned {
        factor: f64,
        bins: usize,
        lo: f64,
        hi: f64,
    },
}

impl OutputQuantizer {
    pub fn bin_count(&self) -> usize {
        match self {
            Self::Identity { classes } => *classes,
            Self::Binned { bins, .. } => *bins,
        }
    }

    /// Returns (bin index, clamped). Out-of-range values clamp to the edge
    /// bins rather than erroring.
    pub fn quantize(&self, y: f64) -> (usize, bool) {
        match *self {
            Self::Identity { classes } => {
                let k = y.max(0.0) as usize;
                if k >= classes {
                    (classes - 1, true)
                } else {
                    (k, y < 0.0)
                }
            }
            Self::Binned { factor, bins, lo, hi } => {
                let enlarged = y * factor;
                let width = (hi - lo) / bins as f64;
                if enlarged < lo {
                    return (0, true);
                }
                if enlarged >= hi {
                    // hi itself maps to the top bin without a clamp flag
                    return (bins - 1, enlarged > hi);
                }
                let b = ((enlarged - lo) / width) as usize;
                (b.min(bins - 1), false)
            }
        }
    }

    /// Raw-unit center of bin `k`; inverse of quantize up to half a bin width.
    pub fn dequantize(&self, k: usize) -> f64 {
        match *self {
            Self::Identity { .. } => k as f64,
            Self::Binned { factor, bins, lo, hi } => {
                let width = (hi - lo) / bins as f64;
                (lo + (k as f64 + 0.5) * width) / factor
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub outputs: Vec<OutputQuantizer>,
}

impl Quantizer {
    pub fn from_schema(schema: &Schema) -> Self {
        let outputs = schema
            .outputs
            .iter()
            .map(|o| match o.task {
                TaskKind::Classification { classes } => OutputQuantizer::Identity { classes },
                TaskKind::Regression { factor, bins, lo, hi } => OutputQuantizer::Binned {
                    factor,
                    bins,
                    lo,
                    hi,
                },
            })
            .collect();
        Self { outputs }
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    /// Quantizes every output dimension; `clamped` is true if any dimension
    /// fell outside its configured range.
    pub fn quantize(&self, y: &OutputVector) -> (Vec<usize>, bool) {
        let mut bins = Vec::with_capacity(self.outputs.len());
        let mut clamped = false;
        for (q, &v) in self.outputs.iter().zip(y.values()) {
            let (k, c) = q.quantize(v);
            bins.push(k);
            clamped |= c;
        }
        (bins, clamped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_bins() -> OutputQuantizer {
        OutputQuantizer::Binned {
            factor: 10.0,
            bins: 10,
            lo: 0.0,
            hi: 10.0,
        }
    }

    #[test]
    fn citric_acid_style_value() {
        // 0.46 * 10 = 4.6, bin width 1 -> bin 4
        assert_eq!(ten_bins().quantize(0.46), (4, false));
    }

    #[test]
    fn lower_edge_maps_to_bin_zero() {
        assert_eq!(ten_bins().quantize(0.0), (0, false));
    }

    #[test]
    fn top_edge_maps_to_last_bin() {
        assert_eq!(ten_bins().quantize(1.0), (9, false));
    }

    #[test]
    fn out_of_range_clamps_and_flags() {
        assert_eq!(ten_bins().quantize(-0.5), (0, true));
        assert_eq!(ten_bins().quantize(2.0), (9, true));
    }

    #[test]
    fn classification_is_identity() {
        let q = OutputQuantizer::Identity { classes: 6 };
        assert_eq!(q.quantize(3.0), (3, false));
        assert_eq!(q.quantize(7.0), (5, true));
    }

    #[test]
    fn monotone_non_decreasing() {
        let q = ten_bins();
        let mut prev = 0;
        for i in 0..2000 {
            let y = -0.2 + i as f64 * 0.001;
            let (k, _) = q.quantize(y);
            assert!(k >= prev, "quantize not monotone at y={y}");
            prev = k;
        }
    }

    #[test]
    fn bin_center_round_trip_within_half_width() {
        let q = ten_bins();
        for k in 0..10 {
            let y = q.dequantize(k);
            let (back, clamped) = q.quantize(y);
            assert_eq!(back, k);
            assert!(!clamped);
            // quantize(dequantize(quantize(y))) is idempotent on centers
            assert_eq!(q.quantize(q.dequantize(back)).0, k);
        }
    }
}
