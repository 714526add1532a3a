//! Evaluation metrics for foreground maps and the scribble-bias analysis.
//!
//! All metrics take an [`EvalPair`], whose prediction is min-max normalized
//! on construction (a constant map is left unchanged).

mod bias;
mod enhanced;
mod structure;
mod weighted_f;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bias::{
    boundary_distance_histogram, high_response_mask, relative_boundary_distances, DistanceHistogram,
    DistanceSource,
};
pub use enhanced::{e_measure, E_MEASURE_THRESHOLDS};
pub use structure::s_measure;
pub use weighted_f::{nearest_foreground, weighted_f_measure};

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dim, Mask};

/// Machine epsilon of `f64`, used as the guard term in metric denominators.
pub const EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    prediction: Array2<f64>,
    ground_truth: Mask,
}

impl EvalPair {
    /// Validates values in `[0, 1]` and equal shapes, then min-max
    /// normalizes the prediction.
    pub fn new(prediction: ArrayView2<'_, f64>, ground_truth: &Mask) -> Result<Self> {
        ensure_same_dim("ground truth", prediction.dim(), ground_truth.dim())?;
        if prediction.is_empty() {
            return Err(Error::Data("empty prediction".into()));
        }
        if prediction.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("prediction values must lie in [0, 1]".into()));
        }
        let lo = prediction.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = prediction.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let prediction = if hi > lo {
            prediction.mapv(|v| (v - lo) / (hi - lo))
        } else {
            prediction.to_owned()
        };
        Ok(Self {
            prediction,
            ground_truth: ground_truth.clone(),
        })
    }

    /// Builds a pair from a binary prediction.
    pub fn from_masks(prediction: &Mask, ground_truth: &Mask) -> Result<Self> {
        Self::new(prediction.mapv(|b| b as u8 as f64).view(), ground_truth)
    }

    pub fn prediction(&self) -> &Array2<f64> {
        &self.prediction
    }

    pub fn ground_truth(&self) -> &Mask {
        &self.ground_truth
    }

    pub fn len(&self) -> usize {
        self.prediction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prediction.is_empty()
    }

    pub fn flipped_horizontally(&self) -> Self {
        let flip = |a: &Array2<f64>| {
            let mut a = a.clone();
            a.invert_axis(ndarray::Axis(1));
            a.as_standard_layout().to_owned()
        };
        let mut g = self.ground_truth.clone();
        g.invert_axis(ndarray::Axis(1));
        Self {
            prediction: flip(&self.prediction),
            ground_truth: g.as_standard_layout().to_owned(),
        }
    }
}

pub fn mae(pair: &EvalPair) -> f64 {
    pair.prediction
        .iter()
        .zip(pair.ground_truth.iter())
        .map(|(&p, &g)| (p - g as u8 as f64).abs())
        .sum::<f64>()
        / pair.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub mae: f64,
    pub s_measure: f64,
    pub e_measure: f64,
    pub weighted_f: f64,
}

impl MetricScores {
    pub fn of(pair: &EvalPair) -> Self {
        Self {
            mae: mae(pair),
            s_measure: s_measure(pair),
            e_measure: e_measure(pair),
            weighted_f: weighted_f_measure(pair),
        }
    }

    /// Scores every pair in parallel and averages them.
    pub fn mean_over(pairs: &[EvalPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("no prediction/ground-truth pairs to evaluate".into()));
        }
        let all: Vec<Self> = pairs.par_iter().map(Self::of).collect();
        Self::average(&all)
    }

    pub fn average(scores: &[Self]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Data("no scores to average".into()));
        }
        let n = scores.len() as f64;
        Ok(scores.iter().fold(Self::default(), |acc, s| Self {
            mae: acc.mae + s.mae / n,
            s_measure: acc.s_measure + s.s_measure / n,
            e_measure: acc.e_measure + s.e_measure / n,
            weighted_f: acc.weighted_f + s.weighted_f / n,
        }))
    }
}
