//! Weighted samples over `V` or `(Y, V)`.

use serde::{Deserialize, Serialize};

use crate::error::{CtpError, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureDim {
    /// Scalar volume samples.
    V,
    /// `[Y1, Y2, Y3, V]` samples.
    YV,
}

impl MeasureDim {
    pub fn width(self) -> usize {
        match self {
            MeasureDim::V => 1,
            MeasureDim::YV => 4,
        }
    }
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: MeasureDim,
    /// Row-major, `dim.width()` values per sample.
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: MeasureDim, values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let w = dim.width();
        if values.len() != w * weights.len() {
            return Err(CtpError::InvalidParameter(format!(
                "{} values do not fit {} samples of width {w}",
                values.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(CtpError::InvalidParameter("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if !weights.is_empty() && !(total > 0.0) {
            return Err(CtpError::InvalidParameter("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|x| x / total).collect();
        Ok(Self { dim, values, weights })
    }

    /// Equally weighted volume samples.
    pub fn from_volumes<I: IntoIterator<Item = f64>>(vs: I) -> Self {
        let values: Vec<f64> = vs.into_iter().collect();
        let n = values.len();
        Self {
            dim: MeasureDim::V,
            weights: vec![1.0 / n.max(1) as f64; n],
            values,
        }
    }

    /// Equally weighted `(Y, V)` samples.
    pub fn from_yv<I: IntoIterator<Item = (Vec3, f64)>>(samples: I) -> Self {
        let mut values = Vec::new();
        for (y, v) in samples {
            values.extend_from_slice(&[y.x, y.y, y.z, v]);
        }
        let n = values.len() / 4;
        Self {
            dim: MeasureDim::YV,
            weights: vec![1.0 / n.max(1) as f64; n],
            values,
        }
    }

    pub fn dim(&self) -> MeasureDim {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.dim.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn volume(&self, i: usize) -> f64 {
        *self.sample(i).last().expect("non-empty sample")
    }

    /// Displacement of sample `i`; `None` for volume-only measures.
    pub fn position(&self, i: usize) -> Option<Vec3> {
        match self.dim {
            MeasureDim::V => None,
            MeasureDim::YV => {
                let s = self.sample(i);
                Some(Vec3::new(s[0], s[1], s[2]))
            }
        }
    }

    /// The volume marginal.
    pub fn v_marginal(&self) -> EmpiricalMeasure {
        EmpiricalMeasure {
            dim: MeasureDim::V,
            values: (0..self.len()).map(|i| self.volume(i)).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Weighted mean of `g` over samples, with a standard error that
    /// accounts for unequal weights.
    pub fn expect<F: Fn(&[f64]) -> f64>(&self, g: F) -> Estimate {
        if self.is_empty() {
            return Estimate {
                mean: f64::NAN,
                std_err: f64::NAN,
            };
        }
        let mut acc = 0.0;
        let mut total = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w * g(self.sample(i));
            total += w;
        }
        let mean = acc / total;
        let mut var = 0.0;
        let mut w2 = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            let d = g(self.sample(i)) - mean;
            var += w * d * d;
            w2 += w * w;
        }
        let std_err = if w2 < 1.0 {
            // unbiased weighted variance times the effective 1/n
            (var / (1.0 - w2) * w2).sqrt()
        } else {
            f64::INFINITY
        };
        Estimate { mean, std_err }
    }

    pub fn mean_volume(&self) -> Estimate {
        self.expect(|s| s[s.len() - 1])
    }

    /// Weighted histogram of the volume marginal on `edges` (left-closed bins);
    /// returns bin probabilities and their standard errors.
    pub fn v_histogram(&self, edges: &[f64]) -> Vec<Estimate> {
        (0..edges.len().saturating_sub(1))
            .map(|b| {
                let (lo, hi) = (edges[b], edges[b + 1]);
                self.expect(|s| {
                    let v = s[s.len() - 1];
                    if v >= lo && v < hi {
                        1.0
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    }

    /// Samples of the volume marginal sorted by value, paired with weights.
    pub fn sorted_volumes(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = (0..self.len()).map(|i| (self.volume(i), self.weights[i])).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_normalise() {
        let m = EmpiricalMeasure::new(MeasureDim::V, vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 2.0]).unwrap();
        let total: f64 = m.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((m.mean_volume().mean - 2.25).abs() < 1e-15);
        assert!(EmpiricalMeasure::new(MeasureDim::YV, vec![1.0; 5], vec![1.0]).is_err());
        assert!(EmpiricalMeasure::new(MeasureDim::V, vec![1.0], vec![-1.0]).is_err());
    }

    #[test]
    fn constant_observable_is_exact() {
        let m = EmpiricalMeasure::from_yv((0..100).map(|i| (Vec3::new(i as f64, 0.0, 0.0), 1.0 + i as f64)));
        let e = m.expect(|_| 1.0);
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_err, 0.0);
        assert_eq!(m.v_marginal().len(), 100);
        assert_eq!(m.position(3), Some(Vec3::new(3.0, 0.0, 0.0)));
    }

    #[test]
    fn equal_weight_standard_error() {
        let m = EmpiricalMeasure::from_volumes([0.0, 1.0, 0.0, 1.0]);
        let e = m.mean_volume();
        // sample variance 1/3, n = 4
        assert!((e.std_err - (1.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn histogram_sums_to_one() {
        let m = EmpiricalMeasure::from_volumes([1.0, 2.0, 2.0, 3.0]);
        let h = m.v_histogram(&[0.5, 1.5, 2.5, 3.5]);
        let p: Vec<f64> = h.iter().map(|e| e.mean).collect();
        assert_eq!(p, vec![0.25, 0.5, 0.25]);
    }
}
