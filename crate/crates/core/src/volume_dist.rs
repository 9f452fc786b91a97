//! Obstacle volume law `G(v)`.
//!
//! All four kinds have closed-form CDF, quantile and moments; sampling is by
//! inverse CDF so a draw is a deterministic, monotone function of the uniform
//! input. Laws with an unbounded tail are cut at the `1 - 1e-12` quantile when
//! they are built.

use serde::{Deserialize, Serialize};

use crate::error::{CtpError, Result};
use crate::quad;

/// Probability mass removed from an unbounded Pareto tail.
pub const TAIL_CUT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolumeKind {
    Dirac { v0: f64 },
    Uniform { a: f64, b: f64 },
    /// Density `∝ v^{-exponent-1}` on `[v_min, v_max]`.
    TruncatedPareto { exponent: f64, v_min: f64, v_max: f64 },
    /// Piecewise linear CDF through `(grid[i], cdf[i])`.
    Tabulated { grid: Vec<f64>, cdf: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeDistribution {
    kind: VolumeKind,
    v_max: f64,
    /// Tail exponent of the law before truncation, if it was unbounded.
    /// Moments of order `>= exponent` are reported as divergent.
    untruncated_exponent: Option<f64>,
    /// Normalisation `1 - (v_min/v_max)^α` of a truncated Pareto law.
    pareto_norm: f64,
}

impl VolumeDistribution {
    pub fn dirac(v0: f64) -> Result<Self> {
        if !(v0.is_finite() && v0 > 0.0) {
            return Err(CtpError::InvalidParameter(format!("dirac volume must be > 0, got {v0}")));
        }
        Ok(Self::from_parts(VolumeKind::Dirac { v0 }, v0))
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && b > a) {
            return Err(CtpError::InvalidParameter(format!(
                "uniform law needs 0 <= a < b, got a = {a}, b = {b}"
            )));
        }
        Ok(Self::from_parts(VolumeKind::Uniform { a, b }, b))
    }

    /// Pareto law with density `∝ v^{-exponent-1}` on `[v_min, v_max]`.
    /// `v_max = ∞` is cut at the `1 - TAIL_CUT` quantile.
    pub fn pareto(exponent: f64, v_min: f64, v_max: f64) -> Result<Self> {
        if !(exponent.is_finite() && exponent > 0.0 && v_min.is_finite() && v_min > 0.0 && v_max > v_min) {
            return Err(CtpError::InvalidParameter(format!(
                "pareto law needs exponent > 0 and 0 < v_min < v_max, got ({exponent}, {v_min}, {v_max})"
            )));
        }
        let (v_max, untruncated_exponent) = if v_max.is_infinite() {
            (v_min * TAIL_CUT.powf(-1.0 / exponent), Some(exponent))
        } else {
            (v_max, None)
        };
        let mut d = Self::from_parts(
            VolumeKind::TruncatedPareto {
                exponent,
                v_min,
                v_max,
            },
            v_max,
        );
        d.untruncated_exponent = untruncated_exponent;
        d.pareto_norm = 1.0 - (v_min / v_max).powf(exponent);
        Ok(d)
    }

    pub fn tabulated(grid: Vec<f64>, cdf: Vec<f64>) -> Result<Self> {
        let bad = |m: &str| Err(CtpError::InvalidParameter(format!("tabulated law: {m}")));
        if grid.len() < 2 || grid.len() != cdf.len() {
            return bad("grid and cdf need equal length >= 2");
        }
        if grid[0] < 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
            return bad("grid must be finite, nonnegative and strictly increasing");
        }
        if cdf.windows(2).any(|w| w[1] < w[0]) {
            return bad("cdf must be nondecreasing");
        }
        if cdf[0].abs() > 1e-12 || (cdf[cdf.len() - 1] - 1.0).abs() > 1e-12 {
            return bad("cdf must start at 0 and end at 1");
        }
        let mut cdf = cdf;
        cdf[0] = 0.0;
        let last = cdf.len() - 1;
        cdf[last] = 1.0;
        // Trim trailing flat segments so v_max is the essential supremum.
        let mut end = last;
        while end > 1 && cdf[end - 1] >= 1.0 {
            end -= 1;
        }
        let grid: Vec<f64> = grid[..=end].to_vec();
        let cdf: Vec<f64> = cdf[..=end].to_vec();
        let v_max = grid[end];
        Ok(Self::from_parts(VolumeKind::Tabulated { grid, cdf }, v_max))
    }

    fn from_parts(kind: VolumeKind, v_max: f64) -> Self {
        Self {
            kind,
            v_max,
            untruncated_exponent: None,
            pareto_norm: 1.0,
        }
    }

    pub fn kind(&self) -> &VolumeKind {
        &self.kind
    }

    /// Essential supremum of the (possibly truncated) support.
    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Essential infimum of the support.
    pub fn v_min(&self) -> f64 {
        match &self.kind {
            VolumeKind::Dirac { v0 } => *v0,
            VolumeKind::Uniform { a, .. } => *a,
            VolumeKind::TruncatedPareto { v_min, .. } => *v_min,
            VolumeKind::Tabulated { grid, cdf } => {
                let first = cdf.iter().position(|&c| c > 0.0).unwrap_or(1);
                grid[first - 1]
            }
        }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self.kind, VolumeKind::Dirac { .. })
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match &self.kind {
            VolumeKind::Dirac { v0 } => {
                if v >= *v0 {
                    1.0
                } else {
                    0.0
                }
            }
            VolumeKind::Uniform { a, b } => ((v - a) / (b - a)).clamp(0.0, 1.0),
            VolumeKind::TruncatedPareto { exponent, v_min, v_max } => {
                if v < *v_min {
                    0.0
                } else if v >= *v_max {
                    1.0
                } else {
                    (1.0 - (v_min / v).powf(*exponent)) / self.pareto_norm
                }
            }
            VolumeKind::Tabulated { grid, cdf } => {
                if v <= grid[0] {
                    return 0.0;
                }
                if v >= grid[grid.len() - 1] {
                    return 1.0;
                }
                let i = grid.partition_point(|&g| g <= v) - 1;
                let w = (v - grid[i]) / (grid[i + 1] - grid[i]);
                cdf[i] + w * (cdf[i + 1] - cdf[i])
            }
        }
    }

    /// Density, or `None` for the point mass.
    pub fn pdf(&self, v: f64) -> Option<f64> {
        match &self.kind {
            VolumeKind::Dirac { .. } => None,
            VolumeKind::Uniform { a, b } => Some(if v >= *a && v <= *b { 1.0 / (b - a) } else { 0.0 }),
            VolumeKind::TruncatedPareto { exponent, v_min, v_max } => Some(if v >= *v_min && v <= *v_max {
                exponent * v_min.powf(*exponent) * v.powf(-exponent - 1.0) / self.pareto_norm
            } else {
                0.0
            }),
            VolumeKind::Tabulated { grid, cdf } => {
                if v < grid[0] || v > grid[grid.len() - 1] {
                    return Some(0.0);
                }
                let i = (grid.partition_point(|&g| g <= v)).clamp(1, grid.len() - 1) - 1;
                Some((cdf[i + 1] - cdf[i]) / (grid[i + 1] - grid[i]))
            }
        }
    }

    /// Inverse CDF. Nondecreasing in `u`; never exceeds `v_max`.
    pub fn sample(&self, u: f64) -> f64 {
        debug_assert!((0.0..1.0).contains(&u), "u = {u} outside [0, 1)");
        match &self.kind {
            VolumeKind::Dirac { v0 } => *v0,
            VolumeKind::Uniform { a, b } => (a + u * (b - a)).min(*b),
            VolumeKind::TruncatedPareto { exponent, v_min, v_max } => {
                (v_min * (1.0 - u * self.pareto_norm).powf(-1.0 / exponent)).clamp(*v_min, *v_max)
            }
            VolumeKind::Tabulated { grid, cdf } => {
                // last node with cdf <= u; flat segments are skipped
                let i = (cdf.partition_point(|&c| c <= u)).clamp(1, cdf.len() - 1) - 1;
                let dc = cdf[i + 1] - cdf[i];
                if dc <= 0.0 {
                    return grid[i + 1];
                }
                let w = ((u - cdf[i]) / dc).clamp(0.0, 1.0);
                (grid[i] + w * (grid[i + 1] - grid[i])).min(self.v_max)
            }
        }
    }

    /// `M_γ = ∫ v^γ dG(v)`.
    pub fn moment(&self, gamma: f64) -> Result<f64> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(CtpError::InvalidParameter(format!("moment order must be >= 0, got {gamma}")));
        }
        if let Some(alpha) = self.untruncated_exponent {
            if gamma >= alpha {
                return Err(CtpError::DivergentMoment { gamma });
            }
        }
        if gamma == 0.0 {
            return Ok(1.0);
        }
        let m = match &self.kind {
            VolumeKind::Dirac { v0 } => v0.powf(gamma),
            VolumeKind::Uniform { a, b } => {
                let g1 = gamma + 1.0;
                (b.powf(g1) - a.powf(g1)) / (g1 * (b - a))
            }
            VolumeKind::TruncatedPareto { exponent, v_min, v_max } => {
                let pre = exponent * v_min.powf(*exponent) / self.pareto_norm;
                let d = gamma - exponent;
                if d.abs() < 1e-14 {
                    pre * (v_max / v_min).ln()
                } else {
                    pre * (v_max.powf(d) - v_min.powf(d)) / d
                }
            }
            VolumeKind::Tabulated { grid, cdf } => {
                let g1 = gamma + 1.0;
                grid.windows(2)
                    .zip(cdf.windows(2))
                    .filter(|(_, c)| c[1] > c[0])
                    .map(|(g, c)| (c[1] - c[0]) / (g[1] - g[0]) * (g[1].powf(g1) - g[0].powf(g1)) / g1)
                    .sum()
            }
        };
        Ok(m)
    }

    /// `∫_{[lo, hi)} f(v) dG(v)` with adaptive quadrature on the absolutely
    /// continuous kinds (relative tolerance `tol`) and exact evaluation of
    /// the point mass.
    pub fn integrate_against<F: Fn(f64) -> f64>(&self, f: F, lo: f64, hi: f64, tol: f64) -> f64 {
        if !(hi > lo) {
            return 0.0;
        }
        let quad = |g: &dyn Fn(f64) -> f64, a: f64, b: f64| -> f64 {
            if b > a {
                quad::integrate(g, a, b, tol, 0.0).value
            } else {
                0.0
            }
        };
        match &self.kind {
            VolumeKind::Dirac { v0 } => {
                if *v0 >= lo && *v0 < hi {
                    f(*v0)
                } else {
                    0.0
                }
            }
            VolumeKind::Uniform { a, b } => {
                let dens = 1.0 / (b - a);
                quad(&|v| f(v) * dens, lo.max(*a), hi.min(*b))
            }
            VolumeKind::TruncatedPareto { v_min, v_max, .. } => {
                let g = |v: f64| f(v) * self.pdf(v).unwrap_or(0.0);
                quad(&g, lo.max(*v_min), hi.min(*v_max))
            }
            VolumeKind::Tabulated { grid, cdf } => {
                let mut total = 0.0;
                for (g, c) in grid.windows(2).zip(cdf.windows(2)) {
                    if c[1] <= c[0] {
                        continue;
                    }
                    let dens = (c[1] - c[0]) / (g[1] - g[0]);
                    total += quad(&|v| f(v) * dens, lo.max(g[0]), hi.min(g[1]));
                }
                total
            }
        }
    }

    /// Flat `key = value` description, the inverse of [`Self::from_key_values`].
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        fn list(xs: &[f64]) -> String {
            xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
        }
        match &self.kind {
            VolumeKind::Dirac { v0 } => vec![("kind", "dirac".into()), ("v0", format!("{v0:?}"))],
            VolumeKind::Uniform { a, b } => vec![
                ("kind", "uniform".into()),
                ("a", format!("{a:?}")),
                ("b", format!("{b:?}")),
            ],
            VolumeKind::TruncatedPareto { exponent, v_min, v_max } => {
                let upper = if self.untruncated_exponent.is_some() {
                    "inf".to_string()
                } else {
                    format!("{v_max:?}")
                };
                vec![
                    ("kind", "pareto".into()),
                    ("exponent", format!("{exponent:?}")),
                    ("v_min", format!("{v_min:?}")),
                    ("v_max", upper),
                ]
            }
            VolumeKind::Tabulated { grid, cdf } => vec![
                ("kind", "tabulated".into()),
                ("grid", list(grid)),
                ("cdf", list(cdf)),
            ],
        }
    }

    /// Builds a law from `key = value` pairs; `get` looks a key up.
    pub fn from_key_values<'a, F>(get: F) -> Result<Self>
    where
        F: Fn(&str) -> Option<&'a str>,
    {
        let num = |k: &str| -> Result<f64> {
            let raw = get(k).ok_or_else(|| CtpError::InvalidParameter(format!("missing key `{k}`")))?;
            parse_f64(raw).ok_or_else(|| CtpError::InvalidParameter(format!("`{k}`: not a number: {raw}")))
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            let raw = get(k).ok_or_else(|| CtpError::InvalidParameter(format!("missing key `{k}`")))?;
            raw.split(',')
                .map(|s| parse_f64(s.trim()).ok_or_else(|| CtpError::InvalidParameter(format!("`{k}`: bad entry `{s}`"))))
                .collect()
        };
        match get("kind").unwrap_or("dirac") {
            "dirac" => Self::dirac(num("v0")?),
            "uniform" => Self::uniform(num("a")?, num("b")?),
            "pareto" => Self::pareto(num("exponent")?, num("v_min")?, num("v_max")?),
            "tabulated" => Self::tabulated(list("grid")?, list("cdf")?),
            other => Err(CtpError::InvalidParameter(format!("unknown distribution kind `{other}`"))),
        }
    }
}

pub(crate) fn parse_f64(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        t => t.parse::<f64>().ok().filter(|x| !x.is_nan()),
    }
}
