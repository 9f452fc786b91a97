//! 1-Wasserstein distance between weighted samples on the line.

use crate::measure::EmpiricalMeasure;
use crate::num::Real;

/// `W₁ = ∫ |F_a(x) − F_b(x)| dx` for weighted point sets `(value, weight)`.
/// Weights of each set are normalised; inputs need not be sorted.
pub fn wasserstein1<T: Real>(a: &[(T, T)], b: &[(T, T)]) -> T {
    let norm = |s: &[(T, T)]| {
        let total = s.iter().fold(T::zero(), |acc, p| acc + p.1);
        let mut v: Vec<(T, T)> = s.iter().map(|&(x, w)| (x, w / total)).collect();
        v.sort_by(|p, q| p.0.partial_cmp(&q.0).expect("finite sample values"));
        v
    };
    let (a, b) = (norm(a), norm(b));
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (T::zero(), T::zero());
    let mut prev: Option<T> = None;
    let mut dist = T::zero();
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        if let Some(px) = prev {
            dist = dist + (fa - fb).abs() * (x - px);
        }
        while i < a.len() && a[i].0 == x {
            fa = fa + a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == x {
            fb = fb + b[j].1;
            j += 1;
        }
        prev = Some(x);
    }
    dist
}

/// `W₁` between the volume marginals of two empirical measures.
pub fn wasserstein1_v(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    wasserstein1(&a.sorted_volumes(), &b.sorted_volumes())
}
