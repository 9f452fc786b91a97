//! Pathwise bound on the displacement accumulated through binary merges.
//!
//! After every merge of a binary-only log the auditor checks
//! `|Y_k − Y_0| ≤ C (V_k^{1/3} − V_0^{1/3})` in rescaled units.

use serde::Serialize;

use crate::num::sigma;
use crate::sim::EventLog;
use crate::Vec3;

/// The constant `9 / (2π)` as printed.
pub const PAPER_CONSTANT: f64 = 9.0 / (2.0 * std::f64::consts::PI);

/// One binary merge of volume `v` into a particle of volume `V` moves the
/// centre by at most `σ (V^{1/3} + v^{1/3}) v / (V + v)`. Dividing by the
/// radius increment and writing `x = v / V` gives
/// `σ x (1 + x^{1/3}) / ((1 + x)((1 + x)^{1/3} − 1))`.
pub fn single_merge_ratio(x: f64) -> f64 {
    let s = sigma::<f64>();
    s * x * (1.0 + x.cbrt()) / ((1.0 + x) * ((1.0 + x).cbrt() - 1.0))
}

/// `sup_x single_merge_ratio(x)`, the sharp constant for sums of binary
/// merges (by the triangle inequality and telescoping).
pub fn sharp_constant() -> f64 {
    // unimodal on (0, ∞); scan in log x, then refine by golden section
    let f = |lx: f64| single_merge_ratio(lx.exp());
    let (mut best, mut arg) = (f64::MIN, 0.0);
    for i in 0..=4000 {
        let lx = -20.0 + 40.0 * i as f64 / 4000.0;
        let y = f(lx);
        if y > best {
            best = y;
            arg = lx;
        }
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (arg - 0.01, arg + 0.01);
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    f(0.5 * (a + b)).max(best)
}

/// Constant used alongside the printed one: `6σ`, above the sharp value.
pub fn corrected_constant() -> f64 {
    6.0 * sigma::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditReport {
    pub constant: f64,
    pub logs_checked: usize,
    pub logs_skipped: usize,
    pub merges_checked: usize,
    pub violations: usize,
    /// Largest `|Y_k − Y_0| / (V_k^{1/3} − V_0^{1/3})` seen.
    pub max_ratio: f64,
}

/// Checks every merge of every binary-only log against `constant`.
/// Logs with any multi-obstacle or multi-step coalescence are skipped.
pub fn displacement_audit(logs: &[EventLog], constant: f64) -> AuditReport {
    let mut rep = AuditReport {
        constant,
        logs_checked: 0,
        logs_skipped: 0,
        merges_checked: 0,
        violations: 0,
        max_ratio: 0.0,
    };
    for log in logs {
        if !log.is_binary_only() {
            rep.logs_skipped += 1;
            continue;
        }
        rep.logs_checked += 1;
        let r0 = log.v0.cbrt();
        for (_, y, v) in log.merge_states() {
            rep.merges_checked += 1;
            let dist = (y - log.y0).norm();
            let growth = v.cbrt() - r0;
            if dist > constant * growth {
                rep.violations += 1;
            }
            if growth > 0.0 {
                rep.max_ratio = rep.max_ratio.max(dist / growth);
            } else if dist > 0.0 {
                rep.max_ratio = f64::INFINITY;
            }
        }
    }
    rep
}

/// Displacement of one binary merge, for constructing synthetic logs.
pub fn binary_merge(y: Vec3, big_v: f64, contact: Vec3, v: f64) -> (Vec3, f64) {
    let w = big_v + v;
    ((y * big_v + contact * v) / w, w)
}
