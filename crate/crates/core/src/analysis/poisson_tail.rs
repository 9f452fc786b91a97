//! Tail of the Poisson law against an exponential bound.
//!
//! `Ψ_N(ζ) = Σ_{n≥N} ζⁿ e^{−ζ} / n!` at `ζ = ξ* N` is compared with
//! `e/(e−1) · e^{−aN}`, `a = |log ξ*| / 2`, for `0 < ξ* < e^{−2}`.

use std::io::{self, Write};

use serde::Serialize;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{CtpError, Result};
use crate::output::{csv_row, write_comment_header};

/// `P(Poisson(ζ) ≥ N)` by upward summation from the first term, computed
/// in log space so that no term overflows.
pub fn poisson_upper_tail(n: u64, zeta: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if zeta == 0.0 {
        return 0.0;
    }
    let mut log_term = n as f64 * zeta.ln() - zeta - ln_gamma(n as f64 + 1.0);
    let mut sum = 0.0;
    let mut k = n;
    loop {
        let term = log_term.exp();
        sum += term;
        k += 1;
        log_term += zeta.ln() - (k as f64).ln();
        // terms decrease once k > ζ; stop when they no longer register
        if k as f64 > zeta && log_term.exp() <= f64::EPSILON * sum * 1e-3 {
            break;
        }
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub xi_star: f64,
    pub n: u64,
    pub zeta: f64,
    /// Direct summation.
    pub psi: f64,
    /// Regularised incomplete gamma `P(N, ζ)`.
    pub psi_gamma: f64,
    pub bound: f64,
    /// `psi / bound`; the bound holds when this is at most 1.
    pub ratio: f64,
}

impl TailRow {
    pub fn holds(&self) -> bool {
        self.ratio <= 1.0
    }
}

pub fn tail_bound(xi_star: f64, n: u64) -> f64 {
    let e = std::f64::consts::E;
    let a = xi_star.ln().abs() / 2.0;
    e / (e - 1.0) * (-a * n as f64).exp()
}

/// One row per `(ξ*, N)` pair.
pub fn poisson_tail_check(xi_star_list: &[f64], n_list: &[u64]) -> Result<Vec<TailRow>> {
    let limit = (-2.0f64).exp();
    let mut rows = Vec::with_capacity(xi_star_list.len() * n_list.len());
    for &xi in xi_star_list {
        if !(xi > 0.0 && xi < limit) {
            return Err(CtpError::InvalidParameter(format!("xi* must lie in (0, e^-2), got {xi}")));
        }
        for &n in n_list {
            if n == 0 {
                return Err(CtpError::InvalidParameter("N must be >= 1".into()));
            }
            let zeta = xi * n as f64;
            let psi = poisson_upper_tail(n, zeta);
            let bound = tail_bound(xi, n);
            rows.push(TailRow {
                xi_star: xi,
                n,
                zeta,
                psi,
                psi_gamma: gamma_lr(n as f64, zeta),
                bound,
                ratio: psi / bound,
            });
        }
    }
    Ok(rows)
}

/// CSV with columns `xi_star, N, zeta, psi, psi_gamma, bound, ratio`.
pub fn write_tail_csv<W: Write>(mut w: W, header: &str, rows: &[TailRow]) -> io::Result<()> {
    write_comment_header(&mut w, header)?;
    writeln!(w, "xi_star,N,zeta,psi,psi_gamma,bound,ratio")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{}",
            crate::output::fmt_num(r.xi_star),
            r.n,
            csv_row(&[r.zeta, r.psi, r.psi_gamma, r.bound, r.ratio])
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_order_example() {
        let xi = (-3.0f64).exp();
        let psi = poisson_upper_tail(1, xi);
        assert!((psi - (1.0 - (-xi).exp())).abs() < 1e-16);
        let e = std::f64::consts::E;
        assert!(psi <= e / (e - 1.0) * (-1.5f64).exp());
        assert_eq!(poisson_upper_tail(10, 0.0), 0.0);
    }

    #[test]
    fn summation_matches_incomplete_gamma() {
        for &(n, z) in &[(1u64, 0.3), (5, 2.0), (10, 0.5), (50, 40.0), (200, 20.0)] {
            let s = poisson_upper_tail(n, z);
            let g = gamma_lr(n as f64, z);
            assert!((s - g).abs() <= 1e-12 * g.max(1e-300) + 1e-300, "N={n} z={z}: {s} vs {g}");
        }
    }

    #[test]
    fn grid_has_no_violations() {
        let xi = [(-2.1f64).exp(), (-3.0f64).exp(), (-5.0f64).exp()];
        let rows = poisson_tail_check(&xi, &[1, 5, 10, 50, 200]).unwrap();
        assert_eq!(rows.len(), 15);
        assert!(rows.iter().all(TailRow::holds));
        for r in &rows {
            assert!((r.psi - r.psi_gamma).abs() <= 1e-10 * r.psi_gamma);
        }
    }

    #[test]
    fn rejects_out_of_range_xi() {
        assert!(poisson_tail_check(&[0.2], &[1]).is_err());
    }
}
