//! Particle ensembles at decreasing `φ` against one kinetic reference.

use std::io::{self, Write};

use rand::Rng;
use serde::Serialize;

use crate::error::{CtpError, Result};
use crate::kinetic::{self, JumpParams};
use crate::measure::{EmpiricalMeasure, Estimate};
use crate::output::{csv_row, fmt_num, write_comment_header};
use crate::rng::{mix, stream};
use crate::sim::{run_ensemble, SimParams};
use crate::volume_dist::VolumeDistribution;

use super::wasserstein::wasserstein1;

/// Observables compared by their means.
pub const OBSERVABLES: [&str; 4] = ["V", "V2", "Y1", "Y_sq"];

fn observable(k: usize, s: &[f64]) -> f64 {
    match k {
        0 => s[3],
        1 => s[3] * s[3],
        2 => s[0],
        _ => s[0] * s[0] + s[1] * s[1] + s[2] * s[2],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSetup {
    /// Decreasing.
    pub phi_list: Vec<f64>,
    pub u: f64,
    pub t_end: f64,
    pub v0: f64,
    pub dist: VolumeDistribution,
    pub n_traj: usize,
    /// Size of the kinetic reference ensemble.
    pub n_kinetic: usize,
    pub seed: u64,
    /// Bootstrap resamples for the W₁ noise level.
    pub n_boot: usize,
}

impl ConvergenceSetup {
    pub fn new(phi_list: Vec<f64>, dist: VolumeDistribution, n_traj: usize) -> Self {
        Self {
            phi_list,
            u: 1.0,
            t_end: 1.0,
            v0: 1.0,
            dist,
            n_traj,
            n_kinetic: n_traj,
            seed: 0,
            n_boot: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CtpError::InvalidParameter(m.into()));
        if self.phi_list.is_empty() {
            return bad("phi_list is empty");
        }
        if self.phi_list.windows(2).any(|w| w[1] >= w[0]) {
            return bad("phi_list must be strictly decreasing");
        }
        if self.n_traj < 2 || self.n_kinetic < 2 {
            return bad("n_traj and n_kinetic must be >= 2");
        }
        if self.n_boot < 2 {
            return bad("n_boot must be >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentGap {
    pub particle: Estimate,
    pub kinetic: Estimate,
    /// `|E_part − E_kin|`
    pub gap: f64,
    /// Combined standard error of the gap.
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub phi: f64,
    pub n_traj: usize,
    pub n_failed: usize,
    /// In the order of [`OBSERVABLES`].
    pub gaps: [MomentGap; 4],
    pub w1: f64,
    /// Bootstrap standard deviation of `w1`.
    pub w1_noise: f64,
    pub binary_fraction: f64,
    pub cascade_fraction: f64,
    pub mean_flight_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub setup: ConvergenceSetup,
    pub n_kinetic: usize,
    /// Sorted by decreasing `φ`.
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log W₁` against `log φ`.
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Assessment {
    /// `W₁` strictly decreases from row to row.
    pub w1_monotone: bool,
    /// First minus last `W₁` exceeds twice the combined noise.
    pub w1_drop_resolved: bool,
    /// Binary fraction strictly increases from row to row.
    pub binary_monotone: bool,
}

impl Assessment {
    pub fn passed(&self) -> bool {
        self.w1_monotone && self.w1_drop_resolved && self.binary_monotone
    }
}

impl ConvergenceReport {
    /// Classifies the trend; `InconclusiveNoise` when every pair of `W₁`
    /// values lies within twice the combined noise.
    pub fn assess(&self) -> Result<Assessment> {
        let rows = &self.rows;
        let sep = |a: &ConvergenceRow, b: &ConvergenceRow| {
            (a.w1 - b.w1).abs() > 2.0 * (a.w1_noise.powi(2) + b.w1_noise.powi(2)).sqrt()
        };
        let any_resolved = rows
            .iter()
            .enumerate()
            .any(|(i, a)| rows[i + 1..].iter().any(|b| sep(a, b)));
        if !any_resolved {
            return Err(CtpError::InconclusiveNoise(format!(
                "W1 differences across {} values of phi are all within 2 sigma",
                rows.len()
            )));
        }
        let first = rows.first().expect("non-empty");
        let last = rows.last().expect("non-empty");
        Ok(Assessment {
            w1_monotone: rows.windows(2).all(|w| w[1].w1 < w[0].w1),
            w1_drop_resolved: first.w1 > last.w1 && sep(first, last),
            binary_monotone: rows.windows(2).all(|w| w[1].binary_fraction > w[0].binary_fraction),
        })
    }
}

/// `W₁` on the volume marginals and the bootstrap spread of it.
pub fn w1_with_noise(a: &EmpiricalMeasure, b: &EmpiricalMeasure, n_boot: usize, seed: u64) -> (f64, f64) {
    let sa = a.sorted_volumes();
    let sb = b.sorted_volumes();
    let w1 = wasserstein1(&sa, &sb);
    let mut rng = stream(seed);
    let resample = |s: &[(f64, f64)], rng: &mut crate::rng::StreamRng| -> Vec<(f64, f64)> {
        (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).collect()
    };
    let boots: Vec<f64> = (0..n_boot)
        .map(|_| {
            let ra = resample(&sa, &mut rng);
            let rb = resample(&sb, &mut rng);
            wasserstein1(&ra, &rb)
        })
        .collect();
    let m = boots.iter().sum::<f64>() / n_boot as f64;
    let var = boots.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_boot - 1) as f64;
    (w1, var.sqrt())
}

fn moment_gaps(part: &EmpiricalMeasure, kin: &EmpiricalMeasure) -> [MomentGap; 4] {
    std::array::from_fn(|k| {
        let p = part.expect(|s| observable(k, s));
        let q = kin.expect(|s| observable(k, s));
        MomentGap {
            particle: p,
            kinetic: q,
            gap: (p.mean - q.mean).abs(),
            std_err: (p.std_err.powi(2) + q.std_err.powi(2)).sqrt(),
        }
    })
}

fn log_slope(rows: &[ConvergenceRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.w1 > 0.0)
        .map(|r| (r.phi.ln(), r.w1.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// One particle ensemble per `φ` and a single kinetic reference.
pub fn convergence_study(setup: &ConvergenceSetup) -> Result<ConvergenceReport> {
    setup.validate()?;
    let mut jp = JumpParams::new(setup.u, setup.dist.clone(), setup.v0, setup.t_end);
    jp.seed = mix(setup.seed, &[2]);
    let reference = kinetic::ensemble(&jp, setup.n_kinetic)?;
    let kin = &reference.measure;

    let mut rows = Vec::with_capacity(setup.phi_list.len());
    for (i, &phi) in setup.phi_list.iter().enumerate() {
        let params = SimParams::new(phi, setup.u, setup.t_end, setup.v0, setup.dist.clone());
        let ens = run_ensemble(&params, setup.n_traj, mix(setup.seed, &[1, i as u64]), false)?;
        let (w1, w1_noise) = w1_with_noise(&ens.measure, kin, setup.n_boot, mix(setup.seed, &[3, i as u64]));
        log::info!("phi = {phi}: W1 = {w1:.4e} +- {w1_noise:.1e}, binary = {}", ens.stats.binary_fraction);
        rows.push(ConvergenceRow {
            phi,
            n_traj: setup.n_traj,
            n_failed: ens.stats.n_failed,
            gaps: moment_gaps(&ens.measure, kin),
            w1,
            w1_noise,
            binary_fraction: ens.stats.binary_fraction,
            cascade_fraction: ens.stats.cascade_fraction,
            mean_flight_count: ens.stats.mean_flight_count,
        });
    }
    let slope = log_slope(&rows);
    Ok(ConvergenceReport {
        setup: setup.clone(),
        n_kinetic: reference.paths.len(),
        rows,
        slope,
    })
}

/// CSV: `phi, n_traj, n_failed, gap_g, se_g (per observable), W1, W1_noise,
/// binary_fraction, cascade_fraction, mean_flight_count`.
pub fn write_convergence_csv<W: Write>(mut w: W, header: &str, report: &ConvergenceReport) -> io::Result<()> {
    write_comment_header(&mut w, &format!("{header}; slope={}", fmt_num(report.slope)))?;
    let gap_cols: Vec<String> = OBSERVABLES.iter().map(|o| format!("gap_{o},se_{o}")).collect();
    writeln!(
        w,
        "phi,n_traj,n_failed,{},W1,W1_noise,binary_fraction,cascade_fraction,mean_flight_count",
        gap_cols.join(",")
    )?;
    for r in &report.rows {
        let gaps: Vec<f64> = r.gaps.iter().flat_map(|g| [g.gap, g.std_err]).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_num(r.phi),
            r.n_traj,
            r.n_failed,
            csv_row(&gaps),
            csv_row(&[r.w1, r.w1_noise, r.binary_fraction, r.cascade_fraction, r.mean_flight_count])
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_increasing_phi() {
        let s = ConvergenceSetup::new(vec![1e-3, 1e-2], VolumeDistribution::dirac(1.0).unwrap(), 10);
        assert!(convergence_study(&s).is_err());
    }

    #[test]
    fn tiny_ensembles_are_inconclusive() {
        let mut s = ConvergenceSetup::new(vec![3e-2, 1e-3], VolumeDistribution::dirac(1.0).unwrap(), 10);
        s.n_boot = 16;
        let rep = convergence_study(&s).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(matches!(rep.assess(), Err(CtpError::InconclusiveNoise(_))));
    }

    #[test]
    fn bootstrap_noise_shrinks_with_size() {
        let make = |n: usize, off: f64| EmpiricalMeasure::from_volumes((0..n).map(|i| ((i * 7919) % 13) as f64 + off));
        let (_, small) = w1_with_noise(&make(100, 0.0), &make(100, 0.5), 64, 1);
        let (w, large) = w1_with_noise(&make(10_000, 0.0), &make(10_000, 0.5), 64, 1);
        assert!((w - 0.5).abs() < 1e-12);
        assert!(large < small);
    }
}
