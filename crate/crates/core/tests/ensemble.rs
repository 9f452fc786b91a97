//! Ensemble-level checks of the particle simulator.

use ctp_core::analysis::audit::{corrected_constant, displacement_audit, sharp_constant};
use ctp_core::analysis::flights::{flight_stats, summarize};
use ctp_core::kinetic::{ensemble, JumpParams};
use ctp_core::sim::{run_ensemble, write_summary_csv, SimParams};
use ctp_core::VolumeDistribution;

fn dilute(dist: VolumeDistribution) -> SimParams {
    SimParams::new(1e-3, 1.0, 1.0, 1.0, dist)
}

#[test]
fn collision_count_matches_kinetic_jumps() {
    let n = 10_000;
    let p = dilute(VolumeDistribution::dirac(1.0).unwrap());
    let ens = run_ensemble(&p, n, 21, false).unwrap();
    assert_eq!(ens.stats.n_failed, 0);
    let counts: Vec<f64> = ens.summaries.iter().map(|s| s.n_collisions as f64).collect();
    let mut jp = JumpParams::new(1.0, VolumeDistribution::dirac(1.0).unwrap(), 1.0, 1.0);
    jp.seed = 22;
    let kin = ensemble(&jp, n).unwrap();
    let jumps: Vec<f64> = kin.paths.iter().map(|p| p.n_jumps as f64).collect();
    let mean_se = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        (m, (v / x.len() as f64).sqrt())
    };
    let (a, sa) = mean_se(&counts);
    let (b, sb) = mean_se(&jumps);
    assert!((a - b).abs() < 4.0 * (sa * sa + sb * sb).sqrt(), "{a} ± {sa} vs {b} ± {sb}");
}

#[test]
fn dilute_compact_ensemble_audit_and_flights() {
    let n = 10_000;
    let p = dilute(VolumeDistribution::uniform(0.5, 1.5).unwrap());
    let ens = run_ensemble(&p, n, 23, true).unwrap();
    assert_eq!(ens.stats.n_failed, 0);
    let logs = ens.logs.unwrap();
    let rep = displacement_audit(&logs, corrected_constant());
    assert!(rep.logs_checked > n / 2);
    assert_eq!(rep.violations, 0);
    assert!(rep.max_ratio <= sharp_constant() * (1.0 + 1e-9));
    let stats: Vec<_> = logs.iter().map(|l| flight_stats(l, 0.01)).collect();
    let summary = summarize(&stats);
    assert!(summary.mean_small_fraction < 0.5, "{summary:?}");
    assert_eq!(summary.flagged, 0);
}

#[test]
fn summaries_identical_across_thread_counts() {
    let p = SimParams::new(1e-2, 1.0, 1.0, 1.0, VolumeDistribution::uniform(0.5, 1.5).unwrap());
    let csv = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let ens = pool.install(|| run_ensemble(&p, 2_000, 24, false)).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, "test", &ens.summaries).unwrap();
        buf
    };
    assert_eq!(csv(1), csv(8));
}
