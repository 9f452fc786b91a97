//! Kinetic Monte Carlo against closed forms and the deterministic solvers.

use ctp_core::kinetic::{ensemble, lambda_of_v, JumpParams};
use ctp_core::marginal::{dirac_chain, solve, solve_backward, MarginalGrid, SolveOptions};
use ctp_core::VolumeDistribution;

fn dirac1() -> VolumeDistribution {
    VolumeDistribution::dirac(1.0).unwrap()
}

fn params(dist: VolumeDistribution, t_end: f64, seed: u64) -> JumpParams {
    let mut p = JumpParams::new(1.0, dist, 1.0, t_end);
    p.seed = seed;
    p
}

#[test]
fn survival_at_small_time() {
    let n = 100_000;
    let ens = ensemble(&params(dirac1(), 0.1, 11), n).unwrap();
    let p0 = (-0.1 * lambda_of_v(1.0, &dirac1()).unwrap()).exp();
    let hat = ens.paths.iter().filter(|p| p.n_jumps == 0).count() as f64 / n as f64;
    let sd = (p0 * (1.0 - p0) / n as f64).sqrt();
    assert!((hat - p0).abs() < 4.0 * sd, "{hat} vs {p0}");
}

#[test]
fn first_order_jump_ratio() {
    let t = 1e-3;
    let ens = ensemble(&params(dirac1(), t, 12), 1_000_000).unwrap();
    let count = |k| ens.paths.iter().filter(|p| p.n_jumps == k).count() as f64;
    let ratio = count(1) / count(0);
    let expect = t * lambda_of_v(1.0, &dirac1()).unwrap();
    assert!((ratio / expect - 1.0).abs() < 0.1, "{ratio} vs {expect}");
}

#[test]
fn normalisation_and_azimuthal_symmetry() {
    let ens = ensemble(&params(VolumeDistribution::uniform(0.5, 1.5).unwrap(), 1.0, 13), 20_000).unwrap();
    let one = ens.measure.expect(|_| 1.0);
    assert_eq!(one.mean, 1.0);
    let y2 = ens.measure.expect(|s| s[1]);
    let y3 = ens.measure.expect(|s| s[2]);
    assert!(y2.mean.abs() < 4.0 * y2.std_err, "{y2:?}");
    assert!(y3.mean.abs() < 4.0 * y3.std_err, "{y3:?}");
    // every jump moves the centre forward along e1
    let y1 = ens.measure.expect(|s| s[0]);
    assert!(y1.mean > 4.0 * y1.std_err);
}

#[test]
fn dirac_mean_and_histogram_match_chain() {
    let n = 100_000;
    let ens = ensemble(&params(dirac1(), 1.0, 14), n).unwrap();
    let chain = dirac_chain(1.0, 1.0, 1.0, 1.0, None).unwrap();
    let m = ens.measure.mean_volume();
    assert!((m.mean - chain.mean()).abs() < 4.0 * m.std_err, "{m:?} vs {}", chain.mean());
    let edges: Vec<f64> = (0..=60).map(|k| 0.5 + k as f64).collect();
    for (k, est) in ens.measure.v_histogram(&edges).iter().enumerate() {
        let p = chain.prob(k);
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        if est.mean > 0.0 || p > 1e-6 {
            assert!((est.mean - p).abs() <= 4.0 * sd.max(1.0 / n as f64), "bin {k}: {} vs {p}", est.mean);
        }
    }
}

#[test]
fn uniform_histogram_matches_grid_solver() {
    let n = 100_000;
    let g = VolumeDistribution::uniform(0.5, 1.5).unwrap();
    let t_end = 0.5;
    let ens = ensemble(&params(g.clone(), t_end, 15), n).unwrap();
    let h = 0.005;
    let grid = MarginalGrid::uniform(1.0, h, 6000).unwrap().with_point_mass(0);
    let out = solve(&grid, &g, 1.0, t_end, &SolveOptions::default()).unwrap();
    assert!(out.overflow < 1e-9);
    // edges halfway between nodes, so every node mass falls in one bin
    let edges: Vec<f64> = (0..=30).map(|k| 1.0 - 0.5 * h + k as f64).collect();
    let masses = out.masses();
    for (b, est) in ens.measure.v_histogram(&edges).iter().enumerate() {
        let p: f64 = out
            .nodes
            .iter()
            .zip(&masses)
            .filter(|(v, _)| **v >= edges[b] && **v < edges[b + 1])
            .map(|(_, m)| m)
            .sum();
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        // grid splitting error is O(h) per bin edge
        let numerical = 2.0 * h * p;
        assert!((est.mean - p).abs() <= 4.0 * sd + numerical + 1e-12, "bin {b}: {} vs {p}", est.mean);
    }
}

#[test]
fn path_average_matches_backward_solution() {
    let g = VolumeDistribution::uniform(0.5, 1.5).unwrap();
    let t_end = 1.0;
    let psi0 = |v: f64| (-v / 5.0).exp();
    let ens = ensemble(&params(g.clone(), t_end, 16), 50_000).unwrap();
    let mc = ens.measure.expect(|s| psi0(s[3]));
    let nodes: Vec<f64> = (0..=8000).map(|k| 1.0 + 0.005 * k as f64).collect();
    let vals: Vec<f64> = nodes.iter().map(|&v| psi0(v)).collect();
    let psi_t = solve_backward(&nodes, &vals, &g, 1.0, t_end, &SolveOptions::default()).unwrap();
    assert!((mc.mean - psi_t[0]).abs() < 4.0 * mc.std_err + 1e-5, "{mc:?} vs {}", psi_t[0]);
}
