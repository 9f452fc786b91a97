//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria listed in `KNOWN_FAILURES` are implemented as stated and fail on
//! their own numbers; see the README. Any other failure exits nonzero.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use ctp_cli::{parse_config_with, run, Experiment};
use ctp_core::analysis::audit::{corrected_constant, displacement_audit, sharp_constant, PAPER_CONSTANT};
use ctp_core::analysis::blowup::blowup_demo;
use ctp_core::analysis::convergence::{convergence_study, ConvergenceSetup};
use ctp_core::analysis::poisson_tail::poisson_tail_check;
use ctp_core::kinetic::{ensemble, JumpParams};
use ctp_core::marginal::{
    asymptotic_scaling_check, chain_duality_check, dirac_chain, duality_check, mean_growth_ode, solve, MarginalGrid,
    SolveOptions,
};
use ctp_core::sim::run_ensemble;
use ctp_core::{SimParams, VolumeDistribution};

const KNOWN_FAILURES: &[u32] = &[3, 5];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn dirac1() -> VolumeDistribution {
    VolumeDistribution::dirac(1.0).unwrap()
}

fn compact() -> VolumeDistribution {
    VolumeDistribution::uniform(0.5, 1.5).unwrap()
}

fn dirac_chain_oracle() -> Verdict {
    let n = 100_000;
    let mut p = JumpParams::new(1.0, dirac1(), 1.0, 1.0);
    p.seed = 20_240_501;
    let ens = ensemble(&p, n).unwrap();
    let chain = dirac_chain(1.0, 1.0, 1.0, 1.0, None).unwrap();
    let m = ens.measure.mean_volume();
    let mean_ok = (m.mean - chain.mean()).abs() < 4.0 * m.std_err;
    let edges: Vec<f64> = (0..=80).map(|k| 0.5 + k as f64).collect();
    let mut bad_bins = 0;
    let mut occupied = 0;
    for (k, est) in ens.measure.v_histogram(&edges).iter().enumerate() {
        if est.mean == 0.0 {
            continue;
        }
        occupied += 1;
        let q = chain.prob(k);
        let sd = (q * (1.0 - q) / n as f64).sqrt().max(1.0 / n as f64);
        if (est.mean - q).abs() > 4.0 * sd {
            bad_bins += 1;
        }
    }
    verdict(
        mean_ok && bad_bins == 0,
        format!(
            "E[V] mc={:.5} se={:.5} chain={:.5}; {bad_bins}/{occupied} occupied bins outside 4 sigma",
            m.mean,
            m.std_err,
            chain.mean()
        ),
    )
}

fn particle_to_kinetic() -> Verdict {
    let mut setup = ConvergenceSetup::new(vec![3e-2, 1e-2, 3e-3, 1e-3], dirac1(), 20_000);
    setup.seed = 7;
    let report = convergence_study(&setup).unwrap();
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("phi={} W1={:.4}+-{:.4} binary={:.4}", r.phi, r.w1, r.w1_noise, r.binary_fraction))
        .collect();
    match report.assess() {
        Ok(a) => verdict(
            a.passed(),
            format!(
                "w1_monotone={} drop_resolved={} binary_monotone={}; {}",
                a.w1_monotone,
                a.w1_drop_resolved,
                a.binary_monotone,
                rows.join("; ")
            ),
        ),
        Err(e) => verdict(false, format!("{e}; {}", rows.join("; "))),
    }
}

fn cubic_growth() -> Verdict {
    let rows = asymptotic_scaling_check(&dirac1(), 1.0, 0.0, &[10.0, 30.0, 100.0]).unwrap();
    let last = rows.last().unwrap();
    let rel = (last.mean_w - last.a_ode).abs() / last.a_ode;
    let var_down = rows.windows(2).all(|w| w[1].var_w < w[0].var_w);
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("T={} meanW={:.5} varW={:.3e}", r.t, r.mean_w, r.var_w))
        .collect();
    let ode = mean_growth_ode(0.0, 1.0, &dirac1(), &[100.0]).unwrap()[0].ode / 1e6;
    verdict(
        rel < 0.1 && var_down,
        format!(
            "rel_err={rel:.3} var_monotone={var_down}; a_ODE={:.5} a_paper_literal={:.5} mean_ode_T100/T^3={ode:.5}; {}",
            last.a_ode,
            last.a_paper_literal,
            table.join("; ")
        ),
    )
}

fn tail_bound() -> Verdict {
    let xi: Vec<f64> = [-2.1f64, -3.0, -5.0].iter().map(|l| l.exp()).collect();
    let rows = poisson_tail_check(&xi, &[1, 5, 10, 50, 200]).unwrap();
    let violations = rows.iter().filter(|r| !r.holds()).count();
    let worst = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    verdict(
        violations == 0,
        format!("{violations}/{} violations, largest psi/bound={worst:.3e}", rows.len()),
    )
}

fn displacement_bound() -> Verdict {
    let mut p = SimParams::new(1e-3, 1.0, 1.0, 1.0, compact());
    p.seed = 11;
    let ens = run_ensemble(&p, 10_000, 11, true).unwrap();
    let logs = ens.logs.unwrap();
    let paper = displacement_audit(&logs, PAPER_CONSTANT);
    let corrected = displacement_audit(&logs, corrected_constant());
    verdict(
        paper.violations == 0,
        format!(
            "9/(2pi): {}/{} merges violate ({} logs, {} skipped), max ratio {:.4}; 6 sigma={:.4}: {} violations; sharp constant {:.4}",
            paper.violations,
            paper.merges_checked,
            paper.logs_checked,
            paper.logs_skipped,
            paper.max_ratio,
            corrected_constant(),
            corrected.violations,
            sharp_constant()
        ),
    )
}

fn blowup() -> Verdict {
    match blowup_demo(10_000) {
        Ok(rec) => {
            let volumes_ok = rec.absorptions.iter().all(|a| a.v == (a.j + 1) as f64);
            let dev = rec.max_time_deviation();
            verdict(
                volumes_ok && dev <= 1e-9 && rec.blew_up() && rec.final_volume >= 1e4,
                format!(
                    "{} absorptions, V_j=j+1: {volumes_ok}, max rel time deviation {dev:.2e}, final V={}, escape index {:?}",
                    rec.absorptions.len(),
                    rec.final_volume,
                    rec.escape_index
                ),
            )
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

fn conservation_and_duality() -> Verdict {
    let opts = SolveOptions::default();
    let g = compact();
    let mean = mean_growth_ode(1.0, 1.0, &g, &[10.0]).unwrap()[0].ode;
    let grid = MarginalGrid::geometric(1.0, 4.0 * mean + 30.0, 0.05, 1.02).unwrap().with_point_mass(0);
    let out = solve(&grid, &g, 1.0, 10.0, &opts).unwrap();
    let grid_drift = (out.mass() + out.overflow - 1.0).abs();
    let chain = dirac_chain(1.0, 1.0, 1.0, 10.0, None).unwrap();
    let chain_drift = (chain.mass() + chain.dropped - 1.0).abs();
    let psi: Vec<f64> = grid.nodes.iter().map(|v| (-v / 100.0).exp()).collect();
    let grid_gap = duality_check(&grid, &psi, &g, 1.0, 10.0, &opts).unwrap().gap;
    let n_max = chain.n_max;
    let chain_gap = chain_duality_check(1.0, 1.0, 1.0, 10.0, n_max, &|n| (-(n as f64) / 100.0).exp(), 0.5)
        .unwrap()
        .gap;
    verdict(
        grid_drift < 1e-8 && chain_drift < 1e-8 && grid_gap < 1e-6 && chain_gap < 1e-8,
        format!("mass drift grid={grid_drift:.2e} chain={chain_drift:.2e}; duality gap grid={grid_gap:.2e} chain={chain_gap:.2e}"),
    )
}

const SMALL_CONFIGS: &[(Experiment, &str)] = &[
    (Experiment::Particle, "n_traj = 400\n[model]\nphi = 0.01\n[sim]\nn_logs = 4\n"),
    (Experiment::Kinetic, "[kinetic]\nn_paths = 2000\nn_logs = 3\n"),
    (Experiment::Marginal, "[model]\nT = 2\n[dist]\nkind = uniform\na = 0.5\nb = 1.5\n"),
    (Experiment::Convergence, "n_traj = 500\n[convergence]\nphi_list = 0.03, 0.01\nn_boot = 8\n"),
    (Experiment::Asymptotics, "[asymptotics]\nT_list = 2, 4, 8\n"),
    (Experiment::Lemmas, "[lemmas]\naudit_n_traj = 300\n"),
    (Experiment::Blowup, "[blowup]\nv_target = 2000\n"),
];

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for (exp, body) in SMALL_CONFIGS {
        let mut outputs = Vec::new();
        for threads in [1, 8] {
            let dir = root.path().join(format!("{}-{threads}", exp.name()));
            let text = format!("seed = 5\nthreads = {threads}\noutput_dir = {}\n{body}", dir.display());
            let cfg = parse_config_with(&text, Some(*exp)).unwrap();
            let outcome = run(&cfg).unwrap();
            let files: Vec<(String, Vec<u8>)> = outcome
                .files
                .iter()
                .map(|f| (f.clone(), fs::read(dir.join(f)).unwrap()))
                .collect();
            outputs.push(files);
        }
        compared += outputs[0].len();
        if outputs[0] != outputs[1] {
            mismatched.push(exp.name());
        }
    }
    verdict(
        mismatched.is_empty() && compared > 0,
        format!("{compared} files compared across 1 and 8 threads; mismatched experiments: {mismatched:?}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Verdict); 8] = [
        (1, "dirac chain oracle", dirac_chain_oracle),
        (2, "particle to kinetic convergence", particle_to_kinetic),
        (3, "cubic growth law", cubic_growth),
        (4, "poisson tail bound", tail_bound),
        (5, "displacement bound", displacement_bound),
        (6, "blow-up reproduction", blowup),
        (7, "conservation and duality", conservation_and_duality),
        (8, "determinism", determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        let start = Instant::now();
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        let note = if !v.pass && KNOWN_FAILURES.contains(&id) { " [known]" } else { "" };
        println!(
            "criterion {id} {tag}{note}: {name} ({:.1}s) {}",
            start.elapsed().as_secs_f64(),
            v.detail
        );
        if !v.pass && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
