//! Experiment dispatch, output files and the run manifest.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use ctp_core::analysis::audit::{self, displacement_audit, AuditReport};
use ctp_core::analysis::blowup::{run_blowup, write_blowup_csv, BlowupSetup};
use ctp_core::analysis::convergence::{convergence_study, write_convergence_csv, ConvergenceSetup};
use ctp_core::analysis::flights::{flight_stats, summarize, write_flight_csv};
use ctp_core::analysis::poisson_tail::{poisson_tail_check, write_tail_csv};
use ctp_core::kinetic::{self, JumpParams};
use ctp_core::marginal::{
    asymptotic_scaling_check, dirac_chain_snapshots, duality_check, mean_growth_ode, solve, write_asymptotics_csv,
    ChainOptions, MarginalGrid, SolveOptions,
};
use ctp_core::output::{csv_row, fmt_num, write_comment_header, BUILD_ID};
use ctp_core::rng::derive_seed;
use ctp_core::sim::{run_ensemble, write_summary_csv, SimParams};
use ctp_core::{CtpError, Vec3};

use crate::config::{AuditConstant, ConfigErrors, Experiment, ExperimentConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration errors:\n{0}")]
    Config(#[from] ConfigErrors),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] CtpError),
    #[error("check failed: {0}")]
    Check(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl CliError {
    /// Process exit code, one per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Pool(_) => 4,
            CliError::Check(_) => 5,
            CliError::Core(e) => match e {
                CtpError::InvalidParameter(_) => 10,
                CtpError::DivergentMoment { .. } => 11,
                CtpError::DoubleConsume(_) => 12,
                CtpError::CascadeOverflow { .. } => 13,
                CtpError::BudgetExceeded { .. } => 14,
                CtpError::JumpBudgetExceeded { .. } => 15,
                CtpError::MassDrift { .. } => 16,
                CtpError::GridOverflow { .. } => 17,
                CtpError::InconclusiveNoise(_) => 18,
                CtpError::ConstructionMismatch(_) => 19,
            },
        }
    }

    /// Short name stored in the manifest.
    pub fn code_name(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Pool(_) => "thread_pool",
            CliError::Check(_) => "check_failed",
            CliError::Core(e) => match e {
                CtpError::InvalidParameter(_) => "invalid_parameter",
                CtpError::DivergentMoment { .. } => "divergent_moment",
                CtpError::DoubleConsume(_) => "double_consume",
                CtpError::CascadeOverflow { .. } => "cascade_overflow",
                CtpError::BudgetExceeded { .. } => "budget_exceeded",
                CtpError::JumpBudgetExceeded { .. } => "jump_budget_exceeded",
                CtpError::MassDrift { .. } => "mass_drift",
                CtpError::GridOverflow { .. } => "grid_overflow",
                CtpError::InconclusiveNoise(_) => "inconclusive_noise",
                CtpError::ConstructionMismatch(_) => "construction_mismatch",
            },
        }
    }
}

/// What a finished run reports.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub error: Option<String>,
    pub error_code: Option<&'static str>,
    /// Output files relative to the output directory.
    pub files: Vec<String>,
    pub manifest: PathBuf,
}

struct Outputs<'a> {
    dir: &'a Path,
    header: String,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn create(&mut self, name: &str) -> io::Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    /// Writes one file through `f`, which receives the CSV header text.
    fn write<F>(&mut self, name: &str, f: F) -> io::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>, &str) -> io::Result<()>,
    {
        let header = format!("{}; file={name}", self.header);
        let mut w = self.create(name)?;
        f(&mut w, &header)?;
        w.flush()
    }
}

fn sim_params(cfg: &ExperimentConfig, phi: f64) -> SimParams {
    let m = &cfg.model;
    let mut p = SimParams::new(phi, m.u, m.t_end, m.v0, m.dist.clone());
    p.y0 = Vec3::new(m.y0[0], m.y0[1], m.y0[2]);
    p.seed = cfg.seed;
    p.eps_geom = cfg.sim.eps_geom;
    p.max_cascade = cfg.sim.max_cascade;
    p.v_budget = cfg.sim.v_budget;
    p.volume_estimate = cfg.sim.volume_estimate;
    p.cell_side = cfg.sim.cell_side;
    p.merge_rule = cfg.sim.merge_rule;
    p.record_wall_time = cfg.sim.timing;
    p
}

fn jump_params(cfg: &ExperimentConfig) -> JumpParams {
    let m = &cfg.model;
    let mut p = JumpParams::new(m.u, m.dist.clone(), m.v0, m.t_end);
    p.y0 = Vec3::new(m.y0[0], m.y0[1], m.y0[2]);
    p.seed = cfg.seed;
    p.max_jumps = cfg.kinetic.max_jumps;
    p
}

fn solve_options(cfg: &ExperimentConfig) -> SolveOptions {
    SolveOptions {
        dt_ctrl: cfg.solver.dt_ctrl,
        mass_tol: cfg.solver.mass_tol,
        overflow_tol: cfg.solver.overflow_tol,
        quad_tol: cfg.solver.quad_tol,
    }
}

fn run_particle(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let params = sim_params(cfg, cfg.model.phi);
    let ens = run_ensemble(&params, cfg.n_traj, cfg.seed, cfg.sim.n_logs > 0)?;
    out.write("summary.csv", |w, h| write_summary_csv(w, h, &ens.summaries))?;
    if let Some(logs) = &ens.logs {
        let mut w = out.create("events.jsonl")?;
        for log in logs.iter().take(cfg.sim.n_logs) {
            log.write_jsonl(&mut w)?;
        }
        w.flush()?;
    }
    let failures: Vec<String> = ens
        .summaries
        .iter()
        .filter_map(|s| s.error.as_ref().map(|e| format!("seed {}: {e}", s.seed)))
        .collect();
    let mean_v = ens.measure.mean_volume();
    Ok(json!({
        "stats": ens.stats,
        "mean_V": mean_v,
        "failures": failures,
    }))
}

fn run_kinetic(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let params = jump_params(cfg);
    let ens = kinetic::ensemble(&params, cfg.kinetic.n_paths)?;
    out.write("terminal.csv", |w, h| kinetic::write_terminal_csv(w, h, &ens.paths))?;
    if cfg.kinetic.n_logs > 0 {
        let mut w = out.create("paths.jsonl")?;
        for i in 0..cfg.kinetic.n_logs.min(cfg.kinetic.n_paths) as u64 {
            let mut p = params.clone();
            p.seed = derive_seed(params.seed, i);
            kinetic::simulate(&p)?.write_jsonl(&mut w)?;
        }
        w.flush()?;
    }
    Ok(json!({
        "n_paths": ens.paths.len(),
        "n_failed": ens.n_failed,
        "mean_V": ens.measure.mean_volume(),
        "mean_Y1": ens.measure.expect(|s| s[0]),
    }))
}

/// Top of the volume grid: well past the mean-growth prediction.
fn grid_top(cfg: &ExperimentConfig) -> Result<f64, CliError> {
    if let Some(v) = cfg.solver.v_max {
        return Ok(v);
    }
    let m = &cfg.model;
    let mean = mean_growth_ode(m.v0, m.u, &m.dist, &[m.t_end])?[0].ode;
    Ok((4.0 * mean).max(m.v0 + 20.0 * m.dist.v_max()))
}

fn run_marginal(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let m = &cfg.model;
    let opts = solve_options(cfg);
    let top = grid_top(cfg)?;
    let grid0 = MarginalGrid::geometric(m.v0, top, cfg.solver.h0, cfg.solver.ratio)?.with_point_mass(0);
    let sol = solve(&grid0, &m.dist, m.u, m.t_end, &opts)?;
    out.write("marginal.csv", |w, h| sol.write_csv(w, h))?;
    let psi0: Vec<f64> = grid0.nodes.iter().map(|&v| (-(v - m.v0) / (1.0 + m.v0)).exp()).collect();
    let duality = duality_check(&grid0, &psi0, &m.dist, m.u, m.t_end, &opts)?;
    let mut report = json!({
        "nodes": grid0.nodes.len(),
        "mass": sol.mass(),
        "mass_drift": (sol.mass() + sol.overflow - 1.0).abs(),
        "overflow": sol.overflow,
        "mean_V": sol.mean(),
        "var_V": sol.variance(),
        "duality": duality,
    });
    if let ctp_core::volume_dist::VolumeKind::Dirac { v0 } = m.dist.kind() {
        let chain_opts = ChainOptions {
            dt_ctrl: cfg.solver.dt_ctrl,
            tail_tol: cfg.solver.tail_tol,
            ..ChainOptions::default()
        };
        let chain = dirac_chain_snapshots(m.v0, *v0, m.u, &[m.t_end], None, &chain_opts)?.remove(0);
        out.write("chain.csv", |w, h| {
            write_comment_header(w, h)?;
            writeln!(w, "n,V,p")?;
            for (k, p) in chain.p.iter().enumerate() {
                let n = chain.offset + k;
                writeln!(w, "{n},{}", csv_row(&[chain.volume(n), *p]))?;
            }
            Ok(())
        })?;
        report["chain"] = json!({
            "mean_V": chain.mean(),
            "var_V": chain.variance(),
            "tail": chain.tail(),
            "n_max": chain.n_max,
        });
    }
    if duality.gap > 1e-6 {
        return Err(CliError::Check(format!("duality gap {:e} exceeds 1e-6", duality.gap)));
    }
    Ok(report)
}

fn run_convergence(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let m = &cfg.model;
    let setup = ConvergenceSetup {
        phi_list: cfg.convergence.phi_list.clone(),
        u: m.u,
        t_end: m.t_end,
        v0: m.v0,
        dist: m.dist.clone(),
        n_traj: cfg.n_traj,
        n_kinetic: cfg.convergence.n_kinetic.unwrap_or(cfg.n_traj),
        seed: cfg.seed,
        n_boot: cfg.convergence.n_boot,
    };
    let report = convergence_study(&setup)?;
    out.write("convergence.csv", |w, h| write_convergence_csv(w, h, &report))?;
    let assessment = report.assess()?;
    if !assessment.passed() {
        return Err(CliError::Check(format!("no resolved convergence trend: {assessment:?}")));
    }
    Ok(json!({ "slope": report.slope, "assessment": assessment }))
}

fn run_asymptotics(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let m = &cfg.model;
    let rows = asymptotic_scaling_check(&m.dist, m.u, m.v0, &cfg.asymptotics.t_list)?;
    out.write("asymptotics.csv", |w, h| write_asymptotics_csv(w, h, &rows))?;
    let growth = mean_growth_ode(m.v0, m.u, &m.dist, &cfg.asymptotics.t_list)?;
    out.write("mean_growth.csv", |w, h| {
        write_comment_header(w, h)?;
        writeln!(w, "T,V_ode,V_leading")?;
        for p in &growth {
            writeln!(w, "{}", csv_row(&[p.t, p.ode, p.leading]))?;
        }
        Ok(())
    })?;
    let var_decreasing = rows.windows(2).all(|w| w[1].var_w < w[0].var_w);
    Ok(json!({ "rows": rows, "var_decreasing": var_decreasing }))
}

fn run_lemmas(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let l = &cfg.lemmas;
    let xi: Vec<f64> = l.log_xi_list.iter().map(|x| x.exp()).collect();
    let rows = poisson_tail_check(&xi, &l.n_list)?;
    out.write("poisson_tail.csv", |w, h| write_tail_csv(w, h, &rows))?;
    let tail_violations = rows.iter().filter(|r| !r.holds()).count();

    let params = sim_params(cfg, l.audit_phi);
    if !params.dist.v_max().is_finite() {
        return Err(CtpError::InvalidParameter("the displacement audit needs a compact volume law".into()).into());
    }
    let ens = run_ensemble(&params, l.audit_n_traj, cfg.seed, true)?;
    let logs = ens.logs.expect("logs kept");
    let reports: Vec<AuditReport> = [audit::PAPER_CONSTANT, audit::corrected_constant()]
        .into_iter()
        .map(|c| displacement_audit(&logs, c))
        .collect();
    out.write("audit.csv", |w, h| {
        write_comment_header(w, &format!("{h}; sharp_constant={}", fmt_num(audit::sharp_constant())))?;
        writeln!(w, "constant,logs_checked,logs_skipped,merges_checked,violations,max_ratio")?;
        for r in &reports {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_num(r.constant),
                r.logs_checked,
                r.logs_skipped,
                r.merges_checked,
                r.violations,
                fmt_num(r.max_ratio)
            )?;
        }
        Ok(())
    })?;
    let stats: Vec<_> = logs.iter().map(|g| flight_stats(g, l.delta)).collect();
    out.write("flights.csv", |w, h| write_flight_csv(w, h, &stats))?;
    let flights = summarize(&stats);

    let asserted = match l.audit_constant {
        AuditConstant::Paper => &reports[0],
        AuditConstant::Corrected => &reports[1],
    };
    let report = json!({
        "tail_violations": tail_violations,
        "max_tail_ratio": rows.iter().map(|r| r.ratio).fold(0.0, f64::max),
        "audit": reports,
        "flights": flights,
    });
    if tail_violations > 0 {
        return Err(CliError::Check(format!("{tail_violations} tail-bound violations")));
    }
    if asserted.violations > 0 {
        return Err(CliError::Check(format!(
            "{} displacement violations with constant {}",
            asserted.violations, asserted.constant
        )));
    }
    Ok(report)
}

fn run_blowup_experiment(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let b = &cfg.blowup;
    let setup = BlowupSetup {
        v_target: b.v_target,
        t_margin: b.t_margin,
        perturb: (b.perturb_index > 0).then_some((b.perturb_index, b.perturb_offset)),
    };
    let rec = run_blowup(&setup)?;
    out.write("blowup.csv", |w, h| write_blowup_csv(w, h, &rec))?;
    let report = json!({
        "escape_time": rec.escape_time,
        "escape_index": rec.escape_index,
        "total_length": rec.total_length,
        "blew_up": rec.blew_up(),
        "max_time_deviation": rec.max_time_deviation(),
        "final_volume": rec.final_volume,
        "stop": rec.stop,
    });
    rec.verify()?;
    if !rec.blew_up() {
        return Err(CliError::Check("target volume not reached before the accumulation time".into()));
    }
    Ok(report)
}

fn dispatch(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    match cfg.experiment {
        Experiment::Particle => run_particle(cfg, out),
        Experiment::Kinetic => run_kinetic(cfg, out),
        Experiment::Marginal => run_marginal(cfg, out),
        Experiment::Convergence => run_convergence(cfg, out),
        Experiment::Asymptotics => run_asymptotics(cfg, out),
        Experiment::Lemmas => run_lemmas(cfg, out),
        Experiment::Blowup => run_blowup_experiment(cfg, out),
    }
}

/// Runs the experiment on a pool of `cfg.threads` workers and writes
/// `manifest.json` next to the outputs, whatever the outcome.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    if cfg.seed_defaulted {
        log::warn!("no seed given; using 0");
    }
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    let mut out = Outputs {
        dir,
        header: cfg.header(),
        files: Vec::new(),
    };
    let started = Instant::now();
    let result = pool.install(|| dispatch(cfg, &mut out));
    let runtime_s = started.elapsed().as_secs_f64();

    let (report, error) = match result {
        Ok(r) => (r, None),
        Err(e) => (Value::Null, Some(e)),
    };
    let exit_code = error.as_ref().map_or(0, CliError::exit_code);
    let manifest = json!({
        "experiment": cfg.experiment,
        "config": cfg,
        "config_echo": cfg.echo(),
        "runtime_s": runtime_s,
        "versions": {
            "build": BUILD_ID,
            "ctp_core": ctp_core::VERSION,
            "ctp_cli": env!("CARGO_PKG_VERSION"),
        },
        "files": out.files,
        "exit_code": exit_code,
        "error_code": error.as_ref().map(CliError::code_name),
        "error": error.as_ref().map(ToString::to_string),
        "report": report,
    });
    let manifest_path = dir.join("manifest.json");
    let mut w = BufWriter::new(File::create(&manifest_path)?);
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    if let Some(e) = &error {
        log::error!("{e}");
    }
    Ok(RunOutcome {
        exit_code,
        error: error.as_ref().map(ToString::to_string),
        error_code: error.as_ref().map(CliError::code_name),
        files: out.files,
        manifest: manifest_path,
    })
}
