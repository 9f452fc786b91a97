//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`, `# comment` or `[section]`. A key inside a
//! section is addressed as `section.key`. Every key has a default except
//! `experiment`, which may also come from the subcommand.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use ctp_core::sim::MergeRule;
use ctp_core::VolumeDistribution;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("{key}: {message}")]
    ValidationError { key: String, message: String },
}

impl ConfigError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        ConfigError::ParseError {
            line,
            message: message.into(),
        }
    }

    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::ValidationError {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

/// Every error found in one configuration text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Particle,
    Kinetic,
    Marginal,
    Convergence,
    Asymptotics,
    Lemmas,
    Blowup,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Particle,
        Experiment::Kinetic,
        Experiment::Marginal,
        Experiment::Convergence,
        Experiment::Asymptotics,
        Experiment::Lemmas,
        Experiment::Blowup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Particle => "particle",
            Experiment::Kinetic => "kinetic",
            Experiment::Marginal => "marginal",
            Experiment::Convergence => "convergence",
            Experiment::Asymptotics => "asymptotics",
            Experiment::Lemmas => "lemmas",
            Experiment::Blowup => "blowup",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

/// Which constant the displacement audit asserts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditConstant {
    /// `9 / (2π)`
    Paper,
    /// `6σ`
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub phi: f64,
    pub u: f64,
    pub t_end: f64,
    pub v0: f64,
    pub y0: [f64; 3],
    pub dist: VolumeDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub eps_geom: f64,
    pub max_cascade: usize,
    pub v_budget: f64,
    pub volume_estimate: f64,
    pub cell_side: Option<f64>,
    pub merge_rule: MergeRule,
    pub timing: bool,
    pub n_logs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KineticConfig {
    pub n_paths: usize,
    pub max_jumps: usize,
    pub n_logs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub dt_ctrl: f64,
    pub mass_tol: f64,
    pub overflow_tol: f64,
    pub quad_tol: f64,
    pub tail_tol: f64,
    pub v_max: Option<f64>,
    pub h0: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceConfig {
    pub phi_list: Vec<f64>,
    pub n_kinetic: Option<usize>,
    pub n_boot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticsConfig {
    pub t_list: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmasConfig {
    pub log_xi_list: Vec<f64>,
    pub n_list: Vec<u64>,
    pub audit_phi: f64,
    pub audit_n_traj: usize,
    pub audit_constant: AuditConstant,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupConfig {
    pub v_target: usize,
    pub t_margin: f64,
    pub perturb_index: usize,
    pub perturb_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: usize,
    pub n_traj: usize,
    pub model: ModelConfig,
    pub sim: SimConfig,
    pub kinetic: KineticConfig,
    pub solver: SolverConfig,
    pub convergence: ConvergenceConfig,
    pub asymptotics: AsymptoticsConfig,
    pub lemmas: LemmasConfig,
    pub blowup: BlowupConfig,
    /// `seed` was not given and defaulted to 0.
    #[serde(skip)]
    pub seed_defaulted: bool,
}

/// One documented key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn spec(key: &'static str, kind: &'static str, default: &'static str, doc: &'static str) -> KeySpec {
    KeySpec { key, kind, default, doc }
}

pub const SECTIONS: [&str; 9] = [
    "model",
    "dist",
    "sim",
    "kinetic",
    "solver",
    "convergence",
    "asymptotics",
    "lemmas",
    "blowup",
];

/// The documented key list, in echo order.
pub const SCHEMA: &[KeySpec] = &[
    spec("experiment", "enum", "", "particle | kinetic | marginal | convergence | asymptotics | lemmas | blowup; may come from the subcommand"),
    spec("seed", "u64", "0", "base seed of every random stream; a warning is logged when missing"),
    spec("output_dir", "path", "out", "directory receiving CSV files and manifest.json"),
    spec("threads", "usize", "1", "worker threads; outputs do not depend on it"),
    spec("n_traj", "usize", "1000", "particle trajectories per ensemble"),
    spec("model.phi", "f64", "0.001", "volume fraction, in (0, 1)"),
    spec("model.U", "f64", "1.0", "rescaled speed, > 0"),
    spec("model.T", "f64", "1.0", "time horizon, >= 0"),
    spec("model.V0", "f64", "1.0", "initial tagged volume, >= 0"),
    spec("model.Y0", "f64 x3", "0.0, 0.0, 0.0", "initial rescaled displacement"),
    spec("dist.kind", "enum", "dirac", "dirac | uniform | pareto | tabulated"),
    spec("dist.v0", "f64", "1.0", "dirac: atom"),
    spec("dist.a", "f64", "", "uniform: lower end"),
    spec("dist.b", "f64", "", "uniform: upper end"),
    spec("dist.exponent", "f64", "", "pareto: density exponent"),
    spec("dist.v_min", "f64", "", "pareto: lower end"),
    spec("dist.v_max", "f64", "", "pareto: upper end or inf"),
    spec("dist.grid", "f64 list", "", "tabulated: increasing volumes"),
    spec("dist.cdf", "f64 list", "", "tabulated: CDF values on the grid"),
    spec("sim.eps_geom", "f64", "1e-12", "relative geometric tolerance, in (0, 1e-3)"),
    spec("sim.max_cascade", "usize", "1000000", "merge steps allowed in one coalescence"),
    spec("sim.v_budget", "f64", "inf", "volume ceiling per trajectory"),
    spec("sim.volume_estimate", "f64", "100.0", "expected final volume, sizes field cells"),
    spec("sim.cell_side", "f64 | auto", "auto", "field cell side"),
    spec("sim.merge_rule", "enum", "center_of_mass", "center_of_mass | paper_literal"),
    spec("sim.timing", "bool", "false", "record wall-clock time per trajectory (breaks byte-identical output)"),
    spec("sim.n_logs", "usize", "0", "event logs written as JSON lines"),
    spec("kinetic.n_paths", "usize", "10000", "kinetic Monte Carlo paths"),
    spec("kinetic.max_jumps", "usize", "10000000", "jump cap per path"),
    spec("kinetic.n_logs", "usize", "0", "full paths written as JSON lines"),
    spec("solver.dt_ctrl", "f64", "0.5", "bound on dt times the largest rate"),
    spec("solver.mass_tol", "f64", "1e-8", "largest tolerated mass drift"),
    spec("solver.overflow_tol", "f64", "1e-6", "largest tolerated mass leaving the grid"),
    spec("solver.quad_tol", "f64", "1e-12", "quadrature tolerance"),
    spec("solver.tail_tol", "f64", "1e-12", "largest tolerated chain tail mass"),
    spec("solver.v_max", "f64 | auto", "auto", "top of the volume grid"),
    spec("solver.h0", "f64", "0.05", "first grid step"),
    spec("solver.ratio", "f64", "1.02", "geometric growth of grid steps, >= 1"),
    spec("convergence.phi_list", "f64 list", "0.03, 0.01, 0.003, 0.001", "decreasing volume fractions"),
    spec("convergence.n_kinetic", "usize | auto", "auto", "kinetic reference paths (auto: n_traj)"),
    spec("convergence.n_boot", "usize", "64", "bootstrap resamples for the W1 noise"),
    spec("asymptotics.T_list", "f64 list", "10.0, 30.0, 100.0", "increasing horizons"),
    spec("lemmas.log_xi_list", "f64 list", "-2.1, -3.0, -5.0", "log xi*, each < -2"),
    spec("lemmas.N_list", "u64 list", "1, 5, 10, 50, 200", "tail orders, >= 1"),
    spec("lemmas.audit_phi", "f64", "0.001", "volume fraction of the audited ensemble"),
    spec("lemmas.audit_n_traj", "usize", "1000", "trajectories audited"),
    spec("lemmas.audit_constant", "enum", "corrected", "paper (9/(2pi)) | corrected (6 sigma); the asserted constant"),
    spec("lemmas.delta", "f64", "0.01", "small-flight threshold"),
    spec("blowup.v_target", "usize", "10000", "volume to reach, >= 2"),
    spec("blowup.t_margin", "f64", "1.0", "time simulated past the accumulation point"),
    spec("blowup.perturb_index", "usize", "0", "obstacle moved off the axis (0: none)"),
    spec("blowup.perturb_offset", "f64", "0.0", "off-axis offset, rescaled units"),
];

pub fn schema_text() -> String {
    let mut out = String::new();
    for s in SCHEMA {
        let default = if s.default.is_empty() { "-" } else { s.default };
        let _ = writeln!(out, "{:<26} {:<14} default: {:<26} {}", s.key, s.kind, default, s.doc);
    }
    out
}

fn parse_f64(s: &str) -> Result<f64, String> {
    match s {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => s
            .parse::<f64>()
            .ok()
            .filter(|x| !x.is_nan())
            .ok_or_else(|| format!("not a number: `{s}`")),
    }
}

fn parse_list<T, F: Fn(&str) -> Result<T, String>>(s: &str, item: F) -> Result<Vec<T>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| item(x.trim())).collect()
}

fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else {
        format!("{x:?}")
    }
}

fn fmt_list<T, F: Fn(&T) -> String>(xs: &[T], f: F) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(", ")
}

struct Entry {
    value: String,
    line: usize,
}

/// Splits the text into keyed entries; syntax errors are collected.
fn tokenize(text: &str, errors: &mut Vec<ConfigError>) -> BTreeMap<String, Entry> {
    let mut out = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            match rest.strip_suffix(']').map(str::trim) {
                Some(name) if SECTIONS.contains(&name) => section = Some(name.to_string()),
                Some(name) => errors.push(ConfigError::parse(line, format!("unknown section `[{name}]`"))),
                None => errors.push(ConfigError::parse(line, "unterminated section header")),
            }
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            errors.push(ConfigError::parse(line, format!("expected `key = value`, got `{content}`")));
            continue;
        };
        let k = k.trim();
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            errors.push(ConfigError::parse(line, format!("invalid key `{k}`")));
            continue;
        }
        let key = match &section {
            Some(s) => format!("{s}.{k}"),
            None => k.to_string(),
        };
        if let Some(prev) = out.get(&key) {
            let prev: &Entry = prev;
            errors.push(ConfigError::parse(line, format!("duplicate key `{key}` (first on line {})", prev.line)));
            continue;
        }
        out.insert(
            key,
            Entry {
                value: v.trim().to_string(),
                line,
            },
        );
    }
    out
}

struct Reader {
    entries: BTreeMap<String, Entry>,
    used: BTreeSet<String>,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn raw(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.entries.get(key).map(|e| e.value.clone())
    }

    /// Value of `key` parsed with `parse`, or `default` when absent or invalid
    /// (the error is recorded).
    fn get<T, F: Fn(&str) -> Result<T, String>>(&mut self, key: &str, default: T, parse: F) -> T {
        match self.raw(key) {
            None => default,
            Some(v) => parse(&v).unwrap_or_else(|m| {
                self.errors.push(ConfigError::invalid(key, m));
                default
            }),
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> f64 {
        self.get(key, default, parse_f64)
    }

    fn usize(&mut self, key: &str, default: usize) -> usize {
        self.get(key, default, |s| s.parse().map_err(|_| format!("not a non-negative integer: `{s}`")))
    }

    fn auto_f64(&mut self, key: &str) -> Option<f64> {
        self.get(key, None, |s| if s == "auto" { Ok(None) } else { parse_f64(s).map(Some) })
    }

    fn check(&mut self, key: &str, ok: bool, message: impl Into<String>) {
        if !ok {
            self.errors.push(ConfigError::invalid(key, message));
        }
    }
}

/// Parses and validates; `experiment` falls back to `default_experiment`.
pub fn parse_config_with(text: &str, default_experiment: Option<Experiment>) -> Result<ExperimentConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let entries = tokenize(text, &mut errors);
    let mut r = Reader {
        entries,
        used: BTreeSet::new(),
        errors,
    };

    let experiment = match (r.raw("experiment"), default_experiment) {
        (Some(v), sub) => match v.parse::<Experiment>() {
            Ok(e) if sub.is_none_or(|s| s == e) => Some(e),
            Ok(e) => {
                r.errors.push(ConfigError::invalid(
                    "experiment",
                    format!("config says `{}` but the subcommand is `{}`", e.name(), sub.unwrap().name()),
                ));
                None
            }
            Err(m) => {
                r.errors.push(ConfigError::invalid("experiment", m));
                None
            }
        },
        (None, Some(e)) => Some(e),
        (None, None) => {
            r.errors.push(ConfigError::invalid("experiment", "missing"));
            None
        }
    };
    let seed_raw = r.raw("seed");
    let seed_defaulted = seed_raw.is_none();
    let seed = match seed_raw {
        None => 0,
        Some(v) => v.parse::<u64>().unwrap_or_else(|_| {
            r.errors.push(ConfigError::invalid("seed", format!("not a u64: `{v}`")));
            0
        }),
    };
    let output_dir = PathBuf::from(r.raw("output_dir").unwrap_or_else(|| "out".into()));
    let threads = r.usize("threads", 1);
    r.check("threads", threads >= 1, "must be >= 1");
    let n_traj = r.usize("n_traj", 1000);
    r.check("n_traj", n_traj >= 1, "must be >= 1");

    let phi = r.f64("model.phi", 1e-3);
    r.check("model.phi", phi > 0.0 && phi < 1.0, format!("{phi} is out of (0, 1)"));
    let u = r.f64("model.U", 1.0);
    r.check("model.U", u > 0.0 && u.is_finite(), "must be finite and > 0");
    let t_end = r.f64("model.T", 1.0);
    r.check("model.T", t_end >= 0.0 && t_end.is_finite(), "must be finite and >= 0");
    let v0 = r.f64("model.V0", 1.0);
    r.check("model.V0", v0 >= 0.0 && v0.is_finite(), "must be finite and >= 0");
    let y0 = r.get("model.Y0", [0.0; 3], |s| {
        let v = parse_list(s, parse_f64)?;
        <[f64; 3]>::try_from(v).map_err(|v| format!("expected 3 components, got {}", v.len()))
    });

    let dist = read_dist(&mut r);

    let eps_geom = r.f64("sim.eps_geom", 1e-12);
    r.check("sim.eps_geom", eps_geom > 0.0 && eps_geom < 1e-3, "must lie in (0, 1e-3)");
    let max_cascade = r.usize("sim.max_cascade", 1_000_000);
    r.check("sim.max_cascade", max_cascade >= 1, "must be >= 1");
    let v_budget = r.f64("sim.v_budget", f64::INFINITY);
    r.check("sim.v_budget", v_budget > 0.0, "must be > 0");
    let volume_estimate = r.f64("sim.volume_estimate", 100.0);
    r.check("sim.volume_estimate", volume_estimate > 0.0 && volume_estimate.is_finite(), "must be finite and > 0");
    let cell_side = r.auto_f64("sim.cell_side");
    r.check("sim.cell_side", cell_side.is_none_or(|s| s > 0.0 && s.is_finite()), "must be finite and > 0");
    let merge_rule = r.get("sim.merge_rule", MergeRule::CenterOfMass, |s| match s {
        "center_of_mass" => Ok(MergeRule::CenterOfMass),
        "paper_literal" => Ok(MergeRule::PaperLiteral),
        _ => Err(format!("unknown merge rule `{s}`")),
    });
    let timing = r.get("sim.timing", false, |s| s.parse::<bool>().map_err(|_| format!("not a bool: `{s}`")));
    let sim_logs = r.usize("sim.n_logs", 0);

    let n_paths = r.usize("kinetic.n_paths", 10_000);
    r.check("kinetic.n_paths", n_paths >= 1, "must be >= 1");
    let max_jumps = r.usize("kinetic.max_jumps", 10_000_000);
    r.check("kinetic.max_jumps", max_jumps >= 1, "must be >= 1");
    let kin_logs = r.usize("kinetic.n_logs", 0);

    let dt_ctrl = r.f64("solver.dt_ctrl", 0.5);
    r.check("solver.dt_ctrl", dt_ctrl > 0.0 && dt_ctrl <= 2.0, "must lie in (0, 2]");
    let positive = |r: &mut Reader, key: &str, d: f64| {
        let x = r.f64(key, d);
        r.check(key, x > 0.0 && x.is_finite(), "must be finite and > 0");
        x
    };
    let mass_tol = positive(&mut r, "solver.mass_tol", 1e-8);
    let overflow_tol = positive(&mut r, "solver.overflow_tol", 1e-6);
    let quad_tol = positive(&mut r, "solver.quad_tol", 1e-12);
    let tail_tol = positive(&mut r, "solver.tail_tol", 1e-12);
    let v_max = r.auto_f64("solver.v_max");
    r.check("solver.v_max", v_max.is_none_or(|v| v > v0 && v.is_finite()), "must be finite and above model.V0");
    let h0 = positive(&mut r, "solver.h0", 0.05);
    let ratio = r.f64("solver.ratio", 1.02);
    r.check("solver.ratio", (1.0..=2.0).contains(&ratio), "must lie in [1, 2]");

    let phi_list = r.get("convergence.phi_list", vec![3e-2, 1e-2, 3e-3, 1e-3], |s| parse_list(s, parse_f64));
    r.check(
        "convergence.phi_list",
        !phi_list.is_empty() && phi_list.iter().all(|&p| p > 0.0 && p < 1.0) && phi_list.windows(2).all(|w| w[1] < w[0]),
        "must be non-empty, decreasing and inside (0, 1)",
    );
    let n_kinetic = r.get("convergence.n_kinetic", None, |s| {
        if s == "auto" {
            Ok(None)
        } else {
            s.parse::<usize>().map(Some).map_err(|_| format!("not an integer: `{s}`"))
        }
    });
    r.check("convergence.n_kinetic", n_kinetic.is_none_or(|n| n >= 2), "must be >= 2");
    let n_boot = r.usize("convergence.n_boot", 64);
    r.check("convergence.n_boot", n_boot >= 2, "must be >= 2");

    let t_list = r.get("asymptotics.T_list", vec![10.0, 30.0, 100.0], |s| parse_list(s, parse_f64));
    r.check(
        "asymptotics.T_list",
        !t_list.is_empty() && t_list[0] > 0.0 && t_list.windows(2).all(|w| w[1] > w[0]) && t_list.iter().all(|t| t.is_finite()),
        "must be non-empty, positive, finite and increasing",
    );

    let log_xi_list = r.get("lemmas.log_xi_list", vec![-2.1, -3.0, -5.0], |s| parse_list(s, parse_f64));
    r.check(
        "lemmas.log_xi_list",
        !log_xi_list.is_empty() && log_xi_list.iter().all(|&x| x < -2.0 && x.is_finite()),
        "every entry must be finite and < -2",
    );
    let n_list = r.get("lemmas.N_list", vec![1, 5, 10, 50, 200], |s| {
        parse_list(s, |x| x.parse::<u64>().map_err(|_| format!("not an integer: `{x}`")))
    });
    r.check("lemmas.N_list", !n_list.is_empty() && n_list.iter().all(|&n| n >= 1), "every entry must be >= 1");
    let audit_phi = r.f64("lemmas.audit_phi", 1e-3);
    r.check("lemmas.audit_phi", audit_phi > 0.0 && audit_phi < 1.0, format!("{audit_phi} is out of (0, 1)"));
    let audit_n_traj = r.usize("lemmas.audit_n_traj", 1000);
    r.check("lemmas.audit_n_traj", audit_n_traj >= 1, "must be >= 1");
    let audit_constant = r.get("lemmas.audit_constant", AuditConstant::Corrected, |s| match s {
        "paper" => Ok(AuditConstant::Paper),
        "corrected" => Ok(AuditConstant::Corrected),
        _ => Err(format!("unknown audit constant `{s}`")),
    });
    let delta = positive(&mut r, "lemmas.delta", 0.01);

    let v_target = r.usize("blowup.v_target", 10_000);
    r.check("blowup.v_target", v_target >= 2, "must be >= 2");
    let t_margin = r.f64("blowup.t_margin", 1.0);
    r.check("blowup.t_margin", t_margin >= 0.0 && t_margin.is_finite(), "must be finite and >= 0");
    let perturb_index = r.usize("blowup.perturb_index", 0);
    let perturb_offset = r.f64("blowup.perturb_offset", 0.0);
    r.check("blowup.perturb_offset", perturb_offset.is_finite(), "must be finite");

    let unknown: Vec<(String, usize)> = r
        .entries
        .iter()
        .filter(|(k, _)| !r.used.contains(*k))
        .map(|(k, e)| (k.clone(), e.line))
        .collect();
    for (k, line) in unknown {
        r.errors.push(ConfigError::invalid(&k, format!("unknown key (line {line})")));
    }

    if !r.errors.is_empty() {
        return Err(ConfigErrors(r.errors));
    }
    Ok(ExperimentConfig {
        experiment: experiment.expect("checked"),
        seed,
        output_dir,
        threads,
        n_traj,
        model: ModelConfig {
            phi,
            u,
            t_end,
            v0,
            y0,
            dist: dist.expect("checked"),
        },
        sim: SimConfig {
            eps_geom,
            max_cascade,
            v_budget,
            volume_estimate,
            cell_side,
            merge_rule,
            timing,
            n_logs: sim_logs,
        },
        kinetic: KineticConfig {
            n_paths,
            max_jumps,
            n_logs: kin_logs,
        },
        solver: SolverConfig {
            dt_ctrl,
            mass_tol,
            overflow_tol,
            quad_tol,
            tail_tol,
            v_max,
            h0,
            ratio,
        },
        convergence: ConvergenceConfig {
            phi_list,
            n_kinetic,
            n_boot,
        },
        asymptotics: AsymptoticsConfig { t_list },
        lemmas: LemmasConfig {
            log_xi_list,
            n_list,
            audit_phi,
            audit_n_traj,
            audit_constant,
            delta,
        },
        blowup: BlowupConfig {
            v_target,
            t_margin,
            perturb_index,
            perturb_offset,
        },
        seed_defaulted,
    })
}

/// Keys used by each distribution kind, besides `kind`.
fn dist_keys(kind: &str) -> Option<&'static [&'static str]> {
    match kind {
        "dirac" => Some(&["v0"]),
        "uniform" => Some(&["a", "b"]),
        "pareto" => Some(&["exponent", "v_min", "v_max"]),
        "tabulated" => Some(&["grid", "cdf"]),
        _ => None,
    }
}

fn read_dist(r: &mut Reader) -> Option<VolumeDistribution> {
    let kind = r.raw("dist.kind").unwrap_or_else(|| "dirac".into());
    let Some(keys) = dist_keys(&kind) else {
        r.errors.push(ConfigError::invalid("dist.kind", format!("unknown distribution kind `{kind}`")));
        return None;
    };
    let mut values: BTreeMap<&str, String> = BTreeMap::new();
    for &k in keys {
        if let Some(v) = r.raw(&format!("dist.{k}")) {
            values.insert(k, v);
        }
    }
    if kind == "dirac" {
        values.entry("v0").or_insert_with(|| "1.0".into());
    }
    let missing: Vec<&str> = keys.iter().copied().filter(|k| !values.contains_key(k)).collect();
    for k in &missing {
        r.errors.push(ConfigError::invalid(&format!("dist.{k}"), format!("required by dist.kind = {kind}")));
    }
    if !missing.is_empty() {
        return None;
    }
    values.insert("kind", kind.clone());
    match VolumeDistribution::from_key_values(|k| values.get(k).map(String::as_str)) {
        Ok(d) => Some(d),
        Err(e) => {
            r.errors.push(ConfigError::invalid("dist", e.to_string()));
            None
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    parse_config_with(text, None)
}

impl ExperimentConfig {
    /// `(key, value)` for every key in echo order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("experiment", self.experiment.name().into());
        put("seed", self.seed.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("threads", self.threads.to_string());
        put("n_traj", self.n_traj.to_string());
        let m = &self.model;
        put("model.phi", fmt_f64(m.phi));
        put("model.U", fmt_f64(m.u));
        put("model.T", fmt_f64(m.t_end));
        put("model.V0", fmt_f64(m.v0));
        put("model.Y0", fmt_list(&m.y0, |x| fmt_f64(*x)));
        for (k, v) in m.dist.to_key_values() {
            put(&format!("dist.{k}"), v);
        }
        let s = &self.sim;
        put("sim.eps_geom", fmt_f64(s.eps_geom));
        put("sim.max_cascade", s.max_cascade.to_string());
        put("sim.v_budget", fmt_f64(s.v_budget));
        put("sim.volume_estimate", fmt_f64(s.volume_estimate));
        put("sim.cell_side", s.cell_side.map_or("auto".into(), fmt_f64));
        put(
            "sim.merge_rule",
            match s.merge_rule {
                MergeRule::CenterOfMass => "center_of_mass",
                MergeRule::PaperLiteral => "paper_literal",
            }
            .into(),
        );
        put("sim.timing", s.timing.to_string());
        put("sim.n_logs", s.n_logs.to_string());
        let k = &self.kinetic;
        put("kinetic.n_paths", k.n_paths.to_string());
        put("kinetic.max_jumps", k.max_jumps.to_string());
        put("kinetic.n_logs", k.n_logs.to_string());
        let q = &self.solver;
        put("solver.dt_ctrl", fmt_f64(q.dt_ctrl));
        put("solver.mass_tol", fmt_f64(q.mass_tol));
        put("solver.overflow_tol", fmt_f64(q.overflow_tol));
        put("solver.quad_tol", fmt_f64(q.quad_tol));
        put("solver.tail_tol", fmt_f64(q.tail_tol));
        put("solver.v_max", q.v_max.map_or("auto".into(), fmt_f64));
        put("solver.h0", fmt_f64(q.h0));
        put("solver.ratio", fmt_f64(q.ratio));
        let c = &self.convergence;
        put("convergence.phi_list", fmt_list(&c.phi_list, |x| fmt_f64(*x)));
        put("convergence.n_kinetic", c.n_kinetic.map_or("auto".into(), |n| n.to_string()));
        put("convergence.n_boot", c.n_boot.to_string());
        put("asymptotics.T_list", fmt_list(&self.asymptotics.t_list, |x| fmt_f64(*x)));
        let l = &self.lemmas;
        put("lemmas.log_xi_list", fmt_list(&l.log_xi_list, |x| fmt_f64(*x)));
        put("lemmas.N_list", fmt_list(&l.n_list, u64::to_string));
        put("lemmas.audit_phi", fmt_f64(l.audit_phi));
        put("lemmas.audit_n_traj", l.audit_n_traj.to_string());
        put(
            "lemmas.audit_constant",
            match l.audit_constant {
                AuditConstant::Paper => "paper",
                AuditConstant::Corrected => "corrected",
            }
            .into(),
        );
        put("lemmas.delta", fmt_f64(l.delta));
        let b = &self.blowup;
        put("blowup.v_target", b.v_target.to_string());
        put("blowup.t_margin", fmt_f64(b.t_margin));
        put("blowup.perturb_index", b.perturb_index.to_string());
        put("blowup.perturb_offset", fmt_f64(b.perturb_offset));
        out
    }

    /// The full configuration in the input format, defaults included.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let (sec, name) = key.split_once('.').unwrap_or(("", key.as_str()));
            if sec != section {
                let _ = writeln!(out, "\n[{sec}]");
                section = SECTIONS.iter().find(|s| **s == sec).copied().unwrap_or("");
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }

    /// One-line parameter summary for CSV headers. Leaves out keys that
    /// must not change the output bytes.
    pub fn header(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| k != "threads" && k != "output_dir")
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("; ")
    }
}
