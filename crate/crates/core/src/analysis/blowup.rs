//! Scripted obstacle line on which the tagged particle absorbs infinitely
//! many obstacles in finite time.
//!
//! Unit-volume obstacles sit on the `e₁` axis at rescaled positions `x_k`
//! chosen so that, after absorbing obstacle `k` (volume `k + 1`), the
//! particle flies exactly `l_{k+1}` before touching obstacle `k + 1`:
//! `x_{k+1} = x_k − σ(1 + k^{1/3}) k/(k+1) + σ(k+1)^{1/3} + l_{k+1} + σ`,
//! `x_0 = 0` being the initial centre. With `φ = 1/8` and `U = φ` the
//! rescaled lab speed is 1, so flight times equal flight lengths.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{CtpError, Result};
use crate::field::ScriptedField;
use crate::num::sigma;
use crate::output::{csv_row, write_comment_header};
use crate::sim::{run_on, EventLog, SimParams};
use crate::volume_dist::VolumeDistribution;
use crate::Vec3;

pub const BLOWUP_PHI: f64 = 0.125;
/// Relative tolerance on collision times.
pub const TIME_RTOL: f64 = 1e-9;
/// Obstacles placed beyond the target count.
const EXTRA_OBSTACLES: usize = 8;

/// `l_j = 2^{-j}`, `j = 1..=n`.
pub fn geometric_lengths(n: usize) -> Vec<f64> {
    (1..=n).map(|j| 0.5f64.powi(j as i32)).collect()
}

/// Rescaled positions `x_1, …, x_n` for flight lengths `l_1, …, l_n`.
pub fn obstacle_positions(lengths: &[f64]) -> Vec<f64> {
    let s = sigma::<f64>();
    let mut x = 0.0;
    lengths
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let kf = k as f64;
            x = x - s * (1.0 + kf.cbrt()) * kf / (kf + 1.0) + s * (kf + 1.0).cbrt() + l + s;
            x
        })
        .collect()
}

/// `τ_j = Σ_{k≤j} l_k`.
pub fn collision_times(lengths: &[f64]) -> Vec<f64> {
    lengths
        .iter()
        .scan(0.0, |acc, &l| {
            *acc += l;
            Some(*acc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowupSetup {
    /// Volume to reach.
    pub v_target: usize,
    /// Extra time after `Σ l_j` before the run stops.
    pub t_margin: f64,
    /// Optional `(k, offset)`: move obstacle `k` (1-based) off the axis by
    /// `offset` in rescaled units.
    pub perturb: Option<(usize, f64)>,
}

impl BlowupSetup {
    pub fn new(v_target: usize) -> Self {
        Self {
            v_target,
            t_margin: 1.0,
            perturb: None,
        }
    }

    pub fn n_obstacles(&self) -> usize {
        self.v_target + EXTRA_OBSTACLES
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Absorption {
    pub j: usize,
    pub t: f64,
    pub tau: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlowupRecord {
    pub setup: BlowupSetup,
    /// `Σ l_j` over the placed obstacles.
    pub total_length: f64,
    /// One row per absorbed obstacle, in order.
    pub absorptions: Vec<Absorption>,
    /// First time with `V ≥ v_target`.
    pub escape_time: Option<f64>,
    /// Absorption index `j` at which `V ≥ v_target` first holds.
    pub escape_index: Option<usize>,
    pub final_volume: f64,
    /// How the run ended; `None` if it reached the horizon.
    pub stop: Option<String>,
    #[serde(skip)]
    pub log: EventLog,
}

impl BlowupRecord {
    /// `V ≥ v_target` strictly before `Σ l_j`.
    ///
    /// Near the accumulation point `τ_j` rounds to `Σ l_j` in floating
    /// point, so the comparison goes through the scripted time: the escape
    /// must happen at `τ_j` (within [`TIME_RTOL`]) for some `j` below the
    /// number of placed obstacles, and then `τ_j < Σ l_j` because every
    /// remaining `l_k` is positive.
    pub fn blew_up(&self) -> bool {
        match (self.escape_index, self.escape_time) {
            (Some(j), Some(t)) => {
                let tau = self.absorptions[j - 1].tau;
                j < self.setup.n_obstacles() && (t - tau).abs() <= TIME_RTOL * tau
            }
            _ => false,
        }
    }

    /// Largest `|t_j − τ_j| / τ_j` over absorptions up to the target.
    pub fn max_time_deviation(&self) -> f64 {
        self.absorptions
            .iter()
            .take(self.setup.v_target)
            .map(|a| (a.t - a.tau).abs() / a.tau)
            .fold(0.0, f64::max)
    }

    /// Checks `V_j = j + 1` and `t_j = τ_j` up to the target.
    pub fn verify(&self) -> Result<()> {
        let need = self.setup.v_target.saturating_sub(1);
        if self.absorptions.len() < need {
            return Err(CtpError::ConstructionMismatch(format!(
                "only {} of {need} collisions happened",
                self.absorptions.len()
            )));
        }
        for a in self.absorptions.iter().take(need) {
            if a.v != (a.j + 1) as f64 {
                return Err(CtpError::ConstructionMismatch(format!("V = {} after collision {}", a.v, a.j)));
            }
            if (a.t - a.tau).abs() > TIME_RTOL * a.tau {
                return Err(CtpError::ConstructionMismatch(format!(
                    "collision {} at t = {} instead of {}",
                    a.j, a.t, a.tau
                )));
            }
        }
        Ok(())
    }
}

pub fn params_for(setup: &BlowupSetup, total_length: f64) -> Result<SimParams> {
    let mut p = SimParams::new(
        BLOWUP_PHI,
        BLOWUP_PHI,
        total_length + setup.t_margin,
        1.0,
        VolumeDistribution::dirac(1.0)?,
    );
    p.v_budget = setup.v_target as f64;
    Ok(p)
}

/// Builds the line, runs the particle on it and records every absorption.
pub fn run_blowup(setup: &BlowupSetup) -> Result<BlowupRecord> {
    if setup.v_target < 2 {
        return Err(CtpError::InvalidParameter("v_target must be >= 2".into()));
    }
    let lengths = geometric_lengths(setup.n_obstacles());
    let xs = obstacle_positions(&lengths);
    let taus = collision_times(&lengths);
    let total_length = *taus.last().expect("at least one obstacle");
    let params = params_for(setup, total_length)?;
    let scale = params.kinematics().length_scale;
    let mut placements: Vec<(Vec3, f64)> = xs.iter().map(|&x| (Vec3::new(x * scale, 0.0, 0.0), 1.0)).collect();
    if let Some((k, off)) = setup.perturb {
        if k == 0 || k > placements.len() {
            return Err(CtpError::InvalidParameter(format!("perturbed obstacle {k} out of range")));
        }
        placements[k - 1].0.y += off * scale;
    }
    let bucket = params.kinematics().contact_radius(setup.v_target as f64 + 1.0, 1.0);
    let field = ScriptedField::new(&placements, bucket);

    let (traj, stop) = match run_on(&params, &field) {
        Ok(t) => (t, None),
        Err(f) => (f.partial, Some(f.error.to_string())),
    };
    let mut absorptions = Vec::new();
    let mut v = params.v0;
    let mut escape_time = None;
    let mut escape_index = None;
    for c in traj.log.coalescences() {
        for a in c.absorbed() {
            v += a.v;
            let j = absorptions.len() + 1;
            absorptions.push(Absorption {
                j,
                t: c.t,
                tau: taus.get(j - 1).copied().unwrap_or(f64::NAN),
                v,
            });
            if escape_time.is_none() && v >= setup.v_target as f64 {
                escape_time = Some(c.t);
                escape_index = Some(j);
            }
        }
    }
    Ok(BlowupRecord {
        setup: *setup,
        total_length,
        absorptions,
        escape_time,
        escape_index,
        final_volume: traj.state.v,
        stop,
        log: traj.log,
    })
}

/// Runs the unperturbed construction and verifies it.
pub fn blowup_demo(v_target: usize) -> Result<BlowupRecord> {
    let rec = run_blowup(&BlowupSetup::new(v_target))?;
    rec.verify()?;
    Ok(rec)
}

/// CSV with columns `j, t, tau, V`.
pub fn write_blowup_csv<W: Write>(mut w: W, header: &str, rec: &BlowupRecord) -> io::Result<()> {
    write_comment_header(&mut w, header)?;
    writeln!(w, "j,t,tau,V")?;
    for a in &rec.absorptions {
        writeln!(w, "{},{}", a.j, csv_row(&[a.t, a.tau, a.v]))?;
    }
    Ok(())
}
