//! Event-driven coalescing tagged particle dynamics.
//!
//! The tagged particle moves at speed `Ũ = U φ^{-2/3}` along `e₁` through a
//! static field of obstacles given in physical coordinates. Its state is
//! kept in rescaled variables: the lab position is `Ũ t e₁ + φ^{1/3} Y` and
//! `V` is the rescaled volume. An obstacle of rescaled volume `v` is touched
//! when the centre distance equals `φ^{1/3} σ (V^{1/3} + v^{1/3})`.
//!
//! A trajectory alternates free flights and coalescence events. A
//! coalescence starts with the obstacle(s) hit at the end of a flight and
//! keeps absorbing whatever the enlarged particle overlaps until it is free
//! again; each round is one cascade step.

use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CtpError, Result};
use crate::field::{ConsumedSet, FieldParams, Obstacle, ObstacleId, ObstacleSource, PoissonField, Region};
use crate::measure::EmpiricalMeasure;
use crate::num::sigma;
use crate::output::{csv_row, fmt_num, write_comment_header};
use crate::rng::derive_seed;
use crate::volume_dist::VolumeDistribution;
use crate::Vec3;

/// How the merged centre is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// `(V Y + Σ v_k x_k) / (V + Σ v_k)`.
    #[default]
    CenterOfMass,
    /// `(V Y + Σ v_k x_k) / V`: the denominator without the absorbed volume.
    /// Only useful to show how far it departs from the centre of mass.
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Volume fraction, in (0, 1).
    pub phi: f64,
    /// Rescaled speed.
    pub u: f64,
    /// Time horizon.
    pub t_end: f64,
    pub v0: f64,
    /// Initial displacement, rescaled units.
    pub y0: Vec3,
    pub seed: u64,
    pub dist: VolumeDistribution,
    /// Relative geometric tolerance for contact and overlap tests.
    pub eps_geom: f64,
    pub max_cascade: usize,
    /// Volume ceiling; exceeding it aborts the trajectory.
    pub v_budget: f64,
    /// Upper estimate of the final volume, used only to size field cells.
    pub volume_estimate: f64,
    /// Field cell side; `None` picks the default from `volume_estimate`.
    pub cell_side: Option<f64>,
    pub merge_rule: MergeRule,
    /// Record wall-clock time per trajectory (makes summaries non-reproducible).
    pub record_wall_time: bool,
}

impl SimParams {
    pub fn new(phi: f64, u: f64, t_end: f64, v0: f64, dist: VolumeDistribution) -> Self {
        Self {
            phi,
            u,
            t_end,
            v0,
            y0: Vec3::zero(),
            seed: 0,
            dist,
            eps_geom: 1e-12,
            max_cascade: 1_000_000,
            v_budget: f64::INFINITY,
            volume_estimate: 100.0,
            cell_side: None,
            merge_rule: MergeRule::CenterOfMass,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CtpError::InvalidParameter(m));
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return bad(format!("phi must lie in (0, 1), got {}", self.phi));
        }
        if !(self.u > 0.0 && self.u.is_finite()) {
            return bad(format!("U must be > 0, got {}", self.u));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("T must be >= 0, got {}", self.t_end));
        }
        if !(self.v0 >= 0.0 && self.v0.is_finite()) {
            return bad(format!("V0 must be >= 0, got {}", self.v0));
        }
        if !(self.eps_geom > 0.0 && self.eps_geom < 1e-3) {
            return bad(format!("eps_geom must lie in (0, 1e-3), got {}", self.eps_geom));
        }
        if self.max_cascade == 0 {
            return bad("max_cascade must be >= 1".into());
        }
        if let Some(s) = self.cell_side {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("cell_side must be > 0, got {s}"));
            }
        }
        Ok(())
    }

    pub fn cell_side(&self) -> f64 {
        self.cell_side.unwrap_or_else(|| {
            FieldParams::default_cell_side(self.phi, self.volume_estimate.max(self.v0), self.dist.v_max())
        })
    }

    pub fn field_params(&self, seed: u64) -> Result<FieldParams> {
        FieldParams::new(seed, self.cell_side(), self.dist.clone())
    }

    pub fn kinematics(&self) -> Kinematics {
        Kinematics::new(self.phi, self.u)
    }
}

/// Conversion between rescaled state and physical geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    /// `φ^{1/3}`
    pub length_scale: f64,
    /// `Ũ = U φ^{-2/3}`
    pub speed: f64,
}

impl Kinematics {
    pub fn new(phi: f64, u: f64) -> Self {
        let length_scale = phi.cbrt();
        Self {
            length_scale,
            speed: u / (length_scale * length_scale),
        }
    }

    #[inline]
    pub fn lab_position(&self, y: Vec3, t: f64) -> Vec3 {
        y * self.length_scale + Vec3::new(self.speed * t, 0.0, 0.0)
    }

    /// Physical centre distance at contact.
    #[inline]
    pub fn contact_radius(&self, big_v: f64, v: f64) -> f64 {
        self.length_scale * sigma::<f64>() * (big_v.cbrt() + v.cbrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedState {
    /// Rescaled displacement from the constant-speed motion.
    pub y: Vec3,
    /// Rescaled volume.
    pub v: f64,
    pub t: f64,
}

impl TaggedState {
    /// Rescaled radius `σ V^{1/3}`.
    pub fn radius(&self) -> f64 {
        sigma::<f64>() * self.v.cbrt()
    }
}

/// One obstacle absorbed in a cascade step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Absorbed {
    pub id: ObstacleId,
    pub v: f64,
    /// Obstacle centre minus tagged centre at absorption, rescaled units.
    pub contact: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flight {
    pub t_start: f64,
    pub duration: f64,
    /// Physical distance travelled, `Ũ · duration`.
    pub length: f64,
    /// Tagged volume during the flight.
    pub exit_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coalescence {
    pub t: f64,
    /// One inner list per application of the merging operator.
    pub steps: Vec<Vec<Absorbed>>,
    pub y_before: Vec3,
    pub v_before: f64,
    pub y_after: Vec3,
    pub v_after: f64,
}

impl Coalescence {
    /// A single step absorbing a single obstacle.
    pub fn is_binary(&self) -> bool {
        self.steps.len() == 1 && self.steps[0].len() == 1
    }

    pub fn absorbed(&self) -> impl Iterator<Item = &Absorbed> {
        self.steps.iter().flatten()
    }

    pub fn absorbed_volume(&self) -> f64 {
        self.absorbed().map(|a| a.v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Flight(Flight),
    Coalescence(Coalescence),
}

/// Ordered record of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub phi: f64,
    pub u: f64,
    pub y0: Vec3,
    pub v0: f64,
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn new(params: &SimParams) -> Self {
        Self {
            phi: params.phi,
            u: params.u,
            y0: params.y0,
            v0: params.v0,
            events: Vec::new(),
        }
    }

    pub fn flights(&self) -> impl Iterator<Item = &Flight> {
        self.events.iter().filter_map(|e| match e {
            Event::Flight(f) => Some(f),
            _ => None,
        })
    }

    pub fn coalescences(&self) -> impl Iterator<Item = &Coalescence> {
        self.events.iter().filter_map(|e| match e {
            Event::Coalescence(c) => Some(c),
            _ => None,
        })
    }

    pub fn n_collisions(&self) -> usize {
        self.coalescences().count()
    }

    /// Merge steps beyond the first in every coalescence event.
    pub fn n_cascade_steps(&self) -> usize {
        self.coalescences().map(|c| c.steps.len() - 1).sum()
    }

    pub fn is_binary_only(&self) -> bool {
        self.coalescences().all(Coalescence::is_binary)
    }

    pub fn has_cascade(&self) -> bool {
        self.coalescences().any(|c| c.steps.len() > 1)
    }

    pub fn elapsed(&self) -> f64 {
        self.flights().map(|f| f.duration).sum()
    }

    pub fn absorbed_volume(&self) -> f64 {
        self.coalescences().map(Coalescence::absorbed_volume).sum()
    }

    /// `(t, Y, V)` after every coalescence event.
    pub fn merge_states(&self) -> Vec<(f64, Vec3, f64)> {
        self.coalescences().map(|c| (c.t, c.y_after, c.v_after)).collect()
    }

    /// Structural invariants: events alternate, volumes add up, no obstacle
    /// is absorbed twice.
    pub fn check_invariants(&self, final_state: &TaggedState) -> std::result::Result<(), String> {
        let mut prev_flight: Option<bool> = None;
        let mut v = self.v0;
        let mut seen = std::collections::HashSet::new();
        for e in &self.events {
            let is_flight = matches!(e, Event::Flight(_));
            if prev_flight == Some(is_flight) {
                return Err("two consecutive events of the same type".into());
            }
            prev_flight = Some(is_flight);
            if let Event::Coalescence(c) = e {
                if c.steps.is_empty() || c.steps.iter().any(Vec::is_empty) {
                    return Err("empty coalescence step".into());
                }
                if c.v_before != v {
                    return Err(format!("volume jump before merge: {} vs {}", c.v_before, v));
                }
                for a in c.absorbed() {
                    if !seen.insert(a.id) {
                        return Err(format!("obstacle {} absorbed twice", a.id));
                    }
                }
                v = c.v_after;
            }
        }
        let absorbed = self.absorbed_volume();
        let dv = final_state.v - self.v0;
        if (dv - absorbed).abs() > 1e-12 * final_state.v.max(1.0) {
            return Err(format!("volume bookkeeping: V - V0 = {dv}, absorbed {absorbed}"));
        }
        Ok(())
    }

    /// JSON lines: `{type, t, l, ids, dV, dY}` per event.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        #[derive(Serialize)]
        struct Line {
            #[serde(rename = "type")]
            kind: &'static str,
            t: f64,
            l: f64,
            ids: Vec<[i64; 4]>,
            #[serde(rename = "dV")]
            dv: f64,
            #[serde(rename = "dY")]
            dy: [f64; 3],
        }
        for e in &self.events {
            let line = match e {
                Event::Flight(f) => Line {
                    kind: "flight",
                    t: f.t_start,
                    l: f.length,
                    ids: Vec::new(),
                    dv: 0.0,
                    dy: [0.0; 3],
                },
                Event::Coalescence(c) => Line {
                    kind: "coalescence",
                    t: c.t,
                    l: 0.0,
                    ids: c
                        .absorbed()
                        .map(|a| [a.id.cell[0], a.id.cell[1], a.id.cell[2], a.id.local as i64])
                        .collect(),
                    dv: c.v_after - c.v_before,
                    dy: (c.y_after - c.y_before).to_array(),
                },
            };
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// First contact ahead of the particle.
#[derive(Debug, Clone, PartialEq)]
pub struct Collision {
    pub t_hit: f64,
    /// Every obstacle whose contact time ties with the first one.
    pub obstacles: Vec<Obstacle>,
}

/// Contact time of one obstacle, or `None` if it is never touched ahead.
///
/// `d` is obstacle centre minus tagged centre (physical, lab frame) at the
/// current time. Solves `Ũ²s² − 2Ũ d₁ s + |d|² − ρ² = 0` for the smallest
/// `s ≥ 0`; an obstacle already touching and ahead is hit at `s = 0`.
#[inline]
pub fn contact_delay(d: Vec3, rho: f64, speed: f64, eps_geom: f64) -> Option<f64> {
    let rho_sq = rho * rho;
    let disc = rho_sq - d.transverse_sq();
    if disc <= eps_geom * rho_sq {
        return None; // miss or graze
    }
    if d.x <= 0.0 {
        return None; // behind
    }
    let c = d.norm_sq() - rho_sq;
    if c <= 0.0 {
        return Some(0.0);
    }
    Some(c / (speed * (d.x + disc.sqrt())))
}

/// Earliest collision in `(state.t, T]`.
pub fn next_collision(
    state: &TaggedState,
    params: &SimParams,
    field: &dyn ObstacleSource,
    consumed: &ConsumedSet,
) -> Option<Collision> {
    let t_end = params.t_end;
    if state.t >= t_end {
        return None;
    }
    let kin = params.kinematics();
    let here = kin.lab_position(state.y, state.t);
    let rho_max = kin.contact_radius(state.v, field.v_max());
    let tie_tol = params.eps_geom * (t_end - state.t);
    let window = field.search_window().max(4.0 * rho_max) / kin.speed;

    let mut best: Vec<(f64, Obstacle)> = Vec::new();
    let mut a = state.t;
    loop {
        let b = (a + window).min(t_end);
        let b_query = (b + tie_tol).min(t_end);
        let region = Region::capsule(kin.lab_position(state.y, a), kin.lab_position(state.y, b_query), rho_max);
        for o in field.obstacles_in(&region, consumed) {
            let rho = kin.contact_radius(state.v, o.v);
            if let Some(s) = contact_delay(o.x - here, rho, kin.speed, params.eps_geom) {
                let t_hit = state.t + s;
                if t_hit <= t_end && !best.iter().any(|(_, p)| p.id == o.id) {
                    best.push((t_hit, o));
                }
            }
        }
        if let Some(t_min) = best.iter().map(|(t, _)| *t).reduce(f64::min) {
            // every obstacle hit before b lies in a window already scanned
            if t_min + tie_tol <= b_query || b_query >= t_end {
                let mut obstacles: Vec<Obstacle> =
                    best.iter().filter(|(t, _)| *t <= t_min + tie_tol).map(|(_, o)| *o).collect();
                obstacles.sort_by_key(|o| o.id);
                return Some(Collision { t_hit: t_min, obstacles });
            }
        }
        if b >= t_end {
            return None;
        }
        a = b;
    }
}

/// Obstacles strictly overlapping the particle (beyond the tolerance).
pub fn overlapping(
    state: &TaggedState,
    params: &SimParams,
    field: &dyn ObstacleSource,
    consumed: &ConsumedSet,
) -> Vec<Obstacle> {
    let kin = params.kinematics();
    let centre = kin.lab_position(state.y, state.t);
    let reach = kin.contact_radius(state.v, field.v_max());
    let mut hits: Vec<Obstacle> = field
        .obstacles_in(&Region::ball(centre, reach), consumed)
        .into_iter()
        .filter(|o| {
            let rho = kin.contact_radius(state.v, o.v) * (1.0 - params.eps_geom);
            (o.x - centre).norm_sq() < rho * rho
        })
        .collect();
    hits.sort_by_key(|o| o.id);
    hits
}

/// A coalescence interrupted by an error, with the steps completed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeFailure {
    pub error: CtpError,
    pub state: TaggedState,
    /// `None` if no step completed.
    pub event: Option<Coalescence>,
}

/// Applies the merging operator starting from `initial` (the obstacles in
/// contact at `state.t`) and keeps absorbing overlapped obstacles until the
/// particle is free.
pub fn merge_cluster(
    state: &TaggedState,
    initial: Vec<Obstacle>,
    params: &SimParams,
    field: &dyn ObstacleSource,
    consumed: &mut ConsumedSet,
) -> std::result::Result<(TaggedState, Coalescence), Box<MergeFailure>> {
    let kin = params.kinematics();
    let scale = kin.length_scale;
    let mut cur = *state;
    let mut steps: Vec<Vec<Absorbed>> = Vec::new();
    let mut group = initial;
    let event = |cur: &TaggedState, steps: Vec<Vec<Absorbed>>| Coalescence {
        t: state.t,
        steps,
        y_before: state.y,
        v_before: state.v,
        y_after: cur.y,
        v_after: cur.v,
    };
    let fail = |error: CtpError, cur: TaggedState, steps: Vec<Vec<Absorbed>>| {
        Box::new(MergeFailure {
            error,
            state: cur,
            event: (!steps.is_empty()).then(|| event(&cur, steps)),
        })
    };
    while !group.is_empty() {
        if steps.len() >= params.max_cascade {
            let error = CtpError::CascadeOverflow {
                steps: steps.len(),
                t: cur.t,
            };
            return Err(fail(error, cur, steps));
        }
        let ids: Vec<ObstacleId> = group.iter().map(|o| o.id).collect();
        if let Err(e) = consumed.consume(&ids) {
            return Err(fail(e, cur, steps));
        }

        // work in the co-moving frame, physical units
        let drift = Vec3::new(kin.speed * cur.t, 0.0, 0.0);
        let centre = cur.y * scale;
        let mut weighted = centre * cur.v;
        let mut added = 0.0;
        let mut step = Vec::with_capacity(group.len());
        for o in &group {
            let rel = o.x - drift;
            weighted += rel * o.v;
            added += o.v;
            step.push(Absorbed {
                id: o.id,
                v: o.v,
                contact: (rel - centre) / scale,
            });
        }
        let new_v = cur.v + added;
        let new_centre = match params.merge_rule {
            MergeRule::CenterOfMass => weighted / new_v,
            MergeRule::PaperLiteral => {
                if cur.v > 0.0 {
                    weighted / cur.v
                } else {
                    weighted / new_v
                }
            }
        };
        cur.y = new_centre / scale;
        cur.v = new_v;
        steps.push(step);

        if cur.v > params.v_budget {
            let error = CtpError::BudgetExceeded {
                volume: cur.v,
                budget: params.v_budget,
                t: cur.t,
            };
            return Err(fail(error, cur, steps));
        }
        group = overlapping(&cur, params, field, consumed);
    }
    let ev = event(&cur, steps);
    Ok((cur, ev))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state: TaggedState,
    pub log: EventLog,
}

/// A trajectory that stopped early, with everything recorded up to the stop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFailure {
    pub error: CtpError,
    pub partial: Trajectory,
}

/// Runs the flow against an arbitrary obstacle source until `T`.
pub fn run_on(params: &SimParams, field: &dyn ObstacleSource) -> std::result::Result<Trajectory, Box<TrajectoryFailure>> {
    let kin = params.kinematics();
    let mut state = TaggedState {
        y: params.y0,
        v: params.v0,
        t: 0.0,
    };
    let mut log = EventLog::new(params);
    let mut consumed = ConsumedSet::new();

    macro_rules! fail {
        ($err:expr, $state:expr, $log:expr) => {
            return Err(Box::new(TrajectoryFailure {
                error: $err,
                partial: Trajectory {
                    state: $state,
                    log: $log,
                },
            }))
        };
    }

    if let Err(e) = params.validate() {
        fail!(e, state, log);
    }
    if state.v > params.v_budget {
        fail!(
            CtpError::BudgetExceeded {
                volume: state.v,
                budget: params.v_budget,
                t: 0.0
            },
            state,
            log
        );
    }

    // obstacles covering the particle at t = 0 merge immediately
    let initial = overlapping(&state, params, field, &consumed);
    if !initial.is_empty() {
        match merge_cluster(&state, initial, params, field, &mut consumed) {
            Ok((next, ev)) => {
                state = next;
                log.events.push(Event::Coalescence(ev));
            }
            Err(m) => {
                let m = *m;
                log.events.extend(m.event.map(Event::Coalescence));
                fail!(m.error, m.state, log)
            }
        }
    }

    while state.t < params.t_end {
        let hit = next_collision(&state, params, field, &consumed);
        let t_next = hit.as_ref().map_or(params.t_end, |c| c.t_hit);
        let duration = t_next - state.t;
        log.events.push(Event::Flight(Flight {
            t_start: state.t,
            duration,
            length: kin.speed * duration,
            exit_volume: state.v,
        }));
        state.t = t_next;
        let Some(collision) = hit else { break };
        match merge_cluster(&state, collision.obstacles, params, field, &mut consumed) {
            Ok((next, ev)) => {
                state = next;
                log.events.push(Event::Coalescence(ev));
            }
            Err(m) => {
                let m = *m;
                log.events.extend(m.event.map(Event::Coalescence));
                fail!(m.error, m.state, log)
            }
        }
    }
    Ok(Trajectory { state, log })
}

/// Runs one trajectory in the Poisson field seeded by `params.seed`.
pub fn run_trajectory(params: &SimParams) -> std::result::Result<Trajectory, Box<TrajectoryFailure>> {
    let field_params = match params.field_params(params.seed) {
        Ok(p) => p,
        Err(error) => {
            return Err(Box::new(TrajectoryFailure {
                error,
                partial: Trajectory {
                    state: TaggedState {
                        y: params.y0,
                        v: params.v0,
                        t: 0.0,
                    },
                    log: EventLog::new(params),
                },
            }))
        }
    };
    run_on(params, &PoissonField::new(field_params))
}

/// Per-trajectory line of the ensemble summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub seed: u64,
    pub n_collisions: usize,
    pub n_cascade_steps: usize,
    pub binary_only: bool,
    pub has_cascade: bool,
    pub n_flights: usize,
    pub state: TaggedState,
    pub wall_time_ms: f64,
    pub error: Option<CtpError>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub n_failed: usize,
    pub failure_fraction: f64,
    pub mean_collisions: f64,
    pub mean_cascade_steps: f64,
    /// Fraction of successful trajectories whose merges were all binary.
    pub binary_fraction: f64,
    /// Fraction with at least one multi-step coalescence.
    pub cascade_fraction: f64,
    pub mean_flight_count: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub summaries: Vec<TrajectorySummary>,
    /// Final `(Y, V)` of the successful trajectories.
    pub measure: EmpiricalMeasure,
    pub stats: EnsembleStats,
    /// Full logs when requested.
    pub logs: Option<Vec<EventLog>>,
}

/// `n_traj` independent trajectories; the `i`-th uses the field seeded by
/// `derive_seed(base_seed, i)`. Runs on the current rayon pool; the result
/// does not depend on the pool size.
pub fn run_ensemble(params: &SimParams, n_traj: usize, base_seed: u64, keep_logs: bool) -> Result<EnsembleResult> {
    params.validate()?;
    if n_traj == 0 {
        return Err(CtpError::InvalidParameter("n_traj must be >= 1".into()));
    }
    let runs: Vec<(TrajectorySummary, Option<EventLog>)> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(base_seed, i);
            let mut p = params.clone();
            p.seed = seed;
            let started = Instant::now();
            let outcome = run_trajectory(&p);
            let wall_time_ms = if params.record_wall_time {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            let (traj, error) = match outcome {
                Ok(t) => (t, None),
                Err(f) => (f.partial, Some(f.error)),
            };
            let summary = TrajectorySummary {
                seed,
                n_collisions: traj.log.n_collisions(),
                n_cascade_steps: traj.log.n_cascade_steps(),
                binary_only: traj.log.is_binary_only(),
                has_cascade: traj.log.has_cascade(),
                n_flights: traj.log.flights().count(),
                state: traj.state,
                wall_time_ms,
                error,
            };
            (summary, keep_logs.then_some(traj.log))
        })
        .collect();

    let (summaries, logs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let ok: Vec<&TrajectorySummary> = summaries.iter().filter(|s| s.error.is_none()).collect();
    let n_ok = ok.len().max(1) as f64;
    let stats = EnsembleStats {
        n_traj,
        n_failed: n_traj - ok.len(),
        failure_fraction: (n_traj - ok.len()) as f64 / n_traj as f64,
        mean_collisions: ok.iter().map(|s| s.n_collisions as f64).sum::<f64>() / n_ok,
        mean_cascade_steps: ok.iter().map(|s| s.n_cascade_steps as f64).sum::<f64>() / n_ok,
        binary_fraction: ok.iter().filter(|s| s.binary_only).count() as f64 / n_ok,
        cascade_fraction: ok.iter().filter(|s| s.has_cascade).count() as f64 / n_ok,
        mean_flight_count: ok.iter().map(|s| s.n_flights as f64).sum::<f64>() / n_ok,
    };
    let measure = EmpiricalMeasure::from_yv(ok.iter().map(|s| (s.state.y, s.state.v)));
    let logs = if keep_logs {
        Some(logs.into_iter().map(|l| l.expect("log kept")).collect())
    } else {
        None
    };
    Ok(EnsembleResult {
        summaries,
        measure,
        stats,
        logs,
    })
}

/// Ensemble summary CSV: `seed, n_collisions, n_cascade_steps, V_final, Y1,
/// Y2, Y3, wall_time_ms`.
pub fn write_summary_csv<W: Write>(mut w: W, header: &str, summaries: &[TrajectorySummary]) -> io::Result<()> {
    write_comment_header(&mut w, header)?;
    writeln!(w, "seed,n_collisions,n_cascade_steps,V_final,Y1,Y2,Y3,wall_time_ms")?;
    for s in summaries {
        let y = s.state.y;
        writeln!(
            w,
            "{},{},{},{},{}",
            s.seed,
            s.n_collisions,
            s.n_cascade_steps,
            csv_row(&[s.state.v, y.x, y.y, y.z]),
            fmt_num(s.wall_time_ms)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScriptedField;

    fn dirac_params(phi: f64) -> SimParams {
        SimParams::new(phi, 1.0, 1.0, 1.0, VolumeDistribution::dirac(1.0).unwrap())
    }

    #[test]
    fn head_on_contact_time() {
        let p = dirac_params(1e-3);
        let kin = p.kinematics();
        let rho = kin.contact_radius(1.0, 1.0);
        let dist = 5.0 * rho;
        let field = ScriptedField::new(&[(Vec3::new(dist, 0.0, 0.0), 1.0)], 1.0);
        let st = TaggedState {
            y: Vec3::zero(),
            v: 1.0,
            t: 0.0,
        };
        let hit = next_collision(&st, &p, &field, &ConsumedSet::new()).unwrap();
        let want = (dist - rho) / kin.speed;
        assert!((hit.t_hit - want).abs() <= 1e-14 * want);
        assert_eq!(hit.obstacles.len(), 1);
    }

    #[test]
    fn wide_impact_parameter_misses() {
        let p = dirac_params(1e-3);
        let rho = p.kinematics().contact_radius(1.0, 1.0);
        let field = ScriptedField::new(&[(Vec3::new(3.0 * rho, 1.01 * rho, 0.0), 1.0)], 1.0);
        let st = TaggedState {
            y: Vec3::zero(),
            v: 1.0,
            t: 0.0,
        };
        assert!(next_collision(&st, &p, &field, &ConsumedSet::new()).is_none());
    }

    #[test]
    fn grazing_contact_is_a_miss() {
        let rho = 1.0;
        assert!(contact_delay(Vec3::new(3.0, rho, 0.0), rho, 1.0, 1e-12).is_none());
        assert!(contact_delay(Vec3::new(3.0, rho * (1.0 - 1e-14), 0.0), rho, 1.0, 1e-12).is_none());
        assert!(contact_delay(Vec3::new(3.0, rho * 0.999, 0.0), rho, 1.0, 1e-12).is_some());
        // behind the particle
        assert!(contact_delay(Vec3::new(-3.0, 0.0, 0.0), rho, 1.0, 1e-12).is_none());
        // touching and ahead
        assert_eq!(contact_delay(Vec3::new(rho, 0.0, 0.0), rho, 1.0, 1e-12), Some(0.0));
    }

    #[test]
    fn head_on_binary_merge() {
        let phi = 1e-3;
        let p = dirac_params(phi);
        let kin = p.kinematics();
        let rho = kin.contact_radius(1.0, 1.0);
        let field = ScriptedField::new(&[(Vec3::new(2.0 * rho, 0.0, 0.0), 1.0)], 1.0);
        let traj = run_on(&p, &field).unwrap();
        let c = traj.log.coalescences().next().unwrap();
        assert!(c.is_binary());
        let s = sigma::<f64>();
        // Y' = Y + ½ σ (V^{1/3} + v^{1/3}) e₁ with V = v = 1
        assert!((c.y_after.x - s).abs() < 1e-12, "{:?}", c.y_after);
        assert!(c.y_after.y.abs() < 1e-15 && c.y_after.z.abs() < 1e-15);
        assert_eq!(c.v_after, 2.0);
        assert!((c.steps[0][0].contact.x - 2.0 * s).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_cancels_transverse_shift() {
        let p = dirac_params(1e-3);
        let kin = p.kinematics();
        let rho = kin.contact_radius(1.0, 1.0);
        let off = 0.6 * rho;
        let ahead = 3.0 * rho;
        let field = ScriptedField::new(
            &[
                (Vec3::new(ahead, off, 0.0), 1.0),
                (Vec3::new(ahead, -off, 0.0), 1.0),
            ],
            1.0,
        );
        let traj = run_on(&p, &field).unwrap();
        let c = traj.log.coalescences().next().unwrap();
        assert_eq!(c.steps.len(), 1);
        assert_eq!(c.steps[0].len(), 2);
        assert_eq!(c.v_after, 3.0);
        assert!(c.y_after.y.abs() < 1e-12 && c.y_after.z.abs() < 1e-12);
        assert!(c.y_after.x > 0.0);
    }

    #[test]
    fn empty_field_is_free_flight() {
        let p = dirac_params(1e-2);
        let traj = run_on(&p, &ScriptedField::empty()).unwrap();
        assert_eq!(traj.state, TaggedState { y: Vec3::zero(), v: 1.0, t: 1.0 });
        assert_eq!(traj.log.events.len(), 1);
        let f = traj.log.flights().next().unwrap();
        assert_eq!(f.duration, 1.0);
        assert!((f.length - p.kinematics().speed).abs() < 1e-12);
    }

    #[test]
    fn initial_overlap_merges_at_time_zero() {
        let p = dirac_params(1e-3);
        let field = ScriptedField::new(&[(Vec3::new(0.0, 0.01, 0.0), 1.0)], 1.0);
        let traj = run_on(&p, &field).unwrap();
        match &traj.log.events[0] {
            Event::Coalescence(c) => assert_eq!(c.t, 0.0),
            e => panic!("expected coalescence, got {e:?}"),
        }
        traj.log.check_invariants(&traj.state).unwrap();
    }

    #[test]
    fn cascade_overflow_and_budget() {
        let p = dirac_params(1e-3);
        let rho = p.kinematics().contact_radius(1.0, 1.0);
        // a dense row: every merge overlaps the next obstacle
        let row: Vec<(Vec3, f64)> = (0..50).map(|k| (Vec3::new(2.0 * rho + 0.3 * rho * k as f64, 0.0, 0.0), 1.0)).collect();
        let field = ScriptedField::new(&row, 1.0);
        let mut small = p.clone();
        small.max_cascade = 3;
        let err = run_on(&small, &field).unwrap_err();
        assert!(matches!(err.error, CtpError::CascadeOverflow { .. }), "{err:?}");
        let mut capped = p.clone();
        capped.v_budget = 5.0;
        let err = run_on(&capped, &field).unwrap_err();
        assert!(matches!(err.error, CtpError::BudgetExceeded { .. }), "{err:?}");
        assert!(err.partial.state.v > 5.0);
    }

    #[test]
    fn paper_literal_rule_differs() {
        let mut p = dirac_params(1e-3);
        let rho = p.kinematics().contact_radius(1.0, 1.0);
        let field = ScriptedField::new(&[(Vec3::new(2.0 * rho, 0.0, 0.0), 1.0)], 1.0);
        let com = run_on(&p, &field).unwrap().state;
        p.merge_rule = MergeRule::PaperLiteral;
        let lit = run_on(&p, &field).unwrap().state;
        assert_eq!(com.v, lit.v);
        assert!((lit.y.x - com.y.x).abs() > 0.1);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let mut p = dirac_params(3e-2);
        p.seed = 17;
        let a = run_trajectory(&p).unwrap();
        let b = run_trajectory(&p).unwrap();
        assert_eq!(a, b);
        a.log.check_invariants(&a.state).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.log.write_jsonl(&mut x).unwrap();
        b.log.write_jsonl(&mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn jsonl_schema() {
        let mut p = dirac_params(3e-2);
        p.seed = 4;
        let t = run_trajectory(&p).unwrap();
        let mut buf = Vec::new();
        t.log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), t.log.events.len());
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["type", "t", "l", "ids", "dV", "dY"] {
                assert!(v.get(key).is_some(), "missing {key} in {line}");
            }
        }
    }
}
