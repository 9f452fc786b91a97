//! Deterministic solvers for the volume marginal `F(V, t)`.
//!
//! `∂_t F(V) = λ ( ∫ G(v) ((V−v)^{1/3} + v^{1/3})² F(V−v) dv
//!               − ∫ G(v) (V^{1/3} + v^{1/3})² dv · F(V) )`, `λ = U π σ²`.
//!
//! The grid solver evolves node masses `m_i = w_i F_i` (trapezoid weights).
//! Mass leaving node `i` towards `V_i + v` is split between the two nodes
//! bracketing `V_i + v` with linear (hat) weights, so total mass and the
//! first moment are transferred exactly; what lands beyond the last node is
//! counted as overflow. The same transfer matrix, transposed, drives the
//! backward equation for test functions of `V`.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{CtpError, Result};
use crate::num::kernel_constant;
use crate::output::{csv_row, write_comment_header};
use crate::volume_dist::VolumeDistribution;

/// `λ = U π σ²`.
pub fn rate_constant(u: f64) -> f64 {
    u * kernel_constant::<f64>()
}

/// `λ̄(V) = ∫ (V^{1/3} + v^{1/3})² dG(v)`.
pub fn lambda_bar(big_v: f64, dist: &VolumeDistribution) -> Result<f64> {
    let c = big_v.cbrt();
    Ok(c * c + 2.0 * c * dist.moment(1.0 / 3.0)? + dist.moment(2.0 / 3.0)?)
}

/// Trapezoid weights of a node set.
pub fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
            let right = if i + 1 < n { nodes[i + 1] - nodes[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Volume nodes with density values `F_i` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub f: Vec<f64>,
    pub t: f64,
    /// Mass that left through the top of the grid.
    pub overflow: f64,
}

impl MarginalGrid {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(CtpError::InvalidParameter("a grid needs at least two nodes".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || !(nodes[0] >= 0.0) {
            return Err(CtpError::InvalidParameter("grid nodes must be increasing and >= 0".into()));
        }
        let weights = trapezoid_weights(&nodes);
        let n = nodes.len();
        Ok(Self {
            nodes,
            weights,
            f: vec![0.0; n],
            t: 0.0,
            overflow: 0.0,
        })
    }

    /// `n + 1` nodes `v_lo + k h`.
    pub fn uniform(v_lo: f64, h: f64, n: usize) -> Result<Self> {
        if !(h > 0.0) {
            return Err(CtpError::InvalidParameter(format!("grid step must be > 0, got {h}")));
        }
        Self::from_nodes((0..=n).map(|k| v_lo + k as f64 * h).collect())
    }

    /// Nodes from `v_lo` with increments `h0, h0 r, h0 r², …` until `v_hi`
    /// is covered.
    pub fn geometric(v_lo: f64, v_hi: f64, h0: f64, ratio: f64) -> Result<Self> {
        if !(h0 > 0.0 && ratio >= 1.0 && v_hi > v_lo) {
            return Err(CtpError::InvalidParameter(format!(
                "geometric grid needs h0 > 0, ratio >= 1, v_hi > v_lo (got {h0}, {ratio}, {v_lo}..{v_hi})"
            )));
        }
        let mut nodes = vec![v_lo];
        let mut h = h0;
        while *nodes.last().unwrap() < v_hi {
            nodes.push(nodes.last().unwrap() + h);
            h *= ratio;
        }
        Self::from_nodes(nodes)
    }

    /// Unit mass at node `i`.
    pub fn with_point_mass(mut self, i: usize) -> Self {
        self.f.iter_mut().for_each(|x| *x = 0.0);
        self.f[i] = 1.0 / self.weights[i];
        self
    }

    pub fn masses(&self) -> Vec<f64> {
        self.f.iter().zip(&self.weights).map(|(f, w)| f * w).collect()
    }

    fn set_masses(&mut self, m: &[f64]) {
        for ((f, w), &mi) in self.f.iter_mut().zip(&self.weights).zip(m) {
            *f = mi / w;
        }
    }

    /// `Σ w_i F_i`.
    pub fn mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    pub fn moment(&self, k: i32) -> f64 {
        self.masses().iter().zip(&self.nodes).map(|(m, v)| m * v.powi(k)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.moment(1) / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.moment(2) / self.mass() - mean * mean
    }

    /// CSV with columns `t, V, F`.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> io::Result<()> {
        write_comment_header(&mut w, header)?;
        writeln!(w, "t,V,F")?;
        for (v, f) in self.nodes.iter().zip(&self.f) {
            writeln!(w, "{}", csv_row(&[self.t, *v, *f]))?;
        }
        Ok(())
    }
}

/// Sparse transfer operator on a fixed node set.
#[derive(Debug, Clone)]
pub struct MarginalOperator {
    /// `rows[i]` lists `(j, T_ij)`: rate of mass moving from node `i` to `j`.
    rows: Vec<Vec<(usize, f64)>>,
    /// Total jump rate out of node `i`, `λ λ̄(V_i)`.
    loss: Vec<f64>,
    /// Part of `loss[i]` that lands beyond the last node.
    overflow: Vec<f64>,
}

impl MarginalOperator {
    pub fn new(nodes: &[f64], dist: &VolumeDistribution, u: f64, quad_tol: f64) -> Result<Self> {
        let lam = rate_constant(u);
        let n = nodes.len();
        let top = nodes[n - 1];
        let mut rows = Vec::with_capacity(n);
        let mut loss = Vec::with_capacity(n);
        let mut overflow = Vec::with_capacity(n);
        let v_min = dist.v_min();
        let v_max = dist.v_max();
        for (i, &vi) in nodes.iter().enumerate() {
            let c = vi.cbrt();
            let kernel = |v: f64| {
                let s = c + v.cbrt();
                s * s
            };
            let total = lam * lambda_bar(vi, dist)?;
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut add = |j: usize, x: f64| {
                if x != 0.0 {
                    match row.last_mut() {
                        Some((k, y)) if *k == j => *y += x,
                        _ => row.push((j, x)),
                    }
                }
            };
            // first interval that can receive mass
            let k0 = nodes.partition_point(|&x| x <= vi + v_min).saturating_sub(1).max(i);
            for k in k0..n - 1 {
                let (a, b) = (nodes[k], nodes[k + 1]);
                let lo = a - vi;
                if lo > v_max {
                    break;
                }
                let hi = if k + 2 == n { next_up(b - vi) } else { b - vi };
                let h = b - a;
                let up = |v: f64| (((vi + v) - a) / h).clamp(0.0, 1.0);
                let to_k = dist.integrate_against(|v| kernel(v) * (1.0 - up(v)), lo, hi, quad_tol);
                let to_k1 = dist.integrate_against(|v| kernel(v) * up(v), lo, hi, quad_tol);
                add(k, lam * to_k);
                add(k + 1, lam * to_k1);
            }
            let kept: f64 = row.iter().map(|(_, x)| x).sum();
            let beyond = if top - vi >= v_max { 0.0 } else { (total - kept).max(0.0) };
            rows.push(row);
            loss.push(total);
            overflow.push(beyond);
        }
        Ok(Self { rows, loss, overflow })
    }

    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    pub fn max_rate(&self) -> f64 {
        self.loss.iter().copied().fold(0.0, f64::max)
    }

    /// `dm/dt` for node masses; returns the overflow rate.
    pub fn forward(&self, m: &[f64], out: &mut [f64]) -> f64 {
        for (o, (&mi, &l)) in out.iter_mut().zip(m.iter().zip(&self.loss)) {
            *o = -l * mi;
        }
        let mut spill = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let mi = m[i];
            if mi == 0.0 {
                continue;
            }
            for &(j, t) in row {
                out[j] += t * mi;
            }
            spill += self.overflow[i] * mi;
        }
        spill
    }

    /// `dψ/dt` for the backward equation: `Σ_j T_ij ψ_j − loss_i ψ_i`.
    pub fn backward(&self, psi: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            let gain: f64 = row.iter().map(|&(j, t)| t * psi[j]).sum();
            out[i] = gain - self.loss[i] * psi[i];
        }
    }
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::MIN_POSITIVE
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

/// Density form of the right-hand side, `dF_i/dt`.
pub fn rhs(grid: &MarginalGrid, dist: &VolumeDistribution, u: f64) -> Result<Vec<f64>> {
    let op = MarginalOperator::new(&grid.nodes, dist, u, 1e-12)?;
    let mut dm = vec![0.0; grid.nodes.len()];
    op.forward(&grid.masses(), &mut dm);
    Ok(dm.iter().zip(&grid.weights).map(|(d, w)| d / w).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Bound on `dt · max_i λ λ̄(V_i)`.
    pub dt_ctrl: f64,
    pub mass_tol: f64,
    /// Largest tolerated overflow mass.
    pub overflow_tol: f64,
    pub quad_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            dt_ctrl: 0.5,
            mass_tol: 1e-8,
            overflow_tol: 1e-6,
            quad_tol: 1e-12,
        }
    }
}

fn step_count(span: f64, max_rate: f64, dt_ctrl: f64) -> usize {
    if span <= 0.0 {
        0
    } else {
        ((span * max_rate / dt_ctrl).ceil() as usize).max(1)
    }
}

/// Classical RK4 on node masses, tracking the overflow as an extra state.
fn rk4_forward(op: &MarginalOperator, m: &mut [f64], overflow: &mut f64, dt: f64, steps: usize) {
    let n = m.len();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut s = [0.0; 4];
    let mut tmp = vec![0.0; n];
    for _ in 0..steps {
        s[0] = op.forward(m, &mut k[0]);
        for stage in 1..4 {
            let c = if stage == 3 { dt } else { 0.5 * dt };
            for i in 0..n {
                tmp[i] = m[i] + c * k[stage - 1][i];
            }
            let (head, tail) = k.split_at_mut(stage);
            let _ = head;
            s[stage] = op.forward(&tmp, &mut tail[0]);
        }
        for i in 0..n {
            m[i] += dt / 6.0 * (k[0][i] + 2.0 * (k[1][i] + k[2][i]) + k[3][i]);
        }
        *overflow += dt / 6.0 * (s[0] + 2.0 * (s[1] + s[2]) + s[3]);
    }
}

fn rk4_backward(op: &MarginalOperator, psi: &mut [f64], dt: f64, steps: usize) {
    let n = psi.len();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = vec![0.0; n];
    for _ in 0..steps {
        op.backward(psi, &mut k[0]);
        for stage in 1..4 {
            let c = if stage == 3 { dt } else { 0.5 * dt };
            for i in 0..n {
                tmp[i] = psi[i] + c * k[stage - 1][i];
            }
            let (_, tail) = k.split_at_mut(stage);
            op.backward(&tmp, &mut tail[0]);
        }
        for i in 0..n {
            psi[i] += dt / 6.0 * (k[0][i] + 2.0 * (k[1][i] + k[2][i]) + k[3][i]);
        }
    }
}

fn check_grid(grid: &MarginalGrid, opts: &SolveOptions) -> Result<()> {
    let drift = (grid.mass() + grid.overflow - 1.0).abs();
    if drift > opts.mass_tol {
        return Err(CtpError::MassDrift {
            drift,
            tol: opts.mass_tol,
        });
    }
    if grid.overflow > opts.overflow_tol {
        return Err(CtpError::GridOverflow { mass: grid.overflow });
    }
    Ok(())
}

/// Grid states at every requested time (nondecreasing, measured from
/// `grid0.t`).
pub fn solve_snapshots(
    grid0: &MarginalGrid,
    dist: &VolumeDistribution,
    u: f64,
    times: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<MarginalGrid>> {
    check_grid(grid0, opts)?;
    let op = MarginalOperator::new(&grid0.nodes, dist, u, opts.quad_tol)?;
    let mut grid = grid0.clone();
    let mut m = grid.masses();
    let mut out = Vec::with_capacity(times.len());
    for &t_out in times {
        let span = t_out - grid.t;
        if span < 0.0 {
            return Err(CtpError::InvalidParameter("output times must be nondecreasing".into()));
        }
        let steps = step_count(span, op.max_rate(), opts.dt_ctrl);
        if steps > 0 {
            rk4_forward(&op, &mut m, &mut grid.overflow, span / steps as f64, steps);
        }
        grid.t = t_out;
        grid.set_masses(&m);
        check_grid(&grid, opts)?;
        out.push(grid.clone());
    }
    Ok(out)
}

/// Advances `grid0` to time `t_end`.
pub fn solve(grid0: &MarginalGrid, dist: &VolumeDistribution, u: f64, t_end: f64, opts: &SolveOptions) -> Result<MarginalGrid> {
    Ok(solve_snapshots(grid0, dist, u, &[grid0.t + t_end], opts)?.remove(0))
}

/// Backward solution `Ψ(·, T)` from node values `ψ0`, with the step
/// sequence [`solve`] uses on the same grid.
pub fn solve_backward(
    nodes: &[f64],
    psi0: &[f64],
    dist: &VolumeDistribution,
    u: f64,
    t_end: f64,
    opts: &SolveOptions,
) -> Result<Vec<f64>> {
    let op = MarginalOperator::new(nodes, dist, u, opts.quad_tol)?;
    let mut psi = psi0.to_vec();
    let steps = step_count(t_end, op.max_rate(), opts.dt_ctrl);
    if steps > 0 {
        rk4_backward(&op, &mut psi, t_end / steps as f64, steps);
    }
    Ok(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityReport {
    /// `∫ Ψ(V, T) F(V, 0) dV`
    pub lhs: f64,
    /// `∫ Ψ(V, 0) F(V, T) dV`
    pub rhs: f64,
    pub gap: f64,
}

/// Pairs the backward solution with the initial density and the initial
/// test function with the forward solution.
pub fn duality_check(
    grid0: &MarginalGrid,
    psi0: &[f64],
    dist: &VolumeDistribution,
    u: f64,
    t_end: f64,
    opts: &SolveOptions,
) -> Result<DualityReport> {
    if psi0.len() != grid0.nodes.len() {
        return Err(CtpError::InvalidParameter("test function must have one value per node".into()));
    }
    let forward = solve(grid0, dist, u, t_end, opts)?;
    let psi_t = solve_backward(&grid0.nodes, psi0, dist, u, t_end, opts)?;
    let lhs: f64 = grid0.masses().iter().zip(&psi_t).map(|(m, p)| m * p).sum();
    let rhs: f64 = forward.masses().iter().zip(psi0).map(|(m, p)| m * p).sum();
    Ok(DualityReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// Occupation probabilities of the pure birth chain `V_n = V0 + n v0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiracChain {
    pub big_v0: f64,
    pub v_obstacle: f64,
    pub t: f64,
    /// Index of `p[0]`.
    pub offset: usize,
    /// `p_n` for `n = offset, offset + 1, …`; zero outside.
    pub p: Vec<f64>,
    /// Last state; absorbing, so `p_{n_max}` is the tail mass.
    pub n_max: usize,
    /// Mass discarded below the active window.
    pub dropped: f64,
}

impl DiracChain {
    pub fn prob(&self, n: usize) -> f64 {
        n.checked_sub(self.offset).and_then(|k| self.p.get(k)).copied().unwrap_or(0.0)
    }

    pub fn volume(&self, n: usize) -> f64 {
        self.big_v0 + n as f64 * self.v_obstacle
    }

    pub fn mass(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn tail(&self) -> f64 {
        self.prob(self.n_max)
    }

    fn states(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.p.iter().enumerate().map(|(k, &p)| (self.volume(self.offset + k), p))
    }

    pub fn mean(&self) -> f64 {
        self.states().map(|(v, p)| v * p).sum::<f64>() / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.states().map(|(v, p)| (v - mean) * (v - mean) * p).sum::<f64>() / self.mass()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    /// Bound on `dt` times the largest active rate.
    pub dt_ctrl: f64,
    /// States below this probability at the window edges are dropped.
    pub window_threshold: f64,
    /// Largest tolerated tail mass.
    pub tail_tol: f64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            dt_ctrl: 0.5,
            window_threshold: 1e-30,
            tail_tol: 1e-12,
        }
    }
}

/// Pure birth chain from `V0` with obstacle volume `v0`, snapshots at
/// `times`. `n_max = None` starts from an estimate and doubles until the
/// tail mass is below `tail_tol`.
pub fn dirac_chain_snapshots(
    big_v0: f64,
    v_obstacle: f64,
    u: f64,
    times: &[f64],
    n_max: Option<usize>,
    opts: &ChainOptions,
) -> Result<Vec<DiracChain>> {
    if !(big_v0 >= 0.0 && v_obstacle > 0.0 && u > 0.0) {
        return Err(CtpError::InvalidParameter(format!(
            "chain needs V0 >= 0, v0 > 0, U > 0 (got {big_v0}, {v_obstacle}, {u})"
        )));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(CtpError::InvalidParameter("output times must be nondecreasing and >= 0".into()));
    }
    let t_last = times.last().copied().unwrap_or(0.0);
    let auto = n_max.is_none();
    let mut cap = match n_max {
        Some(n) => n,
        None => {
            let dist = VolumeDistribution::dirac(v_obstacle)?;
            let mean = mean_growth_ode(big_v0, u, &dist, &[t_last])?[0].ode;
            (((4.0 * mean) / v_obstacle).ceil() as usize).max(64)
        }
    };
    loop {
        let snaps = run_chain(big_v0, v_obstacle, u, times, cap, opts);
        let tail = snaps.last().map_or(0.0, DiracChain::tail);
        if tail < opts.tail_tol {
            return Ok(snaps);
        }
        if !auto {
            return Err(CtpError::GridOverflow { mass: tail });
        }
        cap *= 2;
    }
}

/// Single-horizon form of [`dirac_chain_snapshots`].
pub fn dirac_chain(big_v0: f64, v_obstacle: f64, u: f64, t_end: f64, n_max: Option<usize>) -> Result<DiracChain> {
    Ok(dirac_chain_snapshots(big_v0, v_obstacle, u, &[t_end], n_max, &ChainOptions::default())?.remove(0))
}

fn chain_rates(big_v0: f64, v_obstacle: f64, u: f64, n_max: usize) -> Vec<f64> {
    let lam = rate_constant(u);
    let c = v_obstacle.cbrt();
    (0..=n_max)
        .map(|n| {
            if n == n_max {
                0.0
            } else {
                let s = (big_v0 + n as f64 * v_obstacle).cbrt() + c;
                lam * s * s
            }
        })
        .collect()
}

fn run_chain(big_v0: f64, v_obstacle: f64, u: f64, times: &[f64], n_max: usize, opts: &ChainOptions) -> Vec<DiracChain> {
    let rates = chain_rates(big_v0, v_obstacle, u, n_max);
    // window [lo, hi) of states carried
    let mut lo = 0usize;
    let mut p: Vec<f64> = vec![1.0];
    let mut dropped = 0.0;
    let mut t = 0.0;
    let mut k: [Vec<f64>; 4] = Default::default();
    let mut flux: Vec<f64> = Vec::new();
    let mut out = Vec::with_capacity(times.len());

    // k = f(p + c·prev) with f_n = r_{n-1} x_{n-1} − r_n x_n; nothing enters
    // the window from below. Written without a loop-carried dependency so
    // the loops vectorise.
    fn stage(rates: &[f64], p: &[f64], prev: Option<(&[f64], f64)>, flux: &mut [f64], k: &mut [f64]) {
        match prev {
            None => {
                for ((f, &r), &x) in flux.iter_mut().zip(rates).zip(p) {
                    *f = r * x;
                }
            }
            Some((kp, c)) => {
                for (((f, &r), &x), &d) in flux.iter_mut().zip(rates).zip(p).zip(kp) {
                    *f = r * (x + c * d);
                }
            }
        }
        k[0] = -flux[0];
        for i in 1..k.len() {
            k[i] = flux[i - 1] - flux[i];
        }
    }

    for &t_out in times {
        while t < t_out {
            // room for four stages of spreading
            let hi = (lo + p.len() + 4).min(n_max + 1);
            p.resize(hi - lo, 0.0);
            let r = &rates[lo..hi];
            let max_rate = r.iter().copied().fold(0.0, f64::max);
            let dt = if max_rate > 0.0 { (opts.dt_ctrl / max_rate).min(t_out - t) } else { t_out - t };
            let n = p.len();
            for v in k.iter_mut() {
                v.resize(n, 0.0);
            }
            flux.resize(n, 0.0);
            let [k1, k2, k3, k4] = &mut k;
            stage(r, &p, None, &mut flux, k1);
            stage(r, &p, Some((k1, 0.5 * dt)), &mut flux, k2);
            stage(r, &p, Some((k2, 0.5 * dt)), &mut flux, k3);
            stage(r, &p, Some((k3, dt)), &mut flux, k4);
            let w = dt / 6.0;
            for ((((x, a), b), c), d) in p.iter_mut().zip(k1.iter()).zip(k2.iter()).zip(k3.iter()).zip(k4.iter()) {
                *x += w * (a + 2.0 * (b + c) + d);
            }
            t = if dt == t_out - t { t_out } else { t + dt };

            // trim negligible edges
            let thr = opts.window_threshold;
            let first = p.iter().position(|&x| x.abs() > thr).unwrap_or(p.len() - 1);
            if first > 0 {
                dropped += p[..first].iter().sum::<f64>();
                p.drain(..first);
                lo += first;
            }
            let last = p.iter().rposition(|&x| x.abs() > thr).unwrap_or(0);
            if lo + last < n_max {
                p.truncate(last + 1);
            }
        }
        out.push(DiracChain {
            big_v0,
            v_obstacle,
            t: t_out,
            offset: lo,
            p: p.clone(),
            n_max,
            dropped,
        });
    }
    out
}

/// Backward chain pairing on the full state space, used to check duality:
/// `ψ'_n = r_n (ψ_{n+1} − ψ_n)`.
pub fn chain_duality_check(
    big_v0: f64,
    v_obstacle: f64,
    u: f64,
    t_end: f64,
    n_max: usize,
    psi0: &dyn Fn(usize) -> f64,
    dt_ctrl: f64,
) -> Result<DualityReport> {
    let rates = chain_rates(big_v0, v_obstacle, u, n_max);
    let max_rate = rates.iter().copied().fold(0.0, f64::max);
    let steps = step_count(t_end, max_rate, dt_ctrl);
    let dt = if steps > 0 { t_end / steps as f64 } else { 0.0 };
    let n = n_max + 1;

    let forward = |p: &[f64], out: &mut [f64]| {
        let mut inflow = 0.0;
        for i in 0..n {
            let outflow = rates[i] * p[i];
            out[i] = inflow - outflow;
            inflow = outflow;
        }
    };
    let backward = |psi: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = if i + 1 < n { rates[i] * (psi[i + 1] - psi[i]) } else { 0.0 };
        }
    };
    let mut p = vec![0.0; n];
    p[0] = 1.0;
    let mut psi: Vec<f64> = (0..n).map(psi0).collect();
    let psi_init = psi.clone();
    let mut rk = crate::ode::Rk4::<f64>::new(n);
    for _ in 0..steps {
        rk.step(&mut p, dt, forward);
    }
    for _ in 0..steps {
        rk.step(&mut psi, dt, backward);
    }
    let lhs = psi[0];
    let rhs: f64 = p.iter().zip(&psi_init).map(|(a, b)| a * b).sum();
    Ok(DualityReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// One sample of the mean-growth closure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanGrowthPoint {
    pub t: f64,
    /// RK4 solution of `dV̄/dt = λ (M1 V̄^{2/3} + 2 M_{4/3} V̄^{1/3} + M_{5/3})`.
    pub ode: f64,
    /// `(V0^{1/3} + λ M1 t / 3)³`.
    pub leading: f64,
}

/// Mean-growth ODE at each requested time (nondecreasing).
pub fn mean_growth_ode(big_v0: f64, u: f64, dist: &VolumeDistribution, times: &[f64]) -> Result<Vec<MeanGrowthPoint>> {
    let lam = rate_constant(u);
    let m1 = dist.moment(1.0)?;
    let m43 = dist.moment(4.0 / 3.0)?;
    let m53 = dist.moment(5.0 / 3.0)?;
    let f = |v: f64| {
        let c = v.max(0.0).cbrt();
        lam * (m1 * c * c + 2.0 * m43 * c + m53)
    };
    let mut t = 0.0;
    let mut v = big_v0;
    let mut out = Vec::with_capacity(times.len());
    for &t_out in times {
        while t < t_out {
            // relative steps: the solution is a smooth power law
            let dt = (1e-3 * t.max(1.0)).min(t_out - t);
            let k1 = f(v);
            let k2 = f(v + 0.5 * dt * k1);
            let k3 = f(v + 0.5 * dt * k2);
            let k4 = f(v + dt * k3);
            v += dt / 6.0 * (k1 + 2.0 * (k2 + k3) + k4);
            t = if dt == t_out - t { t_out } else { t + dt };
        }
        let lead = big_v0.cbrt() + lam * m1 * t_out / 3.0;
        out.push(MeanGrowthPoint {
            t: t_out,
            ode: v,
            leading: lead * lead * lead,
        });
    }
    Ok(out)
}

/// One row of the `W = V/T³` table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticRow {
    pub t: f64,
    pub mean_w: f64,
    pub var_w: f64,
    /// `(λ M1 / 3)³`
    pub a_ode: f64,
    /// `λ M1³ / 27`
    pub a_paper_literal: f64,
}

/// Law of `W = V(T)/T³` along `t_list`: Dirac chain for point-mass `G`,
/// grid solver on a geometric grid otherwise.
pub fn asymptotic_scaling_check(
    dist: &VolumeDistribution,
    u: f64,
    big_v0: f64,
    t_list: &[f64],
) -> Result<Vec<AsymptoticRow>> {
    if t_list.windows(2).any(|w| !(w[1] > w[0])) || t_list.first().is_some_and(|&t| !(t > 0.0)) {
        return Err(CtpError::InvalidParameter("T list must be positive and increasing".into()));
    }
    let lam = rate_constant(u);
    let m1 = dist.moment(1.0)?;
    let a_ode = (lam * m1 / 3.0).powi(3);
    let a_paper_literal = lam * m1.powi(3) / 27.0;
    let stats: Vec<(f64, f64)> = if dist.is_dirac() {
        dirac_chain_snapshots(big_v0, dist.v_max(), u, t_list, None, &ChainOptions::default())?
            .iter()
            .map(|c| (c.mean(), c.variance()))
            .collect()
    } else {
        let t_last = *t_list.last().unwrap_or(&0.0);
        let mean = mean_growth_ode(big_v0, u, dist, &[t_last])?[0].ode;
        let top = 4.0 * mean + 20.0 * dist.v_max();
        let h0 = (dist.v_max() / 16.0).max(1e-6);
        let grid = MarginalGrid::geometric(big_v0, top, h0, 1.02)?.with_point_mass(0);
        solve_snapshots(&grid, dist, u, t_list, &SolveOptions::default())?
            .iter()
            .map(|g| (g.mean(), g.variance()))
            .collect()
    };
    Ok(t_list
        .iter()
        .zip(stats)
        .map(|(&t, (mean, var))| AsymptoticRow {
            t,
            mean_w: mean / t.powi(3),
            var_w: var / t.powi(6),
            a_ode,
            a_paper_literal,
        })
        .collect())
}

/// CSV with columns `T, meanW, varW, a_ODE, a_paper_literal`.
pub fn write_asymptotics_csv<W: Write>(mut w: W, header: &str, rows: &[AsymptoticRow]) -> io::Result<()> {
    write_comment_header(&mut w, header)?;
    writeln!(w, "T,meanW,varW,a_ODE,a_paper_literal")?;
    for r in rows {
        writeln!(w, "{}", csv_row(&[r.t, r.mean_w, r.var_w, r.a_ode, r.a_paper_literal]))?;
    }
    Ok(())
}
