//! Monte Carlo sampler of the limiting jump process.
//!
//! In the kinetic limit the tagged particle keeps moving freely and, at rate
//! `U λ(V)`, absorbs an obstacle of volume `v` hitting it at angle `θ` from
//! the direction of motion and azimuth `φ`. The jump kernel is proportional
//! to `G(v) (R + r)² sinθ cosθ` on `θ ∈ [0, π/2]`, and a jump moves the
//! centre by `v/(V+v) (R+r) n(θ, φ)`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CtpError, Result};
use crate::geom::Vector3;
use crate::measure::EmpiricalMeasure;
use crate::num::{kernel_constant, sigma};
use crate::output::{csv_row, write_comment_header};
use crate::rng::{derive_seed, stream, unit_f64, StreamRng};
use crate::volume_dist::VolumeDistribution;
use crate::Vec3;

pub const DEFAULT_MAX_JUMPS: usize = 10_000_000;

/// `λ(V) = π σ² ∫ (V^{1/3} + v^{1/3})² dG(v)`.
///
/// Evaluated from the expansion `V^{2/3} + 2 V^{1/3} M_{1/3} + M_{2/3}`,
/// which is exact; see [`lambda_by_quadrature`] for the direct integral.
pub fn lambda_of_v(big_v: f64, dist: &VolumeDistribution) -> Result<f64> {
    let m13 = dist.moment(1.0 / 3.0)?;
    let m23 = dist.moment(2.0 / 3.0)?;
    let c = big_v.cbrt();
    Ok(kernel_constant::<f64>() * (c * c + 2.0 * c * m13 + m23))
}

/// `λ(V)` by adaptive quadrature of the kernel against `G`.
pub fn lambda_by_quadrature(big_v: f64, dist: &VolumeDistribution, quad_tol: f64) -> Result<f64> {
    dist.moment(2.0 / 3.0)?;
    let c = big_v.cbrt();
    let integral = dist.integrate_against(
        |v| {
            let s = c + v.cbrt();
            s * s
        },
        0.0,
        next_up(dist.v_max()),
        quad_tol,
    );
    Ok(kernel_constant::<f64>() * integral)
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::MIN_POSITIVE
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

/// Displacement of one jump, `v/(V+v) σ (V^{1/3} + v^{1/3}) n(θ, φ)`.
pub fn jump_displacement(big_v: f64, v: f64, theta: f64, azimuth: f64) -> Vec3 {
    if v == 0.0 {
        return Vec3::zero();
    }
    let reach = sigma::<f64>() * (big_v.cbrt() + v.cbrt());
    Vector3::from_angles(theta, azimuth) * (v / (big_v + v) * reach)
}

/// `(Y', V')` after absorbing `v` at angles `(θ, φ)`.
pub fn apply_jump(y: Vec3, big_v: f64, v: f64, theta: f64, azimuth: f64) -> (Vec3, f64) {
    (y + jump_displacement(big_v, v, theta, azimuth), big_v + v)
}

/// Jump marks drawn from the normalised kernel at volume `V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpMarks {
    pub v: f64,
    pub theta: f64,
    pub azimuth: f64,
}

/// Draws `(v, θ, φ)`: `θ = arcsin √u₁`, `φ = 2π u₂`, and `v` from the law
/// `∝ G(v)(V^{1/3}+v^{1/3})²` by rejection against `G`.
pub fn sample_jump(big_v: f64, dist: &VolumeDistribution, rng: &mut StreamRng) -> JumpMarks {
    let c = big_v.cbrt();
    let envelope = c + dist.v_max().cbrt();
    let v = if dist.is_dirac() {
        dist.v_max()
    } else {
        loop {
            let v = dist.sample(unit_f64(rng));
            let ratio = (c + v.cbrt()) / envelope;
            if unit_f64(rng) < ratio * ratio {
                break v;
            }
        }
    };
    let theta = unit_f64(rng).sqrt().asin();
    let azimuth = 2.0 * std::f64::consts::PI * unit_f64(rng);
    JumpMarks { v, theta, azimuth }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpParams {
    pub u: f64,
    pub dist: VolumeDistribution,
    pub v0: f64,
    pub y0: Vec3,
    pub t_end: f64,
    pub seed: u64,
    pub max_jumps: usize,
}

impl JumpParams {
    pub fn new(u: f64, dist: VolumeDistribution, v0: f64, t_end: f64) -> Self {
        Self {
            u,
            dist,
            v0,
            y0: Vec3::zero(),
            t_end,
            seed: 0,
            max_jumps: DEFAULT_MAX_JUMPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CtpError::InvalidParameter(m));
        if !(self.u > 0.0 && self.u.is_finite()) {
            return bad(format!("U must be > 0, got {}", self.u));
        }
        if !(self.v0 >= 0.0 && self.v0.is_finite()) {
            return bad(format!("V0 must be >= 0, got {}", self.v0));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("T must be >= 0, got {}", self.t_end));
        }
        self.dist.moment(2.0 / 3.0)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jump {
    pub t: f64,
    pub v: f64,
    pub theta: f64,
    pub azimuth: f64,
    pub y: Vec3,
    pub big_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpPath {
    pub seed: u64,
    pub jumps: Vec<Jump>,
    pub y: Vec3,
    pub big_v: f64,
}

impl JumpPath {
    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }

    /// One JSON object per jump.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for j in &self.jumps {
            serde_json::to_writer(&mut w, j)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Exact simulation: holding times `Exp(U λ(V))`, then a kernel draw.
pub fn simulate(params: &JumpParams) -> Result<JumpPath> {
    params.validate()?;
    let m13 = params.dist.moment(1.0 / 3.0)?;
    let m23 = params.dist.moment(2.0 / 3.0)?;
    let rate_const = params.u * kernel_constant::<f64>();
    let mut rng = stream(params.seed);
    let mut t = 0.0;
    let mut y = params.y0;
    let mut big_v = params.v0;
    let mut jumps = Vec::new();
    loop {
        let c = big_v.cbrt();
        let rate = rate_const * (c * c + 2.0 * c * m13 + m23);
        // 1 - u lies in (0, 1]
        t += -(1.0 - unit_f64(&mut rng)).ln() / rate;
        if t > params.t_end {
            break;
        }
        if jumps.len() >= params.max_jumps {
            return Err(CtpError::JumpBudgetExceeded {
                max_jumps: params.max_jumps,
            });
        }
        let m = sample_jump(big_v, &params.dist, &mut rng);
        (y, big_v) = apply_jump(y, big_v, m.v, m.theta, m.azimuth);
        jumps.push(Jump {
            t,
            v: m.v,
            theta: m.theta,
            azimuth: m.azimuth,
            y,
            big_v,
        });
    }
    Ok(JumpPath {
        seed: params.seed,
        jumps,
        y,
        big_v,
    })
}

/// Terminal state of one path of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    pub seed: u64,
    pub n_jumps: usize,
    pub y: Vec3,
    pub big_v: f64,
}

#[derive(Debug, Clone)]
pub struct KineticEnsemble {
    pub paths: Vec<PathSummary>,
    /// Terminal `(Y, V)` of the successful paths.
    pub measure: EmpiricalMeasure,
    pub n_failed: usize,
}

/// `n_paths` independent paths; path `i` uses `derive_seed(params.seed, i)`.
pub fn ensemble(params: &JumpParams, n_paths: usize) -> Result<KineticEnsemble> {
    params.validate()?;
    if n_paths == 0 {
        return Err(CtpError::InvalidParameter("n_paths must be >= 1".into()));
    }
    let results: Vec<Result<PathSummary>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut p = params.clone();
            p.seed = derive_seed(params.seed, i);
            simulate(&p).map(|path| PathSummary {
                seed: p.seed,
                n_jumps: path.n_jumps(),
                y: path.y,
                big_v: path.big_v,
            })
        })
        .collect();
    let n_failed = results.iter().filter(|r| r.is_err()).count();
    let paths: Vec<PathSummary> = results.into_iter().filter_map(Result::ok).collect();
    let measure = EmpiricalMeasure::from_yv(paths.iter().map(|p| (p.y, p.big_v)));
    Ok(KineticEnsemble {
        paths,
        measure,
        n_failed,
    })
}

/// Terminal-sample CSV: `seed, n_jumps, V, Y1, Y2, Y3`.
pub fn write_terminal_csv<W: Write>(mut w: W, header: &str, paths: &[PathSummary]) -> io::Result<()> {
    write_comment_header(&mut w, header)?;
    writeln!(w, "seed,n_jumps,V,Y1,Y2,Y3")?;
    for p in paths {
        writeln!(w, "{},{},{}", p.seed, p.n_jumps, csv_row(&[p.big_v, p.y.x, p.y.y, p.y.z]))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;

    fn dirac1() -> VolumeDistribution {
        VolumeDistribution::dirac(1.0).unwrap()
    }

    #[test]
    fn lambda_examples() {
        let s: f64 = 0.75 / std::f64::consts::PI;
        let closed = 4.0 * std::f64::consts::PI * s.powf(2.0 / 3.0);
        let l = lambda_of_v(1.0, &dirac1()).unwrap();
        assert!((l - closed).abs() < 1e-13 * closed);
        assert!((l - 4.836).abs() < 5e-4);
        let l0 = lambda_of_v(0.0, &dirac1()).unwrap();
        assert!((l0 - closed / 4.0).abs() < 1e-13);
        assert!((lambda_by_quadrature(1.0, &dirac1(), 1e-12).unwrap() - closed).abs() < 1e-12);
    }

    #[test]
    fn lambda_uniform_against_simpson() {
        let g = VolumeDistribution::uniform(0.0, 2.0).unwrap();
        // composite Simpson in u = v^{1/3} removes the endpoint singularity
        let n = 20_000;
        let (a, b) = (0.0f64, 2f64.cbrt());
        let h = (b - a) / n as f64;
        let f = |u: f64| (1.0 + u) * (1.0 + u) * 0.5 * 3.0 * u * u;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let oracle = kernel_constant::<f64>() * s * h / 3.0;
        let tol = 1e-10;
        assert!((lambda_of_v(1.0, &g).unwrap() - oracle).abs() < tol * oracle);
        assert!((lambda_by_quadrature(1.0, &g, tol).unwrap() - oracle).abs() < tol * oracle);
    }

    #[test]
    fn apply_jump_examples() {
        let y = Vec3::new(0.3, -1.0, 2.0);
        assert_eq!(apply_jump(y, 2.0, 0.0, 0.4, 1.0), (y, 2.0));
        let (y1, v1) = apply_jump(Vec3::zero(), 8.0, 8.0, 0.0, 0.0);
        assert_eq!(v1, 16.0);
        assert!((y1.x - sigma::<f64>() * 2.0).abs() < 1e-15);
        let (y2, _) = apply_jump(Vec3::zero(), 1.0, 1.0, std::f64::consts::FRAC_PI_2, 0.0);
        assert!(y2.x.abs() < 1e-15 && y2.z.abs() < 1e-15 && y2.y > 0.0);
    }

    #[test]
    fn dirac_marks_and_theta_law() {
        let mut rng = stream(11);
        let n = 100_000;
        let mut s: Vec<f64> = (0..n)
            .map(|_| {
                let m = sample_jump(1.0, &dirac1(), &mut rng);
                assert_eq!(m.v, 1.0);
                assert!((0.0..=std::f64::consts::FRAC_PI_2).contains(&m.theta));
                m.theta.sin().powi(2)
            })
            .collect();
        s.sort_by(f64::total_cmp);
        let ks = s
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).abs().max((x - i as f64 / n as f64).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / (n as f64).sqrt(), "KS = {ks}");
    }

    #[test]
    fn tilted_volume_mean() {
        let g = VolumeDistribution::uniform(0.0, 2.0).unwrap();
        let w = |v: f64| (1.0 + v.cbrt()).powi(2);
        let num = quad::integrate(|v: f64| v * w(v) / 2.0, 0.0, 2.0, 1e-12, 0.0).value;
        let den = quad::integrate(|v: f64| w(v) / 2.0, 0.0, 2.0, 1e-12, 0.0).value;
        let want = num / den;
        let mut rng = stream(5);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_jump(1.0, &g, &mut rng).v).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - want).abs() < 4.0 * se, "{mean} vs {want} (se {se})");
    }

    #[test]
    fn zero_horizon_is_empty() {
        let p = JumpParams::new(1.0, dirac1(), 1.0, 0.0);
        let path = simulate(&p).unwrap();
        assert!(path.jumps.is_empty());
        assert_eq!((path.y, path.big_v), (Vec3::zero(), 1.0));
    }

    #[test]
    fn jump_budget() {
        let mut p = JumpParams::new(1.0, dirac1(), 1.0, 50.0);
        p.max_jumps = 10;
        assert_eq!(simulate(&p), Err(CtpError::JumpBudgetExceeded { max_jumps: 10 }));
    }

    #[test]
    fn path_invariants() {
        let g = VolumeDistribution::uniform(0.5, 2.0).unwrap();
        let mut p = JumpParams::new(1.0, g, 1.0, 2.0);
        p.seed = 99;
        let path = simulate(&p).unwrap();
        assert!(!path.jumps.is_empty());
        let mut prev = (0.0, p.v0);
        for j in &path.jumps {
            assert!(j.t > prev.0 && j.big_v > prev.1);
            assert!(Vector3::from_angles(j.theta, j.azimuth).x >= 0.0);
            prev = (j.t, j.big_v);
        }
        assert!(path.big_v <= p.v0 + path.n_jumps() as f64 * 2.0);
        assert_eq!(simulate(&p).unwrap(), path);
    }
}
