//! Marked Poisson obstacle field.
//!
//! Space is tiled by cubic cells of side `cell_side`. Each cell's obstacles
//! are generated from their own random stream, keyed by the field seed and the
//! integer cell coordinates, so any cell can be realised on demand and the
//! result never depends on which cells were requested before it.
//!
//! Obstacles are marked points. Their contact radii are a concern of the
//! caller; the field only answers "which centres lie within ρ of this
//! segment".

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use dashmap::DashMap;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{CtpError, Result};
use crate::geom::point_segment_dist_sq;
use crate::num::sigma;
use crate::output::fmt_num;
use crate::rng::{mix, stream, unit_f64};
use crate::volume_dist::VolumeDistribution;
use crate::Vec3;

pub type CellIndex = [i64; 3];

/// Stable identity of an obstacle: its cell and its rank inside the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObstacleId {
    pub cell: CellIndex,
    pub local: u32,
}

impl fmt::Display for ObstacleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.cell;
        write!(f, "({a},{b},{c})#{}", self.local)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: ObstacleId,
    /// Centre, physical length units.
    pub x: Vec3,
    /// Rescaled volume.
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub seed: u64,
    pub cell_side: f64,
    pub dist: VolumeDistribution,
    /// Always 1; kept so the value is explicit wherever parameters are logged.
    pub intensity: f64,
}

impl FieldParams {
    pub fn new(seed: u64, cell_side: f64, dist: VolumeDistribution) -> Result<Self> {
        if !(cell_side.is_finite() && cell_side > 0.0) {
            return Err(CtpError::InvalidParameter(format!("cell_side must be > 0, got {cell_side}")));
        }
        Ok(Self {
            seed,
            cell_side,
            dist,
            intensity: 1.0,
        })
    }

    /// `max(1, 4 φ^{1/3} σ (V_budget^{1/3} + v_max^{1/3}))`.
    pub fn default_cell_side(phi: f64, v_budget: f64, v_max: f64) -> f64 {
        let r = phi.cbrt() * sigma::<f64>() * (v_budget.cbrt() + v_max.cbrt());
        (4.0 * r).max(1.0)
    }

    pub fn cell_of(&self, x: Vec3) -> CellIndex {
        let s = self.cell_side;
        [(x.x / s).floor() as i64, (x.y / s).floor() as i64, (x.z / s).floor() as i64]
    }
}

/// A segment `[p0, p1]` inflated by `radius` (a ball when `p0 == p1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub p0: Vec3,
    pub p1: Vec3,
    pub radius: f64,
}

impl Region {
    pub fn capsule(p0: Vec3, p1: Vec3, radius: f64) -> Self {
        debug_assert!(radius >= 0.0);
        Self { p0, p1, radius }
    }

    pub fn ball(centre: Vec3, radius: f64) -> Self {
        Self::capsule(centre, centre, radius)
    }

    #[inline]
    pub fn contains(&self, x: Vec3) -> bool {
        point_segment_dist_sq(x, self.p0, self.p1) <= self.radius * self.radius
    }

    /// Volume of the capsule.
    pub fn volume(&self) -> f64 {
        let r = self.radius;
        let pi = std::f64::consts::PI;
        pi * r * r * (self.p1 - self.p0).norm() + 4.0 / 3.0 * pi * r * r * r
    }

    /// Cells whose cube may intersect the region, in lexicographic order.
    pub fn cells(&self, cell_side: f64) -> Vec<CellIndex> {
        let lo = [
            self.p0.x.min(self.p1.x) - self.radius,
            self.p0.y.min(self.p1.y) - self.radius,
            self.p0.z.min(self.p1.z) - self.radius,
        ];
        let hi = [
            self.p0.x.max(self.p1.x) + self.radius,
            self.p0.y.max(self.p1.y) + self.radius,
            self.p0.z.max(self.p1.z) + self.radius,
        ];
        let idx = |x: f64| (x / cell_side).floor() as i64;
        let half_diag = 0.5 * 3f64.sqrt() * cell_side;
        let reach = (self.radius + half_diag).powi(2);
        let mut out = Vec::new();
        for i in idx(lo[0])..=idx(hi[0]) {
            for j in idx(lo[1])..=idx(hi[1]) {
                for k in idx(lo[2])..=idx(hi[2]) {
                    let centre = Vec3::new(
                        (i as f64 + 0.5) * cell_side,
                        (j as f64 + 0.5) * cell_side,
                        (k as f64 + 0.5) * cell_side,
                    );
                    if point_segment_dist_sq(centre, self.p0, self.p1) <= reach {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        out
    }
}

/// Obstacles of one cell, a pure function of `(params.seed, cell)`.
pub fn materialize_cell(params: &FieldParams, cell: CellIndex) -> Vec<Obstacle> {
    let key = mix(params.seed, &[cell[0] as u64, cell[1] as u64, cell[2] as u64]);
    let mut rng = stream(key);
    let side = params.cell_side;
    let mean = params.intensity * side * side * side;
    let count = Poisson::new(mean).expect("positive Poisson mean").sample(&mut rng) as u32;
    let origin = Vec3::new(cell[0] as f64 * side, cell[1] as f64 * side, cell[2] as f64 * side);
    (0..count)
        .map(|local| {
            let offset = Vec3::new(unit_f64(&mut rng), unit_f64(&mut rng), unit_f64(&mut rng)) * side;
            let v = params.dist.sample(unit_f64(&mut rng));
            Obstacle {
                id: ObstacleId { cell, local },
                x: origin + offset,
                v,
            }
        })
        .collect()
}

/// Set of obstacles removed by merges along one trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConsumedSet {
    ids: HashSet<ObstacleId>,
}

impl ConsumedSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: &ObstacleId) -> bool {
        self.ids.contains(id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Adds `ids`. Fails without modifying the set if any id is already
    /// present (or repeated within `ids`).
    pub fn consume(&mut self, ids: &[ObstacleId]) -> Result<()> {
        let mut fresh = HashSet::with_capacity(ids.len());
        for id in ids {
            if self.ids.contains(id) || !fresh.insert(*id) {
                return Err(CtpError::DoubleConsume(*id));
            }
        }
        self.ids.extend(fresh);
        Ok(())
    }
}

/// Anything the tagged particle can be run against.
pub trait ObstacleSource: Send + Sync {
    /// Upper bound of obstacle volumes present in the source.
    fn v_max(&self) -> f64;

    /// Unconsumed obstacles whose centres lie in `region`.
    fn obstacles_in(&self, region: &Region, consumed: &ConsumedSet) -> Vec<Obstacle>;

    /// Preferred length of one search window along a flight.
    fn search_window(&self) -> f64;
}

/// The random field, realised lazily with a shared cell cache.
#[derive(Debug)]
pub struct PoissonField {
    params: FieldParams,
    cache: DashMap<CellIndex, Arc<[Obstacle]>>,
}

impl PoissonField {
    pub fn new(params: FieldParams) -> Self {
        Self {
            params,
            cache: DashMap::new(),
        }
    }

    pub fn params(&self) -> &FieldParams {
        &self.params
    }

    /// Cached cell contents. Concurrent first requests may both generate the
    /// cell; generation is pure, so whichever insert wins is identical.
    pub fn cell(&self, cell: CellIndex) -> Arc<[Obstacle]> {
        if let Some(hit) = self.cache.get(&cell) {
            return Arc::clone(hit.value());
        }
        let fresh: Arc<[Obstacle]> = materialize_cell(&self.params, cell).into();
        Arc::clone(self.cache.entry(cell).or_insert(fresh).value())
    }

    pub fn cached_cells(&self) -> usize {
        self.cache.len()
    }
}

impl ObstacleSource for PoissonField {
    fn v_max(&self) -> f64 {
        self.params.dist.v_max()
    }

    fn obstacles_in(&self, region: &Region, consumed: &ConsumedSet) -> Vec<Obstacle> {
        let mut out = Vec::new();
        for c in region.cells(self.params.cell_side) {
            out.extend(
                self.cell(c)
                    .iter()
                    .filter(|o| region.contains(o.x) && !consumed.contains(&o.id))
                    .copied(),
            );
        }
        out
    }

    fn search_window(&self) -> f64 {
        8.0 * self.params.cell_side
    }
}

/// A fixed, hand-placed obstacle configuration.
#[derive(Debug, Clone)]
pub struct ScriptedField {
    obstacles: Vec<Obstacle>,
    bucket_side: f64,
    buckets: HashMap<CellIndex, Vec<usize>>,
    v_max: f64,
}

impl ScriptedField {
    /// Obstacles get ids `((0,0,0), i)` in the given order.
    pub fn new(placements: &[(Vec3, f64)], bucket_side: f64) -> Self {
        let obstacles: Vec<Obstacle> = placements
            .iter()
            .enumerate()
            .map(|(i, &(x, v))| Obstacle {
                id: ObstacleId {
                    cell: [0, 0, 0],
                    local: i as u32,
                },
                x,
                v,
            })
            .collect();
        let mut buckets: HashMap<CellIndex, Vec<usize>> = HashMap::new();
        for (i, o) in obstacles.iter().enumerate() {
            let b = [
                (o.x.x / bucket_side).floor() as i64,
                (o.x.y / bucket_side).floor() as i64,
                (o.x.z / bucket_side).floor() as i64,
            ];
            buckets.entry(b).or_default().push(i);
        }
        let v_max = obstacles.iter().map(|o| o.v).fold(0.0, f64::max);
        Self {
            obstacles,
            bucket_side,
            buckets,
            v_max,
        }
    }

    pub fn empty() -> Self {
        Self::new(&[], 1.0)
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    /// Same configuration shifted by `delta` (physical units).
    pub fn translated(&self, delta: Vec3) -> Self {
        let placements: Vec<(Vec3, f64)> = self.obstacles.iter().map(|o| (o.x + delta, o.v)).collect();
        Self::new(&placements, self.bucket_side)
    }
}

impl ObstacleSource for ScriptedField {
    fn v_max(&self) -> f64 {
        self.v_max
    }

    fn obstacles_in(&self, region: &Region, consumed: &ConsumedSet) -> Vec<Obstacle> {
        let mut out = Vec::new();
        for c in region.cells(self.bucket_side) {
            if let Some(idx) = self.buckets.get(&c) {
                out.extend(
                    idx.iter()
                        .map(|&i| self.obstacles[i])
                        .filter(|o| region.contains(o.x) && !consumed.contains(&o.id)),
                );
            }
        }
        out
    }

    fn search_window(&self) -> f64 {
        8.0 * self.bucket_side
    }
}

/// CSV dump: `cell_x, cell_y, cell_z, local_index, x1, x2, x3, v`.
pub fn write_obstacles_csv<W: Write>(mut w: W, obstacles: &[Obstacle]) -> io::Result<()> {
    writeln!(w, "cell_x,cell_y,cell_z,local_index,x1,x2,x3,v")?;
    let mut sorted = obstacles.to_vec();
    sorted.sort_by_key(|o| o.id);
    for o in &sorted {
        let [a, b, c] = o.id.cell;
        writeln!(
            w,
            "{a},{b},{c},{},{},{},{},{}",
            o.id.local,
            fmt_num(o.x.x),
            fmt_num(o.x.y),
            fmt_num(o.x.z),
            fmt_num(o.v)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64, side: f64) -> FieldParams {
        FieldParams::new(seed, side, VolumeDistribution::uniform(0.0, 2.0).unwrap()).unwrap()
    }

    #[test]
    fn cell_is_deterministic() {
        let p = params(42, 1.0);
        assert_eq!(materialize_cell(&p, [0, 0, 0]), materialize_cell(&p, [0, 0, 0]));
        let field = PoissonField::new(p.clone());
        // query order must not matter
        let late = {
            field.cell([5, -3, 2]);
            field.cell([0, 0, 0])
        };
        assert_eq!(&late[..], &materialize_cell(&p, [0, 0, 0])[..]);
    }

    #[test]
    fn obstacles_lie_in_their_cell() {
        let p = params(1, 2.5);
        for c in [[0, 0, 0], [-1, 3, -7]] {
            for o in materialize_cell(&p, c) {
                assert_eq!(p.cell_of(o.x), c);
                assert!(o.v >= 0.0 && o.v <= 2.0);
            }
        }
    }

    #[test]
    fn count_mean_variance_and_independence() {
        let p = params(2024, 1.0);
        let n = 100_000i64;
        let counts: Vec<f64> = (0..n).map(|i| materialize_cell(&p, [i, 0, 0]).len() as f64).collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        let cov = counts.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1) as f64;
        let r = cov / var;
        assert!(r.abs() < 0.02, "adjacent-cell correlation {r}");
    }

    #[test]
    fn empty_point_query() {
        let field = PoissonField::new(params(3, 1.0));
        let origin_cell = field.cell([0, 0, 0]);
        // a point strictly away from every obstacle
        let mut p = Vec3::new(0.5, 0.5, 0.5);
        while origin_cell.iter().any(|o| o.x == p) {
            p.x += 1e-3;
        }
        assert!(field.obstacles_in(&Region::ball(p, 0.0), &ConsumedSet::new()).is_empty());
    }

    #[test]
    fn query_is_union_of_filtered_cells() {
        let p = params(9, 1.0);
        let field = PoissonField::new(p.clone());
        let region = Region::capsule(Vec3::new(0.1, 0.5, 0.5), Vec3::new(1.9, 0.5, 0.5), 0.3);
        let mut got: Vec<ObstacleId> = field.obstacles_in(&region, &ConsumedSet::new()).iter().map(|o| o.id).collect();
        let mut want: Vec<ObstacleId> = [[0, 0, 0], [1, 0, 0]]
            .iter()
            .flat_map(|&c| materialize_cell(&p, c))
            .filter(|o| region.contains(o.x))
            .map(|o| o.id)
            .collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn capsule_count_matches_volume() {
        let region = Region::capsule(Vec3::new(0.3, 0.2, -0.4), Vec3::new(2.3, 0.7, 0.1), 0.6);
        let vol = region.volume();
        let n = 10_000u64;
        let total: usize = (0..n)
            .map(|s| PoissonField::new(params(s, 1.0)).obstacles_in(&region, &ConsumedSet::new()).len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - vol).abs() < 4.0 * (vol / n as f64).sqrt(), "mean {mean} vs volume {vol}");
    }

    #[test]
    fn consume_contract() {
        let a = ObstacleId { cell: [0, 0, 0], local: 0 };
        let b = ObstacleId { cell: [1, 0, 0], local: 0 };
        let mut set = ConsumedSet::new();
        set.consume(&[a]).unwrap();
        set.consume(&[b]).unwrap();
        assert!(set.contains(&a) && set.contains(&b) && set.len() == 2);
        assert_eq!(set.consume(&[a]), Err(CtpError::DoubleConsume(a)));
        assert_eq!(set.len(), 2);
        let c = ObstacleId { cell: [2, 0, 0], local: 0 };
        assert!(ConsumedSet::new().consume(&[c, c]).is_err());
    }

    #[test]
    fn consumed_obstacles_disappear() {
        let field = PoissonField::new(params(5, 1.0));
        let region = Region::ball(Vec3::new(0.5, 0.5, 0.5), 3.0);
        let all = field.obstacles_in(&region, &ConsumedSet::new());
        assert!(!all.is_empty());
        let mut consumed = ConsumedSet::new();
        consumed.consume(&[all[0].id]).unwrap();
        let after = field.obstacles_in(&region, &consumed);
        assert_eq!(after.len(), all.len() - 1);
        assert!(after.iter().all(|o| o.id != all[0].id));
    }

    #[test]
    fn csv_dump_header_and_rows() {
        let p = params(8, 1.0);
        let obs = materialize_cell(&p, [0, 0, 0]);
        let mut buf = Vec::new();
        write_obstacles_csv(&mut buf, &obs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("cell_x,cell_y,cell_z,local_index,x1,x2,x3,v"));
        assert_eq!(lines.count(), obs.len());
    }

    #[test]
    fn default_cell_side_floor() {
        assert_eq!(FieldParams::default_cell_side(1e-3, 10.0, 1.0), 1.0);
        assert!(FieldParams::default_cell_side(0.5, 1000.0, 1.0) > 1.0);
    }
}
