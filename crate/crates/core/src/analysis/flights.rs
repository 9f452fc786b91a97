//! Free-flight statistics.
//!
//! A flight of duration `s` at rescaled speed `U` has rescaled length `U s`.
//! It counts as small when `U s ≤ δ / (R² + 1)` with `R = σ V^{1/3}` the
//! rescaled radius during the flight.

use std::io::{self, Write};

use serde::Serialize;

use crate::num::sigma;
use crate::output::{csv_row, write_comment_header};
use crate::sim::EventLog;

/// Minimum flight count before a log can be flagged as accumulating.
pub const ACCUMULATION_MIN_FLIGHTS: usize = 20;
/// A log accumulates when its last half of flights spans less than this
/// fraction of the total flight time.
pub const ACCUMULATION_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlightStats {
    pub n_flights: usize,
    /// `Σ s_j`, total flight time.
    pub total_duration: f64,
    /// `Σ U s_j`, total rescaled flight length.
    pub total_length: f64,
    /// `Σ Ũ s_j`, total physical flight length.
    pub physical_length: f64,
    pub n_small: usize,
    pub small_fraction: f64,
    /// Flights shrink so fast that the path looks like an accumulation point.
    pub flagged: bool,
    /// `(t_end_of_flight, cumulative rescaled length)` after every flight.
    pub cumulative: Vec<(f64, f64)>,
}

pub fn flight_stats(log: &EventLog, delta: f64) -> FlightStats {
    let s = sigma::<f64>();
    let mut cumulative = Vec::new();
    let (mut total_duration, mut total_length, mut n_small) = (0.0, 0.0, 0);
    let flights: Vec<_> = log.flights().collect();
    for f in &flights {
        let l = log.u * f.duration;
        let r = s * f.exit_volume.cbrt();
        if l <= delta / (r * r + 1.0) {
            n_small += 1;
        }
        total_duration += f.duration;
        total_length += l;
        cumulative.push((f.t_start + f.duration, total_length));
    }
    let n = flights.len();
    let tail: f64 = flights[n / 2..].iter().map(|f| f.duration).sum();
    FlightStats {
        n_flights: n,
        total_duration,
        total_length,
        physical_length: flights.iter().map(|f| f.length).sum(),
        n_small,
        small_fraction: if n == 0 { 0.0 } else { n_small as f64 / n as f64 },
        flagged: n >= ACCUMULATION_MIN_FLIGHTS && tail < ACCUMULATION_FRACTION * total_duration,
        cumulative,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlightSummary {
    pub n_logs: usize,
    pub mean_small_fraction: f64,
    /// Fraction of logs in which at least half of the flights are small.
    pub half_small_fraction: f64,
    pub flagged: usize,
    pub mean_total_length: f64,
}

pub fn summarize(stats: &[FlightStats]) -> FlightSummary {
    let n = stats.len().max(1) as f64;
    FlightSummary {
        n_logs: stats.len(),
        mean_small_fraction: stats.iter().map(|s| s.small_fraction).sum::<f64>() / n,
        half_small_fraction: stats
            .iter()
            .filter(|s| s.n_flights > 0 && 2 * s.n_small >= s.n_flights)
            .count() as f64
            / n,
        flagged: stats.iter().filter(|s| s.flagged).count(),
        mean_total_length: stats.iter().map(|s| s.total_length).sum::<f64>() / n,
    }
}

/// CSV with columns `log, n_flights, total_duration, total_length, n_small, small_fraction, flagged`.
pub fn write_flight_csv<W: Write>(mut w: W, header: &str, stats: &[FlightStats]) -> io::Result<()> {
    write_comment_header(&mut w, header)?;
    writeln!(w, "log,n_flights,total_duration,total_length,n_small,small_fraction,flagged")?;
    for (i, s) in stats.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{},{}",
            s.n_flights,
            csv_row(&[s.total_duration, s.total_length]),
            s.n_small,
            crate::output::fmt_num(s.small_fraction),
            u8::from(s.flagged)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScriptedField;
    use crate::sim::{run_on, SimParams};
    use crate::volume_dist::VolumeDistribution;

    #[test]
    fn zero_collision_log_has_one_full_flight() {
        let p = SimParams::new(1e-3, 2.0, 3.0, 1.0, VolumeDistribution::dirac(1.0).unwrap());
        let tr = run_on(&p, &ScriptedField::empty()).unwrap();
        let st = flight_stats(&tr.log, 0.01);
        assert_eq!(st.n_flights, 1);
        assert_eq!(st.total_length, 6.0);
        assert!((st.physical_length - 6.0 / 1e-3f64.cbrt().powi(2)).abs() < 1e-9);
        assert_eq!(st.small_fraction, 0.0);
        assert!(!st.flagged);
        assert_eq!(st.cumulative, vec![(3.0, 6.0)]);
    }
}
