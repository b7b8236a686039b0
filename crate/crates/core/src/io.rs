//! Plain-text serialization of paths and jump records.
//!
//! Floating-point fields are written with 17 significant digits so that
//! round-tripping through text preserves the exact binary value.

use crate::dynamics::PathGrid;
use crate::error::{Error, Result};
use crate::prm::{JumpEvent, JumpPath};

/// Format preserving the exact f64 value across a text round trip.
pub fn format_full(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with header `t,source,mark`, one row per jump in time order.
pub fn jump_path_to_csv(path: &JumpPath) -> String {
    let mut out = String::from("t,source,mark\n");
    for e in &path.events {
        out.push_str(&format!(
            "{},{},{}\n",
            format_full(e.t),
            e.source,
            format_full(e.mark)
        ));
    }
    out
}

/// Parse the output of `jump_path_to_csv` back into a validated path.
pub fn jump_path_from_csv(csv: &str, horizon: f64, epsilon: f64) -> Result<JumpPath> {
    let mut lines = csv.lines();
    match lines.next() {
        Some("t,source,mark") => {}
        _ => return Err(Error::Invalid("missing jump csv header".into())),
    }
    let mut events = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse_err = || Error::Invalid(format!("bad jump csv row {}", k + 2));
        let t: f64 = fields.next().ok_or_else(parse_err)?.parse().map_err(|_| parse_err())?;
        let source: usize = fields.next().ok_or_else(parse_err)?.parse().map_err(|_| parse_err())?;
        let mark: f64 = fields.next().ok_or_else(parse_err)?.parse().map_err(|_| parse_err())?;
        if fields.next().is_some() {
            return Err(parse_err());
        }
        events.push(JumpEvent { t, source, mark });
    }
    let path = JumpPath {
        events,
        horizon,
        epsilon,
    };
    path.validate()?;
    Ok(path)
}

/// CSV with header `time,mode_0,...,mode_d`, one row per grid node.
pub fn path_grid_to_csv(path: &PathGrid) -> String {
    let d = path
        .states
        .first()
        .map(|s| s.coeffs.len().saturating_sub(1))
        .unwrap_or(0);
    let mut out = String::from("time");
    for j in 0..=d {
        out.push_str(&format!(",mode_{j}"));
    }
    out.push('\n');
    for (t, state) in path.times.iter().zip(&path.states) {
        out.push_str(&format_full(*t));
        for c in &state.coeffs {
            out.push(',');
            out.push_str(&format_full(*c));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_exact, steady_state};
    use crate::model::{MarkDistribution, ModelParams, SourceSpec};

    fn params() -> ModelParams {
        ModelParams {
            diffusion: 1.0,
            velocity: 0.0,
            alpha: 1.0,
            ell: std::f64::consts::PI,
            sources: vec![SourceSpec {
                kappa: std::f64::consts::FRAC_PI_2,
                rate: 1.0,
                marks: MarkDistribution::Uniform { a_max: 2.0 },
            }],
        }
    }

    #[test]
    fn full_precision_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, -7.25e18] {
            let s = format_full(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn jump_csv_round_trip_is_exact() {
        let params = params();
        let u0 = steady_state(&params, 6).unwrap();
        let (_, jumps) = simulate_exact(&params, 0.3, &u0, 2.0, 8, 77).unwrap();
        assert!(!jumps.events.is_empty());
        let csv = jump_path_to_csv(&jumps);
        let back = jump_path_from_csv(&csv, jumps.horizon, jumps.epsilon).unwrap();
        assert_eq!(back.events.len(), jumps.events.len());
        for (a, b) in back.events.iter().zip(&jumps.events) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.source, b.source);
            assert_eq!(a.mark.to_bits(), b.mark.to_bits());
        }
    }

    #[test]
    fn malformed_jump_csv_is_rejected() {
        assert!(jump_path_from_csv("nope\n", 1.0, 0.1).is_err());
        assert!(jump_path_from_csv("t,source,mark\n0.5,0\n", 1.0, 0.1).is_err());
        assert!(jump_path_from_csv("t,source,mark\n0.5,zero,1.0\n", 1.0, 0.1).is_err());
        // out-of-order times fail path validation
        assert!(
            jump_path_from_csv("t,source,mark\n0.5,0,1.0\n0.25,0,1.0\n", 1.0, 0.1).is_err()
        );
    }

    #[test]
    fn path_grid_csv_has_expected_shape() {
        let params = params();
        let u0 = steady_state(&params, 3).unwrap();
        let (path, _) = simulate_exact(&params, 0.3, &u0, 1.0, 4, 5).unwrap();
        let csv = path_grid_to_csv(&path);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "time,mode_0,mode_1,mode_2,mode_3");
        assert_eq!(csv.lines().count(), 1 + 5);
        let first = lines.next().unwrap();
        let fields: Vec<&str> = first.split(',').collect();
        assert_eq!(fields.len(), 5);
        let t0: f64 = fields[0].parse().unwrap();
        assert_eq!(t0, 0.0);
    }
}
