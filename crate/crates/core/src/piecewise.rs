//! Piecewise-linear lookup tables.
//!
//! A single [`PwlTable`] type backs every scalar curve in the toolkit:
//! internal resistance vs. SOC and vs. temperature, the SOC-OCV curves,
//! the thermal derating factor, and the sampled heat curves handed to the
//! dispatch model. Evaluation clamps to the endpoint values outside the
//! breakpoint range, matching the saturated endpoints the curves are
//! defined with.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PwlError {
    #[error("piecewise table needs at least 2 breakpoints, got {0}")]
    TooFewPoints(usize),
    #[error("duplicate breakpoint x = {0}")]
    DuplicateX(f64),
    #[error("non-finite breakpoint ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("{path}:{line}: malformed table row: {reason}")]
    Csv {
        path: String,
        line: usize,
        reason: String,
    },
}

/// One affine segment of a table: `y = slope * x + intercept` on `[x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub slope: f64,
    pub intercept: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Segment {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// An ordered breakpoint table defining a piecewise-linear scalar function
/// with clamped extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlTable {
    breakpoints: Vec<(f64, f64)>,
}

impl PwlTable {
    /// Builds a table from `(x, y)` points. Points are sorted by `x`;
    /// duplicate or non-finite coordinates are rejected.
    pub fn new(points: &[(f64, f64)]) -> Result<Self, PwlError> {
        if points.len() < 2 {
            return Err(PwlError::TooFewPoints(points.len()));
        }
        for &(x, y) in points {
            if !x.is_finite() || !y.is_finite() {
                return Err(PwlError::NonFinite(x, y));
            }
        }
        let mut breakpoints = points.to_vec();
        breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in breakpoints.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(PwlError::DuplicateX(pair[0].0));
            }
        }
        Ok(Self { breakpoints })
    }

    /// Reads a two-column `x,y` CSV. A non-numeric first row is treated as a
    /// header; anything malformed after that is an error carrying the line
    /// number.
    pub fn from_csv(path: &Path) -> Result<Self, PwlError> {
        let text = std::fs::read_to_string(path).map_err(|e| PwlError::Csv {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
        let mut points = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match parse_xy(line) {
                Some(p) => points.push(p),
                None if points.is_empty() && idx == 0 => continue, // header row
                None => {
                    return Err(PwlError::Csv {
                        path: path.display().to_string(),
                        line: idx + 1,
                        reason: format!("expected two numeric fields, got `{line}`"),
                    })
                }
            }
        }
        Self::new(&points)
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn x_min(&self) -> f64 {
        self.breakpoints[0].0
    }

    pub fn x_max(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1].0
    }

    /// Evaluates the table at `x`: linear interpolation on the containing
    /// segment, clamped to the endpoint values outside the range. Exact at
    /// every breakpoint.
    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.breakpoints;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        if x >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        // partition_point: first breakpoint with bp.x >= x bounds the segment.
        let hi = pts.partition_point(|bp| bp.0 < x);
        let (x0, y0) = pts[hi - 1];
        let (x1, y1) = pts[hi];
        if x == x1 {
            return y1;
        }
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Returns the `n-1` affine segments of the table, each reproducing
    /// [`PwlTable::eval`] on its `[x_lo, x_hi]` interval.
    pub fn segments(&self) -> Vec<Segment> {
        self.breakpoints
            .windows(2)
            .map(|pair| {
                let (x0, y0) = pair[0];
                let (x1, y1) = pair[1];
                let slope = (y1 - y0) / (x1 - x0);
                Segment {
                    slope,
                    intercept: y0 - slope * x0,
                    x_lo: x0,
                    x_hi: x1,
                }
            })
            .collect()
    }

    /// True when the `y` values never increase with `x`.
    pub fn is_non_increasing(&self) -> bool {
        self.breakpoints.windows(2).all(|p| p[1].1 <= p[0].1)
    }

    /// True when the `y` values strictly increase with `x`.
    pub fn is_strictly_increasing(&self) -> bool {
        self.breakpoints.windows(2).all(|p| p[1].1 > p[0].1)
    }
}

impl fmt::Display for PwlTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pwl[")?;
        for (i, (x, y)) in self.breakpoints.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "({x}, {y})")?;
        }
        write!(f, "]")
    }
}

fn parse_xy(line: &str) -> Option<(f64, f64)> {
    let mut fields = line.split(&[',', ';', '\t'][..]).map(str::trim);
    let x = fields.next()?.parse::<f64>().ok()?;
    let y = fields.next()?.parse::<f64>().ok()?;
    Some((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builds_two_point_identity_segment() {
        let t = PwlTable::new(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert_eq!(t.breakpoints().len(), 2);
        assert_eq!(t.eval(0.5), 0.5);
    }

    #[test]
    fn builds_resistance_temperature_endpoints() {
        // 2.5 mΩ at 25 °C falling to 0.75 mΩ at 80 °C.
        let t = PwlTable::new(&[(25.0, 2.5), (80.0, 0.75)]).unwrap();
        assert_eq!(t.eval(25.0), 2.5);
        assert_eq!(t.eval(80.0), 0.75);
    }

    #[test]
    fn rejects_duplicate_x() {
        assert_eq!(
            PwlTable::new(&[(0.0, 0.0), (0.0, 1.0)]),
            Err(PwlError::DuplicateX(0.0))
        );
    }

    #[test]
    fn rejects_single_point() {
        assert_eq!(PwlTable::new(&[(1.0, 1.0)]), Err(PwlError::TooFewPoints(1)));
    }

    #[test]
    fn sorts_unordered_input() {
        let t = PwlTable::new(&[(1.0, 10.0), (0.0, 0.0)]).unwrap();
        assert_eq!(t.breakpoints(), &[(0.0, 0.0), (1.0, 10.0)]);
    }

    #[test]
    fn eval_interpolates_midpoint() {
        let t = PwlTable::new(&[(25.0, 2.5), (80.0, 0.75)]).unwrap();
        assert!((t.eval(52.5) - 1.625).abs() < 1e-12);
    }

    #[test]
    fn eval_clamps_outside_range() {
        let t = PwlTable::new(&[(45.0, 1.0), (60.0, 0.0)]).unwrap();
        assert_eq!(t.eval(70.0), 0.0);
        assert_eq!(t.eval(20.0), 1.0);
    }

    #[test]
    fn segments_single_span() {
        let t = PwlTable::new(&[(0.0, 0.0), (1.0, 2.0)]).unwrap();
        let segs = t.segments();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].slope, 2.0);
        assert_eq!(segs[0].intercept, 0.0);
        assert_eq!((segs[0].x_lo, segs[0].x_hi), (0.0, 1.0));
    }

    #[test]
    fn segments_derating_span() {
        let t = PwlTable::new(&[(45.0, 1.0), (60.0, 0.0)]).unwrap();
        let seg = t.segments()[0];
        assert!((seg.slope - (-1.0 / 15.0)).abs() < 1e-15);
        assert!((seg.intercept - 4.0).abs() < 1e-12);
    }

    #[test]
    fn segments_low_soc_resistance_span() {
        let t = PwlTable::new(&[(0.0, 40.0), (0.1, 2.5)]).unwrap();
        let seg = t.segments()[0];
        assert!((seg.slope - (-375.0)).abs() < 1e-9);
        assert!((seg.intercept - 40.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        std::fs::write(&path, "temp_c,r_mohm\n25,2.5\n80,0.75\n").unwrap();
        let t = PwlTable::from_csv(&path).unwrap();
        assert_eq!(t.breakpoints(), &[(25.0, 2.5), (80.0, 0.75)]);
    }

    #[test]
    fn csv_malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "0,0\n1,oops\n").unwrap();
        match PwlTable::from_csv(&path) {
            Err(PwlError::Csv { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    fn arb_table() -> impl Strategy<Value = PwlTable> {
        proptest::collection::btree_set(-1000i64..1000, 2..12).prop_flat_map(|xs| {
            let xs: Vec<f64> = xs.into_iter().map(|x| x as f64 / 7.0).collect();
            proptest::collection::vec(-1e3f64..1e3, xs.len()).prop_map(move |ys| {
                let pts: Vec<(f64, f64)> =
                    xs.iter().copied().zip(ys.into_iter()).collect();
                PwlTable::new(&pts).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn eval_matches_segment_on_containing_interval(t in arb_table(), u in 0.0f64..1.0) {
            let x = t.x_min() + u * (t.x_max() - t.x_min());
            let y = t.eval(x);
            let seg = t
                .segments()
                .into_iter()
                .find(|s| s.x_lo <= x && x <= s.x_hi)
                .expect("x in range");
            let scale = y.abs().max(seg.eval(x).abs()).max(1e-9);
            prop_assert!((y - seg.eval(x)).abs() <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn eval_exact_at_breakpoints(t in arb_table()) {
            for &(x, y) in t.breakpoints() {
                prop_assert_eq!(t.eval(x), y);
            }
        }

        #[test]
        fn monotone_breakpoints_give_monotone_eval(
            t in arb_table(),
            a in -2000.0f64..2000.0,
            b in -2000.0f64..2000.0,
        ) {
            // Sort the y values descending to force a non-increasing table.
            let mut ys: Vec<f64> = t.breakpoints().iter().map(|p| p.1).collect();
            ys.sort_by(|p, q| q.total_cmp(p));
            let pts: Vec<(f64, f64)> = t
                .breakpoints()
                .iter()
                .map(|p| p.0)
                .zip(ys.into_iter())
                .collect();
            let mono = PwlTable::new(&pts).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(mono.eval(lo) >= mono.eval(hi) - 1e-12);
        }
    }
}
