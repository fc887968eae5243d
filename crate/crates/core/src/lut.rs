//! Sampled monotone maps with piecewise-linear evaluation and inversion.
//!
//! One table type backs both time-indexed families used by the codec: the
//! companding maps of the inner dynamics (strictly increasing, interpolated
//! both ways) and the spike-count quantizer maps (step functions stored as
//! exact cell boundaries). Tables carry the time argument they were built
//! for and a parameter digest so an exported table can be paired with the
//! stream that used it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LutError {
    #[error("lookup table must hold at least one sample")]
    Empty,
    #[error("xs and ys lengths differ: {xs} vs {ys}")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("xs must be strictly increasing; violated at index {index} ({x0} >= {x1})")]
    NonMonotonicX { index: usize, x0: f64, x1: f64 },
    #[error("ys must be non-decreasing; violated on [{x0}, {x1}] ({y0} > {y1})")]
    NonMonotonicY { x0: f64, x1: f64, y0: f64, y1: f64 },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("cannot invert a table with no rising segment")]
    Degenerate,
    #[error("malformed table data: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LutKind {
    Forward,
    Inverse,
}

/// A sampled monotone map: `xs` strictly increasing, `ys` non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct LutTable {
    /// Time argument the map was sampled at, in seconds.
    pub time_s: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub kind: LutKind,
    /// Digest of the parameter set the table was built from.
    pub digest: u64,
}

impl LutTable {
    pub fn new(
        time_s: f64,
        xs: Vec<f64>,
        ys: Vec<f64>,
        kind: LutKind,
        digest: u64,
    ) -> Result<Self, LutError> {
        if xs.is_empty() {
            return Err(LutError::Empty);
        }
        if xs.len() != ys.len() {
            return Err(LutError::LengthMismatch {
                xs: xs.len(),
                ys: ys.len(),
            });
        }
        for (i, v) in xs.iter().chain(ys.iter()).enumerate() {
            if !v.is_finite() {
                return Err(LutError::NonFinite(i % xs.len()));
            }
        }
        for i in 1..xs.len() {
            if xs[i] <= xs[i - 1] {
                return Err(LutError::NonMonotonicX {
                    index: i,
                    x0: xs[i - 1],
                    x1: xs[i],
                });
            }
            if ys[i] < ys[i - 1] {
                return Err(LutError::NonMonotonicY {
                    x0: xs[i - 1],
                    x1: xs[i],
                    y0: ys[i - 1],
                    y1: ys[i],
                });
            }
        }
        Ok(LutTable {
            time_s,
            xs,
            ys,
            kind,
            digest,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Piecewise-linear forward evaluation, clamped to the table range.
    pub fn eval(&self, x: f64) -> f64 {
        let xs = &self.xs;
        let ys = &self.ys;
        if x <= xs[0] {
            return ys[0];
        }
        if x >= xs[xs.len() - 1] {
            return ys[ys.len() - 1];
        }
        let hi = xs.partition_point(|&v| v <= x);
        let lo = hi - 1;
        let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
        ys[lo] + t * (ys[hi] - ys[lo])
    }

    /// Piecewise-linear inverse evaluation, clamped to the table range.
    /// Values inside a flat run resolve to that run's knot.
    pub fn invert(&self, y: f64) -> f64 {
        let xs = &self.xs;
        let ys = &self.ys;
        if y <= ys[0] {
            return xs[0];
        }
        if y >= ys[ys.len() - 1] {
            // Clamp to the first knot that already attains the maximum.
            let first_max = ys.partition_point(|&v| v < ys[ys.len() - 1]);
            return xs[first_max.min(xs.len() - 1)];
        }
        let hi = ys.partition_point(|&v| v <= y);
        let lo = hi - 1;
        // ys[hi] > y >= ys[lo], so the segment is strictly rising.
        let t = (y - ys[lo]) / (ys[hi] - ys[lo]);
        xs[lo] + t * (xs[hi] - xs[lo])
    }

    /// The same map with input and output roles swapped. Requires strictly
    /// increasing outputs.
    pub fn inverted(&self) -> Result<LutTable, LutError> {
        if self.ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LutError::Degenerate);
        }
        LutTable::new(
            self.time_s,
            self.ys.clone(),
            self.xs.clone(),
            match self.kind {
                LutKind::Forward => LutKind::Inverse,
                LutKind::Inverse => LutKind::Forward,
            },
            self.digest,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# time_s={:e}\n", self.time_s));
        out.push_str(&format!(
            "# kind={}\n",
            match self.kind {
                LutKind::Forward => "forward",
                LutKind::Inverse => "inverse",
            }
        ));
        out.push_str(&format!("# digest={:016x}\n", self.digest));
        out.push_str("x,y\n");
        for (x, y) in self.xs.iter().zip(&self.ys) {
            out.push_str(&format!("{x:e},{y:e}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, LutError> {
        let mut time_s = None;
        let mut kind = None;
        let mut digest = None;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line == "x,y" {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("time_s=") {
                    time_s = Some(v.parse().map_err(|_| {
                        LutError::Parse(format!("bad time_s value {v:?}"))
                    })?);
                } else if let Some(v) = rest.strip_prefix("kind=") {
                    kind = Some(match v {
                        "forward" => LutKind::Forward,
                        "inverse" => LutKind::Inverse,
                        other => {
                            return Err(LutError::Parse(format!("unknown kind {other:?}")))
                        }
                    });
                } else if let Some(v) = rest.strip_prefix("digest=") {
                    digest = Some(u64::from_str_radix(v, 16).map_err(|_| {
                        LutError::Parse(format!("bad digest value {v:?}"))
                    })?);
                }
                continue;
            }
            let (x, y) = line
                .split_once(',')
                .ok_or_else(|| LutError::Parse(format!("bad row {line:?}")))?;
            xs.push(
                x.trim()
                    .parse()
                    .map_err(|_| LutError::Parse(format!("bad x value {x:?}")))?,
            );
            ys.push(
                y.trim()
                    .parse()
                    .map_err(|_| LutError::Parse(format!("bad y value {y:?}")))?,
            );
        }
        LutTable::new(
            time_s.ok_or_else(|| LutError::Parse("missing time_s header".into()))?,
            xs,
            ys,
            kind.ok_or_else(|| LutError::Parse("missing kind header".into()))?,
            digest.ok_or_else(|| LutError::Parse("missing digest header".into()))?,
        )
    }

    const BINARY_MAGIC: &'static [u8; 4] = b"RLUT";

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 2 + 1 + 8 + 8 + 4 + 16 * self.len());
        out.extend_from_slice(Self::BINARY_MAGIC);
        out.extend_from_slice(&1u16.to_le_bytes());
        out.push(match self.kind {
            LutKind::Forward => 0,
            LutKind::Inverse => 1,
        });
        out.extend_from_slice(&self.time_s.to_le_bytes());
        out.extend_from_slice(&self.digest.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for x in &self.xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for y in &self.ys {
            out.extend_from_slice(&y.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LutError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != &Self::BINARY_MAGIC[..] {
            return Err(LutError::Parse("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != 1 {
            return Err(LutError::Parse(format!("unsupported version {version}")));
        }
        let kind = match r.take(1)?[0] {
            0 => LutKind::Forward,
            1 => LutKind::Inverse,
            other => return Err(LutError::Parse(format!("unknown kind byte {other}"))),
        };
        let time_s = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let digest = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let mut xs = Vec::with_capacity(len);
        let mut ys = Vec::with_capacity(len);
        for _ in 0..len {
            xs.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        for _ in 0..len {
            ys.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        if r.pos != bytes.len() {
            return Err(LutError::Parse("trailing bytes".into()));
        }
        LutTable::new(time_s, xs, ys, kind, digest)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LutError> {
        if self.pos + n > self.bytes.len() {
            return Err(LutError::Parse("truncated table".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> LutTable {
        LutTable::new(
            5e-3,
            vec![0.0, 1.0, 2.0, 4.0],
            vec![1.0, 3.0, 3.5, 9.0],
            LutKind::Forward,
            0xabc,
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(matches!(
            LutTable::new(0.0, vec![], vec![], LutKind::Forward, 0),
            Err(LutError::Empty)
        ));
        assert!(matches!(
            LutTable::new(0.0, vec![0.0, 0.0], vec![1.0, 2.0], LutKind::Forward, 0),
            Err(LutError::NonMonotonicX { .. })
        ));
        assert!(matches!(
            LutTable::new(0.0, vec![0.0, 1.0], vec![2.0, 1.0], LutKind::Forward, 0),
            Err(LutError::NonMonotonicY { .. })
        ));
        assert!(matches!(
            LutTable::new(0.0, vec![0.0, 1.0], vec![2.0], LutKind::Forward, 0),
            Err(LutError::LengthMismatch { .. })
        ));
        assert!(matches!(
            LutTable::new(0.0, vec![0.0, f64::NAN], vec![1.0, 2.0], LutKind::Forward, 0),
            Err(LutError::NonFinite(_))
        ));
    }

    #[test]
    fn eval_interpolates_and_clamps() {
        let t = table();
        assert_eq!(t.eval(-1.0), 1.0);
        assert_eq!(t.eval(0.0), 1.0);
        assert_eq!(t.eval(0.5), 2.0);
        assert_eq!(t.eval(3.0), 6.25);
        assert_eq!(t.eval(100.0), 9.0);
    }

    #[test]
    fn invert_hits_knots_and_clamps() {
        let t = table();
        for (i, &y) in t.ys.iter().enumerate() {
            assert_eq!(t.invert(y), t.xs[i], "knot {i}");
        }
        assert_eq!(t.invert(0.0), 0.0); // below range clamps to xs[0]
        assert_eq!(t.invert(100.0), 4.0);
        assert!((t.invert(2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn roundtrip_error_is_at_most_one_grid_step() {
        let t = table();
        for i in 0..1000 {
            let x = 4.0 * (i as f64) / 999.0;
            let back = t.invert(t.eval(x));
            let step = t
                .xs
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(0.0f64, f64::max);
            assert!((back - x).abs() <= step, "x={x} back={back}");
        }
    }

    #[test]
    fn csv_roundtrip_is_identical() {
        let t = table();
        let csv = t.to_csv();
        let parsed = LutTable::from_csv(&csv).unwrap();
        assert_eq!(parsed, t);
        assert_eq!(parsed.to_csv(), csv);
    }

    #[test]
    fn binary_roundtrip_is_identical() {
        let t = table();
        let bytes = t.to_bytes();
        let parsed = LutTable::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, t);
        assert!(LutTable::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(LutTable::from_bytes(&bad).is_err());
    }

    #[test]
    fn inverted_swaps_roles_for_strictly_increasing_tables() {
        let t = table();
        let inv = t.inverted().unwrap();
        assert_eq!(inv.kind, LutKind::Inverse);
        assert!((inv.eval(3.0) - 1.0).abs() < 1e-15);

        let flat = LutTable::new(
            0.0,
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 1.0],
            LutKind::Forward,
            0,
        )
        .unwrap();
        assert!(matches!(flat.inverted(), Err(LutError::Degenerate)));
    }
}
