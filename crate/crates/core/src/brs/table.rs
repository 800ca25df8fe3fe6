//! Cached value function with multilinear lookup and a binary file format.
//!
//! Layout (little-endian): magic `BRS1`, format version `u32`, axis count
//! `u32`, per axis `{min f64, step f64, count u32}`, horizon `f64`, then one
//! `f32` per node in row-major order over `(y1, y2, psi, v_ego, v_s)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dynamics::RelativeState;
use crate::error::{Error, Result};
use crate::grid::GridAxis;

use super::SolveStats;

pub const MAGIC: &[u8; 4] = b"BRS1";
pub const FORMAT_VERSION: u32 = 1;
const AXES: usize = 5;
const AXIS_BYTES: usize = 8 + 8 + 4;
const HEADER_BYTES: usize = 4 + 4 + 4 + AXES * AXIS_BYTES + 8;

/// Interpolated value and whether the query had to be clamped into the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub value: f64,
    /// Clamped on any face.
    pub clamped: bool,
    /// Clamped only because `y1` lies beyond the far (maximum) face.
    pub beyond_far_y1: bool,
}

#[derive(Debug, Clone)]
pub struct ValueTable {
    axes: [GridAxis; AXES],
    horizon: f64,
    values: Vec<f32>,
    pub stats: SolveStats,
}

impl PartialEq for ValueTable {
    /// Equal axes, horizon and bit-identical values.
    fn eq(&self, other: &Self) -> bool {
        self.axes == other.axes
            && self.horizon.to_bits() == other.horizon.to_bits()
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ValueTable {
    pub fn new(axes: [GridAxis; AXES], horizon: f64, values: Vec<f32>, stats: SolveStats) -> Result<Self> {
        let n: usize = axes.iter().map(|a| a.count()).product();
        if values.len() != n {
            return Err(Error::Format(format!("expected {n} values, got {}", values.len())));
        }
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(Error::Format(format!("invalid horizon {horizon}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("value table"));
        }
        Ok(Self {
            axes,
            horizon,
            values,
            stats,
        })
    }

    pub fn from_f64(axes: [GridAxis; AXES], horizon: f64, values: &[f64], stats: SolveStats) -> Result<Self> {
        Self::new(axes, horizon, values.iter().map(|&v| v as f32).collect(), stats)
    }

    pub fn axes(&self) -> &[GridAxis; AXES] {
        &self.axes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn linear(&self, idx: [usize; AXES]) -> usize {
        let mut n = 0;
        for (i, a) in idx.iter().zip(&self.axes) {
            n = n * a.count() + i;
        }
        n
    }

    pub fn node(&self, idx: [usize; AXES]) -> [f64; AXES] {
        std::array::from_fn(|i| self.axes[i].node(idx[i]))
    }

    pub fn value_at(&self, idx: [usize; AXES]) -> f32 {
        self.values[self.linear(idx)]
    }

    /// Multilinear interpolation; out-of-grid coordinates are clamped to the
    /// nearest face and flagged.
    pub fn lookup(&self, x: &RelativeState) -> Lookup {
        let q = x.as_array();
        let mut lo = [0usize; AXES];
        let mut w = [0.0f64; AXES];
        let mut clamped = false;
        let mut other_clamp = false;
        for i in 0..AXES {
            let a = &self.axes[i];
            let tol = 1e-9 * a.step();
            let below = q[i] < a.min() - tol;
            let above = q[i] > a.max() + tol;
            if below || above {
                clamped = true;
                if !(i == 0 && above) {
                    other_clamp = true;
                }
            }
            (lo[i], w[i]) = a.bracket(q[i]);
        }
        let mut value = 0.0;
        for corner in 0..(1usize << AXES) {
            let mut weight = 1.0;
            let mut idx = lo;
            for i in 0..AXES {
                if corner >> i & 1 == 1 {
                    weight *= w[i];
                    idx[i] += 1;
                } else {
                    weight *= 1.0 - w[i];
                }
            }
            if weight != 0.0 {
                value += weight * self.value_at(idx) as f64;
            }
        }
        if clamped {
            log::debug!("value lookup clamped at {q:?}");
        }
        Lookup {
            value,
            clamped,
            beyond_far_y1: clamped && !other_clamp,
        }
    }

    /// Inside the (closed) zero sublevel set.
    pub fn is_unsafe(&self, x: &RelativeState) -> bool {
        self.lookup(x).value <= 0.0
    }

    pub fn byte_len(&self) -> usize {
        HEADER_BYTES + 4 * self.values.len()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(AXES as u32).to_le_bytes())?;
        for a in &self.axes {
            w.write_all(&a.min().to_le_bytes())?;
            w.write_all(&a.step().to_le_bytes())?;
            w.write_all(&(a.count() as u32).to_le_bytes())?;
        }
        w.write_all(&self.horizon.to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * self.values.len());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_BYTES];
        r.read_exact(&mut header)
            .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
        if &header[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let naxes = u32_at(8) as usize;
        if naxes != AXES {
            return Err(Error::Format(format!("expected {AXES} axes, found {naxes}")));
        }
        let mut axes = [GridAxis::with_count(0.0, 1.0, 2)?; AXES];
        for (i, axis) in axes.iter_mut().enumerate() {
            let o = 12 + i * AXIS_BYTES;
            let (min, step, count) = (f64_at(o), f64_at(o + 8), u32_at(o + 16) as usize);
            *axis = GridAxis::with_count(min, step, count).map_err(|e| Error::Format(format!("axis {i}: {e}")))?;
        }
        let horizon = f64_at(12 + AXES * AXIS_BYTES);
        let n = axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.count()))
            .ok_or_else(|| Error::Format("node count overflows".into()))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 4 * n {
            return Err(Error::Format(format!(
                "expected {} value bytes, found {}",
                4 * n,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(axes, horizon, values, SolveStats::default())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Node values on the `(y1, y2)` plane at the grid nodes nearest to the
    /// given heading and speeds, as `(y1, y2, value)`.
    pub fn slice(&self, psi: f64, v_ego: f64, v_s: f64) -> Result<Vec<(f64, f64, f32)>> {
        let pick = |i: usize, x: f64| {
            self.axes[i]
                .nearest(x)
                .ok_or_else(|| Error::InvalidArgument(format!("slice coordinate {x} outside axis {i}")))
        };
        let (k, l, m) = (pick(2, psi)?, pick(3, v_ego)?, pick(4, v_s)?);
        let mut out = Vec::with_capacity(self.axes[0].count() * self.axes[1].count());
        for i in 0..self.axes[0].count() {
            for j in 0..self.axes[1].count() {
                out.push((
                    self.axes[0].node(i),
                    self.axes[1].node(j),
                    self.value_at([i, j, k, l, m]),
                ));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ValueTable {
        let axes = [
            GridAxis::new(0.0, 2.0, 1.0).unwrap(),
            GridAxis::new(-1.0, 1.0, 1.0).unwrap(),
            GridAxis::new(-0.5, 0.5, 0.5).unwrap(),
            GridAxis::new(20.0, 22.0, 2.0).unwrap(),
            GridAxis::new(20.0, 22.0, 2.0).unwrap(),
        ];
        let n: usize = axes.iter().map(|a| a.count()).product();
        let values = (0..n).map(|i| i as f32 * 0.5 - 3.0).collect();
        ValueTable::new(axes, 2.0, values, SolveStats::default()).unwrap()
    }

    #[test]
    fn lookup_at_nodes_and_midpoints() {
        let t = small();
        let idx = [1, 2, 0, 1, 0];
        let x = t.node(idx);
        let q = RelativeState::new(x[0], x[1], x[2], x[3], x[4]);
        let l = t.lookup(&q);
        assert_eq!(l.value, t.value_at(idx) as f64);
        assert!(!l.clamped);
        let mid = RelativeState::new(0.5, x[1], x[2], x[3], x[4]);
        let a = t.value_at([0, 2, 0, 1, 0]) as f64;
        let b = t.value_at([1, 2, 0, 1, 0]) as f64;
        assert!((t.lookup(&mid).value - 0.5 * (a + b)).abs() < 1e-12);
    }

    #[test]
    fn clamped_queries_flagged() {
        let t = small();
        let far = t.lookup(&RelativeState::new(5.0, 0.0, 0.0, 21.0, 21.0));
        assert!(far.clamped && far.beyond_far_y1);
        let side = t.lookup(&RelativeState::new(1.0, 3.0, 0.0, 21.0, 21.0));
        assert!(side.clamped && !side.beyond_far_y1);
        let both = t.lookup(&RelativeState::new(5.0, 3.0, 0.0, 21.0, 21.0));
        assert!(both.clamped && !both.beyond_far_y1);
    }

    #[test]
    fn unsafe_is_closed() {
        let axes = small().axes;
        let n: usize = axes.iter().map(|a| a.count()).product();
        let t = ValueTable::new(axes, 1.0, vec![0.0; n], SolveStats::default()).unwrap();
        assert!(t.is_unsafe(&RelativeState::new(1.0, 0.0, 0.0, 20.0, 20.0)));
    }

    #[test]
    fn round_trip_and_length() {
        let t = small();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), t.byte_len());
        assert_eq!(buf.len(), 4 + 4 + 4 + 5 * 20 + 8 + 4 * t.len());
        let back = ValueTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn corrupt_input_rejected() {
        let t = small();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(ValueTable::read_from(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(ValueTable::read_from(bad.as_slice()).is_err());
        assert!(ValueTable::read_from(&buf[..buf.len() - 1]).is_err());
        assert!(ValueTable::read_from(&buf[..10]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(ValueTable::read_from(long.as_slice()).is_err());
    }
}
