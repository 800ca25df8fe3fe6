//! Discretized state and input spaces for the stochastic forward reachable set.
//!
//! Every axis node is a cell center whose cell extends half a step to either
//! side. The 4-D state grid is `(y1, y2, v1, v2)`: longitudinal and lateral
//! position followed by longitudinal and lateral velocity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniform axis `min, min + step, ..., max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AxisSpec", into = "AxisSpec")]
pub struct GridAxis {
    min: f64,
    max: f64,
    step: f64,
    count: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisSpec {
    min: f64,
    max: f64,
    step: f64,
}

impl TryFrom<AxisSpec> for GridAxis {
    type Error = Error;

    fn try_from(spec: AxisSpec) -> Result<Self> {
        GridAxis::new(spec.min, spec.max, spec.step)
    }
}

impl From<GridAxis> for AxisSpec {
    fn from(axis: GridAxis) -> Self {
        AxisSpec {
            min: axis.min,
            max: axis.max,
            step: axis.step,
        }
    }
}

impl GridAxis {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && step.is_finite()) {
            return Err(Error::NonFinite("grid axis"));
        }
        if step <= 0.0 {
            return Err(Error::InvalidAxis(format!("step must be positive, got {step}")));
        }
        if max <= min {
            return Err(Error::InvalidAxis(format!("max {max} must exceed min {min}")));
        }
        let count = ((max - min) / step).round() as usize + 1;
        let max = min + (count - 1) as f64 * step;
        Ok(Self { min, max, step, count })
    }

    /// Axis from its first node, spacing and node count.
    pub fn with_count(min: f64, step: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidAxis(format!("need at least two nodes, got {count}")));
        }
        Self::new(min, min + step * (count - 1) as f64, step)
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step
    }

    /// Nearest node to `x`, ties toward the lower index. `None` when `x` lies
    /// outside `[min - step/2, max + step/2]`.
    #[inline]
    pub fn nearest(&self, x: f64) -> Option<usize> {
        let half = 0.5 * self.step;
        let last = self.node(self.count - 1);
        if x < self.min - half || x > last + half {
            return None;
        }
        let r = (x - self.min) / self.step;
        let lower = r.floor();
        let idx = if r - lower > 0.5 { lower + 1.0 } else { lower };
        Some((idx.max(0.0) as usize).min(self.count - 1))
    }

    /// Lower node index and interpolation weight of the upper node, with `x`
    /// clamped into `[min, max]`.
    #[inline]
    pub fn bracket(&self, x: f64) -> (usize, f64) {
        let r = ((x - self.min) / self.step).clamp(0.0, (self.count - 1) as f64);
        let lo = (r.floor() as usize).min(self.count - 2);
        (lo, r - lo as f64)
    }
}

/// Linear index of a state-grid cell, or the absorbing out-of-domain bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellIndex {
    Cell(usize),
    OutOfDomain,
}

impl CellIndex {
    pub fn cell(self) -> Option<usize> {
        match self {
            CellIndex::Cell(i) => Some(i),
            CellIndex::OutOfDomain => None,
        }
    }
}

/// 4-D state grid over `(y1, y2, v1, v2)`; `y1` varies slowest in the linear
/// index and `v2` fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateGrid {
    pub y1: GridAxis,
    pub y2: GridAxis,
    pub v1: GridAxis,
    pub v2: GridAxis,
}

impl Default for StateGrid {
    fn default() -> Self {
        Self {
            y1: GridAxis::new(-4.0, 80.0, 2.0).unwrap(),
            y2: GridAxis::new(-4.0, 4.0, 1.0).unwrap(),
            v1: GridAxis::new(20.0, 40.0, 0.4).unwrap(),
            v2: GridAxis::new(-2.5, 2.5, 0.2).unwrap(),
        }
    }
}

impl StateGrid {
    pub fn axes(&self) -> [&GridAxis; 4] {
        [&self.y1, &self.y2, &self.v1, &self.v2]
    }

    pub fn counts(&self) -> [usize; 4] {
        [self.y1.count, self.y2.count, self.v1.count, self.v2.count]
    }

    pub fn len(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of velocity cells sharing one position cell.
    pub fn velocity_cells(&self) -> usize {
        self.v1.count * self.v2.count
    }

    #[inline]
    pub fn linear(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.y2.count + idx[1]) * self.v1.count + idx[2]) * self.v2.count + idx[3]
    }

    #[inline]
    pub fn unravel(&self, mut lin: usize) -> [usize; 4] {
        let i3 = lin % self.v2.count;
        lin /= self.v2.count;
        let i2 = lin % self.v1.count;
        lin /= self.v1.count;
        let i1 = lin % self.y2.count;
        [lin / self.y2.count, i1, i2, i3]
    }

    pub fn cell_center(&self, lin: usize) -> [f64; 4] {
        let [a, b, c, d] = self.unravel(lin);
        [self.y1.node(a), self.y2.node(b), self.v1.node(c), self.v2.node(d)]
    }

    /// Per-axis nearest indices; `None` if any component is out of its axis domain.
    pub fn axis_indices(&self, state: &[f64; 4]) -> Option<[usize; 4]> {
        Some([
            self.y1.nearest(state[0])?,
            self.y2.nearest(state[1])?,
            self.v1.nearest(state[2])?,
            self.v2.nearest(state[3])?,
        ])
    }

    pub fn index_of(&self, state: &[f64; 4]) -> Result<CellIndex> {
        if state.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(match self.axis_indices(state) {
            Some(idx) => CellIndex::Cell(self.linear(idx)),
            None => CellIndex::OutOfDomain,
        })
    }
}

/// Limits on the admissible accelerations of the surrounding vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConstraints {
    /// Bound on the Euclidean norm of `(a1, a2)` in m/s².
    pub max_accel: f64,
    /// Steering proxy: `|a2| <= v1 * max_yaw_rate` (rad/s).
    pub max_yaw_rate: f64,
}

impl Default for InputConstraints {
    fn default() -> Self {
        Self {
            max_accel: 5.0,
            max_yaw_rate: 0.15,
        }
    }
}

/// 2-D acceleration grid `(a1, a2)`; `a2` varies fastest in the input index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputGrid {
    pub a1: GridAxis,
    pub a2: GridAxis,
    /// Extend the outer boundary cells to infinity so tail mass lands in them.
    /// Off by default: closed cells keep the wide-spread limit uniform.
    #[serde(default)]
    pub open_tails: bool,
}

impl Default for InputGrid {
    fn default() -> Self {
        Self {
            a1: GridAxis::new(-5.0, 3.0, 1.0).unwrap(),
            a2: GridAxis::new(-1.5, 1.5, 0.5).unwrap(),
            open_tails: false,
        }
    }
}

/// Integration rectangle of one input cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBounds {
    pub a1: (f64, f64),
    pub a2: (f64, f64),
}

fn axis_bounds(axis: &GridAxis, i: usize, open: bool) -> (f64, f64) {
    let c = axis.node(i);
    let h = 0.5 * axis.step();
    let lo = if open && i == 0 { f64::NEG_INFINITY } else { c - h };
    let hi = if open && i + 1 == axis.count() {
        f64::INFINITY
    } else {
        c + h
    };
    (lo, hi)
}

impl InputGrid {
    pub fn len(&self) -> usize {
        self.a1.count() * self.a2.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.a2.count() + i2
    }

    pub fn split(&self, u: usize) -> (usize, usize) {
        (u / self.a2.count(), u % self.a2.count())
    }

    pub fn accel(&self, u: usize) -> [f64; 2] {
        let (i1, i2) = self.split(u);
        [self.a1.node(i1), self.a2.node(i2)]
    }

    pub fn bounds(&self, u: usize) -> CellBounds {
        let (i1, i2) = self.split(u);
        CellBounds {
            a1: axis_bounds(&self.a1, i1, self.open_tails),
            a2: axis_bounds(&self.a2, i2, self.open_tails),
        }
    }

    /// Input cell containing a continuous acceleration (nearest node, clamped
    /// into the grid so tail observations land in the boundary cells).
    pub fn snap(&self, accel: [f64; 2]) -> Result<usize> {
        if !(accel[0].is_finite() && accel[1].is_finite()) {
            return Err(Error::NonFinite("acceleration"));
        }
        let clamp = |axis: &GridAxis, x: f64| axis.nearest(x.clamp(axis.min(), axis.node(axis.count() - 1))).unwrap();
        Ok(self.index(clamp(&self.a1, accel[0]), clamp(&self.a2, accel[1])))
    }

    /// Whether input cell `u` satisfies the magnitude, forward-motion and
    /// steering constraints at longitudinal speed `v1`.
    pub fn is_admissible(&self, u: usize, v1: f64, limits: &InputConstraints, dt: f64, v1_floor: f64) -> bool {
        let [a1, a2] = self.accel(u);
        a1.hypot(a2) <= limits.max_accel + 1e-12
            && v1 + a1 * dt >= v1_floor - 1e-12
            && a2.abs() <= v1 * limits.max_yaw_rate + 1e-12
    }

    /// Admissible input cells for a state `(y1, y2, v1, v2)`. `v1_floor` is the
    /// lower bound of the state grid's longitudinal-velocity axis.
    pub fn admissible_inputs(&self, state: &[f64; 4], limits: &InputConstraints, dt: f64, v1_floor: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&u| self.is_admissible(u, state[2], limits, dt, v1_floor))
            .collect()
    }

    /// Rejects constraint sets that leave some in-domain state without inputs.
    pub fn validate_constraints(&self, grid: &StateGrid, limits: &InputConstraints, dt: f64) -> Result<()> {
        if !(limits.max_accel > 0.0 && limits.max_yaw_rate > 0.0) {
            return Err(Error::Config("input limits must be positive".into()));
        }
        let floor = grid.v1.min();
        let half = 0.5 * grid.v1.step();
        let speeds = (0..grid.v1.count())
            .map(|i| grid.v1.node(i))
            .chain([floor - half, grid.v1.max() + half]);
        for v1 in speeds {
            let any = (0..self.len()).any(|u| self.is_admissible(u, v1, limits, dt, floor));
            if !any {
                return Err(Error::Config(format!(
                    "no admissible input at longitudinal speed {v1} m/s"
                )));
            }
        }
        Ok(())
    }
}
