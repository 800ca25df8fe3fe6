//! Backward reachable set of the two-vehicle relative system.
//!
//! The value function is computed offline on a 5-D grid over
//! `(y1, y2, psi, v_ego, v_s)` and cached as a [`ValueTable`]; online queries
//! interpolate it. The surrounding vehicle acts adversarially and the ego
//! tries to avoid the collision box.

mod region;
mod solver;
mod table;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use region::{frs_unsafe, unsafe_region_frs, FrsUnsafeQuery};
pub use solver::{solve, solve_checkpoints, HjSystem, Snapshot, SolveStats, SolverConfig};
pub use table::{Lookup, ValueTable, FORMAT_VERSION, MAGIC};

use crate::dynamics::{derive_input_ranges, DerivedRanges, InputRanges, Interval, RelativeState, VehicleGeometry};
use crate::error::{Error, Result};
use crate::grid::GridAxis;

/// Axes of the relative-state grid; `psi` in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrsGrid {
    pub y1: GridAxis,
    pub y2: GridAxis,
    pub psi: GridAxis,
    pub v_ego: GridAxis,
    pub v_s: GridAxis,
}

impl BrsGrid {
    /// 101 x 21 x 11 x 21 x 21 nodes.
    pub fn full() -> Self {
        Self {
            y1: GridAxis::new(-10.0, 40.0, 0.5).unwrap(),
            y2: GridAxis::new(-4.0, 4.0, 0.4).unwrap(),
            psi: GridAxis::new(-PI / 4.0, PI / 4.0, PI / 20.0).unwrap(),
            v_ego: GridAxis::new(20.0, 40.0, 1.0).unwrap(),
            v_s: GridAxis::new(20.0, 40.0, 1.0).unwrap(),
        }
    }

    /// Roughly half the nodes per axis: 51 x 11 x 7 x 11 x 11.
    pub fn desk() -> Self {
        Self {
            y1: GridAxis::new(-10.0, 40.0, 1.0).unwrap(),
            y2: GridAxis::new(-4.0, 4.0, 0.8).unwrap(),
            psi: GridAxis::new(-PI / 4.0, PI / 4.0, PI / 12.0).unwrap(),
            v_ego: GridAxis::new(20.0, 40.0, 2.0).unwrap(),
            v_s: GridAxis::new(20.0, 40.0, 2.0).unwrap(),
        }
    }

    pub fn axes(&self) -> [GridAxis; 5] {
        [self.y1, self.y2, self.psi, self.v_ego, self.v_s]
    }

    pub fn from_axes(axes: [GridAxis; 5]) -> Self {
        let [y1, y2, psi, v_ego, v_s] = axes;
        Self {
            y1,
            y2,
            psi,
            v_ego,
            v_s,
        }
    }

    pub fn len(&self) -> usize {
        self.axes().iter().map(|a| a.count()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for BrsGrid {
    fn default() -> Self {
        Self::desk()
    }
}

/// Half-extents of the collision box between two vehicle footprints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionBox {
    pub half_length: f64,
    pub half_width: f64,
}

impl CollisionBox {
    pub fn from_geometry(ego: &VehicleGeometry, sur: &VehicleGeometry) -> Self {
        Self {
            half_length: 0.5 * (ego.length + sur.length),
            half_width: 0.5 * (ego.width + sur.width),
        }
    }

    /// Signed box distance `max(|y1| - L, |y2| - W)`.
    #[inline]
    pub fn distance(&self, y1: f64, y2: f64) -> f64 {
        (y1.abs() - self.half_length).max(y2.abs() - self.half_width)
    }
}

impl Default for CollisionBox {
    fn default() -> Self {
        let g = VehicleGeometry::default();
        Self::from_geometry(&g, &g)
    }
}

/// Signed distance of a relative state to the collision set.
pub fn target_distance(x: &RelativeState, collision: &CollisionBox) -> f64 {
    collision.distance(x.y1, x.y2)
}

/// Number of slip-angle samples used when maximizing over the ego input.
pub const SLIP_SAMPLES: usize = 5;

/// The 5-D relative system: kinematic-bicycle ego against a unicycle.
#[derive(Debug, Clone)]
pub struct RelativeSystem {
    geometry: VehicleGeometry,
    collision: CollisionBox,
    ranges: DerivedRanges,
    // (sin, cos) of the sampled slip angles
    slip: [(f64, f64); SLIP_SAMPLES],
}

impl RelativeSystem {
    pub fn new(geometry: VehicleGeometry, collision: CollisionBox, ranges: DerivedRanges) -> Result<Self> {
        geometry.validate()?;
        let b = ranges.ego_slip;
        let slip = std::array::from_fn(|i| {
            let beta = b.lo + (b.hi - b.lo) * i as f64 / (SLIP_SAMPLES - 1) as f64;
            beta.sin_cos()
        });
        Ok(Self {
            geometry,
            collision,
            ranges,
            slip,
        })
    }

    /// System with input ranges derived from the point-mass box.
    pub fn from_point_mass(pm: &InputRanges, geometry: VehicleGeometry) -> Result<Self> {
        let ranges = derive_input_ranges(pm, &geometry)?;
        Self::new(geometry, CollisionBox::from_geometry(&geometry, &geometry), ranges)
    }

    pub fn ranges(&self) -> &DerivedRanges {
        &self.ranges
    }

    pub fn slip_samples(&self) -> [f64; SLIP_SAMPLES] {
        self.slip.map(|(s, c)| s.atan2(c))
    }

    pub fn collision(&self) -> &CollisionBox {
        &self.collision
    }
}

impl HjSystem<5> for RelativeSystem {
    fn target(&self, x: &[f64; 5]) -> f64 {
        self.collision.distance(x[0], x[1])
    }

    fn hamiltonian(&self, x: &[f64; 5], q: &[f64; 5]) -> f64 {
        let [y1, y2, psi, ve, vs] = *x;
        let (sp, cp) = psi.sin_cos();
        let r = &self.ranges;
        let other = q[0] * vs * cp
            + q[1] * vs * sp
            + q[2] * r.sur_yaw_rate.argmin_linear(q[2])
            + q[4] * r.sur_accel.argmin_linear(q[4]);
        let mut ego = f64::NEG_INFINITY;
        for &(sb, cb) in &self.slip {
            let yaw = ve / self.geometry.lr * sb;
            let h = q[0] * (yaw * y2 - ve * cb) + q[1] * (-yaw * y1 - ve * sb) - q[2] * yaw;
            ego = ego.max(h);
        }
        other + ego + q[3] * r.ego_accel.argmax_linear(q[3])
    }

    fn partial_bounds(&self, x: &[f64; 5]) -> [f64; 5] {
        let [y1, y2, psi, ve, vs] = *x;
        let (sp, cp) = psi.sin_cos();
        let r = &self.ranges;
        let mut b = [0.0f64; 5];
        for &(sb, cb) in &self.slip {
            let yaw = ve / self.geometry.lr * sb;
            b[0] = b[0].max((yaw * y2 + vs * cp - ve * cb).abs());
            b[1] = b[1].max((-yaw * y1 + vs * sp - ve * sb).abs());
            for w in [r.sur_yaw_rate.lo, r.sur_yaw_rate.hi] {
                b[2] = b[2].max((w - yaw).abs());
            }
        }
        b[3] = r.ego_accel.lo.abs().max(r.ego_accel.hi.abs());
        b[4] = r.sur_accel.lo.abs().max(r.sur_accel.hi.abs());
        b
    }
}

/// Longitudinal-only pursuit on `(d, w)`: `d' = w`, `w' = a_s - a_ego`.
/// Used as a check against the closed-form constant-acceleration solution.
#[derive(Debug, Clone, Copy)]
pub struct LongitudinalPursuit {
    pub half_length: f64,
    pub ego_accel: Interval,
    pub sur_accel: Interval,
}

impl LongitudinalPursuit {
    /// Smallest unsafe gap at closing rate `w` over `horizon`: the worst case
    /// has the ego braking hardest while the other vehicle brakes hardest.
    pub fn analytic_boundary(&self, w: f64, horizon: f64) -> f64 {
        let a = self.sur_accel.lo - self.ego_accel.lo;
        let t = horizon;
        // d(t) - d0 = w t + a t^2 / 2 is concave here, so its minimum over
        // [0, T] sits at an endpoint.
        let reach = if a <= 0.0 {
            (w * t + 0.5 * a * t * t).min(0.0)
        } else {
            let t_min = (-w / a).clamp(0.0, t);
            (w * t_min + 0.5 * a * t_min * t_min).min(0.0)
        };
        self.half_length - reach
    }
}

impl HjSystem<2> for LongitudinalPursuit {
    fn target(&self, x: &[f64; 2]) -> f64 {
        x[0].abs() - self.half_length
    }

    fn hamiltonian(&self, x: &[f64; 2], q: &[f64; 2]) -> f64 {
        q[0] * x[1] + q[1] * self.sur_accel.argmin_linear(q[1]) - q[1] * self.ego_accel.argmin_linear(q[1])
    }

    fn partial_bounds(&self, x: &[f64; 2]) -> [f64; 2] {
        let r = (self.sur_accel.hi - self.ego_accel.lo)
            .abs()
            .max((self.sur_accel.lo - self.ego_accel.hi).abs());
        [x[1].abs(), r]
    }
}

/// Solves the relative system on `grid` and wraps the result as a table.
pub fn solve_table(system: &RelativeSystem, grid: &BrsGrid, config: &SolverConfig) -> Result<ValueTable> {
    let axes = grid.axes();
    let (values, stats) = solve(system, &axes, config)?;
    ValueTable::from_f64(axes, config.horizon, &values, stats)
}

/// Tables at several horizons from one integration.
pub fn solve_tables(system: &RelativeSystem, grid: &BrsGrid, cfl: f64, horizons: &[f64]) -> Result<Vec<ValueTable>> {
    let axes = grid.axes();
    let (snaps, stats) = solve_checkpoints(system, &axes, cfl, horizons)?;
    snaps
        .into_iter()
        .map(|s| {
            ValueTable::from_f64(
                axes,
                s.horizon,
                &s.values,
                SolveStats {
                    iterations: s.iterations,
                    ..stats
                },
            )
        })
        .collect()
}

/// Converts degrees to an angle axis in radians.
pub fn angle_axis_degrees(min: f64, max: f64, step: f64) -> Result<GridAxis> {
    if !(step > 0.0) {
        return Err(Error::InvalidAxis("angle step must be positive".into()));
    }
    GridAxis::new(min.to_radians(), max.to_radians(), step.to_radians())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::relative_deriv;

    fn system() -> RelativeSystem {
        RelativeSystem::from_point_mass(&InputRanges::default(), VehicleGeometry::default()).unwrap()
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(BrsGrid::full().len(), 10_288_971);
        let d = BrsGrid::desk();
        assert_eq!(d.axes().map(|a| a.count()), [51, 11, 7, 11, 11]);
        assert!(d.psi.nearest(0.0).map(|i| d.psi.node(i).abs() < 1e-12).unwrap());
    }

    #[test]
    fn target_examples() {
        let c = CollisionBox::default();
        let x = |y1, y2| RelativeState::new(y1, y2, 0.0, 30.0, 30.0);
        assert_eq!(target_distance(&x(0.0, 0.0), &c), -2.0);
        assert_eq!(target_distance(&x(4.0, 2.0), &c), 0.0);
        assert_eq!(target_distance(&x(10.0, 0.0), &c), 6.0);
    }

    #[test]
    fn hamiltonian_examples() {
        let s = system();
        let x = [5.0, 1.0, 0.1, 30.0, 28.0];
        assert_eq!(s.hamiltonian(&x, &[0.0; 5]), 0.0);
        let h = s.hamiltonian(&x, &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!((h - s.ranges().ego_accel.hi).abs() < 1e-12);
        let h = s.hamiltonian(&x, &[0.0, 0.0, 1.0, 0.0, 0.0]);
        let min_yaw: f64 = s
            .slip_samples()
            .iter()
            .map(|b| 30.0 / s.geometry.lr * b.sin())
            .fold(f64::INFINITY, f64::min);
        assert!((h - (-0.075 - min_yaw)).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_matches_enumeration() {
        let s = system();
        let g = VehicleGeometry::default();
        let r = *s.ranges();
        let pts = [[5.0, 1.0, 0.1, 30.0, 28.0], [-3.0, -2.5, -0.4, 22.0, 39.0]];
        let qs = [[0.3, -1.2, 0.7, -0.2, 0.9], [-1.0, 0.4, -0.3, 0.5, -0.6]];
        for x in pts {
            let rs = RelativeState::new(x[0], x[1], x[2], x[3], x[4]);
            for q in qs {
                let mut best = f64::NEG_INFINITY;
                for beta in s.slip_samples() {
                    for ae in [r.ego_accel.lo, r.ego_accel.hi] {
                        let mut worst = f64::INFINITY;
                        for a_s in [r.sur_accel.lo, r.sur_accel.hi] {
                            for w in [r.sur_yaw_rate.lo, r.sur_yaw_rate.hi] {
                                let f = relative_deriv(&rs, (ae, beta), (a_s, w), &g);
                                worst = worst.min((0..5).map(|i| q[i] * f[i]).sum());
                            }
                        }
                        best = best.max(worst);
                    }
                }
                assert!((s.hamiltonian(&x, &q) - best).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pursuit_boundary_formula() {
        let p = LongitudinalPursuit {
            half_length: 4.0,
            ego_accel: Interval::new(-3.0, 3.0),
            sur_accel: Interval::new(-6.0, 3.0),
        };
        assert_eq!(p.analytic_boundary(0.0, 2.0), 4.0 + 6.0);
        assert_eq!(p.analytic_boundary(10.0, 2.0), 4.0);
        assert_eq!(p.analytic_boundary(-2.0, 2.0), 4.0 + 4.0 + 6.0);
    }
}
