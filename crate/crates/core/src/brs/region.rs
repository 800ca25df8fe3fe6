//! Unsafe initial positions found by forward reachability of the point-mass
//! model, for comparison with the backward reachable set.

use serde::{Deserialize, Serialize};

use crate::dynamics::Interval;

use super::CollisionBox;

/// Relative motion setup: the ego keeps its speed, the other vehicle applies
/// any acceleration in the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrsUnsafeQuery {
    pub v_ego: f64,
    pub v_s: f64,
    /// Lateral speed of the other vehicle (m/s).
    pub lateral_speed: f64,
    /// Relative heading (rad).
    pub psi: f64,
    pub horizon: f64,
    pub accel_x: Interval,
    pub accel_y: Interval,
    pub sample_dt: f64,
    pub collision: CollisionBox,
}

impl FrsUnsafeQuery {
    pub fn new(v_ego: f64, v_s: f64, horizon: f64) -> Self {
        Self {
            v_ego,
            v_s,
            lateral_speed: 0.0,
            psi: 0.0,
            horizon,
            accel_x: Interval::new(-5.0, 3.0),
            accel_y: Interval::new(-1.5, 1.5),
            sample_dt: 0.01,
            collision: CollisionBox::default(),
        }
    }
}

/// Whether some admissible acceleration history brings the other vehicle,
/// starting at relative position `(y1, y2)`, into the collision box within
/// the horizon. Each axis's reachable interval at time `t` is
/// `p0 + v t + [a_lo, a_hi] t^2 / 2`.
pub fn frs_unsafe(y1: f64, y2: f64, q: &FrsUnsafeQuery) -> bool {
    let (sp, cp) = q.psi.sin_cos();
    let vx = q.v_s * cp - q.v_ego;
    let vy = q.v_s * sp + q.lateral_speed;
    let n = (q.horizon / q.sample_dt).round() as usize;
    let c = &q.collision;
    (0..=n).any(|k| {
        let t = (k as f64 * q.sample_dt).min(q.horizon);
        let h = 0.5 * t * t;
        let x = (y1 + vx * t + q.accel_x.lo * h, y1 + vx * t + q.accel_x.hi * h);
        let y = (y2 + vy * t + q.accel_y.lo * h, y2 + vy * t + q.accel_y.hi * h);
        x.0 <= c.half_length && x.1 >= -c.half_length && y.0 <= c.half_width && y.1 >= -c.half_width
    })
}

/// Unsafe flags for a list of relative positions `(y1, y2)`, considering
/// only positions ahead (`y1 >= 0`) and within `|y2| <= max_lateral`.
pub fn unsafe_region_frs(positions: &[(f64, f64)], max_lateral: f64, q: &FrsUnsafeQuery) -> Vec<(f64, f64, bool)> {
    positions
        .iter()
        .filter(|(y1, y2)| *y1 >= 0.0 && y2.abs() <= max_lateral)
        .map(|&(y1, y2)| (y1, y2, frs_unsafe(y1, y2, q)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inside_box_is_unsafe() {
        let q = FrsUnsafeQuery::new(30.0, 28.0, 2.0);
        assert!(frs_unsafe(1.0, 0.5, &q));
    }

    #[test]
    fn beyond_closing_distance_is_safe() {
        let q = FrsUnsafeQuery::new(30.0, 28.0, 2.0);
        let t = q.horizon;
        let reach = (q.v_ego - q.v_s) * t + 0.5 * 5.0 * t * t + 4.0;
        assert!(frs_unsafe(reach - 0.05, 0.0, &q));
        assert!(!frs_unsafe(reach + 0.05, 0.0, &q));
    }
}
