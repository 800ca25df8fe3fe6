//! Vehicle motion models.
//!
//! The forward reachable set uses a planar point mass driven by 2-D
//! acceleration. The backward reachable set uses a 5-D relative system built
//! from a kinematic bicycle (ego) and a unicycle (surrounding vehicle). The
//! two control sets are tied together by mapping the point-mass acceleration
//! box onto bicycle/unicycle input intervals.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PointMassState {
    pub y1: f64,
    pub y2: f64,
    pub v1: f64,
    pub v2: f64,
}

impl PointMassState {
    pub fn new(y1: f64, y2: f64, v1: f64, v2: f64) -> Self {
        Self { y1, y2, v1, v2 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.y1, self.y2, self.v1, self.v2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|x| x.is_finite())
    }
}

/// One step of trapezoidal point-mass propagation:
/// `v' = v + a dt`, `y' = y + (v + v') dt / 2` on each axis.
#[inline]
pub fn step_point_mass(s: PointMassState, accel: [f64; 2], dt: f64) -> PointMassState {
    let v1 = s.v1 + accel[0] * dt;
    let v2 = s.v2 + accel[1] * dt;
    PointMassState {
        y1: s.y1 + (v1 + s.v1) * dt / 2.0,
        y2: s.y2 + (v2 + s.v2) * dt / 2.0,
        v1,
        v2,
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleGeometry {
    pub length: f64,
    pub width: f64,
    /// Front axle to reference point (m).
    pub lf: f64,
    /// Rear axle to reference point (m).
    pub lr: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        Self {
            length: 4.0,
            width: 2.0,
            lf: 1.058,
            lr: 1.738,
        }
    }
}

impl VehicleGeometry {
    pub fn validate(&self) -> Result<()> {
        if [self.length, self.width, self.lf, self.lr].iter().all(|x| *x > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("vehicle geometry must be positive".into()))
        }
    }
}

/// Relative state of the surrounding vehicle expressed in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    pub y1: f64,
    pub y2: f64,
    pub psi: f64,
    pub v_ego: f64,
    pub v_s: f64,
}

impl RelativeState {
    pub fn new(y1: f64, y2: f64, psi: f64, v_ego: f64, v_s: f64) -> Self {
        Self {
            y1,
            y2,
            psi: wrap_angle(psi),
            v_ego,
            v_s,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.y1, self.y2, self.psi, self.v_ego, self.v_s]
    }

    /// Relative state of two point-mass vehicles, with heading taken from each
    /// velocity vector.
    pub fn from_point_masses(ego: &PointMassState, sur: &PointMassState) -> Self {
        let psi_e = ego.v2.atan2(ego.v1);
        let psi_s = sur.v2.atan2(sur.v1);
        let (s, c) = psi_e.sin_cos();
        let dx = sur.y1 - ego.y1;
        let dy = sur.y2 - ego.y2;
        Self::new(
            c * dx + s * dy,
            -s * dx + c * dy,
            psi_s - psi_e,
            ego.v1.hypot(ego.v2),
            sur.v1.hypot(sur.v2),
        )
    }
}

/// Time derivative of the relative state under ego input `(a_ego, beta_ego)`
/// and surrounding input `(a_s, omega_s)`.
#[inline]
pub fn relative_deriv(x: &RelativeState, ego: (f64, f64), sur: (f64, f64), geom: &VehicleGeometry) -> [f64; 5] {
    let (a_ego, beta) = ego;
    let (a_s, omega) = sur;
    let (sb, cb) = beta.sin_cos();
    let (sp, cp) = x.psi.sin_cos();
    let yaw = x.v_ego / geom.lr * sb;
    [
        yaw * x.y2 + x.v_s * cp - x.v_ego * cb,
        -yaw * x.y1 + x.v_s * sp - x.v_ego * sb,
        omega - yaw,
        a_ego,
        a_s,
    ]
}

/// Kinematic-bicycle slip angle for front steering angle `delta_f`.
pub fn slip_angle(delta_f: f64, geom: &VehicleGeometry) -> f64 {
    (geom.lr / (geom.lf + geom.lr) * delta_f.tan()).atan()
}

/// Global-frame acceleration produced by body-frame `(a_x, a_y)` at yaw `psi`
/// with body velocities `(x_dot, y_dot)`.
pub fn accel_body_to_global(a_x: f64, a_y: f64, psi: f64, x_dot: f64, y_dot: f64) -> Result<(f64, f64)> {
    if x_dot <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "longitudinal speed must be positive, got {x_dot}"
        )));
    }
    let (s, c) = psi.sin_cos();
    let r = y_dot / x_dot;
    let xdd = a_x * c - 2.0 * a_y * s - r * a_y * c;
    let ydd = a_x * s + 2.0 * a_y * c - r * a_y * s;
    Ok((xdd, ydd))
}

/// Inverse of [`accel_body_to_global`].
pub fn accel_global_to_body(xdd: f64, ydd: f64, psi: f64, x_dot: f64, y_dot: f64) -> Result<(f64, f64)> {
    if x_dot <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "longitudinal speed must be positive, got {x_dot}"
        )));
    }
    let (s, c) = psi.sin_cos();
    let a_y = 0.5 * (ydd * c - xdd * s);
    let a_x = y_dot / x_dot * a_y + (xdd * c + ydd * s);
    Ok((a_x, a_y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// The interval bound that minimizes `coef * x`.
    #[inline]
    pub fn argmin_linear(&self, coef: f64) -> f64 {
        if coef >= 0.0 {
            self.lo
        } else {
            self.hi
        }
    }

    #[inline]
    pub fn argmax_linear(&self, coef: f64) -> f64 {
        if coef >= 0.0 {
            self.hi
        } else {
            self.lo
        }
    }

    /// Point closest to zero.
    fn closest_to_zero(&self) -> f64 {
        0.0f64.clamp(self.lo, self.hi)
    }
}

/// Point-mass control and speed ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputRanges {
    pub accel_x: Interval,
    pub accel_y: Interval,
    pub speed_x: Interval,
    pub speed_y: Interval,
}

impl Default for InputRanges {
    fn default() -> Self {
        Self {
            accel_x: Interval::new(-5.0, 3.0),
            accel_y: Interval::new(-1.5, 1.5),
            speed_x: Interval::new(20.0, 40.0),
            speed_y: Interval::new(-1.5, 1.5),
        }
    }
}

/// Bicycle/unicycle input intervals equivalent to a point-mass box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedRanges {
    pub ego_accel: Interval,
    pub ego_slip: Interval,
    pub sur_accel: Interval,
    pub sur_yaw_rate: Interval,
}

/// Maps the point-mass acceleration/speed box onto bicycle and unicycle inputs.
///
/// The resultant acceleration carries the sign of its longitudinal component.
/// Yaw rate follows `a_y = psi_dot * x_dot`, and the bicycle yaw relation
/// `psi_dot = v / l_r * sin(beta)` then bounds the slip angle.
pub fn derive_input_ranges(pm: &InputRanges, geom: &VehicleGeometry) -> Result<DerivedRanges> {
    for iv in [pm.accel_x, pm.accel_y, pm.speed_x, pm.speed_y] {
        if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo <= iv.hi) {
            return Err(Error::Config("point-mass ranges must be finite and ordered".into()));
        }
    }
    if pm.speed_x.lo <= 0.0 {
        return Err(Error::Config("longitudinal speed range must be positive".into()));
    }
    let ay_candidates = [pm.accel_y.lo, pm.accel_y.hi, pm.accel_y.closest_to_zero()];
    let signed = |ax: f64, ay: f64| {
        let m = ax.hypot(ay);
        if ax < 0.0 {
            -m
        } else {
            m
        }
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for ax in [pm.accel_x.lo, pm.accel_x.hi, pm.accel_x.closest_to_zero()] {
        for ay in ay_candidates {
            let a = signed(ax, ay);
            lo = lo.min(a);
            hi = hi.max(a);
        }
    }
    let accel = Interval::new(lo, hi);

    let mut w_lo = f64::INFINITY;
    let mut w_hi = f64::NEG_INFINITY;
    for ay in [pm.accel_y.lo, pm.accel_y.hi] {
        for vx in [pm.speed_x.lo, pm.speed_x.hi] {
            w_lo = w_lo.min(ay / vx);
            w_hi = w_hi.max(ay / vx);
        }
    }

    let vx_min = pm.speed_x.lo;
    let v_min = vx_min.hypot(pm.speed_y.closest_to_zero());
    let slip = |ay: f64| -> Result<f64> {
        let s = ay * geom.lr / (vx_min * v_min);
        if s.abs() > 1.0 {
            return Err(Error::Config(format!("slip relation infeasible (sin beta = {s})")));
        }
        Ok(s.asin())
    };
    Ok(DerivedRanges {
        ego_accel: accel,
        ego_slip: Interval::new(slip(pm.accel_y.lo)?, slip(pm.accel_y.hi)?),
        sur_accel: accel,
        sur_yaw_rate: Interval::new(w_lo, w_hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn point_mass_examples() {
        let s = step_point_mass(PointMassState::new(0.0, 0.0, 30.0, 0.0), [0.0, 0.0], 0.4);
        assert_eq!(s, PointMassState::new(12.0, 0.0, 30.0, 0.0));
        let s = step_point_mass(PointMassState::new(0.0, 0.0, 30.0, 0.0), [1.0, 0.0], 0.4);
        assert!(close(s.v1, 30.4, 1e-12) && close(s.y1, 12.08, 1e-12));
        let s = step_point_mass(PointMassState::new(0.0, 0.0, 25.0, 0.0), [0.0, 0.5], 0.4);
        assert!(close(s.v2, 0.2, 1e-12) && close(s.y2, 0.04, 1e-12));
    }

    #[test]
    fn relative_deriv_examples() {
        let g = VehicleGeometry::default();
        let x = RelativeState::new(5.0, 1.0, 0.0, 30.0, 28.0);
        let d = relative_deriv(&x, (1.0, 0.0), (-1.0, 0.0), &g);
        assert_eq!(d, [-2.0, 0.0, 0.0, 1.0, -1.0]);

        let x = RelativeState::new(0.0, 2.0, 0.1, 30.0, 28.0);
        let d = relative_deriv(&x, (0.0, 0.01), (0.0, 0.0), &g);
        let expected = 30.0 / 1.738 * 0.01f64.sin() * 2.0 + 28.0 * 0.1f64.cos() - 30.0 * 0.01f64.cos();
        assert!(close(d[0], expected, 1e-12));
        // -1.794 when each term is rounded to three decimals
        assert!(close(d[0], -1.794, 1e-3));
    }

    #[test]
    fn identical_vehicles_have_no_relative_motion() {
        let g = VehicleGeometry::default();
        let x = RelativeState::new(12.0, -1.0, 0.0, 27.0, 27.0);
        let d = relative_deriv(&x, (0.5, 0.0), (0.5, 0.0), &g);
        assert_eq!(&d[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn slip_angle_examples() {
        let g = VehicleGeometry::default();
        assert_eq!(slip_angle(0.0, &g), 0.0);
        let b = slip_angle(0.1, &g);
        assert!(close(b, (1.738 / 2.796 * 0.1f64.tan()).atan(), 1e-15));
        assert!(close(b, 0.0623, 1e-4));
        assert_eq!(slip_angle(-0.3, &g), -slip_angle(0.3, &g));
    }

    #[test]
    fn accel_transform_examples() {
        let (ax, ay) = accel_global_to_body(2.0, 1.0, 0.0, 30.0, 0.0).unwrap();
        assert!(close(ay, 0.5, 1e-15) && close(ax, 2.0, 1e-15));
        let (ax, ay) = accel_global_to_body(0.0, 0.0, 1.3, 25.0, 0.7).unwrap();
        assert_eq!((ax, ay), (0.0, 0.0));
        assert!(accel_global_to_body(1.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn derived_ranges() {
        let r = derive_input_ranges(&InputRanges::default(), &VehicleGeometry::default()).unwrap();
        assert!(close(r.sur_yaw_rate.hi, 0.075, 1e-15));
        assert!(close(r.sur_yaw_rate.lo, -0.075, 1e-15));
        assert!(close(r.sur_accel.lo, -(25.0f64 + 2.25).sqrt(), 1e-12));
        assert!(close(-r.sur_accel.lo, 5.22, 5e-3));
        assert!(close(r.sur_accel.hi, (9.0f64 + 2.25).sqrt(), 1e-12));
        assert_eq!(r.ego_accel, r.sur_accel);
        assert!(close(r.ego_slip.hi, (1.5 * 1.738 / 400.0f64).asin(), 1e-15));
        assert_eq!(r.ego_slip.lo, -r.ego_slip.hi);
    }

    #[test]
    fn degenerate_box_gives_zero_ranges() {
        let zero = Interval::new(0.0, 0.0);
        let pm = InputRanges {
            accel_x: zero,
            accel_y: zero,
            ..Default::default()
        };
        let r = derive_input_ranges(&pm, &VehicleGeometry::default()).unwrap();
        for iv in [r.ego_accel, r.ego_slip, r.sur_accel, r.sur_yaw_rate] {
            assert_eq!((iv.lo, iv.hi), (0.0, 0.0));
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!(close(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, 1e-12));
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    proptest! {
        #[test]
        fn accel_transform_roundtrip(
            ax in -6.0f64..6.0, ay in -3.0f64..3.0, psi in -PI..PI,
            xd in 20.0f64..40.0, yd in -1.5f64..1.5,
        ) {
            let (xdd, ydd) = accel_body_to_global(ax, ay, psi, xd, yd).unwrap();
            let (bx, by) = accel_global_to_body(xdd, ydd, psi, xd, yd).unwrap();
            prop_assert!(close(bx, ax, 1e-10) && close(by, ay, 1e-10));
        }

        #[test]
        fn point_mass_kinematic_identity(
            y1 in -10.0f64..10.0, y2 in -4.0f64..4.0, v1 in 0.0f64..40.0, v2 in -2.0f64..2.0,
            a1 in -5.0f64..3.0, a2 in -1.5f64..1.5, dt in 0.01f64..1.0,
        ) {
            let s = PointMassState::new(y1, y2, v1, v2);
            let n = step_point_mass(s, [a1, a2], dt);
            prop_assert!(close(n.y1 - s.y1, (s.v1 + n.v1) * dt / 2.0, 1e-12));
            prop_assert!(close(n.y2 - s.y2, (s.v2 + n.v2) * dt / 2.0, 1e-12));
        }
    }
}
