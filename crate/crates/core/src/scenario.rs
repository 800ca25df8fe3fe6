//! Cut-in scenarios: car-following longitudinal motion, a quintic lateral
//! lane change, crash detection, speed sweeps and the timeliness metric.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_point_mass, PointMassState, VehicleGeometry};
use crate::error::{Error, Result};
use crate::predictor::Maneuver;

/// Intelligent-driver-model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    /// Desired speed (m/s).
    pub v0: f64,
    /// Time headway (s).
    pub headway: f64,
    /// Minimum gap (m).
    pub s0: f64,
    /// Maximum acceleration (m/s²).
    pub accel: f64,
    /// Comfortable deceleration (m/s²).
    pub decel: f64,
    /// Acceleration floor (m/s², negative).
    pub min_accel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 36.1,
            headway: 0.8,
            s0: 6.0,
            accel: 1.0,
            decel: 1.0,
            min_accel: -8.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.v0, self.headway, self.s0, self.accel, self.decel];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config("IDM parameters must be positive".into()));
        }
        if !(self.min_accel.is_finite() && self.min_accel < 0.0) {
            return Err(Error::Config("IDM acceleration floor must be negative".into()));
        }
        Ok(())
    }
}

/// Leading vehicle as seen by the follower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// Approach rate `v - v_leader` (m/s).
    pub dv: f64,
    /// Bumper-to-bumper gap (m).
    pub gap: f64,
}

/// IDM acceleration at speed `v`; `None` means free road.
pub fn idm_accel(v: f64, leader: Option<Leader>, p: &IdmParams) -> Result<f64> {
    let free = 1.0 - (v / p.v0).powi(4);
    let interaction = match leader {
        None => 0.0,
        Some(l) => {
            if !(l.gap > 0.0) {
                return Err(Error::NonPositiveGap(l.gap));
            }
            let s_star = p.s0 + (v * p.headway + v * l.dv / (2.0 * (p.accel * p.decel).sqrt())).max(0.0);
            (s_star / l.gap).powi(2)
        }
    };
    Ok((p.accel * (free - interaction)).max(p.min_accel))
}

/// Quintic lane-change offset `(y2, v2, a2)` at `t` seconds after the start
/// of a maneuver of duration `d` covering lateral distance `w`.
pub fn lateral_profile(t: f64, d: f64, w: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= d {
        return (w, 0.0, 0.0);
    }
    let s = t / d;
    let (s2, s3) = (s * s, s * s * s);
    let y = w * (10.0 * s3 - 15.0 * s3 * s + 6.0 * s3 * s2);
    let v = w / d * (30.0 * s2 - 60.0 * s3 + 30.0 * s3 * s);
    let a = w / (d * d) * (60.0 * s - 180.0 * s2 + 120.0 * s3);
    (y, v, a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Initial ego speed; also the ego's desired speed (m/s).
    pub v_ego: f64,
    /// Initial surrounding-vehicle speed (m/s).
    pub v_sur: f64,
    /// Longitudinal center distance at `gap_time` (m).
    pub initial_gap: f64,
    pub gap_time: f64,
    /// Lane-change start (s).
    pub onset: f64,
    pub lc_duration: f64,
    pub lane_width: f64,
    /// Lane-change direction of the surrounding vehicle; `keep` disables it.
    pub maneuver: Maneuver,
    pub sim_dt: f64,
    pub duration: f64,
    /// Car-following parameters; `v0` is the surrounding vehicle's desired speed.
    pub idm: IdmParams,
    /// The ego follows the surrounding vehicle once their lateral offset is below this (m).
    pub follow_offset: f64,
    pub geometry: VehicleGeometry,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            v_ego: 30.0,
            v_sur: 25.0,
            initial_gap: 15.0,
            gap_time: 1.0,
            onset: 1.0,
            lc_duration: 7.5,
            lane_width: 3.75,
            maneuver: Maneuver::Left,
            sim_dt: 0.1,
            duration: 12.0,
            idm: IdmParams::default(),
            follow_offset: 1.875,
            geometry: VehicleGeometry::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn with_speeds(v_ego: f64, v_sur: f64) -> Self {
        Self {
            v_ego,
            v_sur,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.idm.validate()?;
        self.geometry.validate()?;
        let positive = [
            self.v_ego,
            self.v_sur,
            self.lc_duration,
            self.lane_width,
            self.sim_dt,
            self.duration,
            self.follow_offset,
        ];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config(
                "scenario speeds, durations and widths must be positive".into(),
            ));
        }
        if !(self.onset >= 0.0 && self.gap_time >= 0.0 && self.initial_gap.is_finite()) {
            return Err(Error::Config("scenario times must be non-negative".into()));
        }
        if self.gap_time > self.duration {
            return Err(Error::Config("gap time lies beyond the simulated duration".into()));
        }
        Ok(())
    }

    pub fn maneuver(&self) -> Maneuver {
        self.maneuver
    }

    fn ego_idm(&self) -> IdmParams {
        IdmParams {
            v0: self.v_ego,
            ..self.idm
        }
    }

    /// Surrounding-vehicle lateral `(y2, v2, a2)` at absolute time `t`.
    pub fn sur_lateral(&self, t: f64) -> (f64, f64, f64) {
        let w = self.lane_width;
        match self.maneuver {
            Maneuver::Keep => (-w, 0.0, 0.0),
            Maneuver::Left => {
                let (y, v, a) = lateral_profile(t - self.onset, self.lc_duration, w);
                (y - w, v, a)
            }
            Maneuver::Right => {
                let (y, v, a) = lateral_profile(t - self.onset, self.lc_duration, w);
                (w - y, -v, -a)
            }
        }
    }

    fn sur_step(&self, t: f64, s: PointMassState) -> Result<(PointMassState, [f64; 2])> {
        let a1 = idm_accel(s.v1, None, &self.idm)?;
        let (_, _, a2) = self.sur_lateral(t);
        let (y2, v2, _) = self.sur_lateral(t + self.sim_dt);
        let (y2_now, v2_now, _) = self.sur_lateral(t);
        let lon = step_point_mass(s, [a1, 0.0], self.sim_dt);
        // Lateral motion follows the scripted profile, offset to the given state.
        let next = PointMassState::new(lon.y1, s.y2 + (y2 - y2_now), lon.v1, s.v2 + (v2 - v2_now));
        Ok((next, [a1, a2]))
    }

    /// Scripted surrounding-vehicle motion from `state` at time `t`: `n`
    /// simulation steps, returned with the starting state first.
    pub fn surrounding_rollout(&self, t: f64, state: PointMassState, n: usize) -> Vec<PointMassState> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(state);
        let mut s = state;
        for j in 0..n {
            s = match self.sur_step(t + j as f64 * self.sim_dt, s) {
                Ok((next, _)) => next,
                Err(_) => s,
            };
            out.push(s);
        }
        out
    }

    /// Whether two vehicle footprints overlap.
    pub fn overlaps(&self, ego: &PointMassState, sur: &PointMassState) -> bool {
        let g = &self.geometry;
        (sur.y1 - ego.y1).abs() < g.length && (sur.y2 - ego.y2).abs() < g.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSample {
    pub t: f64,
    pub ego: PointMassState,
    pub ego_accel: [f64; 2],
    pub sur: PointMassState,
    pub sur_accel: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub dt: f64,
    pub samples: Vec<SimSample>,
    pub crash_time: Option<f64>,
}

/// One vehicle's state and acceleration in a CSV row.
type Row = (PointMassState, [f64; 2]);

/// Runs a cut-in scenario until a crash or the configured duration.
pub fn simulate(cfg: &ScenarioConfig) -> Result<SimTrace> {
    cfg.validate()?;
    let dt = cfg.sim_dt;
    let ego_idm = cfg.ego_idm();
    let n = (cfg.duration / dt).round() as usize;
    let gap_steps = (cfg.gap_time / dt).round() as usize;

    // The surrounding vehicle has no leader, so its start position follows
    // from rolling both vehicles forward to the time the gap is specified.
    let (y2, v2, _) = cfg.sur_lateral(0.0);
    let sur_path = cfg.surrounding_rollout(0.0, PointMassState::new(0.0, y2, cfg.v_sur, v2), gap_steps);
    let mut ego = PointMassState::new(0.0, 0.0, cfg.v_ego, 0.0);
    for _ in 0..gap_steps {
        let a = idm_accel(ego.v1, None, &ego_idm)?;
        ego = step_point_mass(ego, [a, 0.0], dt);
    }
    let offset = cfg.initial_gap + ego.y1 - sur_path[gap_steps].y1;

    let mut ego = PointMassState::new(0.0, 0.0, cfg.v_ego, 0.0);
    let mut sur = PointMassState::new(offset, y2, cfg.v_sur, v2);
    let mut samples = Vec::with_capacity(n + 1);
    let mut crash_time = None;
    for i in 0..=n {
        let t = i as f64 * dt;
        let dy1 = sur.y1 - ego.y1;
        let leader = (dy1 > 0.0 && (sur.y2 - ego.y2).abs() < cfg.follow_offset).then_some(Leader {
            dv: ego.v1 - sur.v1,
            gap: dy1 - cfg.geometry.length,
        });
        let crashed = cfg.overlaps(&ego, &sur);
        let a_ego = if crashed {
            0.0
        } else {
            idm_accel(ego.v1, leader, &ego_idm)?
        };
        let (sur_next, sur_accel) = cfg.sur_step(t, sur)?;
        samples.push(SimSample {
            t,
            ego,
            ego_accel: [a_ego, 0.0],
            sur,
            sur_accel,
        });
        if crashed {
            crash_time = Some(t);
            break;
        }
        ego = step_point_mass(ego, [a_ego, 0.0], dt);
        sur = sur_next;
    }
    Ok(SimTrace {
        dt,
        samples,
        crash_time,
    })
}

impl SimTrace {
    /// Builds a trace from samples, checking spacing and locating the first
    /// footprint overlap.
    pub fn from_samples(samples: Vec<SimSample>, geometry: &VehicleGeometry) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Trace("need at least two samples".into()));
        }
        let dt = samples[1].t - samples[0].t;
        for (i, w) in samples.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if !(step > 0.0) {
                return Err(Error::Trace(format!("time not strictly increasing at row {}", i + 1)));
            }
            if (step - dt).abs() > 1e-6 {
                return Err(Error::Trace(format!("non-uniform sampling at t = {}", w[1].t)));
            }
        }
        for s in &samples {
            if !(s.t.is_finite() && s.ego.is_finite() && s.sur.is_finite()) {
                return Err(Error::Trace(format!("non-finite value at t = {}", s.t)));
            }
        }
        let crash_time = samples
            .iter()
            .find(|s| (s.sur.y1 - s.ego.y1).abs() < geometry.length && (s.sur.y2 - s.ego.y2).abs() < geometry.width)
            .map(|s| s.t);
        Ok(Self {
            dt,
            samples,
            crash_time,
        })
    }

    /// Sample closest to time `t`, if within half a sample period.
    pub fn at(&self, t: f64) -> Option<&SimSample> {
        let t0 = self.samples.first()?.t;
        let i = ((t - t0) / self.dt).round();
        if i < 0.0 {
            return None;
        }
        let s = self.samples.get(i as usize)?;
        ((s.t - t).abs() <= 0.5 * self.dt).then_some(s)
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// Long-format CSV with columns `t,vehicle,y1,y2,v1,v2,a1,a2`; vehicle 0
    /// is the ego and 1 the surrounding vehicle.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        // Headers come from the row struct.
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            for (id, st, a) in [(0u32, &s.ego, s.ego_accel), (1u32, &s.sur, s.sur_accel)] {
                w.serialize(TraceRow {
                    t: s.t,
                    vehicle: id,
                    y1: st.y1,
                    y2: st.y2,
                    v1: st.v1,
                    v2: st.v2,
                    a1: a[0],
                    a2: a[1],
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`SimTrace::write_csv`].
    pub fn read_csv<R: Read>(input: R, geometry: &VehicleGeometry) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows: BTreeMap<u64, [Option<Row>; 2]> = BTreeMap::new();
        let mut times: BTreeMap<u64, f64> = BTreeMap::new();
        for (line, rec) in rdr.deserialize::<TraceRow>().enumerate() {
            let r = rec.map_err(|e| Error::Trace(format!("row {}: {e}", line + 1)))?;
            if r.vehicle > 1 {
                return Err(Error::Trace(format!(
                    "row {}: unknown vehicle id {}",
                    line + 1,
                    r.vehicle
                )));
            }
            if !r.t.is_finite() {
                return Err(Error::Trace(format!("row {}: non-finite time", line + 1)));
            }
            // Key on the time rounded to microseconds.
            let key = (r.t * 1e6).round() as i64;
            if key < 0 {
                return Err(Error::Trace(format!("row {}: negative time", line + 1)));
            }
            let slot = &mut rows.entry(key as u64).or_default()[r.vehicle as usize];
            if slot.is_some() {
                return Err(Error::Trace(format!(
                    "row {}: duplicate vehicle at t = {}",
                    line + 1,
                    r.t
                )));
            }
            *slot = Some((PointMassState::new(r.y1, r.y2, r.v1, r.v2), [r.a1, r.a2]));
            times.insert(key as u64, r.t);
        }
        let samples = rows
            .into_iter()
            .map(|(k, [e, s])| match (e, s) {
                (Some((ego, ego_accel)), Some((sur, sur_accel))) => Ok(SimSample {
                    t: times[&k],
                    ego,
                    ego_accel,
                    sur,
                    sur_accel,
                }),
                _ => Err(Error::Trace(format!("t = {} lacks one of the two vehicles", times[&k]))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(samples, geometry)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    t: f64,
    vehicle: u32,
    y1: f64,
    y2: f64,
    v1: f64,
    v2: f64,
    a1: f64,
    a2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEvent {
    pub v_ego: f64,
    pub v_sur: f64,
    pub crash_time: Option<f64>,
}

/// Simulates every speed pair, in ego-major order.
pub fn sweep(v_ego: &[f64], v_sur: &[f64], base: &ScenarioConfig) -> Result<Vec<SweepEvent>> {
    let pairs: Vec<(f64, f64)> = v_ego.iter().flat_map(|&e| v_sur.iter().map(move |&s| (e, s))).collect();
    pairs
        .into_par_iter()
        .map(|(e, s)| {
            let cfg = ScenarioConfig {
                v_ego: e,
                v_sur: s,
                ..base.clone()
            };
            Ok(SweepEvent {
                v_ego: e,
                v_sur: s,
                crash_time: simulate(&cfg)?.crash_time,
            })
        })
        .collect()
}

/// Inclusive speeds `lo, lo + step, ..., hi`.
pub fn speed_range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Distinct speed differences `v_ego - v_sur` (rounded to 1e-6) that
/// produced at least one crash, ascending.
pub fn crash_differences(events: &[SweepEvent]) -> Vec<f64> {
    let mut d: Vec<f64> = events
        .iter()
        .filter(|e| e.crash_time.is_some())
        .map(|e| ((e.v_ego - e.v_sur) * 1e6).round() / 1e6)
        .collect();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

/// Time left before the crash when the probability series (`(t, p)`, time
/// ascending) first reaches `threshold`.
pub fn timeliness(series: &[(f64, f64)], crash_time: f64, threshold: f64) -> Option<f64> {
    series
        .iter()
        .find(|(_, p)| *p >= threshold && *p > 0.0)
        .map(|(t, _)| crash_time - t)
}
