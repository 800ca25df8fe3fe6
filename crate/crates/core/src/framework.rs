//! Detection pipeline: backward-reachable-set gate, stochastic forward
//! reachable set on escalation, and a threshold alert.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefVector, BetaPreset, ScoredObservation};
use crate::brs::ValueTable;
use crate::dynamics::{PointMassState, RelativeState, VehicleGeometry};
use crate::error::{Error, Result};
use crate::frs::{collision_probability, occupancy_set, FrsEngine, ProbabilityField};
use crate::predictor::{
    AccelerationForecast, GenerativeParams, GenerativePredictor, HeuristicParams, HeuristicPredictor, Horizon,
    Observation, Predictor,
};
use crate::scenario::{timeliness, ScenarioConfig, SimSample, SimTrace};

/// Predictor and belief combinations compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Heuristic predictor, single coefficient.
    Hsrs,
    /// Generative predictor, single coefficient.
    Psrs,
    /// Generative predictor with three coefficients.
    Psrs3,
    /// Generative predictor with five coefficients.
    Psrs5,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Hsrs, Variant::Psrs, Variant::Psrs3, Variant::Psrs5];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Hsrs => "HSRS",
            Variant::Psrs => "PSRS",
            Variant::Psrs3 => "PSRS-3beta",
            Variant::Psrs5 => "PSRS-5beta",
        }
    }

    pub fn preset(self) -> BetaPreset {
        match self {
            Variant::Hsrs | Variant::Psrs => BetaPreset::Single,
            Variant::Psrs3 => BetaPreset::Three,
            Variant::Psrs5 => BetaPreset::Five,
        }
    }

    pub fn predictor(
        self,
        scenario: Arc<ScenarioConfig>,
        heuristic: HeuristicParams,
        generative: GenerativeParams,
        horizon: Horizon,
    ) -> Result<Box<dyn Predictor>> {
        Ok(match self {
            Variant::Hsrs => Box::new(HeuristicPredictor::new(heuristic, horizon)?),
            _ => Box::new(GenerativePredictor::new(scenario, generative, horizon)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameworkConfig {
    /// Alert threshold on the collision probability.
    pub threshold: f64,
    /// Assessment period; equals the forecast step (s).
    pub tick: f64,
    /// Observed history length before the first assessment (s).
    pub warmup: f64,
    /// History sampling period (s).
    pub history_dt: f64,
    /// Standard deviation of noise added to observed accelerations (m/s²).
    pub observation_noise: f64,
    pub seed: u64,
    pub geometry: VehicleGeometry,
    /// When false the forward set is computed every tick regardless of the
    /// backward-set value.
    pub gate: bool,
}

impl Default for FrameworkConfig {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            tick: 0.4,
            warmup: 2.0,
            history_dt: 0.2,
            observation_noise: 0.0,
            seed: 0,
            geometry: VehicleGeometry::default(),
            gate: true,
        }
    }
}

impl FrameworkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if !(self.tick > 0.0 && self.history_dt > 0.0 && self.warmup >= self.history_dt) {
            return Err(Error::Config(
                "tick, history period and warm-up must be positive".into(),
            ));
        }
        if !(self.observation_noise >= 0.0) {
            return Err(Error::Config("observation noise must be non-negative".into()));
        }
        self.geometry.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    SafeByBrs,
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub t: f64,
    pub gate: Gate,
    /// Interpolated value at the relative state.
    pub brs_value: f64,
    pub p_col: f64,
    pub alert: bool,
    /// Overlap mass per predicted step (empty when gated safe).
    pub step_sums: Vec<f64>,
    pub belief: Vec<f64>,
}

/// Ego state now, its planned positions at the forecast steps, the
/// surrounding vehicle's state and the forecast to use on escalation.
#[derive(Debug, Clone, Copy)]
pub struct AssessInput<'a> {
    pub t: f64,
    pub ego: &'a PointMassState,
    pub ego_plan: &'a [[f64; 2]],
    pub sur: &'a PointMassState,
    pub forecast: &'a AccelerationForecast,
}

/// One pass of the pipeline. The forward reachable set is only computed
/// when the gate escalates.
pub fn assess(
    input: &AssessInput<'_>,
    table: &ValueTable,
    engine: &FrsEngine,
    belief: &BeliefVector,
    config: &FrameworkConfig,
) -> Result<AssessmentRecord> {
    let rel = RelativeState::from_point_masses(input.ego, input.sur);
    if ![rel.y1, rel.y2, rel.psi, rel.v_ego, rel.v_s]
        .iter()
        .all(|x| x.is_finite())
    {
        return Err(Error::NonFinite("relative state"));
    }
    let lookup = table.lookup(&rel);
    let safe = if lookup.clamped {
        lookup.beyond_far_y1
    } else {
        lookup.value > 0.0
    };
    let mut record = AssessmentRecord {
        t: input.t,
        gate: Gate::SafeByBrs,
        brs_value: lookup.value,
        p_col: 0.0,
        alert: false,
        step_sums: Vec::new(),
        belief: belief.probs().to_vec(),
    };
    if safe && config.gate {
        return Ok(record);
    }
    record.gate = Gate::Escalated;

    if input.ego_plan.len() < input.forecast.steps.len() {
        return Err(Error::InvalidArgument(format!(
            "ego plan covers {} steps, forecast has {}",
            input.ego_plan.len(),
            input.forecast.steps.len()
        )));
    }
    // Frame centered on the ego's current position; velocities stay absolute.
    let start = PointMassState::new(
        input.sur.y1 - input.ego.y1,
        input.sur.y2 - input.ego.y2,
        input.sur.v1,
        input.sur.v2,
    );
    let grid = engine.grid();
    let initial = ProbabilityField::point_mass(grid, &start)?;
    let fields = engine.propagate(&initial, input.forecast, belief)?;
    let g = &config.geometry;
    record.step_sums = fields
        .iter()
        .zip(input.ego_plan)
        .map(|(f, p)| {
            let pos = [p[0] - input.ego.y1, p[1] - input.ego.y2];
            occupancy_set(f.step, pos, g, g, grid).mass(f, grid)
        })
        .collect();
    record.p_col = collision_probability(&record.step_sums);
    record.alert = record.p_col >= config.threshold;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventResult {
    pub records: Vec<AssessmentRecord>,
    pub crash_time: Option<f64>,
    pub max_p_col: f64,
    pub alerts: usize,
    /// Alert in an event without a crash.
    pub false_positive: bool,
    /// Time left before the crash at the first alert.
    pub timeliness: Option<f64>,
}

impl EventResult {
    pub fn series(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, r.p_col)).collect()
    }

    pub fn timeliness_at(&self, threshold: f64) -> Option<f64> {
        timeliness(&self.series(), self.crash_time?, threshold)
    }
}

/// Shared pieces for evaluating events.
pub struct Evaluator<'a> {
    pub engine: &'a FrsEngine,
    pub table: &'a ValueTable,
    pub config: FrameworkConfig,
    pub window: usize,
}

impl Evaluator<'_> {
    /// Runs the pipeline every tick after the warm-up until the crash (or the
    /// end of the trace).
    pub fn evaluate(&self, trace: &SimTrace, predictor: &dyn Predictor, preset: BetaPreset) -> Result<EventResult> {
        let cfg = &self.config;
        cfg.validate()?;
        let t0 = trace.samples.first().map_or(0.0, |s| s.t);
        let t_end = trace.end_time();
        if t_end - t0 < cfg.warmup - 1e-9 {
            return Err(Error::Trace(format!(
                "trace spans {:.2} s, shorter than the {:.2} s history window",
                t_end - t0,
                cfg.warmup
            )));
        }
        let stride = cfg.history_dt / trace.dt;
        let tick_stride = cfg.tick / trace.dt;
        if (stride - stride.round()).abs() > 1e-6 || (tick_stride - tick_stride.round()).abs() > 1e-6 {
            return Err(Error::Trace(format!(
                "trace period {} s does not divide the history and tick periods",
                trace.dt
            )));
        }
        let mut belief = BeliefVector::from_preset(preset, self.window)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = if cfg.observation_noise > 0.0 {
            Some(Normal::new(0.0, cfg.observation_noise).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        let inputs = self.engine.inputs();

        let mut records = Vec::new();
        let mut prev: Option<(AccelerationForecast, Vec<usize>, PointMassState)> = None;
        let mut scored: Vec<(AccelerationForecast, usize, Vec<usize>)> = Vec::new();
        let mut k = 0usize;
        loop {
            let t = t0 + cfg.warmup + k as f64 * cfg.tick;
            k += 1;
            if t > t_end + 1e-9 || trace.crash_time.is_some_and(|c| t >= c - 1e-9) {
                break;
            }
            let now = trace
                .at(t)
                .ok_or_else(|| Error::Trace(format!("no sample at t = {t:.2}")))?;
            let history = history(trace, t, cfg)?;

            if let Some((forecast, admissible, before)) = prev.take() {
                let mut accel = [(now.sur.v1 - before.v1) / cfg.tick, (now.sur.v2 - before.v2) / cfg.tick];
                if let Some(n) = &noise {
                    accel[0] += n.sample(&mut rng);
                    accel[1] += n.sample(&mut rng);
                }
                let cell = inputs.snap(accel)?;
                if admissible.contains(&cell) {
                    scored.push((forecast, cell, admissible));
                    let window: Vec<ScoredObservation<'_>> = scored
                        .iter()
                        .map(|(f, c, a)| ScoredObservation {
                            forecast: &f.steps[0],
                            cell: *c,
                            admissible: a,
                        })
                        .collect();
                    belief.update(&window, inputs)?;
                } else {
                    log::warn!("observed input cell {cell} at t = {t:.2} is not admissible; skipped");
                }
            }

            let forecast = predictor.forecast(&history)?;
            forecast.validate()?;
            let plan = ego_plan(trace, t, cfg.tick, forecast.steps.len());
            let record = assess(
                &AssessInput {
                    t,
                    ego: &now.ego,
                    ego_plan: &plan,
                    sur: &now.sur,
                    forecast: &forecast,
                },
                self.table,
                self.engine,
                &belief,
                cfg,
            )?;
            records.push(record);
            let admissible = self.engine.admissible_at(now.sur.v1);
            prev = Some((forecast, admissible, now.sur));
        }

        let max_p_col = records.iter().map(|r| r.p_col).fold(0.0, f64::max);
        let alerts = records.iter().filter(|r| r.alert).count();
        let mut result = EventResult {
            records,
            crash_time: trace.crash_time,
            max_p_col,
            alerts,
            false_positive: trace.crash_time.is_none() && alerts > 0,
            timeliness: None,
        };
        result.timeliness = result.timeliness_at(cfg.threshold);
        Ok(result)
    }
}

/// Observations over the warm-up window ending at `t`, oldest first.
pub fn history(trace: &SimTrace, t: f64, cfg: &FrameworkConfig) -> Result<Vec<Observation>> {
    let n = (cfg.warmup / cfg.history_dt).round() as usize;
    (0..=n)
        .map(|j| {
            let tj = t - (n - j) as f64 * cfg.history_dt;
            let s = trace
                .at(tj)
                .ok_or_else(|| Error::ShortHistory { needed: n + 1, have: j })?;
            Ok(Observation {
                t: s.t,
                state: s.sur,
                accel: s.sur_accel,
            })
        })
        .collect()
}

/// Planned ego positions at `t + k tick`, `k = 1..=steps`; beyond the end of
/// the trace the last sample is extrapolated at constant velocity.
pub fn ego_plan(trace: &SimTrace, t: f64, tick: f64, steps: usize) -> Vec<[f64; 2]> {
    let last: &SimSample = trace.samples.last().expect("trace is non-empty");
    (1..=steps)
        .map(|k| {
            let tk = t + k as f64 * tick;
            match trace.at(tk) {
                Some(s) => [s.ego.y1, s.ego.y2],
                None => {
                    let dt = tk - last.t;
                    [last.ego.y1 + last.ego.v1 * dt, last.ego.y2 + last.ego.v2 * dt]
                }
            }
        })
        .collect()
}
