//! Acceleration forecasts of the surrounding vehicle.
//!
//! A forecast gives, for every future step and each maneuver mode (keep lane,
//! change left, change right), a bivariate normal over `(a1, a2)` together
//! with the mode probabilities. Any predictor that produces this shape can
//! drive the reachable-set engine; two reference predictors live here.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_point_mass, PointMassState};
use crate::error::{Error, Result};
use crate::grid::CellBounds;
use crate::normal;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateNormal {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
}

impl BivariateNormal {
    pub fn new(mu1: f64, mu2: f64, sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        let d = Self {
            mu1,
            mu2,
            sigma1,
            sigma2,
            rho,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.mu1, self.mu2, self.sigma1, self.sigma2, self.rho]
            .iter()
            .all(|x| x.is_finite())
        {
            return Err(Error::Distribution("non-finite parameter".into()));
        }
        if self.sigma1 <= 0.0 || self.sigma2 <= 0.0 {
            return Err(Error::Distribution(format!(
                "standard deviations must be positive ({}, {})",
                self.sigma1, self.sigma2
            )));
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::Distribution(format!("|rho| must be < 1, got {}", self.rho)));
        }
        Ok(())
    }

    pub fn pdf(&self, a1: f64, a2: f64) -> f64 {
        let z1 = (a1 - self.mu1) / self.sigma1;
        let z2 = (a2 - self.mu2) / self.sigma2;
        let one_m = 1.0 - self.rho * self.rho;
        let q = (z1 * z1 + z2 * z2 - 2.0 * self.rho * z1 * z2) / one_m;
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * self.sigma1 * self.sigma2 * one_m.sqrt())
    }

    /// Widens both standard deviations by the confidence coefficient `beta`.
    pub fn scale_confidence(&self, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "confidence coefficient must be positive, got {beta}"
            )));
        }
        Ok(Self {
            sigma1: self.sigma1 * beta,
            sigma2: self.sigma2 * beta,
            ..*self
        })
    }

    /// Probability mass over an input cell.
    pub fn cell_mass(&self, b: &CellBounds) -> f64 {
        let z = |x: f64, mu: f64, s: f64| (x - mu) / s;
        normal::rect_prob_standard(
            self.rho,
            (z(b.a1.0, self.mu1, self.sigma1), z(b.a1.1, self.mu1, self.sigma1)),
            (z(b.a2.0, self.mu2, self.sigma2), z(b.a2.1, self.mu2, self.sigma2)),
        )
    }
}

/// Lateral maneuver modes; "left" increases `y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    Keep = 0,
    Left = 1,
    Right = 2,
}

impl Maneuver {
    pub const ALL: [Maneuver; 3] = [Maneuver::Keep, Maneuver::Left, Maneuver::Right];

    pub fn mirrored(self) -> Self {
        match self {
            Maneuver::Keep => Maneuver::Keep,
            Maneuver::Left => Maneuver::Right,
            Maneuver::Right => Maneuver::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    /// Indexed by [`Maneuver`] discriminant.
    pub modes: [BivariateNormal; 3],
    pub probs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelerationForecast {
    /// Time the forecast was issued (s).
    pub issued_at: f64,
    pub dt: f64,
    pub steps: Vec<ForecastStep>,
}

impl AccelerationForecast {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Distribution("forecast dt must be positive".into()));
        }
        for (k, s) in self.steps.iter().enumerate() {
            for m in &s.modes {
                m.validate()?;
            }
            let sum: f64 = s.probs.iter().sum();
            if s.probs.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Distribution(format!(
                    "mode probabilities at step {k} must be non-negative and sum to 1 (sum {sum})"
                )));
            }
        }
        Ok(())
    }

    pub fn step(&self, k: usize) -> Result<&ForecastStep> {
        self.steps.get(k).ok_or(Error::StaleForecast {
            requested: k,
            available: self.steps.len(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Number of future steps and their spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Horizon {
    pub steps: usize,
    pub dt: f64,
}

impl Default for Horizon {
    fn default() -> Self {
        Self { steps: 5, dt: 0.4 }
    }
}

/// One observed sample of the surrounding vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub state: PointMassState,
    pub accel: [f64; 2],
}

/// Source of acceleration forecasts from an observed history (oldest first).
pub trait Predictor: Send + Sync {
    fn forecast(&self, history: &[Observation]) -> Result<AccelerationForecast>;
}

/// Mean trajectory of one maneuver mode, states for steps `1..=e`.
pub fn propagate_mean_trajectory(
    state: PointMassState,
    forecast: &AccelerationForecast,
    mode: Maneuver,
) -> Vec<PointMassState> {
    let mut s = state;
    forecast
        .steps
        .iter()
        .map(|step| {
            let d = &step.modes[mode as usize];
            s = step_point_mass(s, [d.mu1, d.mu2], forecast.dt);
            s
        })
        .collect()
}

/// Position standard deviation induced by an acceleration deviation over one step.
pub fn propagate_sigma(sigma: f64, dt: f64) -> f64 {
    sigma * dt * dt / 2.0
}

/// Position correlation carried over one step; clamped to `|rho| <= 0.999`.
pub fn propagate_correlation(rho: f64, dt: f64) -> f64 {
    (rho * dt * dt / 2.0).clamp(-0.999, 0.999)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicParams {
    /// Lateral speed below which the vehicle is taken to keep its lane (m/s).
    pub keep_threshold: f64,
    /// Probability assigned to the detected mode; the rest is split evenly.
    pub dominant_prob: f64,
    /// Lateral acceleration mean of the lane-change modes (m/s²).
    pub lateral_accel: f64,
    pub sigma: [f64; 2],
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            keep_threshold: 0.2,
            dominant_prob: 0.9,
            lateral_accel: 0.5,
            sigma: [1.0, 0.5],
        }
    }
}

/// Rule-based baseline: the lateral velocity picks the maneuver mode and every
/// mode uses fixed normals.
#[derive(Debug, Clone)]
pub struct HeuristicPredictor {
    pub params: HeuristicParams,
    pub horizon: Horizon,
}

impl HeuristicPredictor {
    pub fn new(params: HeuristicParams, horizon: Horizon) -> Result<Self> {
        if !(0.0..=1.0).contains(&params.dominant_prob) || params.keep_threshold < 0.0 {
            return Err(Error::Config("heuristic mode parameters out of range".into()));
        }
        BivariateNormal::new(0.0, 0.0, params.sigma[0], params.sigma[1], 0.0)?;
        Ok(Self { params, horizon })
    }

    fn mode_probs(&self, v2: f64) -> [f64; 3] {
        let p = self.params.dominant_prob;
        let rest = (1.0 - p) / 2.0;
        let dominant = if v2.abs() < self.params.keep_threshold {
            Maneuver::Keep
        } else if v2 > 0.0 {
            Maneuver::Left
        } else {
            Maneuver::Right
        };
        let mut probs = [rest; 3];
        probs[dominant as usize] = p;
        probs
    }
}

impl Predictor for HeuristicPredictor {
    fn forecast(&self, history: &[Observation]) -> Result<AccelerationForecast> {
        let last = history.last().ok_or(Error::ShortHistory { needed: 1, have: 0 })?;
        let [s1, s2] = self.params.sigma;
        let lat = self.params.lateral_accel;
        let modes = [
            BivariateNormal::new(0.0, 0.0, s1, s2, 0.0)?,
            BivariateNormal::new(0.0, lat, s1, s2, 0.0)?,
            BivariateNormal::new(0.0, -lat, s1, s2, 0.0)?,
        ];
        let probs = self.mode_probs(last.state.v2);
        Ok(AccelerationForecast {
            issued_at: last.t,
            dt: self.horizon.dt,
            steps: vec![ForecastStep { modes, probs }; self.horizon.steps],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerativeParams {
    /// Standard deviations attached to the rolled-out mean accelerations (m/s²).
    pub sigma: [f64; 2],
}

impl Default for GenerativeParams {
    fn default() -> Self {
        Self { sigma: [0.5, 0.25] }
    }
}

/// Forecasts from the scripted scenario model itself: the surrounding
/// vehicle's free-road car-following law plus its lateral maneuver profile.
///
/// Before the maneuver starts the three modes are equally likely; afterwards
/// the scripted mode has probability one.
#[derive(Debug, Clone)]
pub struct GenerativePredictor {
    scenario: Arc<ScenarioConfig>,
    pub params: GenerativeParams,
    pub horizon: Horizon,
}

impl GenerativePredictor {
    pub fn new(scenario: Arc<ScenarioConfig>, params: GenerativeParams, horizon: Horizon) -> Result<Self> {
        scenario.validate()?;
        BivariateNormal::new(0.0, 0.0, params.sigma[0], params.sigma[1], 0.0)?;
        let ratio = horizon.dt / scenario.sim_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::Config(format!(
                "forecast dt {} must be a multiple of the scenario step {}",
                horizon.dt, scenario.sim_dt
            )));
        }
        Ok(Self {
            scenario,
            params,
            horizon,
        })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }
}

impl Predictor for GenerativePredictor {
    fn forecast(&self, history: &[Observation]) -> Result<AccelerationForecast> {
        let last = history.last().ok_or(Error::ShortHistory { needed: 1, have: 0 })?;
        let sc = &self.scenario;
        if !(last.t >= 0.0 && last.t <= sc.duration + 1e-9) || !last.state.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "history time {} lies outside the scenario [0, {}]",
                last.t, sc.duration
            )));
        }
        let sub = (self.horizon.dt / sc.sim_dt).round() as usize;
        let rollout = sc.surrounding_rollout(last.t, last.state, self.horizon.steps * sub);
        let scripted = sc.maneuver();
        let probs = if last.t + 1e-9 >= sc.onset {
            let mut p = [0.0; 3];
            p[scripted as usize] = 1.0;
            p
        } else {
            [1.0 / 3.0; 3]
        };
        let [s1, s2] = self.params.sigma;
        let dt = self.horizon.dt;
        let steps = (0..self.horizon.steps)
            .map(|k| {
                let a = &rollout[k * sub];
                let b = &rollout[(k + 1) * sub];
                let mu1 = (b.v1 - a.v1) / dt;
                let mu2 = (b.v2 - a.v2) / dt;
                let mut modes = [BivariateNormal::new(mu1, 0.0, s1, s2, 0.0)?; 3];
                modes[scripted as usize].mu2 = mu2;
                modes[scripted.mirrored() as usize].mu2 = -mu2;
                Ok(ForecastStep { modes, probs })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AccelerationForecast {
            issued_at: last.t,
            dt,
            steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::InputGrid;
    use crate::normal::gauss_legendre;
    use proptest::prelude::*;

    fn std_normal() -> BivariateNormal {
        BivariateNormal::new(0.0, 0.0, 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn pdf_examples() {
        let d = std_normal();
        assert!((d.pdf(0.0, 0.0) - 0.159_155).abs() < 1e-6);
        assert!((d.pdf(1.0, 0.0) - 0.096_532).abs() < 1e-6);
        let d = BivariateNormal::new(0.3, -0.2, 0.7, 1.4, 0.0).unwrap();
        let g = |x: f64, m: f64, s: f64| {
            (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        };
        let (a1, a2) = (0.9, 0.4);
        assert!((d.pdf(a1, a2) - g(a1, 0.3, 0.7) * g(a2, -0.2, 1.4)).abs() < 1e-15);
    }

    #[test]
    fn pdf_integrates_to_one() {
        for d in [
            std_normal(),
            BivariateNormal::new(0.5, -1.0, 0.4, 1.3, 0.7).unwrap(),
            BivariateNormal::new(-2.0, 0.2, 2.0, 0.3, -0.85).unwrap(),
        ] {
            let r1 = 10.0 * d.sigma1;
            let r2 = 10.0 * d.sigma2;
            let total = gauss_legendre(d.mu2 - r2, d.mu2 + r2, d.sigma2 / 4.0, |a2| {
                gauss_legendre(d.mu1 - r1, d.mu1 + r1, d.sigma1 / 4.0, |a1| d.pdf(a1, a2))
            });
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
    }

    #[test]
    fn confidence_scaling() {
        let d = BivariateNormal::new(0.1, 0.2, 0.5, 0.3, 0.4).unwrap();
        assert_eq!(d.scale_confidence(1.0).unwrap(), d);
        let s = d.scale_confidence(2.0).unwrap();
        assert_eq!((s.sigma1, s.sigma2), (1.0, 0.6));
        assert_eq!((s.mu1, s.mu2, s.rho), (d.mu1, d.mu2, d.rho));
        let ratio = s.pdf(0.1, 0.2) / d.pdf(0.1, 0.2);
        assert!((ratio - 0.25).abs() < 1e-12);
        assert!(d.scale_confidence(0.0).is_err());
        assert!(d.scale_confidence(-1.0).is_err());
    }

    #[test]
    fn invalid_normals_rejected() {
        assert!(BivariateNormal::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(BivariateNormal::new(0.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(BivariateNormal::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn open_tail_cell_masses_sum_to_one() {
        let ig = InputGrid {
            open_tails: true,
            ..InputGrid::default()
        };
        let d = BivariateNormal::new(0.7, 0.3, 0.8, 0.4, 0.5).unwrap();
        let total: f64 = (0..ig.len()).map(|u| d.cell_mass(&ig.bounds(u))).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    fn forecast_with(mu: [f64; 2], steps: usize) -> AccelerationForecast {
        let d = BivariateNormal::new(mu[0], mu[1], 0.5, 0.5, 0.0).unwrap();
        let mirrored = BivariateNormal { mu2: -mu[1], ..d };
        AccelerationForecast {
            issued_at: 0.0,
            dt: 0.4,
            steps: vec![
                ForecastStep {
                    modes: [d, d, mirrored],
                    probs: [0.2, 0.5, 0.3],
                };
                steps
            ],
        }
    }

    #[test]
    fn mean_trajectory_examples() {
        let s0 = PointMassState::new(0.0, 0.0, 30.0, 0.0);
        let straight = propagate_mean_trajectory(s0, &forecast_with([0.0, 0.0], 5), Maneuver::Keep);
        for (k, s) in straight.iter().enumerate() {
            assert!((s.y1 - 12.0 * (k + 1) as f64).abs() < 1e-12);
            assert_eq!(s.y2, 0.0);
        }
        // constant a: y(t) = v t + a t^2 / 2 exactly under trapezoidal steps
        let accel = propagate_mean_trajectory(s0, &forecast_with([1.0, 0.0], 5), Maneuver::Keep);
        for (k, s) in accel.iter().enumerate() {
            let t = 0.4 * (k + 1) as f64;
            assert!((s.y1 - (30.0 * t + 0.5 * t * t)).abs() < 1e-12);
        }
        let f = forecast_with([0.0, 0.5], 5);
        let left = propagate_mean_trajectory(s0, &f, Maneuver::Left);
        let right = propagate_mean_trajectory(s0, &f, Maneuver::Right);
        for (l, r) in left.iter().zip(&right) {
            assert!(l.y2 > 0.0);
            assert_eq!(l.y2, -r.y2);
        }
    }

    #[test]
    fn sigma_propagation() {
        assert!((propagate_sigma(1.0, 0.4) - 0.08).abs() < 1e-15);
        assert_eq!(propagate_sigma(0.0, 0.4), 0.0);
        assert!((propagate_sigma(3.0, 0.4) - 3.0 * propagate_sigma(1.0, 0.4)).abs() < 1e-15);
        assert_eq!(propagate_correlation(0.9, 2.0), 0.999);
    }

    #[test]
    fn stale_step_is_an_error() {
        let f = forecast_with([0.0, 0.0], 5);
        assert!(f.step(4).is_ok());
        assert!(matches!(f.step(5), Err(Error::StaleForecast { .. })));
    }

    #[test]
    fn forecast_json_export() {
        let f = forecast_with([0.2, 0.1], 2);
        let back: AccelerationForecast = serde_json::from_str(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
    }

    fn history(v2: f64) -> Vec<Observation> {
        (0..=10)
            .map(|i| Observation {
                t: 0.2 * i as f64,
                state: PointMassState::new(6.0 * i as f64, v2 * 0.2 * i as f64, 30.0, v2),
                accel: [0.0, 0.0],
            })
            .collect()
    }

    #[test]
    fn heuristic_modes() {
        let p = HeuristicPredictor::new(HeuristicParams::default(), Horizon::default()).unwrap();
        let f = p.forecast(&history(0.0)).unwrap();
        f.validate().unwrap();
        assert_eq!(f.steps.len(), 5);
        assert!(f.steps[0].probs[Maneuver::Keep as usize] >= 0.9);
        let left = p.forecast(&history(0.5)).unwrap();
        let lp = left.steps[0].probs;
        assert!(lp[1] > lp[0] && lp[1] > lp[2]);
        let right = p.forecast(&history(-0.5)).unwrap();
        let rp = right.steps[0].probs;
        assert_eq!(rp, [lp[0], lp[2], lp[1]]);
        assert!(p.forecast(&[]).is_err());
    }

    proptest! {
        #[test]
        fn confidence_composition(b1 in 0.05f64..20.0, b2 in 0.05f64..20.0) {
            let d = BivariateNormal::new(0.3, -0.1, 0.7, 0.4, -0.3).unwrap();
            let once = d.scale_confidence(b1 * b2).unwrap();
            let twice = d.scale_confidence(b1).unwrap().scale_confidence(b2).unwrap();
            prop_assert!((once.sigma1 - twice.sigma1).abs() <= 1e-12 * once.sigma1);
            prop_assert!((once.sigma2 - twice.sigma2).abs() <= 1e-12 * once.sigma2);
        }
    }
}
