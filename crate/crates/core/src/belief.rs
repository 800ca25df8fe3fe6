//! Belief over confidence coefficients and its Bayesian update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frs::{mixture_cell_mass, normalize_inputs};
use crate::grid::InputGrid;
use crate::predictor::ForecastStep;

/// Standard sets of confidence coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaPreset {
    /// `[1]`
    Single,
    /// `[1/2, 1, 2]`
    Three,
    /// `[1/3, 1/2, 1, 2, 3]`
    Five,
}

impl BetaPreset {
    pub fn betas(self) -> Vec<f64> {
        match self {
            BetaPreset::Single => vec![1.0],
            BetaPreset::Three => vec![0.5, 1.0, 2.0],
            BetaPreset::Five => vec![1.0 / 3.0, 0.5, 1.0, 2.0, 3.0],
        }
    }
}

/// Result of one belief update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Updated,
    /// Every likelihood product was zero; the prior was kept.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefVector {
    betas: Vec<f64>,
    probs: Vec<f64>,
    window: usize,
}

impl BeliefVector {
    pub fn init_uniform(betas: &[f64], window: usize) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("belief needs at least one coefficient".into()));
        }
        if window == 0 {
            return Err(Error::InvalidArgument("belief window must be at least 1".into()));
        }
        for (i, b) in betas.iter().enumerate() {
            if !(b.is_finite() && *b > 0.0) {
                return Err(Error::InvalidArgument(format!("coefficient {b} must be positive")));
            }
            if betas[..i].contains(b) {
                return Err(Error::InvalidArgument(format!("duplicate coefficient {b}")));
            }
        }
        let n = betas.len();
        Ok(Self {
            betas: betas.to_vec(),
            probs: vec![1.0 / n as f64; n],
            window,
        })
    }

    pub fn from_preset(preset: BetaPreset, window: usize) -> Result<Self> {
        Self::init_uniform(&preset.betas(), window)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `(beta, belief)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.betas.iter().copied().zip(self.probs.iter().copied())
    }

    /// Bayes step with one likelihood (product over the window) per coefficient.
    pub fn update_with_likelihoods(&mut self, likelihoods: &[f64]) -> Result<UpdateOutcome> {
        if likelihoods.len() != self.betas.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} likelihoods, got {}",
                self.betas.len(),
                likelihoods.len()
            )));
        }
        if likelihoods.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidArgument(
                "likelihoods must be finite and non-negative".into(),
            ));
        }
        let post: Vec<f64> = self.probs.iter().zip(likelihoods).map(|(b, l)| b * l).collect();
        let total: f64 = post.iter().sum();
        if !(total > 0.0) {
            log::warn!("degenerate evidence: all posteriors are zero, keeping the prior belief");
            return Ok(UpdateOutcome::Degenerate);
        }
        self.probs = post.into_iter().map(|p| p / total).collect();
        Ok(UpdateOutcome::Updated)
    }

    /// Bayes step from the most recent `window` scored observations (oldest first).
    pub fn update(&mut self, records: &[ScoredObservation<'_>], inputs: &InputGrid) -> Result<UpdateOutcome> {
        if records.is_empty() {
            return Err(Error::ShortHistory { needed: 1, have: 0 });
        }
        let recent = &records[records.len().saturating_sub(self.window)..];
        let mut products = vec![1.0; self.betas.len()];
        for r in recent {
            for (prod, &beta) in products.iter_mut().zip(&self.betas) {
                *prod *= observation_likelihood(r.forecast, r.cell, beta, r.admissible, inputs)?;
            }
        }
        self.update_with_likelihoods(&products)
    }
}

/// An observed input cell paired with the forecast step that predicted it.
#[derive(Debug, Clone, Copy)]
pub struct ScoredObservation<'a> {
    pub forecast: &'a ForecastStep,
    pub cell: usize,
    /// Input cells admissible at the state the observation started from.
    pub admissible: &'a [usize],
}

/// Normalized probability of the observed input cell under the forecast step
/// with standard deviations scaled by `beta`.
pub fn observation_likelihood(
    step: &ForecastStep,
    cell: usize,
    beta: f64,
    admissible: &[usize],
    inputs: &InputGrid,
) -> Result<f64> {
    let pos = admissible
        .iter()
        .position(|&u| u == cell)
        .ok_or(Error::InadmissibleInput(cell))?;
    let masses = admissible
        .iter()
        .map(|&u| mixture_cell_mass(step, beta, &inputs.bounds(u)))
        .collect::<Result<Vec<_>>>()?;
    let (probs, _) = normalize_inputs(&masses);
    Ok(probs[pos])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::BivariateNormal;
    use proptest::prelude::*;

    fn step(mu: [f64; 2]) -> ForecastStep {
        let d = BivariateNormal::new(mu[0], mu[1], 0.6, 0.4, 0.0).unwrap();
        ForecastStep {
            modes: [d; 3],
            probs: [1.0, 0.0, 0.0],
        }
    }

    #[test]
    fn uniform_init() {
        for (n, p) in [(5, 0.2), (1, 1.0), (3, 1.0 / 3.0)] {
            let b = BeliefVector::init_uniform(&BetaPreset::Five.betas()[..n], 2).unwrap();
            assert!(b.probs().iter().all(|x| (x - p).abs() < 1e-15));
        }
        assert!(BeliefVector::init_uniform(&[1.0, 1.0], 2).is_err());
        assert!(BeliefVector::init_uniform(&[], 2).is_err());
        assert!(BeliefVector::init_uniform(&[0.0], 2).is_err());
    }

    #[test]
    fn bayes_arithmetic() {
        let mut b = BeliefVector::init_uniform(&[0.5, 2.0], 2).unwrap();
        b.update_with_likelihoods(&[0.4, 0.1]).unwrap();
        assert!((b.probs()[0] - 0.8).abs() < 1e-15);
        assert!((b.probs()[1] - 0.2).abs() < 1e-15);
        let before = b.clone();
        b.update_with_likelihoods(&[0.3, 0.3]).unwrap();
        assert!((b.probs()[0] - before.probs()[0]).abs() < 1e-15);
    }

    #[test]
    fn degenerate_evidence_keeps_prior() {
        let mut b = BeliefVector::init_uniform(&[0.5, 1.0, 2.0], 2).unwrap();
        b.update_with_likelihoods(&[0.2, 0.5, 0.3]).unwrap();
        let prior = b.clone();
        assert_eq!(b.update_with_likelihoods(&[0.0; 3]).unwrap(), UpdateOutcome::Degenerate);
        assert_eq!(b, prior);
    }

    #[test]
    fn likelihood_limits() {
        let ig = InputGrid::default();
        let all: Vec<usize> = (0..ig.len()).collect();
        let s = step([0.0, 0.0]);
        let at_mean = ig.snap([0.0, 0.0]).unwrap();
        let l: Vec<f64> = [0.2, 1.0, 3.0]
            .iter()
            .map(|&b| observation_likelihood(&s, at_mean, b, &all, &ig).unwrap())
            .collect();
        assert!(l[0] > l[1] && l[1] > l[2]);
        let wide = observation_likelihood(&s, at_mean, 1e4, &all, &ig).unwrap();
        assert!((wide - 1.0 / 63.0).abs() < 1e-3);
        assert_eq!(observation_likelihood(&s, at_mean, 1.0, &[at_mean], &ig).unwrap(), 1.0);
        assert!(matches!(
            observation_likelihood(&s, 0, 1.0, &[at_mean], &ig),
            Err(Error::InadmissibleInput(0))
        ));
    }

    #[test]
    fn window_limits_evidence() {
        let ig = InputGrid::default();
        let all: Vec<usize> = (0..ig.len()).collect();
        let s = step([0.0, 0.0]);
        let far = ig.snap([-4.0, 1.5]).unwrap();
        let near = ig.snap([0.0, 0.0]).unwrap();
        let rec = |cell| ScoredObservation {
            forecast: &s,
            cell,
            admissible: &all,
        };
        let mut a = BeliefVector::from_preset(BetaPreset::Three, 2).unwrap();
        let mut b = a.clone();
        a.update(&[rec(far), rec(near), rec(near)], &ig).unwrap();
        b.update(&[rec(near), rec(near)], &ig).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn stays_a_distribution(l in prop::collection::vec(0.0f64..1.0, 5), c in 0.01f64..100.0) {
            let mut a = BeliefVector::from_preset(BetaPreset::Five, 2).unwrap();
            let mut b = a.clone();
            a.update_with_likelihoods(&l).unwrap();
            let scaled: Vec<f64> = l.iter().map(|x| x * c).collect();
            b.update_with_likelihoods(&scaled).unwrap();
            let sum: f64 = a.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(a.probs().iter().all(|p| (0.0..=1.0).contains(p)));
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
