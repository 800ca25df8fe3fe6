//! First-order Lax–Friedrichs solver for the frozen backward HJI equation
//! `V_tau = min(0, H(x, grad V))`, integrated in time-to-go `tau`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridAxis;

/// A system whose backward reachable set the solver computes.
pub trait HjSystem<const D: usize>: Sync {
    /// Signed distance to the target set (negative inside).
    fn target(&self, x: &[f64; D]) -> f64;

    /// `max_ego min_other q . f(x, u_ego, u_other)`.
    fn hamiltonian(&self, x: &[f64; D], q: &[f64; D]) -> f64;

    /// Per-axis bound on `|dH/dq_i|` at `x`, i.e. the largest `|f_i|` over controls.
    fn partial_bounds(&self, x: &[f64; D]) -> [f64; D];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Time horizon (s).
    pub horizon: f64,
    /// Courant number in (0, 1].
    pub cfl: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { horizon: 2.0, cfl: 0.5 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Config(format!(
                "CFL number must lie in (0, 1], got {}",
                self.cfl
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub cfl: f64,
    /// Nominal time step (s).
    pub dt: f64,
    pub iterations: usize,
}

/// Values on the grid at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub horizon: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
}

struct Layout<const D: usize> {
    counts: [usize; D],
    strides: [usize; D],
    steps: [f64; D],
    nodes: Vec<Vec<f64>>,
}

impl<const D: usize> Layout<D> {
    fn new(axes: &[GridAxis; D]) -> Self {
        let counts = axes.map(|a| a.count());
        let mut strides = [1usize; D];
        for i in (0..D.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        Self {
            counts,
            strides,
            steps: axes.map(|a| a.step()),
            nodes: axes
                .iter()
                .map(|a| (0..a.count()).map(|i| a.node(i)).collect())
                .collect(),
        }
    }

    fn len(&self) -> usize {
        self.counts.iter().product()
    }

    #[inline]
    fn unravel(&self, mut n: usize) -> [usize; D] {
        let mut idx = [0; D];
        for i in (0..D).rev() {
            idx[i] = n % self.counts[i];
            n /= self.counts[i];
        }
        idx
    }

    #[inline]
    fn point(&self, idx: &[usize; D]) -> [f64; D] {
        let mut x = [0.0; D];
        for i in 0..D {
            x[i] = self.nodes[i][idx[i]];
        }
        x
    }
}

/// Solves up to each horizon in `horizons` (ascending, non-negative) and
/// returns the values there. Iterates land exactly on every horizon.
pub fn solve_checkpoints<const D: usize, S: HjSystem<D>>(
    system: &S,
    axes: &[GridAxis; D],
    cfl: f64,
    horizons: &[f64],
) -> Result<(Vec<Snapshot>, SolveStats)> {
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::Config(format!("CFL number must lie in (0, 1], got {cfl}")));
    }
    if horizons.iter().any(|h| !(h.is_finite() && *h >= 0.0)) || horizons.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(
            "horizons must be finite, non-negative and ascending".into(),
        ));
    }
    let layout = Layout::new(axes);
    let n = layout.len();

    let mut v: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| system.target(&layout.point(&layout.unravel(i))))
        .collect();
    let alpha: Vec<[f64; D]> = (0..n)
        .into_par_iter()
        .map(|i| system.partial_bounds(&layout.point(&layout.unravel(i))))
        .collect();

    let mut max_alpha = [0.0f64; D];
    for a in &alpha {
        for i in 0..D {
            max_alpha[i] = max_alpha[i].max(a[i]);
        }
    }
    let rate: f64 = (0..D).map(|i| max_alpha[i] / layout.steps[i]).sum();
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Solver(format!(
            "dissipation estimate unusable: per-axis maxima {max_alpha:?}"
        )));
    }
    let dt = cfl / rate;
    log::debug!("solver: {n} nodes, dt = {dt:.3e} s, dissipation maxima {max_alpha:?}");

    let mut next = vec![0.0; n];
    let mut tau = 0.0;
    let mut iterations = 0;
    let mut out = Vec::with_capacity(horizons.len());
    for &h in horizons {
        while h - tau > 1e-12 * h.max(1.0) {
            let step = dt.min(h - tau);
            advance(system, &layout, &alpha, &v, &mut next, step)?;
            std::mem::swap(&mut v, &mut next);
            tau = if h - tau <= dt { h } else { tau + dt };
            iterations += 1;
        }
        out.push(Snapshot {
            horizon: h,
            values: v.clone(),
            iterations,
        });
    }
    Ok((out, SolveStats { cfl, dt, iterations }))
}

/// Solves to a single horizon.
pub fn solve<const D: usize, S: HjSystem<D>>(
    system: &S,
    axes: &[GridAxis; D],
    config: &SolverConfig,
) -> Result<(Vec<f64>, SolveStats)> {
    config.validate()?;
    let (mut snaps, stats) = solve_checkpoints(system, axes, config.cfl, &[config.horizon])?;
    Ok((snaps.pop().map(|s| s.values).unwrap_or_default(), stats))
}

fn advance<const D: usize, S: HjSystem<D>>(
    system: &S,
    layout: &Layout<D>,
    alpha: &[[f64; D]],
    v: &[f64],
    next: &mut [f64],
    step: f64,
) -> Result<()> {
    let chunk = layout.strides[0].max(1);
    let bad = next
        .par_chunks_mut(chunk)
        .enumerate()
        .map(|(c, out)| {
            let mut bad = false;
            for (k, slot) in out.iter_mut().enumerate() {
                let n = c * chunk + k;
                let idx = layout.unravel(n);
                let x = layout.point(&idx);
                let mut q = [0.0; D];
                let mut diss = 0.0;
                for i in 0..D {
                    let s = layout.strides[i];
                    let h = layout.steps[i];
                    let (qm, qp) = if idx[i] == 0 {
                        let d = (v[n + s] - v[n]) / h;
                        (d, d)
                    } else if idx[i] + 1 == layout.counts[i] {
                        let d = (v[n] - v[n - s]) / h;
                        (d, d)
                    } else {
                        ((v[n] - v[n - s]) / h, (v[n + s] - v[n]) / h)
                    };
                    q[i] = 0.5 * (qp + qm);
                    diss += alpha[n][i] * 0.5 * (qp - qm);
                }
                let rate = (system.hamiltonian(&x, &q) + diss).min(0.0);
                let val = v[n] + step * rate;
                bad |= !val.is_finite();
                *slot = val;
            }
            bad
        })
        .reduce(|| false, |a, b| a || b);
    if bad {
        return Err(Error::Solver("value function became non-finite".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `x' = u`, `|u| <= 1` controlled by the pursuer: the unsafe set grows
    /// at unit speed.
    struct Drift;

    impl HjSystem<1> for Drift {
        fn target(&self, x: &[f64; 1]) -> f64 {
            x[0].abs() - 1.0
        }
        fn hamiltonian(&self, _x: &[f64; 1], q: &[f64; 1]) -> f64 {
            -q[0].abs()
        }
        fn partial_bounds(&self, _x: &[f64; 1]) -> [f64; 1] {
            [1.0]
        }
    }

    #[test]
    fn spreading_front() {
        let axes = [GridAxis::new(-5.0, 5.0, 0.05).unwrap()];
        let (snaps, _) = solve_checkpoints(&Drift, &axes, 0.5, &[0.0, 1.0, 2.0]).unwrap();
        for (i, v) in snaps[0].values.iter().enumerate() {
            assert_eq!(*v, Drift.target(&[axes[0].node(i)]));
        }
        // exact solution max(|x| - tau, 0) - 1; checked away from the kink
        // at the origin and the grid edge
        for s in &snaps[1..] {
            for (i, v) in s.values.iter().enumerate() {
                let x: f64 = axes[0].node(i);
                if x.abs() > s.horizon + 0.3 && x.abs() < 4.0 {
                    let exact = (x.abs() - s.horizon).max(0.0) - 1.0;
                    assert!((v - exact).abs() < 0.1, "x {x}: {v}");
                }
            }
            // zero level set sits at |x| = 1 + tau
            let front = axes[0].nearest(1.0 + s.horizon).unwrap();
            assert!(s.values[front].abs() < 0.1);
        }
        for (a, b) in snaps[1].values.iter().zip(&snaps[2].values) {
            assert!(b <= a);
        }
    }

    #[test]
    fn zero_dissipation_is_an_error() {
        struct Still;
        impl HjSystem<1> for Still {
            fn target(&self, x: &[f64; 1]) -> f64 {
                x[0]
            }
            fn hamiltonian(&self, _x: &[f64; 1], _q: &[f64; 1]) -> f64 {
                0.0
            }
            fn partial_bounds(&self, _x: &[f64; 1]) -> [f64; 1] {
                [0.0]
            }
        }
        let axes = [GridAxis::new(0.0, 1.0, 0.1).unwrap()];
        assert!(matches!(
            solve(&Still, &axes, &SolverConfig::default()),
            Err(Error::Solver(_))
        ));
    }
}
