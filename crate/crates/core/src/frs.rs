//! Stochastic forward reachable set.
//!
//! Occupancy probabilities over the state grid are pushed forward one
//! prediction step at a time. The transition operator changes every step
//! with the forecast, so it is applied directly instead of being stored:
//! each active cell sends its mass along every admissible input to the
//! successor of its center.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::BeliefVector;
use crate::dynamics::{step_point_mass, PointMassState, VehicleGeometry};
use crate::error::{Error, Result};
use crate::grid::{CellBounds, CellIndex, GridAxis, InputConstraints, InputGrid, StateGrid};
use crate::predictor::{AccelerationForecast, ForecastStep};

/// Mode-weighted mass of an input cell under one forecast step with its
/// standard deviations scaled by `beta`.
pub fn mixture_cell_mass(step: &ForecastStep, beta: f64, bounds: &CellBounds) -> Result<f64> {
    let mut total = 0.0;
    for (mode, &lambda) in step.modes.iter().zip(&step.probs) {
        if lambda > 0.0 {
            total += lambda * mode.scale_confidence(beta)?.cell_mass(bounds);
        }
    }
    Ok(total)
}

/// Belief-weighted unnormalized mass of an input cell.
pub fn input_cell_mass(step: &ForecastStep, belief: &BeliefVector, bounds: &CellBounds) -> Result<f64> {
    let mut total = 0.0;
    for (beta, b) in belief.iter() {
        if b > 0.0 {
            total += b * mixture_cell_mass(step, beta, bounds)?;
        }
    }
    Ok(total)
}

/// Normalizes input masses into probabilities. All-zero (or non-finite)
/// totals fall back to a uniform distribution; the flag reports that case.
pub fn normalize_inputs(masses: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = masses.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        if !masses.is_empty() {
            log::warn!("all input masses vanish; using a uniform input distribution");
        }
        let n = masses.len().max(1) as f64;
        return (vec![1.0 / n; masses.len()], true);
    }
    (masses.iter().map(|m| m / total).collect(), false)
}

/// How a successor state's mass is assigned to grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepositRule {
    /// Whole mass to the cell containing the successor.
    #[default]
    Nearest,
    /// Mass split over the 16 surrounding nodes by multilinear weights.
    Multilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrsConfig {
    /// Cells at or below this probability are not propagated; their mass
    /// moves to the out-of-domain bucket.
    pub mass_threshold: f64,
    pub deposit: DepositRule,
    /// Source cells per work unit. Fixed so results do not depend on the
    /// number of workers.
    pub chunk_size: usize,
}

impl Default for FrsConfig {
    fn default() -> Self {
        Self {
            mass_threshold: 1e-9,
            deposit: DepositRule::Nearest,
            chunk_size: 2048,
        }
    }
}

/// Occupancy probabilities at one predicted step.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    pub step: usize,
    pub p: Vec<f64>,
    /// Mass that left the grid, including pruned mass.
    pub oob: f64,
    /// Cumulative mass dropped by the threshold (already counted in `oob`).
    pub pruned: f64,
}

impl ProbabilityField {
    pub fn empty(grid: &StateGrid) -> Self {
        Self {
            step: 0,
            p: vec![0.0; grid.len()],
            oob: 0.0,
            pruned: 0.0,
        }
    }

    /// All mass on the cell containing `state`.
    pub fn point_mass(grid: &StateGrid, state: &PointMassState) -> Result<Self> {
        let mut f = Self::empty(grid);
        match grid.index_of(&state.as_array())? {
            CellIndex::Cell(i) => f.p[i] = 1.0,
            CellIndex::OutOfDomain => f.oob = 1.0,
        }
        Ok(f)
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum::<f64>() + self.oob
    }

    /// Mass at one position cell, summed over velocities.
    pub fn position_mass(&self, grid: &StateGrid, iy1: usize, iy2: usize) -> f64 {
        let block = grid.velocity_cells();
        let start = grid.linear([iy1, iy2, 0, 0]);
        self.p[start..start + block].iter().sum()
    }

    pub fn nonzero(&self) -> usize {
        self.p.iter().filter(|&&x| x > 0.0).count()
    }
}

// Per-axis successor: lower node index and weight of the upper node.
#[derive(Debug, Clone, Copy)]
struct AxisTarget {
    lo: u32,
    w: f64,
}

const OUT: u32 = u32::MAX;

impl AxisTarget {
    fn build(axis: &GridAxis, x: f64, rule: DepositRule) -> Self {
        match (axis.nearest(x), rule) {
            (None, _) => Self { lo: OUT, w: 0.0 },
            (Some(i), DepositRule::Nearest) => Self { lo: i as u32, w: 0.0 },
            (Some(_), DepositRule::Multilinear) => {
                let (lo, w) = axis.bracket(x);
                Self { lo: lo as u32, w }
            }
        }
    }

    #[inline]
    fn corners(self) -> [(usize, f64); 2] {
        [(self.lo as usize, 1.0 - self.w), (self.lo as usize + 1, self.w)]
    }
}

/// Input probabilities of one step, listed per longitudinal-velocity index
/// as `(input cell, probability)`.
#[derive(Debug, Clone)]
pub struct StepInputs {
    per_v1: Vec<Vec<(u16, f64)>>,
    /// Set when every admissible mass vanished for some speed.
    pub degenerate: bool,
}

impl StepInputs {
    pub fn for_speed_index(&self, iv1: usize) -> &[(u16, f64)] {
        &self.per_v1[iv1]
    }
}

/// Forward reachable set engine for a fixed grid, input set and step.
#[derive(Clone)]
pub struct FrsEngine {
    grid: StateGrid,
    inputs: InputGrid,
    limits: InputConstraints,
    dt: f64,
    config: FrsConfig,
    pool: Option<Arc<rayon::ThreadPool>>,
    admissible: Vec<Vec<usize>>,
    y1_tab: Vec<AxisTarget>,
    v1_tab: Vec<AxisTarget>,
    y2_tab: Vec<AxisTarget>,
    v2_tab: Vec<AxisTarget>,
}

impl std::fmt::Debug for FrsEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrsEngine")
            .field("grid", &self.grid)
            .field("inputs", &self.inputs)
            .field("dt", &self.dt)
            .field("config", &self.config)
            .field("workers", &self.workers())
            .finish()
    }
}

impl FrsEngine {
    pub fn new(
        grid: StateGrid,
        inputs: InputGrid,
        limits: InputConstraints,
        dt: f64,
        config: FrsConfig,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("step must be positive, got {dt}")));
        }
        if !(config.mass_threshold >= 0.0) || config.chunk_size == 0 {
            return Err(Error::Config("invalid engine settings".into()));
        }
        if inputs.len() > u16::MAX as usize || grid.len() >= OUT as usize {
            return Err(Error::Config("grid too large".into()));
        }
        inputs.validate_constraints(&grid, &limits, dt)?;

        let (na1, na2) = (inputs.a1.count(), inputs.a2.count());
        let (ny1, ny2, nv1, nv2) = (grid.y1.count(), grid.y2.count(), grid.v1.count(), grid.v2.count());
        let rule = config.deposit;
        // A separable step: (y1, v1) depend only on a1 and (y2, v2) only on a2.
        let lon = |y: f64, v: f64, a: f64| step_point_mass(PointMassState::new(y, 0.0, v, 0.0), [a, 0.0], dt);
        let lat = |y: f64, v: f64, a: f64| step_point_mass(PointMassState::new(0.0, y, 1.0, v), [0.0, a], dt);

        let mut y1_tab = Vec::with_capacity(ny1 * nv1 * na1);
        for iy in 0..ny1 {
            for iv in 0..nv1 {
                for ia in 0..na1 {
                    let s = lon(grid.y1.node(iy), grid.v1.node(iv), inputs.a1.node(ia));
                    y1_tab.push(AxisTarget::build(&grid.y1, s.y1, rule));
                }
            }
        }
        let mut v1_tab = Vec::with_capacity(nv1 * na1);
        for iv in 0..nv1 {
            for ia in 0..na1 {
                let s = lon(0.0, grid.v1.node(iv), inputs.a1.node(ia));
                v1_tab.push(AxisTarget::build(&grid.v1, s.v1, rule));
            }
        }
        let mut y2_tab = Vec::with_capacity(ny2 * nv2 * na2);
        for iy in 0..ny2 {
            for iv in 0..nv2 {
                for ia in 0..na2 {
                    let s = lat(grid.y2.node(iy), grid.v2.node(iv), inputs.a2.node(ia));
                    y2_tab.push(AxisTarget::build(&grid.y2, s.y2, rule));
                }
            }
        }
        let mut v2_tab = Vec::with_capacity(nv2 * na2);
        for iv in 0..nv2 {
            for ia in 0..na2 {
                let s = lat(0.0, grid.v2.node(iv), inputs.a2.node(ia));
                v2_tab.push(AxisTarget::build(&grid.v2, s.v2, rule));
            }
        }

        let floor = grid.v1.min();
        let admissible = (0..nv1)
            .map(|iv| {
                (0..inputs.len())
                    .filter(|&u| inputs.is_admissible(u, grid.v1.node(iv), &limits, dt, floor))
                    .collect()
            })
            .collect();

        Ok(Self {
            grid,
            inputs,
            limits,
            dt,
            config,
            pool: None,
            admissible,
            y1_tab,
            v1_tab,
            y2_tab,
            v2_tab,
        })
    }

    /// Runs propagation on a dedicated pool of `workers` threads; 1 means
    /// sequential. Output does not depend on the worker count.
    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        self.pool = if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Some(Arc::new(pool))
        } else {
            None
        };
        Ok(self)
    }

    pub fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn inputs(&self) -> &InputGrid {
        &self.inputs
    }

    pub fn limits(&self) -> &InputConstraints {
        &self.limits
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn config(&self) -> &FrsConfig {
        &self.config
    }

    /// Admissible input cells at the longitudinal speed of a state.
    pub fn admissible_at(&self, v1: f64) -> Vec<usize> {
        let floor = self.grid.v1.min();
        (0..self.inputs.len())
            .filter(|&u| self.inputs.is_admissible(u, v1, &self.limits, self.dt, floor))
            .collect()
    }

    /// Normalized input probabilities for one forecast step.
    pub fn step_inputs(&self, step: &ForecastStep, belief: &BeliefVector) -> Result<StepInputs> {
        let masses = (0..self.inputs.len())
            .map(|u| input_cell_mass(step, belief, &self.inputs.bounds(u)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.inputs_from_masses(&masses))
    }

    /// Per-speed normalization of unnormalized input-cell masses.
    pub fn inputs_from_masses(&self, masses: &[f64]) -> StepInputs {
        let mut degenerate = false;
        let per_v1 = self
            .admissible
            .iter()
            .map(|adm| {
                let m: Vec<f64> = adm.iter().map(|&u| masses[u]).collect();
                let (p, d) = normalize_inputs(&m);
                degenerate |= d;
                adm.iter()
                    .zip(p)
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(&u, p)| (u as u16, p))
                    .collect()
            })
            .collect();
        StepInputs { per_v1, degenerate }
    }

    /// One propagation step.
    pub fn step_field(&self, field: &ProbabilityField, inputs: &StepInputs) -> ProbabilityField {
        let thr = self.config.mass_threshold;
        let mut active = Vec::new();
        let mut pruned = 0.0;
        for (i, &p) in field.p.iter().enumerate() {
            if p > thr {
                active.push(i as u32);
            } else if p > 0.0 {
                pruned += p;
            }
        }
        let mut out = vec![0.0; field.p.len()];
        let mut oob = field.oob + pruned;
        let chunks = active.chunks(self.config.chunk_size);
        match &self.pool {
            None => {
                for chunk in chunks {
                    let mut chunk_oob = 0.0;
                    for &i in chunk {
                        self.scatter(i as usize, field.p[i as usize], inputs, &mut chunk_oob, |j, m| {
                            out[j] += m
                        });
                    }
                    oob += chunk_oob;
                }
            }
            Some(pool) => {
                let parts: Vec<(Vec<(u32, f64)>, f64)> = pool.install(|| {
                    chunks
                        .collect::<Vec<_>>()
                        .into_par_iter()
                        .map(|chunk| {
                            let mut deposits = Vec::with_capacity(chunk.len() * 32);
                            let mut chunk_oob = 0.0;
                            for &i in chunk {
                                self.scatter(i as usize, field.p[i as usize], inputs, &mut chunk_oob, |j, m| {
                                    deposits.push((j as u32, m))
                                });
                            }
                            (deposits, chunk_oob)
                        })
                        .collect()
                });
                for (deposits, chunk_oob) in parts {
                    for (j, m) in deposits {
                        out[j as usize] += m;
                    }
                    oob += chunk_oob;
                }
            }
        }
        ProbabilityField {
            step: field.step + 1,
            p: out,
            oob,
            pruned: field.pruned + pruned,
        }
    }

    #[inline]
    fn scatter(&self, src: usize, mass: f64, inputs: &StepInputs, oob: &mut f64, mut emit: impl FnMut(usize, f64)) {
        let g = &self.grid;
        let [a, b, c, d] = g.unravel(src);
        let (nv1, nv2) = (g.v1.count(), g.v2.count());
        let (na1, na2) = (self.inputs.a1.count(), self.inputs.a2.count());
        for &(u, pu) in inputs.for_speed_index(c) {
            let m = mass * pu;
            let (i1, i2) = (u as usize / na2, u as usize % na2);
            let ty1 = self.y1_tab[(a * nv1 + c) * na1 + i1];
            let tv1 = self.v1_tab[c * na1 + i1];
            let ty2 = self.y2_tab[(b * nv2 + d) * na2 + i2];
            let tv2 = self.v2_tab[d * na2 + i2];
            if ty1.lo == OUT || tv1.lo == OUT || ty2.lo == OUT || tv2.lo == OUT {
                *oob += m;
                continue;
            }
            match self.config.deposit {
                DepositRule::Nearest => emit(
                    g.linear([ty1.lo as usize, ty2.lo as usize, tv1.lo as usize, tv2.lo as usize]),
                    m,
                ),
                DepositRule::Multilinear => {
                    for (j0, w0) in ty1.corners() {
                        for (j1, w1) in ty2.corners() {
                            for (j2, w2) in tv1.corners() {
                                for (j3, w3) in tv2.corners() {
                                    let w = w0 * w1 * w2 * w3;
                                    if w > 0.0 {
                                        emit(g.linear([j0, j1, j2, j3]), m * w);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Fields at steps `1..=n` for a forecast with `n` steps.
    pub fn propagate(
        &self,
        initial: &ProbabilityField,
        forecast: &AccelerationForecast,
        belief: &BeliefVector,
    ) -> Result<Vec<ProbabilityField>> {
        if (forecast.dt - self.dt).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "forecast step {} differs from engine step {}",
                forecast.dt, self.dt
            )));
        }
        let mut fields = Vec::with_capacity(forecast.steps.len());
        let mut current = initial.clone();
        for k in 0..forecast.steps.len() {
            let inputs = self.step_inputs(forecast.step(k)?, belief)?;
            current = self.step_field(&current, &inputs);
            fields.push(current.clone());
        }
        Ok(fields)
    }
}

/// Position cells covered by the ego footprint inflated by the surrounding
/// vehicle's dimensions; every velocity cell at those positions belongs to
/// the set.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySet {
    pub step: usize,
    pub positions: Vec<(usize, usize)>,
}

pub fn occupancy_set(
    step: usize,
    ego_position: [f64; 2],
    ego: &VehicleGeometry,
    sur: &VehicleGeometry,
    grid: &StateGrid,
) -> OccupancySet {
    const TIE: f64 = 1e-9;
    let half_l = 0.5 * (ego.length + sur.length);
    let half_w = 0.5 * (ego.width + sur.width);
    let mut positions = Vec::new();
    for i in 0..grid.y1.count() {
        if (grid.y1.node(i) - ego_position[0]).abs() > half_l + TIE {
            continue;
        }
        for j in 0..grid.y2.count() {
            if (grid.y2.node(j) - ego_position[1]).abs() <= half_w + TIE {
                positions.push((i, j));
            }
        }
    }
    OccupancySet { step, positions }
}

impl OccupancySet {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of state cells in the set.
    pub fn len(&self, grid: &StateGrid) -> usize {
        self.positions.len() * grid.velocity_cells()
    }

    pub fn cells<'a>(&'a self, grid: &'a StateGrid) -> impl Iterator<Item = usize> + 'a {
        let block = grid.velocity_cells();
        self.positions.iter().flat_map(move |&(i, j)| {
            let start = grid.linear([i, j, 0, 0]);
            start..start + block
        })
    }

    pub fn mass(&self, field: &ProbabilityField, grid: &StateGrid) -> f64 {
        self.positions
            .iter()
            .map(|&(i, j)| field.position_mass(grid, i, j))
            .sum()
    }
}

/// Probability of collision within the horizon from per-step overlap masses:
/// `1 - prod_k (1 - s_k)`.
pub fn collision_probability(step_sums: &[f64]) -> f64 {
    let mut survive = 1.0;
    for &s in step_sums {
        let s = if s > 1.0 {
            // Rounding alone stays far below this.
            if s > 1.0 + 1e-9 {
                log::warn!("collision mass {s} exceeds one; clamping");
            }
            1.0
        } else {
            s.max(0.0)
        };
        survive *= 1.0 - s;
    }
    1.0 - survive
}

/// Mass on the actual position cell and its four axis neighbors.
pub fn position_accuracy(field: &ProbabilityField, grid: &StateGrid, actual: &PointMassState) -> f64 {
    let (Some(i), Some(j)) = (grid.y1.nearest(actual.y1), grid.y2.nearest(actual.y2)) else {
        return 0.0;
    };
    let (i, j) = (i as isize, j as isize);
    [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]
        .iter()
        .map(|(di, dj)| (i + di, j + dj))
        .filter(|&(a, b)| a >= 0 && b >= 0 && (a as usize) < grid.y1.count() && (b as usize) < grid.y2.count())
        .map(|(a, b)| field.position_mass(grid, a as usize, b as usize))
        .sum()
}

/// Writes cells with probability strictly above `min_p` as CSV
/// (`y1,y2,v1,v2,p`).
pub fn write_field_csv<W: Write>(field: &ProbabilityField, grid: &StateGrid, min_p: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["y1", "y2", "v1", "v2", "p"])?;
    for (i, &p) in field.p.iter().enumerate() {
        if p > min_p {
            let c = grid.cell_center(i);
            w.serialize((c[0], c[1], c[2], c[3], p))?;
        }
    }
    w.flush()?;
    Ok(())
}
