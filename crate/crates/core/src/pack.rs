//! Series-parallel pack: Kirchhoff current split, power-to-current
//! conversion, BMS enforcement, and rowhammer string/cell targeting.
//!
//! Cells are stored string-major: cell `(s, p)` lives at `p * n_series + s`.
//! All cells in a string carry the string current; all strings share the pack
//! terminal voltage.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{
    self, step_with_kinetics, CellError, CellParams, CellState, Electrical, Regime, MAX_DT, MAX_DV_PER_STEP,
};
use crate::num::{Real, SECONDS_PER_HOUR};

pub const MAX_NEWTON_ITERATIONS: usize = 100;
pub const MAX_POWER_ITERATIONS: usize = 20;
/// Halvings attempted when a step blows up before giving up.
const MAX_RETRY_DEPTH: u32 = 6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PackError {
    #[error("current split did not converge after {iterations} iterations (residual {residual:e} A)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("power demand {power} W cannot be met within the {max_current} A limit")]
    DemandInfeasible { power: f64, max_current: f64 },
    #[error("cell ({series}, {parallel}): {source}")]
    Cell {
        series: usize,
        parallel: usize,
        #[source]
        source: CellError,
    },
    #[error("invalid pack topology: {0}")]
    InvalidTopology(String),
    #[error("invalid BMS configuration: {0}")]
    InvalidBms(String),
    #[error("invalid rowhammer target: {0}")]
    InvalidTarget(String),
    #[error("targeted string {string} is isolated (end of life or copper dissolution)")]
    TargetIsolated { string: usize },
    #[error("per-cell current vector has {found} entries, pack has {expected} cells")]
    CurrentShape { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PackTopology<T> {
    pub n_series: usize,
    pub n_parallel: usize,
    /// String-major, `n_series * n_parallel` entries.
    pub cells: Vec<CellState<T>>,
    pub params: CellParams<T>,
}

impl<T: Real> PackTopology<T> {
    /// Pack of identical cells.
    pub fn uniform(
        n_series: usize,
        n_parallel: usize,
        params: CellParams<T>,
        cell: CellState<T>,
    ) -> Result<Self, PackError> {
        let pack = Self {
            n_series,
            n_parallel,
            cells: vec![cell; n_series * n_parallel],
            params,
        };
        pack.validate()?;
        Ok(pack)
    }

    /// Applies a seeded manufacturing spread: each cell's capacity is scaled by
    /// a uniform draw from `1 ± spread`.
    pub fn with_capacity_spread(mut self, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in &mut self.cells {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            c.capacity_scale = T::lit(1.0 + spread * u);
        }
        self
    }

    pub fn validate(&self) -> Result<(), PackError> {
        if self.n_series == 0 || self.n_parallel == 0 {
            return Err(PackError::InvalidTopology(format!(
                "need at least 1s1p, got {}s{}p",
                self.n_series, self.n_parallel
            )));
        }
        if self.cells.len() != self.n_series * self.n_parallel {
            return Err(PackError::InvalidTopology(format!(
                "{} cells for {}s{}p",
                self.cells.len(),
                self.n_series,
                self.n_parallel
            )));
        }
        self.params
            .validate()
            .map_err(|e| PackError::InvalidTopology(e.to_string()))?;
        if let Some(c) = self.cells.iter().find(|c| !(c.capacity_scale > T::zero())) {
            return Err(PackError::InvalidTopology(format!(
                "capacity scale must be positive, got {:?}",
                c.capacity_scale
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, series: usize, parallel: usize) -> usize {
        parallel * self.n_series + series
    }

    pub fn cell(&self, series: usize, parallel: usize) -> &CellState<T> {
        &self.cells[self.index(series, parallel)]
    }

    pub fn string(&self, parallel: usize) -> &[CellState<T>] {
        let start = parallel * self.n_series;
        &self.cells[start..start + self.n_series]
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Open-circuit energy content of the fresh pack (Wh).
    pub fn nominal_energy_wh(&self) -> T {
        let per_cell = self.params.nominal_energy_wh();
        self.cells.iter().map(|c| c.capacity_scale * per_cell).sum()
    }

    pub fn mean_soc(&self) -> T {
        self.cells.iter().map(|c| c.soc).sum::<T>() / T::lit(self.cells.len() as f64)
    }

    pub fn min_soc(&self) -> T {
        self.cells.iter().map(|c| c.soc).fold(T::infinity(), T::min)
    }

    pub fn max_temperature(&self) -> T {
        self.cells.iter().map(|c| c.temperature).fold(T::neg_infinity(), T::max)
    }

    /// Expands per-string currents to per-cell currents.
    pub fn cell_currents(&self, string_currents: &[T]) -> Vec<T> {
        string_currents
            .iter()
            .flat_map(|&i| std::iter::repeat_n(i, self.n_series))
            .collect()
    }

    pub fn cast<U: Real>(&self) -> PackTopology<U> {
        PackTopology {
            n_series: self.n_series,
            n_parallel: self.n_parallel,
            cells: self.cells.iter().map(|c| c.cast()).collect(),
            params: self.params.cast(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BmsConfig<T> {
    pub v_min_cell: T,
    pub v_max_cell: T,
    /// Pack terminal current limit (A).
    pub max_current: T,
    pub lower_cutoff_overridden: bool,
    pub upper_cutoff_overridden: bool,
    /// Elevation of the charge limit applied by a compromised BMS (V per cell).
    pub overcharge_offset: T,
}

impl<T: Real> BmsConfig<T> {
    pub fn validate(&self) -> Result<(), PackError> {
        if !(self.v_min_cell < self.v_max_cell) {
            return Err(PackError::InvalidBms("v_min_cell must be below v_max_cell".into()));
        }
        if !(self.max_current > T::zero()) {
            return Err(PackError::InvalidBms("max_current must be positive".into()));
        }
        if !(self.overcharge_offset >= T::zero() && self.overcharge_offset <= T::lit(0.5)) {
            return Err(PackError::InvalidBms(format!(
                "overcharge_offset {:?} outside [0, 0.5] V",
                self.overcharge_offset
            )));
        }
        if self.overcharge_offset > T::zero() && !self.upper_cutoff_overridden {
            return Err(PackError::InvalidBms(
                "overcharge_offset requires upper_cutoff_overridden".into(),
            ));
        }
        Ok(())
    }

    /// Highest cell voltage the BMS tolerates while charging.
    pub fn charge_voltage_limit(&self) -> T {
        if self.upper_cutoff_overridden {
            self.v_max_cell + self.overcharge_offset
        } else {
            self.v_max_cell
        }
    }

    pub fn cast<U: Real>(&self) -> BmsConfig<U> {
        BmsConfig {
            v_min_cell: crate::num::cast(self.v_min_cell),
            v_max_cell: crate::num::cast(self.v_max_cell),
            max_current: crate::num::cast(self.max_current),
            lower_cutoff_overridden: self.lower_cutoff_overridden,
            upper_cutoff_overridden: self.upper_cutoff_overridden,
            overcharge_offset: crate::num::cast(self.overcharge_offset),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub enum BmsDecision<T> {
    Allow,
    /// Current reduced to the hardware limit (signed).
    Clamp(T),
    Terminate,
}

/// Strings (and optionally individual cells) an attacker concentrates load on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTarget")]
pub struct RowhammerTarget {
    strings: BTreeSet<usize>,
    cells: Option<BTreeSet<(usize, usize)>>,
}

#[derive(Deserialize)]
struct RawTarget {
    strings: BTreeSet<usize>,
    #[serde(default)]
    cells: Option<BTreeSet<(usize, usize)>>,
}

impl TryFrom<RawTarget> for RowhammerTarget {
    type Error = PackError;
    fn try_from(raw: RawTarget) -> Result<Self, PackError> {
        Self::new(raw.strings, raw.cells)
    }
}

impl RowhammerTarget {
    /// `cells`, when given, are `(series, parallel)` coordinates and must lie in targeted strings.
    pub fn new(strings: BTreeSet<usize>, cells: Option<BTreeSet<(usize, usize)>>) -> Result<Self, PackError> {
        if strings.is_empty() {
            return Err(PackError::InvalidTarget("no strings targeted".into()));
        }
        if let Some(cells) = &cells {
            if cells.is_empty() {
                return Err(PackError::InvalidTarget("empty cell set".into()));
            }
            if let Some((s, p)) = cells.iter().find(|(_, p)| !strings.contains(p)) {
                return Err(PackError::InvalidTarget(format!(
                    "cell ({s}, {p}) is not in a targeted string"
                )));
            }
        }
        Ok(Self { strings, cells })
    }

    pub fn strings(strings: impl IntoIterator<Item = usize>) -> Result<Self, PackError> {
        Self::new(strings.into_iter().collect(), None)
    }

    pub fn all_strings(n_parallel: usize) -> Result<Self, PackError> {
        Self::strings(0..n_parallel)
    }

    pub fn string_set(&self) -> &BTreeSet<usize> {
        &self.strings
    }

    pub fn cell_set(&self) -> Option<&BTreeSet<(usize, usize)>> {
        self.cells.as_ref()
    }

    pub fn validate_for<T: Real>(&self, pack: &PackTopology<T>) -> Result<(), PackError> {
        if let Some(&p) = self.strings.iter().find(|&&p| p >= pack.n_parallel) {
            return Err(PackError::InvalidTarget(format!(
                "string {p} out of range for {} strings",
                pack.n_parallel
            )));
        }
        if let Some(cells) = &self.cells {
            if let Some(&(s, _)) = cells.iter().find(|(s, _)| *s >= pack.n_series) {
                return Err(PackError::InvalidTarget(format!(
                    "series index {s} out of range for {} cells per string",
                    pack.n_series
                )));
            }
        }
        Ok(())
    }
}

/// Current-independent electricals of every cell, plus per-string sums that
/// make string voltage evaluation O(1) in the string length.
#[derive(Debug, Clone)]
pub struct PackElectrics<T> {
    pub cells: Vec<Electrical<T>>,
    n_series: usize,
    strings: Vec<StringSums<T>>,
    i0_anode: T,
    i0_cathode: T,
}

#[derive(Debug, Clone, Copy)]
struct StringSums<T> {
    ocv: T,
    thermal_voltage: T,
    resistance: T,
}

impl<T: Real> PackElectrics<T> {
    pub fn new(pack: &PackTopology<T>) -> Self {
        let cells: Vec<Electrical<T>> = pack.cells.iter().map(|c| Electrical::new(c, &pack.params)).collect();
        let strings = cells
            .chunks(pack.n_series)
            .map(|chunk| StringSums {
                ocv: chunk.iter().map(|e| e.ocv).sum(),
                thermal_voltage: chunk.iter().map(|e| e.thermal_voltage).sum(),
                resistance: chunk.iter().map(|e| e.r_ohmic).sum(),
            })
            .collect();
        Self {
            cells,
            n_series: pack.n_series,
            strings,
            i0_anode: pack.params.exchange_current_anode * pack.params.electrode_area,
            i0_cathode: pack.params.exchange_current_cathode * pack.params.electrode_area,
        }
    }

    pub fn n_parallel(&self) -> usize {
        self.strings.len()
    }

    /// Sum of the two `asinh` kinetic terms per unit thermal voltage, and its derivative.
    #[inline]
    fn kinetics(&self, current: T) -> (T, T) {
        let two = T::lit(2.0);
        let xa = current / (two * self.i0_anode);
        let xc = current / (two * self.i0_cathode);
        let value = two * (xa.asinh() + xc.asinh());
        let slope =
            (T::one() + xa * xa).sqrt().recip() / self.i0_anode + (T::one() + xc * xc).sqrt().recip() / self.i0_cathode;
        (value, slope)
    }

    /// Terminal voltage of string `p` at string current `current`.
    #[inline]
    pub fn string_voltage(&self, p: usize, current: T) -> T {
        let s = &self.strings[p];
        let (k, _) = self.kinetics(current);
        s.ocv - s.thermal_voltage * k - current * s.resistance
    }

    /// (voltage, dV/dI) of string `p`.
    #[inline]
    fn string_eval(&self, p: usize, current: T) -> (T, T) {
        let s = &self.strings[p];
        let (k, dk) = self.kinetics(current);
        (
            s.ocv - s.thermal_voltage * k - current * s.resistance,
            -(s.thermal_voltage * dk + s.resistance),
        )
    }

    pub fn string_open_circuit_voltage(&self, p: usize) -> T {
        self.strings[p].ocv
    }

    /// (min, max) cell terminal voltage given per-string currents.
    pub fn cell_voltage_extremes(&self, string_currents: &[T]) -> (T, T) {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for (p, &i) in string_currents.iter().enumerate() {
            let (k, _) = self.kinetics(i);
            for e in &self.cells[p * self.n_series..(p + 1) * self.n_series] {
                let v = e.ocv - e.thermal_voltage * k - i * e.r_ohmic;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// Newton solve for the currents of the strings in `active` such that they
    /// share one terminal voltage and sum to `total`. Returns the currents (in
    /// `active` order) and the common voltage.
    pub fn solve_split(&self, active: &[usize], total: T, warm: Option<&[T]>) -> Result<(Vec<T>, T), PackError> {
        let k = active.len();
        assert!(k > 0, "at least one active string");
        if k == 1 {
            return Ok((vec![total], self.string_voltage(active[0], total)));
        }
        let mut currents: Vec<T> = match warm {
            Some(w) if w.len() == k => w.to_vec(),
            _ => vec![total / T::lit(k as f64); k],
        };
        let tol = T::solver_tolerance(1e-9, total);
        // Newton step for the reduced system: linearise each string, solve the
        // common voltage that makes the linearised currents sum to `total`.
        let newton = |currents: &[T]| -> (Vec<T>, T, T) {
            let evals = active.iter().zip(currents).map(|(&p, &i)| self.string_eval(p, i));
            let (mut inv_g, mut weighted) = (T::zero(), T::zero());
            let mut vg = Vec::with_capacity(k);
            for (v, g) in evals {
                inv_g = inv_g + g.recip();
                weighted = weighted + v / g;
                vg.push((v, g));
            }
            let sum_i: T = currents.iter().copied().sum();
            let v_common = (total - sum_i + weighted) / inv_g;
            let steps: Vec<T> = vg.iter().map(|(v, g)| (v_common - *v) / *g).collect();
            let norm = steps.iter().fold(T::zero(), |m, d| m.max(d.abs()));
            (steps, v_common, norm)
        };
        let (mut steps, mut v_common, mut residual) = newton(&currents);
        for _ in 0..MAX_NEWTON_ITERATIONS {
            if residual <= tol {
                // Remove accumulated rounding so the sum is exact to the last ulp.
                let drift = (total - currents.iter().copied().sum::<T>()) / T::lit(k as f64);
                for c in &mut currents {
                    *c = *c + drift;
                }
                return Ok((currents, v_common));
            }
            // Damped update: halve the step until the Newton residual decreases.
            let mut lambda = T::one();
            loop {
                let trial: Vec<T> = currents.iter().zip(&steps).map(|(&i, &d)| i + lambda * d).collect();
                let (t_steps, t_v, t_res) = newton(&trial);
                if t_res < residual || lambda < T::lit(1e-4) {
                    currents = trial;
                    steps = t_steps;
                    v_common = t_v;
                    residual = t_res;
                    break;
                }
                lambda = lambda * T::lit(0.5);
            }
        }
        Err(PackError::NoConvergence {
            iterations: MAX_NEWTON_ITERATIONS,
            residual: residual.as_f64(),
        })
    }

    /// Splits `total` over all strings.
    pub fn split(&self, total: T, warm: Option<&[T]>) -> Result<(Vec<T>, T), PackError> {
        let all: Vec<usize> = (0..self.n_parallel()).collect();
        self.solve_split(&all, total, warm)
    }

    /// Pack current delivering `power` (W, + discharge) at the pack terminals, by
    /// fixed-point iteration I = P / V(I). Returns (current, string currents, voltage).
    pub fn current_for_power(&self, power: T, max_current: T) -> Result<(T, Vec<T>, T), PackError> {
        let infeasible = || PackError::DemandInfeasible {
            power: power.as_f64(),
            max_current: max_current.as_f64(),
        };
        if power == T::zero() {
            let (split, v) = self.split(T::zero(), None)?;
            return Ok((T::zero(), split, v));
        }
        let n = T::lit(self.n_parallel() as f64);
        let v_oc = self.strings.iter().map(|s| s.ocv).sum::<T>() / n;
        let mut current = power / v_oc;
        let mut warm: Option<Vec<T>> = None;
        for _ in 0..MAX_POWER_ITERATIONS {
            if !(current.abs() <= max_current * T::lit(1.5)) || !current.is_finite() {
                return Err(infeasible());
            }
            let (split, v) = self.split(current, warm.as_deref())?;
            if !(v > T::zero()) {
                return Err(infeasible());
            }
            let next = power / v;
            let tol = T::solver_tolerance(1e-10, next);
            if (next - current).abs() <= tol {
                if next.abs() > max_current {
                    return Err(infeasible());
                }
                let (split, v) = self.split(next, Some(&split))?;
                return Ok((next, split, v));
            }
            warm = Some(split);
            current = next;
        }
        Err(infeasible())
    }
}

/// Kirchhoff-consistent per-string currents for a pack terminal current.
pub fn split_pack_current<T: Real>(pack: &PackTopology<T>, total_current: T) -> Result<Vec<T>, PackError> {
    pack.validate()?;
    Ok(PackElectrics::new(pack).split(total_current, None)?.0)
}

fn decide<T: Real>(elec: &PackElectrics<T>, bms: &BmsConfig<T>, proposed: T) -> BmsDecision<T> {
    let mut decision = BmsDecision::Allow;
    let mut current = proposed;
    if current.abs() > bms.max_current {
        current = bms.max_current.copysign(current);
        decision = BmsDecision::Clamp(current);
    }
    if current == T::zero() {
        return decision;
    }
    let Ok((split, _)) = elec.split(current, None) else {
        return BmsDecision::Terminate;
    };
    let (lo, hi) = elec.cell_voltage_extremes(&split);
    let slack = T::lit(cell::VOLTAGE_SLACK);
    if current < T::zero() && hi > bms.charge_voltage_limit() + slack {
        return BmsDecision::Terminate;
    }
    if current > T::zero() && !bms.lower_cutoff_overridden && lo < bms.v_min_cell - slack {
        return BmsDecision::Terminate;
    }
    decision
}

/// BMS verdict on a proposed terminal current (A, + discharge).
pub fn check_bms<T: Real>(pack: &PackTopology<T>, bms: &BmsConfig<T>, proposed_current: T) -> BmsDecision<T> {
    decide(&PackElectrics::new(pack), bms, proposed_current)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PackStepResult<T> {
    /// Pack terminal current actually drawn (A, + discharge).
    pub current: T,
    pub terminal_voltage: T,
    pub string_currents: Vec<T>,
    pub decision: BmsDecision<T>,
    pub min_cell_voltage: T,
    pub max_cell_voltage: T,
    pub min_plating_potential: T,
    pub max_temperature: T,
    /// Most severe regime over all cells (Normal < Overcharge < Overdischarge < CopperDissolution).
    pub worst_regime: Regime,
    /// Sub-steps actually taken.
    pub substeps: u32,
}

impl<T: Real> PackStepResult<T> {
    fn merge(&mut self, later: PackStepResult<T>) {
        self.min_cell_voltage = self.min_cell_voltage.min(later.min_cell_voltage);
        self.max_cell_voltage = self.max_cell_voltage.max(later.max_cell_voltage);
        self.min_plating_potential = self.min_plating_potential.min(later.min_plating_potential);
        self.max_temperature = self.max_temperature.max(later.max_temperature);
        self.worst_regime = self.worst_regime.max(later.worst_regime);
        self.substeps += later.substeps;
        if later.decision == BmsDecision::Terminate {
            self.decision = BmsDecision::Terminate;
        }
        self.current = later.current;
        self.terminal_voltage = later.terminal_voltage;
        self.string_currents = later.string_currents;
    }
}

fn check_dt<T: Real>(dt: T) -> Result<(), PackError> {
    if !(dt > T::zero() && dt <= T::lit(MAX_DT)) {
        return Err(PackError::Cell {
            series: 0,
            parallel: 0,
            source: CellError::InvalidTimestep(dt.as_f64()),
        });
    }
    Ok(())
}

/// Number of equal sub-steps needed so no cell's open-circuit voltage moves by
/// more than [`MAX_DV_PER_STEP`] in one sub-step.
fn substeps_needed<T: Real>(elec: &PackElectrics<T>, cell_currents: &[T], dt: T) -> u32 {
    let mut worst = T::zero();
    for (e, &i) in elec.cells.iter().zip(cell_currents) {
        let dv = e.ocv_slope.abs() * i.abs() / e.capacity * dt / T::lit(SECONDS_PER_HOUR);
        worst = worst.max(dv);
    }
    let n = (worst / T::lit(MAX_DV_PER_STEP)).ceil().to_u32().unwrap_or(u32::MAX);
    n.clamp(1, 1 << 12)
}

/// Steps every cell with its own current (string-major, one entry per cell).
fn step_cells_once<T: Real>(
    pack: &PackTopology<T>,
    elec: &PackElectrics<T>,
    cell_currents: &[T],
    ambient: T,
    dt: T,
) -> Result<(PackTopology<T>, CellSummary<T>), PackError> {
    let mut next = pack.clone();
    let mut summary = CellSummary::new();
    let mut kin = cell::Kinetics::new(&pack.params, T::zero());
    for (idx, ((c, e), &i)) in pack.cells.iter().zip(&elec.cells).zip(cell_currents).enumerate() {
        if kin.current != i {
            kin = cell::Kinetics::new(&pack.params, i);
        }
        let (n, r) = step_with_kinetics(c, &pack.params, e, &kin, ambient, dt).map_err(|source| PackError::Cell {
            series: idx % pack.n_series,
            parallel: idx / pack.n_series,
            source,
        })?;
        summary.absorb(&r, n.temperature);
        next.cells[idx] = n;
    }
    Ok((next, summary))
}

#[derive(Debug, Clone, Copy)]
struct CellSummary<T> {
    min_v: T,
    max_v: T,
    min_phi: T,
    max_t: T,
    worst: Regime,
}

impl<T: Real> CellSummary<T> {
    fn new() -> Self {
        Self {
            min_v: T::infinity(),
            max_v: T::neg_infinity(),
            min_phi: T::infinity(),
            max_t: T::neg_infinity(),
            worst: Regime::Normal,
        }
    }

    fn absorb(&mut self, r: &cell::StepResult<T>, temperature: T) {
        self.min_v = self.min_v.min(r.terminal_voltage);
        self.max_v = self.max_v.max(r.terminal_voltage);
        self.min_phi = self.min_phi.min(r.li_plating_potential);
        self.max_t = self.max_t.max(temperature);
        self.worst = self.worst.max(r.regime);
    }
}

/// How the pack terminal current is chosen for a step.
#[derive(Debug, Clone, Copy)]
enum Demand<T> {
    Power(T),
    Current(T),
}

/// One pack step under `demand`. With `subdivide`, first splits `dt` into
/// equal sub-steps if the voltage would move too far; always retries with
/// halved steps when a cell state blows up.
fn step_demand<T: Real>(
    pack: &PackTopology<T>,
    bms: &BmsConfig<T>,
    demand: Demand<T>,
    ambient: T,
    dt: T,
    depth: u32,
    subdivide: bool,
) -> Result<(PackTopology<T>, PackStepResult<T>), PackError> {
    let elec = PackElectrics::new(pack);
    let (current, decision) = match demand {
        Demand::Power(p) => {
            let (i, _, _) = elec.current_for_power(p, bms.max_current)?;
            match decide(&elec, bms, i) {
                BmsDecision::Clamp(_) => {
                    return Err(PackError::DemandInfeasible {
                        power: p.as_f64(),
                        max_current: bms.max_current.as_f64(),
                    })
                }
                d => (i, d),
            }
        }
        Demand::Current(i) => match decide(&elec, bms, i) {
            BmsDecision::Clamp(c) => (c, BmsDecision::Clamp(c)),
            d => (i, d),
        },
    };
    let current = if decision == BmsDecision::Terminate {
        T::zero()
    } else {
        current
    };
    let (split, voltage) = elec.split(current, None)?;
    let cell_currents = pack.cell_currents(&split);

    let n = if subdivide {
        substeps_needed(&elec, &cell_currents, dt)
    } else {
        1
    };
    if n > 1 {
        let h = dt / T::lit(n as f64);
        let mut state = pack.clone();
        let mut merged: Option<PackStepResult<T>> = None;
        for _ in 0..n {
            let (s, r) = step_demand(&state, bms, demand, ambient, h, depth, false)?;
            state = s;
            match &mut merged {
                None => merged = Some(r),
                Some(m) => m.merge(r),
            }
        }
        return Ok((state, merged.expect("n > 1")));
    }

    match step_cells_once(pack, &elec, &cell_currents, ambient, dt) {
        Ok((next, s)) => Ok((
            next,
            PackStepResult {
                current,
                terminal_voltage: voltage,
                string_currents: split,
                decision,
                min_cell_voltage: s.min_v,
                max_cell_voltage: s.max_v,
                min_plating_potential: s.min_phi,
                max_temperature: s.max_t,
                worst_regime: s.worst,
                substeps: 1,
            },
        )),
        Err(PackError::Cell {
            source: CellError::NonFiniteState(_),
            ..
        }) if depth < MAX_RETRY_DEPTH => {
            let h = dt * T::lit(0.5);
            let (mid, mut first) = step_demand(pack, bms, demand, ambient, h, depth + 1, false)?;
            let (end, second) = step_demand(&mid, bms, demand, ambient, h, depth + 1, false)?;
            first.merge(second);
            Ok((end, first))
        }
        Err(e) => Err(e),
    }
}

/// Advances the pack one step under a terminal power demand (W, + discharge).
///
/// If the BMS terminates, the load is disconnected for this step and the cells
/// rest (balancing currents only).
pub fn step_pack<T: Real>(
    pack: &PackTopology<T>,
    bms: &BmsConfig<T>,
    power_demand: T,
    ambient: T,
    dt: T,
) -> Result<(PackTopology<T>, PackStepResult<T>), PackError> {
    check_dt(dt)?;
    step_demand(pack, bms, Demand::Power(power_demand), ambient, dt, 0, true)
}

/// Advances the pack one step at a commanded terminal current (A, + discharge),
/// as a charger or a current-controlled load would. Over-limit currents are clamped.
pub fn step_pack_current<T: Real>(
    pack: &PackTopology<T>,
    bms: &BmsConfig<T>,
    current: T,
    ambient: T,
    dt: T,
) -> Result<(PackTopology<T>, PackStepResult<T>), PackError> {
    check_dt(dt)?;
    step_demand(pack, bms, Demand::Current(current), ambient, dt, 0, true)
}

/// Charging current (A, negative) of a CC-CV charger with power limit
/// `peak_power` and per-cell voltage target `cv_target`, also bounded by the
/// BMS charge limit and current limit. Zero when the pack is already at target.
pub fn cc_cv_current<T: Real>(
    pack: &PackTopology<T>,
    bms: &BmsConfig<T>,
    peak_power: T,
    cv_target: T,
) -> Result<T, PackError> {
    let elec = PackElectrics::new(pack);
    let target = cv_target.min(bms.charge_voltage_limit());
    let max_v = |i: T| -> Result<T, PackError> {
        let (split, _) = elec.split(i, None)?;
        Ok(elec.cell_voltage_extremes(&split).1)
    };
    if max_v(T::zero())? >= target {
        return Ok(T::zero());
    }
    // Constant-power phase, limited by the hardware current.
    let (cc, _, _) = match elec.current_for_power(-peak_power, bms.max_current) {
        Ok(x) => x,
        Err(PackError::DemandInfeasible { .. }) => (-bms.max_current, Vec::new(), T::zero()),
        Err(e) => return Err(e),
    };
    let cc = cc.max(-bms.max_current);
    if max_v(cc)? <= target {
        return Ok(cc);
    }
    // Constant-voltage phase: the current that puts the highest cell on target.
    let (mut lo, mut hi) = (cc, T::zero());
    for _ in 0..60 {
        let mid = (lo + hi) * T::lit(0.5);
        if max_v(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= T::solver_tolerance(1e-9, cc) {
            break;
        }
    }
    Ok(hi)
}

/// Routes a workload current only through the targeted strings (and, with a
/// cell target, only through the targeted cells of those strings) and returns
/// per-cell currents, string-major.
///
/// Within the targeted strings the current splits by Kirchhoff over that
/// subset; non-targeted strings are switched out. A cell-level target bleeds
/// the string's power from its `k` targeted cells, each carrying
/// `I_string * n_series / k`.
pub fn apply_rowhammer<T: Real>(
    pack: &PackTopology<T>,
    target: &RowhammerTarget,
    workload_current: T,
) -> Result<Vec<T>, PackError> {
    target.validate_for(pack)?;
    for &p in target.string_set() {
        let isolated = pack
            .string(p)
            .iter()
            .any(|c| c.dissolved_cu > T::zero() || cell::vital_capacity_damage(c, &pack.params) >= T::one());
        if isolated {
            return Err(PackError::TargetIsolated { string: p });
        }
    }
    let elec = PackElectrics::new(pack);
    let active: Vec<usize> = target.string_set().iter().copied().collect();
    let (split, _) = elec.solve_split(&active, workload_current, None)?;
    let mut currents = vec![T::zero(); pack.n_cells()];
    for (&p, &i) in active.iter().zip(&split) {
        match target.cell_set() {
            None => {
                for s in 0..pack.n_series {
                    currents[pack.index(s, p)] = i;
                }
            }
            Some(cells) => {
                let chosen: Vec<usize> = cells.iter().filter(|(_, q)| *q == p).map(|(s, _)| *s).collect();
                let k = T::lit(chosen.len() as f64);
                for s in chosen {
                    currents[pack.index(s, p)] = i * T::lit(pack.n_series as f64) / k;
                }
            }
        }
    }
    Ok(currents)
}

/// Advances the pack with externally routed per-cell currents (e.g. from
/// [`apply_rowhammer`] superposed on a split base load). No BMS enforcement:
/// the routing itself is the compromised-BMS behaviour.
pub fn step_pack_cells<T: Real>(
    pack: &PackTopology<T>,
    cell_currents: &[T],
    ambient: T,
    dt: T,
) -> Result<(PackTopology<T>, PackStepResult<T>), PackError> {
    check_dt(dt)?;
    if cell_currents.len() != pack.n_cells() {
        return Err(PackError::CurrentShape {
            expected: pack.n_cells(),
            found: cell_currents.len(),
        });
    }
    let elec = PackElectrics::new(pack);
    let n = substeps_needed(&elec, cell_currents, dt);
    let h = dt / T::lit(n as f64);
    let mut state = pack.clone();
    let mut merged: Option<PackStepResult<T>> = None;
    for _ in 0..n {
        let e = PackElectrics::new(&state);
        let (next, s) = step_cells_once(&state, &e, cell_currents, ambient, h)?;
        let string_currents: Vec<T> = (0..pack.n_parallel)
            .map(|p| {
                let cells = &cell_currents[p * pack.n_series..(p + 1) * pack.n_series];
                cells.iter().copied().sum::<T>() / T::lit(pack.n_series as f64)
            })
            .collect();
        let r = PackStepResult {
            current: string_currents.iter().copied().sum(),
            terminal_voltage: (0..pack.n_parallel)
                .map(|p| {
                    let cells = &e.cells[p * pack.n_series..(p + 1) * pack.n_series];
                    let cur = &cell_currents[p * pack.n_series..(p + 1) * pack.n_series];
                    cells.iter().zip(cur).map(|(c, &i)| c.terminal_voltage(i)).sum::<T>()
                })
                .fold(T::neg_infinity(), T::max),
            string_currents,
            decision: BmsDecision::Allow,
            min_cell_voltage: s.min_v,
            max_cell_voltage: s.max_v,
            min_plating_potential: s.min_phi,
            max_temperature: s.max_t,
            worst_regime: s.worst,
            substeps: 1,
        };
        state = next;
        match &mut merged {
            None => merged = Some(r),
            Some(m) => m.merge(r),
        }
    }
    Ok((state, merged.expect("at least one sub-step")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults;

    fn pack(n_s: usize, n_p: usize, soc: f64) -> PackTopology<f64> {
        let p = defaults::nca_graphite_cell();
        let c = p.fresh_state(soc, 298.15);
        PackTopology::uniform(n_s, n_p, p, c).unwrap()
    }

    fn bms() -> BmsConfig<f64> {
        BmsConfig {
            v_min_cell: 3.0,
            v_max_cell: 4.2,
            max_current: 600.0,
            lower_cutoff_overridden: false,
            upper_cutoff_overridden: false,
            overcharge_offset: 0.0,
        }
    }

    #[test]
    fn identical_strings_share_current_equally() {
        let pk = pack(10, 4, 0.6);
        let split = split_pack_current(&pk, 100.0).unwrap();
        for i in split {
            assert!((i - 25.0).abs() < 1e-9);
        }
    }

    #[test]
    fn resistive_string_carries_less() {
        let mut pk = pack(10, 3, 0.6);
        for s in 0..10 {
            let idx = pk.index(s, 1);
            pk.cells[idx].sei_thickness *= 2.0;
        }
        let split = split_pack_current(&pk, 90.0).unwrap();
        assert!(split[1] < split[0] && split[1] < split[2]);
        assert!((split.iter().sum::<f64>() - 90.0).abs() < 1e-9);
    }

    #[test]
    fn zero_current_balances_heterogeneous_soc() {
        let mut pk = pack(8, 4, 0.5);
        for s in 0..8 {
            let idx = pk.index(s, 2);
            pk.cells[idx].soc = 0.7;
        }
        let split = split_pack_current(&pk, 0.0).unwrap();
        assert!(split.iter().sum::<f64>().abs() < 1e-9);
        assert!(split[2] > 0.0, "higher-SOC string discharges into the others");
    }

    #[test]
    fn rejects_empty_topology_and_targets() {
        let p = defaults::nca_graphite_cell();
        let c = p.fresh_state(0.5, 298.15);
        assert!(PackTopology::uniform(0, 4, p.clone(), c).is_err());
        assert!(PackTopology::uniform(4, 0, p, c).is_err());
        assert!(matches!(RowhammerTarget::strings([]), Err(PackError::InvalidTarget(_))));
        let pk = pack(4, 2, 0.5);
        assert!(RowhammerTarget::strings([2]).unwrap().validate_for(&pk).is_err());
    }

    #[test]
    fn bms_examples() {
        let mut pk = pack(4, 2, 0.999);
        let b = bms();
        // Bring one cell exactly to the upper limit at rest.
        pk.cells[0].soc = 1.0 + (4.2 - pk.params.open_circuit_voltage(&pk.cells[0])) / 16.0;
        while pk.params.open_circuit_voltage(&pk.cells[0]) < 4.2 {
            pk.cells[0].soc += 1e-6;
        }
        assert_eq!(check_bms(&pk, &b, -5.0), BmsDecision::Terminate);

        let mut over = b;
        over.upper_cutoff_overridden = true;
        over.overcharge_offset = 0.4;
        while pk.params.open_circuit_voltage(&pk.cells[0]) < 4.4 {
            pk.cells[0].soc += 1e-5;
        }
        assert_eq!(check_bms(&pk, &over, -1.0), BmsDecision::Allow);

        let mid = pack(4, 2, 0.5);
        assert_eq!(check_bms(&mid, &b, 900.0), BmsDecision::Clamp(600.0));
        assert_eq!(check_bms(&mid, &over, -900.0), BmsDecision::Clamp(-600.0));
    }

    #[test]
    fn bms_offset_requires_override() {
        let mut b = bms();
        b.overcharge_offset = 0.2;
        assert!(b.validate().is_err());
        b.upper_cutoff_overridden = true;
        assert!(b.validate().is_ok());
        b.overcharge_offset = 0.6;
        assert!(b.validate().is_err());
    }

    #[test]
    fn zero_power_keeps_soc() {
        let pk = pack(6, 2, 0.5);
        let (next, r) = step_pack(&pk, &bms(), 0.0, 298.15, 1.0).unwrap();
        assert_eq!(r.current, 0.0);
        for (a, b) in pk.cells.iter().zip(&next.cells) {
            // Only the side-reaction self-discharge remains.
            assert!((a.soc - b.soc).abs() < 1e-8);
        }
    }

    #[test]
    fn power_is_delivered() {
        let pk = pack(96, 4, 0.8);
        let (_, r) = step_pack(&pk, &bms(), 20_000.0, 298.15, 1.0).unwrap();
        assert!((r.current * r.terminal_voltage - 20_000.0).abs() < 1e-4);
        assert!(matches!(
            step_pack(&pk, &bms(), 1.0e7, 298.15, 1.0),
            Err(PackError::DemandInfeasible { .. })
        ));
    }

    #[test]
    fn cutoff_terminates_unless_overridden() {
        let mut pk = pack(4, 1, 0.0);
        pk.cells.iter_mut().for_each(|c| c.soc = 0.035);
        let b = bms();
        let mut regime_seen = Regime::Normal;
        let mut terminated = false;
        let mut s = pk.clone();
        for _ in 0..2000 {
            let (n, r) = step_pack(&s, &b, 600.0, 298.15, 1.0).unwrap();
            s = n;
            terminated |= r.decision == BmsDecision::Terminate;
            regime_seen = regime_seen.max(r.worst_regime);
        }
        assert!(terminated);
        assert_eq!(regime_seen, Regime::Normal);

        let mut over = b;
        over.lower_cutoff_overridden = true;
        let mut s = pk;
        let mut seen = Regime::Normal;
        for _ in 0..2000 {
            let (n, r) = step_pack(&s, &over, 600.0, 298.15, 1.0).unwrap();
            s = n;
            seen = seen.max(r.worst_regime);
        }
        assert!(seen >= Regime::Overdischarge);
    }

    #[test]
    fn cc_cv_holds_target() {
        let pk = pack(96, 4, 0.999);
        let b = bms();
        let i = cc_cv_current(&pk, &b, 1920.0, 4.2).unwrap();
        assert!(i <= 0.0);
        let elec = PackElectrics::new(&pk);
        let (split, _) = elec.split(i, None).unwrap();
        assert!(elec.cell_voltage_extremes(&split).1 <= 4.2 + 1e-9);
        let low = pack(96, 4, 0.3);
        let cc = cc_cv_current(&low, &b, 1920.0, 4.2).unwrap();
        let elec = PackElectrics::new(&low);
        let (_, v) = elec.split(cc, None).unwrap();
        assert!((cc * v + 1920.0).abs() < 1e-6);
    }

    #[test]
    fn rowhammer_all_strings_matches_split() {
        let pk = pack(5, 4, 0.6).with_capacity_spread(0.01, 7);
        let all = RowhammerTarget::all_strings(4).unwrap();
        let routed = apply_rowhammer(&pk, &all, 40.0).unwrap();
        let split = split_pack_current(&pk, 40.0).unwrap();
        assert_eq!(routed, pk.cell_currents(&split));
    }

    #[test]
    fn rowhammer_concentrates_current() {
        let pk = pack(5, 4, 0.6);
        let one = RowhammerTarget::strings([1]).unwrap();
        let routed = apply_rowhammer(&pk, &one, 40.0).unwrap();
        assert_eq!(routed[pk.index(0, 1)], 40.0);
        assert_eq!(routed[pk.index(0, 0)], 0.0);
        let cells = RowhammerTarget::new([1].into(), Some([(0, 1)].into())).unwrap();
        let routed = apply_rowhammer(&pk, &cells, 8.0).unwrap();
        assert_eq!(routed[pk.index(0, 1)], 40.0);
        assert_eq!(routed.iter().filter(|&&i| i != 0.0).count(), 1);
    }

    #[test]
    fn rowhammer_rejects_isolated_string() {
        let mut pk = pack(3, 2, 0.6);
        let idx = pk.index(1, 1);
        pk.cells[idx].dissolved_cu = 0.1;
        let t = RowhammerTarget::strings([1]).unwrap();
        assert_eq!(
            apply_rowhammer(&pk, &t, 1.0),
            Err(PackError::TargetIsolated { string: 1 })
        );
    }

    #[test]
    fn f32_pack_split_conserves_current() {
        let pk: PackTopology<f32> = pack(12, 3, 0.6).with_capacity_spread(0.01, 3).cast();
        let split = split_pack_current(&pk, 30.0f32).unwrap();
        assert!((split.iter().sum::<f32>() - 30.0).abs() < 1e-4);
    }
}
