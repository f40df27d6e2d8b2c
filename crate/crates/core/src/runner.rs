//! Long-horizon scenario execution and impact metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{schedule_attack, Action, Anchor, AttackError, AttackKind, Injection, StealthScore};
use crate::cell::{self, Regime};
use crate::data::DataDir;
use crate::duty::{build_daily_profile, Archetype, City, DailyProfile, DutyError, SegmentKind, SegmentPayload};
use crate::num::SECONDS_PER_DAY;
use crate::pack::{
    apply_rowhammer, cc_cv_current, step_pack, step_pack_cells, step_pack_current, BmsConfig, PackElectrics, PackError,
    PackStepResult, PackTopology,
};
use crate::scenario::{ConfigError, Resolved, Scenario};

/// Step while driving (s); the drive trace has one power sample per second.
pub const DRIVE_DT: f64 = 1.0;
/// Step while an attack injection is active (s).
pub const ATTACK_DT: f64 = 10.0;
/// Step while parked or charging (s).
pub const REST_DT: f64 = 60.0;
/// Fraction of nominal capacity whose loss ends the pack's life.
pub const VITAL_FRACTION: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario `{scenario}`, day {day}, t = {offset:.0} s: {source}")]
    Simulation {
        scenario: String,
        day: u32,
        offset: f64,
        #[source]
        source: PackError,
    },
    #[error("scenario `{scenario}`, day {day}: {source}")]
    Schedule {
        scenario: String,
        day: u32,
        #[source]
        source: AttackError,
    },
    #[error("scenario `{scenario}`: {source}")]
    Profile {
        scenario: String,
        #[source]
        source: DutyError,
    },
    #[error("baseline SEI resistance is {0}; the baseline must be cycled first")]
    DivisionDomain(f64),
    #[error("minimum delta_r {0} is not positive; the set cannot be normalised")]
    NonPositiveMinimum(f64),
    #[error("empty set")]
    EmptySet,
    #[error("incompatible reports: {0}")]
    IncompatibleReports(String),
}

impl RunError {
    /// True for problems in the inputs rather than in the simulation itself.
    pub fn is_config(&self) -> bool {
        matches!(self, RunError::Config(_) | RunError::Profile { .. })
    }
}

/// Fractional SEI resistance increase of an attack run over its baseline.
pub fn delta_r(attack_r_sei: f64, baseline_r_sei: f64) -> Result<f64, RunError> {
    if !(baseline_r_sei > 0.0) {
        return Err(RunError::DivisionDomain(baseline_r_sei));
    }
    Ok((attack_r_sei - baseline_r_sei) / baseline_r_sei)
}

/// Each value divided by the set minimum.
pub fn delta_r_star(values: &[f64]) -> Result<Vec<f64>, RunError> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        return Err(RunError::EmptySet);
    }
    if !(min > 0.0) {
        return Err(RunError::NonPositiveMinimum(min));
    }
    Ok(values.iter().map(|&v| if v == min { 1.0 } else { v / min }).collect())
}

/// Value (USD) of the destroyed part of the vital capacity.
pub fn monetize_loss(vital_damage: f64, pack_energy_kwh: f64, unit_cost_usd_per_kwh: f64) -> f64 {
    vital_damage * VITAL_FRACTION * pack_energy_kwh * unit_cost_usd_per_kwh
}

fn round_cents(usd: f64) -> f64 {
    (usd * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Horizon,
    EndOfLife,
    CopperDissolution,
}

/// End-of-day sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySample {
    /// 1-based day of the run.
    pub day: u32,
    /// Mean over cells (m).
    pub sei_thickness: f64,
    /// Mean over cells (Ah).
    pub capacity_lost: f64,
    /// Lowest cell SOC seen during the day.
    pub soc_min: f64,
    /// Highest cell temperature seen during the day (K).
    pub temperature_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub pack: String,
    pub vehicle: String,
    pub city: City,
    pub archetype: Archetype,
    pub attack: Option<AttackKind>,
    /// 0 without an attack.
    pub attacks_per_day: u8,
    pub rng_seed: u64,
    pub horizon_days: u32,
    pub days_simulated: u32,
    pub termination: Termination,
    /// Pack-equivalent SEI film resistance at the end of the run (Ω).
    pub r_sei_ohm: f64,
    /// Against the matching baseline, when one was run.
    pub delta_r: Option<f64>,
    /// Filled by [`compare`].
    pub delta_r_star: Option<f64>,
    pub delta_r_per_day: Option<f64>,
    /// `delta_r` divided by the attacks per day.
    pub delta_r_per_attack: Option<f64>,
    /// Pack-level vital capacity consumed, in [0, 1].
    pub vital_damage: f64,
    pub max_cell_vital_damage: f64,
    /// 1-based day on which the vital capacity was used up.
    pub eol_day: Option<u32>,
    /// Day at which the second-half fade rate would use up the vital capacity.
    pub projected_eol_day: Option<f64>,
    pub min_plating_potential: f64,
    /// s since the start of the run.
    pub cu_onset_time: Option<f64>,
    /// Fastest mean-SOC drop over any load-adding injection window (per hour).
    pub max_soc_drain_rate: f64,
    pub pack_energy_kwh: f64,
    pub monetized_loss: f64,
    pub stealth: Option<StealthScore>,
    /// Seconds during which driving demand could not be served.
    pub load_shed_seconds: f64,
    pub daily_series: Vec<DailySample>,
}

/// Pack-equivalent film resistance: series sums per string, strings in parallel.
pub fn pack_sei_resistance(pack: &PackTopology<f64>) -> f64 {
    let conductance: f64 = (0..pack.n_parallel)
        .map(|p| {
            let r: f64 = pack
                .string(p)
                .iter()
                .map(|c| cell::sei_resistance(c, &pack.params))
                .sum();
            r.recip()
        })
        .sum();
    conductance.recip()
}

/// Usable pack capacity (Ah): each string is limited by its weakest cell.
fn pack_capacity(pack: &PackTopology<f64>, fresh: bool) -> f64 {
    (0..pack.n_parallel)
        .map(|p| {
            pack.string(p)
                .iter()
                .map(|c| c.capacity(&pack.params) - if fresh { 0.0 } else { c.capacity_lost })
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Pack-level vital capacity damage, clamped to [0, 1].
pub fn pack_vital_damage(pack: &PackTopology<f64>, initial: &PackTopology<f64>) -> f64 {
    let c0 = pack_capacity(initial, false);
    let c = pack_capacity(pack, false);
    ((c0 - c) / (VITAL_FRACTION * pack_capacity(initial, true))).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
struct Live {
    start: Option<f64>,
    duration: f64,
    action: Action,
    anchor_segment: Option<usize>,
    soc_at_start: Option<f64>,
    done: bool,
}

impl Live {
    fn from(inj: Injection) -> Self {
        let (start, anchor_segment) = match inj.anchor {
            Anchor::At(t) => (Some(t), None),
            Anchor::ChargeComplete { segment } => (None, Some(segment)),
        };
        Self {
            start,
            duration: inj.duration,
            action: inj.action,
            anchor_segment,
            soc_at_start: None,
            done: false,
        }
    }

    fn end(&self) -> Option<f64> {
        self.start.map(|s| s + self.duration)
    }

    fn active(&self, t: f64) -> bool {
        matches!(self.start, Some(s) if s <= t && t < s + self.duration)
    }

    fn adds_load(&self) -> bool {
        matches!(
            self.action,
            Action::AuxLoad { .. } | Action::Overdischarge { .. } | Action::Rowhammer { .. }
        )
    }
}

struct Runner<'a> {
    name: &'a str,
    r: &'a Resolved,
    pack: PackTopology<f64>,
    day: u32,
    min_phi: f64,
    soc_min: f64,
    temp_max: f64,
    cu_onset: Option<f64>,
    max_drain: f64,
    shed: f64,
}

impl Runner<'_> {
    fn sim_err(&self, offset: f64, source: PackError) -> RunError {
        RunError::Simulation {
            scenario: self.name.to_string(),
            day: self.day,
            offset,
            source,
        }
    }

    fn absorb(&mut self, res: &PackStepResult<f64>, t: f64, h: f64) {
        self.min_phi = self.min_phi.min(res.min_plating_potential);
        self.temp_max = self.temp_max.max(res.max_temperature);
        self.soc_min = self.soc_min.min(self.pack.min_soc());
        if res.worst_regime == Regime::CopperDissolution && self.cu_onset.is_none() {
            self.cu_onset = Some(self.day as f64 * SECONDS_PER_DAY + t + h);
        }
    }

    /// Runs one day; returns injections still running at the day's end, re-based to the next day.
    fn run_day(&mut self, profile: &DailyProfile, mut live: Vec<Live>) -> Result<Vec<Live>, RunError> {
        let charger = self.r.charger;
        for (si, seg) in profile.segments.iter().enumerate() {
            let mut t = seg.start;
            let mut charge_done = false;
            while t < seg.end() - 1e-9 {
                if self.cu_onset.is_some() {
                    return Ok(Vec::new());
                }
                for l in live.iter_mut() {
                    if l.active(t) && l.soc_at_start.is_none() {
                        l.soc_at_start = Some(self.pack.mean_soc());
                    }
                }
                let any_active = live.iter().any(|l| l.active(t));
                let base = match seg.kind {
                    SegmentKind::Drive => DRIVE_DT,
                    _ if any_active => ATTACK_DT,
                    _ => REST_DT,
                };
                let mut boundary = seg.end();
                for l in &live {
                    if let (Some(s), Some(e)) = (l.start, l.end()) {
                        for edge in [s, e] {
                            if edge > t + 1e-9 {
                                boundary = boundary.min(edge);
                            }
                        }
                    }
                }
                let h = base.min(boundary - t);

                // Effective BMS and loads from the active injections.
                let mut bms = self.r.bms;
                let mut aux_power = 0.0;
                let mut cv_offset: Option<f64> = None;
                let mut hold = false;
                let mut hammer: Option<(f64, &crate::pack::RowhammerTarget)> = None;
                for l in live.iter().filter(|l| l.active(t)) {
                    match &l.action {
                        Action::AuxLoad { power } => aux_power += power,
                        Action::Overdischarge { power } => {
                            aux_power += power;
                            bms.lower_cutoff_overridden = true;
                        }
                        Action::Rowhammer { power, target } => hammer = Some((*power, target)),
                        Action::ElevateCv { offset } => cv_offset = Some(*offset),
                        Action::HoldCv { offset } => {
                            cv_offset = Some(*offset);
                            hold = seg.kind != SegmentKind::Drive;
                        }
                    }
                }
                if let Some(off) = cv_offset {
                    bms.upper_cutoff_overridden = true;
                    bms.overcharge_offset = off;
                }
                let ambient = profile.ambient_at_offset(t);

                let drive_power = match &seg.payload {
                    SegmentPayload::Drive(p) => {
                        let k = ((t - seg.start) / DRIVE_DT).floor() as usize;
                        p.get(k).copied().unwrap_or(0.0)
                    }
                    _ => 0.0,
                };
                let cv_target = charger.cv_voltage_per_cell + cv_offset.unwrap_or(0.0);
                let mut charge_current = 0.0;
                if seg.kind == SegmentKind::Charge && !charge_done || hold {
                    let i = cc_cv_current(&self.pack, &bms, charger.peak_power, cv_target)
                        .map_err(|e| self.sim_err(t, e))?;
                    if seg.kind == SegmentKind::Charge && !charge_done && -i < charger.termination_current {
                        charge_done = true;
                        for l in live
                            .iter_mut()
                            .filter(|l| l.anchor_segment == Some(si) && l.start.is_none())
                        {
                            l.start = Some(t);
                        }
                        // Re-plan this instant with the newly started injections.
                        continue;
                    }
                    charge_current = i;
                }

                let step = if let Some((power, target)) = hammer {
                    self.step_rowhammer(drive_power + aux_power, power, target, charge_current, ambient, h)
                } else if charge_current != 0.0 {
                    let elec = PackElectrics::new(&self.pack);
                    let v = (0..self.pack.n_parallel)
                        .map(|p| elec.string_open_circuit_voltage(p))
                        .sum::<f64>()
                        / self.pack.n_parallel as f64;
                    step_pack_current(
                        &self.pack,
                        &bms,
                        charge_current + (drive_power + aux_power) / v,
                        ambient,
                        h,
                    )
                } else {
                    match step_pack(&self.pack, &bms, drive_power + aux_power, ambient, h) {
                        Err(PackError::DemandInfeasible { .. }) => {
                            self.shed += h;
                            step_pack(&self.pack, &bms, aux_power.min(drive_power + aux_power), ambient, h)
                                .or_else(|_| step_pack(&self.pack, &bms, 0.0, ambient, h))
                        }
                        other => other,
                    }
                };
                let (next, res) = step.map_err(|e| self.sim_err(t, e))?;
                self.pack = next;
                self.absorb(&res, t, h);
                t += h;

                for l in live.iter_mut() {
                    if matches!(l.end(), Some(e) if e <= t + 1e-9) {
                        if let (true, Some(s0)) = (l.adds_load(), l.soc_at_start) {
                            let hours = l.duration / 3600.0;
                            self.max_drain = self.max_drain.max((s0 - self.pack.mean_soc()) / hours);
                        }
                        l.done = true;
                    }
                }
                live.retain(|l| !l.done);
            }
            // A charge that never terminated anchors its followers at the window end.
            for l in live
                .iter_mut()
                .filter(|l| l.anchor_segment == Some(si) && l.start.is_none())
            {
                l.start = Some(seg.end());
            }
        }
        Ok(live
            .into_iter()
            .filter_map(|mut l| {
                let end = l.end()?;
                if end <= SECONDS_PER_DAY {
                    return None;
                }
                l.start = l.start.map(|s| s - SECONDS_PER_DAY);
                l.anchor_segment = None;
                Some(l)
            })
            .collect())
    }

    fn step_rowhammer(
        &mut self,
        base_power: f64,
        hammer_power: f64,
        target: &crate::pack::RowhammerTarget,
        charge_current: f64,
        ambient: f64,
        h: f64,
    ) -> Result<(PackTopology<f64>, PackStepResult<f64>), PackError> {
        let elec = PackElectrics::new(&self.pack);
        let v = (0..self.pack.n_parallel)
            .map(|p| elec.string_open_circuit_voltage(p))
            .sum::<f64>()
            / self.pack.n_parallel as f64;
        let legit = base_power - hammer_power;
        let (split, _) = elec.split(charge_current + legit / v, None)?;
        let mut currents = self.pack.cell_currents(&split);
        match apply_rowhammer(&self.pack, target, hammer_power / v) {
            Ok(extra) => {
                for (c, e) in currents.iter_mut().zip(extra) {
                    *c += e;
                }
            }
            // The targeted string is gone; the workload falls back onto the whole pack.
            Err(PackError::TargetIsolated { .. }) => {
                let (split, _) = elec.split(charge_current + base_power / v, None)?;
                currents = self.pack.cell_currents(&split);
            }
            Err(e) => return Err(e),
        }
        step_pack_cells(&self.pack, &currents, ambient, h)
    }
}

/// Seconds from arming an overdischarge attack that draws `power` (W) with the
/// lower cutoff overridden until the first cell dissolves copper, or `None`
/// if that does not happen within `limit` seconds.
pub fn copper_onset_time(
    pack: &PackTopology<f64>,
    bms: &BmsConfig<f64>,
    power: f64,
    ambient: f64,
    limit: f64,
) -> Result<Option<f64>, PackError> {
    let mut bms = *bms;
    bms.lower_cutoff_overridden = true;
    let mut p = pack.clone();
    let mut t = 0.0;
    while t < limit {
        let h = ATTACK_DT.min(limit - t);
        let (next, r) = step_pack(&p, &bms, power, ambient, h)?;
        p = next;
        t += h;
        if r.worst_regime == Regime::CopperDissolution {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Runs a scenario against the data directory named by the environment.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioReport, RunError> {
    run_scenario_with(s, &DataDir::from_env())
}

pub fn run_scenario_with(s: &Scenario, data: &DataDir) -> Result<ScenarioReport, RunError> {
    let resolved = s.resolve(data)?;
    run_resolved(s, &resolved)
}

/// Runs an already-resolved scenario.
pub fn run_resolved(s: &Scenario, r: &Resolved) -> Result<ScenarioReport, RunError> {
    let name = if s.name.is_empty() { "unnamed" } else { s.name.as_str() };
    let profile_err = |source| RunError::Profile {
        scenario: name.to_string(),
        source,
    };
    let base = build_daily_profile(
        s.archetype,
        &r.cycle,
        &r.vehicle,
        &r.charger,
        &r.ambient,
        s.start_day_of_year,
    )
    .map_err(profile_err)?;
    let initial = r.pack.clone();
    let mut run = Runner {
        name,
        r,
        pack: r.pack.clone(),
        day: 0,
        min_phi: f64::INFINITY,
        soc_min: f64::INFINITY,
        temp_max: f64::NEG_INFINITY,
        cu_onset: None,
        max_drain: 0.0,
        shed: 0.0,
    };
    let mut carried: Vec<Live> = Vec::new();
    let mut series = Vec::new();
    let mut damage_by_day = Vec::new();
    let mut eol_day = None;
    let mut termination = Termination::Horizon;

    for d in 0..s.horizon_days {
        run.day = d;
        let profile = base.on_day((s.start_day_of_year + d) % 365);
        let mut live = std::mem::take(&mut carried);
        if let Some(spec) = &s.attack {
            let inj = schedule_attack(spec, &profile, d, &r.catalog).map_err(|source| RunError::Schedule {
                scenario: name.to_string(),
                day: d,
                source,
            })?;
            live.extend(inj.into_iter().map(Live::from));
        }
        run.soc_min = f64::INFINITY;
        run.temp_max = f64::NEG_INFINITY;
        carried = run.run_day(&profile, live)?;

        let n = run.pack.n_cells() as f64;
        series.push(DailySample {
            day: d + 1,
            sei_thickness: run.pack.cells.iter().map(|c| c.sei_thickness).sum::<f64>() / n,
            capacity_lost: run.pack.cells.iter().map(|c| c.capacity_lost).sum::<f64>() / n,
            soc_min: run.soc_min,
            temperature_max: run.temp_max,
        });
        let vd = pack_vital_damage(&run.pack, &initial);
        damage_by_day.push(vd);
        if run.cu_onset.is_some() {
            termination = Termination::CopperDissolution;
            break;
        }
        if vd >= 1.0 && eol_day.is_none() {
            eol_day = Some(d + 1);
            if s.stop_at_eol {
                termination = Termination::EndOfLife;
                break;
            }
        }
    }

    let days = series.len() as u32;
    let vital_damage = *damage_by_day.last().expect("at least one day");
    let projected_eol_day = eol_day.map(f64::from).or_else(|| project_eol(&damage_by_day));
    let pack_energy_kwh = initial.nominal_energy_wh() / 1000.0;
    let max_cell_vital_damage = run
        .pack
        .cells
        .iter()
        .map(|c| cell::vital_capacity_damage(c, &run.pack.params))
        .fold(0.0, f64::max)
        .min(1.0);
    let stealth =
        match &s.attack {
            Some(a) if !a.components.is_empty() => Some(crate::attack::stealth_score(&a.components).map_err(
                |source| RunError::Schedule {
                    scenario: name.to_string(),
                    day: 0,
                    source,
                },
            )?),
            _ => None,
        };
    Ok(ScenarioReport {
        scenario: name.to_string(),
        pack: s.pack.clone(),
        vehicle: s.vehicle.clone(),
        city: s.city,
        archetype: s.archetype,
        attack: s.attack.as_ref().map(|a| a.kind),
        attacks_per_day: s.attack.as_ref().map_or(0, |a| a.attacks_per_day),
        rng_seed: s.rng_seed,
        horizon_days: s.horizon_days,
        days_simulated: days,
        termination,
        r_sei_ohm: pack_sei_resistance(&run.pack),
        delta_r: None,
        delta_r_star: None,
        delta_r_per_day: None,
        delta_r_per_attack: None,
        vital_damage,
        max_cell_vital_damage,
        eol_day,
        projected_eol_day,
        min_plating_potential: run.min_phi,
        cu_onset_time: run.cu_onset,
        max_soc_drain_rate: run.max_drain,
        pack_energy_kwh,
        monetized_loss: round_cents(monetize_loss(
            vital_damage,
            pack_energy_kwh,
            r.preset.unit_cost_usd_per_kwh,
        )),
        stealth,
        load_shed_seconds: run.shed,
        daily_series: series,
    })
}

/// Day at which the vital capacity runs out if the fade rate of the second
/// half of the run continues.
fn project_eol(damage_by_day: &[f64]) -> Option<f64> {
    let n = damage_by_day.len();
    if n < 2 {
        return None;
    }
    let mid = n / 2 - 1;
    let rate = (damage_by_day[n - 1] - damage_by_day[mid]) / (n - 1 - mid) as f64;
    if !(rate > 0.0) {
        return None;
    }
    Some(n as f64 + (1.0 - damage_by_day[n - 1]) / rate)
}

/// The same scenario without its attack.
pub fn baseline_of(s: &Scenario) -> Scenario {
    Scenario {
        name: if s.name.is_empty() {
            "baseline".into()
        } else {
            format!("{} (baseline)", s.name)
        },
        attack: None,
        ..s.clone()
    }
}

/// Runs the scenario and, if it has an attack, its baseline, and fills `delta_r`.
pub fn run_with_baseline(s: &Scenario, data: &DataDir) -> Result<ScenarioReport, RunError> {
    if s.attack.is_none() {
        return run_scenario_with(s, data);
    }
    let b = baseline_of(s);
    let (attack, baseline) = rayon::join(|| run_scenario_with(s, data), || run_scenario_with(&b, data));
    let (mut attack, baseline) = (attack?, baseline?);
    let dr = delta_r(attack.r_sei_ohm, baseline.r_sei_ohm)?;
    attack.delta_r = Some(dr);
    attack.delta_r_per_day = Some(dr / attack.days_simulated as f64);
    attack.delta_r_per_attack = Some(dr / attack.attacks_per_day.max(1) as f64);
    Ok(attack)
}

/// Runs independent scenarios on the rayon pool; results keep the input order.
pub fn run_batch(scenarios: &[Scenario], data: &DataDir) -> Vec<Result<ScenarioReport, RunError>> {
    scenarios.par_iter().map(|s| run_scenario_with(s, data)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub city: City,
    pub archetype: Archetype,
    pub attack: Option<AttackKind>,
    pub delta_r: f64,
    pub delta_r_star: Option<f64>,
    pub delta_r_per_day: f64,
    pub delta_r_per_attack: f64,
    pub vital_damage: f64,
    pub eol_day: Option<u32>,
    pub monetized_loss: f64,
}

/// Fills `delta_r` of each attack against the baseline and `delta_r_star`
/// across the set (absent when the set minimum is not positive). Rows come
/// back sorted by `delta_r`, largest first.
pub fn compare(baseline: &ScenarioReport, attacks: &[ScenarioReport]) -> Result<Vec<ComparisonRow>, RunError> {
    let mut rows = rows_in_input_order(baseline, attacks)?;
    rows.sort_by(|a, b| b.delta_r.total_cmp(&a.delta_r));
    Ok(rows)
}

/// [`compare`] for sets where every attack has its own baseline (e.g. one per
/// city), each pair checked for compatibility.
pub fn compare_paired(pairs: &[(ScenarioReport, ScenarioReport)]) -> Result<Vec<ComparisonRow>, RunError> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (baseline, attack) in pairs {
        rows.extend(rows_in_input_order(baseline, std::slice::from_ref(attack))?);
    }
    let stars = delta_r_star(&rows.iter().map(|r| r.delta_r).collect::<Vec<_>>()).ok();
    for (k, r) in rows.iter_mut().enumerate() {
        r.delta_r_star = stars.as_ref().map(|s| s[k]);
    }
    rows.sort_by(|a, b| b.delta_r.total_cmp(&a.delta_r));
    Ok(rows)
}

fn rows_in_input_order(baseline: &ScenarioReport, attacks: &[ScenarioReport]) -> Result<Vec<ComparisonRow>, RunError> {
    for a in attacks {
        if a.pack != baseline.pack || a.horizon_days != baseline.horizon_days {
            return Err(RunError::IncompatibleReports(format!(
                "`{}` ({}, {} days) vs baseline `{}` ({}, {} days)",
                a.scenario, a.pack, a.horizon_days, baseline.scenario, baseline.pack, baseline.horizon_days
            )));
        }
    }
    let drs: Vec<f64> = attacks
        .iter()
        .map(|a| delta_r(a.r_sei_ohm, baseline.r_sei_ohm))
        .collect::<Result<_, _>>()?;
    let stars = delta_r_star(&drs).ok();
    Ok(attacks
        .iter()
        .zip(&drs)
        .enumerate()
        .map(|(k, (a, &dr))| ComparisonRow {
            scenario: a.scenario.clone(),
            city: a.city,
            archetype: a.archetype,
            attack: a.attack,
            delta_r: dr,
            delta_r_star: stars.as_ref().map(|s| s[k]),
            delta_r_per_day: dr / a.days_simulated.max(1) as f64,
            delta_r_per_attack: dr / a.attacks_per_day.max(1) as f64,
            vital_damage: a.vital_damage,
            eol_day: a.eol_day,
            monetized_loss: a.monetized_loss,
        })
        .collect())
}

/// Reports with `delta_r`, `delta_r_star` and `delta_r_per_day` filled from the table.
pub fn annotate(baseline: &ScenarioReport, attacks: &[ScenarioReport]) -> Result<Vec<ScenarioReport>, RunError> {
    let rows = rows_in_input_order(baseline, attacks)?;
    let mut out = attacks.to_vec();
    for (r, row) in out.iter_mut().zip(&rows) {
        r.delta_r = Some(row.delta_r);
        r.delta_r_star = row.delta_r_star;
        r.delta_r_per_day = Some(row.delta_r_per_day);
        r.delta_r_per_attack = Some(row.delta_r_per_attack);
    }
    Ok(out)
}

fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn round_value(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_value),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 9 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    serde_json::to_string_pretty(&v)
}

pub const DAILY_CSV_HEADER: [&str; 5] = ["day", "sei_thickness_m", "capacity_lost_ah", "soc_min", "temp_max_k"];

/// Daily series as CSV.
pub fn daily_series_csv(report: &ScenarioReport) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DAILY_CSV_HEADER)?;
    for s in &report.daily_series {
        w.write_record([
            s.day.to_string(),
            round_sig(s.sei_thickness).to_string(),
            round_sig(s.capacity_lost).to_string(),
            round_sig(s.soc_min).to_string(),
            round_sig(s.temperature_max).to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Comparison table as CSV.
pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scenario",
        "city",
        "archetype",
        "attack",
        "delta_r",
        "delta_r_star",
        "delta_r_per_day",
        "delta_r_per_attack",
        "vital_damage",
        "eol_day",
        "monetized_loss_usd",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            format!("{:?}", r.city),
            format!("{:?}", r.archetype),
            opt(r.attack.map(|a| format!("{a:?}"))),
            round_sig(r.delta_r).to_string(),
            opt(r.delta_r_star.map(round_sig)),
            round_sig(r.delta_r_per_day).to_string(),
            round_sig(r.delta_r_per_attack).to_string(),
            round_sig(r.vital_damage).to_string(),
            opt(r.eol_day),
            format!("{:.2}", r.monetized_loss),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}
