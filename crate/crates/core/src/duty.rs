//! Daily duty profiles: UDDS-based driving, CC-CV charge windows, auxiliary
//! load catalog, and city ambient temperature.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::num::SECONDS_PER_DAY;

pub const AIR_DENSITY: f64 = 1.2;
pub const GRAVITY: f64 = 9.806_65;
pub const METRES_PER_MILE: f64 = 1_609.344;
pub const DAILY_MILES: f64 = 50.0;
/// Local clock time at which every daily profile starts (06:00).
pub const PROFILE_START: f64 = 6.0 * 3600.0;
const DAYS_PER_YEAR: f64 = 365.0;
const MONTH_DAYS: [f64; 12] = [31., 28., 31., 30., 31., 30., 31., 31., 30., 31., 30., 31.];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DutyError {
    #[error("drive cycle: {0}")]
    Cycle(String),
    #[error("climate table: {0}")]
    Climate(String),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("charge windows deliver at most {available_wh:.0} Wh but driving needs {needed_wh:.0} Wh")]
    InfeasibleSchedule { needed_wh: f64, available_wh: f64 },
}

fn invalid(what: &'static str, reason: impl Into<String>) -> DutyError {
    DutyError::Invalid {
        what,
        reason: reason.into(),
    }
}

/// Speed trace sampled at 1 Hz from t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveCycle {
    samples: Vec<(f64, f64)>,
}

impl DriveCycle {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, DutyError> {
        if samples.len() < 2 {
            return Err(DutyError::Cycle("need at least two samples".into()));
        }
        for (k, &(t, v)) in samples.iter().enumerate() {
            if t != k as f64 {
                return Err(DutyError::Cycle(format!(
                    "sample {k} at t = {t}, expected exact 1 s spacing from 0"
                )));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DutyError::Cycle(format!("negative or non-finite speed {v} at t = {t}")));
            }
        }
        Ok(Self { samples })
    }

    /// Parses a `t_s,speed_mps` CSV.
    pub fn from_csv(text: &str) -> Result<Self, DutyError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| DutyError::Cycle("empty file".into()))?;
        if header.trim() != "t_s,speed_mps" {
            return Err(DutyError::Cycle(format!("unexpected header `{header}`")));
        }
        let samples = lines
            .enumerate()
            .map(|(k, line)| {
                let mut it = line.split(',').map(|f| f.trim().parse::<f64>());
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(t)), Some(Ok(v)), None) => Ok((t, v)),
                    _ => Err(DutyError::Cycle(format!("bad row {}: `{line}`", k + 2))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(samples)
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn speeds(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }

    /// Distance covered (m), trapezoidal.
    pub fn distance_m(&self) -> f64 {
        self.samples.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    #[serde(default)]
    pub name: String,
    /// kg, including the pack.
    pub mass: f64,
    pub drag_coeff: f64,
    /// m².
    pub frontal_area: f64,
    pub rolling_resist: f64,
    pub drivetrain_efficiency: f64,
    /// Share of negative wheel power recovered into the pack.
    pub regen_fraction: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), DutyError> {
        for (name, v) in [
            ("mass", self.mass),
            ("drag_coeff", self.drag_coeff),
            ("frontal_area", self.frontal_area),
            ("rolling_resist", self.rolling_resist),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid("vehicle", format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("drivetrain_efficiency", self.drivetrain_efficiency),
            ("regen_fraction", self.regen_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid("vehicle", format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Battery-side power (W, + discharge) for the given wheel speed and acceleration.
pub fn road_load_power(speed: f64, accel: f64, v: &VehicleParams) -> f64 {
    let aero = 0.5 * AIR_DENSITY * v.drag_coeff * v.frontal_area * speed.powi(3);
    let rolling = v.rolling_resist * v.mass * GRAVITY * speed;
    let inertial = v.mass * accel * speed;
    let wheel = aero + rolling + inertial;
    if wheel >= 0.0 {
        wheel / v.drivetrain_efficiency
    } else {
        wheel * v.regen_fraction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AuxKind {
    AcHigh,
    AcLow,
    PowerSteering,
    Lights,
    Fan,
    Wipers,
}

impl AuxKind {
    pub const ALL: [AuxKind; 6] = [
        AuxKind::AcHigh,
        AuxKind::AcLow,
        AuxKind::PowerSteering,
        AuxKind::Lights,
        AuxKind::Fan,
        AuxKind::Wipers,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxComponent {
    pub name: AuxKind,
    /// W.
    pub power_draw: f64,
}

/// Constant power draw of each auxiliary component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<AuxKind, f64>", into = "BTreeMap<AuxKind, f64>")]
pub struct AuxCatalog {
    draws: BTreeMap<AuxKind, f64>,
}

impl TryFrom<BTreeMap<AuxKind, f64>> for AuxCatalog {
    type Error = DutyError;
    fn try_from(draws: BTreeMap<AuxKind, f64>) -> Result<Self, DutyError> {
        for kind in AuxKind::ALL {
            match draws.get(&kind) {
                Some(&w) if w > 0.0 && w.is_finite() => {}
                Some(&w) => {
                    return Err(invalid(
                        "aux catalog",
                        format!("{kind:?} draw must be positive, got {w}"),
                    ))
                }
                None => return Err(invalid("aux catalog", format!("missing {kind:?}"))),
            }
        }
        Ok(Self { draws })
    }
}

impl From<AuxCatalog> for BTreeMap<AuxKind, f64> {
    fn from(c: AuxCatalog) -> Self {
        c.draws
    }
}

impl Default for AuxCatalog {
    fn default() -> Self {
        let draws = BTreeMap::from([
            (AuxKind::AcHigh, 3000.0),
            (AuxKind::AcLow, 800.0),
            (AuxKind::PowerSteering, 400.0),
            (AuxKind::Lights, 200.0),
            (AuxKind::Fan, 300.0),
            (AuxKind::Wipers, 80.0),
        ]);
        Self { draws }
    }
}

impl AuxCatalog {
    pub fn component(&self, kind: AuxKind) -> AuxComponent {
        AuxComponent {
            name: kind,
            power_draw: self.draws[&kind],
        }
    }

    pub fn power(&self, kind: AuxKind) -> f64 {
        self.draws[&kind]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum City {
    Oslo,
    SanFrancisco,
    Beijing,
    Delhi,
    Phoenix,
}

impl City {
    pub const ALL: [City; 5] = [
        City::Oslo,
        City::SanFrancisco,
        City::Beijing,
        City::Delhi,
        City::Phoenix,
    ];
}

impl std::str::FromStr for City {
    type Err = DutyError;
    fn from_str(s: &str) -> Result<Self, DutyError> {
        match s {
            "Oslo" => Ok(City::Oslo),
            "SanFrancisco" => Ok(City::SanFrancisco),
            "Beijing" => Ok(City::Beijing),
            "Delhi" => Ok(City::Delhi),
            "Phoenix" => Ok(City::Phoenix),
            other => Err(DutyError::Climate(format!("unknown city `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbientProfile {
    pub city: City,
    /// K, January first.
    pub monthly_means: [f64; 12],
    /// K, half the peak-to-trough daily swing.
    pub diurnal_amplitude: f64,
}

pub const DEFAULT_DIURNAL_AMPLITUDE: f64 = 5.0;

impl AmbientProfile {
    pub fn validate(&self) -> Result<(), DutyError> {
        if let Some(m) = self.monthly_means.iter().find(|m| !(**m >= 230.0 && **m <= 330.0)) {
            return Err(DutyError::Climate(format!(
                "{:?}: monthly mean {m} K outside [230, 330]",
                self.city
            )));
        }
        if !(self.diurnal_amplitude >= 0.0 && self.diurnal_amplitude.is_finite()) {
            return Err(DutyError::Climate("diurnal amplitude must be >= 0".into()));
        }
        Ok(())
    }

    /// Monthly means linearly interpolated between mid-month anchors (day of
    /// year, fractional, wrapping over a 365-day year).
    pub fn seasonal_mean(&self, day_of_year: f64) -> f64 {
        // Anchors at mid-month, padded with December before and January after.
        let mut anchors = [(0.0, 0.0); 14];
        let mut start = 0.0;
        for (m, len) in MONTH_DAYS.iter().enumerate() {
            anchors[m + 1] = (start + len / 2.0, self.monthly_means[m]);
            start += len;
        }
        anchors[0] = (anchors[12].0 - DAYS_PER_YEAR, self.monthly_means[11]);
        anchors[13] = (anchors[1].0 + DAYS_PER_YEAR, self.monthly_means[0]);
        let t = day_of_year.rem_euclid(DAYS_PER_YEAR);
        let k = anchors.partition_point(|a| a.0 <= t).clamp(1, 13);
        let ((x0, y0), (x1, y1)) = (anchors[k - 1], anchors[k]);
        y0 + (y1 - y0) * (t - x0) / (x1 - x0)
    }
}

/// Ambient temperature (K) on `day` (day of year, 0-based, wrapping) at local
/// `second` since midnight: the seasonal mean at midday of that day plus a
/// diurnal cosine peaking at 15:00.
pub fn ambient_at(profile: &AmbientProfile, day: u32, second: f64) -> f64 {
    profile.seasonal_mean(day as f64 + 0.5)
        + profile.diurnal_amplitude * (2.0 * PI * (second - 15.0 * 3600.0) / SECONDS_PER_DAY).cos()
}

/// Parses the `city,month,mean_K` climate table.
pub fn parse_climate(text: &str, diurnal_amplitude: f64) -> Result<BTreeMap<City, AmbientProfile>, DutyError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| DutyError::Climate("empty file".into()))?;
    if header.trim() != "city,month,mean_K" {
        return Err(DutyError::Climate(format!("unexpected header `{header}`")));
    }
    let mut seen: BTreeMap<City, [Option<f64>; 12]> = BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(DutyError::Climate(format!("bad row `{line}`")));
        }
        let city: City = f[0].parse()?;
        let month: usize = f[1]
            .parse()
            .ok()
            .filter(|m| (1..=12).contains(m))
            .ok_or_else(|| DutyError::Climate(format!("bad month in `{line}`")))?;
        let mean: f64 = f[2]
            .parse()
            .map_err(|_| DutyError::Climate(format!("bad temperature in `{line}`")))?;
        let slot = &mut seen.entry(city).or_insert([None; 12])[month - 1];
        if slot.replace(mean).is_some() {
            return Err(DutyError::Climate(format!("duplicate {city:?} month {month}")));
        }
    }
    let mut out = BTreeMap::new();
    for (city, months) in seen {
        let mut monthly_means = [0.0; 12];
        for (m, v) in months.iter().enumerate() {
            monthly_means[m] = v.ok_or_else(|| DutyError::Climate(format!("{city:?} lacks month {}", m + 1)))?;
        }
        let p = AmbientProfile {
            city,
            monthly_means,
            diurnal_amplitude,
        };
        p.validate()?;
        out.insert(city, p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeProtocol {
    /// W drawn from the outlet at most.
    pub peak_power: f64,
    pub cv_voltage_per_cell: f64,
    /// Pack current (A) below which the CV phase ends.
    pub termination_current: f64,
}

impl ChargeProtocol {
    pub fn validate(&self) -> Result<(), DutyError> {
        if !(self.peak_power > 0.0 && self.cv_voltage_per_cell > 0.0 && self.termination_current > 0.0) {
            return Err(invalid("charge protocol", "all fields must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    /// Charges overnight at home only.
    Home,
    /// Charges at home overnight and at work in the morning.
    HomeWork,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegmentKind {
    Drive,
    Charge,
    Parked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SegmentPayload {
    /// Battery power (W, + discharge) for each 1 s interval.
    Drive(Vec<f64>),
    Charge(ChargeProtocol),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// s since the profile start.
    pub start: f64,
    pub duration: f64,
    pub payload: SegmentPayload,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// One simulated day, starting at [`PROFILE_START`] local time on `day_of_year`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyProfile {
    pub day_of_year: u32,
    pub segments: Vec<Segment>,
    pub ambient: AmbientProfile,
}

impl DailyProfile {
    /// Ambient temperature `offset` seconds after the profile start.
    pub fn ambient_at_offset(&self, offset: f64) -> f64 {
        let local = PROFILE_START + offset;
        let carry = (local / SECONDS_PER_DAY).floor();
        let day = (self.day_of_year as f64 + carry) as u32;
        ambient_at(&self.ambient, day, local - carry * SECONDS_PER_DAY)
    }

    pub fn charge_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Charge)
    }

    /// Battery energy drawn by driving (J).
    pub fn drive_energy_j(&self) -> f64 {
        self.segments
            .iter()
            .filter_map(|s| match &s.payload {
                SegmentPayload::Drive(p) => Some(p.iter().sum::<f64>()),
                _ => None,
            })
            .sum()
    }

    /// Same day shifted to another day of year (segments are identical).
    pub fn on_day(&self, day_of_year: u32) -> Self {
        Self {
            day_of_year,
            ..self.clone()
        }
    }
}

/// Per-second battery power for the daily mileage: the cycle repeated until
/// `miles` are covered, split at the half-distance point into two commutes.
pub fn commute_blocks(cycle: &DriveCycle, vehicle: &VehicleParams, miles: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let target = miles * METRES_PER_MILE;
    let per_cycle = cycle.distance_m();
    assert!(per_cycle > 0.0, "drive cycle covers no distance");
    let s = cycle.samples();
    let mut powers = Vec::new();
    let mut dists = Vec::new();
    let mut covered = 0.0;
    'outer: loop {
        for w in s.windows(2) {
            if covered >= target {
                break 'outer;
            }
            let (v0, v1) = (w[0].1, w[1].1);
            let v_mid = 0.5 * (v0 + v1);
            powers.push(road_load_power(v_mid, v1 - v0, vehicle));
            covered += v_mid;
            dists.push(covered);
        }
    }
    // Split at the interval closest to half the distance.
    let half = 0.5 * covered;
    let cut = dists.partition_point(|&d| d < half);
    let cut = if cut > 0 && (dists[cut - 1] - half).abs() <= (dists[cut] - half).abs() {
        cut
    } else {
        cut + 1
    };
    let evening = powers.split_off(cut);
    (powers, evening, covered)
}

/// Builds one day of driving, parking and charging for the archetype.
pub fn build_daily_profile(
    archetype: Archetype,
    cycle: &DriveCycle,
    vehicle: &VehicleParams,
    charger: &ChargeProtocol,
    ambient: &AmbientProfile,
    day_of_year: u32,
) -> Result<DailyProfile, DutyError> {
    vehicle.validate()?;
    charger.validate()?;
    ambient.validate()?;
    let (morning, evening, _) = commute_blocks(cycle, vehicle, DAILY_MILES);

    let hour = 3600.0;
    // Offsets from 06:00.
    let evening_drive = 10.5 * hour; // 16:30
    let home_charge = 12.0 * hour; // 18:00
    let home_charge_end = 23.0 * hour; // 05:00
    let work_charge = 1.5 * hour; // 07:30
    let work_charge_end = 5.5 * hour; // 11:30

    if morning.len() as f64 > work_charge || evening.len() as f64 > home_charge - evening_drive {
        return Err(invalid("daily profile", "commute blocks overrun the schedule"));
    }

    let mut segments = Vec::new();
    let mut push = |kind, start: f64, end: f64, payload| {
        if end > start {
            segments.push(Segment {
                kind,
                start,
                duration: end - start,
                payload,
            });
        }
    };
    let m_len = morning.len() as f64;
    let e_len = evening.len() as f64;
    push(SegmentKind::Drive, 0.0, m_len, SegmentPayload::Drive(morning));
    match archetype {
        Archetype::Home => push(SegmentKind::Parked, m_len, evening_drive, SegmentPayload::None),
        Archetype::HomeWork => {
            push(SegmentKind::Parked, m_len, work_charge, SegmentPayload::None);
            push(
                SegmentKind::Charge,
                work_charge,
                work_charge_end,
                SegmentPayload::Charge(*charger),
            );
            push(
                SegmentKind::Parked,
                work_charge_end,
                evening_drive,
                SegmentPayload::None,
            );
        }
    }
    push(
        SegmentKind::Drive,
        evening_drive,
        evening_drive + e_len,
        SegmentPayload::Drive(evening),
    );
    push(
        SegmentKind::Parked,
        evening_drive + e_len,
        home_charge,
        SegmentPayload::None,
    );
    push(
        SegmentKind::Charge,
        home_charge,
        home_charge_end,
        SegmentPayload::Charge(*charger),
    );
    push(
        SegmentKind::Parked,
        home_charge_end,
        SECONDS_PER_DAY,
        SegmentPayload::None,
    );

    let profile = DailyProfile {
        day_of_year,
        segments,
        ambient: ambient.clone(),
    };
    let needed_wh = profile.drive_energy_j() / 3600.0;
    let available_wh: f64 = profile
        .charge_segments()
        .map(|s| charger.peak_power * s.duration / 3600.0)
        .sum();
    if needed_wh > available_wh {
        return Err(DutyError::InfeasibleSchedule {
            needed_wh,
            available_wh,
        });
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataDir;

    pub(crate) fn vehicle() -> VehicleParams {
        serde_json::from_str(&DataDir::bundled().read("vehicles/midsize_ev.json").unwrap()).unwrap()
    }

    fn udds() -> DriveCycle {
        DriveCycle::from_csv(&DataDir::bundled().read("cycles/udds.csv").unwrap()).unwrap()
    }

    fn charger() -> ChargeProtocol {
        serde_json::from_str(&DataDir::bundled().read("chargers/level1.json").unwrap()).unwrap()
    }

    fn climate() -> BTreeMap<City, AmbientProfile> {
        parse_climate(
            &DataDir::bundled().read("climate/monthly_normals.csv").unwrap(),
            DEFAULT_DIURNAL_AMPLITUDE,
        )
        .unwrap()
    }

    #[test]
    fn udds_is_the_standard_trace() {
        let c = udds();
        assert_eq!(c.samples().len(), 1370);
        let miles = c.distance_m() / METRES_PER_MILE;
        assert!((miles - 7.45).abs() < 0.01, "{miles}");
    }

    #[test]
    fn rejects_bad_cycles() {
        assert!(DriveCycle::new(vec![(0.0, 1.0), (2.0, 1.0)]).is_err());
        assert!(DriveCycle::new(vec![(0.0, 1.0), (1.0, -1.0)]).is_err());
        assert!(DriveCycle::from_csv("t,v\n0,0\n1,0\n").is_err());
    }

    #[test]
    fn road_load_examples() {
        let v = vehicle();
        assert_eq!(road_load_power(0.0, 0.0, &v), 0.0);
        let by_hand = (0.5 * 1.2 * 0.24 * 2.3 * 25.0f64.powi(3) + 0.009 * 2100.0 * 9.80665 * 25.0) / 0.88;
        assert!((road_load_power(25.0, 0.0, &v) - by_hand).abs() < 1e-9);
        let wheel: f64 = 0.5 * 1.2 * 0.24 * 2.3 * 1000.0 + 0.009 * 2100.0 * 9.80665 * 10.0 - 2100.0 * 1.5 * 10.0;
        let p = road_load_power(10.0, -1.5, &v);
        assert!(p <= 0.0 && p.abs() <= 0.6 * wheel.abs() + 1e-9);
    }

    #[test]
    fn charge_segment_counts() {
        let c = climate();
        let home = build_daily_profile(Archetype::Home, &udds(), &vehicle(), &charger(), &c[&City::Oslo], 0).unwrap();
        let work =
            build_daily_profile(Archetype::HomeWork, &udds(), &vehicle(), &charger(), &c[&City::Oslo], 0).unwrap();
        assert_eq!(home.charge_segments().count(), 1);
        assert_eq!(work.charge_segments().count(), 2);
        for p in [&home, &work] {
            let total: f64 = p.segments.iter().map(|s| s.duration).sum();
            assert_eq!(total, SECONDS_PER_DAY);
            for w in p.segments.windows(2) {
                assert_eq!(w[0].end(), w[1].start);
            }
        }
    }

    #[test]
    fn fifty_miles_per_day() {
        let (m, e, covered) = commute_blocks(&udds(), &vehicle(), DAILY_MILES);
        let quantum = udds().speeds().fold(0.0, f64::max);
        assert!((covered - 50.0 * METRES_PER_MILE).abs() <= quantum);
        assert!(m.len() > 4000 && e.len() > 4000);
    }

    #[test]
    fn phoenix_is_warmer_than_oslo_in_january() {
        let c = climate();
        let at = |city| ambient_at(&c[&city], 15, 14.0 * 3600.0);
        assert!(at(City::Phoenix) > at(City::Oslo));
    }

    #[test]
    fn ambient_examples() {
        let mut p = climate()[&City::Beijing].clone();
        let d = 100;
        let swing = ambient_at(&p, d, 15.0 * 3600.0) - ambient_at(&p, d, 3.0 * 3600.0);
        assert!((swing - 2.0 * DEFAULT_DIURNAL_AMPLITUDE).abs() < 1e-9);
        p.diurnal_amplitude = 0.0;
        assert_eq!(ambient_at(&p, d, 9000.0), p.seasonal_mean(d as f64 + 0.5));
        // Mid-month anchors are hit exactly.
        assert!((p.seasonal_mean(15.5) - p.monthly_means[0]).abs() < 1e-12);
        assert!((p.seasonal_mean(31.0 + 14.0) - p.monthly_means[1]).abs() < 1e-12);
    }

    #[test]
    fn annual_mean_matches_monthly_normals() {
        for p in climate().values() {
            let n = 365 * 24;
            let mean: f64 = (0..n)
                .map(|k| ambient_at(p, (k / 24) as u32, (k % 24) as f64 * 3600.0))
                .sum::<f64>()
                / n as f64;
            let monthly: f64 = p.monthly_means.iter().sum::<f64>() / 12.0;
            assert!((mean - monthly).abs() < 0.5, "{:?}: {mean} vs {monthly}", p.city);
        }
    }

    #[test]
    fn seasonal_mean_is_continuous_across_new_year() {
        let p = &climate()[&City::Oslo];
        let before = p.seasonal_mean(364.999);
        let after = p.seasonal_mean(0.001);
        assert!((before - after).abs() < 1e-3);
    }

    #[test]
    fn climate_parse_errors() {
        assert!(parse_climate("city,month,mean_K\nOslo,13,270\n", 5.0).is_err());
        assert!(parse_climate("city,month,mean_K\nAtlantis,1,270\n", 5.0).is_err());
        assert!(parse_climate("city,month,mean_K\nOslo,1,270\n", 5.0).is_err());
    }

    #[test]
    fn undersized_charger_is_infeasible() {
        let mut weak = charger();
        weak.peak_power = 100.0;
        let c = climate();
        let err = build_daily_profile(Archetype::Home, &udds(), &vehicle(), &weak, &c[&City::Delhi], 0).unwrap_err();
        assert!(matches!(err, DutyError::InfeasibleSchedule { .. }));
    }

    #[test]
    fn profile_is_deterministic() {
        let c = climate();
        let a = build_daily_profile(
            Archetype::HomeWork,
            &udds(),
            &vehicle(),
            &charger(),
            &c[&City::Delhi],
            40,
        )
        .unwrap();
        let b = build_daily_profile(
            Archetype::HomeWork,
            &udds(),
            &vehicle(),
            &charger(),
            &c[&City::Delhi],
            40,
        )
        .unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn drive_energy_matches_road_load_integral() {
        let c = climate();
        let p = build_daily_profile(Archetype::Home, &udds(), &vehicle(), &charger(), &c[&City::Oslo], 0).unwrap();
        // Independent integration: walk the repeated cycle directly.
        let v = vehicle();
        let s = udds();
        let mut e = 0.0;
        let mut d = 0.0;
        'outer: loop {
            for w in s.samples().windows(2) {
                if d >= DAILY_MILES * METRES_PER_MILE {
                    break 'outer;
                }
                let vm = 0.5 * (w[0].1 + w[1].1);
                e += road_load_power(vm, w[1].1 - w[0].1, &v);
                d += vm;
            }
        }
        assert!((p.drive_energy_j() - e).abs() <= 1e-6 * e.abs());
        let kwh_per_mile = e / 3.6e6 / DAILY_MILES;
        assert!(kwh_per_mile > 0.1 && kwh_per_mile < 0.35, "{kwh_per_mile}");
    }
}
