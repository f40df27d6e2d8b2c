//! Scenario configuration and preset resolution.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackError, AttackSpec};
use crate::cell::CellParams;
use crate::data::{DataDir, DataError};
use crate::duty::{
    parse_climate, AmbientProfile, Archetype, AuxCatalog, ChargeProtocol, City, DriveCycle, DutyError, VehicleParams,
    DEFAULT_DIURNAL_AMPLITUDE,
};
use crate::manifest::{parse_cell_manifest, ManifestError};
use crate::pack::{BmsConfig, PackError, PackTopology};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{what}: {source}")]
    Json {
        what: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("cell manifest `{name}`: {source}")]
    Manifest {
        name: String,
        #[source]
        source: ManifestError,
    },
    #[error(transparent)]
    Duty(#[from] DutyError),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn json<T: serde::de::DeserializeOwned>(what: impl Into<String>, text: &str) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|source| ConfigError::Json {
        what: what.into(),
        source,
    })
}

/// Pack preset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackPreset {
    pub name: String,
    pub n_series: usize,
    pub n_parallel: usize,
    /// Cell manifest name under `cells/`.
    pub cell: String,
    pub bms: BmsConfig<f64>,
    pub heterogeneity_seed: u64,
    /// Half-width of the uniform capacity spread (fraction).
    pub capacity_spread: f64,
    pub unit_cost_usd_per_kwh: f64,
}

fn default_charger() -> String {
    "level1".into()
}

fn default_cycle() -> String {
    "udds".into()
}

fn default_soc() -> f64 {
    1.0
}

fn default_amplitude() -> f64 {
    DEFAULT_DIURNAL_AMPLITUDE
}

fn default_true() -> bool {
    true
}

/// One (pack, vehicle, city, user, attack) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub pack: String,
    pub vehicle: String,
    #[serde(default = "default_charger")]
    pub charger: String,
    #[serde(default = "default_cycle")]
    pub cycle: String,
    pub city: City,
    pub archetype: Archetype,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    pub horizon_days: u32,
    pub rng_seed: u64,
    /// Day of year (0 = 1 January) of the first simulated day.
    #[serde(default)]
    pub start_day_of_year: u32,
    /// Initial SOC of every cell (the run starts at 06:00 after the overnight charge).
    #[serde(default = "default_soc")]
    pub initial_soc: f64,
    /// Overrides the manifest's fresh-cell film thickness (m), e.g. for an aged pack.
    #[serde(default)]
    pub initial_sei_thickness: Option<f64>,
    #[serde(default = "default_amplitude")]
    pub diurnal_amplitude: f64,
    /// Stop stepping at end of life; copper dissolution always stops the run.
    #[serde(default = "default_true")]
    pub stop_at_eol: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = json("scenario", text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon_days < 1 {
            return Err(ConfigError::Invalid("horizon_days must be >= 1".into()));
        }
        if self.start_day_of_year >= 365 {
            return Err(ConfigError::Invalid("start_day_of_year must be < 365".into()));
        }
        if !(self.initial_soc > 0.0 && self.initial_soc <= 1.05) {
            return Err(ConfigError::Invalid(format!(
                "initial_soc {} outside (0, 1.05]",
                self.initial_soc
            )));
        }
        if let Some(d) = self.initial_sei_thickness {
            if !(0.0..1e-6).contains(&d) {
                return Err(ConfigError::Invalid(format!(
                    "initial_sei_thickness {d} m outside [0, 1 um)"
                )));
            }
        }
        if !(self.diurnal_amplitude >= 0.0 && self.diurnal_amplitude <= 20.0) {
            return Err(ConfigError::Invalid("diurnal_amplitude outside [0, 20] K".into()));
        }
        if let Some(a) = &self.attack {
            a.validate(self.archetype)?;
        }
        Ok(())
    }
}

/// Everything a run needs, loaded and validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub preset: PackPreset,
    pub pack: PackTopology<f64>,
    pub bms: BmsConfig<f64>,
    pub vehicle: VehicleParams,
    pub charger: ChargeProtocol,
    pub cycle: DriveCycle,
    pub ambient: AmbientProfile,
    pub catalog: AuxCatalog,
}

pub fn load_pack_preset(data: &DataDir, name: &str) -> Result<PackPreset, ConfigError> {
    let preset: PackPreset = json(
        format!("pack preset `{name}`"),
        &data.read(&format!("packs/{name}.json"))?,
    )?;
    preset.bms.validate()?;
    if !(preset.capacity_spread >= 0.0 && preset.capacity_spread < 0.2) {
        return Err(ConfigError::Invalid(format!(
            "{name}: capacity_spread outside [0, 0.2)"
        )));
    }
    if !(preset.unit_cost_usd_per_kwh >= 0.0) {
        return Err(ConfigError::Invalid(format!("{name}: negative unit cost")));
    }
    Ok(preset)
}

pub fn load_cell(data: &DataDir, name: &str) -> Result<CellParams<f64>, ConfigError> {
    parse_cell_manifest(&data.read(&format!("cells/{name}.json"))?).map_err(|source| ConfigError::Manifest {
        name: name.to_string(),
        source,
    })
}

pub fn load_vehicle(data: &DataDir, name: &str) -> Result<VehicleParams, ConfigError> {
    let v: VehicleParams = json(
        format!("vehicle `{name}`"),
        &data.read(&format!("vehicles/{name}.json"))?,
    )?;
    v.validate()?;
    Ok(v)
}

pub fn load_charger(data: &DataDir, name: &str) -> Result<ChargeProtocol, ConfigError> {
    let c: ChargeProtocol = json(
        format!("charger `{name}`"),
        &data.read(&format!("chargers/{name}.json"))?,
    )?;
    c.validate()?;
    Ok(c)
}

pub fn load_cycle(data: &DataDir, name: &str) -> Result<DriveCycle, ConfigError> {
    Ok(DriveCycle::from_csv(&data.read(&format!("cycles/{name}.csv"))?)?)
}

pub fn load_ambient(data: &DataDir, city: City, diurnal_amplitude: f64) -> Result<AmbientProfile, ConfigError> {
    let table = parse_climate(&data.read("climate/monthly_normals.csv")?, diurnal_amplitude)?;
    table
        .get(&city)
        .cloned()
        .ok_or_else(|| ConfigError::Invalid(format!("climate table has no {city:?}")))
}

pub fn load_catalog(data: &DataDir) -> Result<AuxCatalog, ConfigError> {
    json("aux catalog", &data.read("aux/catalog.json")?)
}

/// Builds the pack described by a preset: uniform fresh cells at `soc`, then
/// the seeded capacity spread.
pub fn build_pack(
    preset: &PackPreset,
    params: CellParams<f64>,
    soc: f64,
    temperature: f64,
    seed: u64,
) -> Result<PackTopology<f64>, ConfigError> {
    let cell = params.fresh_state(soc, temperature);
    Ok(PackTopology::uniform(preset.n_series, preset.n_parallel, params, cell)?
        .with_capacity_spread(preset.capacity_spread, seed))
}

/// Heterogeneity seed: the preset seed mixed with the scenario seed.
pub fn mixed_seed(preset_seed: u64, scenario_seed: u64) -> u64 {
    preset_seed ^ scenario_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Scenario {
    pub fn resolve(&self, data: &DataDir) -> Result<Resolved, ConfigError> {
        self.validate()?;
        let preset = load_pack_preset(data, &self.pack)?;
        let mut params = load_cell(data, &preset.cell)?;
        if let Some(d) = self.initial_sei_thickness {
            params.sei_initial_thickness = d;
        }
        let ambient = load_ambient(data, self.city, self.diurnal_amplitude)?;
        let t0 = crate::duty::ambient_at(&ambient, self.start_day_of_year, crate::duty::PROFILE_START);
        let pack = build_pack(
            &preset,
            params,
            self.initial_soc,
            t0,
            mixed_seed(preset.heterogeneity_seed, self.rng_seed),
        )?;
        if let Some(a) = &self.attack {
            if let Some(t) = &a.target {
                t.validate_for(&pack)?;
            }
        }
        Ok(Resolved {
            bms: preset.bms,
            pack,
            vehicle: load_vehicle(data, &self.vehicle)?,
            charger: load_charger(data, &self.charger)?,
            cycle: load_cycle(data, &self.cycle)?,
            ambient,
            catalog: load_catalog(data)?,
            preset,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        Scenario::from_json(
            r#"{"pack":"pack_100kwh","vehicle":"midsize_ev","city":"Oslo","archetype":"Home",
                "horizon_days":1,"rng_seed":1}"#,
        )
        .unwrap()
    }

    #[test]
    fn bundled_presets_resolve() {
        let r = base().resolve(&DataDir::bundled()).unwrap();
        assert_eq!((r.pack.n_series, r.pack.n_parallel), (96, 4));
        let kwh = r.pack.nominal_energy_wh() / 1000.0;
        assert!((kwh - 100.0).abs() < 3.0, "{kwh}");
        let compact = load_pack_preset(&DataDir::bundled(), "compact_19kwh").unwrap();
        assert!(compact.n_series * compact.n_parallel < 96 * 4);
    }

    #[test]
    fn spread_is_seeded_and_bounded() {
        let a = base().resolve(&DataDir::bundled()).unwrap().pack;
        let b = base().resolve(&DataDir::bundled()).unwrap().pack;
        assert_eq!(a, b);
        assert!(a.cells.iter().all(|c| (c.capacity_scale - 1.0).abs() <= 0.01));
        assert!(a.cells.iter().any(|c| c.capacity_scale != a.cells[0].capacity_scale));
        let mut other = base();
        other.rng_seed = 2;
        assert_ne!(other.resolve(&DataDir::bundled()).unwrap().pack, a);
    }

    #[test]
    fn bad_refs_and_fields_are_config_errors() {
        let mut s = base();
        s.pack = "nope".into();
        assert!(matches!(s.resolve(&DataDir::bundled()), Err(ConfigError::Data(_))));
        assert!(Scenario::from_json(r#"{"pack":"x"}"#).is_err());
        let unknown = r#"{"pack":"pack_100kwh","vehicle":"midsize_ev","city":"Oslo","archetype":"Home",
                "horizon_days":1,"rng_seed":1,"colour":"red"}"#;
        assert!(Scenario::from_json(unknown).is_err());
        let zero = r#"{"pack":"pack_100kwh","vehicle":"midsize_ev","city":"Oslo","archetype":"Home",
                "horizon_days":0,"rng_seed":1}"#;
        assert!(matches!(Scenario::from_json(zero), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn rowhammer_target_must_fit_pack() {
        let mut s = base();
        s.attack = Some(
            serde_json::from_str(
                r#"{"kind":"Rowhammer","components":["AcHigh"],"target":{"strings":[7]},
                    "start":"AfterFullCharge","duration":3600,"repeat":"Daily"}"#,
            )
            .unwrap(),
        );
        assert!(matches!(s.resolve(&DataDir::bundled()), Err(ConfigError::Pack(_))));
    }
}
