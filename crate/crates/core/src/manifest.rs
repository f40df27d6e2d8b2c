//! Cell parameter manifest: a flat JSON map of field name to `{value, unit, source}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cell::{CellError, CellParams};
use crate::ocv::{CurveError, OcvCurve};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest is missing `{0}`")]
    Missing(&'static str),
    #[error("`{field}` has unit `{found}`, expected `{expected}`")]
    Unit {
        field: &'static str,
        found: String,
        expected: &'static str,
    },
    #[error("`{0}` must be a number")]
    NotNumber(&'static str),
    #[error("`{field}` is not a list of [stoichiometry, volts] pairs")]
    NotCurve { field: &'static str },
    #[error("`{field}`: {source}")]
    Curve {
        field: &'static str,
        #[source]
        source: CurveError,
    },
    #[error("unknown manifest field `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Params(#[from] CellError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entry {
    pub value: serde_json::Value,
    pub unit: String,
    pub source: String,
}

/// Scalar fields and their expected units.
const SCALARS: &[(&str, &str)] = &[
    ("nominal_capacity", "Ah"),
    ("ocv_extrapolation_slope", "V"),
    ("exchange_current_anode", "A/m^2"),
    ("exchange_current_cathode", "A/m^2"),
    ("electrode_area", "m^2"),
    ("internal_resistance_base", "Ohm"),
    ("lower_cutoff_voltage", "V"),
    ("upper_cutoff_voltage", "V"),
    ("sei_rate_constant", "m/s"),
    ("sei_solvent_diffusivity", "m^2/s"),
    ("sei_activation_energy", "J/mol"),
    ("sei_molar_volume", "m^3/mol"),
    ("sei_ionic_conductivity", "S/m"),
    ("sei_solvent_concentration", "mol/m^3"),
    ("sei_transfer_coefficient", "1"),
    ("sei_reference_potential", "V"),
    ("sei_cycling_fraction", "1"),
    ("sei_cycling_length", "m"),
    ("sei_initial_thickness", "m"),
    ("specific_surface_ratio", "1"),
    ("sei_decomposition_rate", "m/(s*V)"),
    ("cu_dissolution_potential", "V"),
    ("plating_exchange_current", "A/m^2"),
    ("plating_transfer_coefficient", "1"),
    ("thermal_mass", "J/K"),
    ("heat_transfer_coeff", "W/K"),
    ("reference_temperature", "K"),
];
const CURVES: &[&str] = &["ocv_cathode", "ocv_anode"];

struct Reader {
    entries: BTreeMap<String, Entry>,
}

impl Reader {
    fn entry(&self, field: &'static str, unit: &'static str) -> Result<&Entry, ManifestError> {
        let e = self.entries.get(field).ok_or(ManifestError::Missing(field))?;
        if e.unit != unit {
            return Err(ManifestError::Unit {
                field,
                found: e.unit.clone(),
                expected: unit,
            });
        }
        Ok(e)
    }

    fn scalar(&self, field: &'static str) -> Result<f64, ManifestError> {
        let unit = SCALARS
            .iter()
            .find(|(f, _)| *f == field)
            .map(|(_, u)| *u)
            .expect("scalar field listed in SCALARS");
        self.entry(field, unit)?
            .value
            .as_f64()
            .ok_or(ManifestError::NotNumber(field))
    }

    fn curve(&self, field: &'static str, slope: f64) -> Result<OcvCurve<f64>, ManifestError> {
        let points: Vec<(f64, f64)> = serde_json::from_value(self.entry(field, "V")?.value.clone())
            .map_err(|_| ManifestError::NotCurve { field })?;
        OcvCurve::new(points, slope).map_err(|source| ManifestError::Curve { field, source })
    }
}

/// Parses and validates a cell manifest.
pub fn parse_cell_manifest(text: &str) -> Result<CellParams<f64>, ManifestError> {
    let entries: BTreeMap<String, Entry> = serde_json::from_str(text)?;
    for key in entries.keys() {
        let known = SCALARS.iter().any(|(f, _)| f == key) || CURVES.contains(&key.as_str());
        if !known {
            return Err(ManifestError::Unknown(key.clone()));
        }
    }
    let r = Reader { entries };
    let slope = r.scalar("ocv_extrapolation_slope")?;
    let params = CellParams {
        nominal_capacity: r.scalar("nominal_capacity")?,
        ocv_cathode: r.curve("ocv_cathode", slope)?,
        ocv_anode: r.curve("ocv_anode", slope)?,
        exchange_current_anode: r.scalar("exchange_current_anode")?,
        exchange_current_cathode: r.scalar("exchange_current_cathode")?,
        electrode_area: r.scalar("electrode_area")?,
        internal_resistance_base: r.scalar("internal_resistance_base")?,
        lower_cutoff_voltage: r.scalar("lower_cutoff_voltage")?,
        upper_cutoff_voltage: r.scalar("upper_cutoff_voltage")?,
        sei_rate_constant: r.scalar("sei_rate_constant")?,
        sei_solvent_diffusivity: r.scalar("sei_solvent_diffusivity")?,
        sei_activation_energy: r.scalar("sei_activation_energy")?,
        sei_molar_volume: r.scalar("sei_molar_volume")?,
        sei_ionic_conductivity: r.scalar("sei_ionic_conductivity")?,
        sei_solvent_concentration: r.scalar("sei_solvent_concentration")?,
        sei_transfer_coefficient: r.scalar("sei_transfer_coefficient")?,
        sei_reference_potential: r.scalar("sei_reference_potential")?,
        sei_cycling_fraction: r.scalar("sei_cycling_fraction")?,
        sei_cycling_length: r.scalar("sei_cycling_length")?,
        sei_initial_thickness: r.scalar("sei_initial_thickness")?,
        specific_surface_ratio: r.scalar("specific_surface_ratio")?,
        sei_decomposition_rate: r.scalar("sei_decomposition_rate")?,
        cu_dissolution_potential: r.scalar("cu_dissolution_potential")?,
        plating_exchange_current: r.scalar("plating_exchange_current")?,
        plating_transfer_coefficient: r.scalar("plating_transfer_coefficient")?,
        thermal_mass: r.scalar("thermal_mass")?,
        heat_transfer_coeff: r.scalar("heat_transfer_coeff")?,
        reference_temperature: r.scalar("reference_temperature")?,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataDir;

    fn bundled() -> String {
        DataDir::bundled().read("cells/nca_graphite.json").unwrap()
    }

    #[test]
    fn bundled_manifest_parses() {
        let p = parse_cell_manifest(&bundled()).unwrap();
        assert_eq!(p.nominal_capacity, 72.0);
        assert_eq!(p.ocv_anode.penalty_slope(), p.ocv_cathode.penalty_slope());
    }

    #[test]
    fn every_entry_has_a_source() {
        let entries: BTreeMap<String, Entry> = serde_json::from_str(&bundled()).unwrap();
        assert_eq!(entries.len(), SCALARS.len() + CURVES.len());
        for (k, e) in &entries {
            assert!(!e.source.trim().is_empty(), "{k} has no source");
        }
    }

    #[test]
    fn unit_mismatch_is_rejected() {
        let text = bundled().replace(r#""unit": "Ah""#, r#""unit": "mAh""#);
        let err = parse_cell_manifest(&text).unwrap_err();
        assert!(matches!(
            err,
            ManifestError::Unit {
                field: "nominal_capacity",
                ..
            }
        ));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let mut entries: BTreeMap<String, Entry> = serde_json::from_str(&bundled()).unwrap();
        entries.insert(
            "colour".into(),
            Entry {
                value: 1.into(),
                unit: "1".into(),
                source: "x".into(),
            },
        );
        let text = serde_json::to_string(&entries).unwrap();
        assert!(matches!(parse_cell_manifest(&text), Err(ManifestError::Unknown(_))));
    }

    #[test]
    fn non_monotone_curve_is_rejected() {
        let text = bundled().replace("[0.5, 0.12]", "[0.5, 0.2]");
        assert!(matches!(
            parse_cell_manifest(&text),
            Err(ManifestError::Curve { field: "ocv_anode", .. })
        ));
    }
}
