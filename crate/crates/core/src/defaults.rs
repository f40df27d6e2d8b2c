//! Bundled default parameter sets.

use std::sync::OnceLock;

use crate::cell::CellParams;
use crate::data::DataDir;
use crate::manifest::parse_cell_manifest;

/// The bundled NCA/graphite cell.
pub fn nca_graphite_cell() -> CellParams<f64> {
    static CELL: OnceLock<CellParams<f64>> = OnceLock::new();
    CELL.get_or_init(|| {
        let text = DataDir::bundled()
            .read("cells/nca_graphite.json")
            .expect("bundled cell manifest");
        parse_cell_manifest(&text).expect("bundled cell manifest is valid")
    })
    .clone()
}
