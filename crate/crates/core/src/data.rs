//! Access to the bundled data files (cell manifests, presets, drive cycles,
//! climate normals). Setting `PACKATTACK_DATA_DIR` reads them from disk instead.

use std::path::{Path, PathBuf};

pub const DATA_DIR_ENV: &str = "PACKATTACK_DATA_DIR";

static BUNDLED: &[(&str, &str)] = &[
    (
        "cells/nca_graphite.json",
        include_str!("../data/cells/nca_graphite.json"),
    ),
    ("packs/pack_100kwh.json", include_str!("../data/packs/pack_100kwh.json")),
    (
        "packs/compact_19kwh.json",
        include_str!("../data/packs/compact_19kwh.json"),
    ),
    (
        "vehicles/midsize_ev.json",
        include_str!("../data/vehicles/midsize_ev.json"),
    ),
    (
        "vehicles/compact_ev.json",
        include_str!("../data/vehicles/compact_ev.json"),
    ),
    ("chargers/level1.json", include_str!("../data/chargers/level1.json")),
    ("cycles/udds.csv", include_str!("../data/cycles/udds.csv")),
    (
        "climate/monthly_normals.csv",
        include_str!("../data/climate/monthly_normals.csv"),
    ),
    ("aux/catalog.json", include_str!("../data/aux/catalog.json")),
];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("no bundled data file `{0}`")]
    NotBundled(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("rejecting data path `{0}` (must be relative, without `..`)")]
    BadPath(String),
}

/// Where data files are read from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DataDir {
    root: Option<PathBuf>,
}

impl DataDir {
    pub fn bundled() -> Self {
        Self { root: None }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self {
            root: Some(root.into()),
        }
    }

    /// Bundled data unless `PACKATTACK_DATA_DIR` is set.
    pub fn from_env() -> Self {
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::at(dir),
            _ => Self::bundled(),
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Reads a file given relative to the data directory, e.g. `packs/pack_100kwh.json`.
    pub fn read(&self, rel: &str) -> Result<String, DataError> {
        let p = Path::new(rel);
        if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(DataError::BadPath(rel.to_string()));
        }
        match &self.root {
            None => BUNDLED
                .iter()
                .find(|(name, _)| *name == rel)
                .map(|(_, text)| text.to_string())
                .ok_or_else(|| DataError::NotBundled(rel.to_string())),
            Some(root) => {
                let path = root.join(rel);
                std::fs::read_to_string(&path).map_err(|source| DataError::Io { path, source })
            }
        }
    }

    /// Names of the bundled files.
    pub fn bundled_files() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }
}
