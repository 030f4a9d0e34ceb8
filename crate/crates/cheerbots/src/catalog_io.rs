//! Catalog configuration files.

use std::path::Path;

use cheerbots_core::va::{CatalogSpec, EmotionCatalog};

use crate::error::{AppError, AppResult};
use crate::io;

/// The bundled EmpatheticDialogues label configuration: 32 raw labels,
/// three merges and 19 seed coordinates.
pub const DEFAULT_ED_CATALOG: &str = include_str!("../data/ed_catalog.json");

pub fn parse_catalog(json: &str) -> AppResult<(CatalogSpec, EmotionCatalog)> {
    let spec: CatalogSpec = serde_json::from_str(json).map_err(|e| AppError::json("catalog", e))?;
    let catalog = EmotionCatalog::from_spec(&spec)?;
    Ok((spec, catalog))
}

pub fn default_catalog() -> (CatalogSpec, EmotionCatalog) {
    parse_catalog(DEFAULT_ED_CATALOG).expect("bundled catalog is valid")
}

pub fn load_catalog(path: &Path) -> AppResult<(CatalogSpec, EmotionCatalog)> {
    let bytes = io::read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| AppError::Invalid(format!("{} is not UTF-8", path.display())))?;
    parse_catalog(&text)
}

/// Writes `catalog` back in configuration form, keeping the raw label list
/// of `original` so merges stay declared.
pub fn save_catalog(path: &Path, original: &CatalogSpec, catalog: &EmotionCatalog) -> AppResult<()> {
    io::write_json(path, &catalog.to_spec(&original.labels))
}
