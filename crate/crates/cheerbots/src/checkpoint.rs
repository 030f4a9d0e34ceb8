//! Versioned parameter checkpoints and the hash-verified bundle directory
//! that holds every pipeline artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cheerbots_core::nn::Module;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};
use crate::io;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Parameters of one module: shapes in visit order and every value as a
/// shortest round-trip decimal string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub component: String,
    /// Everything needed to rebuild the module before loading values.
    pub config: serde_json::Value,
    pub shapes: Vec<Vec<usize>>,
    pub flat_values: Vec<String>,
}

impl Checkpoint {
    pub fn capture<M: Module + ?Sized, C: Serialize>(component: &str, config: &C, module: &M) -> AppResult<Self> {
        let values = module.flat_values();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(cheerbots_core::Error::NonFinite("checkpoint parameter").into());
        }
        Ok(Checkpoint {
            format_version: FORMAT_VERSION,
            component: component.into(),
            config: serde_json::to_value(config).map_err(|e| AppError::json("checkpoint config", e))?,
            shapes: module.shapes(),
            flat_values: values.iter().map(|v| format!("{v:?}")).collect(),
        })
    }

    pub fn check(&self, component: &str) -> AppResult<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(AppError::Version {
                what: format!("{} checkpoint", self.component),
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if self.component != component {
            return Err(AppError::WrongComponent { expected: component.into(), found: self.component.clone() });
        }
        Ok(())
    }

    pub fn config<C: DeserializeOwned>(&self) -> AppResult<C> {
        serde_json::from_value(self.config.clone()).map_err(|e| AppError::json(format!("{} config", self.component), e))
    }

    pub fn values(&self) -> AppResult<Vec<f64>> {
        self.flat_values
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| AppError::Invalid(format!("bad parameter value `{s}`")))
            })
            .collect()
    }

    /// Loads the values into a module built from the same config.
    pub fn restore_into<M: Module + ?Sized>(&self, module: &mut M) -> AppResult<()> {
        if module.shapes() != self.shapes {
            return Err(cheerbots_core::Error::Shape(format!(
                "{} checkpoint shapes {:?} do not match the rebuilt module {:?}",
                self.component,
                self.shapes,
                module.shapes()
            ))
            .into());
        }
        module.load_flat(&self.values()?)?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub components: BTreeMap<String, ManifestEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest { format_version: FORMAT_VERSION, components: BTreeMap::new() }
    }
}

/// Pipeline artifacts and the stage that produces each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Artifact {
    Records,
    Catalog,
    Detector,
    Predictor,
    Retrieval,
    Chm,
    PoolCache,
    Generator,
    Policy,
    RewardCurve,
}

impl Artifact {
    pub fn name(self) -> &'static str {
        match self {
            Artifact::Records => "records",
            Artifact::Catalog => "catalog",
            Artifact::Detector => "detector",
            Artifact::Predictor => "predictor",
            Artifact::Retrieval => "retrieval",
            Artifact::Chm => "chm",
            Artifact::PoolCache => "pool_cache",
            Artifact::Generator => "generator",
            Artifact::Policy => "policy",
            Artifact::RewardCurve => "reward_curve",
        }
    }

    pub fn file(self) -> &'static str {
        match self {
            Artifact::Records => "records.ndjson",
            Artifact::RewardCurve => "reward_curve.csv",
            Artifact::Catalog => "catalog.json",
            Artifact::Detector => "detector.json",
            Artifact::Predictor => "predictor.json",
            Artifact::Retrieval => "retrieval.json",
            Artifact::Chm => "chm.json",
            Artifact::PoolCache => "pool_cache.json",
            Artifact::Generator => "generator.json",
            Artifact::Policy => "policy.json",
        }
    }

    pub fn stage(self) -> &'static str {
        match self {
            Artifact::Records | Artifact::Catalog => "ingest",
            Artifact::Detector => "train-detector",
            Artifact::Predictor => "train-predictor",
            Artifact::Retrieval | Artifact::Chm | Artifact::PoolCache => "train-retrieval",
            Artifact::Generator => "train-gen",
            Artifact::Policy | Artifact::RewardCurve => "train-rl",
        }
    }
}

/// A directory of artifacts listed in `manifest.json` with their SHA-256.
/// Every read is verified against the manifest.
#[derive(Debug, Clone)]
pub struct Bundle {
    dir: PathBuf,
    manifest: Manifest,
}

impl Bundle {
    /// Opens `dir`, starting an empty manifest when none exists yet.
    pub fn open(dir: &Path) -> AppResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            let m: Manifest = io::read_json(&path)?;
            if m.format_version != FORMAT_VERSION {
                return Err(AppError::Version {
                    what: "bundle manifest".into(),
                    found: m.format_version,
                    expected: FORMAT_VERSION,
                });
            }
            m
        } else {
            Manifest::default()
        };
        Ok(Bundle { dir: dir.to_path_buf(), manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn has(&self, a: Artifact) -> bool {
        self.manifest.components.contains_key(a.name())
    }

    pub fn hash(&self, a: Artifact) -> Option<&str> {
        self.manifest.components.get(a.name()).map(|e| e.sha256.as_str())
    }

    pub fn path(&self, a: Artifact) -> PathBuf {
        self.dir.join(a.file())
    }

    /// Writes the artifact and records its hash in the manifest.
    pub fn put_bytes(&mut self, a: Artifact, bytes: &[u8]) -> AppResult<String> {
        io::write_bytes(&self.path(a), bytes)?;
        let sha = sha256_hex(bytes);
        self.manifest
            .components
            .insert(a.name().into(), ManifestEntry { file: a.file().into(), sha256: sha.clone() });
        io::write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)?;
        Ok(sha)
    }

    pub fn put_json<T: Serialize>(&mut self, a: Artifact, value: &T) -> AppResult<String> {
        self.put_bytes(a, &io::to_json_bytes(value)?)
    }

    /// Reads an artifact after verifying its hash; a missing entry names
    /// the stage that produces it.
    pub fn get_bytes(&self, a: Artifact) -> AppResult<Vec<u8>> {
        self.get_bytes_or(a, a.stage())
    }

    pub fn get_bytes_or(&self, a: Artifact, stage: &'static str) -> AppResult<Vec<u8>> {
        let entry = self
            .manifest
            .components
            .get(a.name())
            .ok_or_else(|| AppError::MissingStage { stage, artifact: a.name().into() })?;
        let bytes = io::read_bytes(&self.dir.join(&entry.file))?;
        let found = sha256_hex(&bytes);
        if found != entry.sha256 {
            return Err(AppError::HashMismatch { component: a.name().into(), expected: entry.sha256.clone(), found });
        }
        Ok(bytes)
    }

    pub fn get_json<T: DeserializeOwned>(&self, a: Artifact) -> AppResult<T> {
        let bytes = self.get_bytes(a)?;
        serde_json::from_slice(&bytes).map_err(|e| AppError::json(a.file(), e))
    }

    pub fn checkpoint(&self, a: Artifact) -> AppResult<Checkpoint> {
        let c: Checkpoint = self.get_json(a)?;
        c.check(a.name())?;
        Ok(c)
    }
}
