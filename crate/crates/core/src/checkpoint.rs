//! JSON checkpoints for trained models and in-progress runs.
//!
//! Floats are written with shortest round-trip formatting and parsed
//! exactly, so save/load is bit-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::pseudo::{PseudoEntry, PseudoLabeledSet};
use crate::trainer::EpochRecord;

pub const MODEL_FORMAT: &str = "gabc-model";
pub const TRAINING_FORMAT: &str = "gabc-training";
pub const FORMAT_VERSION: u32 = 1;

/// Row-major extractor weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorWeights {
    /// `hidden_dim x input_dim`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `feature_dim x hidden_dim`
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub dims: ModelDims,
    pub temperature: f64,
    pub seed: u64,
    pub extractor: ExtractorWeights,
    /// One `feature_dim` vector per class.
    pub prototypes: Vec<Vec<f64>>,
}

impl ModelCheckpoint {
    pub fn from_params(params: &ModelParams, seed: u64) -> Self {
        let l = params.layout();
        let v = params.values();
        let dims = params.dims();
        Self {
            format: MODEL_FORMAT.to_string(),
            version: FORMAT_VERSION,
            dims,
            temperature: params.temperature(),
            seed,
            extractor: ExtractorWeights {
                w1: v[l.w1.clone()].to_vec(),
                b1: v[l.b1.clone()].to_vec(),
                w2: v[l.w2.clone()].to_vec(),
                b2: v[l.b2.clone()].to_vec(),
            },
            prototypes: v[l.prototypes.clone()]
                .chunks(dims.feature_dim)
                .map(<[f64]>::to_vec)
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        check_header(&self.format, MODEL_FORMAT, self.version)?;
        self.dims.validate()?;
        let l = self.dims.layout();
        let e = &self.extractor;
        let parts = [
            ("w1", e.w1.len(), l.w1.len()),
            ("b1", e.b1.len(), l.b1.len()),
            ("w2", e.w2.len(), l.w2.len()),
            ("b2", e.b2.len(), l.b2.len()),
        ];
        for (name, got, want) in parts {
            if got != want {
                return Err(Error::Checkpoint(format!("{name} has {got} values, expected {want}")));
            }
        }
        if self.prototypes.len() != self.dims.classes
            || self.prototypes.iter().any(|w| w.len() != self.dims.feature_dim)
        {
            return Err(Error::Checkpoint(format!(
                "prototypes must be {} vectors of length {}",
                self.dims.classes, self.dims.feature_dim
            )));
        }
        let mut values = Vec::with_capacity(l.len());
        values.extend_from_slice(&e.w1);
        values.extend_from_slice(&e.b1);
        values.extend_from_slice(&e.w2);
        values.extend_from_slice(&e.b2);
        for w in &self.prototypes {
            values.extend_from_slice(w);
        }
        ModelParams::from_values(self.dims, self.temperature, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        check_header(&c.format, MODEL_FORMAT, c.version)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoRecord {
    pub index: usize,
    pub label: usize,
    pub confidence: f64,
}

impl From<&PseudoEntry> for PseudoRecord {
    fn from(e: &PseudoEntry) -> Self {
        Self {
            index: e.index,
            label: e.label,
            confidence: e.confidence,
        }
    }
}

/// Model plus the optimizer and schedule state needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCheckpoint {
    pub model: ModelCheckpoint,
    /// Momentum buffer, in the flat parameter order.
    pub velocity: Vec<f64>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer iterations.
    pub iteration: u64,
    /// Pseudo-labels in use at the last completed epoch.
    pub pseudo: Vec<PseudoRecord>,
    pub log: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct TrainingFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: TrainingCheckpoint,
}

impl TrainingCheckpoint {
    pub fn pseudo_set(&self) -> PseudoLabeledSet {
        PseudoLabeledSet {
            entries: self
                .pseudo
                .iter()
                .map(|r| PseudoEntry {
                    index: r.index,
                    label: r.label,
                    confidence: r.confidence,
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = TrainingFile {
            format: TRAINING_FORMAT.to_string(),
            version: FORMAT_VERSION,
            body: self.clone(),
        };
        fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: TrainingFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        check_header(&file.format, TRAINING_FORMAT, file.version)?;
        check_header(&file.body.model.format, MODEL_FORMAT, file.body.model.version)?;
        Ok(file.body)
    }
}

fn check_header(format: &str, expected: &str, version: u32) -> Result<()> {
    if format != expected {
        return Err(Error::Checkpoint(format!("format `{format}`, expected `{expected}`")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    Ok(())
}
