use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparsehash::eval::Averaging;
use sparsehash::retrieval::Alphabet;
use sparsehash::trainer::{LossConfig, SgdConfig};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMethod {
    #[default]
    SparseHash,
    NnHash,
    DiffHash,
    Multimodal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub m: usize,
    /// Recurrent shrinkage steps `T`.
    pub iterations: usize,
    pub beta: f64,
    /// Quantization threshold `theta`.
    pub threshold: f64,
    pub alphabet: Alphabet,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            m: 48,
            iterations: sparsehash::encoder::DEFAULT_ITERATIONS,
            beta: sparsehash::encoder::DEFAULT_BETA,
            threshold: 0.0,
            alphabet: Alphabet::Ternary,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Feature matrix (`.bin` container or CSV).
    pub features: Option<PathBuf>,
    /// Labels used to sample training pairs when `pairs` is absent.
    pub labels: Option<PathBuf>,
    /// Explicit `a b s` training pairs.
    pub pairs: Option<PathBuf>,
    pub positives: Option<usize>,
    pub negatives: Option<usize>,
    /// Second modality for `method = "multimodal"`.
    pub features_y: Option<PathBuf>,
    /// `kind a b s` pairs for `method = "multimodal"`.
    pub multimodal_pairs: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnHashSection {
    pub margin: f64,
}

impl Default for NnHashSection {
    fn default() -> Self {
        Self { margin: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultimodalSection {
    pub mu1: f64,
    pub mu2: f64,
}

impl Default for MultimodalSection {
    fn default() -> Self {
        Self { mu1: 1.0, mu2: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub radii: Vec<u32>,
    /// `R` of mAP@R.
    pub map_cutoff: usize,
    /// `K` of MP@K.
    pub mp_cutoff: usize,
    pub averaging: Averaging,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            radii: vec![0, 1, 2],
            map_cutoff: 100,
            mp_cutoff: 10,
            averaging: Averaging::Micro,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: TrainMethod,
    pub model: ModelSection,
    pub loss: LossConfig,
    pub sgd: SgdConfig,
    pub data: DataSection,
    pub nnhash: NnHashSection,
    pub multimodal: MultimodalSection,
    pub experiment: EvalSection,
}

impl RunConfig {
    /// Parses a config file; relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let data = &mut cfg.data;
        for p in [
            &mut data.features,
            &mut data.labels,
            &mut data.pairs,
            &mut data.features_y,
            &mut data.multimodal_pairs,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Hex SHA-256 of `parts`, each length-prefixed.
pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Directory `root/<first 16 hex digits of hash>`.
pub fn run_dir(root: &Path, hash: &str) -> Result<PathBuf, CliError> {
    let dir = root.join(&hash[..16]);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}
