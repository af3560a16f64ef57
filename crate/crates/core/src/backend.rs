//! Sources of attention slices for a query/calibration layout pair.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionSlice;
use crate::icra::{dump_path, read_dump_file, IcraError};
use crate::layout::{Pass, PromptLayout};
use crate::toy::{synth_attention, PlantSpec, ToyError, ToyModel};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error("{path}: {source}")]
    Dump { path: PathBuf, source: IcraError },
    #[error("missing attention dump {0}")]
    MissingDump(PathBuf),
    #[error("missing calibration dump {0}")]
    MissingCalibrationDump(PathBuf),
    #[error("no planted target for query `{0}`")]
    NoPlantTarget(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

/// Attention for one query.
#[derive(Debug, Clone)]
pub struct Acquired {
    pub query: AttentionSlice,
    pub calibration: Option<AttentionSlice>,
    /// Calibration-pass positions served from the query pass's KV cache.
    pub reused_prefix_tokens: usize,
    /// Number of forward passes (or dump reads) performed.
    pub passes: usize,
}

pub trait AttentionBackend: Send + Sync {
    fn name(&self) -> String;

    /// Query-span attention rows for `layout` and, when given, for the
    /// calibration layout.
    fn acquire(&self, layout: &PromptLayout, calibration: Option<&PromptLayout>) -> Result<Acquired, BackendError>;
}

/// A [`ToyModel`] run in-process. The calibration pass reuses the query
/// pass's keys and values for the shared prefix.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    model: ToyModel,
    reuse_prefix: bool,
}

impl ToyBackend {
    pub fn new(model: ToyModel) -> Self {
        Self {
            model,
            reuse_prefix: true,
        }
    }

    /// Disable KV-prefix reuse (both passes run from scratch).
    pub fn without_prefix_reuse(mut self) -> Self {
        self.reuse_prefix = false;
        self
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }
}

impl AttentionBackend for ToyBackend {
    fn name(&self) -> String {
        let c = self.model.config();
        format!("toy-l{}h{}d{}-s{}", c.layers, c.heads, c.model_dim, c.seed)
    }

    fn acquire(&self, layout: &PromptLayout, calibration: Option<&PromptLayout>) -> Result<Acquired, BackendError> {
        let Some(cal) = calibration else {
            let query = self.model.forward_rows(&layout.token_ids, layout.query_span())?;
            return Ok(Acquired {
                query,
                calibration: None,
                reused_prefix_tokens: 0,
                passes: 1,
            });
        };
        if self.reuse_prefix {
            let (query, cache) = self
                .model
                .forward_rows_with_cache(&layout.token_ids, layout.query_span())?;
            let (cal_slice, reused) = self
                .model
                .forward_rows_cached(&cache, &cal.token_ids, cal.query_span())?;
            Ok(Acquired {
                query,
                calibration: Some(cal_slice),
                reused_prefix_tokens: reused,
                passes: 2,
            })
        } else {
            let query = self.model.forward_rows(&layout.token_ids, layout.query_span())?;
            let cal_slice = self.model.forward_rows(&cal.token_ids, cal.query_span())?;
            Ok(Acquired {
                query,
                calibration: Some(cal_slice),
                reused_prefix_tokens: 0,
                passes: 2,
            })
        }
    }
}

/// Planted-signal settings shared by all queries, plus each query's target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub boost: f64,
    pub base: f64,
    #[serde(default)]
    pub position_bias: Vec<f64>,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default = "one")]
    pub heads: usize,
    /// query id → target document id
    pub targets: HashMap<String, String>,
}

fn one() -> usize {
    1
}

impl PlantConfig {
    pub fn spec_for(&self, query_id: &str) -> Option<PlantSpec> {
        self.targets.get(query_id).map(|t| PlantSpec {
            target: t.clone(),
            boost: self.boost,
            position_bias: self.position_bias.clone(),
            base: self.base,
            layers: self.layers,
            heads: self.heads,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PlantedBackend {
    config: PlantConfig,
}

impl PlantedBackend {
    pub fn new(config: PlantConfig) -> Self {
        Self { config }
    }
}

impl AttentionBackend for PlantedBackend {
    fn name(&self) -> String {
        "planted".to_string()
    }

    fn acquire(&self, layout: &PromptLayout, calibration: Option<&PromptLayout>) -> Result<Acquired, BackendError> {
        let spec = self
            .config
            .spec_for(&layout.query_id)
            .ok_or_else(|| BackendError::NoPlantTarget(layout.query_id.clone()))?;
        let query = synth_attention(layout, &spec, true)?;
        let calibration = calibration.map(|c| synth_attention(c, &spec, false)).transpose()?;
        let passes = 1 + usize::from(calibration.is_some());
        Ok(Acquired {
            query,
            calibration,
            reused_prefix_tokens: 0,
            passes,
        })
    }
}

/// Reads `{query_id}.q.icra` and `{query_id}.cal.icra` from a directory.
#[derive(Debug, Clone)]
pub struct DumpBackend {
    dir: PathBuf,
}

impl DumpBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn load(&self, query_id: &str, pass: Pass) -> Result<AttentionSlice, BackendError> {
        let path = dump_path(&self.dir, query_id, pass);
        if !path.exists() {
            return Err(match pass {
                Pass::Query => BackendError::MissingDump(path),
                Pass::Calibration => BackendError::MissingCalibrationDump(path),
            });
        }
        read_dump_file(&path)
            .map(|d| d.slice)
            .map_err(|source| BackendError::Dump { path, source })
    }
}

impl AttentionBackend for DumpBackend {
    fn name(&self) -> String {
        format!("dump:{}", self.dir.display())
    }

    fn acquire(&self, layout: &PromptLayout, calibration: Option<&PromptLayout>) -> Result<Acquired, BackendError> {
        let query = self.load(&layout.query_id, Pass::Query)?;
        let calibration = calibration
            .map(|c| self.load(&c.query_id, Pass::Calibration))
            .transpose()?;
        let passes = 1 + usize::from(calibration.is_some());
        Ok(Acquired {
            query,
            calibration,
            reused_prefix_tokens: 0,
            passes,
        })
    }
}
