use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::analytics::AnalyticsOptions;
use crate::corpus::{DedupPolicy, InputFormat, PlatformSet};
use crate::inference::{BackendConfig, BackendKind};
use crate::qa::Strata;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    /// Guessed from the extension when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<InputFormat>,
    /// Platform for rows that carry none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<String>,
}

impl InputSpec {
    pub fn format(&self) -> Result<InputFormat, PipelineError> {
        match self.format {
            Some(f) => Ok(f),
            None => InputFormat::from_path(&self.path).map_err(PipelineError::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingDefaults {
    pub n: usize,
    pub seed: u64,
    pub strata: Strata,
}

impl Default for SamplingDefaults {
    fn default() -> Self {
        Self { n: 50, seed: 42, strata: Strata::ByTier }
    }
}

/// One JSON document describing a run. Precedence: file, then command-line
/// flags, then environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Vec<InputSpec>,
    pub platforms: Vec<String>,
    pub backend: BackendConfig,
    /// Defaults to `backend`.
    pub judge_backend: Option<BackendConfig>,
    /// Bundled alias map when unset.
    pub alias_map: Option<PathBuf>,
    /// Bundled specialization catalog when unset.
    pub spec_catalog: Option<PathBuf>,
    pub dedup: DedupPolicy,
    pub sampling: SamplingDefaults,
    pub out_dir: PathBuf,
    pub analytics: AnalyticsOptions,
    /// Postings per checkpoint flush.
    pub chunk_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            platforms: PlatformSet::default().iter().map(|p| p.as_str().to_string()).collect(),
            backend: BackendConfig::default(),
            judge_backend: None,
            alias_map: None,
            spec_catalog: None,
            dedup: DedupPolicy::default(),
            sampling: SamplingDefaults::default(),
            out_dir: PathBuf::from("out"),
            analytics: AnalyticsOptions::default(),
            chunk_size: 64,
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Read a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut config: Self =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for input in &mut config.inputs {
            rebase(base, &mut input.path);
        }
        for p in [&mut config.alias_map, &mut config.spec_catalog, &mut config.backend.rulebook].into_iter().flatten() {
            rebase(base, p);
        }
        if let Some(j) = config.judge_backend.as_mut().and_then(|j| j.rulebook.as_mut()) {
            rebase(base, j);
        }
        rebase(base, &mut config.out_dir);
        Ok(config)
    }

    /// `JOBSCOPE_BACKEND_URL` / `JOBSCOPE_MODEL_ID` override the classifier backend.
    pub fn apply_env(&mut self) {
        self.backend.apply_env();
    }

    pub fn judge(&self) -> &BackendConfig {
        self.judge_backend.as_ref().unwrap_or(&self.backend)
    }

    pub fn platform_set(&self) -> PlatformSet {
        PlatformSet::new(&self.platforms)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let must_exist = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        for input in &self.inputs {
            must_exist("input", &input.path)?;
            input.format()?;
        }
        for (what, p) in [("alias map", &self.alias_map), ("specialization catalog", &self.spec_catalog)] {
            if let Some(p) = p {
                must_exist(what, p)?;
            }
        }
        for backend in [&self.backend, self.judge()] {
            backend.validate()?;
            if backend.kind == BackendKind::Stub {
                if let Some(r) = &backend.rulebook {
                    must_exist("rulebook", r)?;
                }
            }
        }
        self.dedup.validate()?;
        if self.platforms.is_empty() {
            return Err(PipelineError::Config("platforms is empty".into()));
        }
        if self.chunk_size == 0 {
            return Err(PipelineError::Config("chunk_size must be at least 1".into()));
        }
        if self.analytics.top_k == 0 {
            return Err(PipelineError::Config("analytics.top_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Hash of the settings that shape results. The output directory is
    /// left out so relocated runs hash the same.
    pub fn hash(&self) -> String {
        let mut shaped = self.clone();
        shaped.out_dir = PathBuf::new();
        let text = serde_json::to_string(&shaped).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
