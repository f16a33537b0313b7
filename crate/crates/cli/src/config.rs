//! Pipeline configuration. A TOML file uses the same field names as
//! [`PipelineConfig`]; command-line flags override it.

use std::path::{Path, PathBuf};

use chatter_atlas::cluster::APParams;
use chatter_atlas::embed::{LocalEmbedderConfig, RemoteEmbedderConfig};
use chatter_atlas::ingest::{BucketSpec, LogFormat};
use chatter_atlas::profile::DEFAULT_MIN_MESSAGES;
use chatter_atlas::report::ReportFormat;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Local,
    Remote,
}

impl std::str::FromStr for EmbedderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(EmbedderKind::Local),
            "remote" => Ok(EmbedderKind::Remote),
            other => Err(format!("unknown embedder `{other}` (expected local or remote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_path: Option<PathBuf>,
    /// Guessed from the file extension when unset.
    pub input_format: Option<LogFormat>,
    pub min_messages: usize,
    /// Chatters to leave out entirely, e.g. bots. Case-insensitive.
    pub exclude_users: Vec<String>,
    pub buckets: String,
    pub embedder: EmbedderKind,
    pub local: LocalEmbedderConfig,
    pub remote: RemoteEmbedderConfig,
    /// Defaults to `cache/` inside the output directory.
    pub cache_dir: Option<PathBuf>,
    /// Shared self-similarity; the median off-diagonal similarity when unset.
    pub preference: Option<f64>,
    pub ap: APParams,
    pub prune_singletons: bool,
    pub auto_merge: bool,
    pub auto_merge_depth: usize,
    pub merge_spec_path: Option<PathBuf>,
    /// Directory receiving every artifact of a run.
    pub output_path: PathBuf,
    pub output_format: ReportFormat,
    pub k_terms: usize,
    pub k_samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input_path: None,
            input_format: None,
            min_messages: DEFAULT_MIN_MESSAGES,
            exclude_users: Vec::new(),
            buckets: BucketSpec::default().to_string(),
            embedder: EmbedderKind::Local,
            local: LocalEmbedderConfig::default(),
            remote: RemoteEmbedderConfig::default(),
            cache_dir: None,
            preference: None,
            ap: APParams::default(),
            prune_singletons: true,
            auto_merge: false,
            auto_merge_depth: 3,
            merge_spec_path: None,
            output_path: PathBuf::from("chatter-atlas-out"),
            output_format: ReportFormat::Markdown,
            k_terms: 8,
            k_samples: 3,
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML config, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))
    }

    pub fn input_path(&self) -> Result<&Path, CliError> {
        self.input_path
            .as_deref()
            .ok_or_else(|| CliError::Input("no input given (use --input or input_path)".into()))
    }

    pub fn resolved_input_format(&self) -> LogFormat {
        if let Some(f) = self.input_format {
            return f;
        }
        match self.input_path.as_deref().and_then(Path::extension) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => LogFormat::Csv,
            _ => LogFormat::Jsonl,
        }
    }

    pub fn bucket_spec(&self) -> Result<BucketSpec, CliError> {
        Ok(self.buckets.parse()?)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_path.join("cache"))
    }

    /// Checks everything a full run needs before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let input = self.input_path()?;
        if !input.is_file() {
            return Err(CliError::Input(format!("input {} does not exist", input.display())));
        }
        if let Some(spec) = &self.merge_spec_path {
            if !spec.is_file() {
                return Err(CliError::MergeSpec(format!("{} does not exist", spec.display())));
            }
        }
        if self.min_messages == 0 {
            return Err(CliError::Input("min_messages must be >= 1".into()));
        }
        if self.auto_merge_depth == 0 {
            return Err(CliError::Input("auto_merge_depth must be >= 1".into()));
        }
        if let Some(p) = self.preference {
            if !p.is_finite() {
                return Err(CliError::Input("preference must be finite".into()));
            }
        }
        self.bucket_spec()?;
        self.ap.validate()?;
        match self.embedder {
            EmbedderKind::Local => self.local.validate()?,
            EmbedderKind::Remote => self.remote.validate()?,
        }
        Ok(())
    }
}
