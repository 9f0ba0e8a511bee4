//! File formats and the commands behind the `listrank` binary.
//!
//! Every command is a plain function over in-memory data so it can be driven
//! from tests and examples as well as from the CLI.

mod dataset;
mod eval;
mod latency;
mod report;
mod rerank;
mod reward;
mod synthetic;

use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

pub use dataset::{
    build_candidates, load_dataset, read_corpus, read_qrels, read_queries, read_run, run_rankings, write_run,
    DatasetBundle, DatasetPaths, RunRow,
};
pub use eval::{cmd_eval, EvalReport};
pub use latency::{cmd_latency, LatencyReport, QueryLatency};
pub use report::{format_kv, parse_kv};
pub use rerank::{cmd_rerank, LatencyStats, QueryReport, RerankOptions, RunReport, RUN_TAG};
pub use reward::{cmd_reward, read_rollouts, RewardRecord, RolloutInput};
pub use synthetic::{synthetic_bundle, synthetic_inputs, write_bundle, write_qrels};

pub(crate) use dataset::open;

use crate::backend::{BackendConfig, Gateway, HttpBackend, MalformedMode, MockBackend};
use crate::error::{Error, Result};
use crate::metrics::RelevanceJudgments;
use crate::synthesis::SynthesisConfig;

/// Which backend to talk to, as written on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Identity,
    Reverse,
    /// Ranks by judgments supplied separately.
    Oracle,
    /// Seeded adjacent swaps over identity order, or over oracle order when
    /// judgments are available.
    Noisy(f64),
    Malformed(MalformedMode),
    /// Chat-completion endpoint URL.
    Http(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(BackendSpec::Http(s.to_string()));
        }
        let (name, arg) = s.split_once(':').map_or((s, None), |(n, a)| (n, Some(a)));
        match (name, arg) {
            ("identity", None) => Ok(BackendSpec::Identity),
            ("reverse", None) => Ok(BackendSpec::Reverse),
            ("oracle", None) => Ok(BackendSpec::Oracle),
            ("noisy", Some(rate)) => rate
                .parse::<f64>()
                .ok()
                .filter(|r| (0.0..=1.0).contains(r))
                .map(BackendSpec::Noisy)
                .ok_or_else(|| Error::invalid(format!("swap rate must be in [0,1], got {rate:?}"))),
            ("malformed", Some(mode)) => mode.parse().map(BackendSpec::Malformed).map_err(Error::Invalid),
            _ => Err(Error::invalid(format!(
                "unknown backend {s:?}; expected identity, reverse, oracle, noisy:<rate>, malformed:<mode> or an http(s) URL"
            ))),
        }
    }
}

impl BackendSpec {
    pub fn needs_judgments(&self) -> bool {
        matches!(self, BackendSpec::Oracle)
    }

    /// Builds a gateway. Mocks share the retry and concurrency settings of
    /// `config` so they exercise the same code paths as a real endpoint.
    pub fn gateway(&self, config: &BackendConfig, seed: u64, judgments: Option<RelevanceJudgments>) -> Result<Gateway> {
        config.validate()?;
        let mock = match self {
            BackendSpec::Identity => MockBackend::identity(),
            BackendSpec::Reverse => MockBackend::reverse(),
            BackendSpec::Oracle => MockBackend::oracle(
                judgments.ok_or_else(|| Error::invalid("the oracle backend needs relevance judgments"))?,
            ),
            BackendSpec::Noisy(rate) => match judgments {
                Some(j) => MockBackend::noisy_oracle(seed, *rate, j),
                None => MockBackend::noisy(seed, *rate),
            },
            BackendSpec::Malformed(mode) => MockBackend::malformed(*mode),
            BackendSpec::Http(url) => {
                let config = BackendConfig {
                    endpoint: url.clone(),
                    ..config.clone()
                };
                return Ok(Gateway::from_config(HttpBackend::new(&config), &config));
            }
        };
        Ok(Gateway::from_config(mock, config))
    }
}

/// Contents of a `--config` TOML file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub backend: BackendConfig,
    pub synthesis: SynthesisConfig,
}

impl FileConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        if text.lines().any(|l| l.trim_start().to_ascii_lowercase().starts_with("api_key")) {
            return Err(Error::invalid(format!(
                "{source}: credentials are read from {} only",
                crate::backend::API_KEY_ENV
            )));
        }
        let config: FileConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("{source}: {}", e.message())))?;
        config.backend.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Reads a qrels file from disk.
pub fn load_qrels(path: &Path) -> Result<RelevanceJudgments> {
    read_qrels(open(path)?, &path.display().to_string())
}
