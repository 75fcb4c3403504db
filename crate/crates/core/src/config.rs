//! Run configuration: a flat TOML file whose every key can be overridden by
//! a command-line flag of the same name.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{EntropyThresholds, UntrustworthinessFormula, DEFAULT_MIN_SHARES};
use crate::stats::{Alternative, DEFAULT_GRID_POINTS, DEFAULT_RESHUFFLES, DEFAULT_SUCCESS_QUANTILE};

pub const DEFAULT_TOKEN_ENV: &str = "RTSCOPE_SERVICE_TOKEN";

/// One source of settings. Unset fields fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    /// Line-delimited JSON tweet records.
    #[arg(long)]
    pub tweets: Option<PathBuf>,
    /// Blacklisted source domains, one per line.
    #[arg(long)]
    pub unreliable_sources: Option<PathBuf>,
    /// Whitelisted source domains, one per line.
    #[arg(long)]
    pub reliable_sources: Option<PathBuf>,
    /// CSV with `user_id,bot_score`.
    #[arg(long)]
    pub bot_scores: Option<PathBuf>,
    /// Scoring service URL; users without a file score are looked up there.
    #[arg(long)]
    pub service_endpoint: Option<String>,
    /// Name of the environment variable holding the service token.
    #[arg(long)]
    pub service_token_env: Option<String>,
    #[arg(long)]
    pub service_rate_limit: Option<u32>,
    #[arg(long)]
    pub service_max_retries: Option<u32>,
    #[arg(long)]
    pub service_timeout_secs: Option<u64>,
    /// Service score cache; defaults to `<output_dir>/cache`.
    #[arg(long, env = "RTSCOPE_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub louvain_seed: Option<u64>,
    #[arg(long)]
    pub null_seed: Option<u64>,
    #[arg(long)]
    pub n_reshuffles: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub min_shares: Option<u64>,
    #[arg(long)]
    pub entropy_low: Option<f64>,
    #[arg(long)]
    pub entropy_medium: Option<f64>,
    #[arg(long)]
    pub success_quantile: Option<f64>,
    /// OP bot-score cutoff for the bot-originated URL report.
    #[arg(long)]
    pub op_bs_cutoff: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// `two-sided`, `less` or `greater`.
    #[arg(long)]
    pub alternative: Option<Alternative>,
    /// `harmonic-mean` or `printed`.
    #[arg(long)]
    pub untrustworthiness_formula: Option<UntrustworthinessFormula>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        if let Ok(table) = text.parse::<toml::Table>() {
            if table.keys().any(|k| k.contains("token") && k != "service_token_env") {
                return Err(Error::Validation(
                    "service tokens are read from the environment only; name the variable with service_token_env".into(),
                ));
            }
        }
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// `self` with every field set in `top` replaced.
    pub fn overlay(mut self, top: &ConfigLayer) -> Self {
        overlay!(
            self,
            top,
            tweets,
            unreliable_sources,
            reliable_sources,
            bot_scores,
            service_endpoint,
            service_token_env,
            service_rate_limit,
            service_max_retries,
            service_timeout_secs,
            cache_dir,
            output_dir,
            louvain_seed,
            null_seed,
            n_reshuffles,
            top_k,
            min_shares,
            entropy_low,
            entropy_medium,
            success_quantile,
            op_bs_cutoff,
            grid_points,
            alternative,
            untrustworthiness_formula
        );
        self
    }

    /// Applies defaults and validates.
    pub fn resolve(self) -> Result<RunConfig> {
        let output_dir = self.output_dir.unwrap_or_else(|| PathBuf::from("rtscope-out"));
        let cfg = RunConfig {
            tweets: self.tweets,
            unreliable_sources: self.unreliable_sources,
            reliable_sources: self.reliable_sources,
            bot_scores: self.bot_scores,
            service_endpoint: self.service_endpoint,
            service_token_env: self.service_token_env.unwrap_or_else(|| DEFAULT_TOKEN_ENV.into()),
            service_rate_limit: self.service_rate_limit.unwrap_or(60),
            service_max_retries: self.service_max_retries.unwrap_or(5),
            service_timeout_secs: self.service_timeout_secs.unwrap_or(30),
            cache_dir: self.cache_dir.unwrap_or_else(|| output_dir.join("cache")),
            output_dir,
            louvain_seed: self.louvain_seed.unwrap_or(0),
            null_seed: self.null_seed.unwrap_or(1),
            n_reshuffles: self.n_reshuffles.unwrap_or(DEFAULT_RESHUFFLES),
            top_k: self.top_k.unwrap_or(5),
            min_shares: self.min_shares.unwrap_or(DEFAULT_MIN_SHARES),
            entropy_low: self.entropy_low.unwrap_or(EntropyThresholds::default().low),
            entropy_medium: self.entropy_medium.unwrap_or(EntropyThresholds::default().medium),
            success_quantile: self.success_quantile.unwrap_or(DEFAULT_SUCCESS_QUANTILE),
            op_bs_cutoff: self.op_bs_cutoff.unwrap_or(0.75),
            grid_points: self.grid_points.unwrap_or(DEFAULT_GRID_POINTS),
            alternative: self.alternative.unwrap_or_default(),
            untrustworthiness_formula: self.untrustworthiness_formula.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub tweets: Option<PathBuf>,
    pub unreliable_sources: Option<PathBuf>,
    pub reliable_sources: Option<PathBuf>,
    pub bot_scores: Option<PathBuf>,
    pub service_endpoint: Option<String>,
    pub service_token_env: String,
    pub service_rate_limit: u32,
    pub service_max_retries: u32,
    pub service_timeout_secs: u64,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub louvain_seed: u64,
    pub null_seed: u64,
    pub n_reshuffles: usize,
    pub top_k: usize,
    pub min_shares: u64,
    pub entropy_low: f64,
    pub entropy_medium: f64,
    pub success_quantile: f64,
    pub op_bs_cutoff: f64,
    pub grid_points: usize,
    pub alternative: Alternative,
    pub untrustworthiness_formula: UntrustworthinessFormula,
}

impl RunConfig {
    pub fn entropy_thresholds(&self) -> EntropyThresholds {
        EntropyThresholds {
            low: self.entropy_low,
            medium: self.entropy_medium,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.entropy_thresholds().validate()?;
        if !(self.success_quantile > 0.0 && self.success_quantile < 1.0) {
            return Err(Error::Validation(format!(
                "success_quantile = {} outside (0, 1)",
                self.success_quantile
            )));
        }
        if !(0.0..=1.0).contains(&self.op_bs_cutoff) {
            return Err(Error::Validation(format!("op_bs_cutoff = {} outside [0, 1]", self.op_bs_cutoff)));
        }
        for (name, v) in [
            ("n_reshuffles", self.n_reshuffles),
            ("top_k", self.top_k),
            ("grid_points", self.grid_points),
            ("service_rate_limit", self.service_rate_limit as usize),
            ("service_timeout_secs", self.service_timeout_secs as usize),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be at least 1")));
            }
        }
        if let Some(ep) = &self.service_endpoint {
            let u = url::Url::parse(ep).map_err(|e| Error::Validation(format!("service_endpoint {ep:?}: {e}")))?;
            if !matches!(u.scheme(), "http" | "https") {
                return Err(Error::Validation(format!("service_endpoint {ep:?} is not http(s)")));
            }
        }
        if self.service_token_env.is_empty() {
            return Err(Error::Validation("service_token_env must name a variable".into()));
        }
        Ok(())
    }

    pub fn require<'a>(&self, field: &'static str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Validation(format!("{field} is required for this command")))
    }
}
