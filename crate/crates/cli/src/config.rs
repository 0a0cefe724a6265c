//! Run configuration shared by `validate`, `train` and `replay`.

use std::path::{Path, PathBuf};

use adalloc::experiment::Uplift;
use adalloc::model::{Goal, ProblemConfig};
use adalloc::replay::Accounting;
use adalloc::trainer::TrainerConfig;
use adalloc::{Error, Result};
use serde::{Deserialize, Serialize};

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_slots() -> usize {
    3
}

fn default_reserve() -> f64 {
    ProblemConfig::DEFAULT_RESERVE
}

fn default_policy() -> String {
    "lp".into()
}

fn default_seed() -> u64 {
    42
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccountingMode {
    #[default]
    Expected,
    Sampled,
}

/// Relative paths are resolved against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Request log (JSONL) that is replayed.
    pub log: PathBuf,
    pub campaigns: PathBuf,
    /// Log the duals and throttling thresholds are fitted on; defaults to `log`.
    #[serde(default)]
    pub train_log: Option<PathBuf>,
    /// Dual prices written by `train` and read by `replay --policy lp`;
    /// defaults to `<out_dir>/duals.json`.
    #[serde(default)]
    pub duals: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_slots")]
    pub slots: usize,
    /// Defaults to geometric decay `0.6^(p-1)`.
    #[serde(default)]
    pub exam_probs: Option<Vec<f64>>,
    #[serde(default = "default_reserve")]
    pub reserve_price: f64,
    /// `ghp`, `ot` or `lp`.
    #[serde(default = "default_policy")]
    pub policy: String,
    /// Label written into reports; defaults to the policy name.
    #[serde(default)]
    pub name: Option<String>,
    /// Treat every campaign as having this goal when training and deciding.
    #[serde(default)]
    pub goal_override: Option<Goal>,
    #[serde(default)]
    pub uplift: Uplift,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub accounting: AccountingMode,
    /// Seed for sampled accounting.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut config: Self = serde_json::from_slice(&bytes)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.log);
        resolve(&mut config.campaigns);
        resolve(&mut config.out_dir);
        config.train_log.as_mut().map(resolve);
        config.duals.as_mut().map(resolve);
        config.uplift.validate()?;
        config.problem()?;
        Ok(config)
    }

    /// Auction configuration without constraint levels.
    pub fn problem(&self) -> Result<ProblemConfig> {
        let mut config = ProblemConfig::with_slots(self.slots);
        if let Some(probs) = &self.exam_probs {
            config.exam_probs = probs.clone();
        }
        config.reserve_price = self.reserve_price;
        config.validate()?;
        Ok(config)
    }

    pub fn train_log(&self) -> &Path {
        self.train_log.as_deref().unwrap_or(&self.log)
    }

    pub fn duals_path(&self) -> PathBuf {
        self.duals
            .clone()
            .unwrap_or_else(|| self.out_dir.join("duals.json"))
    }

    pub fn accounting(&self) -> Accounting {
        match self.accounting {
            AccountingMode::Expected => Accounting::Expected,
            AccountingMode::Sampled => Accounting::Sampled { seed: self.seed },
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.policy.clone())
    }

    pub fn check_label(&self) -> Result<()> {
        let label = self.label();
        if label.is_empty()
            || !label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(Error::Invalid(format!(
                "report name {label:?} may only use letters, digits, '-', '_' and '.'"
            )));
        }
        Ok(())
    }
}
