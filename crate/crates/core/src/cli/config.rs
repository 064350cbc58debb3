//! Run configuration: one TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::rules::RulePolicy;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "RECIPE_EDIT_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Desk,
    #[value(name = "paper-editor-6x128")]
    #[serde(rename = "paper-editor-6x128")]
    PaperEditor,
    #[value(name = "paper-generator-8x256")]
    #[serde(rename = "paper-generator-8x256")]
    PaperGenerator,
}

impl Preset {
    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(),
            Preset::PaperEditor => ModelConfig::paper_editor(),
            Preset::PaperGenerator => ModelConfig::paper_generator(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// Directory of `<constraint>/banned.txt` and `rules.tsv`; the bundled
    /// tables are used when unset.
    pub constraints: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    /// Directory holding `units.txt`, `quantities.txt`, `brands.txt`.
    pub lexicon: Option<PathBuf>,
    pub verbs: Option<PathBuf>,
    /// Output directory of `build-dataset`.
    pub data: Option<PathBuf>,
    pub editor: Option<PathBuf>,
    pub generator: Option<PathBuf>,
    /// Run directory for this command's artifacts.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RulePolicyName {
    Strict,
    #[default]
    SkipUnknown,
}

impl From<RulePolicyName> for RulePolicy {
    fn from(p: RulePolicyName) -> Self {
        match p {
            RulePolicyName::Strict => RulePolicy::Strict,
            RulePolicyName::SkipUnknown => RulePolicy::SkipUnknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub min_recipe_count: usize,
    pub overlap_min: f64,
    pub n_val: usize,
    pub n_test: usize,
    pub rule_policy: RulePolicyName,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            min_recipe_count: 1,
            overlap_min: 0.3,
            n_val: 0,
            n_test: 0,
            rule_policy: RulePolicyName::SkipUnknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub preset: Preset,
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Early-stopping patience in epochs; 0 disables it.
    pub patience: usize,
    /// Editor output positions beyond the base list size.
    pub margin: usize,
    pub min_word_count: usize,
    pub max_target_len: usize,
    pub max_generate_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: Preset::Desk,
            learning_rates: vec![1e-2, 1e-3, 1e-4],
            epochs: 100,
            batch_size: 16,
            patience: 10,
            margin: 8,
            min_word_count: 1,
            max_target_len: 320,
            max_generate_len: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub hard_filter: bool,
    pub blacklist: bool,
    pub paired_data_only: bool,
    pub no_copy_attention: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub flags: Flags,
}

impl RunConfig {
    /// Parses TOML; relative paths are taken relative to `base`.
    pub fn parse(contents: &str, origin: &Path, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(contents)
            .map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.message())))?;
        let p = &mut cfg.paths;
        for slot in [
            &mut p.corpus,
            &mut p.constraints,
            &mut p.aliases,
            &mut p.lexicon,
            &mut p.verbs,
            &mut p.data,
            &mut p.editor,
            &mut p.generator,
            &mut p.out,
        ] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let contents =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&contents, path, base)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.learning_rates.is_empty() || t.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config("learning_rates must be a non-empty list of positive numbers".into()));
        }
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dataset.overlap_min) {
            return Err(Error::Config("overlap_min must lie in [0, 1]".into()));
        }
        if self.dataset.min_recipe_count == 0 {
            return Err(Error::Config("min_recipe_count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn patience(&self) -> Option<usize> {
        (self.train.patience > 0).then_some(self.train.patience)
    }
}
