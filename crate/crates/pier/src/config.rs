//! TOML run configurations. Unknown keys are rejected everywhere; every
//! command echoes its resolved config into the run directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pier_core::model::{ModelConfig, Variant};
use pier_core::training::{ObjectiveConfig, PromptMode, Stage};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_n_pies")]
    pub n_pies: usize,
    #[serde(default = "d_n_groups")]
    pub n_groups: usize,
    #[serde(default = "d_n_train")]
    pub n_train: usize,
    #[serde(default = "d_n_test")]
    pub n_test: usize,
    #[serde(default = "d_frac")]
    pub idiomatic_fraction: f64,
}

fn d_n_pies() -> usize {
    60
}
fn d_n_groups() -> usize {
    12
}
fn d_n_train() -> usize {
    6000
}
fn d_n_test() -> usize {
    1200
}
fn d_frac() -> f64 {
    0.774
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            n_pies: d_n_pies(),
            n_groups: d_n_groups(),
            n_train: d_n_train(),
            n_test: d_n_test(),
            idiomatic_fraction: d_frac(),
        }
    }
}

/// Model architecture knobs; vocabulary size always comes from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_layers")]
    pub n_enc_layers: usize,
    #[serde(default = "d_layers")]
    pub n_dec_layers: usize,
    #[serde(default = "d_model")]
    pub d_model: usize,
    #[serde(default = "d_heads")]
    pub n_heads: usize,
    #[serde(default = "d_ff")]
    pub d_ff: usize,
    #[serde(default = "d_seq")]
    pub max_seq_len: usize,
    #[serde(default = "d_bottleneck")]
    pub adapter_bottleneck: usize,
    #[serde(default = "d_true")]
    pub fusion_in_decoder: bool,
}

fn d_layers() -> usize {
    2
}
fn d_model() -> usize {
    64
}
fn d_heads() -> usize {
    4
}
fn d_ff() -> usize {
    128
}
fn d_seq() -> usize {
    64
}
fn d_bottleneck() -> usize {
    16
}
fn d_true() -> bool {
    true
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_enc_layers: d_layers(),
            n_dec_layers: d_layers(),
            d_model: d_model(),
            n_heads: d_heads(),
            d_ff: d_ff(),
            max_seq_len: d_seq(),
            adapter_bottleneck: d_bottleneck(),
            fusion_in_decoder: d_true(),
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, vocab_size: usize, variant: Variant) -> ModelConfig {
        ModelConfig {
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len: self.max_seq_len,
            adapter_bottleneck: self.adapter_bottleneck,
            variant,
            fusion_in_decoder: self.fusion_in_decoder,
            bos_token: pier_core::corpus::vocab::BOS,
        }
    }
}

/// Objective switches: which loss terms run and which prompt kinds are
/// active. `prompts` is one of none|type-cls|defn-gen|both;
/// `prompt_mode` is single|multi (one template vs all five).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectivesSection {
    pub copy: bool,
    pub similarity: bool,
    pub prompts: String,
    #[serde(default = "d_prompt_mode")]
    pub prompt_mode: String,
}

fn d_prompt_mode() -> String {
    "multi".into()
}

impl ObjectivesSection {
    pub fn to_objectives(&self, treat_all_idiomatic: bool) -> anyhow::Result<ObjectiveConfig> {
        if !self.copy {
            bail!("the reconstruction objective cannot be disabled: nothing would train the decoder");
        }
        let multi = match self.prompt_mode.as_str() {
            "multi" => true,
            "single" => false,
            other => bail!("prompt_mode must be single|multi, got '{other}'"),
        };
        let prompts = match self.prompts.as_str() {
            "none" => PromptMode::disabled(),
            "type-cls" => PromptMode {
                type_cls: true,
                defn_gen: false,
                multi_template: multi,
            },
            "defn-gen" => PromptMode {
                type_cls: false,
                defn_gen: true,
                multi_template: multi,
            },
            "both" => PromptMode::full(multi),
            other => bail!("prompts must be none|type-cls|defn-gen|both, got '{other}'"),
        };
        Ok(ObjectiveConfig {
            reconstruction: true,
            similarity: self.similarity,
            prompts,
            treat_all_idiomatic,
            ce_weight: 1.0,
            sim_weight: 1.0,
            sim_margin: None,
        })
    }

    pub fn from_objectives(o: &ObjectiveConfig) -> Self {
        let prompts = match (o.prompts.type_cls, o.prompts.defn_gen) {
            (false, false) => "none",
            (true, false) => "type-cls",
            (false, true) => "defn-gen",
            (true, true) => "both",
        };
        ObjectivesSection {
            copy: o.reconstruction,
            similarity: o.similarity,
            prompts: prompts.into(),
            prompt_mode: if o.prompts.multi_template {
                "multi".into()
            } else {
                "single".into()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCliConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// base | adapter | fusion | full-finetune
    pub stage: String,
    pub corpus: PathBuf,
    /// Prior-stage checkpoint; required for every stage except base.
    #[serde(default)]
    pub prior: Option<PathBuf>,
    #[serde(default = "d_one")]
    pub seed: u64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub max_train_sentences: Option<usize>,
    /// Stage defaults apply when omitted.
    #[serde(default)]
    pub objectives: Option<ObjectivesSection>,
    #[serde(default)]
    pub model: ModelSection,
}

fn d_one() -> u64 {
    1
}
fn d_epochs() -> usize {
    35
}
fn d_batch() -> usize {
    8
}
fn d_lr() -> f64 {
    1e-3
}

impl TrainCliConfig {
    pub fn stage(&self) -> anyhow::Result<Stage> {
        Stage::parse(&self.stage).map_err(|e| anyhow::anyhow!("{e}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCliConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub corpus: PathBuf,
    pub checkpoint: PathBuf,
    #[serde(default = "d_one")]
    pub seed: u64,
    #[serde(default)]
    pub probe_train_limit: Option<usize>,
    #[serde(default = "d_sense_epochs")]
    pub sense_probe_epochs: usize,
    #[serde(default = "d_span_epochs")]
    pub span_probe_epochs: usize,
    #[serde(default = "d_recon")]
    pub n_reconstruction_sentences: usize,
}

fn d_sense_epochs() -> usize {
    55
}
fn d_span_epochs() -> usize {
    40
}
fn d_recon() -> usize {
    300
}

impl EvalCliConfig {
    pub fn to_eval_config(&self) -> pier_core::evaluation::EvalConfig {
        let mut cfg = pier_core::evaluation::EvalConfig::with_seed(self.seed);
        cfg.sense_probe.epochs = self.sense_probe_epochs;
        cfg.span_probe.epochs = self.span_probe_epochs;
        cfg.probe_train_limit = self.probe_train_limit;
        cfg.n_reconstruction_sentences = self.n_reconstruction_sentences;
        cfg
    }
}

/// Desk-scale ablation schedule. The stage budgets are deliberately smaller
/// than the single-run training defaults so the whole ten-variant,
/// three-seed matrix stays inside a coffee break on one core.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "d_base_epochs")]
    pub base_epochs: usize,
    #[serde(default = "d_adapter_epochs")]
    pub adapter_epochs: usize,
    #[serde(default = "d_fusion_epochs")]
    pub fusion_epochs: usize,
    #[serde(default = "d_finetune_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub base_lr: f64,
    #[serde(default = "d_stage_lr")]
    pub adapter_lr: f64,
    #[serde(default = "d_stage_lr")]
    pub fusion_lr: f64,
    #[serde(default = "d_adapter_limit")]
    pub adapter_train_limit: Option<usize>,
    #[serde(default = "d_fusion_limit")]
    pub fusion_train_limit: Option<usize>,
}

fn d_base_epochs() -> usize {
    5
}
fn d_adapter_epochs() -> usize {
    3
}
fn d_fusion_epochs() -> usize {
    3
}
fn d_finetune_epochs() -> usize {
    2
}
fn d_adapter_limit() -> Option<usize> {
    Some(3000)
}
fn d_fusion_limit() -> Option<usize> {
    Some(2500)
}
fn d_stage_lr() -> f64 {
    2e-3
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            base_epochs: d_base_epochs(),
            adapter_epochs: d_adapter_epochs(),
            fusion_epochs: d_fusion_epochs(),
            finetune_epochs: d_finetune_epochs(),
            batch_size: d_batch(),
            base_lr: d_lr(),
            adapter_lr: d_stage_lr(),
            fusion_lr: d_stage_lr(),
            adapter_train_limit: d_adapter_limit(),
            fusion_train_limit: d_fusion_limit(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateEvalSection {
    #[serde(default = "d_ablate_probe_limit")]
    pub probe_train_limit: Option<usize>,
    #[serde(default = "d_ablate_sense_epochs")]
    pub sense_probe_epochs: usize,
    #[serde(default = "d_ablate_span_epochs")]
    pub span_probe_epochs: usize,
    #[serde(default = "d_recon")]
    pub n_reconstruction_sentences: usize,
}

fn d_ablate_probe_limit() -> Option<usize> {
    Some(2500)
}
fn d_ablate_sense_epochs() -> usize {
    40
}
fn d_ablate_span_epochs() -> usize {
    25
}

impl Default for AblateEvalSection {
    fn default() -> Self {
        AblateEvalSection {
            probe_train_limit: d_ablate_probe_limit(),
            sense_probe_epochs: d_ablate_sense_epochs(),
            span_probe_epochs: d_ablate_span_epochs(),
            n_reconstruction_sentences: d_recon(),
        }
    }
}

fn d_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn d_ablate_model() -> ModelSection {
    ModelSection {
        d_model: 48,
        d_ff: 96,
        adapter_bottleneck: 12,
        ..ModelSection::default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub corpus: PathBuf,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_ablate_model")]
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub eval: AblateEvalSection,
}

/// Reads a TOML config, resolving relative paths against the config file's
/// own directory.
pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn resolve_path(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

pub fn save_echo<T: Serialize>(cfg: &T, out_dir: &Path) -> anyhow::Result<()> {
    let text = toml::to_string_pretty(cfg).context("serializing config echo")?;
    std::fs::write(out_dir.join("config.toml"), text).context("writing config echo")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let toml = "seed = 1\nbogus_key = 2\n";
        let r: Result<GenConfig, _> = toml::from_str(toml);
        assert!(r.is_err());
    }

    #[test]
    fn defaults_fill_in() {
        let cfg: GenConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.n_pies, 60);
        assert_eq!(cfg.n_train, 6000);
        assert!((cfg.idiomatic_fraction - 0.774).abs() < 1e-12);
        let cfg: TrainCliConfig = toml::from_str("stage = \"base\"\ncorpus = \"c\"").unwrap();
        assert_eq!(cfg.epochs, 35);
        assert_eq!(cfg.batch_size, 8);
        assert!((cfg.lr - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn objectives_parse_and_roundtrip() {
        let s = ObjectivesSection {
            copy: true,
            similarity: true,
            prompts: "both".into(),
            prompt_mode: "single".into(),
        };
        let o = s.to_objectives(false).unwrap();
        assert!(o.prompts.type_cls && o.prompts.defn_gen && !o.prompts.multi_template);
        let back = ObjectivesSection::from_objectives(&o);
        assert_eq!(back.prompts, "both");
        assert_eq!(back.prompt_mode, "single");
        let bad = ObjectivesSection {
            copy: true,
            similarity: false,
            prompts: "sometimes".into(),
            prompt_mode: "multi".into(),
        };
        assert!(bad.to_objectives(false).is_err());
    }
}
