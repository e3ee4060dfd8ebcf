//! Model and training configuration, plus the flat `key = value` config-file
//! format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionMode, FusionPlan};
use crate::losses::DistanceFn;
use crate::types::{default_modalities, ModalityKind};

/// Architecture hyper-parameters. The default is the desk-scale setup:
/// 64x64 inputs, patch 4, widths (16, 32, 48, 64).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input side length; inputs are square.
    pub input_size: usize,
    /// Non-overlapping patch side for stage-1 embedding.
    pub patch_size: usize,
    /// Per-stage embedding widths (c1..c4), strictly increasing.
    pub widths: [usize; 4],
    /// Attention heads per stage.
    pub heads: [usize; 4],
    /// Attention blocks per stage.
    pub blocks: [usize; 4],
    /// Spatial-reduction pooling ratio per stage.
    pub sr_ratios: [usize; 4],
    /// Feed-forward hidden expansion factor.
    pub ffn_expansion: usize,
    /// Prompt tokens per modality (N_mpt).
    pub n_prompt_tokens: usize,
    /// When false the backbone runs without the prompt lane.
    pub prompts_enabled: bool,
    /// Known modality tags, in canonical order.
    pub modalities: Vec<ModalityKind>,
    /// Cross-modal fusion: hybrid per-level plan or plain averaging.
    pub fusion: FusionMode,
    /// Channel width of the decoder lanes.
    pub decoder_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            patch_size: 4,
            widths: [16, 32, 48, 64],
            heads: [1, 2, 3, 4],
            blocks: [1, 1, 1, 1],
            sr_ratios: [8, 4, 2, 1],
            ffn_expansion: 4,
            n_prompt_tokens: 4,
            prompts_enabled: true,
            modalities: default_modalities(),
            fusion: FusionMode::Hybrid(FusionPlan::default()),
            decoder_width: 32,
        }
    }
}

impl ModelConfig {
    /// Prompt embedding width: the stage-1 width.
    pub fn prompt_width(&self) -> usize {
        self.widths[0]
    }

    /// Grid side length at backbone stage `l` (1-based).
    pub fn grid_side(&self, level: usize) -> usize {
        self.input_size / (self.patch_size * (1 << (level - 1)))
    }

    pub fn validate(&self) -> Result<()> {
        let div = self.patch_size * 8;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::InvalidConfig(format!(
                "input_size {} must be a positive multiple of {div} (patch_size * 8)",
                self.input_size
            )));
        }
        if !(self.widths[0] < self.widths[1]
            && self.widths[1] < self.widths[2]
            && self.widths[2] < self.widths[3])
        {
            return Err(Error::InvalidConfig(format!(
                "widths {:?} must be strictly increasing",
                self.widths
            )));
        }
        for l in 0..4 {
            if self.heads[l] == 0 || self.blocks[l] == 0 || self.sr_ratios[l] == 0 {
                return Err(Error::InvalidConfig(format!(
                    "heads, blocks and sr_ratios must be positive at stage {}",
                    l + 1
                )));
            }
            if self.widths[l] % self.heads[l] != 0 {
                return Err(Error::InvalidConfig(format!(
                    "width {} at stage {} is not divisible by {} heads",
                    self.widths[l],
                    l + 1,
                    self.heads[l]
                )));
            }
            let grid = self.grid_side(l + 1);
            if grid == 0 || grid % self.sr_ratios[l] != 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {} grid {} is not divisible by sr ratio {}",
                    l + 1,
                    grid,
                    self.sr_ratios[l]
                )));
            }
        }
        if self.ffn_expansion == 0 || self.decoder_width == 0 {
            return Err(Error::InvalidConfig(
                "ffn_expansion and decoder_width must be positive".into(),
            ));
        }
        if self.n_prompt_tokens == 0 {
            return Err(Error::InvalidConfig("n_prompt_tokens must be >= 1".into()));
        }
        if self.modalities.is_empty() {
            return Err(Error::InvalidConfig("modality list is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.modalities {
            if !seen.insert(m.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate modality tag {m}")));
            }
        }
        Ok(())
    }
}

/// Optimization schedule: phase 1 trains the full network, phase 2
/// fine-tunes only the modality prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Nesterov momentum coefficient.
    pub momentum: f64,
    /// Phase-1 epochs (full network).
    pub epochs: usize,
    /// Phase-2 epochs (prompt tokens only).
    pub prompt_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mtc_enabled: bool,
    /// Distance used inside the contrastive term.
    pub mtc_distance: DistanceFn,
    /// Apply weight decay to prompts during phase 2 (off by default so the
    /// only trainable tensors are not shrunk toward zero).
    pub decay_prompts_in_phase2: bool,
    /// Global L2 gradient-norm ceiling per step; 0 disables clipping. Wide
    /// enough to never bind in healthy training, it only contains the
    /// occasional exponential spike of the contrastive term.
    pub clip_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            weight_decay: 5e-4,
            momentum: 0.9,
            epochs: 20,
            prompt_epochs: 2,
            batch_size: 8,
            seed: 7,
            mtc_enabled: true,
            mtc_distance: DistanceFn::default(),
            decay_prompts_in_phase2: false,
            clip_grad_norm: 50.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive and weight_decay non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.clip_grad_norm < 0.0 {
            return Err(Error::InvalidConfig("clip_grad_norm must be non-negative".into()));
        }
        Ok(())
    }
}

/// Both configs together, as read from a config file.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Parses the flat config format: one `key = value` per line, `#` comments,
/// dotted keys under `model.` and `train.`. Unknown keys are rejected.
pub fn parse_config_str(text: &str) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
        })?;
        apply_key(&mut cfg, key.trim(), value.trim())
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn parse_config_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

fn parse_usize(v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Parse(format!("expected an integer, got '{v}'")))
}

fn parse_f64(v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Parse(format!("expected a number, got '{v}'")))
}

fn parse_bool(v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Parse(format!("expected a boolean, got '{v}'"))),
    }
}

fn parse_four(v: &str) -> Result<[usize; 4]> {
    let parts: Vec<usize> =
        v.split(',').map(|p| parse_usize(p.trim())).collect::<Result<_>>()?;
    if parts.len() != 4 {
        return Err(Error::Parse(format!("expected 4 comma-separated values, got '{v}'")));
    }
    Ok([parts[0], parts[1], parts[2], parts[3]])
}

fn apply_key(cfg: &mut FileConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "model.input_size" => cfg.model.input_size = parse_usize(value)?,
        "model.patch_size" => cfg.model.patch_size = parse_usize(value)?,
        "model.widths" => cfg.model.widths = parse_four(value)?,
        "model.heads" => cfg.model.heads = parse_four(value)?,
        "model.blocks" => cfg.model.blocks = parse_four(value)?,
        "model.sr_ratios" => cfg.model.sr_ratios = parse_four(value)?,
        "model.ffn_expansion" => cfg.model.ffn_expansion = parse_usize(value)?,
        "model.n_prompt_tokens" => cfg.model.n_prompt_tokens = parse_usize(value)?,
        "model.prompts_enabled" => cfg.model.prompts_enabled = parse_bool(value)?,
        "model.modalities" => {
            cfg.model.modalities =
                value.split(',').map(ModalityKind::new).collect::<Vec<_>>();
        }
        "model.fusion_plan" => cfg.model.fusion = FusionMode::parse(value)?,
        "model.decoder_width" => cfg.model.decoder_width = parse_usize(value)?,
        "train.learning_rate" => cfg.train.learning_rate = parse_f64(value)?,
        "train.weight_decay" => cfg.train.weight_decay = parse_f64(value)?,
        "train.momentum" => cfg.train.momentum = parse_f64(value)?,
        "train.epochs" => cfg.train.epochs = parse_usize(value)?,
        "train.prompt_epochs" => cfg.train.prompt_epochs = parse_usize(value)?,
        "train.batch_size" => cfg.train.batch_size = parse_usize(value)?,
        "train.seed" => {
            cfg.train.seed =
                value.parse().map_err(|_| Error::Parse(format!("bad seed '{value}'")))?;
        }
        "train.mtc_enabled" => cfg.train.mtc_enabled = parse_bool(value)?,
        "train.mtc_distance" => cfg.train.mtc_distance = value.parse()?,
        "train.decay_prompts_in_phase2" => {
            cfg.train.decay_prompts_in_phase2 = parse_bool(value)?;
        }
        "train.clip_grad_norm" => cfg.train.clip_grad_norm = parse_f64(value)?,
        _ => return Err(Error::Parse(format!("unknown config key '{key}'"))),
    }
    Ok(())
}

/// Serializes both configs back to the flat format.
pub fn render_config(cfg: &FileConfig) -> String {
    let m = &cfg.model;
    let t = &cfg.train;
    let mut map: BTreeMap<&str, String> = BTreeMap::new();
    map.insert("model.input_size", m.input_size.to_string());
    map.insert("model.patch_size", m.patch_size.to_string());
    map.insert("model.widths", join4(&m.widths));
    map.insert("model.heads", join4(&m.heads));
    map.insert("model.blocks", join4(&m.blocks));
    map.insert("model.sr_ratios", join4(&m.sr_ratios));
    map.insert("model.ffn_expansion", m.ffn_expansion.to_string());
    map.insert("model.n_prompt_tokens", m.n_prompt_tokens.to_string());
    map.insert("model.prompts_enabled", m.prompts_enabled.to_string());
    map.insert(
        "model.modalities",
        m.modalities.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(","),
    );
    map.insert("model.fusion_plan", m.fusion.to_string());
    map.insert("model.decoder_width", m.decoder_width.to_string());
    map.insert("train.learning_rate", t.learning_rate.to_string());
    map.insert("train.weight_decay", t.weight_decay.to_string());
    map.insert("train.momentum", t.momentum.to_string());
    map.insert("train.epochs", t.epochs.to_string());
    map.insert("train.prompt_epochs", t.prompt_epochs.to_string());
    map.insert("train.batch_size", t.batch_size.to_string());
    map.insert("train.seed", t.seed.to_string());
    map.insert("train.mtc_enabled", t.mtc_enabled.to_string());
    map.insert(
        "train.decay_prompts_in_phase2",
        t.decay_prompts_in_phase2.to_string(),
    );
    map.insert("train.clip_grad_norm", t.clip_grad_norm.to_string());
    map.insert("train.mtc_distance", t.mtc_distance.to_string());
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

fn join4(v: &[usize; 4]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
