//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! one of [`KEYS`]; unknown keys are rejected. Keys absent from a file keep
//! their defaults.

use crate::error::{CoreError, Result};
use crate::model::ModelConfig;
use crate::train::{Quotas, TrainConfig};
use crate::vision::PatchEncoderConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub vision: PatchEncoderConfig,
    pub train: TrainConfig,
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("model.layers", "decoder blocks"),
    ("model.width", "model width"),
    ("model.ffn_width", "feed-forward inner width"),
    ("model.heads", "attention heads"),
    ("model.vocab_size", "output vocabulary size (at least 263)"),
    ("model.soft_tokens", "soft tokens per image (V)"),
    ("model.max_len", "longest input sequence"),
    ("model.dropout", "dropout probability"),
    ("model.xpos_gamma", "xPos decay offset γ"),
    ("model.xpos_scale_base", "xPos scale base B"),
    ("model.xpos_theta", "rotation frequency base"),
    ("model.init_gain", "projection init gain, or `auto` for sqrt(ln(2·layers))"),
    ("model.resampler_heads", "resampler attention heads"),
    ("model.resampler_ffn", "resampler feed-forward width"),
    ("model.seed", "parameter initialization seed"),
    ("vision.image_size", "square input size images are resized to"),
    ("vision.patch_size", "patch edge in pixels"),
    ("vision.embed_dim", "patch feature width"),
    ("vision.depth", "encoder blocks"),
    ("vision.heads", "encoder attention heads"),
    ("vision.ffn_dim", "encoder feed-forward width"),
    ("vision.freeze_below_last", "train only the last encoder block"),
    ("train.total_steps", "optimization steps"),
    ("train.warmup_steps", "linear warmup steps"),
    ("train.peak_lr", "peak learning rate"),
    ("train.beta1", "AdamW β1"),
    ("train.beta2", "AdamW β2"),
    ("train.adam_eps", "AdamW ε"),
    ("train.weight_decay", "decoupled weight decay"),
    ("train.quota_text", "text-corpus sequences per step"),
    ("train.quota_pair", "image-caption sequences per step"),
    ("train.quota_interleaved", "interleaved sequences per step"),
    ("train.quota_instruction", "instruction sequences per step"),
    ("train.seq_len", "packed sequence length"),
    ("train.seed", "batch order and dropout seed"),
    ("train.checkpoint_every", "steps between checkpoints (0 = only at the end)"),
    ("train.grad_clip", "global gradient-norm clip, or `none`"),
    ("train.include_guard_targets", "score <image>/</image> tokens in the loss"),
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CoreError::Config(format!("`{key}`: cannot parse {v:?}")))
}

impl RunConfig {
    /// Settings that memorise the 32 synthetic caption documents in
    /// [`crate::synth::caption_documents`] within 500 steps: no dropout and
    /// one document per packed sequence, so each caption must be read off its
    /// image rather than recalled from a packed neighbour.
    pub fn desk_overfit() -> Self {
        let mut cfg = Self::default();
        cfg.model.dropout = 0.0;
        cfg.train.total_steps = 500;
        cfg.train.warmup_steps = 25;
        cfg.train.peak_lr = 5e-3;
        cfg.train.quotas = Quotas([0, 0, 8, 0]);
        cfg.train.seq_len = 48;
        cfg.train.checkpoint_every = 0;
        cfg
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.overlay(text)?;
        Ok(cfg)
    }

    /// Applies the keys in `text` on top of `self` and validates the result.
    pub fn overlay(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.vision.validate()?;
        self.train.validate()?;
        if self.train.seq_len > self.model.max_len {
            return Err(CoreError::Config(format!(
                "train.seq_len {} exceeds model.max_len {}",
                self.train.seq_len, self.model.max_len
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (m, vis, t) = (&mut self.model, &mut self.vision, &mut self.train);
        match key {
            "model.layers" => m.layers = num(key, v)?,
            "model.width" => m.width = num(key, v)?,
            "model.ffn_width" => m.ffn_width = num(key, v)?,
            "model.heads" => m.heads = num(key, v)?,
            "model.vocab_size" => m.vocab_size = num(key, v)?,
            "model.soft_tokens" => m.soft_tokens = num(key, v)?,
            "model.max_len" => m.max_len = num(key, v)?,
            "model.dropout" => m.dropout = num(key, v)?,
            "model.xpos_gamma" => m.xpos.gamma = num(key, v)?,
            "model.xpos_scale_base" => m.xpos.scale_base = num(key, v)?,
            "model.xpos_theta" => m.xpos.theta = num(key, v)?,
            "model.init_gain" => m.init_gain = if v == "auto" { None } else { Some(num(key, v)?) },
            "model.resampler_heads" => m.resampler_heads = num(key, v)?,
            "model.resampler_ffn" => m.resampler_ffn = num(key, v)?,
            "model.seed" => m.seed = num(key, v)?,
            "vision.image_size" => vis.image_size = num(key, v)?,
            "vision.patch_size" => vis.patch_size = num(key, v)?,
            "vision.embed_dim" => vis.embed_dim = num(key, v)?,
            "vision.depth" => vis.depth = num(key, v)?,
            "vision.heads" => vis.heads = num(key, v)?,
            "vision.ffn_dim" => vis.ffn_dim = num(key, v)?,
            "vision.freeze_below_last" => vis.freeze_below_last = num(key, v)?,
            "train.total_steps" => t.total_steps = num(key, v)?,
            "train.warmup_steps" => t.warmup_steps = num(key, v)?,
            "train.peak_lr" => t.peak_lr = num(key, v)?,
            "train.beta1" => t.adam.beta1 = num(key, v)?,
            "train.beta2" => t.adam.beta2 = num(key, v)?,
            "train.adam_eps" => t.adam.eps = num(key, v)?,
            "train.weight_decay" => t.adam.weight_decay = num(key, v)?,
            "train.quota_text" => t.quotas.0[0] = num(key, v)?,
            "train.quota_pair" => t.quotas.0[1] = num(key, v)?,
            "train.quota_interleaved" => t.quotas.0[2] = num(key, v)?,
            "train.quota_instruction" => t.quotas.0[3] = num(key, v)?,
            "train.seq_len" => t.seq_len = num(key, v)?,
            "train.seed" => t.seed = num(key, v)?,
            "train.checkpoint_every" => t.checkpoint_every = num(key, v)?,
            "train.grad_clip" => t.grad_clip = if v == "none" { None } else { Some(num(key, v)?) },
            "train.include_guard_targets" => t.include_guard_targets = num(key, v)?,
            other => return Err(CoreError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (m, vis, t) = (&self.model, &self.vision, &self.train);
        let Quotas(q) = t.quotas;
        let values: Vec<String> = vec![
            m.layers.to_string(),
            m.width.to_string(),
            m.ffn_width.to_string(),
            m.heads.to_string(),
            m.vocab_size.to_string(),
            m.soft_tokens.to_string(),
            m.max_len.to_string(),
            m.dropout.to_string(),
            m.xpos.gamma.to_string(),
            m.xpos.scale_base.to_string(),
            m.xpos.theta.to_string(),
            m.init_gain.map_or("auto".into(), |g| g.to_string()),
            m.resampler_heads.to_string(),
            m.resampler_ffn.to_string(),
            m.seed.to_string(),
            vis.image_size.to_string(),
            vis.patch_size.to_string(),
            vis.embed_dim.to_string(),
            vis.depth.to_string(),
            vis.heads.to_string(),
            vis.ffn_dim.to_string(),
            vis.freeze_below_last.to_string(),
            t.total_steps.to_string(),
            t.warmup_steps.to_string(),
            t.peak_lr.to_string(),
            t.adam.beta1.to_string(),
            t.adam.beta2.to_string(),
            t.adam.eps.to_string(),
            t.adam.weight_decay.to_string(),
            q[0].to_string(),
            q[1].to_string(),
            q[2].to_string(),
            q[3].to_string(),
            t.seq_len.to_string(),
            t.seed.to_string(),
            t.checkpoint_every.to_string(),
            t.grad_clip.map_or("none".into(), |c| c.to_string()),
            t.include_guard_targets.to_string(),
        ];
        KEYS.iter().map(|(k, _)| *k).zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.train.peak_lr = 3.3e-4;
        cfg.train.grad_clip = Some(1.5);
        cfg.model.init_gain = Some(0.7);
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = RunConfig::default();
        for (k, v) in cfg.entries() {
            let mut c = RunConfig::default();
            c.set(k, &v).unwrap();
        }
        assert_eq!(cfg.entries().len(), KEYS.len());
    }

    #[test]
    fn comments_and_errors() {
        let cfg = RunConfig::parse("# hi\n\nmodel.layers = 1\n").unwrap();
        assert_eq!(cfg.model.layers, 1);
        assert!(matches!(RunConfig::parse("model.colour = 3"), Err(CoreError::UnknownKey(_))));
        assert!(matches!(RunConfig::parse("model.layers"), Err(CoreError::Config(_))));
        assert!(matches!(RunConfig::parse("model.layers = two"), Err(CoreError::Config(_))));
        assert!(RunConfig::parse("train.warmup_steps = 5000").is_err());
    }
}
