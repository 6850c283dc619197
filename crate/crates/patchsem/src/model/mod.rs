//! The classifier graph: per-level embeddings feed multi-kernel
//! convolution stacks with compressed residual blocks, the code levels are
//! fused by windowed attention pooling, refined rows pass through global
//! self-attention, and a sigmoid head scores the mean-pooled result.

mod forward;
mod gradcheck;
mod params;

pub use forward::{
    batch_loss_graph, forward_graph, forward_trace, hybrid_attention, level_channel_ids,
    mcc_forward, predict_head, refine_rows, semantic_align, score_many, score_one, AlignOutput,
    AttentionOutput, ChannelIds, ForwardTrace, ScoreIds,
};
pub use gradcheck::{gradient_check, toy_batch, GradCheckReport};
pub use params::{bind, init_params, BoundParams, ModelParams};

use crate::tensor::TensorError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("input does not match config: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which of the three context levels participate in the graph. Disabling
/// a level removes its embedding table and convolution stack entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelFlags {
    pub token: bool,
    pub sentence: bool,
    pub description: bool,
}

impl Default for LevelFlags {
    fn default() -> Self {
        LevelFlags {
            token: true,
            sentence: true,
            description: true,
        }
    }
}

/// How window attention scores are computed during pooling: scaled
/// query/key dot products, or a learned linear score per row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolScore {
    #[default]
    Dot,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Token,
    Sentence,
    Description,
}

pub const ALL_LEVELS: [Level; 3] = [Level::Token, Level::Sentence, Level::Description];

impl Level {
    pub fn key(self) -> &'static str {
        match self {
            Level::Token => "token",
            Level::Sentence => "sentence",
            Level::Description => "description",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width shared by the three tables.
    pub embed_dim: usize,
    /// Number of convolution channels per level.
    pub channels: usize,
    /// Odd kernel size per channel; length must equal `channels`.
    pub kernel_sizes: Vec<usize>,
    /// Output width of the first convolution in each channel.
    pub conv_out: usize,
    /// Residual blocks stacked per channel.
    pub residual_blocks: usize,
    /// Output width of each residual block.
    pub residual_out: usize,
    /// Rows pooled together during semantic alignment.
    pub pool_window: usize,
    /// Output width of the shared refinement layer.
    pub refine_dim: usize,
    /// Query/key/value width for both attention stages.
    pub attn_dim: usize,
    pub pool_score: PoolScore,
    pub levels: LevelFlags,
    /// Token-stream length (padded/truncated).
    pub max_tokens: usize,
    /// Line-stream length.
    pub max_lines: usize,
    /// Description-stream length.
    pub max_desc: usize,
    pub token_vocab_size: usize,
    pub line_vocab_size: usize,
    pub desc_vocab_size: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("channels", self.channels),
            ("conv_out", self.conv_out),
            ("residual_out", self.residual_out),
            ("pool_window", self.pool_window),
            ("refine_dim", self.refine_dim),
            ("attn_dim", self.attn_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.kernel_sizes.len() != self.channels {
            return Err(ModelError::InvalidConfig(format!(
                "{} kernel sizes for {} channels",
                self.kernel_sizes.len(),
                self.channels
            )));
        }
        for &k in &self.kernel_sizes {
            if k == 0 || k % 2 == 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "kernel sizes must be odd, got {k}"
                )));
            }
        }
        if self.residual_blocks == 0 && self.conv_out != self.residual_out {
            return Err(ModelError::InvalidConfig(
                "with no residual blocks, conv_out must equal residual_out".into(),
            ));
        }
        let flags = self.levels;
        if !flags.token && !flags.sentence && !flags.description {
            return Err(ModelError::InvalidConfig(
                "at least one context level must be enabled".into(),
            ));
        }
        for level in self.enabled_levels() {
            if self.vocab_size(level) < 2 {
                return Err(ModelError::InvalidConfig(format!(
                    "{} vocabulary must include the two reserved ids",
                    level.key()
                )));
            }
            if self.sequence_limit(level) == 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "{} sequence limit must be positive",
                    level.key()
                )));
            }
        }
        Ok(())
    }

    pub fn level_enabled(&self, level: Level) -> bool {
        match level {
            Level::Token => self.levels.token,
            Level::Sentence => self.levels.sentence,
            Level::Description => self.levels.description,
        }
    }

    pub fn enabled_levels(&self) -> impl Iterator<Item = Level> + '_ {
        ALL_LEVELS.into_iter().filter(|l| self.level_enabled(*l))
    }

    pub fn vocab_size(&self, level: Level) -> usize {
        match level {
            Level::Token => self.token_vocab_size,
            Level::Sentence => self.line_vocab_size,
            Level::Description => self.desc_vocab_size,
        }
    }

    pub fn sequence_limit(&self, level: Level) -> usize {
        match level {
            Level::Token => self.max_tokens,
            Level::Sentence => self.max_lines,
            Level::Description => self.max_desc,
        }
    }

    /// Whether any code level (token or sentence) feeds the pooling stage.
    pub fn has_code_level(&self) -> bool {
        self.levels.token || self.levels.sentence
    }

    /// Feature width of the concatenated channel outputs.
    pub fn feature_width(&self) -> usize {
        self.channels * self.residual_out
    }

    /// Combined code-sequence length entering semantic alignment.
    pub fn code_rows(&self) -> usize {
        let mut n = 0;
        if self.levels.token {
            n += self.max_tokens;
        }
        if self.levels.sentence {
            n += self.max_lines;
        }
        n
    }

    /// Number of pooled vectors: ceil(code rows / pool window).
    pub fn pooled_count(&self) -> usize {
        self.code_rows().div_ceil(self.pool_window)
    }

    /// Rows entering global attention: pooled vectors plus the projected
    /// description rows when that level is enabled.
    pub fn fused_rows(&self) -> usize {
        self.pooled_count() + if self.levels.description { self.max_desc } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Uniform,
    Zero,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub init: Init,
    /// Embedding tables keep row 0 (padding) at zero.
    pub zero_first_row: bool,
}

impl ParamSpec {
    fn weight(name: String, shape: Vec<usize>, fan_in: usize) -> Self {
        ParamSpec {
            name,
            shape,
            fan_in,
            init: Init::Uniform,
            zero_first_row: false,
        }
    }

    fn bias(name: String, width: usize) -> Self {
        ParamSpec {
            name,
            shape: vec![1, width],
            fan_in: 1,
            init: Init::Zero,
            zero_first_row: false,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Every learnable tensor for `cfg`, in a deterministic order.
pub(crate) fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.embed_dim;
    let width = cfg.feature_width();
    let mut specs = Vec::new();
    for level in cfg.enabled_levels() {
        let key = level.key();
        specs.push(ParamSpec {
            name: format!("embed.{key}"),
            shape: vec![cfg.vocab_size(level), d],
            fan_in: d,
            init: Init::Uniform,
            zero_first_row: true,
        });
        for (ch, &k) in cfg.kernel_sizes.iter().enumerate() {
            let base = format!("mcc.{key}.ch{ch}");
            specs.push(ParamSpec::weight(
                format!("{base}.conv.weight"),
                vec![k, d, cfg.conv_out],
                k * d,
            ));
            specs.push(ParamSpec::bias(format!("{base}.conv.bias"), cfg.conv_out));
            for blk in 0..cfg.residual_blocks {
                let in_w = if blk == 0 { cfg.conv_out } else { cfg.residual_out };
                let out_w = cfg.residual_out;
                let b = format!("{base}.block{blk}");
                specs.push(ParamSpec::weight(
                    format!("{b}.conv1.weight"),
                    vec![k, in_w, out_w],
                    k * in_w,
                ));
                specs.push(ParamSpec::bias(format!("{b}.conv1.bias"), out_w));
                specs.push(ParamSpec::weight(
                    format!("{b}.conv2.weight"),
                    vec![k, out_w, out_w],
                    k * out_w,
                ));
                specs.push(ParamSpec::bias(format!("{b}.conv2.bias"), out_w));
                specs.push(ParamSpec::weight(
                    format!("{b}.skip.weight"),
                    vec![1, in_w, out_w],
                    in_w,
                ));
                specs.push(ParamSpec::bias(format!("{b}.skip.bias"), out_w));
            }
        }
    }
    if cfg.has_code_level() {
        specs.push(ParamSpec::weight(
            "pool.query.weight".into(),
            vec![width, cfg.attn_dim],
            width,
        ));
        specs.push(ParamSpec::weight(
            "pool.key.weight".into(),
            vec![width, cfg.attn_dim],
            width,
        ));
        specs.push(ParamSpec::weight(
            "pool.linear.weight".into(),
            vec![width, 1],
            width,
        ));
        specs.push(ParamSpec::bias("pool.linear.bias".into(), 1));
    }
    specs.push(ParamSpec::weight(
        "refine.weight".into(),
        vec![width, cfg.refine_dim],
        width,
    ));
    specs.push(ParamSpec::bias("refine.bias".into(), cfg.refine_dim));
    for role in ["query", "key", "value"] {
        specs.push(ParamSpec::weight(
            format!("attn.{role}.weight"),
            vec![cfg.refine_dim, cfg.attn_dim],
            cfg.refine_dim,
        ));
    }
    specs.push(ParamSpec::weight(
        "head.weight".into(),
        vec![cfg.attn_dim, 1],
        cfg.attn_dim,
    ));
    specs.push(ParamSpec::bias("head.bias".into(), 1));
    specs
}

/// Total learnable element count, a pure function of the config.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(ParamSpec::len).sum()
}
