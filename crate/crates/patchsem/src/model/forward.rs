//! The forward pass, assembled from recorded graph ops so one code path
//! serves training, evaluation and prediction.

use super::{BoundParams, Level, ModelConfig, ModelError, ModelParams, PoolScore};
use crate::ingest::EncodedPatch;
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

/// Graph handles for one convolution channel: the front conv plus its
/// residual blocks.
#[derive(Debug, Clone)]
pub struct ChannelIds {
    pub conv_weight: NodeId,
    pub conv_bias: NodeId,
    pub blocks: Vec<BlockIds>,
}

#[derive(Debug, Clone)]
pub struct BlockIds {
    pub conv1_weight: NodeId,
    pub conv1_bias: NodeId,
    pub conv2_weight: NodeId,
    pub conv2_bias: NodeId,
    pub skip_weight: NodeId,
    pub skip_bias: NodeId,
}

/// Parameters for the window score inside semantic alignment.
#[derive(Debug, Clone, Copy)]
pub enum ScoreIds {
    /// Scaled dot product of projected query rows against the projected
    /// last row of the window.
    Dot { query: NodeId, key: NodeId },
    /// Learned linear score per row.
    Linear { weight: NodeId, bias: NodeId },
}

/// Collect the channel parameter handles of one level.
pub fn level_channel_ids(bound: &BoundParams, cfg: &ModelConfig, level: Level) -> Vec<ChannelIds> {
    let key = level.key();
    (0..cfg.channels)
        .map(|ch| {
            let base = format!("mcc.{key}.ch{ch}");
            ChannelIds {
                conv_weight: bound.id(&format!("{base}.conv.weight")),
                conv_bias: bound.id(&format!("{base}.conv.bias")),
                blocks: (0..cfg.residual_blocks)
                    .map(|blk| {
                        let b = format!("{base}.block{blk}");
                        BlockIds {
                            conv1_weight: bound.id(&format!("{b}.conv1.weight")),
                            conv1_bias: bound.id(&format!("{b}.conv1.bias")),
                            conv2_weight: bound.id(&format!("{b}.conv2.weight")),
                            conv2_bias: bound.id(&format!("{b}.conv2.bias")),
                            skip_weight: bound.id(&format!("{b}.skip.weight")),
                            skip_bias: bound.id(&format!("{b}.skip.bias")),
                        }
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Multi-channel convolution stack over an embedded sequence. Each channel
/// applies tanh(conv) and then its residual blocks; a block computes
/// `tanh(conv(tanh(conv(x))) + conv1(x))` where the last term is the
/// kernel-size-1 skip path. Channel outputs are concatenated on the
/// feature axis, so the sequence length never changes.
pub fn mcc_forward(
    g: &mut Graph,
    embedded: NodeId,
    channels: &[ChannelIds],
) -> Result<NodeId, TensorError> {
    let mut outputs = Vec::with_capacity(channels.len());
    for ch in channels {
        let conv = g.conv1d_same(embedded, ch.conv_weight, ch.conv_bias)?;
        let mut h = g.tanh(conv);
        for blk in &ch.blocks {
            let x1_lin = g.conv1d_same(h, blk.conv1_weight, blk.conv1_bias)?;
            let x1 = g.tanh(x1_lin);
            let x2 = g.conv1d_same(x1, blk.conv2_weight, blk.conv2_bias)?;
            let x3 = g.conv1d_same(h, blk.skip_weight, blk.skip_bias)?;
            let sum = g.add(x2, x3)?;
            h = g.tanh(sum);
        }
        outputs.push(h);
    }
    g.concat(1, &outputs)
}

/// Windowed attention pooling output.
pub struct AlignOutput {
    /// `[P x feature]` pooled vectors, `P = ceil(rows / window)`.
    pub pooled: NodeId,
    /// Softmax weights per window, each `[1 x window_len]`.
    pub window_weights: Vec<NodeId>,
}

/// Soft-pool consecutive windows of `window` rows into single vectors.
/// Each row of a window is scored (see [`ScoreIds`]), scores pass through
/// a softmax, and the pooled vector is the weighted sum of the original
/// rows. The final window may be shorter than `window`.
pub fn semantic_align(
    g: &mut Graph,
    sequence: NodeId,
    score: ScoreIds,
    window: usize,
    attn_dim: usize,
) -> Result<AlignOutput, TensorError> {
    let rows = g.value(sequence).rows();
    if rows == 0 || window == 0 {
        return Err(TensorError::ShapeMismatch(
            "semantic_align needs a non-empty sequence and positive window".into(),
        ));
    }
    let mut pooled = Vec::new();
    let mut window_weights = Vec::new();
    let mut start = 0;
    while start < rows {
        let len = window.min(rows - start);
        let chunk = g.slice_rows(sequence, start, len)?;
        let scores = match score {
            ScoreIds::Dot { query, key } => {
                let q = g.matmul(chunk, query)?;
                let last = g.slice_rows(chunk, len - 1, 1)?;
                let k = g.matmul(last, key)?;
                let kt = g.transpose(k)?;
                let raw = g.matmul(q, kt)?;
                g.scale(raw, 1.0 / (attn_dim as f64).sqrt())
            }
            ScoreIds::Linear { weight, bias } => {
                let raw = g.matmul(chunk, weight)?;
                g.add_bias(raw, bias)?
            }
        };
        let row_scores = g.transpose(scores)?;
        let weights = g.softmax(row_scores)?;
        window_weights.push(weights);
        pooled.push(g.matmul(weights, chunk)?);
        start += len;
    }
    Ok(AlignOutput {
        pooled: g.concat(0, &pooled)?,
        window_weights,
    })
}

/// Shared dense refinement: `relu(rows * weight + bias)`, applied to every
/// row independently.
pub fn refine_rows(
    g: &mut Graph,
    rows: NodeId,
    weight: NodeId,
    bias: NodeId,
) -> Result<NodeId, TensorError> {
    let lin = g.matmul(rows, weight)?;
    let biased = g.add_bias(lin, bias)?;
    Ok(g.relu(biased))
}

/// Global self-attention output.
pub struct AttentionOutput {
    /// Row-stochastic attention matrix `[n x n]`.
    pub weights: NodeId,
    /// Attended rows `[n x attn_dim]`.
    pub attended: NodeId,
    /// Mean over attended rows, `[1 x attn_dim]`.
    pub global: NodeId,
}

/// Full query/key/value self-attention over the fused rows, followed by a
/// mean-pool into one global feature vector.
pub fn hybrid_attention(
    g: &mut Graph,
    rows: NodeId,
    query: NodeId,
    key: NodeId,
    value: NodeId,
    attn_dim: usize,
) -> Result<AttentionOutput, TensorError> {
    let q = g.matmul(rows, query)?;
    let k = g.matmul(rows, key)?;
    let v = g.matmul(rows, value)?;
    let kt = g.transpose(k)?;
    let raw = g.matmul(q, kt)?;
    let scaled = g.scale(raw, 1.0 / (attn_dim as f64).sqrt());
    let weights = g.softmax(scaled)?;
    let attended = g.matmul(weights, v)?;
    let global = g.mean_rows(attended)?;
    Ok(AttentionOutput {
        weights,
        attended,
        global,
    })
}

/// Sigmoid head over the global feature vector.
pub fn predict_head(
    g: &mut Graph,
    global: NodeId,
    weight: NodeId,
    bias: NodeId,
) -> Result<NodeId, TensorError> {
    let logit = g.matmul(global, weight)?;
    let biased = g.add(logit, bias)?;
    Ok(g.sigmoid(biased))
}

/// Intermediate handles of one forward pass, for inspection and tests.
pub struct ForwardTrace {
    /// Convolved sequence per enabled level, in token/sentence/description
    /// order.
    pub level_outputs: Vec<(Level, NodeId)>,
    /// Concatenated token+sentence rows entering pooling, when a code
    /// level is enabled.
    pub code_rows: Option<NodeId>,
    /// Pooled vectors from semantic alignment.
    pub aligned: Option<AlignOutput>,
    /// Refined rows entering global attention.
    pub fused: NodeId,
    pub attention: AttentionOutput,
    /// The predicted probability, `[1 x 1]`.
    pub probability: NodeId,
}

/// Run the full graph for one encoded patch and return every intermediate.
pub fn forward_trace(
    g: &mut Graph,
    bound: &BoundParams,
    enc: &EncodedPatch,
    cfg: &ModelConfig,
) -> Result<ForwardTrace, TensorError> {
    let mut level_outputs = Vec::new();
    let mut code_parts = Vec::new();
    let mut desc_output = None;
    for level in cfg.enabled_levels() {
        let ids = match level {
            Level::Token => &enc.token_ids,
            Level::Sentence => &enc.line_ids,
            Level::Description => &enc.desc_ids,
        };
        if ids.len() != cfg.sequence_limit(level) {
            return Err(TensorError::ShapeMismatch(format!(
                "{} stream has {} ids, config expects {}",
                level.key(),
                ids.len(),
                cfg.sequence_limit(level)
            )));
        }
        let table = bound.id(&format!("embed.{}", level.key()));
        let embedded = g.gather(table, ids)?;
        let channels = level_channel_ids(bound, cfg, level);
        let h = mcc_forward(g, embedded, &channels)?;
        level_outputs.push((level, h));
        match level {
            Level::Description => desc_output = Some(h),
            _ => code_parts.push(h),
        }
    }

    let (code_rows, aligned) = if code_parts.is_empty() {
        (None, None)
    } else {
        let rows = g.concat(0, &code_parts)?;
        let score = match cfg.pool_score {
            PoolScore::Dot => ScoreIds::Dot {
                query: bound.id("pool.query.weight"),
                key: bound.id("pool.key.weight"),
            },
            PoolScore::Linear => ScoreIds::Linear {
                weight: bound.id("pool.linear.weight"),
                bias: bound.id("pool.linear.bias"),
            },
        };
        let out = semantic_align(g, rows, score, cfg.pool_window, cfg.attn_dim)?;
        (Some(rows), Some(out))
    };

    // Pooled code vectors and description rows share the refinement layer;
    // refined code rows come first, description rows are appended.
    let mut to_refine = Vec::new();
    if let Some(a) = &aligned {
        to_refine.push(a.pooled);
    }
    if let Some(d) = desc_output {
        to_refine.push(d);
    }
    let stacked = g.concat(0, &to_refine)?;
    let fused = refine_rows(
        g,
        stacked,
        bound.id("refine.weight"),
        bound.id("refine.bias"),
    )?;

    let attention = hybrid_attention(
        g,
        fused,
        bound.id("attn.query.weight"),
        bound.id("attn.key.weight"),
        bound.id("attn.value.weight"),
        cfg.attn_dim,
    )?;
    let probability = predict_head(
        g,
        attention.global,
        bound.id("head.weight"),
        bound.id("head.bias"),
    )?;
    Ok(ForwardTrace {
        level_outputs,
        code_rows,
        aligned,
        fused,
        attention,
        probability,
    })
}

/// Forward pass returning just the predicted probability node.
pub fn forward_graph(
    g: &mut Graph,
    bound: &BoundParams,
    enc: &EncodedPatch,
    cfg: &ModelConfig,
) -> Result<NodeId, TensorError> {
    Ok(forward_trace(g, bound, enc, cfg)?.probability)
}

/// Mean binary cross-entropy over a batch, as one scalar node.
pub fn batch_loss_graph(
    g: &mut Graph,
    bound: &BoundParams,
    batch: &[EncodedPatch],
    cfg: &ModelConfig,
) -> Result<NodeId, TensorError> {
    if batch.is_empty() {
        return Err(TensorError::ShapeMismatch("empty batch".into()));
    }
    let mut losses = Vec::with_capacity(batch.len());
    for enc in batch {
        let prob = forward_graph(g, bound, enc, cfg)?;
        losses.push(g.binary_cross_entropy(prob, enc.label as f64)?);
    }
    let stacked = g.concat(0, &losses)?;
    g.mean_rows(stacked)
}

/// Score one patch with frozen parameters.
pub fn score_one(
    cfg: &ModelConfig,
    params: &ModelParams,
    enc: &EncodedPatch,
) -> Result<f64, ModelError> {
    validate_lengths(cfg, enc)?;
    let mut g = Graph::new();
    let bound = super::bind(&mut g, params, false);
    let prob = forward_graph(&mut g, &bound, enc, cfg)?;
    Ok(g.value(prob).data()[0])
}

/// Score a whole dataset with frozen parameters.
pub fn score_many(
    cfg: &ModelConfig,
    params: &ModelParams,
    encs: &[EncodedPatch],
) -> Result<Vec<f64>, ModelError> {
    encs.iter().map(|e| score_one(cfg, params, e)).collect()
}

fn validate_lengths(cfg: &ModelConfig, enc: &EncodedPatch) -> Result<(), ModelError> {
    for level in cfg.enabled_levels() {
        let len = match level {
            Level::Token => enc.token_ids.len(),
            Level::Sentence => enc.line_ids.len(),
            Level::Description => enc.desc_ids.len(),
        };
        if len != cfg.sequence_limit(level) {
            return Err(ModelError::ConfigMismatch(format!(
                "{} stream length {len} does not match configured {}",
                level.key(),
                cfg.sequence_limit(level)
            )));
        }
    }
    Ok(())
}
