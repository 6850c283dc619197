//! End-to-end gradient verification: the recorded gradients of the full
//! batch loss are compared against central finite differences, parameter
//! tensor by parameter tensor.

use super::{batch_loss_graph, init_params, BoundParams, Level, ModelConfig, ModelError};
use crate::ingest::EncodedPatch;
use crate::tensor::{finite_diff_errors, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error per named parameter tensor.
    pub per_parameter: Vec<(String, f64)>,
    pub max_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_parameter
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// A deterministic two-patch batch (one positive, one negative) with
/// partially padded random id streams, used to drive the check.
pub fn toy_batch(cfg: &ModelConfig, seed: u64) -> Vec<EncodedPatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut make = |label: u8, idx: usize| {
        let mut stream = |level: Level| {
            let limit = cfg.sequence_limit(level);
            let vocab = cfg.vocab_size(level).max(2);
            // roughly the last quarter is padding
            let real = (limit * 3 / 4).max(1);
            let mut ids = Vec::with_capacity(limit);
            let mut mask = Vec::with_capacity(limit);
            for pos in 0..limit {
                if pos < real {
                    ids.push(rng.gen_range(1..vocab));
                    mask.push(true);
                } else {
                    ids.push(0);
                    mask.push(false);
                }
            }
            (ids, mask)
        };
        let (token_ids, token_mask) = stream(Level::Token);
        let (line_ids, line_mask) = stream(Level::Sentence);
        let (desc_ids, desc_mask) = stream(Level::Description);
        EncodedPatch {
            id: format!("gradcheck-{idx}"),
            token_ids,
            line_ids,
            desc_ids,
            token_mask,
            line_mask,
            desc_mask,
            label,
        }
    };
    vec![make(1, 0), make(0, 1)]
}

/// Initialize parameters from `seed`, build the mean batch loss over the
/// toy batch, and report the worst finite-difference error per parameter.
pub fn gradient_check(
    cfg: &ModelConfig,
    seed: u64,
    eps: f64,
) -> Result<GradCheckReport, ModelError> {
    cfg.validate()?;
    let params = init_params(cfg, seed)?;
    let batch = toy_batch(cfg, seed);
    let names: Vec<String> = params.names().cloned().collect();
    let tensors: Vec<Tensor> = names.iter().map(|n| params.get(n).clone()).collect();

    let errors = finite_diff_errors(
        |g, ids| {
            let bound = BoundParams::from_pairs(names.iter().zip(ids.iter().copied()));
            batch_loss_graph(g, &bound, &batch, cfg)
        },
        &tensors,
        eps,
    )?;

    let per_parameter: Vec<(String, f64)> = names.into_iter().zip(errors).collect();
    let max_error = per_parameter.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_parameter,
        max_error,
    })
}
