//! Security patch classifier: multilevel code embeddings (tokens, changed
//! lines, commit message) feed per-level convolutional stacks, windowed
//! attention pooling and a global self-attention head, trained end to end
//! with a from-scratch reverse-mode engine whose gradients are verified
//! against finite differences.

pub mod ingest;
pub mod model;
pub mod tensor;
