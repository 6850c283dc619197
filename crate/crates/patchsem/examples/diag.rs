// temporary diagnostic
use patchsem::model::*;

fn main() {
    let cfg = ModelConfig {
        embed_dim: 8, channels: 2, kernel_sizes: vec![1, 3], conv_out: 8,
        residual_blocks: 1, residual_out: 8, pool_window: 2, refine_dim: 8,
        attn_dim: 8, pool_score: PoolScore::Dot, levels: LevelFlags::default(),
        max_tokens: 12, max_lines: 6, max_desc: 6,
        token_vocab_size: 40, line_vocab_size: 24, desc_vocab_size: 24,
    };
    for seed in [42u64, 7, 13, 99] {
        let report = gradient_check(&cfg, seed, 1e-5).unwrap();
        let worst = report.worst().unwrap();
        println!("seed {seed}: max_error {:.3e} at {}", report.max_error, worst.0);
        let mut sorted = report.per_parameter.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
        for (n, e) in sorted.iter().take(4) {
            println!("    {n:40} {e:.3e}");
        }
    }
}
