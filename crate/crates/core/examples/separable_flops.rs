//! Parameter and multiply counts of the separable and dense temporal
//! convolution variants.
//!
//! cargo run --example separable_flops -- [clip_len]

use skelfall::layers::{septcn_flops, TemporalKind, TEMPORAL_KERNEL};
use skelfall::model::{count_flops, count_parameters, ModelConfig, ThreeStreamModel};
use skelfall::skeleton::JointLayout;

fn main() -> skelfall::Result<()> {
    let frames = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    for c in [64, 128] {
        let (sep, dense) = septcn_flops(c, c, 1, 1, TEMPORAL_KERNEL);
        println!(
            "{c:>4} channels: {sep} vs {dense} multiplies per position ({:.2}x)",
            dense as f64 / sep as f64
        );
    }
    for kind in [TemporalKind::Separable, TemporalKind::Dense] {
        let mut cfg = ModelConfig::new(JointLayout::coco18(), 2, frames, 2);
        cfg.temporal = kind;
        let model = ThreeStreamModel::new(cfg.clone(), 0)?;
        let flops = count_flops(&cfg, frames);
        println!(
            "{kind:?}: {} parameters, {} multiplies (temporal {})",
            count_parameters(&model),
            flops.total(),
            flops.temporal
        );
    }
    Ok(())
}
