//! Trains the default three-stream model on the synthetic fall/walk task.
//!
//! cargo run --release --example train_synthetic -- [epochs] [seed] [--joint-only] [--no-masking]

use std::time::Instant;

use skelfall::metrics::metrics;
use skelfall::model::{MaskingProbs, ModelConfig, StreamSet, ThreeStreamModel};
use skelfall::skeleton::JointLayout;
use skelfall::synthetic::{class_names, train_test, SyntheticConfig};
use skelfall::train::{evaluate, train_with, Hyperparams};

fn main() -> skelfall::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let positional: Vec<u64> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let epochs = positional.first().copied().unwrap_or(10) as usize;
    let seed = positional.get(1).copied().unwrap_or(0);

    let data = SyntheticConfig::default();
    let (train_set, test_set) = train_test(&data, 400, 100, seed);

    let mut cfg = ModelConfig::new(JointLayout::coco18(), 2, data.frames, 2);
    if args.iter().any(|a| a == "--joint-only") {
        cfg.streams = StreamSet::JOINT_ONLY;
    }
    if args.iter().any(|a| a == "--no-masking") {
        cfg.masking = MaskingProbs {
            p_joint: 0.0,
            p_frame: 0.0,
        };
    }
    let mut model = ThreeStreamModel::new(cfg, seed)?;
    let hp = Hyperparams {
        epochs,
        seed,
        ..Default::default()
    };

    let start = Instant::now();
    train_with(&mut model, &train_set, &test_set, &hp, |r| {
        println!(
            "epoch {:>3}  loss {:.4}  test accuracy {:6.2}  ({:.1}s)",
            r.epoch,
            r.train_loss,
            r.val_accuracy,
            start.elapsed().as_secs_f64()
        );
    })?;
    let cm = evaluate(&model, &test_set)?;
    print!("{}", metrics(&cm, &class_names())?.to_table());
    Ok(())
}
