//! Interleaved forward-pass timing of the separable and dense variants with
//! a Welch t statistic.
//!
//! cargo run --release --example latency_bench -- [samples]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skelfall::autodiff::Tensor;
use skelfall::bench::{benchmark_pair, welch_t_test, MIN_SAMPLES};
use skelfall::layers::TemporalKind;
use skelfall::model::{ModelConfig, ThreeStreamModel};
use skelfall::skeleton::JointLayout;

fn main() -> skelfall::Result<()> {
    let samples = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(MIN_SAMPLES);
    let cfg = ModelConfig::new(JointLayout::coco18(), 2, 64, 2);
    let sep = ThreeStreamModel::new(cfg.clone(), 0)?;
    let dense = ThreeStreamModel::new(
        ModelConfig {
            temporal: TemporalKind::Dense,
            ..cfg.clone()
        },
        0,
    )?;
    let clip = Tensor::randn(&cfg.input_shape(), 1.0, &mut ChaCha8Rng::seed_from_u64(0));

    let (a, b) = benchmark_pair(&sep, &dense, &clip, 5, samples)?;
    println!("{:<18} {:>10} {:>10}", "model", "mean [ms]", "std [ms]");
    println!("{:<18} {:>10.3} {:>10.3}", "separable", a.mean_ms, a.std_ms);
    println!("{:<18} {:>10.3} {:>10.3}", "dense", b.mean_ms, b.std_ms);
    let w = welch_t_test(&a.samples_ms, &b.samples_ms)?;
    println!("Welch t = {:.3}, df = {:.1}", w.t, w.df);
    Ok(())
}
