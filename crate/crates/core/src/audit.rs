//! Finite-difference audit of every layer type and of the full model on a
//! tiny configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, Bound, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::graph::{build_graph, SkeletonGraph};
use crate::layers::{DenseTcnLayer, GstcnBlock, MaskingConfig, PoolingResiduals, SepTcnLayer, SgcLayer, TemporalKind};
use crate::model::{derive_seed, ClassifierHead, Mode, ModelConfig, ThreeStreamModel};
use crate::skeleton::JointLayout;

/// Acceptance threshold on the max relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModuleCheck {
    pub module: String,
    pub parameters: usize,
    pub max_rel_error: f64,
}

impl ModuleCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

/// Five joints, root 1: a small branching skeleton.
pub fn tiny_layout() -> JointLayout {
    JointLayout::new("tiny5", 5, vec![(0, 1), (1, 2), (1, 3), (3, 4)], 1).expect("valid layout")
}

/// V=5, T=8, channels 2 → 8 → 16, 2 classes.
pub fn tiny_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(tiny_layout(), 2, 8, 2);
    cfg.channels = [8, 16];
    cfg.head_hidden = 8;
    cfg
}

/// `sum(out ⊙ r)` for a fixed random `r`, so every output coordinate
/// contributes a distinct weight to the gradient.
fn probe(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let r = Tensor::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let r = tape.constant(r);
    let weighted = tape.mul(out, r)?;
    Ok(tape.sum(weighted))
}

fn inputs_with(x: &Tensor, store: &ParamStore) -> Vec<Tensor> {
    std::iter::once(x.clone())
        .chain(store.tensors().iter().cloned())
        .collect()
}

fn check<F>(module: &str, x: &Tensor, store: &ParamStore, seed: u64, f: F) -> Result<ModuleCheck>
where
    F: Fn(&mut Tape, &Bound, Var) -> Result<Var>,
{
    let report = grad_check(
        |tape, vars| {
            let bound = Bound::from_vars(vars[1..].to_vec());
            let out = f(tape, &bound, vars[0])?;
            probe(tape, out, seed)
        },
        &inputs_with(x, store),
        GRAD_EPS,
    )?;
    Ok(ModuleCheck {
        module: module.to_string(),
        parameters: store.num_scalars(),
        max_rel_error: report.max_rel_error,
    })
}

/// Gradient check of each layer type and of the full tiny model in both
/// modes, all seeded by `seed`.
pub fn gradient_audit(seed: u64) -> Result<Vec<ModuleCheck>> {
    let cfg = tiny_config();
    let graph: SkeletonGraph = build_graph(&cfg.layout);
    let adj = graph.normalized_adjacency();
    let (v, t) = (cfg.joint_count(), cfg.clip_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(&[cfg.dims, t, v], 1.0, &mut rng);
    let wide = Tensor::randn(&[3, t, v], 1.0, &mut rng);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let sgc = SgcLayer::new(&mut store, "sgc", 2, 4, &adj, &mut rng);
    // move the mask away from all-ones
    let jitter = Tensor::randn(&[v, v], 0.1, &mut rng);
    store.get_mut(sgc.mask).axpy(1.0, &jitter);
    out.push(check("sgc", &x, &store, seed, |tape, p, x| sgc.forward(tape, p, x))?);

    let mut store = ParamStore::new();
    let tcn = SepTcnLayer::new(&mut store, "tcn", 3, 4, &mut rng);
    out.push(check("sep_tcn", &wide, &store, seed, |tape, p, x| {
        tcn.forward(tape, p, x)
    })?);

    let mut store = ParamStore::new();
    let dense = DenseTcnLayer::new(&mut store, "tcn", 3, 4, &mut rng);
    out.push(check("dense_tcn", &wide, &store, seed, |tape, p, x| {
        dense.forward(tape, p, x)
    })?);

    for (name, kind, c_out, train) in [
        ("gstcn_block", TemporalKind::Separable, 4, false),
        ("gstcn_block_identity_residual", TemporalKind::Separable, 2, false),
        ("gstcn_block_dense", TemporalKind::Dense, 4, false),
        ("gstcn_block_masked", TemporalKind::Separable, 4, true),
    ] {
        let mut store = ParamStore::new();
        let block = GstcnBlock::new(
            &mut store,
            "block",
            2,
            c_out,
            &adj,
            kind,
            PoolingResiduals::default(),
            &mut rng,
        );
        let masking = MaskingConfig {
            p_joint: 0.3,
            p_frame: 0.3,
            training: train,
            seed: derive_seed(&[seed, 7]),
        };
        out.push(check(name, &x, &store, seed, |tape, p, x| {
            block.forward(tape, p, x, &masking)
        })?);
    }

    let mut store = ParamStore::new();
    let head = ClassifierHead::new(&mut store, 12, 6, 3, 0.5, &mut rng);
    let features = Tensor::randn(&[12], 1.0, &mut rng);
    out.push(check("classifier_head", &features, &store, seed, |tape, p, f| {
        head.logits(tape, p, f, None)
    })?);
    out.push(check(
        "classifier_head_dropout",
        &features,
        &store,
        seed,
        |tape, p, f| head.logits(tape, p, f, Some(derive_seed(&[seed, 3]))),
    )?);

    let model = ThreeStreamModel::new(cfg, seed)?;
    for (name, mode) in [
        ("three_stream_model", Mode::Eval),
        (
            "three_stream_model_train",
            Mode::Train {
                seed: derive_seed(&[seed, 5]),
            },
        ),
    ] {
        let label = (seed % 2) as usize;
        let report = grad_check(
            |tape, vars| {
                let bound = Bound::from_vars(vars.to_vec());
                let logits = model.logits(tape, &bound, &x, mode)?;
                tape.cross_entropy(logits, label)
            },
            model.params().tensors(),
            GRAD_EPS,
        )?;
        out.push(ModuleCheck {
            module: name.to_string(),
            parameters: model.params().num_scalars(),
            max_rel_error: report.max_rel_error,
        });
    }
    Ok(out)
}
