//! The three-stream network: a joint stream and a motion stream of two
//! GSTCN blocks each, a skip stream projecting the raw input, global
//! average pooling per stream, concatenation, and the classifier head.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::{load_params, save_params};
use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::layers::{septcn_flops, GstcnBlock, MaskingConfig, PoolingResiduals, TemporalKind, TEMPORAL_KERNEL};
use crate::skeleton::JointLayout;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingProbs {
    pub p_joint: f64,
    pub p_frame: f64,
}

impl Default for MaskingProbs {
    fn default() -> Self {
        MaskingProbs {
            p_joint: 0.1,
            p_frame: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSet {
    pub joint: bool,
    pub motion: bool,
    pub skip: bool,
}

impl StreamSet {
    pub const ALL: StreamSet = StreamSet {
        joint: true,
        motion: true,
        skip: true,
    };
    pub const JOINT_ONLY: StreamSet = StreamSet {
        joint: true,
        motion: false,
        skip: false,
    };

    pub fn count(&self) -> usize {
        usize::from(self.joint) + usize::from(self.motion) + usize::from(self.skip)
    }
}

impl Default for StreamSet {
    fn default() -> Self {
        Self::ALL
    }
}

/// Everything needed to rebuild the architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layout: JointLayout,
    /// Coordinates per joint, 2 or 3.
    pub dims: usize,
    pub clip_len: usize,
    pub num_classes: usize,
    /// Output widths of the two GSTCN stages of each stream.
    pub channels: [usize; 2],
    pub head_hidden: usize,
    pub dropout: f64,
    pub masking: MaskingProbs,
    pub pooling: PoolingResiduals,
    pub temporal: TemporalKind,
    pub streams: StreamSet,
}

impl ModelConfig {
    /// Default architecture for a layout: 64 → 128 channels per stream.
    pub fn new(layout: JointLayout, dims: usize, clip_len: usize, num_classes: usize) -> Self {
        ModelConfig {
            layout,
            dims,
            clip_len,
            num_classes,
            channels: [64, 128],
            head_hidden: 64,
            dropout: 0.5,
            masking: MaskingProbs::default(),
            pooling: PoolingResiduals::default(),
            temporal: TemporalKind::Separable,
            streams: StreamSet::ALL,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.layout.joint_count
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.dims, self.clip_len, self.joint_count()]
    }

    pub fn feature_len(&self) -> usize {
        self.channels[1] * self.streams.count()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dims == 2 || self.dims == 3) {
            return bad(format!("dims must be 2 or 3, got {}", self.dims));
        }
        if self.clip_len < 2 {
            return bad(format!("clip_len must be at least 2, got {}", self.clip_len));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.channels.contains(&0) || self.head_hidden == 0 {
            return bad("channel widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for p in [self.masking.p_joint, self.masking.p_frame] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("masking probability {p} outside [0, 1]"));
            }
        }
        if self.streams.count() == 0 {
            return bad("at least one stream must be enabled".into());
        }
        Ok(())
    }
}

/// Frame differences `x_t − x_{t−1}`, with frame 0 set to zero.
pub fn compute_motion(clip: &Tensor) -> Result<Tensor> {
    let (c, t, v) = match *clip.shape() {
        [c, t, v] => (c, t, v),
        _ => {
            return Err(Error::invalid(format!(
                "motion needs a [dims, T, V] clip, got {:?}",
                clip.shape()
            )))
        }
    };
    if t < 2 {
        return Err(Error::invalid(format!("motion needs at least 2 frames, got {t}")));
    }
    let d = clip.data();
    let mut out = vec![0.0; d.len()];
    for ch in 0..c {
        for f in 1..t {
            for j in 0..v {
                let i = (ch * t + f) * v + j;
                out[i] = d[i] - d[i - v];
            }
        }
    }
    Tensor::new(clip.shape().to_vec(), out)
}

/// FC → ReLU → LayerNorm → Dropout → FC. Softmax is applied by the caller.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub norm_gamma: ParamId,
    pub norm_beta: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
    pub dropout: f64,
}

impl ClassifierHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        in_features: usize,
        hidden: usize,
        classes: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let fc1_weight = store.add(
            "head.fc1.weight",
            Tensor::randn(&[hidden, in_features], (2.0 / in_features as f64).sqrt(), rng),
        );
        let fc1_bias = store.add("head.fc1.bias", Tensor::zeros(&[hidden]));
        let norm_gamma = store.add("head.norm.gamma", Tensor::ones(&[hidden]));
        let norm_beta = store.add("head.norm.beta", Tensor::zeros(&[hidden]));
        let fc2_weight = store.add(
            "head.fc2.weight",
            Tensor::randn(&[classes, hidden], (1.0 / hidden as f64).sqrt(), rng),
        );
        let fc2_bias = store.add("head.fc2.bias", Tensor::zeros(&[classes]));
        ClassifierHead {
            fc1_weight,
            fc1_bias,
            norm_gamma,
            norm_beta,
            fc2_weight,
            fc2_bias,
            dropout,
        }
    }

    /// Logits for a feature vector. `dropout_seed` is `None` in evaluation.
    pub fn logits(&self, tape: &mut Tape, params: &Bound, features: Var, dropout_seed: Option<u64>) -> Result<Var> {
        let n = tape.value(features).len();
        let column = tape.reshape(features, &[n, 1])?;
        let h = linear(tape, params[self.fc1_weight], params[self.fc1_bias], column)?;
        let h = tape.relu(h);
        let h = tape.layer_norm(h, params[self.norm_gamma], params[self.norm_beta])?;
        let h = match dropout_seed {
            Some(seed) => tape.dropout(h, self.dropout, &mut ChaCha8Rng::seed_from_u64(seed))?,
            None => h,
        };
        let hn = tape.value(h).len();
        let h = tape.reshape(h, &[hn, 1])?;
        linear(tape, params[self.fc2_weight], params[self.fc2_bias], h)
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, features: Var, dropout_seed: Option<u64>) -> Result<Var> {
        let logits = self.logits(tape, params, features, dropout_seed)?;
        Ok(tape.softmax(logits))
    }
}

fn linear(tape: &mut Tape, w: Var, b: Var, column: Var) -> Result<Var> {
    let y = tape.matmul(w, column)?;
    let out = tape.shape(y)[0];
    let y = tape.reshape(y, &[out])?;
    tape.add_channel_bias(y, b)
}

/// Forward-pass mode. Training enables masking and dropout, both seeded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Joint,
    Motion,
    Skip,
}

#[derive(Clone, Debug)]
pub struct ThreeStreamModel {
    config: ModelConfig,
    params: ParamStore,
    joint: Option<[GstcnBlock; 2]>,
    motion: Option<[GstcnBlock; 2]>,
    skip: Option<ParamId>,
    head: ClassifierHead,
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |acc, &p| mix(acc, p.wrapping_add(1)))
}

impl ThreeStreamModel {
    /// Builds the network with weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let adjacency = build_graph(&config.layout).normalized_adjacency();
        let [c1, c2] = config.channels;
        let stream = |name: &str, params: &mut ParamStore, rng: &mut ChaCha8Rng| {
            [
                GstcnBlock::new(
                    params,
                    &format!("{name}.1"),
                    config.dims,
                    c1,
                    &adjacency,
                    config.temporal,
                    config.pooling,
                    rng,
                ),
                GstcnBlock::new(
                    params,
                    &format!("{name}.2"),
                    c1,
                    c2,
                    &adjacency,
                    config.temporal,
                    config.pooling,
                    rng,
                ),
            ]
        };
        let joint = config.streams.joint.then(|| stream("joint", &mut params, &mut rng));
        let motion = config.streams.motion.then(|| stream("motion", &mut params, &mut rng));
        let skip = config.streams.skip.then(|| {
            params.add(
                "skip.projection",
                Tensor::randn(&[c2, config.dims], (2.0 / config.dims as f64).sqrt(), &mut rng),
            )
        });
        let head = ClassifierHead::new(
            &mut params,
            config.feature_len(),
            config.head_hidden,
            config.num_classes,
            config.dropout,
            &mut rng,
        );
        Ok(ThreeStreamModel {
            config,
            params,
            joint,
            motion,
            skip,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    /// Blocks of the enabled GSTCN streams, joint stream first.
    pub fn blocks(&self) -> impl Iterator<Item = &GstcnBlock> {
        self.joint.iter().chain(self.motion.iter()).flat_map(|b| b.iter())
    }

    fn check_input(&self, clip: &Tensor) -> Result<()> {
        if clip.shape() != self.config.input_shape() {
            return Err(Error::Shape {
                op: "forward",
                lhs: clip.shape().to_vec(),
                rhs: self.config.input_shape().to_vec(),
            });
        }
        Ok(())
    }

    fn masking(&self, mode: Mode, salt: u64) -> MaskingConfig {
        match mode {
            Mode::Eval => MaskingConfig::eval(),
            Mode::Train { seed } => MaskingConfig {
                p_joint: self.config.masking.p_joint,
                p_frame: self.config.masking.p_frame,
                training: true,
                seed: derive_seed(&[seed, salt]),
            },
        }
    }

    /// Pooled per-stream feature vectors, in joint, motion, skip order
    /// (disabled streams omitted).
    pub fn stream_features(&self, tape: &mut Tape, params: &Bound, clip: &Tensor, mode: Mode) -> Result<Vec<Var>> {
        self.check_input(clip)?;
        let mut features = Vec::with_capacity(3);
        let x = tape.constant(clip.clone());
        if let Some(blocks) = &self.joint {
            let h = blocks[0].forward(tape, params, x, &self.masking(mode, 11))?;
            let h = blocks[1].forward(tape, params, h, &self.masking(mode, 12))?;
            features.push(tape.global_avg_pool(h));
        }
        if let Some(blocks) = &self.motion {
            let m = tape.constant(compute_motion(clip)?);
            let h = blocks[0].forward(tape, params, m, &self.masking(mode, 21))?;
            let h = blocks[1].forward(tape, params, h, &self.masking(mode, 22))?;
            features.push(tape.global_avg_pool(h));
        }
        if let Some(w) = self.skip {
            let h = tape.pointwise_conv(x, params[w])?;
            features.push(tape.global_avg_pool(h));
        }
        Ok(features)
    }

    pub fn logits(&self, tape: &mut Tape, params: &Bound, clip: &Tensor, mode: Mode) -> Result<Var> {
        let features = self.stream_features(tape, params, clip, mode)?;
        let fused = tape.concat(&features)?;
        let dropout_seed = match mode {
            Mode::Eval => None,
            Mode::Train { seed } => Some(derive_seed(&[seed, 99])),
        };
        self.head.logits(tape, params, fused, dropout_seed)
    }

    /// Class probabilities for one clip.
    pub fn forward(&self, clip: &Tensor, mode: Mode) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = self.params.bind_frozen(&mut tape);
        let logits = self.logits(&mut tape, &params, clip, mode)?;
        let probs = tape.softmax(logits);
        Ok(tape.value(probs).data().to_vec())
    }

    pub fn predict(&self, clip: &Tensor) -> Result<Vec<f64>> {
        self.forward(clip, Mode::Eval)
    }

    /// Evaluation-mode probabilities for each clip independently.
    pub fn predict_batch(&self, clips: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        clips.iter().map(|c| self.predict(c)).collect()
    }

    /// Applies the head to precomputed stream features (e.g. with one stream
    /// zeroed), in evaluation mode.
    pub fn head_probabilities(&self, features: &[Tensor]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = self.params.bind_frozen(&mut tape);
        let vars: Vec<Var> = features.iter().map(|f| tape.constant(f.clone())).collect();
        let fused = tape.concat(&vars)?;
        let probs = self.head.forward(&mut tape, &params, fused, None)?;
        Ok(tape.value(probs).data().to_vec())
    }

    /// Evaluation-mode pooled features of each stream.
    pub fn features(&self, clip: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let params = self.params.bind_frozen(&mut tape);
        let vars = self.stream_features(&mut tape, &params, clip, Mode::Eval)?;
        Ok(vars.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Cross-entropy loss and its gradient for every parameter.
    pub fn loss_and_gradients(&self, clip: &Tensor, label: usize, mode: Mode) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        let logits = self.logits(&mut tape, &params, clip, mode)?;
        let loss = tape.cross_entropy(logits, label)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], params.gradients(&grads)))
    }

    /// Writes the config record and every parameter.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        save_params(path, &header, &self.params)
    }

    /// Rebuilds the architecture from the stored config and checks that
    /// every stored parameter matches it by name and shape.
    pub fn load(path: &Path) -> Result<Self> {
        let (header, stored) = load_params(path)?;
        let config: ModelConfig =
            serde_json::from_str(&header).map_err(|e| Error::Checkpoint(format!("config record: {e}")))?;
        let mut model = ThreeStreamModel::new(config, 0)?;
        if stored.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters stored, architecture has {}",
                stored.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let (name, value) = (stored.name(id), stored.get(id));
            if name != model.params.name(id) || value.shape() != model.params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` {:?} does not match `{}` {:?}",
                    value.shape(),
                    model.params.name(id),
                    model.params.get(id).shape()
                )));
            }
        }
        model.params = stored;
        Ok(model)
    }
}

pub fn count_parameters(model: &ThreeStreamModel) -> usize {
    model.params.num_scalars()
}

/// Multiply counts of one forward pass, by component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlopCount {
    pub graph_conv: u64,
    pub temporal: u64,
    pub residual: u64,
    pub skip: u64,
    pub head: u64,
}

impl FlopCount {
    pub fn blocks(&self) -> u64 {
        self.graph_conv + self.temporal + self.residual
    }

    pub fn total(&self) -> u64 {
        self.blocks() + self.skip + self.head
    }
}

/// Counts multiplications in linear maps (graph convolution, temporal
/// convolution, residual and skip projections, fully connected layers) for a
/// clip of `frames` frames. Pooling, normalization and activations are not
/// counted.
pub fn count_flops(config: &ModelConfig, frames: usize) -> FlopCount {
    let v = config.joint_count() as u64;
    let positions = frames as u64 * v;
    let [c1, c2] = config.channels;
    let mut count = FlopCount::default();
    let stages = [(config.dims, c1), (c1, c2)];
    let streams = usize::from(config.streams.joint) + usize::from(config.streams.motion);
    for _ in 0..streams {
        for &(cin, cout) in &stages {
            let (cin_u, cout_u) = (cin as u64, cout as u64);
            count.graph_conv += positions * cin_u * cout_u + positions * cout_u * v;
            let (sep, dense) = septcn_flops(cout, cout, frames, v as usize, TEMPORAL_KERNEL);
            count.temporal += match config.temporal {
                TemporalKind::Separable => sep,
                TemporalKind::Dense => dense,
            };
            if cin != cout {
                count.residual += positions * cin_u * cout_u;
            }
        }
    }
    if config.streams.skip {
        count.skip = positions * config.dims as u64 * c2 as u64;
    }
    let (f, h, k) = (
        config.feature_len() as u64,
        config.head_hidden as u64,
        config.num_classes as u64,
    );
    count.head = f * h + h * k;
    count
}
