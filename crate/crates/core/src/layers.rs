//! Spatial graph convolution with a learnable adjacency mask, separable
//! temporal convolution, and the GSTCN block that composes them with
//! pooled residual paths and joint/frame masking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamId, ParamStore, PoolAxis, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Temporal kernel length of the depthwise stage.
pub const TEMPORAL_KERNEL: usize = 3;

fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Per-frame graph convolution: `out[:, t, :] = Wᵀ · x[:, t, :] · (Â ⊙ M)ᵀ`.
///
/// One weight matrix is shared by every joint in a neighbour set. `M`
/// starts at all ones so training begins from the anatomical graph.
#[derive(Clone, Debug)]
pub struct SgcLayer {
    pub weight: ParamId,
    pub mask: ParamId,
    adjacency: Tensor,
    c_in: usize,
    c_out: usize,
}

impl SgcLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        adjacency: &Tensor,
        rng: &mut R,
    ) -> Self {
        let v = adjacency.shape()[0];
        let weight = store.add(
            format!("{prefix}.sgc.weight"),
            Tensor::randn(&[c_in, c_out], he_std(c_in), rng),
        );
        let mask = store.add(format!("{prefix}.sgc.mask"), Tensor::ones(&[v, v]));
        SgcLayer {
            weight,
            mask,
            adjacency: adjacency.clone(),
            c_in,
            c_out,
        }
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let v = self.adjacency.shape()[0];
        if shape.len() != 3 || shape[0] != self.c_in || shape[2] != v {
            return Err(Error::Shape {
                op: "sgc_forward",
                lhs: shape,
                rhs: vec![self.c_in, 0, v],
            });
        }
        let t = shape[1];
        // channel embedding: [C_out, T·V]
        let flat = tape.reshape(x, &[self.c_in, t * v])?;
        let wt = tape.transpose(params[self.weight])?;
        let embedded = tape.matmul(wt, flat)?;
        // aggregation over each joint's neighbour set
        let rows = tape.reshape(embedded, &[self.c_out * t, v])?;
        let a_hat = tape.constant(self.adjacency.clone());
        let effective = tape.mul(a_hat, params[self.mask])?;
        let effective_t = tape.transpose(effective)?;
        let aggregated = tape.matmul(rows, effective_t)?;
        tape.reshape(aggregated, &[self.c_out, t, v])
    }
}

/// Depthwise `3 × 1` temporal convolution followed by a pointwise `1 × 1`
/// channel mixer and a bias.
#[derive(Clone, Debug)]
pub struct SepTcnLayer {
    /// `[C_in, 3]`
    pub depthwise: ParamId,
    /// `[C_out, C_in]`
    pub pointwise: ParamId,
    /// `[C_out]`
    pub bias: ParamId,
}

impl SepTcnLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let depthwise = store.add(
            format!("{prefix}.tcn.depthwise"),
            Tensor::randn(&[c_in, TEMPORAL_KERNEL], (1.0 / TEMPORAL_KERNEL as f64).sqrt(), rng),
        );
        let pointwise = store.add(
            format!("{prefix}.tcn.pointwise"),
            Tensor::randn(&[c_out, c_in], he_std(c_in), rng),
        );
        let bias = store.add(format!("{prefix}.tcn.bias"), Tensor::zeros(&[c_out]));
        SepTcnLayer {
            depthwise,
            pointwise,
            bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let dw = tape.depthwise_temporal_conv(x, params[self.depthwise])?;
        let pw = tape.pointwise_conv(dw, params[self.pointwise])?;
        tape.add_channel_bias(pw, params[self.bias])
    }
}

/// Full `3 × 1` temporal convolution, the non-separable baseline.
#[derive(Clone, Debug)]
pub struct DenseTcnLayer {
    /// `[C_out, C_in, 3]`
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseTcnLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let weight = store.add(
            format!("{prefix}.tcn.weight"),
            Tensor::randn(&[c_out, c_in, TEMPORAL_KERNEL], he_std(c_in * TEMPORAL_KERNEL), rng),
        );
        let bias = store.add(format!("{prefix}.tcn.bias"), Tensor::zeros(&[c_out]));
        DenseTcnLayer { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let y = tape.temporal_conv(x, params[self.weight])?;
        tape.add_channel_bias(y, params[self.bias])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalKind {
    #[default]
    Separable,
    Dense,
}

#[derive(Clone, Debug)]
pub enum TemporalLayer {
    Separable(SepTcnLayer),
    Dense(DenseTcnLayer),
}

impl TemporalLayer {
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        match self {
            TemporalLayer::Separable(l) => l.forward(tape, params, x),
            TemporalLayer::Dense(l) => l.forward(tape, params, x),
        }
    }
}

/// Multiply counts of one temporal layer over a `T × V` grid:
/// `(separable, dense)` with separable `= T·V·(k·C_in + C_in·C_out)` and
/// dense `= T·V·k·C_in·C_out`.
pub fn septcn_flops(c_in: usize, c_out: usize, frames: usize, joints: usize, kernel: usize) -> (u64, u64) {
    let positions = (frames * joints) as u64;
    let (c_in, c_out, k) = (c_in as u64, c_out as u64, kernel as u64);
    (positions * (k * c_in + c_in * c_out), positions * k * c_in * c_out)
}

/// Random joint/frame dropping applied to a block input during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskingConfig {
    pub p_joint: f64,
    pub p_frame: f64,
    pub training: bool,
    pub seed: u64,
}

impl MaskingConfig {
    pub fn eval() -> Self {
        MaskingConfig {
            p_joint: 0.0,
            p_frame: 0.0,
            training: false,
            seed: 0,
        }
    }

    fn is_identity(&self) -> bool {
        !self.training || (self.p_joint == 0.0 && self.p_frame == 0.0)
    }

    /// 0/1 keep-mask of shape `[C, T, V]`, or `None` when masking is the
    /// identity. Whole joint columns and whole frame slices are dropped.
    pub fn mask(&self, channels: usize, frames: usize, joints: usize) -> Option<Tensor> {
        if self.is_identity() {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let keep_joint: Vec<bool> = (0..joints).map(|_| !(rng.random::<f64>() < self.p_joint)).collect();
        let keep_frame: Vec<bool> = (0..frames).map(|_| !(rng.random::<f64>() < self.p_frame)).collect();
        let mut m = Tensor::zeros(&[channels, frames, joints]);
        let d = m.data_mut();
        for c in 0..channels {
            for t in 0..frames {
                for v in 0..joints {
                    if keep_frame[t] && keep_joint[v] {
                        d[(c * frames + t) * joints + v] = 1.0;
                    }
                }
            }
        }
        Some(m)
    }
}

/// Zeroes masked joints and frames of `x: [C, T, V]`; identity in evaluation
/// mode or when both probabilities are zero.
pub fn apply_masking(tape: &mut Tape, x: Var, cfg: &MaskingConfig) -> Result<Var> {
    let (c, t, v) = match *tape.shape(x) {
        [c, t, v] => (c, t, v),
        _ => {
            return Err(Error::Shape {
                op: "apply_masking",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![0, 0, 0],
            })
        }
    };
    match cfg.mask(c, t, v) {
        None => Ok(x),
        Some(mask) => {
            let m = tape.constant(mask);
            tape.mul(x, m)
        }
    }
}

/// Which pooled residuals a block adds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolingResiduals {
    /// Max over joints, broadcast back, added to the graph-conv output.
    pub spatial: bool,
    /// Max over frames of the projected input, broadcast back, added to
    /// the block sum.
    pub temporal: bool,
}

impl Default for PoolingResiduals {
    fn default() -> Self {
        PoolingResiduals {
            spatial: true,
            temporal: true,
        }
    }
}

/// `y = ReLU(TCN(s) + r + tpool(r))` with `s = SGC(mask(x)) + spool(SGC(mask(x)))`
/// and `r` the `1 × 1` projection of `x` (identity when widths match).
#[derive(Clone, Debug)]
pub struct GstcnBlock {
    pub sgc: SgcLayer,
    pub temporal: TemporalLayer,
    pub projection: Option<ParamId>,
    pub pooling: PoolingResiduals,
    pub c_in: usize,
    pub c_out: usize,
}

impl GstcnBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        adjacency: &Tensor,
        kind: TemporalKind,
        pooling: PoolingResiduals,
        rng: &mut R,
    ) -> Self {
        let sgc = SgcLayer::new(store, prefix, c_in, c_out, adjacency, rng);
        let temporal = match kind {
            TemporalKind::Separable => TemporalLayer::Separable(SepTcnLayer::new(store, prefix, c_out, c_out, rng)),
            TemporalKind::Dense => TemporalLayer::Dense(DenseTcnLayer::new(store, prefix, c_out, c_out, rng)),
        };
        let projection = (c_in != c_out).then(|| {
            store.add(
                format!("{prefix}.residual"),
                Tensor::randn(&[c_out, c_in], he_std(c_in), rng),
            )
        });
        GstcnBlock {
            sgc,
            temporal,
            projection,
            pooling,
            c_in,
            c_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var, masking: &MaskingConfig) -> Result<Var> {
        let masked = apply_masking(tape, x, masking)?;
        let mut s = self.sgc.forward(tape, params, masked)?;
        if self.pooling.spatial {
            let pooled = tape.max_broadcast(s, PoolAxis::Joints)?;
            s = tape.add(s, pooled)?;
        }
        let temporal = self.temporal.forward(tape, params, s)?;
        let residual = match self.projection {
            Some(w) => tape.pointwise_conv(x, params[w])?,
            None => x,
        };
        let mut sum = tape.add(temporal, residual)?;
        if self.pooling.temporal {
            let pooled = tape.max_broadcast(residual, PoolAxis::Frames)?;
            sum = tape.add(sum, pooled)?;
        }
        Ok(tape.relu(sum))
    }
}
