//! Depth-wise feature classifier.
//!
//! Input is a `C × S` channel-major feature. Three depthwise blocks each apply
//! a channel-private circular convolution over the position axis (kernel
//! length `S`, one bias per channel) followed by LeakyReLU(0.2). Global
//! average pooling gives one value per channel, `x ∈ R^C`, and two linear
//! heads produce the hazy and clear logits `θ_h^T x` and `θ_c^T x`.
//!
//! No parameter touches two channels, so `x[c]` depends on input row `c` only.
//! Heat vectors are `softmax(|θ ⊙ x|)` per head.

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::optim::ParamSlot;
use crate::rng::Rng;
use crate::wpnce::WeightPair;

pub const DEFAULT_BLOCKS: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Source domain of a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Hazy,
    Clear,
}

impl Domain {
    /// `(y_h, y_c)`.
    pub fn labels(self) -> (u8, u8) {
        match self {
            Domain::Hazy => (1, 0),
            Domain::Clear => (0, 1),
        }
    }
}

/// A `channels × positions` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFeature {
    values: Matrix,
}

impl ChannelFeature {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::NonFinite("ChannelFeature"));
        }
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Shape(
                "ChannelFeature needs at least one channel and position".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn channels(&self) -> usize {
        self.values.rows()
    }

    pub fn positions(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Position-major view: one row per position, one column per channel.
    pub fn patches(&self) -> Matrix {
        self.values.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseBlock {
    /// `C × S` circular kernels, one row per channel.
    pub kernel: ParamSlot,
    /// `1 × C`.
    pub bias: ParamSlot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwfcNet {
    blocks: Vec<DepthwiseBlock>,
    /// `θ_h`, `1 × C`.
    pub head_h: ParamSlot,
    /// `θ_c`, `1 × C`.
    pub head_c: ParamSlot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwfcOutput {
    /// Pooled per-channel feature vector.
    pub x: Vec<f64>,
    pub logit_h: f64,
    pub logit_c: f64,
}

impl DwfcOutput {
    pub fn predicted(&self) -> Domain {
        if self.logit_h > self.logit_c {
            Domain::Hazy
        } else {
            Domain::Clear
        }
    }
}

#[derive(Debug, Clone)]
pub struct DwfcTape {
    /// Input to each block.
    inputs: Vec<Matrix>,
    /// Pre-activation of each block.
    pre: Vec<Matrix>,
    x: Vec<f64>,
}

impl DwfcTape {
    /// Smallest `|pre-activation|` over all blocks.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre
            .iter()
            .flat_map(|m| m.as_slice().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Upstream gradient into the classifier: w.r.t. the two logits and,
/// optionally, the pooled vector `x` directly.
#[derive(Debug, Clone, Default)]
pub struct DwfcUpstream {
    pub logit_h: f64,
    pub logit_c: f64,
    pub x: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DwfcGrads {
    pub kernels: Vec<Matrix>,
    pub biases: Vec<Matrix>,
    pub head_h: Matrix,
    pub head_c: Matrix,
    pub input: Matrix,
}

impl DwfcNet {
    /// Kernels start as the identity tap plus small noise, biases at zero,
    /// heads `N(0, 1/C)`.
    pub fn init(channels: usize, positions: usize, rng: &mut Rng) -> Result<Self> {
        if channels == 0 || positions == 0 {
            return Err(Error::Parameter("DWFC needs channels > 0 and positions > 0".into()));
        }
        let noise = 0.1 / (positions as f64).sqrt();
        let blocks = (0..DEFAULT_BLOCKS)
            .map(|_| {
                let mut k = rng.normal_matrix(channels, positions).scale(noise);
                for c in 0..channels {
                    k.set(c, 0, k.get(c, 0) + 1.0);
                }
                DepthwiseBlock {
                    kernel: ParamSlot::euclidean(k),
                    bias: ParamSlot::euclidean(Matrix::zeros(1, channels)),
                }
            })
            .collect();
        let head_scale = 1.0 / (channels as f64).sqrt();
        let head_h = ParamSlot::euclidean(rng.normal_matrix(1, channels).scale(head_scale));
        let head_c = ParamSlot::euclidean(rng.normal_matrix(1, channels).scale(head_scale));
        Ok(Self { blocks, head_h, head_c })
    }

    pub fn from_parts(blocks: Vec<DepthwiseBlock>, head_h: ParamSlot, head_c: ParamSlot) -> Result<Self> {
        let c = head_h.value().cols();
        if head_h.value().shape() != (1, c) || head_c.value().shape() != (1, c) {
            return Err(Error::Shape("heads must both be 1 x C".into()));
        }
        let s = blocks.first().map_or(0, |b| b.kernel.value().cols());
        for b in &blocks {
            if b.kernel.value().shape() != (c, s) || b.bias.value().shape() != (1, c) {
                return Err(Error::Shape(format!(
                    "block shapes must be {c}x{s} kernel and 1x{c} bias"
                )));
            }
        }
        Ok(Self { blocks, head_h, head_c })
    }

    pub fn channels(&self) -> usize {
        self.head_h.value().cols()
    }

    pub fn blocks(&self) -> &[DepthwiseBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DepthwiseBlock] {
        &mut self.blocks
    }

    pub fn forward(&self, feat: &ChannelFeature) -> Result<(DwfcOutput, DwfcTape)> {
        let c = self.channels();
        if feat.channels() != c {
            return Err(Error::Dimension {
                op: "dwfc_forward",
                expected: (c, feat.positions()),
                got: feat.values().shape(),
            });
        }
        if let Some(b) = self.blocks.first() {
            if b.kernel.value().cols() != feat.positions() {
                return Err(Error::Dimension {
                    op: "dwfc_forward (positions)",
                    expected: (c, b.kernel.value().cols()),
                    got: feat.values().shape(),
                });
            }
        }
        let s = feat.positions();
        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut pre = Vec::with_capacity(self.blocks.len());
        let mut h = feat.values().clone();
        for block in &self.blocks {
            let k = block.kernel.value();
            let b = block.bias.value();
            let mut z = Matrix::zeros(c, s);
            for ch in 0..c {
                let xin = h.row(ch);
                let kr = k.row(ch);
                let bias = b.get(0, ch);
                let zr = z.row_mut(ch);
                for (pos, out) in zr.iter_mut().enumerate() {
                    let mut acc = bias;
                    for (t, &kt) in kr.iter().enumerate() {
                        acc += kt * xin[(pos + t) % s];
                    }
                    *out = acc;
                }
            }
            inputs.push(h);
            h = z.map(leaky);
            pre.push(z);
        }
        let x: Vec<f64> = (0..c).map(|ch| h.row(ch).iter().sum::<f64>() / s as f64).collect();
        let out = DwfcOutput {
            logit_h: dot(self.head_h.value().as_slice(), &x),
            logit_c: dot(self.head_c.value().as_slice(), &x),
            x: x.clone(),
        };
        Ok((out, DwfcTape { inputs, pre, x }))
    }

    pub fn backward(&self, tape: &DwfcTape, upstream: &DwfcUpstream) -> Result<DwfcGrads> {
        let c = self.channels();
        if tape.pre.len() != self.blocks.len() || tape.x.len() != c {
            return Err(Error::Tape("DWFC tape does not match the network".into()));
        }
        let s = tape.pre.last().map_or(0, |m| m.cols());
        for (b, z) in self.blocks.iter().zip(&tape.pre) {
            if z.shape() != b.kernel.value().shape() {
                return Err(Error::Tape("DWFC tape block shape mismatch".into()));
            }
        }
        if let Some(ux) = &upstream.x {
            if ux.len() != c {
                return Err(Error::Tape(format!(
                    "upstream x has {} entries, expected {c}",
                    ux.len()
                )));
            }
        }

        let th = self.head_h.value().as_slice();
        let tc = self.head_c.value().as_slice();
        let head_h = Matrix::row_vector(&tape.x.iter().map(|v| v * upstream.logit_h).collect::<Vec<_>>());
        let head_c = Matrix::row_vector(&tape.x.iter().map(|v| v * upstream.logit_c).collect::<Vec<_>>());
        let dx: Vec<f64> = (0..c)
            .map(|ch| {
                upstream.logit_h * th[ch] + upstream.logit_c * tc[ch] + upstream.x.as_ref().map_or(0.0, |u| u[ch])
            })
            .collect();

        // Pooling spreads dx[c] evenly over positions.
        let mut grad = Matrix::zeros(c, s);
        for ch in 0..c {
            grad.row_mut(ch).fill(dx[ch] / s as f64);
        }

        let n = self.blocks.len();
        let mut kernels = vec![Matrix::zeros(0, 0); n];
        let mut biases = vec![Matrix::zeros(0, 0); n];
        for i in (0..n).rev() {
            let dz = grad.zip_with(&tape.pre[i], "leaky backward", |g, z| g * leaky_grad(z))?;
            let xin = &tape.inputs[i];
            let k = self.blocks[i].kernel.value();
            let mut dk = Matrix::zeros(c, s);
            let mut db = Matrix::zeros(1, c);
            let mut dxin = Matrix::zeros(c, s);
            for ch in 0..c {
                let dzr = dz.row(ch);
                let xr = xin.row(ch);
                let kr = k.row(ch);
                db.set(0, ch, dzr.iter().sum());
                for (pos, &g) in dzr.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for t in 0..s {
                        let idx = (pos + t) % s;
                        dk.row_mut(ch)[t] += g * xr[idx];
                        dxin.row_mut(ch)[idx] += g * kr[t];
                    }
                }
            }
            kernels[i] = dk;
            biases[i] = db;
            grad = dxin;
        }
        Ok(DwfcGrads {
            kernels,
            biases,
            head_h,
            head_c,
            input: grad,
        })
    }

    /// `w_h = softmax(|θ_h ⊙ x|)`, `w_c = softmax(|θ_c ⊙ x|)`.
    pub fn heat_vectors(&self, x: &[f64]) -> Result<WeightPair> {
        if x.len() != self.channels() {
            return Err(Error::Dimension {
                op: "heat_vectors",
                expected: (1, self.channels()),
                got: (1, x.len()),
            });
        }
        Ok(WeightPair {
            w_h: abs_softmax(self.head_h.value().as_slice(), x),
            w_c: abs_softmax(self.head_c.value().as_slice(), x),
        })
    }
}

pub fn dwfc_forward(net: &DwfcNet, feat: &ChannelFeature) -> Result<(DwfcOutput, DwfcTape)> {
    net.forward(feat)
}

pub fn dwfc_backward(net: &DwfcNet, tape: &DwfcTape, upstream: &DwfcUpstream) -> Result<DwfcGrads> {
    net.backward(tape, upstream)
}

pub fn heat_vectors(net: &DwfcNet, x: &[f64]) -> Result<WeightPair> {
    net.heat_vectors(x)
}

/// Numerically stable softmax.
pub fn softmax(a: &[f64]) -> Vec<f64> {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn abs_softmax(theta: &[f64], x: &[f64]) -> Vec<f64> {
    let a: Vec<f64> = theta.iter().zip(x).map(|(t, v)| (t * v).abs()).collect();
    softmax(&a)
}

/// Backward of `w = softmax(|θ ⊙ x|)`: returns `(dθ, dx)` given `dw`.
pub fn heat_vector_backward(theta: &[f64], x: &[f64], w: &[f64], dw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let wdw = dot(w, dw);
    let mut dtheta = vec![0.0; theta.len()];
    let mut dx = vec![0.0; x.len()];
    for i in 0..theta.len() {
        let prod = theta[i] * x[i];
        // d|u|/du = sign(u), 0 at u = 0
        let sign = if prod > 0.0 {
            1.0
        } else if prod < 0.0 {
            -1.0
        } else {
            0.0
        };
        let du = w[i] * (dw[i] - wdw) * sign;
        dtheta[i] = du * x[i];
        dx[i] = du * theta[i];
    }
    (dtheta, dx)
}

fn check_labels(y_h: u8, y_c: u8) -> Result<()> {
    if y_h > 1 || y_c > 1 || y_h + y_c != 1 {
        return Err(Error::Label { y_h, y_c });
    }
    Ok(())
}

/// `softplus(l) - y·l`, the binary cross-entropy of `σ(l)` against `y`.
fn bce_term(logit: f64, y: f64) -> f64 {
    logit.max(0.0) + (-logit.abs()).exp().ln_1p() - y * logit
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Sum of the two binary cross-entropies on `σ(logit_h)` and `σ(logit_c)`.
pub fn bce_loss(logit_h: f64, logit_c: f64, y_h: u8, y_c: u8) -> Result<f64> {
    check_labels(y_h, y_c)?;
    Ok(bce_term(logit_h, y_h as f64) + bce_term(logit_c, y_c as f64))
}

/// `(dL/dlogit_h, dL/dlogit_c)` of [`bce_loss`].
pub fn bce_grad(logit_h: f64, logit_c: f64, y_h: u8, y_c: u8) -> Result<(f64, f64)> {
    check_labels(y_h, y_c)?;
    Ok((sigmoid(logit_h) - y_h as f64, sigmoid(logit_c) - y_c as f64))
}
