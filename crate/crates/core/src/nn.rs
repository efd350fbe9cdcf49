//! Building blocks of the encoder-decoder: Conv Layer, Up-sample with skip
//! fusion, and the sigmoid output head.

use rand::Rng;

use crate::autodiff::norm::RunningStats;
use crate::autodiff::{Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Negative-side slope of every activation.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DROPOUT_RATE: f64 = 0.1;

/// Fill `weight` with He-normal samples, `N(0, sqrt(2 / fan_in))`.
pub fn he_normal_init<T: Float, R: Rng + ?Sized>(weight: &mut Tensor<T>, fan_in: usize, rng: &mut R) -> Result<()> {
    if fan_in == 0 {
        return Err(Error::Parameter("He init needs a positive fan-in".into()));
    }
    let std = he_std(fan_in);
    let fresh = Tensor::<T>::randn(weight.shape().to_vec(), std, rng);
    weight.data_mut().copy_from_slice(fresh.data());
    Ok(())
}

pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// State threaded through a forward pass.
pub struct ForwardCtx<'a, T, R: ?Sized> {
    pub mode: Mode,
    pub rng: &'a mut R,
    /// Tape handles of every parameter, in enumeration order.
    pub bound: Vec<Var>,
    /// Updated running statistics, in batch-norm enumeration order
    /// (train mode only).
    pub stat_updates: Vec<RunningStats<T>>,
    pub dropout_rate: f64,
}

fn bind<T: Float, R: ?Sized>(tape: &mut Tape<T>, ctx: &mut ForwardCtx<'_, T, R>, t: &Tensor<T>) -> Var {
    let v = tape.leaf(t);
    ctx.bound.push(v);
    v
}

fn trainable<T: Float>(t: Tensor<T>) -> Tensor<T> {
    t.with_requires_grad()
}

/// Square-kernel convolution with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub pad: usize,
}

impl<T: Float> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, kernel: usize, rng: &mut R) -> Self {
        let mut weight = Tensor::zeros([c_out, c_in, kernel, kernel]);
        he_normal_init(&mut weight, c_in * kernel * kernel, rng).expect("positive fan-in");
        Self {
            weight: trainable(weight),
            bias: trainable(Tensor::zeros([c_out])),
            pad: (kernel - 1) / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward<R: ?Sized>(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_, T, R>) -> Result<Var> {
        let w = bind(tape, ctx, &self.weight);
        let b = bind(tape, ctx, &self.bias);
        tape.conv2d(x, w, Some(b), self.pad, 1)
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    fn state(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Per-channel batch normalization with affine terms and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: RunningStats<T>,
}

impl<T: Float> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: trainable(Tensor::ones([channels])),
            beta: trainable(Tensor::zeros([channels])),
            stats: RunningStats::new(channels),
        }
    }

    pub fn forward<R: ?Sized>(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_, T, R>) -> Result<Var> {
        let g = bind(tape, ctx, &self.gamma);
        let b = bind(tape, ctx, &self.beta);
        let mut stats = self.stats.clone();
        let y = tape.batch_norm2d(x, g, b, &mut stats, ctx.mode, BN_EPS, BN_MOMENTUM)?;
        if ctx.mode == Mode::Train {
            ctx.stat_updates.push(stats);
        }
        Ok(y)
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }

    fn state(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        let c = self.gamma.numel();
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
        out.push((
            format!("{prefix}.running_mean"),
            Tensor::from_vec([c], self.stats.mean.clone()).expect("channel count"),
        ));
        out.push((
            format!("{prefix}.running_var"),
            Tensor::from_vec([c], self.stats.var.clone()).expect("channel count"),
        ));
    }

    fn stats_mut<'a>(&'a mut self, out: &mut Vec<&'a mut RunningStats<T>>) {
        out.push(&mut self.stats);
    }
}

/// conv → BN → dropout → conv → BN → leaky ReLU(0.2), spatially preserving.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: Option<BatchNorm2d<T>>,
    pub conv2: Conv2d<T>,
    pub bn2: Option<BatchNorm2d<T>>,
}

impl<T: Float> ConvLayerBlock<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, batch_norm: bool, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::new(c_in, c_out, 3, rng),
            bn1: batch_norm.then(|| BatchNorm2d::new(c_out)),
            conv2: Conv2d::new(c_out, c_out, 3, rng),
            bn2: batch_norm.then(|| BatchNorm2d::new(c_out)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_, T, R>) -> Result<Var> {
        let c = tape.value(x).dims4()?[1];
        if c != self.in_channels() {
            return Err(Error::dim(format!(
                "Conv Layer expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let mut h = self.conv1.forward(tape, x, ctx)?;
        if let Some(bn) = &self.bn1 {
            h = bn.forward(tape, h, ctx)?;
        }
        let rate = ctx.dropout_rate;
        h = tape.dropout(h, rate, ctx.mode, &mut *ctx.rng)?;
        h = self.conv2.forward(tape, h, ctx)?;
        if let Some(bn) = &self.bn2 {
            h = bn.forward(tape, h, ctx)?;
        }
        Ok(tape.leaky_relu(h, LEAKY_SLOPE))
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.conv1.params_mut(&format!("{prefix}.conv1"), out);
        if let Some(bn) = &mut self.bn1 {
            bn.params_mut(&format!("{prefix}.bn1"), out);
        }
        self.conv2.params_mut(&format!("{prefix}.conv2"), out);
        if let Some(bn) = &mut self.bn2 {
            bn.params_mut(&format!("{prefix}.bn2"), out);
        }
    }

    pub(crate) fn state(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.conv1.state(&format!("{prefix}.conv1"), out);
        if let Some(bn) = &self.bn1 {
            bn.state(&format!("{prefix}.bn1"), out);
        }
        self.conv2.state(&format!("{prefix}.conv2"), out);
        if let Some(bn) = &self.bn2 {
            bn.state(&format!("{prefix}.bn2"), out);
        }
    }

    pub(crate) fn stats_mut<'a>(&'a mut self, out: &mut Vec<&'a mut RunningStats<T>>) {
        if let Some(bn) = &mut self.bn1 {
            bn.stats_mut(out);
        }
        if let Some(bn) = &mut self.bn2 {
            bn.stats_mut(out);
        }
    }
}

/// 2×2/stride-2 transpose convolution halving the channels, followed by
/// channel concatenation with the encoder skip tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct UpSampleBlock<T> {
    /// `C_in × C_in/2 × 2 × 2`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Float> UpSampleBlock<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, rng: &mut R) -> Self {
        let c_out = c_in / 2;
        let mut weight = Tensor::zeros([c_in, c_out, 2, 2]);
        he_normal_init(&mut weight, c_in * 4, rng).expect("positive fan-in");
        Self {
            weight: trainable(weight),
            bias: trainable(Tensor::zeros([c_out])),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn tconv_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward<R: ?Sized>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        skip: Var,
        ctx: &mut ForwardCtx<'_, T, R>,
    ) -> Result<Var> {
        let [_, _, h, w] = tape.value(x).dims4()?;
        let [_, _, sh, sw] = tape.value(skip).dims4()?;
        if (sh, sw) != (2 * h, 2 * w) {
            return Err(Error::dim(format!(
                "Up-sample skip is {sh}×{sw}, expected {}×{}",
                2 * h,
                2 * w
            )));
        }
        let wv = bind(tape, ctx, &self.weight);
        let bv = bind(tape, ctx, &self.bias);
        let up = tape.conv_transpose2x2(x, wv, Some(bv))?;
        tape.concat_channels(up, skip)
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    pub(crate) fn state(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// 1×1 convolution down to one channel, then sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidHead<T> {
    pub conv: Conv2d<T>,
}

impl<T: Float> SigmoidHead<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(c_in, 1, 1, rng),
        }
    }

    pub fn forward<R: ?Sized>(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_, T, R>) -> Result<Var> {
        let logits = self.conv.forward(tape, x, ctx)?;
        Ok(tape.sigmoid(logits))
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.conv.params_mut(prefix, out);
    }

    pub(crate) fn state(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.conv.state(prefix, out);
    }
}
