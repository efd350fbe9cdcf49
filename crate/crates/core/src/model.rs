//! The encoder-decoder segmentation network.
//!
//! Four Conv Layer + max-pool stages halve the raster down to a 20×8
//! bottleneck; four Up-sample + Conv Layer stages bring it back, fusing the
//! pre-pool encoder features through channel concatenation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::norm::RunningStats;
use crate::autodiff::{Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{ConvLayerBlock, ForwardCtx, SigmoidHead, UpSampleBlock, DROPOUT_RATE};
use crate::scalar::Float;
use crate::sonar::MaskImage;
use crate::tensor::Tensor;

/// Raster extent along tensor axis 1 (across-track columns).
pub const INPUT_HEIGHT: usize = 320;
/// Raster extent along tensor axis 2 (range rows).
pub const INPUT_WIDTH: usize = 128;
/// Probabilities strictly above this are fish.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Architecture hyper-parameters. The default is the published network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Channels of the first Conv Layer; doubled at every encoder stage.
    pub base_channels: usize,
    pub batch_norm: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: INPUT_HEIGHT,
            width: INPUT_WIDTH,
            base_channels: 16,
            batch_norm: true,
            dropout: DROPOUT_RATE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 16 != 0 || self.width % 16 != 0 {
            return Err(Error::Parameter(format!(
                "raster {}×{} must be a positive multiple of 16 on both axes",
                self.height, self.width
            )));
        }
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(Error::Parameter("base channel count must be even and ≥ 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Output of one forward pass: the tape plus handles into it.
pub struct ForwardPass<T> {
    pub tape: Tape<T>,
    pub input: Var,
    /// Per-pixel fish probability, `N×1×H×W` (or `1×H×W` for 3-D input).
    pub output: Var,
    /// Parameter handles in [`SegmentationModel::params_mut`] order.
    pub params: Vec<Var>,
    /// Output of every architecture-table row, in order.
    pub trace: Vec<(&'static str, Var)>,
}

impl<T: Float> ForwardPass<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.tape.value(self.output)
    }
}

pub const TABLE_ROWS: [&str; 18] = [
    "Conv Layer 1",
    "Max-pooling 1",
    "Conv Layer 2",
    "Max-pooling 2",
    "Conv Layer 3",
    "Max-pooling 3",
    "Conv Layer 4",
    "Max-pooling 4",
    "Bottleneck",
    "Up-sample 1",
    "Conv Layer 5",
    "Up-sample 2",
    "Conv Layer 6",
    "Up-sample 3",
    "Conv Layer 7",
    "Up-sample 4",
    "Conv Layer 8",
    "Sigmoid Layer",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationModel<T> {
    config: ModelConfig,
    pub encoder: Vec<ConvLayerBlock<T>>,
    pub bottleneck: ConvLayerBlock<T>,
    pub up: Vec<UpSampleBlock<T>>,
    pub decoder: Vec<ConvLayerBlock<T>>,
    pub head: SigmoidHead<T>,
}

impl<T: Float> SegmentationModel<T> {
    /// He-normal initialized network.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let bn = config.batch_norm;
        let b = config.base_channels;
        let widths = [b, 2 * b, 4 * b, 8 * b];
        let mut encoder = Vec::with_capacity(4);
        let mut c_in = 1;
        for &c in &widths {
            encoder.push(ConvLayerBlock::new(c_in, c, bn, rng));
            c_in = c;
        }
        let bottleneck = ConvLayerBlock::new(8 * b, 16 * b, bn, rng);
        let mut up = Vec::with_capacity(4);
        let mut decoder = Vec::with_capacity(4);
        let mut c = 16 * b;
        for &skip in widths.iter().rev() {
            up.push(UpSampleBlock::new(c, rng));
            // c/2 from the transpose conv plus `skip` from the encoder.
            decoder.push(ConvLayerBlock::new(c / 2 + skip, skip, bn, rng));
            c = skip;
        }
        let head = SigmoidHead::new(b, rng);
        Ok(Self {
            config,
            encoder,
            bottleneck,
            up,
            decoder,
            head,
        })
    }

    pub fn with_seed(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.dims4()?;
        if (c, h, w) != (1, self.config.height, self.config.width) {
            return Err(Error::dim(format!(
                "model input must be 1×{}×{}, got {:?}",
                self.config.height,
                self.config.width,
                x.shape()
            )));
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(&self, x: &Tensor<T>, mode: Mode, record: bool, rng: &mut R) -> Result<(ForwardPass<T>, Vec<RunningStats<T>>)> {
        self.check_input(x)?;
        let mut tape = if record { Tape::new() } else { Tape::inference() };
        let mut ctx = ForwardCtx {
            mode,
            rng,
            bound: Vec::new(),
            stat_updates: Vec::new(),
            dropout_rate: self.config.dropout,
        };
        let input = tape.leaf(x);
        let mut trace = Vec::with_capacity(TABLE_ROWS.len());
        let mut rows = TABLE_ROWS.iter();
        let mut h = input;
        let mut skips = Vec::with_capacity(4);
        for block in &self.encoder {
            h = block.forward(&mut tape, h, &mut ctx)?;
            trace.push((*rows.next().unwrap(), h));
            skips.push(h);
            h = tape.max_pool2x2(h)?;
            trace.push((*rows.next().unwrap(), h));
        }
        h = self.bottleneck.forward(&mut tape, h, &mut ctx)?;
        trace.push((*rows.next().unwrap(), h));
        for (up, dec) in self.up.iter().zip(&self.decoder) {
            let skip = skips.pop().expect("one skip per stage");
            h = up.forward(&mut tape, h, skip, &mut ctx)?;
            trace.push((*rows.next().unwrap(), h));
            h = dec.forward(&mut tape, h, &mut ctx)?;
            trace.push((*rows.next().unwrap(), h));
        }
        let output = self.head.forward(&mut tape, h, &mut ctx)?;
        trace.push((*rows.next().unwrap(), output));
        let pass = ForwardPass {
            tape,
            input,
            output,
            params: ctx.bound,
            trace,
        };
        Ok((pass, ctx.stat_updates))
    }

    /// Forward pass recording a differentiable tape. In train mode the
    /// batch-norm running statistics are updated.
    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<ForwardPass<T>> {
        let (pass, updates) = self.run(x, mode, true, rng)?;
        if mode == Mode::Train {
            for (stats, new) in self.running_stats_mut().into_iter().zip(updates) {
                *stats = new;
            }
        }
        Ok(pass)
    }

    /// Eval-mode forward without gradient bookkeeping. Never mutates the model.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<ForwardPass<T>> {
        // Eval mode draws no random numbers.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.run(x, Mode::Eval, false, &mut rng)?.0)
    }

    /// Per-pixel fish probabilities in eval mode.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut pass = self.forward_eval(x)?;
        let out = pass.output;
        Ok(pass.tape.take_value(out))
    }

    /// Binary masks (`p > threshold`), one per batch item.
    pub fn predict_masks(&self, x: &Tensor<T>, threshold: f64) -> Result<Vec<MaskImage>> {
        let probs = self.predict(x)?;
        probability_to_masks(&probs, threshold)
    }

    /// Binary mask for a single `1×H×W` input.
    pub fn predict_mask(&self, x: &Tensor<T>) -> Result<MaskImage> {
        let mut masks = self.predict_masks(x, DEFAULT_THRESHOLD)?;
        if masks.len() != 1 {
            return Err(Error::dim("predict_mask takes a single image"));
        }
        Ok(masks.pop().unwrap())
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.params_mut(&format!("conv{}", i + 1), &mut out);
        }
        self.bottleneck.params_mut("bottleneck", &mut out);
        for (i, (u, d)) in self.up.iter_mut().zip(self.decoder.iter_mut()).enumerate() {
            u.params_mut(&format!("up{}", i + 1), &mut out);
            d.params_mut(&format!("conv{}", i + 5), &mut out);
        }
        self.head.params_mut("head", &mut out);
        out
    }

    fn running_stats_mut(&mut self) -> Vec<&mut RunningStats<T>> {
        let mut out = Vec::new();
        for b in &mut self.encoder {
            b.stats_mut(&mut out);
        }
        self.bottleneck.stats_mut(&mut out);
        for d in &mut self.decoder {
            d.stats_mut(&mut out);
        }
        out
    }

    /// Every named tensor (parameters and running statistics) in
    /// serialization order.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter().enumerate() {
            b.state(&format!("conv{}", i + 1), &mut out);
        }
        self.bottleneck.state("bottleneck", &mut out);
        for (i, (u, d)) in self.up.iter().zip(&self.decoder).enumerate() {
            u.state(&format!("up{}", i + 1), &mut out);
            d.state(&format!("conv{}", i + 5), &mut out);
        }
        self.head.state("head", &mut out);
        out
    }

    /// Replace all tensors from `(name, tensor)` pairs matching [`state`](Self::state).
    pub fn load_state<U: Float>(&mut self, entries: &[(String, Tensor<U>)]) -> Result<()> {
        let expected = self.state();
        if expected.len() != entries.len() {
            return Err(Error::Data(format!(
                "weight set has {} tensors, architecture needs {}",
                entries.len(),
                expected.len()
            )));
        }
        let map: std::collections::HashMap<&str, &Tensor<U>> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, want) in &expected {
            let got = map
                .get(name.as_str())
                .ok_or_else(|| Error::Data(format!("weight set lacks `{name}`")))?;
            if got.shape() != want.shape() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: want.shape().to_vec(),
                    found: got.shape().to_vec(),
                });
            }
        }
        let cast = |name: &str| -> Vec<T> { map[name].data().iter().map(|v| T::from_f64(v.as_f64())).collect() };
        for (name, t) in self.params_mut() {
            t.data_mut().copy_from_slice(&cast(&name));
        }
        let stat_names: Vec<String> = expected
            .iter()
            .filter(|(n, _)| n.ends_with(".running_mean"))
            .map(|(n, _)| n.trim_end_matches(".running_mean").to_string())
            .collect();
        let stats: Vec<(Vec<T>, Vec<T>)> = stat_names
            .iter()
            .map(|p| (cast(&format!("{p}.running_mean")), cast(&format!("{p}.running_var"))))
            .collect();
        for (s, (mean, var)) in self.running_stats_mut().into_iter().zip(stats) {
            s.mean = mean;
            s.var = var;
        }
        Ok(())
    }

    /// Same network at another element width.
    pub fn convert<U: Float>(&self) -> SegmentationModel<U> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = SegmentationModel::<U>::new(self.config, &mut rng).expect("valid config");
        out.load_state(&self.state()).expect("identical architecture");
        out
    }

    /// Scalar count of trainable parameters (convs, transpose convs, BN affine).
    pub fn count_parameters(&mut self) -> usize {
        self.params_mut().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.grad = None;
        }
    }

    /// Add the tape gradients of a finished backward pass into the
    /// parameters' `grad` fields.
    pub fn accumulate_grads(&mut self, pass: &ForwardPass<T>) -> Result<()> {
        let params = self.params_mut();
        if params.len() != pass.params.len() {
            return Err(Error::dim("forward pass does not belong to this model"));
        }
        for ((name, p), &v) in params.into_iter().zip(&pass.params) {
            let g = pass
                .tape
                .grad(v)
                .ok_or_else(|| Error::MissingGrad(name.clone()))?;
            if g.len() != p.numel() {
                return Err(Error::dim(format!("gradient length mismatch for `{name}`")));
            }
            p.accumulate_grad(g);
        }
        Ok(())
    }
}

/// Threshold a probability tensor (`N×1×H×W` or `1×H×W`) into masks.
pub fn probability_to_masks<T: Float>(probs: &Tensor<T>, threshold: f64) -> Result<Vec<MaskImage>> {
    let [n, c, h, w] = probs.dims4()?;
    if c != 1 {
        return Err(Error::dim("probability map must have one channel"));
    }
    let t = T::from_f64(threshold);
    Ok((0..n)
        .map(|i| {
            let px = probs.data()[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|&p| u8::from(p > t))
                .collect();
            MaskImage::from_raw(h, w, px).expect("binary by construction")
        })
        .collect())
}
