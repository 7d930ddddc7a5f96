//! Encoder-decoder regression network and its multi-transmit fusions.
//!
//! Input layout is `(batch, transmits, time, elements)`. The encoder has four
//! stride-(1, 2) conv stages followed by three conv + 2x2 maxpool stages; the
//! decoder has three conv + x2 upsample stages, one conv + linear resize to the
//! output map, one plain conv, and a 1x1 head. Every 3x3 conv is followed by
//! batch normalization and ReLU.

use std::fmt;
use std::str::FromStr;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{NnError, Result};
use crate::layers::{BatchNorm2d, Conv2d, LinearResize, MaxPool2x2, Param, Relu, Upsample2x};
use crate::tensor::{Scalar, Tensor};

pub const ENCODER_STAGES: usize = 7;
pub const STRIDED_STAGES: usize = 4;
pub const DECODER_STAGES: usize = 5;
/// Smallest input height and width the stage plan accepts.
pub const MIN_INPUT_H: usize = 8;
pub const MIN_INPUT_W: usize = 16;

/// Where the three transmit branches are joined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One transmit, one branch.
    Single,
    /// Transmits stacked as input channels.
    Start,
    /// Shared encoder per transmit, features joined before the decoder.
    Middle,
    /// Shared encoder and decoder per transmit, joined before the 1x1 head.
    End,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Single, Variant::Start, Variant::Middle, Variant::End];

    pub fn n_transmits(self) -> usize {
        match self {
            Variant::Single => 1,
            _ => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Single => "single",
            Variant::Start => "start",
            Variant::Middle => "middle",
            Variant::End => "end",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Single => 0,
            Variant::Start => 1,
            Variant::Middle => 2,
            Variant::End => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| NnError::Config(format!("unknown variant '{s}' (single|start|middle|end)")))
    }
}

/// Everything needed to rebuild a network with identical parameter layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub init_seed: u64,
}

impl NetworkConfig {
    pub const DEFAULT_ENCODER: [usize; ENCODER_STAGES] = [32, 64, 128, 128, 256, 256, 512];
    pub const DEFAULT_DECODER: [usize; DECODER_STAGES] = [256, 128, 64, 32, 32];

    pub fn new(variant: Variant, input: (usize, usize), output: (usize, usize)) -> Self {
        Self {
            variant,
            in_h: input.0,
            in_w: input.1,
            out_h: output.0,
            out_w: output.1,
            encoder_channels: Self::DEFAULT_ENCODER.to_vec(),
            decoder_channels: Self::DEFAULT_DECODER.to_vec(),
            init_seed: 0,
        }
    }

    /// Caps every stage width at `max`.
    pub fn with_channel_cap(mut self, max: usize) -> Self {
        for c in self.encoder_channels.iter_mut().chain(self.decoder_channels.iter_mut()) {
            *c = (*c).min(max);
        }
        self
    }

    /// Divides every stage width by `div`, keeping at least one channel.
    pub fn with_channel_divisor(mut self, div: usize) -> Self {
        for c in self.encoder_channels.iter_mut().chain(self.decoder_channels.iter_mut()) {
            *c = (*c / div.max(1)).max(1);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != ENCODER_STAGES || self.decoder_channels.len() != DECODER_STAGES {
            return Err(NnError::Config(format!(
                "channel plan needs {ENCODER_STAGES} encoder and {DECODER_STAGES} decoder widths"
            )));
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            return Err(NnError::Config("channel widths must be >= 1".into()));
        }
        if self.in_h < MIN_INPUT_H || self.in_w < MIN_INPUT_W {
            return Err(NnError::Config(format!(
                "input {}x{} too small for the stage plan (need at least {MIN_INPUT_H}x{MIN_INPUT_W})",
                self.in_h, self.in_w
            )));
        }
        if self.out_h == 0 || self.out_w == 0 {
            return Err(NnError::Config("output dims must be >= 1".into()));
        }
        Ok(())
    }

    /// Declared per-stage output shape `(channels, height, width)` for one branch,
    /// encoder stages first, then decoder stages, then the head.
    pub fn stage_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let (mut h, mut w) = (self.in_h, self.in_w);
        for (s, &c) in self.encoder_channels.iter().enumerate() {
            if s < STRIDED_STAGES {
                w = w.div_ceil(2);
            } else {
                (h, w) = MaxPool2x2::output_dims(h, w);
            }
            out.push((c, h, w));
        }
        for (s, &c) in self.decoder_channels.iter().enumerate() {
            match s {
                0..=2 => (h, w) = (2 * h, 2 * w),
                3 => (h, w) = (self.out_h, self.out_w),
                _ => {}
            }
            out.push((c, h, w));
        }
        out.push((1, self.out_h, self.out_w));
        out
    }
}

#[derive(Debug, Clone)]
enum Resample {
    None,
    Pool(MaxPool2x2),
    Up(Upsample2x),
    Resize(LinearResize),
}

/// 3x3 conv, batch norm, ReLU, then an optional resampling step.
#[derive(Debug, Clone)]
struct Stage<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu,
    resample: Resample,
}

impl<T: Scalar> Stage<T> {
    fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let y = self.conv.forward(x)?;
        let y = self.bn.forward(&y, train)?;
        let y = self.relu.forward(&y);
        Ok(match &mut self.resample {
            Resample::None => y,
            Resample::Pool(p) => p.forward(&y),
            Resample::Up(u) => u.forward(&y),
            Resample::Resize(r) => r.forward(&y)?,
        })
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = match &mut self.resample {
            Resample::None => dy.clone(),
            Resample::Pool(p) => p.backward(dy)?,
            Resample::Up(u) => u.backward(dy)?,
            Resample::Resize(r) => r.backward(dy)?,
        };
        let d = self.relu.backward(&d)?;
        let d = self.bn.backward(&d)?;
        self.conv.backward(&d)
    }
}

/// Uniform draws in `[-1, 1)` from a seeded xoshiro256** stream.
struct Init(Xoshiro256StarStar);

impl Init {
    fn next(&mut self) -> f64 {
        let u = (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        2.0 * u - 1.0
    }
}

/// Conv with He-uniform weights: `U(-b, b)`, `b = sqrt(6 / fan_in)`.
fn he_conv<T: Scalar>(
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: (usize, usize),
    bias: bool,
    init: &mut Init,
) -> Result<Conv2d<T>> {
    let bound = (6.0 / (cin * k * k) as f64).sqrt();
    Conv2d::new(name, cin, cout, k, stride, bias, || T::from_f64_lossy(bound * init.next()))
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    encoder: Vec<Stage<T>>,
    decoder: Vec<Stage<T>>,
    head: Conv2d<T>,
    batch: usize,
    shapes: Vec<[usize; 4]>,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init(Xoshiro256StarStar::seed_from_u64(config.init_seed));
        let nt = config.variant.n_transmits();
        let mut cin = if config.variant == Variant::Start { nt } else { 1 };
        let mut encoder = Vec::with_capacity(ENCODER_STAGES);
        for (s, &c) in config.encoder_channels.iter().enumerate() {
            let name = format!("enc{s}");
            let (stride, resample) = if s < STRIDED_STAGES {
                ((1, 2), Resample::None)
            } else {
                ((1, 1), Resample::Pool(MaxPool2x2::default()))
            };
            encoder.push(Stage {
                conv: he_conv(&format!("{name}.conv"), cin, c, 3, stride, false, &mut init)?,
                bn: BatchNorm2d::new(&format!("{name}.bn"), c),
                relu: Relu::default(),
                resample,
            });
            cin = c;
        }
        if config.variant == Variant::Middle {
            cin *= nt;
        }
        let mut decoder = Vec::with_capacity(DECODER_STAGES);
        for (s, &c) in config.decoder_channels.iter().enumerate() {
            let name = format!("dec{s}");
            let resample = match s {
                0..=2 => Resample::Up(Upsample2x),
                3 => Resample::Resize(LinearResize::new(config.out_h, config.out_w)?),
                _ => Resample::None,
            };
            decoder.push(Stage {
                conv: he_conv(&format!("{name}.conv"), cin, c, 3, (1, 1), false, &mut init)?,
                bn: BatchNorm2d::new(&format!("{name}.bn"), c),
                relu: Relu::default(),
                resample,
            });
            cin = c;
        }
        if config.variant == Variant::End {
            cin *= nt;
        }
        let head = he_conv("head", cin, 1, 1, (1, 1), true, &mut init)?;
        Ok(Self {
            config,
            encoder,
            decoder,
            head,
            batch: 0,
            shapes: Vec::new(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Expected input shape for a batch of `n`.
    pub fn input_shape(&self, n: usize) -> [usize; 4] {
        [n, self.config.variant.n_transmits(), self.config.in_h, self.config.in_w]
    }

    pub fn output_shape(&self, n: usize) -> [usize; 4] {
        [n, 1, self.config.out_h, self.config.out_w]
    }

    /// Input channel count of the first encoder conv.
    pub fn first_layer_in_channels(&self) -> usize {
        self.encoder[0].conv.in_channels
    }

    fn checked(layer: usize, name: &str, t: Tensor<T>) -> Result<Tensor<T>> {
        if t.all_finite() {
            Ok(t)
        } else {
            Err(NnError::NotFinite {
                layer,
                name: name.to_string(),
            })
        }
    }

    /// Runs the network; `train` selects batch statistics in batch norm.
    /// Errors with the offending layer index if any stage produces NaN or Inf.
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let [n, nt, h, w] = x.shape();
        if [n, nt, h, w] != self.input_shape(n) || n == 0 {
            return Err(NnError::Shape(format!(
                "input {:?} does not match network input {:?}",
                x.shape(),
                self.input_shape(n.max(1))
            )));
        }
        self.batch = n;
        self.shapes.clear();
        let split = matches!(self.config.variant, Variant::Middle | Variant::End);
        let mut t = if split {
            x.clone().reshape([n * nt, 1, h, w])?
        } else {
            x.clone()
        };
        let mut layer = 0;
        for (s, stage) in self.encoder.iter_mut().enumerate() {
            t = Self::checked(layer, &format!("enc{s}"), stage.forward(&t, train)?)?;
            self.shapes.push(t.shape());
            layer += 1;
        }
        if self.config.variant == Variant::Middle {
            let [_, c, hh, ww] = t.shape();
            t = t.reshape([n, nt * c, hh, ww])?;
        }
        for (s, stage) in self.decoder.iter_mut().enumerate() {
            t = Self::checked(layer, &format!("dec{s}"), stage.forward(&t, train)?)?;
            self.shapes.push(t.shape());
            layer += 1;
        }
        if self.config.variant == Variant::End {
            let [_, c, hh, ww] = t.shape();
            t = t.reshape([n, nt * c, hh, ww])?;
        }
        let y = Self::checked(layer, "head", self.head.forward(&t)?)?;
        self.shapes.push(y.shape());
        Ok(y)
    }

    /// Output shape of every stage in the last forward pass (per branch for
    /// shared-weight variants), matching [`NetworkConfig::stage_shapes`].
    pub fn stage_output_shapes(&self) -> &[[usize; 4]] {
        &self.shapes
    }

    /// Back-propagates `dy` (gradient of the loss w.r.t. the last forward output),
    /// accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.batch;
        if dy.shape() != self.output_shape(n) {
            return Err(NnError::Shape(format!(
                "output gradient {:?} does not match {:?}",
                dy.shape(),
                self.output_shape(n)
            )));
        }
        let nt = self.config.variant.n_transmits();
        let mut d = self.head.backward(dy)?;
        if self.config.variant == Variant::End {
            let [_, c, hh, ww] = d.shape();
            d = d.reshape([n * nt, c / nt, hh, ww])?;
        }
        for stage in self.decoder.iter_mut().rev() {
            d = stage.backward(&d)?;
        }
        if self.config.variant == Variant::Middle {
            let [_, c, hh, ww] = d.shape();
            d = d.reshape([n * nt, c / nt, hh, ww])?;
        }
        for stage in self.encoder.iter_mut().rev() {
            d = stage.backward(&d)?;
        }
        if matches!(self.config.variant, Variant::Middle | Variant::End) {
            d = d.reshape(self.input_shape(n))?;
        }
        Ok(d)
    }

    /// Learnable parameters in a fixed order: encoder, decoder, head.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for s in self.encoder.iter().chain(&self.decoder) {
            v.extend(s.conv.params());
            v.extend(s.bn.params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for s in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            v.extend(s.conv.params_mut());
            v.extend(s.bn.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    /// Batch-norm running statistics `(name, mean, var)` in parameter order.
    pub fn buffers(&self) -> Vec<(String, &[T], &[T])> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .map(|s| (s.bn.gamma.name.replace(".gamma", ""), &s.bn.running_mean[..], &s.bn.running_var[..]))
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(&mut Vec<T>, &mut Vec<T>)> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .map(|s| (&mut s.bn.running_mean, &mut s.bn.running_var))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Copy of the network in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut out = Network::<U>::new(self.config.clone()).expect("config already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.value.iter_mut().zip(&src.value) {
                *d = U::from_f64_lossy(s.to_f64_lossy());
            }
        }
        let bufs: Vec<(Vec<T>, Vec<T>)> = self
            .buffers()
            .into_iter()
            .map(|(_, m, v)| (m.to_vec(), v.to_vec()))
            .collect();
        for ((dm, dv), (sm, sv)) in out.buffers_mut().into_iter().zip(bufs) {
            for (d, s) in dm.iter_mut().zip(sm) {
                *d = U::from_f64_lossy(s.to_f64_lossy());
            }
            for (d, s) in dv.iter_mut().zip(sv) {
                *d = U::from_f64_lossy(s.to_f64_lossy());
            }
        }
        out
    }
}
