//! Channel data to network input: gain, crop, decimation, scaling, noise.
//! Also the label unit conversion.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::medium::SpeedMap;
use crate::rng::PortableRng;
use crate::solver::ChannelData;

/// Largest magnitude an input sample may take after scaling.
pub const INPUT_CLIP: f32 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocConfig {
    /// dB per microsecond of two-way travel time.
    pub gain_rate: f64,
    /// Seconds removed from the start of every trace.
    pub crop_time: f64,
    /// Time samples per trace after decimation.
    pub target_time_len: usize,
    /// Gaussian noise std as a fraction of the tensor RMS (training only).
    pub noise_sigma: f64,
    /// Uniform quantization levels after noise; 0 disables quantization.
    pub quant_levels: usize,
    /// Multiplier that brings the training-set RMS to 1; fitted by [`fit_input_scale`].
    pub input_scale: f64,
    /// m/s mapped to 0.
    pub label_offset: f64,
    /// m/s mapped to 1.
    pub label_span: f64,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            gain_rate: 0.48,
            crop_time: 3e-6,
            target_time_len: 1024,
            noise_sigma: 0.05,
            quant_levels: 1024,
            input_scale: 1.0,
            label_offset: 1550.0,
            label_span: 250.0,
        }
    }
}

impl PreprocConfig {
    /// `min_crop` is the transmit pulse duration in seconds.
    pub fn validate(&self, min_crop: f64) -> Result<()> {
        if !(self.gain_rate >= 0.0) {
            return Err(Error::Config("gain_rate must be >= 0".into()));
        }
        if !(self.crop_time >= min_crop) {
            return Err(Error::Config(format!(
                "crop_time {} s is shorter than the transmit pulse ({min_crop} s)",
                self.crop_time
            )));
        }
        if self.target_time_len < 8 {
            return Err(Error::Config("target_time_len must be >= 8".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if self.quant_levels == 1 {
            return Err(Error::Config("quant_levels must be >= 2, or 0 to disable".into()));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::Config("input_scale must be positive and finite".into()));
        }
        if !(self.label_span > 0.0) {
            return Err(Error::Config("label span must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config is always serializable");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Network input for one study: `n_transmits x height (time) x width (elements)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub n_transmits: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl InputTensor {
    pub fn rms(&self) -> f64 {
        rms(&self.data)
    }
}

fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// `out[k] = in[k] * 10^(rate * t_k / 20)` with `t_k = k / sample_rate` in microseconds.
/// A negative rate undoes a positive one.
pub fn gain_correct(trace: &[f32], gain_rate: f64, sample_rate: f64) -> Vec<f32> {
    trace
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let t_us = k as f64 / sample_rate * 1e6;
            (v as f64 * 10f64.powf(gain_rate * t_us / 20.0)) as f32
        })
        .collect()
}

/// Drops the first `round(crop_time * sample_rate)` samples of every trace.
pub fn crop_transmit(channel: &ChannelData, crop_time: f64) -> Result<ChannelData> {
    let n = (crop_time * channel.sample_rate).round();
    if !(n >= 0.0) || n as usize >= channel.n_time {
        return Err(Error::Argument(format!(
            "crop of {n} samples leaves nothing of {}-sample traces",
            channel.n_time
        )));
    }
    let n = n as usize;
    let keep = channel.n_time - n;
    let mut traces = Vec::with_capacity(channel.n_transmits * channel.n_elements * keep);
    for t in 0..channel.n_transmits {
        for e in 0..channel.n_elements {
            traces.extend_from_slice(&channel.trace(t, e)[n..]);
        }
    }
    Ok(ChannelData {
        n_time: keep,
        traces,
        ..channel.clone()
    })
}

/// Precomputed low-pass resampling taps from `n_in` to `n_out` samples.
///
/// Output sample `k` sits at input position `k * n_in / n_out`. Each output is a
/// Blackman-windowed sinc with cutoff at the output Nyquist rate (or the input
/// Nyquist rate when upsampling), spanning 8 output periods on each side, with
/// taps normalized to unit sum.
#[derive(Debug, Clone)]
pub struct Resampler {
    n_in: usize,
    taps: Vec<(usize, Vec<f64>)>,
}

impl Resampler {
    pub fn new(n_in: usize, n_out: usize) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::Argument("resampling needs nonempty input and output".into()));
        }
        let ratio = n_in as f64 / n_out as f64;
        let stretch = ratio.max(1.0);
        let cutoff = 0.5 / stretch;
        let half = (8.0 * stretch).ceil();
        let taps = (0..n_out)
            .map(|k| {
                let pos = k as f64 * ratio;
                let lo = (pos - half).ceil().max(0.0) as usize;
                let hi = ((pos + half).floor() as usize).min(n_in - 1);
                let mut w: Vec<f64> = (lo..=hi)
                    .map(|i| {
                        let t = i as f64 - pos;
                        let x = 2.0 * cutoff * t;
                        let sinc = if x.abs() < 1e-12 {
                            1.0
                        } else {
                            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
                        };
                        let u = (t / half + 1.0) * 0.5;
                        let win = 0.42 - 0.5 * (2.0 * std::f64::consts::PI * u).cos()
                            + 0.08 * (4.0 * std::f64::consts::PI * u).cos();
                        sinc * win.max(0.0)
                    })
                    .collect();
                let sum: f64 = w.iter().sum();
                if sum.abs() > 1e-12 {
                    w.iter_mut().for_each(|v| *v /= sum);
                }
                (lo, w)
            })
            .collect();
        Ok(Self { n_in, taps })
    }

    pub fn apply(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.n_in);
        for (o, (lo, w)) in out.iter_mut().zip(&self.taps) {
            let mut acc = 0.0f64;
            for (v, c) in x[*lo..*lo + w.len()].iter().zip(w) {
                acc += *v as f64 * c;
            }
            *o = acc as f32;
        }
    }

    pub fn resample(&self, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.taps.len()];
        self.apply(x, &mut out);
        out
    }
}

/// Gain, crop and decimation, without the dataset scale.
pub fn to_unscaled_input(channel: &ChannelData, cfg: &PreprocConfig) -> Result<InputTensor> {
    channel.validate()?;
    let n_crop = (cfg.crop_time * channel.sample_rate).round() as usize;
    if n_crop >= channel.n_time {
        return Err(Error::Argument(format!(
            "crop of {n_crop} samples leaves nothing of {}-sample traces",
            channel.n_time
        )));
    }
    let keep = channel.n_time - n_crop;
    let h = cfg.target_time_len;
    let w = channel.n_elements;
    let resampler = Resampler::new(keep, h)?;
    let mut data = vec![0.0f32; channel.n_transmits * h * w];
    let mut column = vec![0.0f32; h];
    for t in 0..channel.n_transmits {
        for e in 0..w {
            let gained = gain_correct(channel.trace(t, e), cfg.gain_rate, channel.sample_rate);
            resampler.apply(&gained[n_crop..], &mut column);
            for (k, &v) in column.iter().enumerate() {
                data[(t * h + k) * w + e] = v;
            }
        }
    }
    Ok(InputTensor {
        n_transmits: channel.n_transmits,
        height: h,
        width: w,
        data,
    })
}

/// Multiplies by the dataset scale and clips to `+-INPUT_CLIP`.
pub fn apply_scale(mut input: InputTensor, scale: f64) -> InputTensor {
    for v in &mut input.data {
        *v = ((*v as f64) * scale).clamp(-(INPUT_CLIP as f64), INPUT_CLIP as f64) as f32;
    }
    input
}

/// Full deterministic conversion: gain, crop, decimation, scale, clip.
pub fn to_input(channel: &ChannelData, cfg: &PreprocConfig) -> Result<InputTensor> {
    Ok(apply_scale(to_unscaled_input(channel, cfg)?, cfg.input_scale))
}

/// Scale that brings the pooled RMS of the unscaled `inputs` to 1; 1 if they are all zero.
pub fn fit_input_scale<'a>(inputs: impl IntoIterator<Item = &'a [f32]>) -> f64 {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for x in inputs {
        sum += x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        n += x.len();
    }
    let r = if n == 0 { 0.0 } else { (sum / n as f64).sqrt() };
    if r > 0.0 && r.is_finite() {
        1.0 / r
    } else {
        1.0
    }
}

/// Adds Gaussian noise with std `noise_sigma * RMS(x)`, then rounds to `quant_levels`
/// uniform levels spanning `[-m, m]`, `m = max |x|` of the noisy tensor.
///
/// Noise samples are drawn in storage order from `rng.normal()`.
pub fn inject_noise(x: &mut [f32], noise_sigma: f64, quant_levels: usize, rng: &mut PortableRng) {
    if noise_sigma > 0.0 {
        let std = noise_sigma * rms(x);
        for v in x.iter_mut() {
            *v = (*v as f64 + std * rng.normal()) as f32;
        }
    }
    if quant_levels >= 2 {
        let m = x.iter().fold(0.0f64, |a, &v| a.max((v as f64).abs()));
        if m > 0.0 {
            let step = 2.0 * m / (quant_levels - 1) as f64;
            for v in x.iter_mut() {
                let k = ((*v as f64 + m) / step).round().clamp(0.0, (quant_levels - 1) as f64);
                *v = (-m + k * step) as f32;
            }
        }
    }
}

/// `u = (v - offset) / span`.
pub fn label_to_units(map: &SpeedMap, cfg: &PreprocConfig) -> Vec<f32> {
    map.data
        .iter()
        .map(|&v| ((v as f64 - cfg.label_offset) / cfg.label_span) as f32)
        .collect()
}

/// `v = offset + span * u`.
pub fn units_to_label(units: &[f32], height: usize, width: usize, cfg: &PreprocConfig) -> Result<SpeedMap> {
    SpeedMap::new(
        height,
        width,
        units
            .iter()
            .map(|&u| (cfg.label_offset + cfg.label_span * u as f64) as f32)
            .collect(),
    )
}
