//! Training loop, inference and evaluation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ussi_nn::{l2_loss, Checkpoint, Network, NetworkConfig, Optimizer, OptimizerKind, Tensor, Variant};

use crate::dataio::{DatasetMeta, DatasetReader, SampleRecord};
use crate::error::{Error, Result};
use crate::medium::SpeedMap;
use crate::metrics::{MetricsReport, WindowShape};
use crate::preprocess::{apply_scale, fit_input_scale, inject_noise, label_to_units, to_unscaled_input, units_to_label, PreprocConfig};
use crate::rng::PortableRng;
use crate::solver::TransmitLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerChoice,
    /// Only used by `sgd`.
    pub momentum: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Test loss is computed every this many epochs and after the last one.
    pub eval_every: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerChoice::Adam,
            momentum: 0.9,
            seed: 0,
            shuffle: true,
            eval_every: 1,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn optimizer(&self) -> Optimizer {
        let kind = match self.optimizer {
            OptimizerChoice::Adam => OptimizerKind::adam(),
            OptimizerChoice::Sgd => OptimizerKind::Sgd { momentum: self.momentum },
        };
        Optimizer::new(kind, self.learning_rate)
    }
}

/// Network width settings; the input and output sizes come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSettings {
    /// Every stage width is divided by this.
    pub channel_divisor: usize,
    /// Upper bound on every stage width; 0 means none.
    pub channel_cap: usize,
    pub init_seed: u64,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self {
            channel_divisor: 1,
            channel_cap: 0,
            init_seed: 0,
        }
    }
}

impl NetworkSettings {
    pub fn network_config(&self, variant: Variant, input: (usize, usize), output: (usize, usize)) -> NetworkConfig {
        let mut c = NetworkConfig::new(variant, input, output).with_channel_divisor(self.channel_divisor.max(1));
        if self.channel_cap > 0 {
            c = c.with_channel_cap(self.channel_cap);
        }
        c.init_seed = self.init_seed;
        c
    }
}

/// Dataset transmit indices a variant consumes: the center event for `single`,
/// all events otherwise.
pub fn transmit_indices(meta: &DatasetMeta, variant: Variant) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..meta.events.len()).collect();
    match variant.n_transmits() {
        1 => meta
            .events
            .iter()
            .position(|e| e.label == TransmitLabel::Center)
            .or(if meta.events.len() == 1 { Some(0) } else { None })
            .map(|i| vec![i])
            .ok_or_else(|| Error::Config("dataset has no center transmit".into())),
        n if n == all.len() => Ok(all),
        n => Err(Error::Config(format!(
            "variant {variant} needs {n} transmits but the dataset has {}",
            all.len()
        ))),
    }
}

/// One preprocessed example: `n_transmits x height x width` input and label in network units.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sample_id: u64,
    pub input: Vec<f32>,
    pub label: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub n_transmits: usize,
    pub height: usize,
    pub width: usize,
    pub label_h: usize,
    pub label_w: usize,
    pub samples: Vec<PreparedSample>,
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Unscaled inputs of `records` restricted to `transmits`.
    pub fn from_records(records: &[SampleRecord], transmits: &[usize], cfg: &PreprocConfig, workers: usize) -> Result<Self> {
        let prepare = |r: &SampleRecord| -> Result<PreparedSample> {
            let ch = r.channel.select_transmits(transmits)?;
            let x = to_unscaled_input(&ch, cfg).map_err(|e| e.for_sample(r.sample_id))?;
            Ok(PreparedSample {
                sample_id: r.sample_id,
                input: x.data,
                label: label_to_units(&r.label, cfg),
            })
        };
        let samples = in_pool(workers, || records.par_iter().map(prepare).collect::<Result<Vec<_>>>())??;
        Self::assemble(records.first(), transmits.len(), cfg, samples)
    }

    /// Like [`from_records`](Self::from_records) but streams from disk.
    pub fn from_reader(reader: &DatasetReader, transmits: &[usize], cfg: &PreprocConfig, workers: usize) -> Result<Self> {
        let dims = reader.dims();
        let prepare = |i: usize| -> Result<PreparedSample> {
            let r = reader.get(i)?;
            let ch = r.channel.select_transmits(transmits)?;
            let x = to_unscaled_input(&ch, cfg).map_err(|e| e.for_sample(r.sample_id))?;
            Ok(PreparedSample {
                sample_id: r.sample_id,
                input: x.data,
                label: label_to_units(&r.label, cfg),
            })
        };
        for &t in transmits {
            if t >= dims.n_transmits {
                return Err(Error::Bounds(format!("transmit {t} of {}", dims.n_transmits)));
            }
        }
        let samples =
            in_pool(workers, || (0..reader.len()).into_par_iter().map(prepare).collect::<Result<Vec<_>>>())??;
        Ok(Self {
            n_transmits: transmits.len(),
            height: cfg.target_time_len,
            width: dims.n_elements,
            label_h: dims.label_h,
            label_w: dims.label_w,
            samples,
        })
    }

    fn assemble(first: Option<&SampleRecord>, n_transmits: usize, cfg: &PreprocConfig, samples: Vec<PreparedSample>) -> Result<Self> {
        let (width, label_h, label_w) = first
            .map(|r| (r.channel.n_elements, r.label.height, r.label.width))
            .unwrap_or((0, 0, 0));
        let set = Self {
            n_transmits,
            height: cfg.target_time_len,
            width,
            label_h,
            label_w,
            samples,
        };
        let (il, ll) = (set.input_len(), set.label_h * set.label_w);
        if set.samples.iter().any(|s| s.input.len() != il || s.label.len() != ll) {
            return Err(Error::Schema("records have inconsistent dimensions".into()));
        }
        Ok(set)
    }

    pub fn input_len(&self) -> usize {
        self.n_transmits * self.height * self.width
    }

    /// Pooled-RMS scale of the unscaled inputs.
    pub fn fit_scale(&self) -> f64 {
        fit_input_scale(self.samples.iter().map(|s| s.input.as_slice()))
    }

    /// Multiplies every input by `scale` and clips.
    pub fn scaled(mut self, scale: f64) -> Self {
        for s in &mut self.samples {
            let t = crate::preprocess::InputTensor {
                n_transmits: self.n_transmits,
                height: self.height,
                width: self.width,
                data: std::mem::take(&mut s.input),
            };
            s.input = apply_scale(t, scale).data;
        }
        self
    }

    /// Stacks `indices` into `(batch, transmits, h, w)` inputs and `(batch, 1, lh, lw)` labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let mut x = Vec::with_capacity(indices.len() * self.input_len());
        let mut y = Vec::with_capacity(indices.len() * self.label_h * self.label_w);
        for &i in indices {
            x.extend_from_slice(&self.samples[i].input);
            y.extend_from_slice(&self.samples[i].label);
        }
        let n = indices.len();
        (
            Tensor::from_vec([n, self.n_transmits, self.height, self.width], x).expect("consistent batch"),
            Tensor::from_vec([n, 1, self.label_h, self.label_w], y).expect("consistent batch"),
        )
    }
}

fn in_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Metadata stored in the checkpoint trailer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub preprocess: PreprocConfig,
    pub transmits: Vec<usize>,
    pub label_h: usize,
    pub label_w: usize,
    /// Mean training label speed, m/s; the constant baseline predicts this.
    pub label_mean: f64,
    pub epoch: usize,
    pub test_loss: Option<f64>,
    pub train: TrainConfig,
    /// Hex digest of the training dataset metadata.
    pub dataset_digest: String,
}

pub fn save_checkpoint(network: &Network<f32>, info: &CheckpointInfo, path: impl AsRef<Path>) -> Result<()> {
    let extra = serde_json::to_string(info).expect("checkpoint info is always serializable");
    Checkpoint::new(network.clone(), extra).save(path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network<f32>, CheckpointInfo)> {
    let ck = Checkpoint::load(path)?;
    let info = serde_json::from_str(&ck.extra).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    Ok((ck.network, info))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the per-batch training losses (noisy inputs, train-mode batch norm).
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest test loss (the last epoch if there is no test set).
    pub best: Network<f32>,
    pub best_epoch: usize,
    pub best_test_loss: Option<f64>,
    pub last: Network<f32>,
    pub history: Vec<EpochLog>,
}

fn noise_rng(seed: u64, epoch: usize, sample_id: u64) -> PortableRng {
    PortableRng::for_sample(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), sample_id)
}

/// Mini-batch training with per-sample noise injection.
///
/// Test loss uses clean inputs and eval-mode batch norm. If `on_best` is given it
/// is called with each new best network.
pub fn train(
    network: &mut Network<f32>,
    train_set: &PreparedSet,
    test_set: Option<&PreparedSet>,
    cfg: &TrainConfig,
    preproc: &PreprocConfig,
    mut on_best: Option<&mut dyn FnMut(&Network<f32>, usize, Option<f64>) -> Result<()>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let want = network.input_shape(1);
    if want[1..] != [train_set.n_transmits, train_set.height, train_set.width] {
        return Err(Error::Config(format!(
            "network expects inputs {:?} but the data is {}x{}x{}",
            &want[1..],
            train_set.n_transmits,
            train_set.height,
            train_set.width
        )));
    }
    let out = network.output_shape(1);
    if out[2..] != [train_set.label_h, train_set.label_w] {
        return Err(Error::Config(format!(
            "network outputs {}x{} but labels are {}x{}",
            out[2], out[3], train_set.label_h, train_set.label_w
        )));
    }
    let mut opt = cfg.optimizer();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = PortableRng::new(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Network<f32>, usize, Option<f64>)> = None;

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let (mut loss_sum, mut batches) = (0.0f64, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (mut x, y) = train_set.batch(idx);
            let item = train_set.input_len();
            for (k, &i) in idx.iter().enumerate() {
                let mut rng = noise_rng(cfg.seed, epoch, train_set.samples[i].sample_id);
                inject_noise(
                    &mut x.data_mut()[k * item..(k + 1) * item],
                    preproc.noise_sigma,
                    preproc.quant_levels,
                    &mut rng,
                );
            }
            network.zero_grad();
            let pred = network
                .forward(&x, true)
                .map_err(|e| Error::NotFinite(format!("epoch {epoch} batch {b}: {e}")))?;
            let (loss, grad) = l2_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::NotFinite(format!("loss is {loss} at epoch {epoch} batch {b}")));
            }
            network.backward(&grad)?;
            opt.step(&mut network.params_mut());
            loss_sum += loss as f64;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let test_loss = match test_set {
            Some(t) if !t.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) => {
                Some(dataset_loss(network, t, cfg.batch_size)?)
            }
            _ => None,
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6}{}",
            test_loss.map(|l| format!(", test loss {l:.6}")).unwrap_or_default()
        );
        history.push(EpochLog {
            epoch,
            train_loss,
            test_loss,
        });
        let improved = match (&best, test_loss) {
            (_, None) if test_set.is_none_or(|t| t.is_empty()) => epoch == cfg.epochs,
            (None, Some(_)) => true,
            (Some((_, _, Some(b))), Some(l)) => l < *b,
            _ => false,
        };
        if improved {
            if let Some(f) = on_best.as_deref_mut() {
                f(network, epoch, test_loss)?;
            }
            best = Some((network.clone(), epoch, test_loss));
        }
    }
    let (best, best_epoch, best_test_loss) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_test_loss,
        last: network.clone(),
        history,
    })
}

/// Mean squared error in network units over all samples, eval mode, clean inputs.
pub fn dataset_loss(network: &mut Network<f32>, set: &PreparedSet, batch_size: usize) -> Result<f64> {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (b, idx) in (0..set.len()).collect::<Vec<_>>().chunks(batch_size.max(1)).enumerate() {
        let (x, y) = set.batch(idx);
        let pred = network
            .forward(&x, false)
            .map_err(|e| Error::NotFinite(format!("batch {b}: {e}")))?;
        let (loss, _) = l2_loss(&pred, &y)?;
        sum += loss as f64 * y.len() as f64;
        n += y.len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Eval-mode predictions in m/s, in sample order. Samples are split into
/// `workers` contiguous runs, each with its own copy of the network.
pub fn predict(network: &Network<f32>, set: &PreparedSet, preproc: &PreprocConfig, workers: usize) -> Result<Vec<(u64, SpeedMap)>> {
    let workers = workers.max(1).min(set.len().max(1));
    let per = set.len().div_ceil(workers).max(1);
    let idx: Vec<usize> = (0..set.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(per).collect();
    let parts = in_pool(workers, || {
        chunks
            .par_iter()
            .map(|chunk| {
                let mut net = network.clone();
                let mut out = Vec::with_capacity(chunk.len());
                for &i in chunk.iter() {
                    let (x, _) = set.batch(&[i]);
                    let id = set.samples[i].sample_id;
                    let y = net
                        .forward(&x, false)
                        .map_err(|e| Error::NotFinite(e.to_string()).for_sample(id))?;
                    out.push((id, units_to_label(y.data(), set.label_h, set.label_w, preproc)?));
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(parts.into_iter().flatten().collect())
}

/// Labels of `set` in m/s.
pub fn truths(set: &PreparedSet, preproc: &PreprocConfig) -> Result<Vec<(u64, SpeedMap)>> {
    set.samples
        .iter()
        .map(|s| Ok((s.sample_id, units_to_label(&s.label, set.label_h, set.label_w, preproc)?)))
        .collect()
}

/// Mean label speed of `set` in m/s, over every pixel.
pub fn mean_speed(set: &PreparedSet, preproc: &PreprocConfig) -> f64 {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for s in &set.samples {
        sum += s.label.iter().map(|&u| preproc.label_offset + preproc.label_span * u as f64).sum::<f64>();
        n += s.label.len();
    }
    if n == 0 {
        preproc.label_offset
    } else {
        sum / n as f64
    }
}

/// Same value everywhere for every sample of `set`.
pub fn constant_predictions(set: &PreparedSet, speed: f64) -> Vec<(u64, SpeedMap)> {
    set.samples
        .iter()
        .map(|s| (s.sample_id, SpeedMap::constant(set.label_h, set.label_w, speed as f32)))
        .collect()
}

pub fn evaluate(
    name: &str,
    predictions: &[(u64, SpeedMap)],
    truths: &[(u64, SpeedMap)],
    radius: usize,
    shape: WindowShape,
) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} samples",
            predictions.len(),
            truths.len()
        )));
    }
    for ((a, _), (b, _)) in predictions.iter().zip(truths) {
        if a != b {
            return Err(Error::Argument(format!("prediction for sample {a} paired with truth {b}")));
        }
    }
    MetricsReport::compute(
        name,
        predictions.iter().zip(truths).map(|((id, p), (_, t))| (*id, p, t)),
        radius,
        shape,
    )
}

/// Fits the input scale on `train` (unscaled) and applies it to both sets.
pub fn fit_and_scale(train: PreparedSet, test: Option<PreparedSet>, preproc: &mut PreprocConfig) -> (PreparedSet, Option<PreparedSet>) {
    preproc.input_scale = train.fit_scale();
    let s = preproc.input_scale;
    (train.scaled(s), test.map(|t| t.scaled(s)))
}
