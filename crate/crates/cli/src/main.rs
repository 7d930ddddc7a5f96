//! `ussi`: dataset generation, training, evaluation, inference and rendering.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 I/O, 5 file format, 6 numeric.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ussi_core::config::{hex, RunConfig};
use ussi_core::dataio::{
    read_predictions, render_speed_map, write_predictions, DatasetReader, RENDER_VMAX, RENDER_VMIN,
};
use ussi_core::manifest::RunManifest;
use ussi_core::metrics::{per_sample_csv, reports_csv, reports_table, WindowShape};
use ussi_core::pipeline::gen_dataset;
use ussi_core::train::{
    constant_predictions, evaluate, fit_and_scale, load_checkpoint, mean_speed, predict, save_checkpoint, train,
    transmit_indices, truths, CheckpointInfo, PreparedSet,
};
use ussi_core::{Error, Result};
use ussi_nn::{Network, Variant};

#[derive(Parser)]
#[command(name = "ussi", version, about = "Sound-speed inversion from ultrasound channel data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for sample-level parallelism.
    #[arg(long, env = "USSI_WORKERS", default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset of random phantoms.
    GenDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Base seed of the phantom generator.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
        /// Number of samples; defaults to the split size in the config.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a network and save the checkpoint with the lowest test loss.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        test_dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = VariantArg::Middle)]
        variant: VariantArg,
        /// Must agree with the variant (1 for single, 3 otherwise).
        #[arg(long)]
        transmits: Option<usize>,
        /// Training seed (shuffling and noise).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Error metrics of a checkpoint on a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// CSV report path; a text table and per-sample CSV are written beside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ussi_core::metrics::DEFAULT_RADIUS)]
        radius: usize,
        #[arg(long, value_enum, default_value_t = WindowArg::Square)]
        window: WindowArg,
        /// Also report the constant mean-speed predictor.
        #[arg(long)]
        baseline: bool,
    },
    /// Predict speed maps and report throughput.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Record indices; all records if omitted.
        #[arg(long, value_delimiter = ',')]
        index: Vec<usize>,
        /// Output directory for `predictions.bin` and PGM images.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render labels or predictions as 8-bit PGM images (1300 m/s black, 1800 m/s white).
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        index: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Single,
    Start,
    Middle,
    End,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Single => Variant::Single,
            VariantArg::Start => Variant::Start,
            VariantArg::Middle => Variant::Middle,
            VariantArg::End => Variant::End,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Square,
    Disc,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn manifest(sub: &str, common: &Common, cfg: &RunConfig) -> RunManifest {
    let mut m = RunManifest::new(sub);
    m.config_paths = common.config.iter().cloned().collect();
    m.config_digest = cfg.digest();
    m.workers = common.workers;
    m
}

fn select(indices: &[usize], len: usize) -> Result<Vec<usize>> {
    if indices.is_empty() {
        return Ok((0..len).collect());
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= len) {
        return Err(Error::Bounds(format!("index {i} out of range for {len} records")));
    }
    Ok(indices.to_vec())
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.command {
        Command::GenDataset {
            common,
            out,
            seed,
            split,
            count,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = seed {
                cfg.dataset.base_seed = s;
            }
            match (split, count) {
                (Split::Train, Some(n)) => cfg.dataset.n_train = n,
                (Split::Test, Some(n)) => cfg.dataset.n_test = n,
                _ => {}
            }
            let meta = cfg.dataset_meta()?;
            let ids = match split {
                Split::Train => cfg.dataset.train_ids(),
                Split::Test => cfg.dataset.test_ids(),
            };
            let n = gen_dataset(&meta, &ids, &out, common.workers)?;
            let mut m = manifest("gen-dataset", &common, &cfg);
            m.seeds.push(("base_seed".into(), cfg.dataset.base_seed));
            m.outputs.push(out.clone());
            m.wall_clock_seconds = started.elapsed().as_secs_f64();
            m.write_for(&out)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Train {
            common,
            dataset,
            test_dataset,
            variant,
            transmits,
            seed,
            epochs,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.train.checkpoint_path = Some(out.clone());
            let variant = Variant::from(variant);
            if let Some(t) = transmits {
                if t != variant.n_transmits() {
                    return Err(Error::Argument(format!(
                        "variant {variant} uses {} transmits, not {t}",
                        variant.n_transmits()
                    )));
                }
            }
            let reader = DatasetReader::open(&dataset)?;
            let meta = reader.meta().clone();
            let tx = transmit_indices(&meta, variant)?;
            let pulse = meta.transmit.n_cycles as f64 / meta.probe.center_frequency;
            cfg.preprocess.validate(pulse)?;
            let mut preproc = cfg.preprocess.clone();
            let train_set = PreparedSet::from_reader(&reader, &tx, &preproc, common.workers)?;
            let test_set = match &test_dataset {
                Some(p) => {
                    let r = DatasetReader::open(p)?;
                    if r.dims() != reader.dims() {
                        return Err(Error::Schema("test and train datasets have different dimensions".into()));
                    }
                    Some(PreparedSet::from_reader(&r, &tx, &preproc, common.workers)?)
                }
                None => None,
            };
            let (train_set, test_set) = fit_and_scale(train_set, test_set, &mut preproc);
            let net_cfg = cfg.network.network_config(
                variant,
                (train_set.height, train_set.width),
                (train_set.label_h, train_set.label_w),
            );
            let mut net = Network::<f32>::new(net_cfg)?;
            let mut info = CheckpointInfo {
                preprocess: preproc.clone(),
                transmits: tx,
                label_h: train_set.label_h,
                label_w: train_set.label_w,
                label_mean: mean_speed(&train_set, &preproc),
                epoch: 0,
                test_loss: None,
                train: cfg.train.clone(),
                dataset_digest: hex(&meta.digest()),
            };
            let mut save = |n: &Network<f32>, epoch: usize, loss: Option<f64>| -> Result<()> {
                info.epoch = epoch;
                info.test_loss = loss;
                save_checkpoint(n, &info, &out)
            };
            let outcome = train(&mut net, &train_set, test_set.as_ref(), &cfg.train, &preproc, Some(&mut save))?;
            let mut curve = String::from("epoch,train_loss,test_loss\n");
            for e in &outcome.history {
                let t = e.test_loss.map(|l| format!("{l:.9}")).unwrap_or_default();
                curve.push_str(&format!("{},{:.9},{t}\n", e.epoch, e.train_loss));
            }
            let mut curve_path = out.clone().into_os_string();
            curve_path.push(".loss.csv");
            let curve_path = PathBuf::from(curve_path);
            write_file(&curve_path, curve)?;
            let mut m = manifest("train", &common, &cfg);
            m.seeds.push(("train_seed".into(), cfg.train.seed));
            m.seeds.push(("init_seed".into(), cfg.network.init_seed));
            m.inputs.push(dataset);
            m.inputs.extend(test_dataset);
            m.outputs.push(out.clone());
            m.outputs.push(curve_path);
            m.wall_clock_seconds = started.elapsed().as_secs_f64();
            m.write_for(&out)?;
            println!(
                "best epoch {} (test loss {}), checkpoint {}",
                outcome.best_epoch,
                outcome.best_test_loss.map(|l| format!("{l:.6}")).unwrap_or_else(|| "n/a".into()),
                out.display()
            );
        }
        Command::Evaluate {
            common,
            checkpoint,
            dataset,
            out,
            radius,
            window,
            baseline,
        } => {
            let cfg = load_config(&common)?;
            let (net, info) = load_checkpoint(&checkpoint)?;
            let reader = DatasetReader::open(&dataset)?;
            let set = prepared_for_checkpoint(&reader, &info, common.workers)?;
            let shape = match window {
                WindowArg::Square => WindowShape::Square,
                WindowArg::Disc => WindowShape::Disc,
            };
            let truth = truths(&set, &info.preprocess)?;
            let pred = predict(&net, &set, &info.preprocess, common.workers)?;
            let name = format!("{} ({} tx)", net.variant(), info.transmits.len());
            let mut reports = vec![evaluate(&name, &pred, &truth, radius, shape)?];
            if baseline {
                let c = constant_predictions(&set, info.label_mean);
                reports.push(evaluate("constant mean", &c, &truth, radius, shape)?);
            }
            let table = reports_table(&reports);
            write_file(&out, reports_csv(&reports[..1]))?;
            let txt = out.with_extension("txt");
            write_file(&txt, &table)?;
            let per = out.with_extension("samples.csv");
            write_file(&per, per_sample_csv(&reports[0]))?;
            let mut m = manifest("evaluate", &common, &cfg);
            m.inputs.push(checkpoint);
            m.inputs.push(dataset);
            m.outputs.extend([out.clone(), txt, per]);
            m.wall_clock_seconds = started.elapsed().as_secs_f64();
            m.write_for(&out)?;
            print!("{table}");
        }
        Command::Infer {
            common,
            checkpoint,
            dataset,
            index,
            out,
        } => {
            let cfg = load_config(&common)?;
            let (net, info) = load_checkpoint(&checkpoint)?;
            let reader = DatasetReader::open(&dataset)?;
            let indices = select(&index, reader.len())?;
            let mut set = prepared_for_checkpoint(&reader, &info, common.workers)?;
            set.samples = indices.iter().map(|&i| set.samples[i].clone()).collect();
            let t0 = Instant::now();
            let pred = predict(&net, &set, &info.preprocess, common.workers)?;
            let secs = t0.elapsed().as_secs_f64();
            create_dir(&out)?;
            let bin = out.join("predictions.bin");
            write_predictions(&bin, &pred)?;
            let mut outputs = vec![bin];
            for (id, map) in &pred {
                let p = out.join(format!("pred_{id}.pgm"));
                render_speed_map(map, RENDER_VMIN, RENDER_VMAX, &p)?;
                outputs.push(p);
            }
            let mut m = manifest("infer", &common, &cfg);
            m.inputs.push(checkpoint);
            m.inputs.push(dataset);
            m.outputs = outputs;
            m.wall_clock_seconds = started.elapsed().as_secs_f64();
            m.write_for(&out.join("predictions.bin"))?;
            let rate = if secs > 0.0 { pred.len() as f64 / secs } else { f64::INFINITY };
            println!("{} maps in {secs:.3} s ({rate:.2} maps/s, {} workers)", pred.len(), common.workers);
        }
        Command::Render {
            common,
            dataset,
            predictions,
            index,
            out,
        } => {
            let cfg = load_config(&common)?;
            create_dir(&out)?;
            let mut m = manifest("render", &common, &cfg);
            let maps = match (&dataset, &predictions) {
                (Some(d), _) => {
                    let reader = DatasetReader::open(d)?;
                    m.inputs.push(d.clone());
                    select(&index, reader.len())?
                        .into_iter()
                        .map(|i| reader.get(i).map(|r| (format!("label_{}", r.sample_id), r.label)))
                        .collect::<Result<Vec<_>>>()?
                }
                (None, Some(p)) => {
                    m.inputs.push(p.clone());
                    let all = read_predictions(p)?;
                    select(&index, all.len())?
                        .into_iter()
                        .map(|i| (format!("pred_{}", all[i].0), all[i].1.clone()))
                        .collect()
                }
                (None, None) => unreachable!("clap requires one source"),
            };
            for (name, map) in &maps {
                let p = out.join(format!("{name}.pgm"));
                render_speed_map(map, RENDER_VMIN, RENDER_VMAX, &p)?;
                m.outputs.push(p);
            }
            m.wall_clock_seconds = started.elapsed().as_secs_f64();
            m.write_for(&out.join("render"))?;
            println!("rendered {} images to {}", maps.len(), out.display());
        }
    }
    Ok(())
}

fn prepared_for_checkpoint(reader: &DatasetReader, info: &CheckpointInfo, workers: usize) -> Result<PreparedSet> {
    let dims = reader.dims();
    if (dims.label_h, dims.label_w) != (info.label_h, info.label_w) {
        return Err(Error::Schema(format!(
            "checkpoint predicts {}x{} maps but the dataset labels are {}x{}",
            info.label_h, info.label_w, dims.label_h, dims.label_w
        )));
    }
    let set = PreparedSet::from_reader(reader, &info.transmits, &info.preprocess, workers)?;
    Ok(set.scaled(info.preprocess.input_scale))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
