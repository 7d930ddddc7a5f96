//! Sample generation: phantom, simulation, label, written in id order.

use std::path::Path;

use rayon::prelude::*;

use crate::dataio::{DatasetMeta, DatasetWriter, EventDescriptor, RecordDims, SampleRecord};
use crate::error::{Error, Result};
use crate::medium::{extract_label, generate_phantom, PhantomConfig, Probe, RecoveryRegion, SimGrid};
use crate::solver::{simulate_study, standard_events, TransmitConfig, TransmitEvent};

pub const GENERATOR: &str = concat!("ussi-core ", env!("CARGO_PKG_VERSION"));

/// Validates the pieces and assembles dataset metadata.
pub fn dataset_meta(
    grid: SimGrid,
    probe: Probe,
    phantom: PhantomConfig,
    transmit: TransmitConfig,
    region: RecoveryRegion,
    base_seed: u64,
) -> Result<DatasetMeta> {
    grid.validate(phantom.speed_max)?;
    probe.validate(&grid)?;
    phantom.validate()?;
    region.validate(&grid)?;
    let events = standard_events(&probe, &grid, &transmit)?;
    Ok(DatasetMeta {
        generator: GENERATOR.to_string(),
        base_seed,
        events: events.iter().map(EventDescriptor::from).collect(),
        grid,
        probe,
        phantom,
        transmit,
        region,
    })
}

pub fn events_for(meta: &DatasetMeta) -> Result<Vec<TransmitEvent>> {
    standard_events(&meta.probe, &meta.grid, &meta.transmit)
}

/// Shape every record of `meta` will have.
pub fn record_dims(meta: &DatasetMeta) -> RecordDims {
    RecordDims {
        n_transmits: meta.events.len(),
        n_elements: meta.probe.n_elements,
        n_time: meta.grid.n_steps,
        label_h: meta.region.out_h,
        label_w: meta.region.out_w,
    }
}

/// Builds record `sample_id`. Depends only on `meta` and the id.
pub fn generate_sample(meta: &DatasetMeta, events: &[TransmitEvent], sample_id: u64) -> Result<SampleRecord> {
    let run = || -> Result<SampleRecord> {
        let medium = generate_phantom(&meta.phantom_for(sample_id), &meta.grid)?;
        let label = extract_label(&medium, &meta.region)?;
        let channel = simulate_study(&medium, &meta.probe, events)?;
        Ok(SampleRecord {
            sample_id,
            channel,
            label,
        })
    };
    run().map_err(|e| e.for_sample(sample_id))
}

/// Generates `ids` with `workers` threads and writes them in the given order.
///
/// The file is identical for any worker count. On error nothing is left at `path`.
pub fn gen_dataset(meta: &DatasetMeta, ids: &[u64], path: impl AsRef<Path>, workers: usize) -> Result<u64> {
    let workers = workers.max(1);
    let events = events_for(meta)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut writer = DatasetWriter::create(path, meta, record_dims(meta), meta.grid.sample_rate())?;
    let total = ids.len();
    let mut done = 0usize;
    for chunk in ids.chunks(workers) {
        let records: Vec<Result<SampleRecord>> =
            pool.install(|| chunk.par_iter().map(|&id| generate_sample(meta, &events, id)).collect());
        for r in records {
            writer.append(&r?)?;
        }
        done += chunk.len();
        log::info!("generated {done}/{total} samples");
    }
    writer.finish()
}
