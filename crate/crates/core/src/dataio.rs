//! Single-file dataset of fixed-stride records, prediction files and PGM rendering.
//!
//! Dataset layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "USSI"
//! 4       2     version (1)
//! 6       1     endianness flag (1 = little)
//! 7       1     reserved (0)
//! 8       8     record count
//! 16      4     n_transmits
//! 20      4     n_elements
//! 24      4     n_time
//! 28      4     label height
//! 32      4     label width
//! 36      8     sample rate, Hz (f64)
//! 44      32    SHA-256 of the metadata bytes
//! 76      4     metadata length L
//! 80      L     metadata, UTF-8 JSON (DatasetMeta)
//! 80+L    ...   records
//! ```
//!
//! Each record is `sample_id u64`, then `n_transmits * n_elements * n_time`
//! f32 trace samples (transmit-major, then element, then time), then
//! `height * width` f32 label values in m/s (row-major).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::medium::{PhantomConfig, Probe, RecoveryRegion, SimGrid, SpeedMap};
use crate::solver::{ChannelData, TransmitConfig, TransmitEvent, TransmitLabel};

pub const MAGIC: &[u8; 4] = b"USSI";
pub const VERSION: u16 = 1;
const LITTLE_ENDIAN: u8 = 1;
const FIXED_HEADER: usize = 80;

/// Transmit summary stored in the dataset metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDescriptor {
    pub label: TransmitLabel,
    pub angle_deg: f64,
    pub first_element: usize,
    pub last_element: usize,
}

impl From<&TransmitEvent> for EventDescriptor {
    fn from(e: &TransmitEvent) -> Self {
        Self {
            label: e.label,
            angle_deg: e.angle.to_degrees(),
            first_element: e.active.0,
            last_element: e.active.1,
        }
    }
}

/// Everything needed to regenerate any record of a dataset.
///
/// The phantom of record `sample_id` uses `phantom` with
/// `rng_seed = base_seed ^ sample_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub base_seed: u64,
    pub grid: SimGrid,
    pub probe: Probe,
    pub phantom: PhantomConfig,
    pub transmit: TransmitConfig,
    pub events: Vec<EventDescriptor>,
    pub region: RecoveryRegion,
}

impl DatasetMeta {
    pub fn phantom_for(&self, sample_id: u64) -> PhantomConfig {
        PhantomConfig {
            rng_seed: self.base_seed ^ sample_id,
            ..self.phantom.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metadata is always serializable")
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_json().as_bytes()).into()
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub channel: ChannelData,
    /// m/s
    pub label: SpeedMap,
}

/// Tensor dims shared by every record of a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordDims {
    pub n_transmits: usize,
    pub n_elements: usize,
    pub n_time: usize,
    pub label_h: usize,
    pub label_w: usize,
}

impl RecordDims {
    pub fn of(record: &SampleRecord) -> Self {
        Self {
            n_transmits: record.channel.n_transmits,
            n_elements: record.channel.n_elements,
            n_time: record.channel.n_time,
            label_h: record.label.height,
            label_w: record.label.width,
        }
    }

    pub fn trace_len(&self) -> usize {
        self.n_transmits * self.n_elements * self.n_time
    }

    pub fn label_len(&self) -> usize {
        self.label_h * self.label_w
    }

    /// Bytes per record.
    pub fn stride(&self) -> usize {
        8 + 4 * (self.trace_len() + self.label_len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u16,
    pub count: u64,
    pub dims: RecordDims,
    pub sample_rate: f64,
    pub digest: [u8; 32],
    pub meta: DatasetMeta,
    /// Bytes before the first record.
    pub header_len: usize,
}

impl DatasetHeader {
    pub fn record_offset(&self, index: usize) -> u64 {
        self.header_len as u64 + index as u64 * self.dims.stride() as u64
    }
}

fn u32_field(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Schema(format!("{what} = {v} does not fit the header")))
}

fn encode_header(count: u64, dims: &RecordDims, sample_rate: f64, meta_json: &str) -> Result<Vec<u8>> {
    let mut h = Vec::with_capacity(FIXED_HEADER + meta_json.len());
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&VERSION.to_le_bytes());
    h.extend_from_slice(&[LITTLE_ENDIAN, 0]);
    h.extend_from_slice(&count.to_le_bytes());
    h.extend_from_slice(&u32_field(dims.n_transmits, "n_transmits")?);
    h.extend_from_slice(&u32_field(dims.n_elements, "n_elements")?);
    h.extend_from_slice(&u32_field(dims.n_time, "n_time")?);
    h.extend_from_slice(&u32_field(dims.label_h, "label height")?);
    h.extend_from_slice(&u32_field(dims.label_w, "label width")?);
    h.extend_from_slice(&sample_rate.to_le_bytes());
    h.extend_from_slice(&Sha256::digest(meta_json.as_bytes()));
    h.extend_from_slice(&u32_field(meta_json.len(), "metadata length")?);
    h.extend_from_slice(meta_json.as_bytes());
    Ok(h)
}

fn le_u32(b: &[u8], at: usize) -> usize {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes")) as usize
}

fn le_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Streams records into `<path>.partial` and renames it to `path` on [`finish`](Self::finish).
/// Dropping an unfinished writer deletes the partial file.
pub struct DatasetWriter {
    path: PathBuf,
    partial: PathBuf,
    out: Option<BufWriter<File>>,
    dims: RecordDims,
    sample_rate: f64,
    count: u64,
}

impl DatasetWriter {
    pub fn create(path: impl AsRef<Path>, meta: &DatasetMeta, dims: RecordDims, sample_rate: f64) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut partial = path.clone().into_os_string();
        partial.push(".partial");
        let partial = PathBuf::from(partial);
        let file = File::create(&partial).map_err(|e| Error::io(&partial, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        let meta_json = meta.to_json();
        out.write_all(&encode_header(0, &dims, sample_rate, &meta_json)?)
            .map_err(|e| Error::io(&partial, e))?;
        Ok(Self {
            path,
            partial,
            out: Some(out),
            dims,
            sample_rate,
            count: 0,
        })
    }

    pub fn dims(&self) -> RecordDims {
        self.dims
    }

    pub fn append(&mut self, record: &SampleRecord) -> Result<()> {
        let dims = RecordDims::of(record);
        if dims != self.dims {
            return Err(Error::Schema(format!(
                "record {} has dims {dims:?}, file expects {:?}",
                record.sample_id, self.dims
            )));
        }
        if record.channel.traces.len() != dims.trace_len() || record.label.data.len() != dims.label_len() {
            return Err(Error::Schema(format!("record {} tensors disagree with their dims", record.sample_id)));
        }
        if record.channel.sample_rate.to_bits() != self.sample_rate.to_bits() {
            return Err(Error::Schema(format!(
                "record {} sample rate {} differs from {}",
                record.sample_id, record.channel.sample_rate, self.sample_rate
            )));
        }
        let mut buf = Vec::with_capacity(dims.stride());
        buf.extend_from_slice(&record.sample_id.to_le_bytes());
        put_f32s(&mut buf, &record.channel.traces);
        put_f32s(&mut buf, &record.label.data);
        let out = self.out.as_mut().expect("writer is open until finish");
        out.write_all(&buf).map_err(|e| Error::io(&self.partial, e))?;
        self.count += 1;
        Ok(())
    }

    /// Patches the record count, flushes and moves the file into place.
    pub fn finish(mut self) -> Result<u64> {
        let out = self.out.take().expect("writer is open until finish");
        let mut file = out.into_inner().map_err(|e| Error::io(&self.partial, e.into_error()))?;
        use std::io::{Seek, SeekFrom};
        file.seek(SeekFrom::Start(8)).map_err(|e| Error::io(&self.partial, e))?;
        file.write_all(&self.count.to_le_bytes()).map_err(|e| Error::io(&self.partial, e))?;
        file.sync_all().map_err(|e| Error::io(&self.partial, e))?;
        drop(file);
        std::fs::rename(&self.partial, &self.path).map_err(|e| Error::io(&self.path, e))?;
        Ok(self.count)
    }
}

impl Drop for DatasetWriter {
    fn drop(&mut self) {
        if self.out.take().is_some() {
            let _ = std::fs::remove_file(&self.partial);
        }
    }
}

/// Writes all `records` (which must share dims) and returns how many were written.
/// An empty stream needs `dims` to describe the file.
pub fn write_dataset<I>(records: I, path: impl AsRef<Path>, meta: &DatasetMeta, dims: RecordDims, sample_rate: f64) -> Result<u64>
where
    I: IntoIterator<Item = SampleRecord>,
{
    let mut w = DatasetWriter::create(path, meta, dims, sample_rate)?;
    for r in records {
        w.append(&r)?;
    }
    w.finish()
}

/// Random-access reader; safe to share between threads.
#[derive(Debug)]
pub struct DatasetReader {
    path: PathBuf,
    file: File,
    header: DatasetHeader,
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = file.seek_read(buf, offset)?;
        if n == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        buf = &mut buf[n..];
        offset += n as u64;
    }
    Ok(())
}

impl DatasetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let format = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
        if len < FIXED_HEADER as u64 {
            return Err(format("file too short for a dataset header".into()));
        }
        let mut fixed = vec![0u8; FIXED_HEADER];
        read_at(&file, &mut fixed, 0).map_err(|e| Error::io(&path, e))?;
        if &fixed[0..4] != MAGIC {
            return Err(format("bad magic, not a dataset file".into()));
        }
        let version = u16::from_le_bytes([fixed[4], fixed[5]]);
        if version != VERSION {
            return Err(format(format!("unsupported version {version} (expected {VERSION})")));
        }
        if fixed[6] != LITTLE_ENDIAN {
            return Err(format(format!("unsupported endianness flag {}", fixed[6])));
        }
        let count = le_u64(&fixed, 8);
        let dims = RecordDims {
            n_transmits: le_u32(&fixed, 16),
            n_elements: le_u32(&fixed, 20),
            n_time: le_u32(&fixed, 24),
            label_h: le_u32(&fixed, 28),
            label_w: le_u32(&fixed, 32),
        };
        let sample_rate = f64::from_le_bytes(fixed[36..44].try_into().expect("8 bytes"));
        let digest: [u8; 32] = fixed[44..76].try_into().expect("32 bytes");
        let meta_len = le_u32(&fixed, 76);
        let header_len = FIXED_HEADER + meta_len;
        if len < header_len as u64 {
            return Err(format("truncated metadata".into()));
        }
        let mut meta_bytes = vec![0u8; meta_len];
        read_at(&file, &mut meta_bytes, FIXED_HEADER as u64).map_err(|e| Error::io(&path, e))?;
        let actual: [u8; 32] = Sha256::digest(&meta_bytes).into();
        if actual != digest {
            return Err(format("metadata digest mismatch".into()));
        }
        let meta: DatasetMeta = serde_json::from_slice(&meta_bytes).map_err(|e| format(format!("bad metadata: {e}")))?;
        let expected = header_len as u64 + count * dims.stride() as u64;
        if len < expected {
            return Err(format(format!("truncated: {len} bytes, header promises {expected}")));
        }
        if len > expected {
            return Err(format(format!("{} trailing bytes after the last record", len - expected)));
        }
        Ok(Self {
            path,
            file,
            header: DatasetHeader {
                version,
                count,
                dims,
                sample_rate,
                digest,
                meta,
                header_len,
            },
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.header.meta
    }

    pub fn dims(&self) -> RecordDims {
        self.header.dims
    }

    pub fn len(&self) -> usize {
        self.header.count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Record `index`, read with one positioned read.
    pub fn get(&self, index: usize) -> Result<SampleRecord> {
        if index >= self.len() {
            return Err(Error::Bounds(format!("record {index} of {} in {}", self.len(), self.path.display())));
        }
        let d = self.header.dims;
        let mut buf = vec![0u8; d.stride()];
        read_at(&self.file, &mut buf, self.header.record_offset(index)).map_err(|e| Error::io(&self.path, e))?;
        let sample_id = le_u64(&buf, 0);
        let split = 8 + 4 * d.trace_len();
        Ok(SampleRecord {
            sample_id,
            channel: ChannelData {
                n_transmits: d.n_transmits,
                n_elements: d.n_elements,
                n_time: d.n_time,
                sample_rate: self.header.sample_rate,
                traces: get_f32s(&buf[8..split]),
            },
            label: SpeedMap::new(d.label_h, d.label_w, get_f32s(&buf[split..]))?,
        })
    }

    /// Records in the order of `indices`, or all records when `None`.
    pub fn iter(&self, indices: Option<Vec<usize>>) -> impl Iterator<Item = Result<SampleRecord>> + '_ {
        let indices = indices.unwrap_or_else(|| (0..self.len()).collect());
        indices.into_iter().map(move |i| self.get(i))
    }
}

/// Opens `path` and yields the selected records.
pub fn read_dataset(path: impl AsRef<Path>, indices: Option<Vec<usize>>) -> Result<Vec<SampleRecord>> {
    let reader = DatasetReader::open(path)?;
    if let Some(ix) = &indices {
        if let Some(&bad) = ix.iter().find(|&&i| i >= reader.len()) {
            return Err(Error::Bounds(format!("record {bad} of {}", reader.len())));
        }
    }
    reader.iter(indices).collect()
}

/// 8-bit grey level of speed `v`: `round(255 * clamp((v - vmin) / (vmax - vmin), 0, 1))`.
pub fn gray_level(v: f32, vmin: f64, vmax: f64) -> u8 {
    let t = ((v as f64 - vmin) / (vmax - vmin)).clamp(0.0, 1.0);
    (255.0 * t).round() as u8
}

pub const RENDER_VMIN: f64 = 1300.0;
pub const RENDER_VMAX: f64 = 1800.0;

/// Binary PGM (P5) bytes of `map`.
pub fn speed_map_pgm(map: &SpeedMap, vmin: f64, vmax: f64) -> Result<Vec<u8>> {
    if !(vmin < vmax) {
        return Err(Error::Argument(format!("render range needs vmin < vmax, got [{vmin}, {vmax}]")));
    }
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.data.iter().map(|&v| gray_level(v, vmin, vmax)));
    Ok(out)
}

pub fn render_speed_map(map: &SpeedMap, vmin: f64, vmax: f64, path: impl AsRef<Path>) -> Result<()> {
    let bytes = speed_map_pgm(map, vmin, vmax)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

/// Predicted maps file: `"USSM" | version u16 | 0u16 | count u64 | h u32 | w u32`,
/// then per map `sample_id u64` and `h * w` f32 values (m/s).
pub const PREDICTION_MAGIC: &[u8; 4] = b"USSM";

pub fn write_predictions(path: impl AsRef<Path>, maps: &[(u64, SpeedMap)]) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = maps.first().map_or((0, 0), |(_, m)| (m.height, m.width));
    if maps.iter().any(|(_, m)| m.height != h || m.width != w) {
        return Err(Error::Schema("prediction maps must share dims".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(PREDICTION_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&[0, 0]);
    buf.extend_from_slice(&(maps.len() as u64).to_le_bytes());
    buf.extend_from_slice(&u32_field(h, "map height")?);
    buf.extend_from_slice(&u32_field(w, "map width")?);
    for (id, m) in maps {
        buf.extend_from_slice(&id.to_le_bytes());
        put_f32s(&mut buf, &m.data);
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<(u64, SpeedMap)>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 24 || &bytes[0..4] != PREDICTION_MAGIC {
        return Err(format("not a prediction file"));
    }
    if u16::from_le_bytes([bytes[4], bytes[5]]) != VERSION {
        return Err(format("unsupported prediction file version"));
    }
    let count = le_u64(&bytes, 8) as usize;
    let (h, w) = (le_u32(&bytes, 16), le_u32(&bytes, 20));
    let stride = 8 + 4 * h * w;
    if bytes.len() != 24 + count * stride {
        return Err(format("prediction file length disagrees with its header"));
    }
    (0..count)
        .map(|k| {
            let rec = &bytes[24 + k * stride..24 + (k + 1) * stride];
            Ok((le_u64(rec, 0), SpeedMap::new(h, w, get_f32s(&rec[8..]))?))
        })
        .collect()
}
