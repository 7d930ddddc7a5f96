use proptest::prelude::*;
use ussi_core::config::RunConfig;
use ussi_core::dataio::*;
use ussi_core::medium::SpeedMap;
use ussi_core::rng::PortableRng;
use ussi_core::solver::ChannelData;
use ussi_core::Error;

const DIMS: RecordDims = RecordDims {
    n_transmits: 3,
    n_elements: 4,
    n_time: 10,
    label_h: 2,
    label_w: 3,
};
const FS: f64 = 40e6;

fn meta() -> DatasetMeta {
    RunConfig::from_toml_str("[grid]\nnx = 128\nnz = 128\n[probe]\nn_elements = 16\n[region]\nwidth_points = 40\ndepth_points = 80\nout_h = 2\nout_w = 3")
        .unwrap()
        .dataset_meta()
        .unwrap()
}

fn record(id: u64) -> SampleRecord {
    let mut rng = PortableRng::new(id + 100);
    SampleRecord {
        sample_id: id,
        channel: ChannelData {
            n_transmits: DIMS.n_transmits,
            n_elements: DIMS.n_elements,
            n_time: DIMS.n_time,
            sample_rate: FS,
            traces: (0..DIMS.trace_len()).map(|_| rng.normal() as f32).collect(),
        },
        label: SpeedMap::new(2, 3, (0..6).map(|_| rng.uniform_range(1300.0, 1800.0) as f32).collect()).unwrap(),
    }
}

fn write(dir: &tempfile::TempDir, name: &str, ids: &[u64]) -> std::path::PathBuf {
    let path = dir.path().join(name);
    let n = write_dataset(ids.iter().map(|&i| record(i)), &path, &meta(), DIMS, FS).unwrap();
    assert_eq!(n, ids.len() as u64);
    path
}

fn bits(r: &SampleRecord) -> (u64, Vec<u32>, Vec<u32>) {
    (
        r.sample_id,
        r.channel.traces.iter().map(|v| v.to_bits()).collect(),
        r.label.data.iter().map(|v| v.to_bits()).collect(),
    )
}

#[test]
fn five_records_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "a.ussi", &[0, 1, 2, 3, 4]);
    let back = read_dataset(&path, None).unwrap();
    assert_eq!(back.len(), 5);
    for (i, r) in back.iter().enumerate() {
        assert_eq!(bits(r), bits(&record(i as u64)));
        assert_eq!(r.channel.sample_rate, FS);
    }
    let reader = DatasetReader::open(&path).unwrap();
    assert_eq!(reader.meta(), &meta());
    assert_eq!(reader.header().count, 5);
}

#[test]
fn empty_stream_gives_valid_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "e.ussi", &[]);
    let reader = DatasetReader::open(&path).unwrap();
    assert!(reader.is_empty());
    assert_eq!(reader.dims(), DIMS);
    assert!(read_dataset(&path, None).unwrap().is_empty());
}

#[test]
fn corrupt_magic_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "m.ussi", &[0, 1]);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[1] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(DatasetReader::open(&path), Err(Error::Format(_))));
}

#[test]
fn version_and_metadata_corruption_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "v.ussi", &[0]);
    let good = std::fs::read(&path).unwrap();
    let mut bytes = good.clone();
    bytes[4] = 9;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(DatasetReader::open(&path), Err(Error::Format(m)) if m.contains("version")));
    let mut bytes = good;
    bytes[90] ^= 1;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(DatasetReader::open(&path), Err(Error::Format(m)) if m.contains("digest")));
}

#[test]
fn truncated_and_padded_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "t.ussi", &[0, 1]);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(DatasetReader::open(&path), Err(Error::Format(m)) if m.contains("truncated")));
    let mut longer = bytes.clone();
    longer.push(0);
    std::fs::write(&path, &longer).unwrap();
    assert!(matches!(DatasetReader::open(&path), Err(Error::Format(_))));
    std::fs::write(&path, &bytes[..20]).unwrap();
    assert!(matches!(DatasetReader::open(&path), Err(Error::Format(_))));
}

#[test]
fn indices_select_in_the_given_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "i.ussi", &[10, 11, 12]);
    let got = read_dataset(&path, Some(vec![2, 0])).unwrap();
    assert_eq!(got.iter().map(|r| r.sample_id).collect::<Vec<_>>(), vec![12, 10]);
}

#[test]
fn out_of_range_index_is_a_bounds_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "b.ussi", &[0, 1, 2]);
    assert!(matches!(read_dataset(&path, Some(vec![0, 3])), Err(Error::Bounds(_))));
    assert!(matches!(DatasetReader::open(&path).unwrap().get(3), Err(Error::Bounds(_))));
}

#[test]
fn file_size_is_header_plus_count_times_stride() {
    let dir = tempfile::tempdir().unwrap();
    for n in [0u64, 1, 4] {
        let ids: Vec<u64> = (0..n).collect();
        let path = write(&dir, &format!("s{n}.ussi"), &ids);
        let reader = DatasetReader::open(&path).unwrap();
        let h = reader.header();
        assert_eq!(DIMS.stride(), 8 + 4 * (120 + 6));
        assert_eq!(std::fs::metadata(&path).unwrap().len(), h.header_len as u64 + n * DIMS.stride() as u64);
        assert_eq!(h.record_offset(1) - h.record_offset(0), DIMS.stride() as u64);
    }
}

#[test]
fn mismatched_record_is_a_schema_error_and_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ussi");
    let mut bad = record(1);
    bad.label = SpeedMap::constant(3, 2, 1500.0);
    let err = write_dataset(vec![record(0), bad], &path, &meta(), DIMS, FS).unwrap_err();
    assert!(matches!(err, Error::Schema(_)));
    assert!(!path.exists());
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn missing_file_is_an_io_error_with_path() {
    let err = DatasetReader::open("/nonexistent/d.ussi").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/d.ussi"));
}

#[test]
fn render_endpoints_and_midpoint() {
    let px = |v: f32| {
        let pgm = speed_map_pgm(&SpeedMap::constant(4, 3, v), RENDER_VMIN, RENDER_VMAX).unwrap();
        assert!(pgm.starts_with(b"P5\n3 4\n255\n"));
        pgm[pgm.len() - 12..].to_vec()
    };
    assert_eq!(px(1300.0), vec![0; 12]);
    assert_eq!(px(1800.0), vec![255; 12]);
    assert_eq!(px(1550.0), vec![128; 12]);
    assert_eq!(px(1000.0), vec![0; 12]);
    assert_eq!(px(2000.0), vec![255; 12]);
    assert!(speed_map_pgm(&SpeedMap::constant(1, 1, 0.0), 5.0, 5.0).is_err());
}

#[test]
fn render_writes_the_pgm_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let map = SpeedMap::new(1, 2, vec![1300.0, 1800.0]).unwrap();
    let path = dir.path().join("m.pgm");
    render_speed_map(&map, RENDER_VMIN, RENDER_VMAX, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"P5\n2 1\n255\n\x00\xff".to_vec());
}

#[test]
fn predictions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    let maps = vec![(7, record(7).label), (3, record(3).label)];
    write_predictions(&path, &maps).unwrap();
    assert_eq!(read_predictions(&path).unwrap(), maps);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.pop();
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(read_predictions(&path), Err(Error::Format(_))));
}

proptest! {
    #[test]
    fn rendering_is_monotone(a in 1000.0f32..2100.0, b in 1000.0f32..2100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(gray_level(lo, RENDER_VMIN, RENDER_VMAX) <= gray_level(hi, RENDER_VMIN, RENDER_VMAX));
    }

    #[test]
    fn any_values_round_trip(values in prop::collection::vec(any::<f32>(), 126), id in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ussi");
        let rec = SampleRecord {
            sample_id: id,
            channel: ChannelData { n_transmits: 3, n_elements: 4, n_time: 10, sample_rate: FS, traces: values[..120].to_vec() },
            label: SpeedMap::new(2, 3, values[120..].to_vec()).unwrap(),
        };
        write_dataset(vec![rec.clone()], &path, &meta(), DIMS, FS).unwrap();
        let back = read_dataset(&path, None).unwrap();
        prop_assert_eq!(bits(&back[0]), bits(&rec));
    }
}
