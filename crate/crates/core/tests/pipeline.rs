use ussi_core::config::RunConfig;
use ussi_core::dataio::{read_dataset, DatasetMeta, DatasetReader};
use ussi_core::pipeline::*;
use ussi_core::Error;

fn small() -> DatasetMeta {
    RunConfig::from_toml_str(
        "[grid]\nnx = 128\nnz = 128\nduration = 10e-6\n[probe]\nn_elements = 16\n\
         [region]\nwidth_points = 40\ndepth_points = 80\nout_h = 8\nout_w = 4\n[dataset]\nbase_seed = 11",
    )
    .unwrap()
    .dataset_meta()
    .unwrap()
}

#[test]
fn worker_count_does_not_change_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let meta = small();
    let ids = [0, 1, 2, 3, 4];
    let a = dir.path().join("w1.ussi");
    let b = dir.path().join("w4.ussi");
    assert_eq!(gen_dataset(&meta, &ids, &a, 1).unwrap(), 5);
    assert_eq!(gen_dataset(&meta, &ids, &b, 4).unwrap(), 5);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn records_follow_the_id_order_and_dims() {
    let dir = tempfile::tempdir().unwrap();
    let meta = small();
    let path = dir.path().join("d.ussi");
    gen_dataset(&meta, &[7, 3], &path, 2).unwrap();
    let reader = DatasetReader::open(&path).unwrap();
    assert_eq!(reader.meta(), &meta);
    assert_eq!(reader.dims(), record_dims(&meta));
    let recs = read_dataset(&path, None).unwrap();
    assert_eq!(recs.iter().map(|r| r.sample_id).collect::<Vec<_>>(), vec![7, 3]);
    let events = events_for(&meta).unwrap();
    let direct = generate_sample(&meta, &events, 3).unwrap();
    assert_eq!(recs[1], direct);
    assert_ne!(recs[0].label, recs[1].label);
}

#[test]
fn empty_id_list_gives_valid_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.ussi");
    assert_eq!(gen_dataset(&small(), &[], &path, 3).unwrap(), 0);
    let reader = DatasetReader::open(&path).unwrap();
    assert!(reader.is_empty());
    assert_eq!(reader.dims(), record_dims(&small()));
}

#[test]
fn desk_defaults_single_sample_matches_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let meta = cfg.dataset_meta().unwrap();
    let path = dir.path().join("desk.ussi");
    gen_dataset(&meta, &[0], &path, 1).unwrap();
    let reader = DatasetReader::open(&path).unwrap();
    let d = reader.dims();
    assert_eq!(d.n_transmits, 3);
    assert_eq!(d.n_elements, cfg.probe.n_elements);
    assert_eq!(d.n_time, meta.grid.n_steps);
    assert_eq!((d.label_h, d.label_w), (cfg.region.out_h, cfg.region.out_w));
    let r = reader.get(0).unwrap();
    assert_eq!(r.channel.traces.len(), d.trace_len());
    assert!(r.channel.traces.iter().all(|v| v.is_finite()));
    assert!(r.label.data.iter().all(|&v| (cfg.phantom.speed_min as f32..=cfg.phantom.speed_max as f32).contains(&v)));
}

#[test]
fn failing_sample_is_named_and_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut meta = small();
    meta.phantom.speed_min = 1700.0;
    meta.phantom.speed_max = 1600.0;
    let path = dir.path().join("bad.ussi");
    let err = gen_dataset(&meta, &[5, 6], &path, 1).unwrap_err();
    assert!(matches!(err, Error::Sample { id: 5, .. }), "{err}");
    assert!(err.to_string().contains("sample 5"));
    assert!(!path.exists());
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn sample_depends_only_on_meta_and_id() {
    let meta = small();
    let events = events_for(&meta).unwrap();
    let a = generate_sample(&meta, &events, 42).unwrap();
    let b = generate_sample(&meta, &events, 42).unwrap();
    assert_eq!(a, b);
    let mut other = meta.clone();
    other.base_seed = 12;
    assert_ne!(generate_sample(&other, &events, 42).unwrap().label, a.label);
}
