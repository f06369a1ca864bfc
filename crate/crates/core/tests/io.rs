mod common;

use cenet::io::*;
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn bits(pc: &PointCloud) -> Vec<u32> {
    pc.xyz.iter().flatten().chain(&pc.remission).map(|v| v.to_bits()).collect()
}

#[test]
fn scans_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = seeded(30);
    for i in 0..20 {
        let n = r.gen_range(0..3000);
        let mut pc = random_cloud(&mut r, n, None);
        // subnormals, negative zero and extreme magnitudes survive unchanged
        pc.xyz.push([-0.0, f32::MIN_POSITIVE / 2.0, f32::MAX]);
        pc.remission.push(f32::MIN);
        let path = dir.path().join(format!("{i}.bin"));
        write_scan(&path, &pc).unwrap();
        let back = load_scan(&path).unwrap();
        assert_eq!(bits(&back), bits(&pc));
        assert!(back.dropped_rows.is_empty());
        assert_eq!(std::fs::read(&path).unwrap(), encode_scan(&back));
    }
}

#[test]
fn non_finite_rows_are_dropped_and_remembered() {
    let pc = PointCloud::new(
        vec![[1.0, 2.0, 3.0], [f32::NAN, 0.0, 0.0], [4.0, 5.0, 6.0], [0.0, f32::INFINITY, 0.0], [7.0, 8.0, 9.0]],
        vec![0.1, 0.2, 0.3, 0.4, f32::NEG_INFINITY],
    );
    let back = decode_scan(&encode_scan(&pc), "x.bin".as_ref()).unwrap();
    assert_eq!(back.xyz, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    assert_eq!(back.dropped_rows, vec![1, 3, 4]);
    assert_eq!(back.raw_len(), 5);
}

#[test]
fn truncated_files_are_format_errors() {
    let bytes = encode_scan(&PointCloud::new(vec![[1.0, 2.0, 3.0]], vec![0.5]));
    let e = decode_scan(&bytes[..15], "x.bin".as_ref()).unwrap_err();
    assert!(matches!(e, cenet::Error::Format { .. }));
    assert_eq!(e.exit_code(), 2);
    assert!(decode_raw_labels(&[0, 0, 0], "x.label".as_ref()).is_err());
    assert_eq!(load_scan("/nonexistent/scan.bin").unwrap_err().exit_code(), 2);
}

#[test]
fn raw_labels_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = seeded(31);
    let raw: Vec<u32> = (0..5000).map(|_| r.gen()).collect();
    let path = dir.path().join("a.label");
    write_raw_labels(&path, &raw).unwrap();
    assert_eq!(read_raw_labels(&path).unwrap(), raw);
}

#[test]
fn predictions_line_up_with_dropped_rows() {
    let dir = tempfile::tempdir().unwrap();
    let classes = ClassConfig::semantic_kitti();
    let mut pc = PointCloud::new(vec![[1.0, 0.0, 0.0]; 4], vec![0.0; 4]);
    pc.dropped_rows = vec![0, 3, 5];
    let train = vec![1, 2, 19, 7];
    let path = dir.path().join("p.label");
    write_prediction_labels(&path, &train, &classes, &pc.dropped_rows).unwrap();
    let raw = read_raw_labels(&path).unwrap();
    assert_eq!(raw.len(), 7);
    let fill = classes.to_raw(classes.ignore_id);
    for row in [0, 3, 5] {
        assert_eq!(raw[row], fill);
    }
    // reading the file back skips the same rows and recovers the train IDs
    assert_eq!(load_labels(&path, &classes, &pc).unwrap(), train);
}

#[test]
fn label_count_must_match_the_scan_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.label");
    write_raw_labels(&path, &[1, 1, 1]).unwrap();
    let pc = PointCloud::new(vec![[1.0, 0.0, 0.0]; 2], vec![0.0; 2]);
    let e = load_labels(&path, &ClassConfig::toy(4), &pc).unwrap_err();
    assert!(matches!(e, cenet::Error::Consistency(_)));
}

#[test]
fn every_train_id_survives_the_raw_mapping() {
    for classes in [ClassConfig::semantic_kitti(), ClassConfig::semantic_poss(), ClassConfig::toy(6)] {
        for t in 0..classes.num_classes as u32 {
            assert_eq!(classes.remap_raw(classes.to_raw(t)).unwrap(), t, "{} class {t}", classes.name);
            // instance bits never change the semantic class
            assert_eq!(classes.remap_raw(classes.to_raw(t) | 0xABCD_0000).unwrap(), t);
        }
    }
}

#[test]
fn toy_dataset_is_deterministic_and_loadable() {
    let cfg = ToyConfig { n_scans: 6, rows: 16, cols: 128, val_fraction: 0.34, test_fraction: 0.17, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = make_toy_dataset(a.path(), &cfg).unwrap();
    make_toy_dataset(b.path(), &cfg).unwrap();
    assert_eq!((ma.train.len(), ma.val.len(), ma.test.len()), (3, 2, 1));
    let ds = Dataset::new(a.path(), ClassConfig::toy(cfg.n_classes), SplitSpec::toy()).unwrap();
    let mut seen = 0;
    for split in [Split::Train, Split::Val, Split::Test] {
        for s in ds.samples(split).unwrap() {
            let rel = s.scan.strip_prefix(a.path()).unwrap();
            assert_eq!(std::fs::read(&s.scan).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
            let pc = ds.load(&s).unwrap();
            assert_eq!(pc.labels.unwrap().len(), pc.xyz.len());
            assert!(prediction_relpath(&s).ends_with(format!("predictions/{}.label", s.name)));
            seen += 1;
        }
    }
    assert_eq!(seen, 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_records_round_trip(words in proptest::collection::vec(any::<u32>(), 0..400)) {
        let words = &words[..words.len() / 4 * 4];
        let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        let pc = decode_scan(&bytes, "x.bin".as_ref()).unwrap();
        prop_assert_eq!(pc.raw_len(), words.len() / 4);
        // finite records re-encode to their exact source bytes
        let kept: Vec<u8> = bytes
            .chunks_exact(SCAN_RECORD_BYTES)
            .enumerate()
            .filter(|(i, _)| !pc.dropped_rows.contains(i))
            .flat_map(|(_, c)| c.to_vec())
            .collect();
        prop_assert_eq!(encode_scan(&pc), kept);
    }
}
