use std::collections::HashSet;
use std::path::Path;

use mvkd_core::data::*;
use mvkd_core::Error;
use proptest::prelude::*;

fn write_ppm(path: &Path, w: usize, h: usize, rgb: [u8; 3]) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for _ in 0..w * h {
        bytes.extend_from_slice(&rgb);
    }
    std::fs::write(path, bytes).unwrap();
}

fn make_folder(root: &Path, classes: &[(&str, usize)]) {
    for &(name, n) in classes {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..n {
            write_ppm(&dir.join(format!("img_{i:03}.ppm")), 3, 2, [i as u8, 10, 200]);
        }
    }
}

fn single_class(n: usize) -> DatasetManifest {
    DatasetManifest::unsplit(vec!["only".into()], (0..n).map(|i| (format!("s{i}"), 0)).collect())
}

// ---- folder loading ----

#[test]
fn classes_are_sorted_lexicographically() {
    let dir = tempfile::tempdir().unwrap();
    make_folder(dir.path(), &[("non_fire", 3), ("fire", 4)]);
    std::fs::write(dir.path().join("non_fire/readme.txt"), "ignored").unwrap();
    let folder = load_image_folder(dir.path()).unwrap();
    let m = &folder.manifest;
    assert_eq!(m.class_names, vec!["fire", "non_fire"]);
    assert_eq!(m.entries.len(), 7);
    assert_eq!(m.entries[0].source_id, "fire/img_000.ppm");
    assert!(m.entries[..4].iter().all(|e| e.label == 0));
    assert!(m.entries[4..].iter().all(|e| e.label == 1));
    let data = folder.load(8, None).unwrap();
    assert_eq!(data.len(), 7);
    assert!((data.pixels(0)[64 * 2] - 200.0 / 255.0).abs() < 1e-6);
}

#[test]
fn bowfire_sized_folder_has_226_entries() {
    let dir = tempfile::tempdir().unwrap();
    make_folder(dir.path(), &[("fire", 119), ("non_fire", 107)]);
    let folder = load_image_folder(dir.path()).unwrap();
    assert_eq!(folder.manifest.entries.len(), 226);
    let split = split_dataset(&folder.manifest, DEFAULT_FRACTIONS, 1).unwrap();
    assert_eq!(split.split_counts(), vec![[85, 23, 11], [76, 21, 10]]);
}

#[test]
fn empty_or_single_class_folders_are_invalid() {
    let dir = tempfile::tempdir().unwrap();
    make_folder(dir.path(), &[("fire", 3)]);
    assert!(matches!(load_image_folder(dir.path()), Err(Error::InvalidDataset(_))));
    std::fs::create_dir(dir.path().join("smoke")).unwrap();
    assert!(matches!(load_image_folder(dir.path()), Err(Error::InvalidDataset(_))));
    assert!(matches!(load_image_folder(dir.path().join("missing")), Err(Error::InvalidDataset(_))));
}

#[test]
fn undecodable_file_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    make_folder(dir.path(), &[("a", 3), ("b", 3)]);
    let bad = dir.path().join("b/zz_broken.ppm");
    std::fs::write(&bad, b"P6\n4 4\n255\nshort").unwrap();
    let folder = load_image_folder(dir.path()).unwrap();
    match folder.load(8, None) {
        Err(Error::DecodeError { path, .. }) => assert_eq!(path, bad),
        other => panic!("expected DecodeError, got {other:?}"),
    }
}

#[test]
fn written_folder_loads_back() {
    let data = synth_fire_dataset(&SynthConfig {
        num_per_class: 3,
        num_classes: 2,
        hardness: Hardness::Easy,
        image_size: 16,
        seed: 5,
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_image_folder(&data, dir.path()).unwrap();
    let back = load_image_folder(dir.path()).unwrap().load(16, None).unwrap();
    assert_eq!(back.len(), 6);
    for i in 0..6 {
        assert_eq!(back.label(i), data.label(i));
        for (a, b) in back.pixels(i).iter().zip(data.pixels(i)) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}

// ---- splits ----

#[test]
fn split_counts_follow_the_floor_rule() {
    for (n, expect) in [(10, [7, 2, 1]), (100, [70, 20, 10]), (107, [76, 21, 10]), (119, [85, 23, 11]), (226, [159, 45, 22])] {
        let m = split_dataset(&single_class(n), DEFAULT_FRACTIONS, 3).unwrap();
        assert_eq!(m.split_counts(), vec![expect], "n = {n}");
    }
}

#[test]
fn split_is_seeded() {
    let m = single_class(107);
    let a = split_dataset(&m, DEFAULT_FRACTIONS, 11).unwrap();
    let b = split_dataset(&m, DEFAULT_FRACTIONS, 11).unwrap();
    let c = split_dataset(&m, DEFAULT_FRACTIONS, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.entries, c.entries);
    assert_eq!(a.split_counts(), c.split_counts());
    assert_eq!(a.seed, 11);
}

#[test]
fn tiny_class_cannot_be_stratified() {
    let m = DatasetManifest::unsplit(
        vec!["a".into(), "b".into()],
        vec![("x".into(), 0), ("y".into(), 0), ("z".into(), 0), ("w".into(), 1), ("v".into(), 1)],
    );
    assert!(matches!(split_dataset(&m, DEFAULT_FRACTIONS, 0), Err(Error::StratificationError(_))));
}

#[test]
fn bad_fractions_are_rejected() {
    let m = single_class(10);
    assert!(split_dataset(&m, [0.5, 0.5, 0.0], 0).is_err());
    assert!(split_dataset(&m, [0.7, 0.2, 0.2], 0).is_err());
}

#[test]
fn manifest_json_roundtrip() {
    let m = split_dataset(&single_class(12), DEFAULT_FRACTIONS, 4).unwrap();
    let json = m.to_json().unwrap();
    assert!(json.contains("\"split\": \"val\""));
    let back: DatasetManifest = serde_json::from_str(&json).unwrap();
    assert_eq!(back, m);
}

proptest! {
    #[test]
    fn stratified_counts_are_seed_invariant(sizes in prop::collection::vec(3usize..60, 1..5), s1 in any::<u64>(), s2 in any::<u64>()) {
        let names = (0..sizes.len()).map(|k| format!("c{k}")).collect();
        let samples = sizes.iter().enumerate().flat_map(|(k, &n)| (0..n).map(move |i| (format!("{k}/{i}"), k))).collect();
        let m = DatasetManifest::unsplit(names, samples);
        let a = split_dataset(&m, DEFAULT_FRACTIONS, s1).unwrap();
        let b = split_dataset(&m, DEFAULT_FRACTIONS, s2).unwrap();
        prop_assert_eq!(a.split_counts(), b.split_counts());
        for (k, &n) in sizes.iter().enumerate() {
            let val = n * 2 / 10;
            let test = n / 10;
            prop_assert_eq!(a.split_counts()[k], [n - val - test, val, test]);
        }
    }
}

// ---- preprocessing ----

#[test]
fn bilinear_checkerboard_upsample() {
    // half-pixel centres: output k samples the source at clamp((k + 0.5) / 2 - 0.5)
    // = 0, 0.25, 0.75, 1, and the checkerboard interpolates to sx + sy - 2 sx sy.
    let out = resize_bilinear(&[0.0, 1.0, 1.0, 0.0], 1, 2, 2, 4, 4);
    let expect = [
        0.0, 0.25, 0.75, 1.0, //
        0.25, 0.375, 0.625, 0.75, //
        0.75, 0.625, 0.375, 0.25, //
        1.0, 0.75, 0.25, 0.0,
    ];
    for (a, b) in out.iter().zip(expect) {
        assert!((a - b).abs() < 1e-7, "{out:?}");
    }
}

#[test]
fn constant_image_stays_constant() {
    let img = Image::filled(13, 7, [0.2, 0.5, 0.9]);
    let t = preprocess(&img, 32, None).unwrap();
    assert_eq!(t.shape(), &[3, 32, 32]);
    for (c, plane) in t.data().chunks(32 * 32).enumerate() {
        assert!(plane.iter().all(|&v| (v - [0.2, 0.5, 0.9][c]).abs() < 1e-6));
    }
}

#[test]
fn resize_to_source_size_is_identity() {
    let data: Vec<f32> = (0..3 * 100).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    let img = Image::new(10, 10, data.clone()).unwrap();
    assert_eq!(resize_bilinear(&data, 3, 10, 10, 10, 10), data);
    let t = preprocess(&img, 10, None).unwrap();
    for (a, b) in t.data().iter().zip(&data) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn normalisation_and_size_checks() {
    let img = Image::filled(8, 8, [0.5, 0.5, 0.5]);
    let n = Normalization {
        mean: [0.5, 0.25, 0.0],
        std: [1.0, 0.5, 0.25],
    };
    let t = preprocess(&img, 8, Some(&n)).unwrap();
    assert_eq!(t.data()[0], 0.0);
    assert_eq!(t.data()[64], 0.5);
    assert_eq!(t.data()[128], 2.0);
    assert!(matches!(preprocess(&img, 7, None), Err(Error::InvalidParameter(_))));
    let empty = Image {
        width: 0,
        height: 0,
        data: vec![],
    };
    assert!(matches!(preprocess(&empty, 8, None), Err(Error::DecodeError { .. })));
}

proptest! {
    #[test]
    fn preprocessed_values_stay_in_unit_range(w in 1usize..20, h in 1usize..20, s in 8usize..24, seed in any::<u64>()) {
        let mut r = mvkd_tensor::Rng::new(seed).stream(mvkd_tensor::Stream::Aux);
        let data: Vec<f32> = (0..3 * w * h).map(|_| r.uniform() as f32).collect();
        let t = preprocess(&Image::new(w, h, data).unwrap(), s, None).unwrap();
        prop_assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

// ---- synthetic data ----

fn synth(n: usize, classes: usize, hardness: Hardness, size: usize, seed: u64) -> Dataset {
    synth_fire_dataset(&SynthConfig {
        num_per_class: n,
        num_classes: classes,
        hardness,
        image_size: size,
        seed,
    })
    .unwrap()
}

#[test]
fn synthetic_images_are_keyed_by_seed_class_index() {
    let cfg = SynthConfig {
        num_per_class: 4,
        num_classes: 2,
        hardness: Hardness::Hard,
        image_size: 32,
        seed: 9,
    };
    let bits = |v: Vec<f32>| v.into_iter().map(f32::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(synth_image(&cfg, 1, 3)), bits(synth_image(&cfg, 1, 3)));
    assert_ne!(bits(synth_image(&cfg, 1, 3)), bits(synth_image(&cfg, 1, 2)));
    let data = synth_fire_dataset(&cfg).unwrap();
    assert_eq!(bits(data.pixels(7).to_vec()), bits(synth_image(&cfg, 1, 3)));
}

#[test]
fn synthetic_classes_are_balanced_and_in_range() {
    for (classes, hardness) in [(2, Hardness::Easy), (2, Hardness::Hard), (12, Hardness::Easy), (12, Hardness::Hard)] {
        let d = synth(5, classes, hardness, 24, 1);
        assert_eq!(d.num_classes(), classes);
        assert_eq!(d.len(), 5 * classes);
        for k in 0..classes {
            assert_eq!((0..d.len()).filter(|&i| d.label(i) == k).count(), 5);
        }
        assert!((0..d.len()).all(|i| d.pixels(i).iter().all(|&v| (0.0..=1.0).contains(&v))));
    }
    let names = synth(3, 12, Hardness::Easy, 8, 0).manifest().class_names.clone();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
}

#[test]
fn invalid_synthetic_counts() {
    for (n, c, s) in [(2, 2, 16), (5, 3, 16), (5, 2, 4)] {
        let cfg = SynthConfig {
            num_per_class: n,
            num_classes: c,
            hardness: Hardness::Easy,
            image_size: s,
            seed: 0,
        };
        assert!(matches!(synth_fire_dataset(&cfg), Err(Error::InvalidParameter(_))));
    }
}

fn channel_means(d: &Dataset, i: usize) -> [f64; 3] {
    let hw = d.image_size() * d.image_size();
    let p = d.pixels(i);
    [0, 1, 2].map(|c| p[c * hw..(c + 1) * hw].iter().map(|&v| v as f64).sum::<f64>() / hw as f64)
}

#[test]
fn easy_fire_is_redder() {
    let d = synth(100, 2, Hardness::Easy, 64, 2);
    let mean_red = |label: usize| {
        let ids: Vec<usize> = (0..d.len()).filter(|&i| d.label(i) == label).collect();
        ids.iter().map(|&i| channel_means(&d, i)[0]).sum::<f64>() / ids.len() as f64
    };
    let diff = mean_red(0) - mean_red(1);
    assert!(diff > 0.05, "mean red difference {diff}");
}

/// Solve the normal equations of a least-squares fit by Gaussian elimination.
fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = x[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
            a[i][k] += row[i] * t;
        }
    }
    for col in 0..k {
        let pivot = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, pivot);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..k).map(|i| a[i][k] / a[i][i]).collect()
}

#[test]
fn easy_mode_is_separable_by_a_linear_probe() {
    let d = synth(100, 2, Hardness::Easy, 64, 3);
    let x: Vec<Vec<f64>> = (0..d.len())
        .map(|i| {
            let m = channel_means(&d, i);
            vec![1.0, m[0], m[1], m[2]]
        })
        .collect();
    let y: Vec<f64> = (0..d.len()).map(|i| if d.label(i) == 0 { 1.0 } else { -1.0 }).collect();
    let w = least_squares(&x, &y);
    let correct = x
        .iter()
        .zip(&y)
        .filter(|(row, &t)| row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().signum() == t)
        .count();
    let acc = correct as f64 / y.len() as f64;
    assert!(acc >= 0.9, "probe accuracy {acc}");
}

// ---- batching ----

#[test]
fn batches_partition_the_split() {
    let d = synth(20, 2, Hardness::Easy, 8, 0).split(DEFAULT_FRACTIONS, 0).unwrap();
    let train: HashSet<usize> = d.indices(Split::Train).into_iter().collect();
    let mut seen = HashSet::new();
    for b in d.batches(Split::Train, 5, 1, 0).unwrap() {
        assert_eq!(b.images.shape()[1..], [3, 8, 8]);
        assert_eq!(b.labels.len(), b.ids.len());
        for (&i, &l) in b.ids.iter().zip(&b.labels) {
            assert!(seen.insert(i), "duplicate {i}");
            assert_eq!(d.label(i), l);
        }
    }
    assert_eq!(seen, train);
}

#[test]
fn partial_last_batch_is_kept() {
    let d = synth(5, 2, Hardness::Easy, 8, 0);
    let sizes: Vec<usize> = d.batches(Split::Train, 4, 0, 0).unwrap().map(|b| b.ids.len()).collect();
    assert_eq!(sizes, vec![4, 4, 2]);
    assert_eq!(d.batches(Split::Train, 4, 0, 0).unwrap().num_batches(), 3);
}

#[test]
fn epoch_orders_are_seeded() {
    let d = synth(10, 2, Hardness::Easy, 8, 0);
    let order = |seed, epoch| d.batches(Split::Train, 3, seed, epoch).unwrap().order().to_vec();
    assert_eq!(order(4, 0), order(4, 0));
    assert_ne!(order(4, 0), order(4, 1));
    assert_ne!(order(4, 0), order(5, 0));
    let in_order: Vec<usize> = d.batches_in_order(Split::Train, 3).unwrap().flat_map(|b| b.ids).collect();
    assert_eq!(in_order, (0..20).collect::<Vec<_>>());
}

#[test]
fn empty_split_and_zero_batch() {
    let d = synth(5, 2, Hardness::Easy, 8, 0);
    assert!(matches!(d.batches(Split::Val, 4, 0, 0), Err(Error::EmptyDataset(_))));
    assert!(matches!(d.batches(Split::Train, 0, 0, 0), Err(Error::InvalidParameter(_))));
}
