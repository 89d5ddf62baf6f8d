use mvkd_core::models::*;
use mvkd_core::nn::ParamStore;
use mvkd_core::Error;
use mvkd_tensor::{Init, Rng, Stream, StreamRng, Tensor};

fn init_rng(seed: u64) -> StreamRng {
    Rng::new(seed).stream(Stream::Init)
}

fn images(b: usize, side: usize, seed: u64) -> Tensor<f32> {
    let mut r = Rng::new(seed).stream(Stream::Aux);
    Tensor::create(&[b, 3, side, side], Init::Uniform { low: 0.0, high: 1.0, rng: &mut r }).unwrap()
}

fn tiny_student() -> ModelConfig {
    ModelConfig::student_xs(3, (64, 64), 0.05).unwrap()
}

fn tiny_teacher() -> ModelConfig {
    let mut cfg = ModelConfig::teacher_vit32(3, (64, 64), 0.01).unwrap();
    if let Arch::Teacher(t) = &mut cfg.arch {
        t.depth = 2;
    }
    cfg
}

// closed-form parameter counts, written out independently of the builders
fn conv_norm(cin: usize, cout: usize, k: usize, groups: usize) -> usize {
    cout * (cin / groups) * k * k + 2 * cout
}

fn mv2(cin: usize, cout: usize, e: usize) -> usize {
    let h = cin * e;
    let expand = if e == 1 { 0 } else { conv_norm(cin, h, 1, 1) };
    expand + conv_norm(h, h, 3, h) + conv_norm(h, cout, 1, 1)
}

fn encoder_layer(d: usize, mlp: usize) -> usize {
    2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (mlp * d + mlp) + (d * mlp + d)
}

fn student_count(a: &StudentArch, classes: usize) -> usize {
    let e = a.expansion;
    let mut n = conv_norm(3, a.stem_channels, 3, 1) + mv2(a.stem_channels, a.layer1_channels, e);
    n += mv2(a.layer1_channels, a.layer2_channels, e) + (a.layer2_blocks - 1) * mv2(a.layer2_channels, a.layer2_channels, e);
    let mut prev = a.layer2_channels;
    for v in &a.vit_stages {
        let c = v.channels;
        n += mv2(prev, c, e);
        n += conv_norm(c, c, 3, 1) + c * v.dim + v.depth * encoder_layer(v.dim, v.mlp_dim);
        n += conv_norm(v.dim, c, 1, 1) + conv_norm(2 * c, c, 3, 1);
        prev = c;
    }
    n + conv_norm(prev, a.exp_channels, 1, 1) + a.exp_channels * classes + classes
}

fn teacher_count(a: &TeacherArch, input: (usize, usize), classes: usize) -> usize {
    let tokens = (input.0 / a.patch) * (input.1 / a.patch) + 1;
    let embed = a.dim * 3 * a.patch * a.patch + a.dim + a.dim + tokens * a.dim;
    embed + a.depth * encoder_layer(a.dim, a.mlp_dim) + 2 * a.dim + a.dim * classes + classes
}

#[test]
fn tiny_student_count_matches_closed_form() {
    let cfg = tiny_student();
    let a = cfg.student().unwrap();
    let widths = [a.stem_channels, a.layer1_channels, a.layer2_channels];
    assert!(widths.iter().chain(a.vit_stages.iter().map(|v| &v.channels)).all(|&c| c <= 8));
    let m = build_model(&cfg, &mut init_rng(0)).unwrap();
    assert_eq!(m.param_count(), student_count(a, 3));
}

#[test]
fn teacher_count_matches_closed_form() {
    let cfg = tiny_teacher();
    let m = build_model(&cfg, &mut init_rng(0)).unwrap();
    assert_eq!(m.param_count(), teacher_count(cfg.teacher().unwrap(), (64, 64), 3));
    let full = ModelConfig::teacher_vit32(12, (224, 224), 1.0).unwrap();
    let n: usize = param_specs(&full).unwrap().iter().map(|s| s.numel()).sum();
    assert_eq!(n, teacher_count(full.teacher().unwrap(), (224, 224), 12));
}

#[test]
fn single_linear_layer_has_fifteen_parameters() {
    let mut p = ParamStore::<f32>::new();
    p.insert("fc.weight", Tensor::zeros(&[3, 4]).unwrap()).unwrap();
    p.insert("fc.bias", Tensor::zeros(&[3]).unwrap()).unwrap();
    assert_eq!(p.param_count(), 15);
}

#[test]
fn unit_scale_size_ordering_and_footprint() {
    let count = |cfg: ModelConfig| param_specs(&cfg).unwrap().iter().map(|s| s.numel()).sum::<usize>();
    let s = count(ModelConfig::student_s(12, (256, 256), 1.0).unwrap());
    let xs = count(ModelConfig::student_xs(12, (256, 256), 1.0).unwrap());
    let t = count(ModelConfig::teacher_vit32(12, (224, 224), 1.0).unwrap());
    assert!(xs < s && s < t, "{xs} {s} {t}");
    let s_cfg = ModelConfig::student_s(12, (256, 256), 1.0).unwrap();
    assert_eq!(s, student_count(s_cfg.student().unwrap(), 12));
    let m = build_model(&s_cfg, &mut init_rng(0)).unwrap();
    let bytes = m.model_size_bytes().unwrap();
    assert!((18_000_000..=24_000_000).contains(&bytes), "{bytes}");
    assert!(bytes >= 4 * s);
}

#[test]
fn same_seed_same_parameters() {
    for cfg in [tiny_student(), tiny_teacher()] {
        let a = build_model(&cfg, &mut init_rng(42)).unwrap();
        let b = build_model(&cfg, &mut init_rng(42)).unwrap();
        let c = build_model(&cfg, &mut init_rng(43)).unwrap();
        let bits = |m: &Model| m.params().tensors().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }
}

#[test]
fn logits_shape_and_softmax_rows() {
    for cfg in [tiny_student(), tiny_teacher()] {
        let m = build_model(&cfg, &mut init_rng(1)).unwrap();
        let y = m.forward(&images(2, 64, 2), false).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        for row in y.softmax(1.0).unwrap().data().chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn wrong_input_size_is_a_shape_mismatch() {
    let m = build_model(&tiny_student(), &mut init_rng(1)).unwrap();
    let err = m.forward(&images(1, 32, 0), false).unwrap_err();
    assert!(matches!(err, Error::Tensor(mvkd_tensor::TensorError::ShapeMismatch { .. })));
}

#[test]
fn batch_rows_are_independent() {
    for cfg in [tiny_student(), tiny_teacher()] {
        let m = build_model(&cfg, &mut init_rng(3)).unwrap();
        let x = images(3, 64, 4);
        let y = m.forward(&x, true).unwrap();
        let per = 3 * 64 * 64;
        // reversed batch, and a batch with sample 1 duplicated
        let rev: Vec<f32> = (0..3).rev().flat_map(|i| x.data()[i * per..(i + 1) * per].to_vec()).collect();
        let yr = m.forward(&Tensor::from_vec(rev, &[3, 3, 64, 64]).unwrap(), true).unwrap();
        let dup: Vec<f32> = [1, 1].iter().flat_map(|&i| x.data()[i * per..(i + 1) * per].to_vec()).collect();
        let yd = m.forward(&Tensor::from_vec(dup, &[2, 3, 64, 64]).unwrap(), true).unwrap();
        let row = |t: &Tensor<f32>, i: usize| t.data()[i * 3..(i + 1) * 3].iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        for i in 0..3 {
            assert_eq!(row(&yr, 2 - i), row(&y, i));
        }
        assert_eq!(row(&yd, 0), row(&y, 1));
        assert_eq!(row(&yd, 1), row(&y, 1));
    }
}

#[test]
fn gradient_reaches_every_parameter() {
    for cfg in [tiny_student(), tiny_teacher()] {
        let m = build_model(&cfg, &mut init_rng(5)).unwrap();
        let logits = m.forward(&images(2, 64, 6), true).unwrap();
        let w = Tensor::from_vec(vec![1.0, -2.0, 0.5, 0.3, 1.5, -1.0], &[2, 3]).unwrap();
        logits.mul(&w).unwrap().sum_all().backward().unwrap();
        for (name, t) in m.params().iter() {
            let g = t.grad().unwrap_or_else(|| panic!("{name} has no gradient"));
            assert_eq!(g.len(), t.numel());
            if name.starts_with("head") || name.starts_with("stem") || name.starts_with("embed") {
                assert!(g.iter().any(|&v| v != 0.0), "{name} gradient is all zero");
            }
        }
    }
}

#[test]
fn teacher_has_no_spatial_taps() {
    let m = build_model(&tiny_teacher(), &mut init_rng(7)).unwrap();
    assert!(matches!(m.forward_tap(&images(1, 64, 0), "layer5"), Err(Error::InvalidTarget(_))));
    let s = build_model(&tiny_student(), &mut init_rng(7)).unwrap();
    let (logits, a) = s.forward_tap(&images(1, 64, 0), DEFAULT_CAM_LAYER).unwrap();
    assert_eq!(logits.shape(), &[1, 3]);
    assert_eq!(a.rank(), 4);
    assert!(matches!(s.forward_tap(&images(1, 64, 0), "head"), Err(Error::InvalidTarget(_))));
}

// ---- checkpoints ----

fn meta() -> CheckpointMeta {
    CheckpointMeta {
        epoch: 3,
        seed: 9,
        history: vec![EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_acc: 0.75,
            lr: 1e-4,
        }],
    }
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, cfg) in [tiny_student(), tiny_teacher()].into_iter().enumerate() {
        let m = build_model(&cfg, &mut init_rng(8)).unwrap();
        let path = dir.path().join(format!("m{i}.ckpt"));
        save_checkpoint(&m, &meta(), &path).unwrap();
        let (back, back_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back_meta, meta());
        let x = images(2, 64, 9);
        let a = m.forward(&x, false).unwrap();
        let b = back.forward(&x, false).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let (header, total) = read_checkpoint_header(&path).unwrap();
        assert_eq!(header.payload_bytes as usize, 4 * m.param_count());
        assert_eq!(total, std::fs::metadata(&path).unwrap().len());
    }
}

#[test]
fn checkpoint_directory_is_contiguous() {
    let m = build_model(&tiny_student(), &mut init_rng(10)).unwrap();
    let bytes = checkpoint_bytes(&m, &CheckpointMeta::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    std::fs::write(&path, &bytes).unwrap();
    let (h, _) = read_checkpoint_header(&path).unwrap();
    let mut end = 0;
    for (e, (name, t)) in h.tensors.iter().zip(m.params().iter()) {
        assert_eq!(e.name, name);
        assert_eq!(e.offset, end);
        end += e.size;
        assert_eq!(e.size as usize, 4 * t.numel());
    }
    assert_eq!(end, h.payload_bytes);
}

#[test]
fn bad_magic_is_a_format_error() {
    let m = build_model(&tiny_student(), &mut init_rng(11)).unwrap();
    let mut bytes = checkpoint_bytes(&m, &meta()).unwrap();
    bytes[..6].copy_from_slice(b"XXXXX\n");
    assert!(matches!(checkpoint_from_bytes(&bytes), Err(Error::FormatError(_))));
    assert!(matches!(checkpoint_from_bytes(b"MVK"), Err(Error::FormatError(_))));
}

#[test]
fn truncated_payload_is_corrupt() {
    let m = build_model(&tiny_student(), &mut init_rng(12)).unwrap();
    let bytes = checkpoint_bytes(&m, &meta()).unwrap();
    let short = &bytes[..bytes.len() - 4];
    assert!(matches!(checkpoint_from_bytes(short), Err(Error::CorruptCheckpoint(_))));
    assert!(matches!(checkpoint_from_bytes(&bytes[..10]), Err(Error::CorruptCheckpoint(_))));
}

#[test]
fn unknown_kind_is_unsupported() {
    let m = build_model(&tiny_student(), &mut init_rng(13)).unwrap();
    let bytes = checkpoint_bytes(&m, &meta()).unwrap();
    let len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[14..14 + len]).unwrap();
    let patched = header.replacen("\"kind\":\"student_xs\"", "\"kind\":\"convnext_b\"", 1);
    assert_ne!(patched, header);
    let mut out = b"MVKD1\n".to_vec();
    out.extend_from_slice(&(patched.len() as u64).to_le_bytes());
    out.extend_from_slice(patched.as_bytes());
    out.extend_from_slice(&bytes[14 + len..]);
    assert!(matches!(checkpoint_from_bytes(&out), Err(Error::UnsupportedModel(k)) if k == "convnext_b"));
}
