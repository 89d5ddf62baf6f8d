//! Block-level behaviour checked against hand-written reference code.

use mvkd_core::nn::*;
use mvkd_core::Error;
use mvkd_tensor::{Activation, Init, Rng, Stream, StreamRng, Tensor, TensorError};

fn rng(seed: u64) -> StreamRng {
    Rng::new(seed).stream(Stream::Aux)
}

fn normal(shape: &[usize], rng: &mut StreamRng) -> Tensor<f64> {
    Tensor::create(shape, Init::Normal { mean: 0.0, std: 1.0, rng }).unwrap()
}

/// Parameters for `specs` with every entry drawn from N(0, 0.5²), so norms
/// and biases are not at their trivial initial values.
fn random_params(specs: &[ParamSpec], seed: u64) -> ParamStore<f64> {
    let mut r = rng(seed);
    let mut p = ParamStore::new();
    for s in specs {
        let t = Tensor::create(&s.shape, Init::Normal { mean: 0.0, std: 0.5, rng: &mut r }).unwrap();
        p.insert(&s.name, t).unwrap();
    }
    p
}

fn specs_of(f: impl FnOnce(&mut Vec<ParamSpec>)) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    f(&mut v);
    v
}

fn zero(p: &mut ParamStore<f64>, name: &str) {
    let shape = p.get(name).unwrap().shape().to_vec();
    p.replace(name, Tensor::zeros(&shape).unwrap()).unwrap();
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- reference implementations on plain vectors ----

/// Per-sample normalisation over groups of channels (the largest divisor of
/// C not above 4) followed by per-channel affine.
fn ref_norm(x: &[f64], b: usize, c: usize, hw: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let groups = (1..=4.min(c)).rev().find(|g| c % g == 0).unwrap();
    let m = (c / groups) * hw;
    let mut out = vec![0.0; x.len()];
    for g in 0..b * groups {
        let xs = &x[g * m..(g + 1) * m];
        let mean = xs.iter().sum::<f64>() / m as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        for i in 0..m {
            let ch = ((g * m + i) / hw) % c;
            out[g * m + i] = gamma[ch] * (xs[i] - mean) / (var + 1e-5).sqrt() + beta[ch];
        }
    }
    out
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

fn linear_ref(x: &[f64], w: &[f64], bias: &[f64], din: usize) -> Vec<f64> {
    let dout = bias.len();
    x.chunks(din)
        .flat_map(|row| (0..dout).map(move |o| bias[o] + (0..din).map(|i| w[o * din + i] * row[i]).sum::<f64>()))
        .collect()
}

fn ln_ref(x: &[f64], d: usize, g: &[f64], b: &[f64]) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            (0..d).map(move |j| g[j] * (row[j] - mean) / (var + 1e-5).sqrt() + b[j])
        })
        .collect()
}

/// Brute-force multi-head attention over `[B, N, d]`.
fn attention_ref(x: &[f64], b: usize, n: usize, d: usize, h: usize, p: &ParamStore<f64>, name: &str) -> Vec<f64> {
    let get = |s: &str| p.get(&format!("{name}.{s}")).unwrap().to_vec();
    let qkv = linear_ref(x, &get("qkv.weight"), &get("qkv.bias"), d);
    let dh = d / h;
    let mut ctx = vec![0.0; b * n * d];
    for bb in 0..b {
        for head in 0..h {
            for i in 0..n {
                let q = |t: usize, which: usize, k: usize| qkv[(bb * n + t) * 3 * d + which * d + head * dh + k];
                let scores: Vec<f64> = (0..n)
                    .map(|j| (0..dh).map(|k| q(i, 0, k) * q(j, 1, k)).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for k in 0..dh {
                    ctx[(bb * n + i) * d + head * dh + k] = (0..n).map(|j| e[j] / z * q(j, 2, k)).sum();
                }
            }
        }
    }
    linear_ref(&ctx, &get("out.weight"), &get("out.bias"), d)
}

// ---- inverted residual ----

#[test]
fn inverted_residual_zero_projection_is_identity() {
    let block = InvertedResidual::new("b", 4, 4, 1, 4).unwrap();
    assert!(block.has_residual());
    let mut p = random_params(&specs_of(|v| block.specs(v)), 1);
    zero(&mut p, "b.project.conv.weight");
    zero(&mut p, "b.project.norm.bias");
    let x = normal(&[2, 4, 6, 6], &mut rng(2));
    let y = block.forward(&p, &x).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn inverted_residual_stride_two_halves_and_drops_skip() {
    let block = InvertedResidual::new("b", 4, 4, 2, 2).unwrap();
    assert!(!block.has_residual());
    let p = random_params(&specs_of(|v| block.specs(v)), 3);
    let y = block.forward(&p, &normal(&[1, 4, 8, 6], &mut rng(4))).unwrap();
    assert_eq!(y.shape(), &[1, 4, 4, 3]);
    assert!(InvertedResidual::new("b", 4, 4, 3, 2).is_err());
}

#[test]
fn inverted_residual_matches_straight_line_composition() {
    for (cin, cout, stride) in [(3, 3, 1), (3, 5, 2), (2, 4, 1)] {
        let block = InvertedResidual::new("b", cin, cout, stride, 3).unwrap();
        let p = random_params(&specs_of(|v| block.specs(v)), 5);
        let x = normal(&[2, cin, 6, 6], &mut rng(6));
        let got = block.forward(&p, &x).unwrap();

        let w = |n: &str| p.get(n).unwrap().clone();
        let v = |n: &str| p.get(n).unwrap().to_vec();
        let hidden = cin * 3;
        let e = x.conv2d(&w("b.expand.conv.weight"), None, 1, 0, 1).unwrap();
        let e = ref_norm(e.data(), 2, hidden, 36, &v("b.expand.norm.weight"), &v("b.expand.norm.bias"));
        let e: Vec<f64> = e.into_iter().map(silu).collect();
        let e = Tensor::from_vec(e, &[2, hidden, 6, 6]).unwrap();
        let dw = e.conv2d(&w("b.dw.conv.weight"), None, stride, 1, hidden).unwrap();
        let s = 6 / stride;
        let dw = ref_norm(dw.data(), 2, hidden, s * s, &v("b.dw.norm.weight"), &v("b.dw.norm.bias"));
        let dw = Tensor::from_vec(dw.into_iter().map(silu).collect(), &[2, hidden, s, s]).unwrap();
        let pr = dw.conv2d(&w("b.project.conv.weight"), None, 1, 0, 1).unwrap();
        let mut expect = ref_norm(pr.data(), 2, cout, s * s, &v("b.project.norm.weight"), &v("b.project.norm.bias"));
        if stride == 1 && cin == cout {
            expect.iter_mut().zip(x.data()).for_each(|(a, b)| *a += b);
        }
        let err = max_abs_diff(got.data(), &expect);
        assert!(err < 1e-6, "({cin},{cout},{stride}) max diff {err}");
    }
}

// ---- attention ----

#[test]
fn attention_matches_brute_force() {
    for seed in 0..5 {
        let attn = MultiHeadAttention::new("a", 4, 2).unwrap();
        let p = random_params(&specs_of(|v| attn.specs(v)), seed);
        let x = normal(&[1, 3, 4], &mut rng(seed + 100));
        let (y, weights) = attn.forward_with_weights(&p, &x).unwrap();
        let expect = attention_ref(x.data(), 1, 3, 4, 2, &p, "a");
        assert!(max_abs_diff(y.data(), &expect) < 1e-6);
        assert_eq!(weights.shape(), &[1, 2, 3, 3]);
        for row in weights.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }
}

#[test]
fn attention_single_token_passes_values_through() {
    let attn = MultiHeadAttention::new("a", 6, 3).unwrap();
    let p = random_params(&specs_of(|v| attn.specs(v)), 7);
    let x = normal(&[2, 1, 6], &mut rng(8));
    let (y, w) = attn.forward_with_weights(&p, &x).unwrap();
    assert!(w.data().iter().all(|&v| v == 1.0));
    let qkv = linear_ref(x.data(), &p.get("a.qkv.weight").unwrap().to_vec(), &p.get("a.qkv.bias").unwrap().to_vec(), 6);
    let values: Vec<f64> = qkv.chunks(18).flat_map(|r| r[12..18].to_vec()).collect();
    let expect = linear_ref(&values, &p.get("a.out.weight").unwrap().to_vec(), &p.get("a.out.bias").unwrap().to_vec(), 6);
    assert!(max_abs_diff(y.data(), &expect) < 1e-12);
}

#[test]
fn identical_keys_give_uniform_attention() {
    let attn = MultiHeadAttention::new("a", 4, 2).unwrap();
    let mut p = random_params(&specs_of(|v| attn.specs(v)), 9);
    // Key rows (4..8) of the fused projection ignore the input.
    let mut w = p.get("a.qkv.weight").unwrap().to_vec();
    w[16..32].iter_mut().for_each(|v| *v = 0.0);
    p.replace("a.qkv.weight", Tensor::from_vec(w, &[12, 4]).unwrap()).unwrap();
    let x = normal(&[1, 2, 4], &mut rng(10));
    let (_, weights) = attn.forward_with_weights(&p, &x).unwrap();
    assert!(weights.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
}

#[test]
fn heads_must_divide_width() {
    assert!(matches!(MultiHeadAttention::new("a", 6, 4), Err(Error::InvalidConfig(_))));
    assert!(matches!(TransformerLayer::new("t", 10, 3, 8, Activation::Gelu), Err(Error::InvalidConfig(_))));
}

// ---- transformer layer ----

#[test]
fn transformer_layer_with_zero_output_projections_is_identity() {
    let layer = TransformerLayer::new("t", 8, 2, 16, Activation::Gelu).unwrap();
    let mut p = random_params(&specs_of(|v| layer.specs(v)), 11);
    for n in ["t.attn.out.weight", "t.attn.out.bias", "t.fc2.weight", "t.fc2.bias"] {
        zero(&mut p, n);
    }
    let x = normal(&[2, 5, 8], &mut rng(12));
    assert_eq!(layer.forward(&p, &x).unwrap().data(), x.data());
}

#[test]
fn transformer_layer_matches_manual_composition() {
    for (seed, act) in [(13, Activation::Gelu), (14, Activation::Silu)] {
        let layer = TransformerLayer::new("t", 4, 2, 6, act).unwrap();
        let p = random_params(&specs_of(|v| layer.specs(v)), seed);
        let x = normal(&[2, 3, 4], &mut rng(seed));
        let y = layer.forward(&p, &x).unwrap();
        assert_eq!(y.shape(), x.shape());

        let v = |n: &str| p.get(&format!("t.{n}")).unwrap().to_vec();
        let a = ln_ref(x.data(), 4, &v("ln1.weight"), &v("ln1.bias"));
        let a = attention_ref(&a, 2, 3, 4, 2, &p, "t.attn");
        let h: Vec<f64> = x.data().iter().zip(&a).map(|(x, a)| x + a).collect();
        let m = ln_ref(&h, 4, &v("ln2.weight"), &v("ln2.bias"));
        let m = linear_ref(&m, &v("fc1.weight"), &v("fc1.bias"), 4);
        let m: Vec<f64> = Tensor::from_vec(m, &[6, 6]).unwrap().activation(act).to_vec();
        let m = linear_ref(&m, &v("fc2.weight"), &v("fc2.bias"), 6);
        let expect: Vec<f64> = h.iter().zip(&m).map(|(h, m)| h + m).collect();
        assert!(max_abs_diff(y.data(), &expect) < 1e-6);
    }
}

// ---- MobileViT block ----

fn vit_config(channels: usize, kernel: usize) -> MobileVitConfig {
    MobileVitConfig {
        channels,
        dim: 8,
        mlp_dim: 12,
        depth: 2,
        heads: 2,
        patch: 2,
        local_kernel: kernel,
        fusion_kernel: kernel,
    }
}

#[test]
fn mobilevit_block_preserves_shape() {
    for (c, h, w) in [(3, 4, 4), (4, 6, 8), (2, 2, 2)] {
        let block = MobileVitBlock::new("m", vit_config(c, 3)).unwrap();
        let p = random_params(&specs_of(|v| block.specs(v)), 15);
        let x = normal(&[2, c, h, w], &mut rng(16));
        assert_eq!(block.forward(&p, &x).unwrap().shape(), x.shape());
    }
}

#[test]
fn mobilevit_block_rejects_indivisible_maps() {
    let block = MobileVitBlock::new("m", vit_config(3, 3)).unwrap();
    let p = random_params(&specs_of(|v| block.specs(v)), 17);
    let err = block.forward(&p, &normal(&[1, 3, 5, 4], &mut rng(18))).unwrap_err();
    assert!(matches!(err, Error::Tensor(TensorError::PatchMismatch { .. })));
}

#[test]
fn mobilevit_block_reduces_to_conv_path_without_transformer_residuals() {
    let block = MobileVitBlock::new("m", vit_config(3, 3)).unwrap();
    let mut p = random_params(&specs_of(|v| block.specs(v)), 19);
    for i in 0..2 {
        for n in ["attn.out.weight", "attn.out.bias", "fc2.weight", "fc2.bias"] {
            zero(&mut p, &format!("m.transformer.{i}.{n}"));
        }
    }
    let x = normal(&[2, 3, 4, 4], &mut rng(20));
    let got = block.forward(&p, &x).unwrap();

    let conv = |name: &str, t: &Tensor<f64>| {
        let w = p.get(&format!("m.{name}.conv.weight")).unwrap();
        let k = w.shape()[2];
        let y = t.conv2d(w, None, 1, k / 2, 1).unwrap();
        if !p.contains(&format!("m.{name}.norm.weight")) {
            return y;
        }
        let c = y.shape()[1];
        let n = ref_norm(
            y.data(),
            2,
            c,
            16,
            &p.get(&format!("m.{name}.norm.weight")).unwrap().to_vec(),
            &p.get(&format!("m.{name}.norm.bias")).unwrap().to_vec(),
        );
        Tensor::from_vec(n.into_iter().map(silu).collect(), y.shape()).unwrap()
    };
    let y = conv("proj_out", &conv("proj_in", &conv("local", &x)));
    let expect = conv("fusion", &Tensor::concat(&[x.clone(), y], 1).unwrap());
    assert!(max_abs_diff(got.data(), expect.data()) < 1e-9);
}

#[test]
fn mobilevit_block_is_equivariant_to_patch_swaps() {
    // 1x1 local conv, identity-like projections and a fusion conv summing
    // both halves: every conv acts per pixel, so only the transformer mixes
    // positions, and it mixes patches without positional information.
    let c = 2;
    let mut cfg = vit_config(c, 1);
    cfg.dim = c;
    cfg.heads = 1;
    let block = MobileVitBlock::new("m", cfg).unwrap();
    let mut p = random_params(&specs_of(|v| block.specs(v)), 21);
    let eye = |o: usize, i: usize| -> Tensor<f64> {
        let v: Vec<f64> = (0..o * i).map(|k| if k / i == k % i % o { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(v, &[o, i, 1, 1]).unwrap()
    };
    for name in ["local", "proj_in", "proj_out"] {
        p.replace(&format!("m.{name}.conv.weight"), eye(c, c)).unwrap();
    }
    p.replace("m.fusion.conv.weight", eye(c, 2 * c)).unwrap();

    let x = normal(&[1, c, 4, 6], &mut rng(22));
    // swap patch (0,0) with patch (1,2)
    let swap = |t: &Tensor<f64>| {
        let mut v = t.to_vec();
        for ch in 0..c {
            for i in 0..2 {
                for j in 0..2 {
                    let a = ch * 24 + i * 6 + j;
                    let b = ch * 24 + (2 + i) * 6 + 4 + j;
                    v.swap(a, b);
                }
            }
        }
        Tensor::from_vec(v, t.shape()).unwrap()
    };
    let y = block.forward(&p, &x).unwrap();
    let y_swapped = block.forward(&p, &swap(&x)).unwrap();
    assert!(max_abs_diff(swap(&y).data(), y_swapped.data()) < 1e-12);
    // and the transformer really does mix patches
    let mut lone = x.to_vec();
    lone[0] += 1.0;
    let y_changed = block.forward(&p, &Tensor::from_vec(lone, &[1, c, 4, 6]).unwrap()).unwrap();
    assert!(max_abs_diff(&y_changed.data()[20..24], &y.data()[20..24]) > 0.0);
}

// ---- patch embedding ----

#[test]
fn patch_embed_token_count_at_224() {
    let e = PatchEmbed::new("e", 3, (224, 224), 32, 8).unwrap();
    assert_eq!(e.num_patches(), 49);
    assert_eq!(e.num_tokens(), 50);
    let p = random_params(&specs_of(|v| e.specs(v)), 23);
    let x = Tensor::<f64>::zeros(&[1, 3, 224, 224]).unwrap();
    assert_eq!(e.forward(&p, &x).unwrap().shape(), &[1, 50, 8]);
    assert!(matches!(
        PatchEmbed::new("e", 3, (100, 96), 32, 8),
        Err(Error::Tensor(TensorError::PatchMismatch { .. }))
    ));
}

#[test]
fn zero_image_and_projection_give_positions() {
    let e = PatchEmbed::new("e", 3, (8, 8), 4, 6).unwrap();
    let mut p = random_params(&specs_of(|v| e.specs(v)), 24);
    zero(&mut p, "e.proj.weight");
    zero(&mut p, "e.proj.bias");
    let y = e.forward(&p, &Tensor::zeros(&[2, 3, 8, 8]).unwrap()).unwrap();
    let pos = p.get("e.pos_embed").unwrap().data().to_vec();
    let cls = p.get("e.cls_token").unwrap().data().to_vec();
    for sample in y.data().chunks(5 * 6) {
        assert_eq!(&sample[6..], &pos[6..]);
        let first: Vec<f64> = cls.iter().zip(&pos[..6]).map(|(a, b)| a + b).collect();
        assert_eq!(&sample[..6], &first[..]);
    }
}

#[test]
fn single_patch_token_is_projection_of_flattened_image() {
    let e = PatchEmbed::new("e", 3, (4, 4), 4, 5).unwrap();
    let p = random_params(&specs_of(|v| e.specs(v)), 25);
    let x = normal(&[1, 3, 4, 4], &mut rng(26));
    let y = e.forward(&p, &x).unwrap();
    assert_eq!(y.shape(), &[1, 2, 5]);
    let w = p.get("e.proj.weight").unwrap().to_vec();
    let b = p.get("e.proj.bias").unwrap().to_vec();
    let pos = p.get("e.pos_embed").unwrap().to_vec();
    // x is [C, H, W] row-major, which is exactly the flattening order
    let proj = linear_ref(x.data(), &w, &b, 48);
    let expect: Vec<f64> = proj.iter().zip(&pos[5..10]).map(|(a, b)| a + b).collect();
    assert!(max_abs_diff(&y.data()[5..10], &expect) < 1e-12);
}

#[test]
fn parameter_paths_are_unique() {
    let block = MobileVitBlock::new("m", vit_config(4, 3)).unwrap();
    let specs = specs_of(|v| block.specs(v));
    let mut names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n);
}
