use mvkd_tensor::{Init, Rng, Stream, Tensor};
use proptest::prelude::*;

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..9,
        seed in any::<u64>(),
        t in prop::sample::select(vec![0.5, 1.0, 2.0, 10.0]),
    ) {
        let mut rng = Rng::new(seed).stream(Stream::Aux);
        let z = Tensor::<f64>::create(&[rows, cols], Init::Normal { mean: 0.0, std: 5.0, rng: &mut rng }).unwrap();
        let p = z.softmax(t).unwrap();
        for (zr, pr) in z.data().chunks(cols).zip(p.data().chunks(cols)) {
            let s: f64 = pr.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(pr.iter().all(|&v| v > 0.0));
            prop_assert_eq!(argmax(zr), argmax(pr));
        }
    }

    #[test]
    fn fold_inverts_unfold_exactly(
        b in 1usize..3,
        c in 1usize..4,
        hp in 1usize..4,
        wp in 1usize..4,
        p in 1usize..4,
        seed in any::<u64>(),
    ) {
        let (h, w) = (hp * p, wp * p);
        let mut rng = Rng::new(seed).stream(Stream::Aux);
        let x = Tensor::<f32>::create(&[b, c, h, w], Init::Normal { mean: 0.0, std: 1.0, rng: &mut rng }).unwrap();
        let u = x.unfold_patches(p).unwrap();
        prop_assert_eq!(u.shape(), &[b, hp * wp, p * p, c][..]);
        let back = u.fold_patches(p, h, w).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&x));
    }

    #[test]
    fn identical_seeds_give_identical_ops(seed in any::<u64>()) {
        let run = || {
            let mut rng = Rng::new(seed).stream(Stream::Init);
            let x = Tensor::<f32>::create(&[2, 3, 6, 6], Init::Normal { mean: 0.0, std: 1.0, rng: &mut rng }).unwrap();
            let w = Tensor::<f32>::create(&[4, 3, 3, 3], Init::Uniform { low: -1.0, high: 1.0, rng: &mut rng }).unwrap();
            let y = x.conv2d(&w, None, 1, 1, 1).unwrap().silu().global_avg_pool().unwrap().softmax(2.0).unwrap();
            y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn degenerate_single_patch() {
    let x = Tensor::<f64>::from_f64(&(0..16).map(f64::from).collect::<Vec<_>>(), &[1, 1, 4, 4]).unwrap();
    let u = x.unfold_patches(4).unwrap();
    assert_eq!(u.shape(), &[1, 1, 16, 1]);
    assert_eq!(u.data(), x.data());
}
