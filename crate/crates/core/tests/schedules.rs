mod common;

use common::*;
use proptest::prelude::*;
use sprecher::block::ForwardMode;
use sprecher::splines::SplineKind;

fn max_abs_diff(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn parallel_and_sequential_agree_on_random_nets() {
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let arch = random_arch(&mut r, 9);
        let cfg = random_config(&mut r, true, &[SplineKind::Pwl, SplineKind::Pchip]);
        let net = random_net(&mut r, &arch, &cfg);
        let x = uniform(&mut r, 17, arch.d_in, -0.2, 1.2);
        let par = net.forward(&x, ForwardMode::Parallel).unwrap();
        for chunk in [1, 2, 5, 64] {
            let seq = net.forward(&x, ForwardMode::Sequential { chunk }).unwrap();
            assert!(
                max_abs_diff(&par, &seq) <= 1e-12,
                "seed {seed} chunk {chunk}"
            );
        }
    }
}

#[test]
fn parallel_and_sequential_agree_per_block() {
    for seed in 0..100 {
        let mut r = rng(5000 + seed);
        let arch = random_arch(&mut r, 12);
        let cfg = random_config(&mut r, false, &[SplineKind::Pwl, SplineKind::Pchip]);
        let net = random_net(&mut r, &arch, &cfg);
        let block = &net.blocks[0];
        let x = uniform(&mut r, 9, block.d_in, 0.0, 1.0);
        let par = block.forward(&x, ForwardMode::Parallel).unwrap();
        let seq = block
            .forward(&x, ForwardMode::Sequential { chunk: 3 })
            .unwrap();
        assert!(max_abs_diff(&par, &seq) <= 1e-12, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chunk_size_never_changes_outputs(seed in 0u64..10_000, chunk in 1usize..40) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r, 8);
        let cfg = random_config(&mut r, true, &[SplineKind::Pwl, SplineKind::Pchip]);
        let net = random_net(&mut r, &arch, &cfg);
        let x = uniform(&mut r, 5, arch.d_in, 0.0, 1.0);
        let a = net.forward(&x, ForwardMode::Sequential { chunk: 1 }).unwrap();
        let b = net.forward(&x, ForwardMode::Sequential { chunk }).unwrap();
        prop_assert!(max_abs_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn rows_are_independent_without_batch_statistics(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r, 6);
        let cfg = random_config(&mut r, false, &[SplineKind::Pwl]);
        let net = random_net(&mut r, &arch, &cfg);
        let x = uniform(&mut r, 6, arch.d_in, 0.0, 1.0);
        let all = net.forward(&x, ForwardMode::default()).unwrap();
        let one = net.forward(&x.slice(ndarray::s![2..3, ..]).to_owned(), ForwardMode::default()).unwrap();
        prop_assert!(max_abs_diff(&all.slice(ndarray::s![2..3, ..]).to_owned(), &one) <= 1e-12);
    }
}
