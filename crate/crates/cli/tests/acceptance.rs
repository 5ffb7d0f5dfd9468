//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::time::Instant;

use common::*;
use ndarray::Array2;
use rand::Rng;
use sprecher::block::{BnMode, ForwardMode, ResidualKind, Topology};
use sprecher::network::{lan_expand_check, Architecture, NetConfig, SprecherNetwork};
use sprecher::quantize::{quantize_model, with_running_stats, Model};
use sprecher::splines::{GeneralSpline, Interval, KnotGrid, MonotoneSpline, SplineKind};
use sprecher::train::{backward_with, LossKind, Targets};
use sprecher_cli::presets;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn list(v: &[f64], f: fn(f64) -> String) -> String {
    v.iter().map(|&x| f(x)).collect::<Vec<_>>().join(", ")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c1_param_counts() -> Verdict {
    let t = Instant::now();
    let rows = sprecher_cli::params_rows(None, 5).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let sn: Vec<usize> = rows.iter().map(|r| r.1[3]).collect();
    let ok = sn == [1612, 3148, 6220, 12364, 24652, 49228]
        && rows[0].1[0] == 559_105
        && rows[0].1[1] == 2_787_840
        && secs < 1.0;
    verdict(
        ok,
        format!(
            "SN {sn:?}, MLP {}, KAN {}, {secs:.3}s",
            rows[0].1[0], rows[0].1[1]
        ),
    )
}

fn c2_schedules() -> Verdict {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut r = rng(seed);
        let arch = random_arch(&mut r, 16);
        let cfg = random_config(&mut r, true, &[SplineKind::Pwl, SplineKind::Pchip]);
        let net = random_net(&mut r, &arch, &cfg);
        let x = uniform(&mut r, 64, arch.d_in, -0.2, 1.2);
        let a = net.forward(&x, ForwardMode::Parallel).unwrap();
        let b = net
            .forward(&x, ForwardMode::Sequential { chunk: 1 })
            .unwrap();
        worst = a
            .iter()
            .zip(&b)
            .map(|(u, v)| (u - v).abs())
            .fold(worst, f64::max);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-12 && secs < 10.0,
        format!("max diff {worst:.2e} over 100 nets, {secs:.2}s"),
    )
}

fn c3_gradients() -> Verdict {
    let t = Instant::now();
    let (mut worst, mut nets, mut largest) = (0.0f64, 0, 0);
    let mut seed = 0;
    while nets < 12 {
        seed += 1;
        let mut r = rng(5_000 + seed);
        let arch = random_arch(&mut r, 5);
        let cfg = random_config(&mut r, nets % 2 == 1, &[SplineKind::Pwl, SplineKind::Pchip]);
        let net = random_net(&mut r, &arch, &cfg);
        if net.n_params() > 500 {
            continue;
        }
        nets += 1;
        largest = largest.max(net.n_params());
        let x = uniform(&mut r, 10, arch.d_in, 0.0, 1.0);
        let y = Targets::Values(uniform(&mut r, 10, arch.d_out, -1.0, 1.0));
        let bn = net.has_bn().then_some(BnMode::TrainBatchStats);
        let g = backward_with(&net, &x, &y, LossKind::Mse, bn)
            .unwrap()
            .grads
            .flatten();
        for (i, &a) in g.iter().enumerate() {
            let n = central_difference(&net, &x, &y, i, 1e-6);
            worst = worst.max((a - n).abs() / n.abs().max(1e-8));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-5 && secs < 60.0,
        format!("max rel error {worst:.2e} over {nets} nets (<= {largest} params), {secs:.1}s"),
    )
}

fn c4_domains() -> Verdict {
    let t = Instant::now();
    let mut bad = 0;
    for seed in 0..20 {
        let net = random_unnormalized(seed, 8);
        let mut r = rng(77 + seed);
        let x = uniform(&mut r, 10_000, net.d_in(), 0.0, 1.0);
        bad += violations(&net, &x);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        bad == 0 && secs < 60.0,
        format!("{bad} violations over 20 nets x 10^4 inputs, {secs:.1}s"),
    )
}

fn c5_resampling() -> Verdict {
    let mut r = rng(55);
    let mut resample_err: f64 = 0.0;
    for _ in 0..50 {
        let count = r.random_range(2..20);
        let grid =
            KnotGrid::new(r.random_range(-3.0..0.0), r.random_range(0.5..4.0), count).unwrap();
        let s = GeneralSpline::new(
            grid,
            (0..count).map(|_| r.random_range(-5.0..5.0)).collect(),
            SplineKind::Pwl,
        );
        let k = r.random_range(1..6);
        let (left, right) = (r.random_range(0..4), r.random_range(0..4));
        let h = grid.step() / k as f64;
        let fine = KnotGrid::new(
            grid.lo - left as f64 * h,
            grid.hi + right as f64 * h,
            (count - 1) * k + 1 + left + right,
        )
        .unwrap();
        let t = s.resample(fine);
        for _ in 0..1000 {
            let x = grid.lo + r.random::<f64>() * (grid.hi - grid.lo);
            resample_err = resample_err.max((t.eval(x) - s.eval(x)).abs());
        }
    }
    let mut range_err: f64 = 0.0;
    for case in 0..40 {
        let kind = if case % 2 == 0 {
            SplineKind::Pwl
        } else {
            SplineKind::Pchip
        };
        let count = r.random_range(3..12);
        let grid = KnotGrid::new(-1.0, 2.0, count).unwrap();
        let g = GeneralSpline::new(
            grid,
            (0..count).map(|_| r.random_range(-3.0..3.0)).collect(),
            kind,
        );
        let m = MonotoneSpline::from_raw(
            grid,
            (0..count).map(|_| r.random_range(-2.0..2.0)).collect(),
            kind,
        );
        let a = r.random_range(-2.0..2.5);
        let iv = Interval::new(a, a + r.random_range(0.0..2.0));
        let got = g.range_on(iv);
        let (lo, hi) = sampled_range(|x| g.eval(x), iv.lo, iv.hi, &grid.knots());
        range_err = range_err.max((got.lo - lo).abs()).max((got.hi - hi).abs());
        let got = m.range_on(iv);
        let (lo, hi) = sampled_range(|x| m.eval(x), iv.lo, iv.hi, &grid.knots());
        range_err = range_err.max((got.lo - lo).abs()).max((got.hi - hi).abs());
    }
    verdict(
        resample_err <= 1e-12 && range_err <= 1e-9,
        format!("resample error {resample_err:.2e}, range error {range_err:.2e}"),
    )
}

fn c6_toy2d(nets: &mut Vec<SprecherNetwork>) -> Verdict {
    let mut best = Vec::new();
    for seed in 0..3 {
        let out = presets::run_recipe(&presets::table2_headline().with_seed(seed)).unwrap();
        best.push(out.record.best_metric);
        nets.push(out.net);
    }
    let m = mean(&best);
    verdict(
        m <= 5e-3,
        format!(
            "mean best eval MSE {m:.3e} (seeds {})",
            list(&best, |x| format!("{x:.3e}"))
        ),
    )
}

fn c7_mixing() -> Verdict {
    let run = |mix: bool| -> Vec<f64> {
        (0..3)
            .map(|s| {
                let r = presets::mixing_plateau(mix, presets::PLATEAU_EPOCHS).with_seed(s);
                presets::run_recipe(&r).unwrap().record.best_metric
            })
            .collect()
    };
    let (with, without) = (run(true), run(false));
    let (a, b) = (mean(&with), mean(&without));
    verdict(
        a <= 0.5 * b,
        format!(
            "mixing {a:.4} vs none {b:.4}, ratio {:.3} (per seed {} vs {})",
            a / b,
            list(&with, |x| format!("{x:.3}")),
            list(&without, |x| format!("{x:.3}"))
        ),
    )
}

fn c8_capacity() -> Verdict {
    let out = presets::run_recipe(&presets::capacity(2048)).unwrap();
    let first = out.history.initial_loss().unwrap();
    let best = out.history.best_loss().unwrap();
    verdict(
        first / best >= 10.0,
        format!("loss {first:.3e} -> best {best:.3e} ({:.1}x)", first / best),
    )
}

fn c9_lan() -> Verdict {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut r = rng(9_000 + seed);
        let arch = random_arch(&mut r, 9);
        let mut cfg = random_config(&mut r, false, &[SplineKind::Pwl, SplineKind::Pchip]);
        cfg.mixing = Topology::None;
        cfg.residual = ResidualKind::None;
        let net = random_net(&mut r, &arch, &cfg);
        let block = &net.blocks[r.random_range(0..net.blocks.len())];
        let x = uniform(&mut r, 200, block.d_in, -0.5, 1.5);
        worst = worst.max(lan_expand_check(block, &x).unwrap());
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-12 && secs < 5.0,
        format!("max error {worst:.2e} over 50 blocks, {secs:.2}s"),
    )
}

/// Max abs difference between the float model (running statistics) and its
/// Q16.16 version at 1000 uniform probes.
fn quantization_error(net: &SprecherNetwork, r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let x = uniform(r, 1000, net.d_in(), 0.0, 1.0);
    let want = with_running_stats(net)
        .forward(&x, ForwardMode::default())
        .unwrap();
    let got = quantize_model(net).unwrap().forward_batch(&x);
    want.iter()
        .zip(&got)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn c10_fixed_point(complex: &SprecherNetwork) -> Verdict {
    let mut r = rng(10);
    let toy = presets::run_recipe(&presets::toy2d(presets::TOY2D_EPOCHS))
        .unwrap()
        .net;
    let toy_err = quantization_error(&toy, &mut r);
    let complex_err = quantization_error(complex, &mut r);
    let q = quantize_model(&toy).unwrap();

    let wide = SprecherNetwork::build(
        &Architecture::parse("784->[100,100]->10").unwrap(),
        &NetConfig::default(),
        0.0,
    )
    .unwrap();
    let wq = quantize_model(&wide).unwrap();
    let x: Array2<f64> = uniform(&mut r, 10_000, 784, 0.0, 1.0);
    let a = wide.forward(&x, ForwardMode::default()).unwrap();
    let b = wq.forward_batch(&x);
    let argmax = |row: ndarray::ArrayView1<f64>| {
        (0..row.len()).fold(0, |m, j| if row[j] > row[m] { j } else { m })
    };
    let agree = (0..x.nrows())
        .filter(|&i| argmax(a.row(i)) == argmax(b.row(i)))
        .count() as f64
        / x.nrows() as f64;

    let dir = tempfile::tempdir().unwrap();
    let mut exact = true;
    for (i, m) in [Model::Float(toy.clone()), Model::Quantized(q)]
        .into_iter()
        .enumerate()
    {
        let path = dir.path().join(format!("{i}.sprn"));
        m.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = Model::load(&path).unwrap();
        exact &= back == m && back.to_bytes() == bytes;
    }
    verdict(
        toy_err <= 1e-2 && agree >= 0.99 && exact,
        format!(
            "toy2d max error {toy_err:.2e} (toy2d-complex {complex_err:.2e}), argmax agreement {:.2}%, byte roundtrip {exact}",
            100.0 * agree
        ),
    )
}

fn c11_lipschitz() -> Verdict {
    let failures: Vec<String> = (0..20)
        .filter_map(|seed| {
            lipschitz_violation(&random_unnormalized(900 + seed, 7), seed)
                .map(|m| format!("net {seed} {m}"))
        })
        .collect();
    let blocks: usize = (0..20)
        .map(|s| random_unnormalized(900 + s, 7).blocks.len())
        .sum();
    verdict(
        failures.is_empty(),
        format!(
            "{} violations over {blocks} blocks in 20 nets {failures:?}",
            failures.len()
        ),
    )
}

#[test]
fn acceptance() {
    let mut toy_nets = Vec::new();
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, v: Verdict| {
        // Written to the handle directly so the line survives output capture.
        let verdict = if v.pass { "PASS" } else { "FAIL" };
        let line = format!("criterion {n:>2} {name}: {verdict} ({})\n", v.detail);
        let mut out = std::io::stdout().lock();
        out.write_all(line.as_bytes()).unwrap();
        out.flush().unwrap();
        if !v.pass {
            failed.push(n);
        }
    };
    report(1, "parameter counts", c1_param_counts());
    report(2, "forward schedules", c2_schedules());
    report(3, "gradients", c3_gradients());
    report(4, "domain soundness", c4_domains());
    report(5, "resampling and ranges", c5_resampling());
    report(6, "toy2d-complex residual row", c6_toy2d(&mut toy_nets));
    report(7, "lateral mixing plateau", c7_mixing());
    report(8, "capacity trainability", c8_capacity());
    report(9, "two-layer expansion", c9_lan());
    report(10, "fixed-point fidelity", c10_fixed_point(&toy_nets[0]));
    report(11, "lipschitz bound", c11_lipschitz());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
