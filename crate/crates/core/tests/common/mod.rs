#![allow(dead_code)]

pub mod dd;
pub mod reference;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sprecher::block::{BnMode, ForwardMode, QGridStyle, ResidualKind, Topology};
use sprecher::domains::BoundsConfig;
use sprecher::network::{
    Architecture, BnPlacement, HeadInit, NetConfig, Nonlinearity, SprecherNetwork,
};
use sprecher::splines::{Interval, SplineKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

pub fn random_arch(rng: &mut ChaCha8Rng, max_width: usize) -> Architecture {
    let d_in = rng.random_range(1..=3);
    let depth = rng.random_range(1..=3);
    let hidden = (0..depth)
        .map(|_| rng.random_range(1..=max_width))
        .collect();
    let d_out = if rng.random_bool(0.5) {
        1
    } else {
        rng.random_range(2..=3)
    };
    Architecture::new(d_in, hidden, d_out).unwrap()
}

/// Random configuration; `bn` enables normalization choices.
pub fn random_config(rng: &mut ChaCha8Rng, bn: bool, kinds: &[SplineKind]) -> NetConfig {
    let pick = |rng: &mut ChaCha8Rng, n: usize| rng.random_range(0..n);
    NetConfig {
        nonlinearity: if rng.random_bool(0.15) {
            Nonlinearity::Prelu
        } else {
            Nonlinearity::Spline
        },
        phi_kind: kinds[pick(rng, kinds.len())],
        outer_kind: kinds[pick(rng, kinds.len())],
        phi_knots: rng.random_range(4..=12),
        outer_knots: rng.random_range(4..=12),
        codomain: rng.random_bool(0.5),
        mixing: [Topology::None, Topology::Cyclic, Topology::Bidirectional][pick(rng, 3)],
        tau_init: rng.random_range(-0.5..0.5),
        omega_init: rng.random_range(-0.5..0.5),
        residual: [
            ResidualKind::None,
            ResidualKind::Cyclic,
            ResidualKind::Linear,
        ][pick(rng, 3)],
        residual_init: rng.random_range(-0.5..0.5),
        bn: if bn {
            [BnPlacement::None, BnPlacement::Before, BnPlacement::After][pick(rng, 3)]
        } else {
            BnPlacement::None
        },
        bn_skip_first: rng.random_bool(0.5),
        bn_eval: BnMode::EvalBatchStatsFrozen,
        q_grid: if rng.random_bool(0.5) {
            QGridStyle::Index
        } else {
            QGridStyle::Symmetric
        },
        alpha: 1.0,
        head: [HeadInit::None, HeadInit::Regression, HeadInit::Unit][pick(rng, 3)],
        output_block: rng.random_bool(0.3),
        margin: 0.1,
        seed: rng.random(),
    }
}

/// Built network with every parameter jittered so no map stays at its
/// initial shape.
pub fn random_net(rng: &mut ChaCha8Rng, arch: &Architecture, cfg: &NetConfig) -> SprecherNetwork {
    let mut net = SprecherNetwork::build(arch, cfg, 0.3).unwrap();
    let p: Vec<f64> = net
        .params()
        .iter()
        .map(|v| v + rng.random_range(-0.2..0.2))
        .collect();
    net.set_params(&p);
    net
}

/// Central difference of the loss at `h`, computed on the reference model in
/// double-double precision so cancellation noise stays far below the
/// gradients being checked.
pub fn central_difference(
    net: &SprecherNetwork,
    x: &Array2<f64>,
    targets: &sprecher::train::Targets,
    index: usize,
    h: f64,
) -> f64 {
    use dd::{Dd, Real};
    let batch_stats = net.has_bn();
    let base: Vec<Dd> = net.params().iter().map(|&v| Dd::of(v)).collect();
    let eval = |p: &[Dd]| {
        let out = reference::forward(net, p, x, batch_stats);
        match targets {
            sprecher::train::Targets::Values(y) => reference::mse(&out, y),
            sprecher::train::Targets::Labels(l) => reference::cross_entropy(&out, l),
        }
    };
    let mut up = base.clone();
    up[index] = up[index] + Dd::of(h);
    let mut down = base;
    down[index] = down[index] - Dd::of(h);
    ((eval(&up) - eval(&down)) / Dd::of(2.0 * h)).to_f64()
}

pub const TOL: f64 = 1e-9;

pub fn inside(iv: &Interval, v: f64) -> bool {
    iv.contains(v, TOL * (1.0 + v.abs()))
}

pub fn random_unnormalized(seed: u64, max_width: usize) -> SprecherNetwork {
    let mut r = rng(seed);
    let arch = random_arch(&mut r, max_width);
    let mut cfg = random_config(&mut r, false, &[SplineKind::Pwl, SplineKind::Pchip]);
    cfg.bn = BnPlacement::None;
    cfg.margin = 0.0;
    random_net(&mut r, &arch, &cfg)
}

/// Counts samples falling outside any reported interval.
pub fn violations(net: &SprecherNetwork, x: &Array2<f64>) -> usize {
    let report = net.domain_report(&BoundsConfig {
        margin: 0.0,
        ..BoundsConfig::default()
    });
    let mut bad = 0;
    for (l, t) in net.trace(x).unwrap().iter().enumerate() {
        let b = &net.blocks[l];
        let d = &report.blocks[l];
        for row in t.input.rows() {
            for &q in &b.q_grid {
                bad += row
                    .iter()
                    .filter(|&&v| !inside(&d.phi_domain, v + b.eta * q))
                    .count();
            }
        }
        for row in t.preact.rows() {
            for (q, &v) in row.iter().enumerate() {
                bad += usize::from(!inside(&d.preact[q], v) || !inside(&d.outer_domain, v));
            }
        }
        for row in t.output.rows() {
            bad += row
                .iter()
                .zip(&d.output)
                .filter(|(&v, iv)| !inside(iv, v))
                .count();
        }
    }
    let y = net.forward(x, ForwardMode::default()).unwrap();
    for row in y.rows() {
        bad += row
            .iter()
            .zip(&report.network_output)
            .filter(|(&v, iv)| !inside(iv, v))
            .count();
    }
    bad
}

/// Dense sampling plus golden-section refinement near the best samples.
pub fn sampled_range(f: impl Fn(f64) -> f64, lo: f64, hi: f64, extra: &[f64]) -> (f64, f64) {
    let n = 20_000;
    let mut xs: Vec<f64> = (0..=n)
        .map(|k| lo + (hi - lo) * k as f64 / n as f64)
        .collect();
    xs.extend(extra.iter().copied().filter(|&x| x >= lo && x <= hi));
    let h = (hi - lo) / n as f64;
    let refine = |x0: f64, sign: f64| {
        let (mut a, mut b) = ((x0 - h).max(lo), (x0 + h).min(hi));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if sign * f(c) > sign * f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        f(0.5 * (a + b))
    };
    let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut amn, mut amx) = (lo, lo);
    for &x in &xs {
        let v = f(x);
        if v < mn {
            (mn, amn) = (v, x);
        }
        if v > mx {
            (mx, amx) = (v, x);
        }
    }
    (mn.min(refine(amn, -1.0)), mx.max(refine(amx, 1.0)))
}

/// First block whose sampled sup-norm slope exceeds its computed Lipschitz
/// constant, using 10^4 pairs per block (half of them close together).
pub fn lipschitz_violation(net: &SprecherNetwork, seed: u64) -> Option<String> {
    use sprecher::domains::{lipschitz_compose_bound, propagate};
    let report = propagate(
        net,
        &vec![Interval::new(0.0, 1.0); net.d_in()],
        &BoundsConfig::default(),
    );
    let (consts, _) = lipschitz_compose_bound(net, &report, &vec![0.0; net.blocks.len()]);
    let mut r = rng(seed);
    for (l, block) in net.blocks.iter().enumerate() {
        let input = &report.blocks[l].input;
        let draw = |r: &mut ChaCha8Rng| {
            Array2::from_shape_fn((10_000, block.d_in), |(_, i)| {
                let iv = input[i];
                iv.lo + r.random::<f64>() * iv.width()
            })
        };
        let a = draw(&mut r);
        let mut b = draw(&mut r);
        for k in 0..5_000 {
            for i in 0..block.d_in {
                let iv = input[i];
                b[[k, i]] =
                    (a[[k, i]] + 1e-3 * iv.width() * (r.random::<f64>() - 0.5)).clamp(iv.lo, iv.hi);
            }
        }
        let ya = block.forward(&a, ForwardMode::default()).unwrap();
        let yb = block.forward(&b, ForwardMode::default()).unwrap();
        for k in 0..10_000 {
            let dx = (0..block.d_in)
                .map(|i| (a[[k, i]] - b[[k, i]]).abs())
                .fold(0.0, f64::max);
            if dx < 1e-12 {
                continue;
            }
            let dy = (0..block.d_out)
                .map(|q| (ya[[k, q]] - yb[[k, q]]).abs())
                .fold(0.0, f64::max);
            // Slack for rounding in the two outputs being subtracted.
            let scale = (0..block.d_out)
                .map(|q| ya[[k, q]].abs().max(yb[[k, q]].abs()))
                .fold(1.0, f64::max);
            let slack = 64.0 * f64::EPSILON * scale;
            if dy > consts[l].l_t * dx * (1.0 + 1e-12) + slack {
                return Some(format!("block {l}: {} > {}", dy / dx, consts[l].l_t));
            }
        }
    }
    None
}
