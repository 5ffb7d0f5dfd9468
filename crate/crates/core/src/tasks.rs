//! Synthetic regression tasks with closed-form targets.
//!
//! Every generator is a pure function of its [`TaskSpec`]: the same seed
//! reproduces the same data bit for bit. Tasks whose teacher has random
//! parameters draw them from a stream separate from the input samples.
//!
//! ```
//! use sprecher::tasks::{gen_task, TaskSpec};
//!
//! let spec = TaskSpec::preset("toy2d-complex").unwrap();
//! let (train, test) = gen_task(&spec).unwrap();
//! assert_eq!(train.len(), 1024);
//! assert_eq!(test.x.ncols(), 2);
//! ```

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as Gaussian};

use crate::error::{Error, Result};
use crate::train::{Dataset, Targets};

/// How inputs are placed in `[0, 1]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    IidUniform,
    /// `n` evenly spaced points including both ends.
    Grid1D,
    /// `√n × √n` mesh; `n` must be a perfect square.
    Grid2D,
}

/// Additive Gaussian observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub std: f64,
    /// Independent draws per output head; otherwise one draw per sample.
    pub per_head: bool,
}

/// A task and how to sample it. The training set uses `sampler`; the test
/// set is always drawn i.i.d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub sampler: Sampler,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: Option<Noise>,
    pub seed: u64,
}

/// Names accepted by [`TaskSpec::preset`].
pub const TASK_NAMES: &[&str] = &[
    "toy2d",
    "toy2d-complex",
    "toy2d-vector",
    "toy4to5",
    "capacity64",
    "softstair-wavepacket",
    "inputshift-bump",
    "shared-warped-ridge",
    "shared-warp-chirp",
    "motif-chirp",
    "oscillatory-headshift",
    "pwl-vs-pchip",
    "quantile-harmonics",
    "mqsi",
    "dense-headshift",
];

impl TaskSpec {
    /// Default sizes for a named task, seed 0.
    pub fn preset(name: &str) -> Result<TaskSpec> {
        use Sampler::*;
        let (d, m, sampler, n_train, n_test, noise) = match name {
            "toy2d" | "toy2d-complex" | "toy2d-vector" => (
                2,
                if name == "toy2d-vector" { 2 } else { 1 },
                Grid2D,
                1024,
                1024,
                None,
            ),
            "toy4to5" => (4, 5, IidUniform, 1024, 1024, None),
            "capacity64" => (64, 1, IidUniform, 32, 256, None),
            "softstair-wavepacket" => (10, 1, IidUniform, 2048, 8192, None),
            "inputshift-bump" => (
                12,
                17,
                IidUniform,
                1024,
                50_000,
                Some(Noise {
                    std: 0.25,
                    per_head: true,
                }),
            ),
            "shared-warped-ridge" => (16, 1, IidUniform, 1024, 8192, None),
            "shared-warp-chirp" => (10, 1, IidUniform, 1024, 8192, None),
            "motif-chirp" => (10, 1, IidUniform, 2048, 8192, None),
            "oscillatory-headshift" => (12, 64, IidUniform, 1024, 50_000, None),
            "pwl-vs-pchip" => (10, 1, IidUniform, 2048, 8192, None),
            "quantile-harmonics" => (2, 1, IidUniform, 4096, 2048, None),
            "mqsi" => (20, 9, IidUniform, 1024, 50_000, None),
            "dense-headshift" => (12, 64, IidUniform, 1024, 50_000, None),
            _ => return Err(Error::UnknownTask(name.to_string())),
        };
        Ok(TaskSpec {
            name: name.to_string(),
            input_dim: d,
            output_dim: m,
            sampler,
            n_train,
            n_test,
            noise,
            seed: 0,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::TaskSpec(m));
        let expected = TaskSpec::preset(&self.name)?;
        if (self.input_dim, self.output_dim) != (expected.input_dim, expected.output_dim) {
            return bad(format!(
                "{} maps {} -> {}, spec says {} -> {}",
                self.name, expected.input_dim, expected.output_dim, self.input_dim, self.output_dim
            ));
        }
        if self.n_train == 0 {
            return bad("n_train must be positive".into());
        }
        match self.sampler {
            Sampler::Grid1D if self.input_dim != 1 => bad("1D grid needs input_dim 1".into()),
            Sampler::Grid2D if self.input_dim != 2 => bad("2D grid needs input_dim 2".into()),
            Sampler::Grid2D if square_side(self.n_train).is_none() => bad(format!(
                "2D grid needs a square sample count, got {}",
                self.n_train
            )),
            _ => Ok(()),
        }
    }
}

fn square_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Teacher with parameters frozen at construction.
#[derive(Debug, Clone)]
pub enum Teacher {
    Toy2d,
    Toy2dComplex,
    Toy2dVector,
    Toy4to5,
    Capacity64,
    SoftstairWavepacket,
    InputShiftBump {
        w: Vec<f64>,
    },
    SharedWarpedRidge,
    SharedWarpChirp,
    MotifChirp {
        lambda1: Vec<f64>,
        lambda2: Vec<f64>,
    },
    OscillatoryHeadShift {
        w1: Vec<f64>,
        w2: Vec<f64>,
        m: Array2<f64>,
    },
    PwlVsPchip,
    QuantileHarmonics,
    QuantileHeads(QuantileTeacher),
}

/// Shared construction of the two monotone multi-head tasks.
#[derive(Debug, Clone)]
pub struct QuantileTeacher {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub z: Vec<f64>,
    /// Per-head additive shift inside the squashing.
    pub head_shift: Vec<f64>,
    pub beta: f64,
}

impl QuantileTeacher {
    fn sample(d: usize, m: usize, head_coef: f64, rng: &mut ChaCha8Rng) -> Self {
        let a = (0..d).map(|_| rng.random_range(2.0..8.0)).collect();
        let c = (0..d).map(|_| rng.random_range(0.2..0.8)).collect();
        let normalize = |raw: Vec<f64>, scale: f64| {
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|r| scale * r / s).collect::<Vec<_>>()
        };
        let w = normalize((0..d).map(|_| rng.random::<f64>()).collect(), 1.0);
        let v = normalize((0..d).map(|_| rng.random::<f64>()).collect(), 0.25);
        let n_pairs = ((0.15 * d as f64).round() as usize).max(1);
        let idx = sample(rng, d, 2 * n_pairs).into_vec();
        let pairs = idx
            .chunks(2)
            .map(|p| (p[0].min(p[1]), p[0].max(p[1])))
            .collect();
        let gauss = Gaussian::standard();
        let z = linspace(0.1, 0.9, m)
            .into_iter()
            .map(|t| gauss.inverse_cdf(t))
            .collect();
        let head_shift = linspace(-1.0, 1.0, m)
            .into_iter()
            .map(|q| head_coef * q)
            .collect();
        QuantileTeacher {
            a,
            c,
            w,
            v,
            pairs,
            z,
            head_shift,
            beta: 0.8,
        }
    }

    fn eval(&self, x: ArrayView1<f64>, out: &mut [f64]) {
        let h: Vec<f64> = (0..x.len())
            .map(|i| sigmoid(self.a[i] * (x[i] - self.c[i])))
            .collect();
        let sigma = 0.15
            + h.iter()
                .zip(&self.v)
                .map(|(h, v)| h * v)
                .sum::<f64>()
                .max(1e-5);
        let mu = h.iter().zip(&self.w).map(|(h, w)| h * w).sum::<f64>()
            + 0.08 * self.pairs.iter().map(|&(i, k)| h[i] * h[k]).sum::<f64>();
        for (j, o) in out.iter_mut().enumerate() {
            *o = (self.beta * (mu + sigma * self.z[j] + self.head_shift[j])).tanh();
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
        .collect()
}

fn unit_normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Seed of the fixed oscillatory teacher.
pub const HEADSHIFT_TEACHER_SEED: u64 = 20240518;

fn softstair(t: f64) -> f64 {
    t + 0.25 * sigmoid(25.0 * (t - 0.20))
        + 0.35 * sigmoid(35.0 * (t - 0.55))
        + 0.20 * sigmoid(60.0 * (t - 0.85))
}

fn tri(u: f64) -> f64 {
    2.0 * (2.0 * (u - u.floor()) - 1.0).abs() - 1.0
}

fn mean(x: ArrayView1<f64>, f: impl Fn(f64) -> f64) -> f64 {
    x.iter().map(|&v| f(v)).sum::<f64>() / x.len() as f64
}

impl Teacher {
    /// Builds the teacher for `name`, drawing any random parameters from
    /// `seed`.
    pub fn new(name: &str, seed: u64) -> Result<Teacher> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(match name {
            "toy2d" => Teacher::Toy2d,
            "toy2d-complex" => Teacher::Toy2dComplex,
            "toy2d-vector" => Teacher::Toy2dVector,
            "toy4to5" => Teacher::Toy4to5,
            "capacity64" => Teacher::Capacity64,
            "softstair-wavepacket" => Teacher::SoftstairWavepacket,
            "inputshift-bump" => {
                let wt = unit_normal_vec(&mut rng, 12);
                let w = (0..12)
                    .map(|i| 0.9 * wt[i] + 0.1 * if i % 2 == 0 { 1.0 } else { -1.0 })
                    .collect();
                Teacher::InputShiftBump { w }
            }
            "shared-warped-ridge" => Teacher::SharedWarpedRidge,
            "shared-warp-chirp" => Teacher::SharedWarpChirp,
            "motif-chirp" => {
                let l1: Vec<f64> = (0..10)
                    .map(|i| 0.30 + 0.70 * (0.8 * i as f64 + 0.1).cos().abs())
                    .collect();
                let l2: Vec<f64> = (0..16)
                    .map(|q| 0.25 + 0.75 * (0.6 * q as f64 + 0.4).sin().abs())
                    .collect();
                let (s1, s2): (f64, f64) = (l1.iter().sum(), l2.iter().sum());
                Teacher::MotifChirp {
                    lambda1: l1.iter().map(|v| 9.0 * v / s1).collect(),
                    lambda2: l2.iter().map(|v| 7.0 * v / s2).collect(),
                }
            }
            "oscillatory-headshift" => {
                let mut rng = ChaCha8Rng::seed_from_u64(HEADSHIFT_TEACHER_SEED);
                let w1 = unit_normal_vec(&mut rng, 12);
                let w2 = unit_normal_vec(&mut rng, 12);
                let dist = Normal::new(0.0, (1.0f64 / 12.0).sqrt()).expect("valid normal");
                let m = Array2::from_shape_simple_fn((12, 3), || dist.sample(&mut rng));
                Teacher::OscillatoryHeadShift { w1, w2, m }
            }
            "pwl-vs-pchip" => Teacher::PwlVsPchip,
            "quantile-harmonics" => Teacher::QuantileHarmonics,
            "mqsi" => Teacher::QuantileHeads(QuantileTeacher::sample(20, 9, 0.0, &mut rng)),
            "dense-headshift" => {
                Teacher::QuantileHeads(QuantileTeacher::sample(12, 64, 0.7 + 0.6, &mut rng))
            }
            _ => return Err(Error::UnknownTask(name.to_string())),
        })
    }

    /// Noise-free target at one input.
    pub fn eval(&self, x: ArrayView1<f64>, out: &mut [f64]) {
        match self {
            Teacher::Toy2d => out[0] = ((PI * x[0]).sin() + x[1] * x[1]).exp(),
            Teacher::Toy2dComplex => {
                out[0] = (11.0 * x[0]).sin().exp() + 3.0 * x[1] + 4.0 * (8.0 * x[1]).sin()
            }
            Teacher::Toy2dVector => {
                let (a, b) = (x[0], x[1]);
                out[0] = (((PI * a).sin() + b * b).exp() - 1.0) / 7.0;
                out[1] = 0.25 * b + 0.2 * b * b - a.powi(3) + 0.2 * (7.0 * a).sin();
            }
            Teacher::Toy4to5 => {
                let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
                out[0] = (2.0 * PI * x1).sin() * (PI * x2).cos();
                out[1] = (-2.0 * (x1 * x1 + x2 * x2)).exp();
                out[2] = x3.powi(3) - x4 * x4 + 0.5 * (5.0 * x3).sin();
                out[3] = sigmoid(3.0 * (x1 + x2 - x3 + x4));
                out[4] = 0.5 * (4.0 * PI * x1 * x4).sin() + 0.5 * (3.0 * PI * x2 * x3).cos();
            }
            Teacher::Capacity64 => out[0] = mean(x, |v| (PI * v / 2.0).sin().powi(2)).exp(),
            Teacher::SoftstairWavepacket => {
                let s = mean(x, softstair);
                out[0] = 0.70
                    * (-30.0 * (s - 0.90).powi(2)).exp()
                    * ((14.0 * PI * s).sin() + 0.30 * (42.0 * PI * s).sin())
                    + 0.05 * (s - 0.90);
            }
            Teacher::InputShiftBump { w } => {
                for (q, o) in out.iter_mut().enumerate() {
                    let q = q as f64;
                    let s = q + w
                        .iter()
                        .zip(x)
                        .map(|(w, &xi)| w * sigmoid(8.0 * (xi + 0.045 * q - 0.5)))
                        .sum::<f64>();
                    *o = (-0.5 * ((s - 8.0) / 2.6).powi(2)).exp() + 0.25 * (0.85 * s).sin();
                }
            }
            Teacher::SharedWarpedRidge => {
                let s = mean(x, |t| {
                    0.6 * t + 0.2 * sigmoid(30.0 * (t - 0.30)) + 0.2 * sigmoid(30.0 * (t - 0.70))
                });
                out[0] = (12.0 * PI * s * s).sin() * (-3.0 * (s - 0.5).powi(2)).exp()
                    + 0.15 * (2.0 * PI * s).sin()
                    + 0.10 * (s - 0.5);
            }
            Teacher::SharedWarpChirp => {
                let s = mean(x, |t| sigmoid(18.0 * (t - 0.5)));
                out[0] = (2.0 * PI * (6.0 * s + 5.0 * s * s)).sin()
                    + 0.35 * (2.0 * PI * 3.0 * s).cos()
                    + 0.10 * (s - 0.5);
            }
            Teacher::MotifChirp { lambda1, lambda2 } => {
                let h: Vec<f64> = (0..16)
                    .map(|q| {
                        let q = q as f64;
                        let s = q + lambda1
                            .iter()
                            .zip(x)
                            .map(|(l, &xi)| l * sigmoid(30.0 * (xi + 0.06 * q - 0.5)))
                            .sum::<f64>();
                        (1.7 * s).sin() + 0.28 * (0.55 * s + 0.2).sin().abs()
                    })
                    .collect();
                let acc: f64 = (0..15)
                    .map(|r| {
                        let r = r as f64;
                        let s = r + lambda2
                            .iter()
                            .zip(&h)
                            .map(|(l, hq)| l * sigmoid(12.0 * (hq + 0.05 * r)))
                            .sum::<f64>();
                        (1.15 * s).sin() + 0.22 * (0.9 * s + 0.7).sin().abs()
                    })
                    .sum();
                out[0] = 5.0 * acc / 15.0 - 0.4;
            }
            Teacher::OscillatoryHeadShift { w1, w2, m } => {
                let xc: Vec<f64> = x.iter().map(|v| v - 0.5).collect();
                let dot = |w: &[f64]| w.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>();
                let (u, v) = (dot(w1), dot(w2));
                let z: Vec<f64> = (0..3)
                    .map(|k| (0..12).map(|i| xc[i] * m[[i, k]]).sum())
                    .collect();
                let omega = 6.0 * PI;
                let a = 0.75 + 0.25 * (2.5 * z[0]).tanh();
                for (h, o) in out.iter_mut().enumerate() {
                    let delta = 0.35 * (h as f64 - 31.5) / 63.0;
                    let t1 = omega * (u + delta);
                    let t2 = 0.5 * omega * (v - 0.7 * delta);
                    *o = a * t1.sin()
                        + 0.35 * (2.0 * t2).cos()
                        + 0.15 * (3.0 * t1 + 0.25 * z[1]).sin()
                        + 0.10 * (t2 + 0.35 * z[2]).cos();
                }
            }
            Teacher::PwlVsPchip => {
                let xbar = mean(x, |v| v);
                out[0] = tri(12.0 * xbar) + 0.05 * (xbar - 0.5);
            }
            Teacher::QuantileHarmonics => {
                let (a, b) = (x[0], x[1]);
                const C: [f64; 4] = [0.10, 0.30, 0.55, 0.80];
                const F: [f64; 4] = [5.0, 9.0, 13.0, 17.0];
                const PH: [f64; 4] = [0.2, -0.7, 1.1, -1.5];
                let g: Vec<f64> = C
                    .iter()
                    .map(|c| (-0.5 * ((a - c) / 0.055).powi(2)).exp())
                    .collect();
                let gs: f64 = g.iter().sum();
                let amp = 0.65 + 0.35 * (2.0 * PI * (2.0 * b + 0.15 * (2.0 * PI * a).sin())).cos();
                let mix: f64 = (0..4)
                    .map(|k| {
                        let m = amp
                            * ((2.0 * PI * F[k] * a + PH[k]).sin()
                                + 0.35 * (2.0 * PI * (F[k] + 2.0) * a - 0.5 * PH[k]).cos());
                        g[k] / gs * m
                    })
                    .sum();
                out[0] = mix + 0.15 * (2.0 * PI * (a + b)).sin() * (-6.0 * (b - 0.5).powi(2)).exp();
            }
            Teacher::QuantileHeads(t) => t.eval(x, out),
        }
    }

    /// Targets for every row of `x`.
    pub fn eval_batch(&self, x: &Array2<f64>, output_dim: usize) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), output_dim));
        for (r, row) in x.rows().into_iter().enumerate() {
            let mut out = vec![0.0; output_dim];
            self.eval(row, &mut out);
            y.row_mut(r).assign(&ArrayView1::from(&out));
        }
        y
    }
}

/// Inputs for a sampler.
pub fn sample_inputs(
    sampler: Sampler,
    n: usize,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    match sampler {
        Sampler::IidUniform => Ok(Array2::from_shape_simple_fn((n, d), || rng.random::<f64>())),
        Sampler::Grid1D => {
            Ok(Array2::from_shape_vec((n, 1), linspace(0.0, 1.0, n)).expect("n values"))
        }
        Sampler::Grid2D => {
            let s = square_side(n)
                .ok_or_else(|| Error::TaskSpec(format!("{n} is not a perfect square")))?;
            let g = linspace(0.0, 1.0, s);
            Ok(Array2::from_shape_fn((n, 2), |(r, c)| {
                if c == 0 {
                    g[r / s]
                } else {
                    g[r % s]
                }
            }))
        }
    }
}

/// Training and test sets for `spec`.
pub fn gen_task(spec: &TaskSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let teacher = Teacher::new(&spec.name, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x_train = sample_inputs(spec.sampler, spec.n_train, spec.input_dim, &mut rng)?;
    let x_test = sample_inputs(Sampler::IidUniform, spec.n_test, spec.input_dim, &mut rng)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(2);
    let mut make = |x: Array2<f64>| {
        let mut y = teacher.eval_batch(&x, spec.output_dim);
        if let Some(n) = spec.noise {
            for mut row in y.rows_mut() {
                let shared: f64 = StandardNormal.sample(&mut noise_rng);
                for v in row.iter_mut() {
                    let e: f64 = if n.per_head {
                        StandardNormal.sample(&mut noise_rng)
                    } else {
                        shared
                    };
                    *v += n.std * e;
                }
            }
        }
        Dataset::new(x, Targets::Values(y))
    };
    let train = make(x_train)?;
    let test = make(x_test)?;
    Ok((train, test))
}
