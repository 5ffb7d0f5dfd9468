//! Binary model files.
//!
//! Layout (little-endian): magic `SPRN`, `u32` version, `u8` precision
//! (0 = float64, 1 = Q16.16), the architecture, then one record per block
//! and the head. Float files hold a trainable network; Q16.16 files hold
//! the folded integer model.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::fixed::Q16;
use super::model::{Affine, FoldedBlock, FoldedModel, FoldedResidual, Pwl, QuantizedModel};
use crate::block::{BatchNorm, BnMode, Mixing, Residual, SprecherBlock, Topology};
use crate::error::{Error, Result};
use crate::network::{Architecture, BnPlacement, Head, OutputMode, SprecherNetwork};
use crate::splines::{
    Codomain, GeneralSpline, InnerFn, KnotGrid, MonotoneSpline, OuterFn, Prelu, SplineKind,
};

pub const MAGIC: [u8; 4] = *b"SPRN";
pub const VERSION: u32 = 1;

/// Storage precision of a model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Float64,
    Q16_16,
}

impl Precision {
    fn code(self) -> u8 {
        match self {
            Precision::Float64 => 0,
            Precision::Q16_16 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Float64 => "float64",
            Precision::Q16_16 => "q16_16",
        }
    }
}

/// Either kind of stored model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Float(SprecherNetwork),
    Quantized(QuantizedModel),
}

impl Model {
    pub fn precision(&self) -> Precision {
        match self {
            Model::Float(_) => Precision::Float64,
            Model::Quantized(_) => Precision::Q16_16,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Enc::new(self.precision());
        match self {
            Model::Float(net) => w.network(net),
            Model::Quantized(q) => w.quantized(q),
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Dec { buf: bytes };
        let mut magic = [0u8; 4];
        for b in magic.iter_mut() {
            *b = r.u8()?;
        }
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.buf.read_u32::<LE>().map_err(|_| Error::Truncated)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let model = match r.u8()? {
            0 => Model::Float(r.network()?),
            1 => Model::Quantized(r.quantized()?),
            p => return Err(Error::Corrupt(format!("unknown precision code {p}"))),
        };
        if !r.buf.is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Model::from_bytes(&fs::read(path)?)
    }

    pub fn into_float(self) -> Result<SprecherNetwork> {
        match self {
            Model::Float(n) => Ok(n),
            Model::Quantized(_) => Err(mismatch(Precision::Float64, Precision::Q16_16)),
        }
    }

    pub fn into_quantized(self) -> Result<QuantizedModel> {
        match self {
            Model::Quantized(q) => Ok(q),
            Model::Float(_) => Err(mismatch(Precision::Q16_16, Precision::Float64)),
        }
    }
}

fn mismatch(expected: Precision, found: Precision) -> Error {
    Error::PrecisionMismatch {
        expected: expected.name(),
        found: found.name(),
    }
}

pub fn save_network(net: &SprecherNetwork, path: impl AsRef<Path>) -> Result<()> {
    Model::Float(net.clone()).save(path)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<SprecherNetwork> {
    Model::load(path)?.into_float()
}

pub fn save_quantized(model: &QuantizedModel, path: impl AsRef<Path>) -> Result<()> {
    Model::Quantized(model.clone()).save(path)
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedModel> {
    Model::load(path)?.into_quantized()
}

struct Enc {
    buf: Vec<u8>,
}

// Writes into a Vec cannot fail.
impl Enc {
    fn new(p: Precision) -> Enc {
        let mut e = Enc { buf: Vec::new() };
        e.buf.extend_from_slice(&MAGIC);
        e.u32(VERSION as usize);
        e.u8(p.code());
        e
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.buf.write_u32::<LE>(v as u32).unwrap();
    }
    fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LE>(v).unwrap();
    }
    fn q(&mut self, v: Q16) {
        self.buf.write_i32::<LE>(v.0).unwrap();
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn qs(&mut self, v: &[Q16]) {
        self.u32(v.len());
        v.iter().for_each(|&x| self.q(x));
    }

    fn arch(&mut self, a: &Architecture) {
        self.u32(a.d_in);
        self.u32(a.hidden.len());
        a.hidden.iter().for_each(|&h| self.u32(h));
        self.u32(a.d_out);
        self.u8(match a.output_mode {
            OutputMode::SummedScalar => 0,
            OutputMode::OutputBlock => 1,
        });
    }

    fn grid(&mut self, g: &KnotGrid, kind: SplineKind) {
        self.u8(kind_code(kind));
        self.f64(g.lo);
        self.f64(g.hi);
        self.u32(g.count);
    }

    fn network(&mut self, net: &SprecherNetwork) {
        self.arch(&net.arch);
        self.u8(match net.bn_placement {
            BnPlacement::None => 0,
            BnPlacement::Before => 1,
            BnPlacement::After => 2,
        });
        for (b, bn) in net.blocks.iter().zip(&net.norms) {
            self.block(b);
            match bn {
                None => self.u8(0),
                Some(bn) => {
                    self.u8(1);
                    self.f64s(&bn.gamma);
                    self.f64s(&bn.beta);
                    self.f64s(&bn.running_mean);
                    self.f64s(&bn.running_var);
                    self.f64(bn.eps);
                    self.f64(bn.momentum);
                    self.u8(match bn.mode {
                        BnMode::TrainBatchStats => 0,
                        BnMode::EvalBatchStatsFrozen => 1,
                        BnMode::EvalRunningStats => 2,
                    });
                }
            }
        }
        match net.head {
            None => self.u8(0),
            Some(h) => {
                self.u8(1);
                self.f64(h.scale);
                self.f64(h.bias);
            }
        }
    }

    fn block(&mut self, b: &SprecherBlock) {
        self.u32(b.d_in);
        self.u32(b.d_out);
        self.f64(b.eta);
        self.f64(b.alpha);
        self.f64s(&b.lambda);
        self.f64s(&b.q_grid);
        match &b.phi {
            InnerFn::Spline(s) => {
                self.u8(0);
                self.grid(&s.grid, s.kind);
                self.f64(s.eps);
                self.f64s(&s.raw);
            }
            InnerFn::Prelu(p) => {
                self.u8(1);
                self.f64(p.slope);
            }
        }
        match &b.outer {
            OuterFn::Spline(s) => {
                self.u8(0);
                self.grid(&s.grid, s.kind);
                self.f64s(&s.values);
                match s.codomain {
                    None => self.u8(0),
                    Some(c) => {
                        self.u8(1);
                        self.f64(c.center);
                        self.f64(c.radius);
                    }
                }
            }
            OuterFn::Prelu(p) => {
                self.u8(1);
                self.f64(p.slope);
            }
        }
        self.u8(topology_code(b.mixing.topology));
        self.f64(b.mixing.tau);
        self.f64s(&b.mixing.omega);
        match &b.residual {
            Residual::None => self.u8(0),
            Residual::Scalar(w) => {
                self.u8(1);
                self.f64(*w);
            }
            Residual::Broadcast(w) => {
                self.u8(2);
                self.f64s(w);
            }
            Residual::Pool(w) => {
                self.u8(3);
                self.f64s(w);
            }
            Residual::Linear(w) => {
                self.u8(4);
                self.u32(w.nrows());
                self.f64s(&w.iter().copied().collect::<Vec<_>>());
            }
        }
    }

    fn quantized(&mut self, m: &QuantizedModel) {
        self.arch(&m.arch);
        self.u32(m.blocks.len());
        for b in &m.blocks {
            self.u32(b.d_in);
            self.u32(b.d_out);
            self.qs(&b.lambda);
            self.qs(&b.shift);
            self.qs(&b.offset);
            self.pwl(&b.phi);
            self.pwl(&b.outer);
            self.q(b.left_slope);
            self.q(b.right_slope);
            self.u8(topology_code(b.topology));
            self.qs(&b.mix_next);
            self.qs(&b.mix_prev);
            match &b.residual {
                FoldedResidual::None => self.u8(0),
                FoldedResidual::Scalar(w) => {
                    self.u8(1);
                    self.q(*w);
                }
                FoldedResidual::Broadcast(w) => {
                    self.u8(2);
                    self.qs(w);
                }
                FoldedResidual::Pool(w) => {
                    self.u8(3);
                    self.qs(w);
                }
                FoldedResidual::Linear(w) => {
                    self.u8(4);
                    self.qs(w);
                }
            }
            self.affine(&b.norm_before);
            self.affine(&b.norm_after);
        }
        match m.head {
            None => self.u8(0),
            Some((s, b)) => {
                self.u8(1);
                self.q(s);
                self.q(b);
            }
        }
    }

    fn pwl(&mut self, p: &Pwl<Q16>) {
        self.q(p.lo);
        self.q(p.hi);
        self.q(p.step);
        self.q(p.inv_step);
        self.qs(&p.y);
    }

    fn affine(&mut self, a: &Option<Affine<Q16>>) {
        match a {
            None => self.u8(0),
            Some(a) => {
                self.u8(1);
                self.qs(&a.scale);
                self.qs(&a.shift);
            }
        }
    }
}

fn kind_code(k: SplineKind) -> u8 {
    match k {
        SplineKind::Pwl => 0,
        SplineKind::Pchip => 1,
    }
}

fn topology_code(t: Topology) -> u8 {
    match t {
        Topology::None => 0,
        Topology::Cyclic => 1,
        Topology::Bidirectional => 2,
    }
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::Corrupt(what.into())
}

// Upper bound on any stored length; rejects garbage before allocating.
const MAX_LEN: usize = 1 << 28;

struct Dec<'a> {
    buf: &'a [u8],
}

impl Dec<'_> {
    fn u8(&mut self) -> Result<u8> {
        self.buf.read_u8().map_err(|_| Error::Truncated)
    }
    fn u32(&mut self) -> Result<usize> {
        let v = self.buf.read_u32::<LE>().map_err(|_| Error::Truncated)? as usize;
        if v > MAX_LEN {
            return Err(corrupt(format!("length {v} too large")));
        }
        Ok(v)
    }
    fn f64(&mut self) -> Result<f64> {
        self.buf.read_f64::<LE>().map_err(|_| Error::Truncated)
    }
    fn q(&mut self) -> Result<Q16> {
        Ok(Q16(self
            .buf
            .read_i32::<LE>()
            .map_err(|_| Error::Truncated)?))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u32()?;
        if n * elem > self.buf.len() {
            return Err(Error::Truncated);
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn f64s_of(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let v = self.f64s()?;
        if v.len() != expected {
            return Err(corrupt(format!(
                "{what}: expected {expected} values, found {}",
                v.len()
            )));
        }
        Ok(v)
    }
    fn qs(&mut self) -> Result<Vec<Q16>> {
        let n = self.len(4)?;
        (0..n).map(|_| self.q()).collect()
    }
    fn qs_of(&mut self, expected: usize, what: &str) -> Result<Vec<Q16>> {
        let v = self.qs()?;
        if v.len() != expected {
            return Err(corrupt(format!(
                "{what}: expected {expected} values, found {}",
                v.len()
            )));
        }
        Ok(v)
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            t => Err(corrupt(format!("bad flag {t}"))),
        }
    }

    fn arch(&mut self) -> Result<Architecture> {
        let d_in = self.u32()?;
        let n = self.len(4)?;
        let hidden = (0..n).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let d_out = self.u32()?;
        let mode = match self.u8()? {
            0 => OutputMode::SummedScalar,
            1 => OutputMode::OutputBlock,
            t => return Err(corrupt(format!("bad output mode {t}"))),
        };
        Architecture::with_mode(d_in, hidden, d_out, mode).map_err(|e| corrupt(e.to_string()))
    }

    fn grid(&mut self) -> Result<(KnotGrid, SplineKind)> {
        let kind = match self.u8()? {
            0 => SplineKind::Pwl,
            1 => SplineKind::Pchip,
            t => return Err(corrupt(format!("bad spline kind {t}"))),
        };
        let (lo, hi, count) = (self.f64()?, self.f64()?, self.u32()?);
        let grid = KnotGrid::new(lo, hi, count).map_err(|e| corrupt(e.to_string()))?;
        Ok((grid, kind))
    }

    fn topology(&mut self) -> Result<Topology> {
        match self.u8()? {
            0 => Ok(Topology::None),
            1 => Ok(Topology::Cyclic),
            2 => Ok(Topology::Bidirectional),
            t => Err(corrupt(format!("bad topology {t}"))),
        }
    }

    fn network(&mut self) -> Result<SprecherNetwork> {
        let arch = self.arch()?;
        let bn_placement = match self.u8()? {
            0 => BnPlacement::None,
            1 => BnPlacement::Before,
            2 => BnPlacement::After,
            t => return Err(corrupt(format!("bad normalization placement {t}"))),
        };
        let mut blocks = Vec::new();
        let mut norms = Vec::new();
        for (d_in, d_out) in arch.block_dims() {
            blocks.push(self.block(d_in, d_out)?);
            norms.push(if self.flag()? {
                let gamma = self.f64s()?;
                let d = gamma.len();
                let mut bn = BatchNorm::new(d);
                bn.gamma = gamma;
                bn.beta = self.f64s_of(d, "normalization shift")?;
                bn.running_mean = self.f64s_of(d, "running mean")?;
                bn.running_var = self.f64s_of(d, "running variance")?;
                bn.eps = self.f64()?;
                bn.momentum = self.f64()?;
                bn.mode = match self.u8()? {
                    0 => BnMode::TrainBatchStats,
                    1 => BnMode::EvalBatchStatsFrozen,
                    2 => BnMode::EvalRunningStats,
                    t => return Err(corrupt(format!("bad normalization mode {t}"))),
                };
                Some(bn)
            } else {
                None
            });
        }
        let head = if self.flag()? {
            Some(Head {
                scale: self.f64()?,
                bias: self.f64()?,
            })
        } else {
            None
        };
        Ok(SprecherNetwork {
            arch,
            blocks,
            norms,
            bn_placement,
            head,
        })
    }

    fn block(&mut self, d_in: usize, d_out: usize) -> Result<SprecherBlock> {
        if (self.u32()?, self.u32()?) != (d_in, d_out) {
            return Err(corrupt("block dimensions disagree with architecture"));
        }
        let eta = self.f64()?;
        let alpha = self.f64()?;
        let lambda = self.f64s_of(d_in, "lambda")?;
        let q_grid = self.f64s_of(d_out, "q grid")?;
        let phi = if self.flag()? {
            InnerFn::Prelu(Prelu { slope: self.f64()? })
        } else {
            let (grid, kind) = self.grid()?;
            let eps = self.f64()?;
            let raw = self.f64s_of(grid.count, "inner spline")?;
            let mut s = MonotoneSpline::from_raw(grid, raw, kind);
            s.eps = eps;
            InnerFn::Spline(s)
        };
        let outer = if self.flag()? {
            OuterFn::Prelu(Prelu { slope: self.f64()? })
        } else {
            let (grid, kind) = self.grid()?;
            let values = self.f64s_of(grid.count, "outer spline")?;
            let mut s = GeneralSpline::new(grid, values, kind);
            if self.flag()? {
                s.codomain = Some(Codomain {
                    center: self.f64()?,
                    radius: self.f64()?,
                });
            }
            OuterFn::Spline(s)
        };
        let topology = self.topology()?;
        let tau = self.f64()?;
        let omega = self.f64s_of(topology.omega_len(d_out), "mixing weights")?;
        let residual = match self.u8()? {
            0 => Residual::None,
            1 => Residual::Scalar(self.f64()?),
            2 => Residual::Broadcast(self.f64s()?),
            3 => Residual::Pool(self.f64s()?),
            4 => {
                let rows = self.u32()?;
                let w = self.f64s()?;
                let cols = if rows == 0 { 0 } else { w.len() / rows };
                Residual::Linear(
                    Array2::from_shape_vec((rows, cols), w).map_err(|e| corrupt(e.to_string()))?,
                )
            }
            t => return Err(corrupt(format!("bad residual tag {t}"))),
        };
        let block = SprecherBlock {
            d_in,
            d_out,
            lambda,
            eta,
            alpha,
            q_grid,
            phi,
            outer,
            mixing: Mixing {
                topology,
                tau,
                omega,
            },
            residual,
        };
        block.validate().map_err(|e| corrupt(e.to_string()))?;
        Ok(block)
    }

    fn quantized(&mut self) -> Result<QuantizedModel> {
        let arch = self.arch()?;
        let dims = arch.block_dims();
        if self.u32()? != dims.len() {
            return Err(corrupt("block count disagrees with architecture"));
        }
        let mut blocks = Vec::new();
        for (d_in, d_out) in dims {
            if (self.u32()?, self.u32()?) != (d_in, d_out) {
                return Err(corrupt("block dimensions disagree with architecture"));
            }
            let lambda = self.qs_of(d_in, "lambda")?;
            let shift = self.qs_of(d_out, "shift")?;
            let offset = self.qs_of(d_out, "offset")?;
            let phi = self.pwl()?;
            let outer = self.pwl()?;
            let (left_slope, right_slope) = (self.q()?, self.q()?);
            let topology = self.topology()?;
            let mix_next = self.qs()?;
            let mix_prev = self.qs()?;
            let (want_next, want_prev) = match topology {
                Topology::None => (0, 0),
                Topology::Cyclic => (d_out, 0),
                Topology::Bidirectional => (d_out, d_out),
            };
            if mix_next.len() != want_next || mix_prev.len() != want_prev {
                return Err(corrupt("mixing weights have the wrong length"));
            }
            let residual = match self.u8()? {
                0 => FoldedResidual::None,
                1 => FoldedResidual::Scalar(self.q()?),
                2 => FoldedResidual::Broadcast(self.qs_of(d_out, "residual")?),
                3 => FoldedResidual::Pool(self.qs_of(d_in, "residual")?),
                4 => FoldedResidual::Linear(self.qs_of(d_in * d_out, "residual")?),
                t => return Err(corrupt(format!("bad residual tag {t}"))),
            };
            let norm_before = self.affine(d_in)?;
            let norm_after = self.affine(d_out)?;
            blocks.push(FoldedBlock {
                d_in,
                d_out,
                lambda,
                shift,
                offset,
                phi,
                outer,
                left_slope,
                right_slope,
                topology,
                mix_next,
                mix_prev,
                residual,
                norm_before,
                norm_after,
            });
        }
        let head = if self.flag()? {
            Some((self.q()?, self.q()?))
        } else {
            None
        };
        Ok(FoldedModel { arch, blocks, head })
    }

    fn pwl(&mut self) -> Result<Pwl<Q16>> {
        let (lo, hi, step, inv_step) = (self.q()?, self.q()?, self.q()?, self.q()?);
        let y = self.qs()?;
        if y.len() < 2 || step.0 <= 0 || inv_step.0 <= 0 || hi < lo {
            return Err(corrupt("malformed piecewise-linear table"));
        }
        Ok(Pwl {
            lo,
            hi,
            step,
            inv_step,
            y,
        })
    }

    fn affine(&mut self, d: usize) -> Result<Option<Affine<Q16>>> {
        if !self.flag()? {
            return Ok(None);
        }
        Ok(Some(Affine {
            scale: self.qs_of(d, "normalization scale")?,
            shift: self.qs_of(d, "normalization shift")?,
        }))
    }
}
