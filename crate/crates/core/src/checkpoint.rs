//! Binary checkpoint format.
//!
//! All integers are little-endian `u32`, all reals little-endian `f64`.
//!
//! ```text
//! magic        8 bytes  "DDQNCKPT"
//! version      u32      = 1
//! input_shape  3 x u32  channels, height, width
//! n_layers     u32
//! per layer    u8 kind (0 conv2d, 1 dense), u8 activation (0 identity, 1 relu)
//!              conv2d: in_channels, out_filters, kernel_x, kernel_y, stride (u32 each)
//!              dense:  in_size, out_size (u32 each)
//! flags        u8       bit 0: pruning sections present
//! [pruning]    iteration u32, rate f64, scope_len u32, scope_len x u32 layer indices
//! live         per layer: weights then bias, row-major f64
//! [masks]      per layer: ceil(n / 8) bytes, LSB-first, bit set = weight kept
//! [initial]    per layer: weights then bias, row-major f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Activation, LayerKind, LayerParams, LayerSpec, NetworkSpec, WeightSet};
use crate::pruning::PrunableWeights;
use crate::tensor::{BitMask, Tensor};

pub const MAGIC: &[u8; 8] = b"DDQNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub weights: WeightSet,
    pub pruning: Option<PruningSection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruningSection {
    pub iteration: u32,
    pub rate: f64,
    pub scope: Vec<usize>,
    pub masks: Vec<BitMask>,
    pub initial: WeightSet,
}

impl Checkpoint {
    pub fn dense(spec: NetworkSpec, weights: WeightSet) -> Result<Self> {
        weights.check_against(&spec)?;
        Ok(Checkpoint {
            spec,
            weights,
            pruning: None,
        })
    }

    pub fn from_prunable(spec: NetworkSpec, p: &PrunableWeights) -> Result<Self> {
        p.live().check_against(&spec)?;
        Ok(Checkpoint {
            spec,
            weights: p.live().clone(),
            pruning: Some(PruningSection {
                iteration: p.iteration(),
                rate: p.rate(),
                scope: p.scope().to_vec(),
                masks: p.masks().to_vec(),
                initial: p.initial().clone(),
            }),
        })
    }

    pub fn to_prunable(&self) -> Result<Option<PrunableWeights>> {
        self.pruning
            .as_ref()
            .map(|s| {
                PrunableWeights::from_parts(
                    self.weights.clone(),
                    s.masks.clone(),
                    s.initial.clone(),
                    s.iteration,
                    s.rate,
                    s.scope.clone(),
                )
            })
            .transpose()
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer(out);
        w.bytes(MAGIC)?;
        w.u32(VERSION as usize)?;
        for v in self.spec.input_shape() {
            w.u32(v)?;
        }
        w.u32(self.spec.num_layers())?;
        for layer in self.spec.layers() {
            let act = match layer.activation {
                Activation::Identity => 0u8,
                Activation::Relu => 1,
            };
            match layer.kind {
                LayerKind::Conv2d {
                    in_channels,
                    out_filters,
                    kernel_x,
                    kernel_y,
                    stride,
                } => {
                    w.bytes(&[0, act])?;
                    for v in [in_channels, out_filters, kernel_x, kernel_y, stride] {
                        w.u32(v)?;
                    }
                }
                LayerKind::Dense { in_size, out_size } => {
                    w.bytes(&[1, act])?;
                    w.u32(in_size)?;
                    w.u32(out_size)?;
                }
            }
        }
        w.bytes(&[u8::from(self.pruning.is_some())])?;
        if let Some(p) = &self.pruning {
            w.u32(p.iteration as usize)?;
            w.f64s(&[p.rate])?;
            w.u32(p.scope.len())?;
            for &k in &p.scope {
                w.u32(k)?;
            }
        }
        w.weight_set(&self.weights)?;
        if let Some(p) = &self.pruning {
            for m in &p.masks {
                let mut packed = vec![0u8; m.len().div_ceil(8)];
                for (i, &keep) in m.bits().iter().enumerate() {
                    if keep {
                        packed[i / 8] |= 1 << (i % 8);
                    }
                }
                w.bytes(&packed)?;
            }
            w.weight_set(&p.initial)?;
        }
        w.0.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader(input);
        let mut magic = [0u8; 8];
        r.exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let input_shape = [r.u32()?, r.u32()?, r.u32()?];
        let n_layers = r.u32()?;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let mut tag = [0u8; 2];
            r.exact(&mut tag)?;
            let activation = match tag[1] {
                0 => Activation::Identity,
                1 => Activation::Relu,
                a => return Err(Error::Checkpoint(format!("unknown activation tag {a}"))),
            };
            let layer = match tag[0] {
                0 => LayerSpec::conv2d(r.u32()?, r.u32()?, (r.u32()?, r.u32()?), r.u32()?, activation),
                1 => LayerSpec::dense(r.u32()?, r.u32()?, activation),
                k => return Err(Error::Checkpoint(format!("unknown layer kind tag {k}"))),
            };
            layers.push(layer);
        }
        let spec = NetworkSpec::new(input_shape, layers)?;
        let mut flags = [0u8; 1];
        r.exact(&mut flags)?;
        if flags[0] > 1 {
            return Err(Error::Checkpoint(format!("unknown flags {:#x}", flags[0])));
        }
        let meta = if flags[0] == 1 {
            let iteration = r.u32()? as u32;
            let rate = r.f64s(1)?[0];
            let n = r.u32()?;
            let scope = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            Some((iteration, rate, scope))
        } else {
            None
        };
        let weights = r.weight_set(&spec)?;
        let pruning = match meta {
            Some((iteration, rate, scope)) => {
                let mut masks = Vec::with_capacity(spec.num_layers());
                for layer in spec.layers() {
                    let shape = layer.weight_shape();
                    let n: usize = shape.iter().product();
                    let mut packed = vec![0u8; n.div_ceil(8)];
                    r.exact(&mut packed)?;
                    let bits = (0..n).map(|i| packed[i / 8] & (1 << (i % 8)) != 0).collect();
                    masks.push(BitMask::new(shape, bits)?);
                }
                let initial = r.weight_set(&spec)?;
                Some(PruningSection {
                    iteration,
                    rate,
                    scope,
                    masks,
                    initial,
                })
            }
            None => None,
        };
        let mut rest = Vec::new();
        r.0.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        let ckpt = Checkpoint { spec, weights, pruning };
        ckpt.to_prunable()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
        Checkpoint::read_from(BufReader::new(file))
    }
}

struct Writer<W>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.0.write_all(b)?;
        Ok(())
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
        self.bytes(&v.to_le_bytes())
    }

    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.0.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn weight_set(&mut self, ws: &WeightSet) -> Result<()> {
        for p in &ws.layers {
            self.f64s(p.weights.data())?;
            self.f64s(p.bias.data())?;
        }
        Ok(())
    }
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("truncated checkpoint".into()),
            _ => Error::Io(e),
        })
    }

    fn u32(&mut self) -> Result<usize> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }

    fn weight_set(&mut self, spec: &NetworkSpec) -> Result<WeightSet> {
        let mut layers = Vec::with_capacity(spec.num_layers());
        for layer in spec.layers() {
            let shape = layer.weight_shape();
            let n = shape.iter().product();
            let weights = Tensor::new(shape, self.f64s(n)?)?;
            let bias = Tensor::new(vec![layer.bias_len()], self.f64s(layer.bias_len())?)?;
            layers.push(LayerParams { weights, bias });
        }
        Ok(WeightSet { layers })
    }
}
