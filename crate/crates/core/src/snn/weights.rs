use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

use super::spec::{fans, weight_len};
use super::{LayerKind, NetworkSpec, SnnError};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SNNW";
pub const WEIGHTS_VERSION: u16 = 1;

/// Connection weights, one flat buffer per layer.
///
/// Conv kernels are laid out `[out_ch][in_ch][ky][kx]`, dense matrices `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<S> {
    pub layers: Vec<Vec<S>>,
}

impl<S: Scalar> Weights<S> {
    pub fn zeros(spec: &NetworkSpec<S>) -> Self {
        Self {
            layers: spec
                .layers
                .iter()
                .map(|l| vec![S::zero(); weight_len(&l.kind)])
                .collect(),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` per layer.
    pub fn init(spec: &NetworkSpec<S>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: spec
                .layers
                .iter()
                .map(|l| {
                    let (fi, fo) = fans(&l.kind);
                    let a = (6.0 / (fi + fo) as f64).sqrt();
                    (0..weight_len(&l.kind))
                        .map(|_| S::of(rng.gen_range(-a..a)))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn check(&self, spec: &NetworkSpec<S>) -> Result<(), SnnError> {
        if self.layers.len() != spec.layers.len() {
            return Err(SnnError::ShapeMismatch {
                expected: spec.layers.len(),
                got: self.layers.len(),
            });
        }
        for (w, l) in self.layers.iter().zip(&spec.layers) {
            if w.len() != weight_len(&l.kind) {
                return Err(SnnError::ShapeMismatch {
                    expected: weight_len(&l.kind),
                    got: w.len(),
                });
            }
            if let Some(i) = w.iter().position(|x| !x.is_finite()) {
                return Err(SnnError::NonFiniteInput(i));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scaled(&self, c: S) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|w| w.iter().map(|&x| x * c).collect())
                .collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Weights<T> {
        Weights {
            layers: self
                .layers
                .iter()
                .map(|w| w.iter().map(|&x| T::of(x.as_f64())).collect())
                .collect(),
        }
    }
}

fn kind_header(kind: &LayerKind) -> (u8, [u32; 5]) {
    match *kind {
        LayerKind::Conv {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        } => (0, [in_ch, out_ch, kernel, stride, pad].map(|v| v as u32)),
        LayerKind::Dense { inputs, outputs } => (1, [inputs as u32, outputs as u32, 0, 0, 0]),
    }
}

/// Serialises as `SNNW`, version, spec digest, layer count, then per layer a
/// kind byte, five u32 shape fields, a u64 value count and f32 values, all little-endian.
pub fn encode_weights<S: Scalar>(spec: &NetworkSpec<S>, w: &Weights<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * w.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&spec.digest().to_le_bytes());
    out.extend_from_slice(&(spec.layers.len() as u16).to_le_bytes());
    for (l, vals) in spec.layers.iter().zip(&w.layers) {
        let (k, dims) = kind_header(&l.kind);
        out.push(k);
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(vals.len() as u64).to_le_bytes());
        for &v in vals {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| SnnError::MalformedWeights("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, SnnError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, SnnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, SnnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SnnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_weights<S: Scalar>(
    spec: &NetworkSpec<S>,
    bytes: &[u8],
) -> Result<Weights<S>, SnnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(SnnError::MalformedWeights("bad magic".into()));
    }
    let version = r.u16()?;
    if version != WEIGHTS_VERSION {
        return Err(SnnError::MalformedWeights(format!("version {version}")));
    }
    let found = r.u64()?;
    if found != spec.digest() {
        return Err(SnnError::SpecMismatch {
            expected: spec.digest(),
            found,
        });
    }
    let n = r.u16()? as usize;
    if n != spec.layers.len() {
        return Err(SnnError::MalformedWeights(format!("{n} layers")));
    }
    let mut layers = Vec::with_capacity(n);
    for l in &spec.layers {
        let (k, dims) = kind_header(&l.kind);
        if r.u8()? != k {
            return Err(SnnError::MalformedWeights("layer kind".into()));
        }
        for d in dims {
            if r.u32()? != d {
                return Err(SnnError::MalformedWeights("layer shape".into()));
            }
        }
        let count = r.u64()? as usize;
        if count != weight_len(&l.kind) {
            return Err(SnnError::MalformedWeights("value count".into()));
        }
        let raw = r.take(
            count
                .checked_mul(4)
                .ok_or_else(|| SnnError::MalformedWeights("value count".into()))?,
        )?;
        let vals: Vec<S> = raw
            .chunks_exact(4)
            .map(|c| S::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        layers.push(vals);
    }
    if r.pos != bytes.len() {
        return Err(SnnError::MalformedWeights("trailing bytes".into()));
    }
    let w = Weights { layers };
    w.check(spec)?;
    Ok(w)
}

pub fn save_weights<S: Scalar>(
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
    path: &Path,
) -> Result<(), SnnError> {
    fs::write(path, encode_weights(spec, w)).map_err(|source| SnnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_weights<S: Scalar>(spec: &NetworkSpec<S>, path: &Path) -> Result<Weights<S>, SnnError> {
    let bytes = fs::read(path).map_err(|source| SnnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_weights(spec, &bytes)
}
