use sha2::{Digest, Sha256};

use crate::preprocess::{GRID, STEPS};
use crate::scalar::Scalar;

use super::SnnError;

/// Integrate-and-fire threshold and reset potential.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IafParams<S> {
    pub v_th: S,
    pub v_reset: S,
}

impl<S: Scalar> Default for IafParams<S> {
    fn default() -> Self {
        Self {
            v_th: S::one(),
            v_reset: S::zero(),
        }
    }
}

impl<S: Scalar> IafParams<S> {
    pub fn new(v_th: S, v_reset: S) -> Result<Self, SnnError> {
        if !(v_th > v_reset) || !v_th.is_finite() || !v_reset.is_finite() {
            return Err(SnnError::InvalidSpec(format!(
                "threshold {v_th} must exceed reset {v_reset}"
            )));
        }
        Ok(Self { v_th, v_reset })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Square-kernel 2-D convolution, no bias.
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Fully connected over the flattened `(c, y, x)` input, no bias.
    Dense { inputs: usize, outputs: usize },
}

/// A synaptic layer followed by a population of IAF neurons.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S> {
    pub kind: LayerKind,
    pub iaf: IafParams<S>,
}

/// `(channels, height, width)`; dense activations are `(n, 1, 1)`.
pub type Shape = [usize; 3];

fn conv_out(n: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec<S> {
    pub steps: usize,
    pub input: Shape,
    pub layers: Vec<Layer<S>>,
}

impl<S: Scalar> NetworkSpec<S> {
    /// Conv(1→8, 3x3, s1, p1) → Conv(8→16, 3x3, s2, p1) → Dense(1600→128) → Dense(128→3),
    /// each followed by IAF neurons, over 30 steps of 20x20 counts.
    pub fn slip_detector() -> Self {
        let iaf = IafParams::default();
        Self {
            steps: STEPS,
            input: [1, GRID, GRID],
            layers: vec![
                Layer {
                    kind: LayerKind::Conv {
                        in_ch: 1,
                        out_ch: 8,
                        kernel: 3,
                        stride: 1,
                        pad: 1,
                    },
                    iaf,
                },
                Layer {
                    kind: LayerKind::Conv {
                        in_ch: 8,
                        out_ch: 16,
                        kernel: 3,
                        stride: 2,
                        pad: 1,
                    },
                    iaf,
                },
                Layer {
                    kind: LayerKind::Dense {
                        inputs: 16 * 10 * 10,
                        outputs: 128,
                    },
                    iaf,
                },
                Layer {
                    kind: LayerKind::Dense {
                        inputs: 128,
                        outputs: 3,
                    },
                    iaf,
                },
            ],
        }
    }

    /// Activation shape after every layer; fails if consecutive layers do not compose.
    pub fn shapes(&self) -> Result<Vec<Shape>, SnnError> {
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer.kind {
                LayerKind::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                } => {
                    if in_ch != cur[0] || kernel == 0 || stride == 0 || out_ch == 0 {
                        return Err(SnnError::InvalidSpec(format!(
                            "layer {i}: conv expects {in_ch} channels, input has {}",
                            cur[0]
                        )));
                    }
                    let h = conv_out(cur[1], kernel, stride, pad);
                    let w = conv_out(cur[2], kernel, stride, pad);
                    match (h, w) {
                        (Some(h), Some(w)) if h > 0 && w > 0 => [out_ch, h, w],
                        _ => {
                            return Err(SnnError::InvalidSpec(format!(
                                "layer {i}: kernel larger than padded input"
                            )))
                        }
                    }
                }
                LayerKind::Dense { inputs, outputs } => {
                    if inputs != cur.iter().product::<usize>() || outputs == 0 {
                        return Err(SnnError::InvalidSpec(format!(
                            "layer {i}: dense expects {inputs} inputs, got {:?}",
                            cur
                        )));
                    }
                    [outputs, 1, 1]
                }
            };
            out.push(cur);
        }
        if out.is_empty() {
            return Err(SnnError::InvalidSpec("network has no layers".into()));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), SnnError> {
        self.shapes()?;
        for l in &self.layers {
            IafParams::new(l.iaf.v_th, l.iaf.v_reset)?;
        }
        if self.steps == 0 {
            return Err(SnnError::InvalidSpec("zero time steps".into()));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn outputs(&self) -> usize {
        self.shapes().map_or(0, |s| s.last().unwrap()[0])
    }

    /// Canonical text form; its SHA-256 prefix tags weight files.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "steps={} input={}x{}x{}",
            self.steps, self.input[0], self.input[1], self.input[2]
        );
        for l in &self.layers {
            match l.kind {
                LayerKind::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                } => s.push_str(&format!(
                    " conv({in_ch},{out_ch},k{kernel},s{stride},p{pad})"
                )),
                LayerKind::Dense { inputs, outputs } => {
                    s.push_str(&format!(" dense({inputs},{outputs})"))
                }
            }
            s.push_str(&format!(
                "+iaf({:e},{:e})",
                l.iaf.v_th.as_f64(),
                l.iaf.v_reset.as_f64()
            ));
        }
        s
    }

    pub fn digest(&self) -> u64 {
        let h = Sha256::digest(self.describe().as_bytes());
        u64::from_le_bytes(h[..8].try_into().unwrap())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| weight_len(&l.kind)).sum()
    }
}

pub fn weight_len(kind: &LayerKind) -> usize {
    match *kind {
        LayerKind::Conv {
            in_ch,
            out_ch,
            kernel,
            ..
        } => out_ch * in_ch * kernel * kernel,
        LayerKind::Dense { inputs, outputs } => inputs * outputs,
    }
}

/// `(fan_in, fan_out)` used by the uniform initializer.
pub fn fans(kind: &LayerKind) -> (usize, usize) {
    match *kind {
        LayerKind::Conv {
            in_ch,
            out_ch,
            kernel,
            ..
        } => (in_ch * kernel * kernel, out_ch * kernel * kernel),
        LayerKind::Dense { inputs, outputs } => (inputs, outputs),
    }
}
