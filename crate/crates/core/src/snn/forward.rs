use crate::preprocess::{SpikeVolume, GRID, STEPS};
use crate::scalar::Scalar;

use super::{ClassCounts, LayerKind, NetworkSpec, Shape, SnnError, Weights};

/// Sparse per-step network input: ascending `(flat index, value)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeInput<S> {
    pub shape: Shape,
    pub steps: Vec<Vec<(u32, S)>>,
}

impl<S: Scalar> SpikeInput<S> {
    pub fn from_volume(vol: &SpikeVolume) -> Self {
        Self {
            shape: [1, GRID, GRID],
            steps: (0..STEPS)
                .map(|t| {
                    let base = (t * GRID * GRID) as u32;
                    vol.step_nonzeros(t)
                        .iter()
                        .map(|&(o, c)| (o - base, S::of(c as f64)))
                        .collect()
                })
                .collect(),
        }
    }

    /// From a dense `(t, c, y, x)` buffer.
    pub fn from_dense(shape: Shape, steps: usize, data: &[S]) -> Result<Self, SnnError> {
        let n: usize = shape.iter().product();
        if data.len() != n * steps {
            return Err(SnnError::ShapeMismatch {
                expected: n * steps,
                got: data.len(),
            });
        }
        Ok(Self {
            shape,
            steps: data
                .chunks(n)
                .map(|frame| {
                    frame
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| !v.is_zero())
                        .map(|(i, &v)| (i as u32, v))
                        .collect()
                })
                .collect(),
        })
    }

    pub fn to_dense(&self) -> Vec<S> {
        let n: usize = self.shape.iter().product();
        let mut d = vec![S::zero(); n * self.steps.len()];
        for (t, step) in self.steps.iter().enumerate() {
            for &(i, v) in step {
                d[t * n + i as usize] = v;
            }
        }
        d
    }
}

/// Spike nonlinearity used by the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Neuron<S> {
    /// Heaviside spike with hard reset.
    Hard,
    /// `sigmoid(slope·(v − v_th))` output, no reset. Differentiable stand-in for gradient checks.
    Soft { slope: S },
}

/// Spiking neuron indices per step, ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpikeRecord {
    pub steps: Vec<Vec<u32>>,
}

impl SpikeRecord {
    pub fn count(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Forward {
    /// Output-layer spikes per unit over all steps.
    pub counts: Vec<u32>,
    /// One record per layer.
    pub spikes: Vec<SpikeRecord>,
}

impl Forward {
    pub fn class_counts(&self) -> Result<ClassCounts, SnnError> {
        ClassCounts::from_slice(&self.counts)
    }
}

/// Activations kept for backpropagation.
pub(crate) struct Trace<S> {
    /// Per layer, per step: the layer's sparse input.
    pub inputs: Vec<Vec<Vec<(u32, S)>>>,
    /// Per layer: pre-reset membrane potential, step-major `[t][neuron]`.
    pub v_pre: Vec<Vec<S>>,
    /// Per output unit, summed output over all steps.
    pub out_sum: Vec<S>,
}

pub(crate) fn check_input<S: Scalar>(
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
    input: &SpikeInput<S>,
) -> Result<Vec<Shape>, SnnError> {
    let shapes = spec.shapes()?;
    w.check(spec)?;
    if input.shape != spec.input {
        return Err(SnnError::ShapeMismatch {
            expected: spec.input_len(),
            got: input.shape.iter().product(),
        });
    }
    if input.steps.len() != spec.steps {
        return Err(SnnError::ShapeMismatch {
            expected: spec.steps,
            got: input.steps.len(),
        });
    }
    let n = spec.input_len() as u32;
    for step in &input.steps {
        if step.windows(2).any(|p| p[0].0 >= p[1].0) || step.last().is_some_and(|l| l.0 >= n) {
            return Err(SnnError::InvalidSpec(
                "input indices must be ascending and in range".into(),
            ));
        }
        if let Some(i) = step.iter().position(|(_, v)| !v.is_finite()) {
            return Err(SnnError::NonFiniteInput(i));
        }
    }
    Ok(shapes)
}

/// Adds `W·x` into `cur`, visiting inputs in ascending index order.
pub(crate) fn scatter<S: Scalar>(
    kind: &LayerKind,
    in_shape: Shape,
    out_shape: Shape,
    w: &[S],
    x: &[(u32, S)],
    cur: &mut [S],
) {
    match *kind {
        LayerKind::Conv {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        } => {
            let [_, ih, iw] = in_shape;
            let [_, oh, ow] = out_shape;
            for &(idx, val) in x {
                let idx = idx as usize;
                let ic = idx / (ih * iw);
                let iy = (idx / iw) % ih;
                let ix = idx % iw;
                for ky in 0..kernel {
                    let ny = iy + pad;
                    if ny < ky || !(ny - ky).is_multiple_of(stride) {
                        continue;
                    }
                    let oy = (ny - ky) / stride;
                    if oy >= oh {
                        continue;
                    }
                    for kx in 0..kernel {
                        let nx = ix + pad;
                        if nx < kx || !(nx - kx).is_multiple_of(stride) {
                            continue;
                        }
                        let ox = (nx - kx) / stride;
                        if ox >= ow {
                            continue;
                        }
                        for oc in 0..out_ch {
                            let wi = ((oc * in_ch + ic) * kernel + ky) * kernel + kx;
                            let o = (oc * oh + oy) * ow + ox;
                            cur[o] = cur[o] + w[wi] * val;
                        }
                    }
                }
            }
        }
        LayerKind::Dense { inputs, outputs } => {
            for &(j, val) in x {
                let j = j as usize;
                for (o, c) in cur.iter_mut().enumerate().take(outputs) {
                    *c = *c + w[o * inputs + j] * val;
                }
            }
        }
    }
}

fn sigmoid<S: Scalar>(z: S) -> S {
    S::one() / (S::one() + (-z).exp())
}

/// Shared forward loop. Returns real-valued output sums, integer output
/// counts, optional spike records and an optional trace.
pub(crate) fn run<S: Scalar>(
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
    input: &SpikeInput<S>,
    neuron: Neuron<S>,
    keep_records: bool,
    keep_trace: bool,
) -> Result<(Vec<u32>, Option<Vec<SpikeRecord>>, Option<Trace<S>>), SnnError> {
    let shapes = check_input(spec, w, input)?;
    let n_layers = spec.layers.len();
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let mut v: Vec<Vec<S>> = sizes.iter().map(|&n| vec![S::zero(); n]).collect();
    let mut cur: Vec<Vec<S>> = sizes.iter().map(|&n| vec![S::zero(); n]).collect();
    let n_out = *sizes.last().unwrap();
    let mut counts = vec![0u32; n_out];
    let mut out_sum = vec![S::zero(); n_out];
    let mut records: Vec<SpikeRecord> = if keep_records {
        vec![SpikeRecord::default(); n_layers]
    } else {
        Vec::new()
    };
    let mut trace = keep_trace.then(|| Trace {
        inputs: vec![Vec::with_capacity(spec.steps); n_layers],
        v_pre: sizes
            .iter()
            .map(|&n| Vec::with_capacity(n * spec.steps))
            .collect(),
        out_sum: Vec::new(),
    });

    for step in &input.steps {
        let mut x: Vec<(u32, S)> = step.clone();
        for (l, layer) in spec.layers.iter().enumerate() {
            let in_shape = if l == 0 { spec.input } else { shapes[l - 1] };
            let c = &mut cur[l];
            c.iter_mut().for_each(|e| *e = S::zero());
            scatter(&layer.kind, in_shape, shapes[l], &w.layers[l], &x, c);
            let th = layer.iaf.v_th;
            let mut out = Vec::new();
            for (o, (vo, &co)) in v[l].iter_mut().zip(c.iter()).enumerate() {
                let vp = *vo + co;
                if let Some(tr) = trace.as_mut() {
                    tr.v_pre[l].push(vp);
                }
                match neuron {
                    Neuron::Hard => {
                        if vp >= th {
                            *vo = layer.iaf.v_reset;
                            out.push((o as u32, S::one()));
                        } else {
                            *vo = vp;
                        }
                    }
                    Neuron::Soft { slope } => {
                        *vo = vp;
                        out.push((o as u32, sigmoid(slope * (vp - th))));
                    }
                }
            }
            if keep_records {
                let rec = match neuron {
                    Neuron::Hard => out.iter().map(|&(o, _)| o).collect(),
                    Neuron::Soft { .. } => Vec::new(),
                };
                records[l].steps.push(rec);
            }
            if let Some(tr) = trace.as_mut() {
                tr.inputs[l].push(std::mem::take(&mut x));
            }
            x = out;
        }
        for &(o, val) in &x {
            out_sum[o as usize] = out_sum[o as usize] + val;
            if matches!(neuron, Neuron::Hard) {
                counts[o as usize] += 1;
            }
        }
    }
    if let Some(tr) = trace.as_mut() {
        tr.out_sum = out_sum;
    }
    Ok((counts, keep_records.then_some(records), trace))
}

/// Spike-exact forward pass with per-layer spike records.
pub fn forward<S: Scalar>(
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
    input: &SpikeInput<S>,
) -> Result<Forward, SnnError> {
    let (counts, records, _) = run(spec, w, input, Neuron::Hard, true, false)?;
    Ok(Forward {
        counts,
        spikes: records.unwrap(),
    })
}

/// Output class counts of one volume; the network must have three outputs.
pub fn forward_counts<S: Scalar>(
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
    vol: &SpikeVolume,
) -> Result<ClassCounts, SnnError> {
    let (counts, _, _) = run(
        spec,
        w,
        &SpikeInput::from_volume(vol),
        Neuron::Hard,
        false,
        false,
    )?;
    ClassCounts::from_slice(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::{IafParams, Layer};

    fn tiny_conv() -> NetworkSpec<f64> {
        NetworkSpec {
            steps: 3,
            input: [1, 3, 3],
            layers: vec![Layer {
                kind: LayerKind::Conv {
                    in_ch: 1,
                    out_ch: 1,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
                iaf: IafParams::default(),
            }],
        }
    }

    #[test]
    fn zero_volume_zero_weights() {
        let spec = NetworkSpec::<f32>::slip_detector();
        let w = Weights::zeros(&spec);
        let c = forward_counts(&spec, &w, &SpikeVolume::zeros(0)).unwrap();
        assert_eq!(c, ClassCounts([0, 0, 0]));
    }

    #[test]
    fn centre_kernel_passes_input_through() {
        let spec = tiny_conv();
        let mut w = Weights::zeros(&spec);
        w.layers[0][4] = 1.0;
        let mut data = vec![0.0; 27];
        data[4] = 1.0; // step 0, centre
        data[9] = 0.5; // step 1, corner
        data[18] = 0.5; // step 2, corner
        let input = SpikeInput::from_dense([1, 3, 3], 3, &data).unwrap();
        let f = forward(&spec, &w, &input).unwrap();
        assert_eq!(f.spikes[0].steps, vec![vec![4], vec![], vec![0]]);
        assert_eq!(f.counts.iter().sum::<u32>(), 2);
    }

    #[test]
    fn stride_two_maps_corners() {
        let mut spec = tiny_conv();
        spec.input = [1, 4, 4];
        spec.layers[0].kind = LayerKind::Conv {
            in_ch: 1,
            out_ch: 1,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        assert_eq!(spec.shapes().unwrap()[0], [1, 2, 2]);
        let mut w = Weights::zeros(&spec);
        w.layers[0] = vec![1.0; 9];
        // input pixel (3,3) only reaches output (1,1)
        let mut data = vec![0.0; 48];
        data[15] = 1.0;
        let f = forward(
            &spec,
            &w,
            &SpikeInput::from_dense([1, 4, 4], 3, &data).unwrap(),
        )
        .unwrap();
        assert_eq!(f.spikes[0].steps[0], vec![3]);
    }

    #[test]
    fn rejects_wrong_steps() {
        let spec = tiny_conv();
        let w = Weights::zeros(&spec);
        let input = SpikeInput::from_dense([1, 3, 3], 2, &[0.0; 18]).unwrap();
        assert!(matches!(
            forward(&spec, &w, &input),
            Err(SnnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn volume_input_round_trip() {
        let mut dense = vec![0u16; crate::preprocess::VOLUME_LEN];
        dense[SpikeVolume::offset(2, 5, 7)] = 3;
        dense[SpikeVolume::offset(29, 19, 19)] = 1;
        let vol = SpikeVolume::from_dense(0, &dense).unwrap();
        let inp = SpikeInput::<f32>::from_volume(&vol);
        assert_eq!(inp.steps[2], vec![(5 * 20 + 7, 3.0)]);
        assert_eq!(inp.steps[29], vec![(399, 1.0)]);
        let back: Vec<u16> = inp.to_dense().iter().map(|&x| x as u16).collect();
        assert_eq!(back, dense);
    }
}
