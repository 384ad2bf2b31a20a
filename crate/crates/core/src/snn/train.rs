//! Backpropagation through time with surrogate spike derivatives.
//!
//! Gradients pass straight through the reset, so the pre-reset potential of a
//! layer at step `τ` depends on every earlier input current. With
//! `g_τ = ∂L/∂s_τ · σ'(v_τ − v_th)` this gives `∂L/∂I_t = Σ_{τ≥t} g_τ` and
//! `∂L/∂W = Σ_τ g_τ ⊗ X_{≤τ}`, where `X_{≤τ}` is the cumulative layer input.
//! Both are evaluated sparsely since the boxcar zeroes most of `g`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::label::SlipState;
use crate::preprocess::{DatasetSplit, LabeledSample};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

use super::forward::{run, SpikeInput, Trace};
use super::{classify, ClassCounts, LayerKind, NetworkSpec, Neuron, Shape, SnnError, Weights};

/// Samples per gradient work unit; partial sums are reduced in unit order.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Target firing rate per neuron and step for the data-driven init gain;
    /// `None` keeps the plain uniform initialization.
    pub init_rate: Option<f64>,
    /// Training samples used to calibrate the init gain.
    pub calibration_samples: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-4,
            momentum: 0.9,
            patience: None,
            init_rate: Some(0.02),
            calibration_samples: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_acc\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_acc
            ));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained<S> {
    pub weights: Weights<S>,
    pub log: TrainLog,
}

fn surrogate<S: Scalar>(neuron: Neuron<S>, v_minus_th: S) -> S {
    match neuron {
        Neuron::Hard => {
            if v_minus_th.abs() <= S::of(0.5) {
                S::one()
            } else {
                S::zero()
            }
        }
        Neuron::Soft { slope } => {
            let s = S::one() / (S::one() + (-(slope * v_minus_th)).exp());
            slope * s * (S::one() - s)
        }
    }
}

/// Softmax cross-entropy over output sums; returns the loss and `∂L/∂sums`.
fn cross_entropy<S: Scalar>(sums: &[S], label: usize) -> (S, Vec<S>) {
    let m = sums.iter().cloned().fold(S::neg_infinity(), S::max);
    let z: S = sums.iter().map(|&s| (s - m).exp()).sum();
    let lse = m + z.ln();
    let grad = sums
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let p = (s - lse).exp();
            if k == label {
                p - S::one()
            } else {
                p
            }
        })
        .collect();
    (lse - sums[label], grad)
}

/// Visits the `(input index, weight index)` pairs feeding conv output `o`.
#[inline]
fn conv_taps(
    kind: &LayerKind,
    in_shape: Shape,
    out_shape: Shape,
    o: usize,
    mut f: impl FnMut(usize, usize),
) {
    let LayerKind::Conv {
        in_ch,
        kernel,
        stride,
        pad,
        ..
    } = *kind
    else {
        unreachable!()
    };
    let [_, ih, iw] = in_shape;
    let [_, oh, ow] = out_shape;
    let oc = o / (oh * ow);
    let oy = (o / ow) % oh;
    let ox = o % ow;
    for ic in 0..in_ch {
        for ky in 0..kernel {
            let iy = (oy * stride + ky).wrapping_sub(pad);
            if iy >= ih {
                continue;
            }
            for kx in 0..kernel {
                let ix = (ox * stride + kx).wrapping_sub(pad);
                if ix >= iw {
                    continue;
                }
                f(
                    (ic * ih + iy) * iw + ix,
                    ((oc * in_ch + ic) * kernel + ky) * kernel + kx,
                );
            }
        }
    }
}

struct LayerGeom<'a> {
    kind: &'a LayerKind,
    in_shape: Shape,
    out_shape: Shape,
    in_len: usize,
    out_len: usize,
}

/// `dW += Σ_τ g_τ ⊗ X_{≤τ}`, picking the cheaper of two equivalent sweeps.
fn accumulate_dw<S: Scalar>(
    geom: &LayerGeom,
    inputs: &[Vec<(u32, S)>],
    g: &[Vec<(u32, S)>],
    dw: &mut [S],
) {
    let fan = match *geom.kind {
        LayerKind::Conv {
            in_ch,
            out_ch,
            kernel,
            ..
        } => (in_ch * kernel * kernel, out_ch * kernel * kernel),
        LayerKind::Dense { inputs, outputs } => (inputs, outputs),
    };
    let cost_g: usize = g.iter().map(Vec::len).sum::<usize>() * fan.0;
    let cost_x: usize = inputs.iter().map(Vec::len).sum::<usize>() * fan.1;
    if cost_g == 0 {
        return;
    }
    if cost_g <= cost_x {
        dw_forward_sweep(geom, inputs, g, dw);
    } else {
        dw_backward_sweep(geom, inputs, g, dw);
    }
}

/// Sweep over the cumulative input `X_{≤τ}`.
fn dw_forward_sweep<S: Scalar>(
    geom: &LayerGeom,
    inputs: &[Vec<(u32, S)>],
    g: &[Vec<(u32, S)>],
    dw: &mut [S],
) {
    let mut x_cum = vec![S::zero(); geom.in_len];
    for (x_t, g_t) in inputs.iter().zip(g) {
        for &(j, v) in x_t {
            x_cum[j as usize] = x_cum[j as usize] + v;
        }
        for &(o, gv) in g_t {
            let o = o as usize;
            match *geom.kind {
                LayerKind::Dense { inputs, .. } => {
                    let row = &mut dw[o * inputs..(o + 1) * inputs];
                    for (d, &x) in row.iter_mut().zip(&x_cum) {
                        *d = *d + gv * x;
                    }
                }
                LayerKind::Conv { .. } => {
                    conv_taps(geom.kind, geom.in_shape, geom.out_shape, o, |j, wi| {
                        dw[wi] = dw[wi] + gv * x_cum[j];
                    });
                }
            }
        }
    }
}

/// Sweep over the reverse-cumulative `Σ_{τ≥t} g_τ`.
fn dw_backward_sweep<S: Scalar>(
    geom: &LayerGeom,
    inputs: &[Vec<(u32, S)>],
    g: &[Vec<(u32, S)>],
    dw: &mut [S],
) {
    let mut g_cum = vec![S::zero(); geom.out_len];
    let mut active: Vec<u32> = Vec::new();
    let mut seen = vec![false; geom.out_len];
    for (x_t, g_t) in inputs.iter().zip(g).rev() {
        for &(o, gv) in g_t {
            g_cum[o as usize] = g_cum[o as usize] + gv;
            if !seen[o as usize] {
                seen[o as usize] = true;
                active.push(o);
            }
        }
        if active.is_empty() {
            continue;
        }
        for &(j, v) in x_t {
            match *geom.kind {
                LayerKind::Dense { inputs, .. } => {
                    for &o in &active {
                        let o = o as usize;
                        let wi = o * inputs + j as usize;
                        dw[wi] = dw[wi] + g_cum[o] * v;
                    }
                }
                LayerKind::Conv { .. } => {
                    conv_fanout(geom, j as usize, |o, wi| {
                        dw[wi] = dw[wi] + g_cum[o] * v;
                    });
                }
            }
        }
    }
}

/// Visits the `(output index, weight index)` pairs fed by conv input `j`.
#[inline]
fn conv_fanout(geom: &LayerGeom, j: usize, mut f: impl FnMut(usize, usize)) {
    let LayerKind::Conv {
        in_ch,
        out_ch,
        kernel,
        stride,
        pad,
    } = *geom.kind
    else {
        unreachable!()
    };
    let [_, ih, iw] = geom.in_shape;
    let [_, oh, ow] = geom.out_shape;
    let ic = j / (ih * iw);
    let iy = (j / iw) % ih;
    let ix = j % iw;
    for ky in 0..kernel {
        let ny = iy + pad;
        if ny < ky || !(ny - ky).is_multiple_of(stride) || (ny - ky) / stride >= oh {
            continue;
        }
        let oy = (ny - ky) / stride;
        for kx in 0..kernel {
            let nx = ix + pad;
            if nx < kx || !(nx - kx).is_multiple_of(stride) || (nx - kx) / stride >= ow {
                continue;
            }
            let ox = (nx - kx) / stride;
            for oc in 0..out_ch {
                f(
                    (oc * oh + oy) * ow + ox,
                    ((oc * in_ch + ic) * kernel + ky) * kernel + kx,
                );
            }
        }
    }
}

/// `acc += Wᵀ g_t`.
fn transpose_scatter<S: Scalar>(geom: &LayerGeom, w: &[S], g_t: &[(u32, S)], acc: &mut [S]) {
    for &(o, gv) in g_t {
        let o = o as usize;
        match *geom.kind {
            LayerKind::Dense { inputs, .. } => {
                let row = &w[o * inputs..(o + 1) * inputs];
                for (a, &wv) in acc.iter_mut().zip(row) {
                    *a = *a + wv * gv;
                }
            }
            LayerKind::Conv { .. } => {
                conv_taps(geom.kind, geom.in_shape, geom.out_shape, o, |j, wi| {
                    acc[j] = acc[j] + w[wi] * gv;
                });
            }
        }
    }
}

fn backward<S: Scalar>(
    spec: &NetworkSpec<S>,
    shapes: &[Shape],
    w: &Weights<S>,
    trace: &Trace<S>,
    e_out: &[S],
    neuron: Neuron<S>,
    grad: &mut Weights<S>,
) {
    let steps = spec.steps;
    let mut e: Vec<S> = (0..steps).flat_map(|_| e_out.iter().cloned()).collect();
    for l in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[l];
        let in_shape = if l == 0 { spec.input } else { shapes[l - 1] };
        let geom = LayerGeom {
            kind: &layer.kind,
            in_shape,
            out_shape: shapes[l],
            in_len: in_shape.iter().product(),
            out_len: shapes[l].iter().product(),
        };
        let n = geom.out_len;
        let th = layer.iaf.v_th;
        let g: Vec<Vec<(u32, S)>> = (0..steps)
            .map(|t| {
                let vp = &trace.v_pre[l][t * n..(t + 1) * n];
                let et = &e[t * n..(t + 1) * n];
                vp.iter()
                    .zip(et)
                    .enumerate()
                    .filter_map(|(o, (&v, &ev))| {
                        if ev.is_zero() {
                            return None;
                        }
                        let d = surrogate(neuron, v - th);
                        (!d.is_zero()).then(|| (o as u32, ev * d))
                    })
                    .collect()
            })
            .collect();
        accumulate_dw(&geom, &trace.inputs[l], &g, &mut grad.layers[l]);
        if l == 0 {
            break;
        }
        let mut acc = vec![S::zero(); geom.in_len];
        let mut prev = vec![S::zero(); steps * geom.in_len];
        for t in (0..steps).rev() {
            transpose_scatter(&geom, &w.layers[l], &g[t], &mut acc);
            prev[t * geom.in_len..(t + 1) * geom.in_len].copy_from_slice(&acc);
        }
        e = prev;
    }
}

/// Loss of one sample and its gradient accumulated into `grad`. Returns
/// `(loss, output sums)`.
fn accumulate_sample<S: Scalar>(
    spec: &NetworkSpec<S>,
    shapes: &[Shape],
    w: &Weights<S>,
    input: &SpikeInput<S>,
    label: usize,
    neuron: Neuron<S>,
    grad: &mut Weights<S>,
) -> Result<(S, Vec<S>), SnnError> {
    let (_, _, trace) = run(spec, w, input, neuron, false, true)?;
    let trace = trace.unwrap();
    let (loss, e_out) = cross_entropy(&trace.out_sum, label);
    backward(spec, shapes, w, &trace, &e_out, neuron, grad);
    Ok((loss, trace.out_sum))
}

/// Softmax cross-entropy of the output spike sums and its exact gradient
/// (soft neurons) or surrogate gradient (hard neurons).
pub fn loss_and_gradient<S: Scalar>(
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
    input: &SpikeInput<S>,
    label: usize,
    neuron: Neuron<S>,
) -> Result<(S, Weights<S>), SnnError> {
    let shapes = spec.shapes()?;
    if label >= spec.outputs() {
        return Err(SnnError::ShapeMismatch {
            expected: spec.outputs(),
            got: label,
        });
    }
    let mut grad = Weights::zeros(spec);
    let (loss, _) = accumulate_sample(spec, &shapes, w, input, label, neuron, &mut grad)?;
    Ok((loss, grad))
}

/// Gradient only; see [`loss_and_gradient`].
pub fn gradient<S: Scalar>(
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
    input: &SpikeInput<S>,
    label: usize,
    neuron: Neuron<S>,
) -> Result<Weights<S>, SnnError> {
    loss_and_gradient(spec, w, input, label, neuron).map(|(_, g)| g)
}

fn add_into<S: Scalar>(dst: &mut Weights<S>, src: &Weights<S>) {
    for (d, s) in dst.layers.iter_mut().zip(&src.layers) {
        for (a, &b) in d.iter_mut().zip(s) {
            *a = *a + b;
        }
    }
}

fn predict_sum<S: Scalar>(sums: &[S]) -> usize {
    let c: Vec<u32> = sums.iter().map(|s| s.as_f64() as u32).collect();
    if c.len() == 3 {
        classify(&ClassCounts([c[0], c[1], c[2]])).index()
    } else {
        (0..c.len()).fold(0, |b, i| if c[i] > c[b] { i } else { b })
    }
}

/// Confusion matrix of predicted against true class, rows = true.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Evaluation {
    pub confusion: [[u64; 3]; 3],
}

impl Evaluation {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|i| self.confusion[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    pub fn recall(&self, class: SlipState) -> Option<f64> {
        let i = class.index();
        let row: u64 = self.confusion[i].iter().sum();
        (row > 0).then(|| self.confusion[i][i] as f64 / row as f64)
    }

    pub fn precision(&self, class: SlipState) -> Option<f64> {
        let i = class.index();
        let col: u64 = (0..3).map(|r| self.confusion[r][i]).sum();
        (col > 0).then(|| self.confusion[i][i] as f64 / col as f64)
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted,no_slip,incipient,gross\n");
        for c in SlipState::ALL {
            let r = &self.confusion[c.index()];
            s.push_str(&format!("{},{},{},{}\n", c.name(), r[0], r[1], r[2]));
        }
        s
    }

    pub fn metrics_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        let mut s = String::from("class,precision,recall,support\n");
        for c in SlipState::ALL {
            s.push_str(&format!(
                "{},{},{},{}\n",
                c.name(),
                fmt(self.precision(c)),
                fmt(self.recall(c)),
                self.confusion[c.index()].iter().sum::<u64>()
            ));
        }
        s.push_str(&format!(
            "accuracy,,{:.4},{}\n",
            self.accuracy(),
            self.total()
        ));
        s
    }
}

pub fn evaluate<S: Scalar>(
    samples: &[LabeledSample],
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
) -> Result<Evaluation, SnnError> {
    if samples.is_empty() {
        return Err(SnnError::EmptySplit("evaluation"));
    }
    let preds: Vec<usize> = samples
        .par_iter()
        .map(|s| super::forward_counts(spec, w, &s.volume).map(|c| classify(&c).index()))
        .collect::<Result<_, _>>()?;
    let mut ev = Evaluation::default();
    for (s, p) in samples.iter().zip(preds) {
        ev.confusion[s.label.index()][p] += 1;
    }
    Ok(ev)
}

/// Rescales each layer in turn, first to last, so that its neurons fire on
/// about a `target` fraction of steps over `inputs`. Returns the gains.
pub fn calibrate_rates<S: Scalar>(
    spec: &NetworkSpec<S>,
    w: &mut Weights<S>,
    inputs: &[SpikeInput<S>],
    target: f64,
) -> Result<Vec<f64>, SnnError> {
    let shapes = spec.shapes()?;
    let mut gains = Vec::with_capacity(spec.layers.len());
    for l in 0..spec.layers.len() {
        let sub = NetworkSpec {
            steps: spec.steps,
            input: spec.input,
            layers: spec.layers[..=l].to_vec(),
        };
        let base = w.layers[l].clone();
        let n = shapes[l].iter().product::<usize>() * spec.steps * inputs.len().max(1);
        let rate_at = |g: f64| -> Result<f64, SnnError> {
            let mut sw = Weights {
                layers: w.layers[..=l].to_vec(),
            };
            sw.layers[l] = base.iter().map(|&x| x * S::of(g)).collect();
            let spikes: Vec<usize> = inputs
                .par_iter()
                .map(|x| {
                    run(&sub, &sw, x, Neuron::Hard, true, false).map(|r| r.1.unwrap()[l].count())
                })
                .collect::<Result<_, _>>()?;
            Ok(spikes.iter().sum::<usize>() as f64 / n as f64)
        };
        let (mut lo, mut hi) = (1e-2f64, 1e3f64);
        for _ in 0..24 {
            let g = (lo * hi).sqrt();
            if rate_at(g)? < target {
                lo = g;
            } else {
                hi = g;
            }
        }
        let g = (lo * hi).sqrt();
        w.layers[l] = base.iter().map(|&x| x * S::of(g)).collect();
        gains.push(g);
    }
    Ok(gains)
}

/// SGD with momentum on mini-batches, keeping the weights of the epoch with
/// the best validation accuracy (earliest on ties).
pub fn train<S: Scalar>(
    data: &DatasetSplit,
    spec: &NetworkSpec<S>,
    hp: &Hyperparams,
    seed: u64,
) -> Result<Trained<S>, SnnError> {
    spec.validate()?;
    if data.train.is_empty() {
        return Err(SnnError::EmptySplit("train"));
    }
    if data.validation.is_empty() {
        return Err(SnnError::EmptySplit("validation"));
    }
    if hp.batch_size == 0 {
        return Err(SnnError::InvalidSpec("batch size must be positive".into()));
    }
    let shapes = spec.shapes()?;
    let mut w = Weights::init(spec, derive_seed(seed, "init", 0));
    if let Some(rate) = hp.init_rate {
        let mut idx: Vec<usize> = (0..data.train.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            "calibrate",
            0,
        )));
        let inputs: Vec<SpikeInput<S>> = idx
            .iter()
            .take(hp.calibration_samples.max(1))
            .map(|&i| SpikeInput::from_volume(&data.train[i].volume))
            .collect();
        calibrate_rates(spec, &mut w, &inputs, rate)?;
    }
    let mut velocity = Weights::zeros(spec);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Weights<S>)> = None;
    let mut since_best = 0usize;
    let lr = S::of(hp.learning_rate);
    let mu = S::of(hp.momentum);
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=hp.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle", epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(hp.batch_size) {
            let parts: Vec<(Weights<S>, f64, usize)> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = Weights::zeros(spec);
                    let mut loss = 0.0;
                    let mut hits = 0;
                    for &i in chunk {
                        let s = &data.train[i];
                        let input = SpikeInput::from_volume(&s.volume);
                        let label = s.label.index();
                        let (l, sums) = accumulate_sample(
                            spec,
                            &shapes,
                            &w,
                            &input,
                            label,
                            Neuron::Hard,
                            &mut g,
                        )?;
                        loss += l.as_f64();
                        hits += (predict_sum(&sums) == label) as usize;
                    }
                    Ok((g, loss, hits))
                })
                .collect::<Result<_, SnnError>>()?;
            let mut grad = Weights::zeros(spec);
            for (g, l, h) in &parts {
                add_into(&mut grad, g);
                loss_sum += l;
                correct += h;
            }
            let scale = S::one() / S::of(batch.len() as f64);
            for ((wl, vl), gl) in w
                .layers
                .iter_mut()
                .zip(&mut velocity.layers)
                .zip(&grad.layers)
            {
                for ((wv, vv), &gv) in wl.iter_mut().zip(vl.iter_mut()).zip(gl) {
                    *vv = mu * *vv + gv * scale;
                    *wv = *wv - lr * *vv;
                }
            }
        }
        let train_loss = loss_sum / data.train.len() as f64;
        if !train_loss.is_finite() || w.check(spec).is_err() {
            return Err(SnnError::DivergedLoss { epoch });
        }
        let val_acc = evaluate(&data.validation, spec, &w)?.accuracy();
        log.records.push(TrainRecord {
            epoch,
            train_loss,
            train_acc: correct as f64 / data.train.len() as f64,
            val_acc,
        });
        if best.as_ref().is_none_or(|(b, _)| val_acc > *b) {
            best = Some((val_acc, w.clone()));
            log.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if hp.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    Ok(Trained {
        weights: best.map_or(w, |(_, bw)| bw),
        log,
    })
}
