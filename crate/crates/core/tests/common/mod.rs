//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slipnet::events::{Event, EventStream, SENSOR_HEIGHT, SENSOR_WIDTH};
use slipnet::preprocess::{DatasetSplit, LabeledSample, SpikeVolume, VOLUME_LEN};
use slipnet::snn::{IafParams, Layer, LayerKind, NetworkSpec, Weights};
use slipnet::{Scalar, SlipState};

/// Per-neuron scalar simulation of the network on a dense `(t, c, y, x)` input.
/// Returns spikes indexed `[layer][t][neuron]`.
pub fn naive_forward<S: Scalar>(
    spec: &NetworkSpec<S>,
    w: &Weights<S>,
    input: &[S],
) -> Vec<Vec<Vec<bool>>> {
    let shapes = spec.shapes().unwrap();
    let in_len: usize = spec.input.iter().product();
    let mut v: Vec<Vec<S>> = shapes
        .iter()
        .map(|s| vec![S::zero(); s.iter().product()])
        .collect();
    let mut out = vec![Vec::new(); spec.layers.len()];
    for t in 0..spec.steps {
        let mut x: Vec<S> = input[t * in_len..(t + 1) * in_len].to_vec();
        let mut in_shape = spec.input;
        for (l, layer) in spec.layers.iter().enumerate() {
            let [oc_n, oh, ow] = shapes[l];
            let mut spikes = vec![false; oc_n * oh * ow];
            for o in 0..spikes.len() {
                let mut current = S::zero();
                match layer.kind {
                    LayerKind::Conv {
                        in_ch,
                        kernel,
                        stride,
                        pad,
                        ..
                    } => {
                        let (oc, oy, ox) = (o / (oh * ow), (o / ow) % oh, o % ow);
                        let [_, ih, iw] = in_shape;
                        for ic in 0..in_ch {
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= ih as isize || ix >= iw as isize {
                                        continue;
                                    }
                                    let j = (ic * ih + iy as usize) * iw + ix as usize;
                                    let wi = ((oc * in_ch + ic) * kernel + ky) * kernel + kx;
                                    current = current + w.layers[l][wi] * x[j];
                                }
                            }
                        }
                    }
                    LayerKind::Dense { inputs, .. } => {
                        for (j, &xj) in x.iter().enumerate() {
                            current = current + w.layers[l][o * inputs + j] * xj;
                        }
                    }
                }
                let vp = v[l][o] + current;
                if vp >= layer.iaf.v_th {
                    spikes[o] = true;
                    v[l][o] = layer.iaf.v_reset;
                } else {
                    v[l][o] = vp;
                }
            }
            x = spikes
                .iter()
                .map(|&s| if s { S::one() } else { S::zero() })
                .collect();
            in_shape = shapes[l];
            out[l].push(spikes);
        }
    }
    out
}

/// Random small network: up to 3 layers, up to 8 channels, up to 10 steps, 6x6 input.
pub fn random_spec<S: Scalar>(rng: &mut ChaCha8Rng) -> NetworkSpec<S> {
    let steps = rng.gen_range(1..=10);
    let in_ch = rng.gen_range(1..=2);
    let input = [in_ch, 6, 6];
    let n_layers = rng.gen_range(1..=3);
    let mut layers = Vec::new();
    let mut cur = input;
    for i in 0..n_layers {
        let last = i + 1 == n_layers;
        let flat = cur[1] == 1 && cur[2] == 1;
        let kind = if !flat && !last && rng.gen_bool(0.7) || !flat && i == 0 && rng.gen_bool(0.5) {
            let kernel = rng.gen_range(1..=3usize.min(cur[1]));
            let stride = rng.gen_range(1..=2);
            let pad = rng.gen_range(0..=kernel / 2);
            LayerKind::Conv {
                in_ch: cur[0],
                out_ch: rng.gen_range(1..=8),
                kernel,
                stride,
                pad,
            }
        } else {
            LayerKind::Dense {
                inputs: cur.iter().product(),
                outputs: if last { 3 } else { rng.gen_range(1..=8) },
            }
        };
        let th = rng.gen_range(0.5..2.0);
        layers.push(Layer {
            kind,
            iaf: IafParams::new(S::of(th), S::zero()).unwrap(),
        });
        let spec = NetworkSpec {
            steps,
            input,
            layers: layers.clone(),
        };
        cur = *spec.shapes().unwrap().last().unwrap();
    }
    NetworkSpec {
        steps,
        input,
        layers,
    }
}

pub fn random_weights<S: Scalar>(spec: &NetworkSpec<S>, rng: &mut ChaCha8Rng) -> Weights<S> {
    let mut w = Weights::zeros(spec);
    for layer in &mut w.layers {
        for x in layer.iter_mut() {
            *x = S::of(rng.gen_range(-0.6..1.0));
        }
    }
    w
}

pub fn random_input<S: Scalar>(spec: &NetworkSpec<S>, rng: &mut ChaCha8Rng) -> Vec<S> {
    let n = spec.steps * spec.input.iter().product::<usize>();
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.4) {
                S::of(rng.gen_range(1..=3) as f64)
            } else {
                S::zero()
            }
        })
        .collect()
}

/// Three linearly separable count patterns: events concentrated in the top,
/// middle or bottom third of the grid, with Poisson-like jitter.
pub fn toy_samples(per_class: usize, seed: u64) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..per_class {
        for class in SlipState::ALL {
            let mut dense = vec![0u16; VOLUME_LEN];
            let rows = match class {
                SlipState::NoSlip => 0..6,
                SlipState::Incipient => 7..13,
                SlipState::Gross => 14..20,
            };
            for t in 0..30 {
                for _ in 0..rng.gen_range(4..10) {
                    let r = rng.gen_range(rows.clone());
                    let c = rng.gen_range(0..20);
                    dense[SpikeVolume::offset(t, r, c)] += 1;
                }
            }
            out.push(LabeledSample {
                volume: SpikeVolume::from_dense(0, &dense).unwrap(),
                label: class,
                trial_id: i,
            });
        }
    }
    out
}

pub fn toy_split(seed: u64) -> DatasetSplit {
    DatasetSplit {
        train: toy_samples(20, seed),
        validation: toy_samples(5, seed + 1),
        test: toy_samples(5, seed + 2),
        ratios: None,
        partition: None,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random 640x480 stream: mixed polarity, a share of events on or near the
/// crop edges, timestamps in `[0, span_us)`.
pub fn random_sensor_stream(rng: &mut ChaCha8Rng, n: usize, span_us: u64) -> EventStream {
    const EDGES_X: [u16; 6] = [0, 119, 120, 519, 520, 639];
    const EDGES_Y: [u16; 6] = [0, 39, 40, 439, 440, 479];
    let mut events: Vec<Event> = (0..n)
        .map(|_| {
            let x = if rng.gen_bool(0.2) {
                EDGES_X[rng.gen_range(0..6)]
            } else {
                rng.gen_range(0..SENSOR_WIDTH)
            };
            let y = if rng.gen_bool(0.2) {
                EDGES_Y[rng.gen_range(0..6)]
            } else {
                rng.gen_range(0..SENSOR_HEIGHT)
            };
            let p = if rng.gen_bool(0.7) { 1 } else { -1 };
            Event::new(rng.gen_range(0..span_us), x, y, p)
        })
        .collect();
    events.sort_by_key(|e| e.t_us);
    EventStream::sensor(events)
}

/// Events the pipeline keeps: positive polarity inside the centred 400x400 crop.
pub fn naive_retained(stream: &EventStream) -> usize {
    stream
        .events
        .iter()
        .filter(|e| e.polarity == 1 && (120..520).contains(&e.x) && (40..440).contains(&e.y))
        .count()
}

/// Dense `(t, c, r, col)` counts straight from the raw sensor stream.
pub fn naive_volume(stream: &EventStream, t_start_us: u64) -> Vec<u16> {
    let mut v = vec![0u16; VOLUME_LEN];
    for e in &stream.events {
        if e.polarity != 1 || !(120..520).contains(&e.x) || !(40..440).contains(&e.y) {
            continue;
        }
        if e.t_us < t_start_us || e.t_us >= t_start_us + 30_000 {
            continue;
        }
        let t = ((e.t_us - t_start_us) / 1_000) as usize;
        let r = ((e.y - 40) / 20) as usize;
        let c = ((e.x - 120) / 20) as usize;
        v[(t * 20 + r) * 20 + c] += 1;
    }
    v
}

/// First-slip times never decrease from the outer ring inwards; rings that
/// never slipped are skipped.
pub fn ring_order_holds(traj: &slipnet::sim::Trajectory) -> bool {
    let times: Vec<f64> = traj
        .ring_first_slip_s()
        .into_iter()
        .rev()
        .flatten()
        .collect();
    times.windows(2).all(|p| p[0] <= p[1])
}

/// Mean event rates (events/s) over `[incipient - 200 ms, incipient)` and
/// `[gross + 500 ms, gross + 700 ms)`.
pub fn onset_rates(trial: &slipnet::Trial) -> Option<(f64, f64)> {
    let inc = trial.incipient_onset_us?;
    let gross = trial.gross_onset_us?;
    let s = &trial.stream;
    let pre = s.slice_time(inc.saturating_sub(200_000), inc).len() as f64 / 0.2;
    let post = s.slice_time(gross + 500_000, gross + 700_000).len() as f64 / 0.2;
    Some((pre, post))
}

/// The mid-grid kinematic settings used for simulator checks, one per trial index.
pub fn mid_grid_scenario(i: u64) -> slipnet::sim::ScenarioConfig {
    const DIRS: [f64; 8] = [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0];
    let depth = [2.8, 3.0][(i % 2) as usize];
    let speed = [1.0, 1.2][((i / 2) % 2) as usize];
    slipnet::sim::ScenarioConfig::kinematic(
        depth,
        speed,
        DIRS[(i % 8) as usize],
        slipnet::seed::derive_seed(77, "mid-grid", i),
    )
}
