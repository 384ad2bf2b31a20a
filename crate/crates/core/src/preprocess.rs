//! Event stream to network input: polarity filter, centre crop, 20x20 pooling,
//! 1 ms binning into `(30, 1, 20, 20)` count volumes, and per-phase sample
//! extraction with a trial-level train/validation/test split.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::events::{Event, EventStream, Trial, SENSOR_HEIGHT, SENSOR_WIDTH};
use crate::label::SlipState;

pub const CROP_SIZE: u16 = 400;
pub const CROP_X0: u16 = (SENSOR_WIDTH - CROP_SIZE) / 2;
pub const CROP_Y0: u16 = (SENSOR_HEIGHT - CROP_SIZE) / 2;
pub const POOL: u16 = 20;
pub const GRID: usize = (CROP_SIZE / POOL) as usize;

pub const STEPS: usize = 30;
pub const STEP_US: u64 = 1_000;
pub const WINDOW_US: u64 = STEPS as u64 * STEP_US;
pub const MAX_SAMPLES_PER_PHASE: usize = 50;

pub const VOLUME_LEN: usize = STEPS * GRID * GRID;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("expected a {expected_w}x{expected_h} stream, got {w}x{h}")]
    WrongResolution {
        expected_w: u16,
        expected_h: u16,
        w: u16,
        h: u16,
    },
    #[error("trial lacks incipient and/or gross onset")]
    MissingOnsets,
    #[error("need at least 3 trials to split, got {0}")]
    TooFewTrials(usize),
    #[error("malformed volume file: {0}")]
    MalformedVolume(&'static str),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

fn require(stream: &EventStream, w: u16, h: u16) -> Result<(), PreprocessError> {
    if stream.width != w || stream.height != h {
        return Err(PreprocessError::WrongResolution {
            expected_w: w,
            expected_h: h,
            w: stream.width,
            h: stream.height,
        });
    }
    Ok(())
}

/// Keeps positive events inside the centred 400x400 region, shifted to crop coordinates.
pub fn crop_and_filter(stream: &EventStream) -> Result<EventStream, PreprocessError> {
    require(stream, SENSOR_WIDTH, SENSOR_HEIGHT)?;
    let x_range = CROP_X0..CROP_X0 + CROP_SIZE;
    let y_range = CROP_Y0..CROP_Y0 + CROP_SIZE;
    let events = stream
        .events
        .iter()
        .filter(|e| e.polarity == 1 && x_range.contains(&e.x) && y_range.contains(&e.y))
        .map(|e| Event::new(e.t_us, e.x - CROP_X0, e.y - CROP_Y0, e.polarity))
        .collect();
    Ok(EventStream::new(CROP_SIZE, CROP_SIZE, events))
}

/// Maps each event to its 20x20-pixel pooling cell. The input is already time
/// sorted, so keeping input order yields every cell's merged, sorted train.
pub fn pool_events(stream: &EventStream) -> Result<EventStream, PreprocessError> {
    require(stream, CROP_SIZE, CROP_SIZE)?;
    let events = stream
        .events
        .iter()
        .map(|e| Event::new(e.t_us, e.x / POOL, e.y / POOL, e.polarity))
        .collect();
    Ok(EventStream::new(GRID as u16, GRID as u16, events))
}

/// Crop, filter and pool a raw sensor stream.
pub fn pooled_stream(stream: &EventStream) -> Result<EventStream, PreprocessError> {
    pool_events(&crop_and_filter(stream)?)
}

/// `(30, 1, 20, 20)` event counts for one 30 ms window.
///
/// Stored sparsely as `(flat offset, count)` pairs in ascending offset order;
/// the flat offset is `(t * 20 + row) * 20 + col`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeVolume {
    pub t_start_us: u64,
    entries: Vec<(u32, u16)>,
}

impl SpikeVolume {
    pub const SHAPE: [usize; 4] = [STEPS, 1, GRID, GRID];

    pub fn zeros(t_start_us: u64) -> Self {
        Self {
            t_start_us,
            entries: Vec::new(),
        }
    }

    /// Builds from a dense `(t, c, r, col)` row-major buffer.
    pub fn from_dense(t_start_us: u64, data: &[u16]) -> Option<Self> {
        if data.len() != VOLUME_LEN {
            return None;
        }
        let entries = data
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as u32, c))
            .collect();
        Some(Self {
            t_start_us,
            entries,
        })
    }

    pub fn offset(t: usize, row: usize, col: usize) -> usize {
        (t * GRID + row) * GRID + col
    }

    pub fn get(&self, t: usize, channel: usize, row: usize, col: usize) -> u16 {
        assert_eq!(channel, 0, "single input channel");
        assert!(t < STEPS && row < GRID && col < GRID, "index out of shape");
        let key = Self::offset(t, row, col) as u32;
        self.entries
            .binary_search_by_key(&key, |&(o, _)| o)
            .map_or(0, |i| self.entries[i].1)
    }

    /// Non-zero `(flat offset, count)` pairs of step `t`, ascending; the cell is
    /// `offset - t * 400`.
    pub fn step_nonzeros(&self, t: usize) -> &[(u32, u16)] {
        let lo = (t * GRID * GRID) as u32;
        let hi = ((t + 1) * GRID * GRID) as u32;
        let a = self.entries.partition_point(|&(o, _)| o < lo);
        let b = self.entries.partition_point(|&(o, _)| o < hi);
        &self.entries[a..b]
    }

    /// All non-zero `(flat offset, count)` pairs.
    pub fn nonzeros(&self) -> &[(u32, u16)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Vec<u16> {
        let mut d = vec![0u16; VOLUME_LEN];
        for &(o, c) in &self.entries {
            d[o as usize] = c;
        }
        d
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }
}

/// Counts pooled events into 1 ms bins over `[t_start, t_start + 30 ms)`.
pub fn bin_window(stream: &EventStream, t_start_us: u64) -> SpikeVolume {
    let mut offsets: Vec<u32> = stream
        .slice_time(t_start_us, t_start_us + WINDOW_US)
        .iter()
        .filter(|e| (e.y as usize) < GRID && (e.x as usize) < GRID)
        .map(|e| {
            let t = ((e.t_us - t_start_us) / STEP_US) as usize;
            SpikeVolume::offset(t, e.y as usize, e.x as usize) as u32
        })
        .collect();
    offsets.sort_unstable();
    let mut entries: Vec<(u32, u16)> = Vec::new();
    for o in offsets {
        match entries.last_mut() {
            Some((last, c)) if *last == o => *c = c.saturating_add(1),
            _ => entries.push((o, 1)),
        }
    }
    SpikeVolume {
        t_start_us,
        entries,
    }
}

pub const VOLUME_MAGIC: &[u8; 4] = b"SPKV";
pub const VOLUME_VERSION: u16 = 1;

/// `SPKV`, version u16, four u16 dims, then u16 counts in (t, c, r, col) order.
pub fn encode_volume(vol: &SpikeVolume) -> Vec<u8> {
    let mut buf = Vec::with_capacity(14 + 2 * VOLUME_LEN);
    buf.extend_from_slice(VOLUME_MAGIC);
    buf.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    for d in SpikeVolume::SHAPE {
        buf.extend_from_slice(&(d as u16).to_le_bytes());
    }
    for c in vol.to_dense() {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    buf
}

/// Inverse of [`encode_volume`]. The window start is not stored in the file.
pub fn decode_volume(bytes: &[u8], t_start_us: u64) -> Result<SpikeVolume, PreprocessError> {
    if bytes.len() < 14 || &bytes[..4] != VOLUME_MAGIC {
        return Err(PreprocessError::MalformedVolume("bad magic"));
    }
    if u16::from_le_bytes([bytes[4], bytes[5]]) != VOLUME_VERSION {
        return Err(PreprocessError::MalformedVolume("unsupported version"));
    }
    for (i, want) in SpikeVolume::SHAPE.iter().enumerate() {
        let d = u16::from_le_bytes([bytes[6 + 2 * i], bytes[7 + 2 * i]]);
        if d as usize != *want {
            return Err(PreprocessError::MalformedVolume("unexpected dims"));
        }
    }
    let body = &bytes[14..];
    if body.len() != 2 * VOLUME_LEN {
        return Err(PreprocessError::MalformedVolume("wrong payload length"));
    }
    let data: Vec<u16> = body
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(SpikeVolume::from_dense(t_start_us, &data).expect("length checked"))
}

pub fn save_volume(vol: &SpikeVolume, path: &Path) -> Result<(), PreprocessError> {
    fs::write(path, encode_volume(vol))?;
    Ok(())
}

pub fn load_volume(path: &Path, t_start_us: u64) -> Result<SpikeVolume, PreprocessError> {
    decode_volume(&fs::read(path)?, t_start_us)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub volume: SpikeVolume,
    pub label: SlipState,
    pub trial_id: usize,
}

/// Window start times for each phase of a trial, before any volume is built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleWindows {
    pub no_slip: Vec<u64>,
    pub incipient: Vec<u64>,
    pub gross: Vec<u64>,
}

impl SampleWindows {
    pub fn iter(&self) -> impl Iterator<Item = (SlipState, u64)> + '_ {
        self.no_slip
            .iter()
            .map(|&t| (SlipState::NoSlip, t))
            .chain(self.incipient.iter().map(|&t| (SlipState::Incipient, t)))
            .chain(self.gross.iter().map(|&t| (SlipState::Gross, t)))
    }

    pub fn len(&self) -> usize {
        self.no_slip.len() + self.incipient.len() + self.gross.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Picks the training windows of a trial.
///
/// No-slip: the (up to) 50 consecutive windows ending at incipient onset.
/// Gross: the (up to) 50 consecutive windows starting at gross onset.
/// Incipient: all grid-aligned windows from incipient onset that end by gross
/// onset, or 50 of them drawn without replacement when more are available.
pub fn sample_windows(trial: &Trial, rng_seed: u64) -> Result<SampleWindows, PreprocessError> {
    let (inc, gross) = match (trial.incipient_onset_us, trial.gross_onset_us) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(PreprocessError::MissingOnsets),
    };
    let n_pre = ((inc / WINDOW_US) as usize).min(MAX_SAMPLES_PER_PHASE);
    let no_slip = (1..=n_pre as u64)
        .rev()
        .map(|k| inc - k * WINDOW_US)
        .collect();

    let n_inc = ((gross - inc) / WINDOW_US) as usize;
    let mut picks: Vec<usize> = if n_inc > MAX_SAMPLES_PER_PHASE {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rand::seq::index::sample(&mut rng, n_inc, MAX_SAMPLES_PER_PHASE).into_vec()
    } else {
        (0..n_inc).collect()
    };
    picks.sort_unstable();
    let incipient = picks
        .into_iter()
        .map(|k| inc + k as u64 * WINDOW_US)
        .collect();

    let end = trial.end_us();
    let n_gross = (end.saturating_sub(gross) / WINDOW_US) as usize;
    let gross_w = (0..n_gross.min(MAX_SAMPLES_PER_PHASE) as u64)
        .map(|k| gross + k * WINDOW_US)
        .collect();

    Ok(SampleWindows {
        no_slip,
        incipient,
        gross: gross_w,
    })
}

/// Labeled count volumes for every training window of a trial.
pub fn extract_samples(
    trial: &Trial,
    trial_id: usize,
    rng_seed: u64,
) -> Result<Vec<LabeledSample>, PreprocessError> {
    let windows = sample_windows(trial, rng_seed)?;
    let pooled = pooled_stream(&trial.stream)?;
    Ok(windows
        .iter()
        .map(|(label, t0)| LabeledSample {
            volume: bin_window(&pooled, t0),
            label,
            trial_id,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

/// Trial indices assigned to each split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialPartition {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn floor_share(ratio: f64, n: usize) -> usize {
    // Integer arithmetic in parts-per-million so 0.7 * 30 floors to 21, not 20.
    let ppm = (ratio * 1e6).round() as u128;
    (ppm * n as u128 / 1_000_000) as usize
}

/// Shuffles trial indices and cuts them into floor(r_train·n) / floor(r_val·n) / rest.
pub fn partition_trials(
    n: usize,
    ratios: SplitRatios,
    rng_seed: u64,
    require_nonempty: bool,
) -> Result<TrialPartition, PreprocessError> {
    if n < 3 {
        return Err(PreprocessError::TooFewTrials(n));
    }
    let n_train = floor_share(ratios.train, n);
    let n_val = floor_share(ratios.validation, n).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let part = TrialPartition {
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    if require_nonempty
        && (part.train.is_empty() || part.validation.is_empty() || part.test.is_empty())
    {
        return Err(PreprocessError::TooFewTrials(n));
    }
    Ok(part)
}

#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub ratios: Option<SplitRatios>,
    pub partition: Option<TrialPartition>,
}

/// Trial-level split followed by per-trial sample extraction. Sample seeds are
/// `derive_seed(rng_seed, "extract", trial_index)`.
pub fn split_trials(
    trials: &[Trial],
    ratios: SplitRatios,
    rng_seed: u64,
) -> Result<DatasetSplit, PreprocessError> {
    let part = partition_trials(trials.len(), ratios, rng_seed, true)?;
    let gather = |ids: &[usize]| -> Result<Vec<LabeledSample>, PreprocessError> {
        let mut out = Vec::new();
        for &i in ids {
            let seed = crate::seed::derive_seed(rng_seed, "extract", i as u64);
            out.extend(extract_samples(&trials[i], i, seed)?);
        }
        Ok(out)
    };
    Ok(DatasetSplit {
        train: gather(&part.train)?,
        validation: gather(&part.validation)?,
        test: gather(&part.test)?,
        ratios: Some(ratios),
        partition: Some(part),
    })
}
