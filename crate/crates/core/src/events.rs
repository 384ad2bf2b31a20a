//! Event-stream types and the `NTEV` trial file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "NTEV"
//!      4     2  format version (1)
//!      6     2  sensor width
//!      8     2  sensor height
//!     10     8  incipient onset, µs (u64::MAX = absent)
//!     18     8  gross onset, µs (u64::MAX = absent)
//!     26     8  event count
//!     34  16*n  records: t_us u64, x u16, y u16, polarity i8, 3 zero bytes
//! ```
//!
//! The scenario record of a trial, when present, is written next to the event
//! file as `<path>.scenario` (TOML key-value text).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::sim::ScenarioConfig;

pub const SENSOR_WIDTH: u16 = 640;
pub const SENSOR_HEIGHT: u16 = 480;

pub const MAGIC: &[u8; 4] = b"NTEV";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 34;
pub const RECORD_LEN: usize = 16;

const ABSENT: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    /// Microseconds since trial start.
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    /// +1 brightness increase, -1 decrease.
    pub polarity: i8,
}

impl Event {
    pub fn new(t_us: u64, x: u16, y: u16, polarity: i8) -> Self {
        Self {
            t_us,
            x,
            y,
            polarity,
        }
    }
}

/// Time-ordered events on a `width` x `height` pixel array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Self {
        Self {
            width,
            height,
            events,
        }
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self::new(width, height, Vec::new())
    }

    /// Full-resolution 640x480 stream.
    pub fn sensor(events: Vec<Event>) -> Self {
        Self::new(SENSOR_WIDTH, SENSOR_HEIGHT, events)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t0 <= t_us < t1`.
    pub fn slice_time(&self, t0: u64, t1: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t_us < t0);
        let hi = self.events.partition_point(|e| e.t_us < t1);
        &self.events[lo..hi.max(lo)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Violation {
    OutOfBounds(usize),
    BadPolarity(usize),
    UnsortedTimestamps(usize),
}

/// Lists every violated stream invariant, each with the first offending index.
pub fn validate_stream(stream: &EventStream) -> Vec<Violation> {
    let evs = &stream.events;
    let mut out = Vec::new();
    if let Some(i) = evs
        .iter()
        .position(|e| e.x >= stream.width || e.y >= stream.height)
    {
        out.push(Violation::OutOfBounds(i));
    }
    if let Some(i) = evs.iter().position(|e| e.polarity != 1 && e.polarity != -1) {
        out.push(Violation::BadPolarity(i));
    }
    if let Some(i) = evs.windows(2).position(|w| w[1].t_us < w[0].t_us) {
        out.push(Violation::UnsortedTimestamps(i + 1));
    }
    out
}

/// An event stream with its ground-truth slip onsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub stream: EventStream,
    pub incipient_onset_us: Option<u64>,
    pub gross_onset_us: Option<u64>,
    pub scenario: Option<ScenarioConfig>,
}

impl Trial {
    pub fn new(stream: EventStream) -> Self {
        Self {
            stream,
            incipient_onset_us: None,
            gross_onset_us: None,
            scenario: None,
        }
    }

    /// One past the last event timestamp (0 for an empty stream).
    pub fn end_us(&self) -> u64 {
        self.stream.events.last().map_or(0, |e| e.t_us + 1)
    }

    pub fn check(&self) -> Result<(), EventsError> {
        if let Some(v) = validate_stream(&self.stream).first() {
            return Err(match *v {
                Violation::OutOfBounds(i) => EventsError::OutOfBounds(i),
                Violation::BadPolarity(i) => EventsError::BadPolarity(i),
                Violation::UnsortedTimestamps(i) => EventsError::UnsortedTimestamps(i),
            });
        }
        if let (Some(a), Some(b)) = (self.incipient_onset_us, self.gross_onset_us) {
            if a > b {
                return Err(EventsError::OnsetOrder {
                    incipient: a,
                    gross: b,
                });
            }
        }
        for onset in [self.incipient_onset_us, self.gross_onset_us]
            .into_iter()
            .flatten()
        {
            if onset == ABSENT {
                return Err(EventsError::OnsetOutOfRange);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EventsError {
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error("unsupported format version {0}")]
    VersionMismatch(u16),
    #[error("timestamps decrease at event {0}")]
    UnsortedTimestamps(usize),
    #[error("event {0} lies outside the sensor")]
    OutOfBounds(usize),
    #[error("event {0} has polarity other than +1/-1")]
    BadPolarity(usize),
    #[error("file ends inside event record {0}")]
    Truncated(usize),
    #[error("incipient onset {incipient} µs after gross onset {gross} µs")]
    OnsetOrder { incipient: u64, gross: u64 },
    #[error("onset timestamp collides with the absent sentinel")]
    OnsetOutOfRange,
    #[error("scenario sidecar: {0}")]
    Scenario(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn encode_onset(v: Option<u64>) -> u64 {
    v.unwrap_or(ABSENT)
}

fn decode_onset(v: u64) -> Option<u64> {
    (v != ABSENT).then_some(v)
}

/// Serializes the stream and onsets of a trial.
pub fn encode_trial(trial: &Trial) -> Vec<u8> {
    let s = &trial.stream;
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * s.events.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&s.width.to_le_bytes());
    buf.extend_from_slice(&s.height.to_le_bytes());
    buf.extend_from_slice(&encode_onset(trial.incipient_onset_us).to_le_bytes());
    buf.extend_from_slice(&encode_onset(trial.gross_onset_us).to_le_bytes());
    buf.extend_from_slice(&(s.events.len() as u64).to_le_bytes());
    for e in &s.events {
        buf.extend_from_slice(&e.t_us.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.polarity as u8);
        buf.extend_from_slice(&[0, 0, 0]);
    }
    buf
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Parses an `NTEV` image and validates it. The scenario field is left empty.
pub fn decode_trial(bytes: &[u8]) -> Result<Trial, EventsError> {
    if bytes.len() < HEADER_LEN {
        return Err(EventsError::MalformedHeader("shorter than header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(EventsError::MalformedHeader("bad magic"));
    }
    let version = le_u16(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(EventsError::VersionMismatch(version));
    }
    let width = le_u16(bytes, 6);
    let height = le_u16(bytes, 8);
    let incipient = decode_onset(le_u64(bytes, 10));
    let gross = decode_onset(le_u64(bytes, 18));
    let count = le_u64(bytes, 26);
    let body = &bytes[HEADER_LEN..];
    let expected = (count as u128) * RECORD_LEN as u128;
    if (body.len() as u128) < expected {
        return Err(EventsError::Truncated(body.len() / RECORD_LEN));
    }
    if body.len() as u128 > expected {
        return Err(EventsError::MalformedHeader("trailing bytes after records"));
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut last_t = 0u64;
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let e = Event {
            t_us: le_u64(rec, 0),
            x: le_u16(rec, 8),
            y: le_u16(rec, 10),
            polarity: rec[12] as i8,
        };
        if i > 0 && e.t_us < last_t {
            return Err(EventsError::UnsortedTimestamps(i));
        }
        if e.x >= width || e.y >= height {
            return Err(EventsError::OutOfBounds(i));
        }
        if e.polarity != 1 && e.polarity != -1 {
            return Err(EventsError::BadPolarity(i));
        }
        last_t = e.t_us;
        events.push(e);
    }
    let trial = Trial {
        stream: EventStream::new(width, height, events),
        incipient_onset_us: incipient,
        gross_onset_us: gross,
        scenario: None,
    };
    trial.check()?;
    Ok(trial)
}

pub fn scenario_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scenario");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EventsError + '_ {
    move |source| EventsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_events(trial: &Trial, path: &Path) -> Result<(), EventsError> {
    trial.check()?;
    fs::write(path, encode_trial(trial)).map_err(io_err(path))?;
    let side = scenario_sidecar(path);
    match &trial.scenario {
        Some(sc) => fs::write(&side, sc.to_toml()).map_err(io_err(&side))?,
        None => {
            if side.exists() {
                fs::remove_file(&side).map_err(io_err(&side))?;
            }
        }
    }
    Ok(())
}

pub fn load_events(path: &Path) -> Result<Trial, EventsError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut trial = decode_trial(&bytes)?;
    let side = scenario_sidecar(path);
    if side.exists() {
        let text = fs::read_to_string(&side).map_err(io_err(&side))?;
        trial.scenario = Some(
            ScenarioConfig::from_toml(&text).map_err(|e| EventsError::Scenario(e.to_string()))?,
        );
    }
    Ok(trial)
}
