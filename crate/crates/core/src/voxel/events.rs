//! Raw event streams: reading, window slicing and hot-pixel suppression.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            1 => Some(Polarity::Positive),
            0 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn bit(&self) -> u8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => 0,
        }
    }

    pub fn sign(&self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    /// Channel slot: 0 for ON, 1 for OFF.
    pub fn slot(&self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

/// Time-ordered events of one recording or window. `sensor` is `(H, W)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub sensor: (usize, usize),
    pub events: Vec<Event>,
}

impl EventStream {
    /// Validates bounds and ordering.
    pub fn new(sensor: (usize, usize), events: Vec<Event>) -> Result<Self> {
        let s = Self { sensor, events };
        s.validate()?;
        Ok(s)
    }

    pub fn empty(sensor: (usize, usize)) -> Self {
        Self {
            sensor,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.sensor;
        let mut prev = 0u64;
        for (i, e) in self.events.iter().enumerate() {
            if e.x as usize >= w || e.y as usize >= h {
                return Err(Error::Validation {
                    line: i + 1,
                    msg: format!("event ({}, {}) outside {h}x{w} sensor", e.x, e.y),
                });
            }
            if e.t < prev {
                return Err(Error::Validation {
                    line: i + 1,
                    msg: format!("timestamp {} before {prev}", e.t),
                });
            }
            prev = e.t;
        }
        Ok(())
    }
}

/// Splits into non-overlapping `[k*dt, (k+1)*dt)` windows with timestamps
/// re-based to the window start. Empty windows are kept.
pub fn slice_windows(stream: &EventStream, window_us: u64) -> Vec<EventStream> {
    assert!(window_us > 0, "window length must be positive");
    let Some(last) = stream.events.last() else {
        return Vec::new();
    };
    let n = (last.t + 1).div_ceil(window_us) as usize;
    let mut out: Vec<EventStream> = (0..n).map(|_| EventStream::empty(stream.sensor)).collect();
    for e in &stream.events {
        let k = (e.t / window_us) as usize;
        out[k].events.push(Event {
            t: e.t - k as u64 * window_us,
            ..*e
        });
    }
    out
}

/// Removes every event of pixels whose total count exceeds `factor` times
/// the mean count over pixels with at least one event.
pub fn hot_pixel_filter(stream: &EventStream, factor: f64) -> (EventStream, Vec<(u16, u16)>) {
    let mut counts: HashMap<(u16, u16), u64> = HashMap::new();
    for e in &stream.events {
        *counts.entry((e.y, e.x)).or_default() += 1;
    }
    if counts.is_empty() {
        return (stream.clone(), Vec::new());
    }
    let mean = stream.events.len() as f64 / counts.len() as f64;
    let limit = factor * mean;
    let mut hot: Vec<(u16, u16)> = counts
        .iter()
        .filter(|(_, &c)| c as f64 > limit)
        .map(|(&k, _)| k)
        .collect();
    hot.sort_unstable();
    if hot.is_empty() {
        return (stream.clone(), hot);
    }
    let events = stream
        .events
        .iter()
        .filter(|e| hot.binary_search(&(e.y, e.x)).is_err())
        .copied()
        .collect();
    (
        EventStream {
            sensor: stream.sensor,
            events,
        },
        hot,
    )
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvEvent {
    t_us: u64,
    x: u16,
    y: u16,
    p: u8,
}

/// Reads the `t_us,x,y,p` CSV form (`p` in {0, 1}).
pub fn read_events_csv(path: &Path, sensor: (usize, usize)) -> Result<EventStream> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events_csv(file, sensor)
}

pub fn parse_events_csv(reader: impl Read, sensor: (usize, usize)) -> Result<EventStream> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["t_us", "x", "y", "p"] {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header t_us,x,y,p, found {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut events = Vec::new();
    for (i, rec) in rdr.deserialize::<CsvEvent>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let p = Polarity::from_bit(rec.p).ok_or_else(|| Error::Validation {
            line,
            msg: format!("polarity {} not in {{0,1}}", rec.p),
        })?;
        events.push(Event::new(rec.t_us, rec.x, rec.y, p));
    }
    EventStream::new(sensor, events)
}

pub fn write_events_csv(path: &Path, stream: &EventStream) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(std::io::BufWriter::new(file));
    // Written by hand so that an empty stream still produces a parseable file.
    w.write_record(["t_us", "x", "y", "p"])
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for e in &stream.events {
        w.serialize(CsvEvent {
            t_us: e.t,
            x: e.x,
            y: e.y,
            p: e.p.bit(),
        })
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const EVENT_MAGIC: [u8; 4] = *b"EVT1";
const EVENT_RECORD: usize = 13;

pub fn encode_events_bin(stream: &EventStream) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + stream.len() * EVENT_RECORD);
    buf.extend_from_slice(&EVENT_MAGIC);
    buf.extend_from_slice(&(stream.len() as u32).to_le_bytes());
    for e in &stream.events {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p.bit());
    }
    buf
}

pub fn decode_events_bin(bytes: &[u8], sensor: (usize, usize)) -> Result<EventStream> {
    if bytes.len() < 8 {
        return Err(FormatError::Truncated { needed: 8, have: bytes.len() }.into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != EVENT_MAGIC {
        return Err(FormatError::BadMagic { expected: EVENT_MAGIC, found: magic }.into());
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let needed = 8 + n * EVENT_RECORD;
    if bytes.len() < needed {
        return Err(FormatError::Truncated { needed, have: bytes.len() }.into());
    }
    let mut events = Vec::with_capacity(n);
    for (i, rec) in bytes[8..needed].chunks_exact(EVENT_RECORD).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(rec[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(rec[10..12].try_into().unwrap());
        let p = Polarity::from_bit(rec[12]).ok_or_else(|| Error::Validation {
            line: i + 1,
            msg: format!("polarity byte {}", rec[12]),
        })?;
        events.push(Event::new(t, x, y, p));
    }
    EventStream::new(sensor, events)
}

pub fn write_events_bin(path: &Path, stream: &EventStream) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_events_bin(stream)).map_err(|e| Error::io(path, e))
}

/// Reads either format, sniffing the binary magic.
pub fn read_events(path: &Path, sensor: (usize, usize)) -> Result<EventStream> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&EVENT_MAGIC) {
        decode_events_bin(&bytes, sensor)
    } else {
        parse_events_csv(bytes.as_slice(), sensor)
    }
}
