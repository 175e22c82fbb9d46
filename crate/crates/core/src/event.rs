//! Event data model, the `EVT1` on-disk stream format, and time slicing.
//!
//! An event stream is an ordered sequence of per-pixel brightness-change
//! records from an event camera, together with the sensor geometry. Streams
//! are sliced into fixed-width windows (10 ms by default) so the visual
//! pipeline shares the audio hop grid.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

/// Magic bytes at the start of every event file.
pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";
/// Current format version stored in the header.
pub const EVT1_VERSION: u16 = 1;
/// Header size in bytes: magic + version + width + height + reserved.
pub const EVT1_HEADER_LEN: usize = 12;
/// Fixed record size in bytes.
pub const EVT1_RECORD_LEN: usize = 16;

/// Sign of the log-intensity change that triggered an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    /// Log intensity decreased.
    Neg,
    /// Log intensity increased.
    Pos,
}

impl Polarity {
    /// +1 or -1.
    pub fn sign(self) -> i32 {
        match self {
            Polarity::Neg => -1,
            Polarity::Pos => 1,
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            Polarity::Neg => 0,
            Polarity::Pos => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Polarity::Neg),
            1 => Some(Polarity::Pos),
            _ => None,
        }
    }
}

/// A single camera event: timestamp, pixel position, polarity.
///
/// Timestamps are microseconds relative to the start of the stream; there is
/// no wall-clock epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

/// Errors from event stream construction, decoding, and slicing.
#[derive(Debug, Error)]
pub enum EventError {
    #[error("bad magic at byte 0: expected \"EVT1\"")]
    BadMagic,
    #[error("unsupported EVT1 version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated record {index} at byte offset {offset}: got {got} of {EVT1_RECORD_LEN} bytes")]
    TruncatedRecord { index: usize, offset: u64, got: usize },
    #[error("truncated header: got {got} of {EVT1_HEADER_LEN} bytes")]
    TruncatedHeader { got: usize },
    #[error("record {index}: timestamp {t_us} precedes previous timestamp {prev_t_us}")]
    UnsortedTimestamps { index: usize, t_us: u64, prev_t_us: u64 },
    #[error("record {index}: pixel ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBoundsPixel { index: usize, x: u16, y: u16, width: u16, height: u16 },
    #[error("record {index}: invalid polarity byte {byte}")]
    InvalidPolarity { index: usize, byte: u8 },
    #[error("slice width must be positive and divide the duration (slice_ms={slice_ms}, duration_ms={duration_ms})")]
    InvalidSliceWidth { slice_ms: u64, duration_ms: u64 },
    #[error("i/o failure")]
    Io(#[from] io::Error),
}

/// An ordered event sequence with its sensor geometry.
///
/// Invariants checked at construction: every event lies within the sensor and
/// timestamps are non-decreasing (ties keep their original order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    /// Default mouth-crop geometry: 100x50 pixels.
    pub const DEFAULT_WIDTH: u16 = 100;
    pub const DEFAULT_HEIGHT: u16 = 50;

    /// Builds a stream, validating bounds and timestamp order.
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self, EventError> {
        let mut prev_t = 0u64;
        for (index, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(EventError::OutOfBoundsPixel {
                    index,
                    x: e.x,
                    y: e.y,
                    width,
                    height,
                });
            }
            if index > 0 && e.t_us < prev_t {
                return Err(EventError::UnsortedTimestamps {
                    index,
                    t_us: e.t_us,
                    prev_t_us: prev_t,
                });
            }
            prev_t = e.t_us;
        }
        Ok(Self { width, height, events })
    }

    /// Empty stream over the given sensor.
    pub fn empty(width: u16, height: u16) -> Self {
        Self { width, height, events: Vec::new() }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Timestamp of the last event, if any.
    pub fn last_t_us(&self) -> Option<u64> {
        self.events.last().map(|e| e.t_us)
    }
}

/// A contiguous run of events covering one half-open time window
/// `[t_start_us, t_end_us)` of the owning stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventSlice<'a> {
    /// Slice number k; the window starts at `k * slice_ms * 1000`.
    pub index: usize,
    pub t_start_us: u64,
    pub t_end_us: u64,
    /// Position of `events[0]` within the owning stream's event array.
    pub event_offset: usize,
    pub events: &'a [Event],
}

/// Reads an `EVT1` file.
pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream, EventError> {
    let file = File::open(path)?;
    read_events_from(BufReader::new(file))
}

/// Decodes an `EVT1` stream from any reader.
pub fn read_events_from<R: Read>(mut reader: R) -> Result<EventStream, EventError> {
    let mut header = [0u8; EVT1_HEADER_LEN];
    let got = read_up_to(&mut reader, &mut header)?;
    if got < EVT1_HEADER_LEN {
        // A short magic is still a magic failure; a valid magic with a short
        // header is a header truncation.
        if got < 4 || &header[..4] != EVT1_MAGIC {
            return Err(EventError::BadMagic);
        }
        return Err(EventError::TruncatedHeader { got });
    }
    if &header[..4] != EVT1_MAGIC {
        return Err(EventError::BadMagic);
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != EVT1_VERSION {
        return Err(EventError::UnsupportedVersion(version));
    }
    let width = u16::from_le_bytes([header[6], header[7]]);
    let height = u16::from_le_bytes([header[8], header[9]]);

    let mut events = Vec::new();
    let mut record = [0u8; EVT1_RECORD_LEN];
    let mut index = 0usize;
    let mut prev_t = 0u64;
    loop {
        let offset = (EVT1_HEADER_LEN + index * EVT1_RECORD_LEN) as u64;
        let got = read_up_to(&mut reader, &mut record)?;
        if got == 0 {
            break;
        }
        if got < EVT1_RECORD_LEN {
            return Err(EventError::TruncatedRecord { index, offset, got });
        }
        let t_us = u64::from_le_bytes(record[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([record[8], record[9]]);
        let y = u16::from_le_bytes([record[10], record[11]]);
        let polarity = Polarity::from_byte(record[12])
            .ok_or(EventError::InvalidPolarity { index, byte: record[12] })?;
        if x >= width || y >= height {
            return Err(EventError::OutOfBoundsPixel { index, x, y, width, height });
        }
        if index > 0 && t_us < prev_t {
            return Err(EventError::UnsortedTimestamps { index, t_us, prev_t_us: prev_t });
        }
        prev_t = t_us;
        events.push(Event { t_us, x, y, polarity });
        index += 1;
    }
    Ok(EventStream { width, height, events })
}

/// Writes a stream as an `EVT1` file.
pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<(), EventError> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    write_events_to(stream, &mut writer)?;
    writer.flush()?;
    Ok(())
}

/// Encodes a stream to any writer.
pub fn write_events_to<W: Write>(stream: &EventStream, writer: &mut W) -> Result<(), EventError> {
    let mut header = [0u8; EVT1_HEADER_LEN];
    header[..4].copy_from_slice(EVT1_MAGIC);
    header[4..6].copy_from_slice(&EVT1_VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&stream.width.to_le_bytes());
    header[8..10].copy_from_slice(&stream.height.to_le_bytes());
    // bytes 10..12 reserved, zero
    writer.write_all(&header)?;

    let mut record = [0u8; EVT1_RECORD_LEN];
    for e in &stream.events {
        record[0..8].copy_from_slice(&e.t_us.to_le_bytes());
        record[8..10].copy_from_slice(&e.x.to_le_bytes());
        record[10..12].copy_from_slice(&e.y.to_le_bytes());
        record[12] = e.polarity.to_byte();
        // bytes 13..16 zero pad
        writer.write_all(&record)?;
    }
    Ok(())
}

/// Tiles `[0, duration_ms)` into `duration_ms / slice_ms` half-open windows
/// and assigns each event to the window containing its timestamp.
///
/// Events at or beyond the duration are dropped. An event exactly on a window
/// boundary belongs to the window that starts there.
pub fn slice_events(
    stream: &EventStream,
    slice_ms: u64,
    duration_ms: u64,
) -> Result<Vec<EventSlice<'_>>, EventError> {
    if slice_ms == 0 || duration_ms % slice_ms != 0 {
        return Err(EventError::InvalidSliceWidth { slice_ms, duration_ms });
    }
    let n_slices = (duration_ms / slice_ms) as usize;
    let slice_us = slice_ms * 1000;
    let events = stream.events();

    let mut slices = Vec::with_capacity(n_slices);
    let mut cursor = 0usize;
    for k in 0..n_slices {
        let t_start_us = k as u64 * slice_us;
        let t_end_us = t_start_us + slice_us;
        let begin = cursor;
        while cursor < events.len() && events[cursor].t_us < t_end_us {
            cursor += 1;
        }
        slices.push(EventSlice {
            index: k,
            t_start_us,
            t_end_us,
            event_offset: begin,
            events: &events[begin..cursor],
        });
    }
    Ok(slices)
}

fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
