//! Standard MIDI File (format 0/1) note extraction.

use std::collections::{HashMap, VecDeque};

use crate::codec::RawNote;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MidiNotes {
    /// Notes of all tracks merged, ordered by onset then pitch.
    pub notes: Vec<RawNote>,
    /// Length of the file in beats (last event of any track).
    pub total_beats: f64,
    /// Note-ons never matched by a note-off; closed at the end of the file.
    pub unpaired: usize,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedMidi(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(malformed(format!("unexpected end of data at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(malformed("variable-length quantity longer than 4 bytes"))
    }

    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct TimedNote {
    on: u64,
    off: u64,
    pitch: u8,
}

/// Closed notes, the final tick, and the still-open `(tick, pitch)` note-ons.
type ParsedTrack = (Vec<TimedNote>, u64, Vec<(u64, u8)>);

/// Parses one MTrk body.
fn parse_track(data: &[u8]) -> Result<ParsedTrack> {
    let mut r = Reader { bytes: data, pos: 0 };
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut open: HashMap<(u8, u8), VecDeque<u64>> = HashMap::new();
    let mut notes = Vec::new();
    while !r.done() {
        tick += r.vlq()? as u64;
        let first = r.u8()?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            running.ok_or_else(|| malformed("data byte without running status"))?
        };
        match status {
            0xff => {
                let _kind = r.u8()?;
                let len = r.vlq()? as usize;
                r.take(len)?;
                running = None;
            }
            0xf0 | 0xf7 => {
                let len = r.vlq()? as usize;
                r.take(len)?;
                running = None;
            }
            0x80..=0xef => {
                running = Some(status);
                // Under running status `first` is already the first data byte.
                let a = if first & 0x80 == 0 { first } else { r.u8()? };
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                let b = if matches!(kind, 0xc0 | 0xd0) { 0 } else { r.u8()? };
                let is_on = kind == 0x90 && b > 0;
                let is_off = kind == 0x80 || (kind == 0x90 && b == 0);
                if is_on {
                    open.entry((channel, a)).or_default().push_back(tick);
                } else if is_off {
                    if let Some(on) = open.get_mut(&(channel, a)).and_then(|q| q.pop_front()) {
                        notes.push(TimedNote { on, off: tick, pitch: a });
                    }
                }
            }
            other => return Err(malformed(format!("unsupported status byte {other:#04x}"))),
        }
    }
    let pending = open
        .into_iter()
        .flat_map(|((_, pitch), q)| q.into_iter().map(move |on| (on, pitch)))
        .collect();
    Ok((notes, tick, pending))
}

pub fn midi_to_notes(bytes: &[u8]) -> Result<MidiNotes> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 14 || r.take(4)? != b"MThd" {
        return Err(malformed("missing MThd header chunk"));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(malformed(format!("header length {header_len} below 6")));
    }
    let format = r.u16()?;
    let n_tracks = r.u16()?;
    let division = r.u16()?;
    r.take(header_len - 6)?;
    if format > 1 {
        return Err(malformed(format!("SMF format {format} is not supported")));
    }
    if division & 0x8000 != 0 {
        return Err(malformed("SMPTE time division is not supported"));
    }
    if division == 0 {
        return Err(malformed("zero ticks per quarter note"));
    }
    let tpq = division as f64;

    let mut closed = Vec::new();
    let mut pending = Vec::new();
    let mut end_tick = 0u64;
    let mut seen = 0;
    while seen < n_tracks && !r.done() {
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        let body = r.take(len)?;
        if id != b"MTrk" {
            // Unknown chunks are skipped.
            continue;
        }
        let (notes, last, open) = parse_track(body)?;
        closed.extend(notes);
        pending.extend(open);
        end_tick = end_tick.max(last);
        seen += 1;
    }
    if seen < n_tracks {
        return Err(malformed(format!("header announces {n_tracks} tracks, found {seen}")));
    }
    let unpaired = pending.len();
    if unpaired > 0 {
        log::warn!("{unpaired} note-on events without note-off closed at end of file");
    }
    closed.extend(pending.into_iter().map(|(on, pitch)| TimedNote {
        on,
        off: end_tick,
        pitch,
    }));
    closed.sort_by_key(|n| (n.on, n.pitch, n.off));
    let notes = closed
        .iter()
        .map(|n| RawNote::new(n.pitch as i64, n.on as f64 / tpq, (n.off - n.on) as f64 / tpq))
        .collect();
    Ok(MidiNotes {
        notes,
        total_beats: end_tick as f64 / tpq,
        unpaired,
    })
}
