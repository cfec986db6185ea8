//! Quantized note containers and the event-token codec.
//!
//! A [`Segment`] covers four beats at a resolution of four steps per beat
//! (sixteen steps). It is serialized into score-level performance tokens:
//! `NOTE_ON(p)`, `NOTE_OFF(p)` and `TIME_SHIFT(n)`.
//!
//! Integer ids used for model tensors are frozen:
//!
//! | token           | id              |
//! |-----------------|-----------------|
//! | `PAD`           | 0               |
//! | `START`         | 1               |
//! | `NOTE_ON(p)`    | 2 + p           |
//! | `NOTE_OFF(p)`   | 130 + p         |
//! | `TIME_SHIFT(n)` | 258 + (n - 1)   |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STEPS_PER_BEAT: usize = 4;
pub const BEATS_PER_SEGMENT: usize = 4;
pub const SEGMENT_STEPS: usize = STEPS_PER_BEAT * BEATS_PER_SEGMENT;
pub const MAX_TOKENS: usize = 100;

pub const PAD_ID: usize = 0;
pub const START_ID: usize = 1;
const NOTE_ON_BASE: usize = 2;
const NOTE_OFF_BASE: usize = 130;
const TIME_SHIFT_BASE: usize = 258;
pub const VOCAB_SIZE: usize = 274;

/// A quantized note inside a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset_step: u8,
    pub duration_steps: u8,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset_step: u8, duration_steps: u8) -> Self {
        Self {
            pitch,
            onset_step,
            duration_steps,
        }
    }

    pub fn end_step(&self) -> usize {
        self.onset_step as usize + self.duration_steps as usize
    }

    /// Whether the note is held at `step` (onset inclusive, end exclusive).
    pub fn sounds_at(&self, step: usize) -> bool {
        (self.onset_step as usize) <= step && step < self.end_step()
    }

    fn is_valid(&self) -> bool {
        self.pitch <= 127
            && (self.onset_step as usize) < SEGMENT_STEPS
            && self.duration_steps >= 1
            && self.end_step() <= SEGMENT_STEPS
    }
}

/// Sixteen-step polyphonic note container.
///
/// Notes are kept sorted by `(onset_step, pitch)`. No two notes share a
/// `(pitch, onset_step)` pair and notes of the same pitch never overlap: a
/// re-struck pitch cuts the sounding one off at the new onset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Segment {
    notes: Vec<NoteEvent>,
}

impl Segment {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a segment from arbitrary in-range notes, normalizing order,
    /// duplicate onsets (the longer note wins) and same-pitch overlaps.
    pub fn from_notes(notes: impl IntoIterator<Item = NoteEvent>) -> Result<Self> {
        let mut notes: Vec<NoteEvent> = notes.into_iter().collect();
        for n in &notes {
            if n.pitch > 127 {
                return Err(Error::InvalidPitch(n.pitch as i64));
            }
            if !n.is_valid() {
                return Err(Error::ShapeError(format!(
                    "note {:?} does not fit in a {SEGMENT_STEPS}-step segment",
                    n
                )));
            }
        }
        // Longest first within a (pitch, onset) group so dedup keeps it.
        notes.sort_by(|a, b| {
            (a.pitch, a.onset_step, std::cmp::Reverse(a.duration_steps)).cmp(&(
                b.pitch,
                b.onset_step,
                std::cmp::Reverse(b.duration_steps),
            ))
        });
        notes.dedup_by_key(|n| (n.pitch, n.onset_step));
        for i in 1..notes.len() {
            let (prev, next) = (notes[i - 1], notes[i]);
            if prev.pitch == next.pitch && prev.end_step() > next.onset_step as usize {
                notes[i - 1].duration_steps = next.onset_step - prev.onset_step;
            }
        }
        notes.sort_by_key(|n| (n.onset_step, n.pitch));
        Ok(Self { notes })
    }

    pub fn notes(&self) -> &[NoteEvent] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Transposes every pitch, failing if any note leaves the MIDI range.
    pub fn transpose(&self, semitones: i32) -> Result<Self> {
        let notes = self
            .notes
            .iter()
            .map(|n| {
                let p = n.pitch as i32 + semitones;
                if !(0..=127).contains(&p) {
                    return Err(Error::InvalidPitch(p as i64));
                }
                Ok(NoteEvent { pitch: p as u8, ..*n })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_notes(notes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    NoteOn(u8),
    NoteOff(u8),
    TimeShift(u8),
}

impl Token {
    pub fn id(self) -> usize {
        match self {
            Token::NoteOn(p) => NOTE_ON_BASE + p as usize,
            Token::NoteOff(p) => NOTE_OFF_BASE + p as usize,
            Token::TimeShift(n) => TIME_SHIFT_BASE + n as usize - 1,
        }
    }

    /// Inverse of [`Token::id`]. `PAD`, `START` and out-of-vocabulary ids map to `None`.
    pub fn from_id(id: usize) -> Option<Token> {
        match id {
            NOTE_ON_BASE..NOTE_OFF_BASE => Some(Token::NoteOn((id - NOTE_ON_BASE) as u8)),
            NOTE_OFF_BASE..TIME_SHIFT_BASE => Some(Token::NoteOff((id - NOTE_OFF_BASE) as u8)),
            TIME_SHIFT_BASE..VOCAB_SIZE => Some(Token::TimeShift((id - TIME_SHIFT_BASE + 1) as u8)),
            _ => None,
        }
    }
}

/// Token encoding of a segment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.id()).collect()
    }

    /// Keeps ids that map onto note or time tokens, silently skipping `PAD`/`START`.
    pub fn from_ids(ids: &[usize]) -> Self {
        Self {
            tokens: ids.iter().filter_map(|&i| Token::from_id(i)).collect(),
        }
    }

    pub fn total_shift(&self) -> usize {
        self.tokens
            .iter()
            .map(|t| match t {
                Token::TimeShift(n) => *n as usize,
                _ => 0,
            })
            .sum()
    }
}

/// A note before quantization, in beats relative to the segment start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawNote {
    pub pitch: i64,
    pub onset_beats: f64,
    pub duration_beats: f64,
}

impl RawNote {
    pub fn new(pitch: i64, onset_beats: f64, duration_beats: f64) -> Self {
        Self {
            pitch,
            onset_beats,
            duration_beats,
        }
    }
}

pub fn quantize_notes(raw: &[RawNote]) -> Result<Segment> {
    let last = SEGMENT_STEPS as f64 - 1.0;
    let mut notes = Vec::with_capacity(raw.len());
    for r in raw {
        if !(0..=127).contains(&r.pitch) {
            return Err(Error::InvalidPitch(r.pitch));
        }
        let onset = (r.onset_beats * STEPS_PER_BEAT as f64).round().clamp(0.0, last) as usize;
        let dur = (r.duration_beats * STEPS_PER_BEAT as f64).round().max(1.0);
        let dur = (dur.min(SEGMENT_STEPS as f64) as usize).min(SEGMENT_STEPS - onset);
        notes.push(NoteEvent::new(r.pitch as u8, onset as u8, dur as u8));
    }
    Segment::from_notes(notes)
}

pub fn encode_tokens(segment: &Segment) -> Result<TokenSeq> {
    let notes = segment.notes();
    let mut tokens = Vec::new();
    let mut cur = 0usize;
    loop {
        let mut offs: Vec<u8> = notes.iter().filter(|n| n.end_step() == cur).map(|n| n.pitch).collect();
        offs.sort_unstable();
        tokens.extend(offs.into_iter().map(Token::NoteOff));
        if cur == SEGMENT_STEPS {
            break;
        }
        // Notes are sorted by onset then pitch already.
        tokens.extend(
            notes
                .iter()
                .filter(|n| n.onset_step as usize == cur)
                .map(|n| Token::NoteOn(n.pitch)),
        );
        let next = notes
            .iter()
            .flat_map(|n| [n.onset_step as usize, n.end_step()])
            .filter(|&s| s > cur)
            .min()
            .unwrap_or(SEGMENT_STEPS);
        tokens.push(Token::TimeShift((next - cur) as u8));
        cur = next;
    }
    if tokens.len() > MAX_TOKENS {
        return Err(Error::TokenOverflow(tokens.len()));
    }
    Ok(TokenSeq { tokens })
}

/// Best-effort inverse of [`encode_tokens`]; never fails.
pub fn decode_tokens(tokens: &TokenSeq) -> Segment {
    let mut pending: [Option<usize>; 128] = [None; 128];
    let mut notes = Vec::new();
    let mut cur = 0usize;
    let close = |pitch: u8, onset: usize, at: usize, notes: &mut Vec<NoteEvent>| {
        if at > onset {
            notes.push(NoteEvent::new(pitch, onset as u8, (at - onset) as u8));
        }
    };
    for &tok in &tokens.tokens {
        match tok {
            Token::TimeShift(n) => cur = (cur + n as usize).min(SEGMENT_STEPS),
            Token::NoteOff(p) if p <= 127 => {
                if let Some(onset) = pending[p as usize].take() {
                    close(p, onset, cur, &mut notes);
                }
            }
            Token::NoteOn(p) if p <= 127 => {
                if let Some(onset) = pending[p as usize].take() {
                    close(p, onset, cur, &mut notes);
                }
                if cur < SEGMENT_STEPS {
                    pending[p as usize] = Some(cur);
                }
            }
            _ => {}
        }
    }
    for (p, slot) in pending.iter_mut().enumerate() {
        if let Some(onset) = slot.take() {
            close(p as u8, onset, SEGMENT_STEPS, &mut notes);
        }
    }
    Segment::from_notes(notes).expect("decoded notes are always in range")
}

/// Cuts a note stream into consecutive four-beat segments.
///
/// A note belongs to the window holding its onset and is clipped at the
/// window's end.
pub fn segment_stream(notes: &[RawNote], total_beats: f64) -> Result<Vec<Segment>> {
    let window = BEATS_PER_SEGMENT as f64;
    let mut count = (total_beats / window).ceil().max(0.0) as usize;
    for n in notes {
        count = count.max((n.onset_beats.max(0.0) / window).floor() as usize + 1);
    }
    let mut buckets: Vec<Vec<RawNote>> = vec![Vec::new(); count];
    for n in notes {
        let w = (n.onset_beats.max(0.0) / window).floor() as usize;
        let local = n.onset_beats.max(0.0) - w as f64 * window;
        let duration = n.duration_beats.min(window - local);
        buckets[w].push(RawNote::new(n.pitch, local, duration));
    }
    buckets.iter().map(|b| quantize_notes(b)).collect()
}
