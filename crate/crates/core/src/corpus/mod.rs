//! Segment records with precomputed labels, JSONL and SMF ingestion, the
//! synthetic arousal corpus and dataset splitting.

mod midi;
mod synth;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_tokens, segment_stream, NoteEvent, Segment, TokenSeq};
use crate::diff::rng::stream;
use crate::error::{Error, Result};
use crate::labels::{conditioning_key, note_label, rhythm_label, Densities, KeyVector, NoteLabel, RhythmLabel};

pub use midi::{midi_to_notes, MidiNotes};
pub use synth::{labelled_count, synth_corpus, SynthParams};

/// Arousal values strictly inside this band carry no class.
pub const AROUSAL_DEAD_ZONE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub segment: Segment,
    pub tokens: TokenSeq,
    pub y_rhythm: RhythmLabel,
    pub y_note: NoteLabel,
    pub key: KeyVector,
    pub densities: Densities,
    pub arousal_raw: Option<f64>,
    pub arousal_class: Option<usize>,
    /// Generator ground truth, kept even when `arousal_class` is erased.
    /// Absent for real data.
    pub reference_class: Option<usize>,
}

impl CorpusRecord {
    /// Computes tokens and all labels for `segment`.
    pub fn from_segment(segment: Segment, arousal_raw: Option<f64>) -> Result<Self> {
        let arousal_class = match arousal_raw {
            Some(raw) => arousal_binarize(raw)?,
            None => None,
        };
        let tokens = encode_tokens(&segment)?;
        Ok(Self {
            tokens,
            y_rhythm: rhythm_label(&segment),
            y_note: note_label(&segment),
            key: conditioning_key(&segment),
            densities: Densities::of(&segment),
            segment,
            arousal_raw,
            arousal_class,
            reference_class: None,
        })
    }

    /// Whether stored labels match those recomputed from the segment.
    pub fn labels_consistent(&self) -> bool {
        encode_tokens(&self.segment).is_ok_and(|t| t == self.tokens)
            && rhythm_label(&self.segment) == self.y_rhythm
            && note_label(&self.segment) == self.y_note
            && conditioning_key(&self.segment) == self.key
            && Densities::of(&self.segment) == self.densities
    }

    pub fn to_line(&self) -> CorpusLine {
        CorpusLine {
            notes: self
                .segment
                .notes()
                .iter()
                .map(|n| [n.pitch as i64, n.onset_step as i64, n.duration_steps as i64])
                .collect(),
            arousal: self.arousal_raw,
            reference_class: self.reference_class,
        }
    }
}

/// One JSONL line: `{"notes": [[pitch, onset_step, duration_steps], ...], "arousal": x}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub notes: Vec<[i64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arousal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_class: Option<usize>,
}

impl CorpusLine {
    pub fn segment(&self) -> std::result::Result<Segment, String> {
        let mut notes = Vec::with_capacity(self.notes.len());
        for &[p, o, d] in &self.notes {
            let fits = |v: i64| (0..=255).contains(&v);
            if !(0..=127).contains(&p) {
                return Err(format!("pitch {p} outside 0..=127"));
            }
            if !fits(o) || !fits(d) {
                return Err(format!("note [{p}, {o}, {d}] outside the segment"));
            }
            notes.push(NoteEvent::new(p as u8, o as u8, d as u8));
        }
        Segment::from_notes(notes).map_err(|e| e.to_string())
    }
}

/// `raw > 0.1` is high arousal (1), `raw < -0.1` low (0), otherwise unlabelled.
pub fn arousal_binarize(raw: f64) -> Result<Option<usize>> {
    if !(-1.0..=1.0).contains(&raw) {
        return Err(Error::InvalidLabel(raw));
    }
    Ok(if raw > AROUSAL_DEAD_ZONE {
        Some(1)
    } else if raw < -AROUSAL_DEAD_ZONE {
        Some(0)
    } else {
        None
    })
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub records: Vec<CorpusRecord>,
    /// Lines dropped because their encoding exceeds the token limit.
    pub skipped: usize,
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Ingested> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Ingested> {
    let mut records = Vec::new();
    let mut skipped = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |detail: String| Error::ParseError { line: line_no, detail };
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let segment = parsed.segment().map_err(parse_err)?;
        match CorpusRecord::from_segment(segment, parsed.arousal) {
            Ok(mut rec) => {
                rec.reference_class = parsed.reference_class;
                records.push(rec);
            }
            Err(Error::TokenOverflow(_)) => skipped += 1,
            Err(Error::InvalidLabel(v)) => return Err(parse_err(format!("arousal {v} outside [-1, 1]"))),
            Err(e) => return Err(e),
        }
    }
    Ok(Ingested { records, skipped })
}

pub fn write_jsonl(records: &[CorpusRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &r.to_line())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Cuts an SMF into four-beat segments and builds one record per segment.
/// Segments whose encoding overflows are skipped and counted.
pub fn records_from_midi(bytes: &[u8], arousal_raw: Option<f64>) -> Result<Ingested> {
    let midi = midi_to_notes(bytes)?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for segment in segment_stream(&midi.notes, midi.total_beats)? {
        match CorpusRecord::from_segment(segment, arousal_raw) {
            Ok(r) => records.push(r),
            Err(Error::TokenOverflow(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(Ingested { records, skipped })
}

#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<CorpusRecord>,
    pub validation: Vec<CorpusRecord>,
    pub test: Vec<CorpusRecord>,
    pub seed: u64,
}

/// Split sizes for `n` records: validation and test each get `n / 10`,
/// train takes the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = n / 10;
    (n - 2 * tenth, tenth, tenth)
}

/// Seeded shuffle, then an 80/10/10 partition.
pub fn split(records: &[CorpusRecord], seed: u64) -> Result<CorpusSplit> {
    if records.len() < 10 {
        return Err(Error::InsufficientSamples(format!(
            "split needs at least 10 records, got {}",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut stream(seed, "split"));
    let (n_train, n_val, _) = split_sizes(records.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(CorpusSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
        seed,
    })
}

/// Drops arousal labels until at most `labelled_count(n, fraction)` records
/// keep one. Survivors are drawn on the seeded `"mask"` stream. Returns the
/// number of labelled records left.
pub fn keep_labelled_fraction(records: &mut [CorpusRecord], fraction: f64, seed: u64) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("labelled fraction {fraction} outside [0, 1]")));
    }
    let keep = synth::labelled_count(records.len(), fraction);
    let mut labelled: Vec<usize> = (0..records.len()).filter(|&i| records[i].arousal_class.is_some()).collect();
    if labelled.len() <= keep {
        return Ok(labelled.len());
    }
    labelled.shuffle(&mut stream(seed, "mask"));
    for &i in &labelled[keep..] {
        records[i].arousal_raw = None;
        records[i].arousal_class = None;
    }
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_examples() {
        assert_eq!(arousal_binarize(0.5).unwrap(), Some(1));
        assert_eq!(arousal_binarize(-0.5).unwrap(), Some(0));
        assert_eq!(arousal_binarize(0.05).unwrap(), None);
        assert_eq!(arousal_binarize(0.1).unwrap(), None);
        assert_eq!(arousal_binarize(-0.1).unwrap(), None);
        assert!(matches!(arousal_binarize(1.5), Err(Error::InvalidLabel(_))));
    }

    #[test]
    fn jsonl_line_examples() {
        let src = "{\"notes\": [[60,0,4]]}\n{\"notes\": [[62,2,2]], \"arousal\": 0.0}\n";
        let got = read_jsonl(src.as_bytes()).unwrap();
        assert_eq!(got.records.len(), 2);
        assert_eq!(got.records[0].densities.rhythm_density, 1.0 / 16.0);
        assert_eq!(got.records[1].arousal_class, None);
        assert_eq!(got.records[1].arousal_raw, Some(0.0));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let mut src = String::new();
        for _ in 0..6 {
            src.push_str("{\"notes\": []}\n");
        }
        src.push_str("{\"notes\": [[60,0,4]\n");
        match read_jsonl(src.as_bytes()) {
            Err(Error::ParseError { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn overflowing_lines_are_skipped() {
        // 16 steps x 4 pitches re-struck every step: 64 ons + 64 offs + 16 shifts.
        let notes: Vec<String> = (0..16)
            .flat_map(|s| (0..4).map(move |p| format!("[{},{s},1]", 60 + p)))
            .collect();
        let src = format!("{{\"notes\": [{}]}}\n{{\"notes\": [[60,0,4]]}}\n", notes.join(","));
        let got = read_jsonl(src.as_bytes()).unwrap();
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.skipped, 1);
    }

    #[test]
    fn split_sizes_follow_rounding_rule() {
        assert_eq!(split_sizes(100), (80, 10, 10));
        assert_eq!(split_sizes(101), (81, 10, 10));
        assert_eq!(split_sizes(2000), (1600, 200, 200));
    }
}
