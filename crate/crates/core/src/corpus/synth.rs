//! Synthetic corpus whose arousal class drives both densities: high arousal
//! means many onsets and thin texture, low arousal few onsets and thick chords.

use rand::seq::index::sample;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::CorpusRecord;
use crate::codec::{NoteEvent, Segment, SEGMENT_STEPS};
use crate::diff::rng::stream;
use crate::error::{Error, Result};

const MAJOR_STEPS: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR_STEPS: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub n_segments: usize,
    pub labelled_fraction: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn new(n_segments: usize, seed: u64) -> Self {
        Self {
            n_segments,
            labelled_fraction: 0.01,
            seed,
        }
    }
}

struct ClassProfile {
    rhythm_density: (f64, f64),
    polyphony: (f64, f64),
}

const PROFILES: [ClassProfile; 2] = [
    ClassProfile {
        rhythm_density: (0.1, 0.4),
        polyphony: (3.0, 6.0),
    },
    ClassProfile {
        rhythm_density: (0.5, 0.9),
        polyphony: (1.0, 2.0),
    },
];

/// MIDI pitch of scale degree `degree` (may exceed 7) above `base`.
fn degree_pitch(base: u8, steps: &[u8; 7], degree: usize) -> u8 {
    base + 12 * (degree / 7) as u8 + steps[degree % 7]
}

fn generate_segment<R: Rng>(class: usize, rng: &mut R) -> Result<Segment> {
    let profile = &PROFILES[class];
    let rd = rng.random_range(profile.rhythm_density.0..=profile.rhythm_density.1);
    let poly = rng.random_range(profile.polyphony.0..=profile.polyphony.1);
    let n_onsets = ((rd * SEGMENT_STEPS as f64).round() as usize).clamp(1, SEGMENT_STEPS);

    let mut onsets: Vec<usize> = sample(rng, SEGMENT_STEPS - 1, n_onsets - 1)
        .into_iter()
        .map(|s| s + 1)
        .collect();
    onsets.push(0);
    onsets.sort_unstable();

    let tonic = rng.random_range(0..12u8);
    let steps = if rng.random_bool(0.5) { &MAJOR_STEPS } else { &MINOR_STEPS };
    let base = 48 + tonic;

    let mut sizes: Vec<usize> = onsets
        .iter()
        .map(|_| poly.floor() as usize + rng.random_bool(poly.fract()) as usize)
        .map(|s| s.max(1))
        .collect();
    let roots: Vec<usize> = onsets.iter().map(|_| rng.random_range(0..7)).collect();

    loop {
        let mut notes = Vec::new();
        for (i, &onset) in onsets.iter().enumerate() {
            let end = onsets.get(i + 1).copied().unwrap_or(SEGMENT_STEPS);
            for voice in 0..sizes[i] {
                let pitch = degree_pitch(base, steps, roots[i] + 2 * voice);
                notes.push(NoteEvent::new(pitch, onset as u8, (end - onset) as u8));
            }
        }
        let segment = Segment::from_notes(notes)?;
        match crate::codec::encode_tokens(&segment) {
            Ok(_) => return Ok(segment),
            Err(Error::TokenOverflow(_)) => {
                // Thin the thickest chord until the encoding fits.
                let (idx, _) = sizes.iter().enumerate().max_by_key(|&(i, &s)| (s, i)).expect("non-empty");
                sizes[idx] -= 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Number of records that keep their arousal label.
pub fn labelled_count(n: usize, fraction: f64) -> usize {
    if fraction <= 0.0 {
        return 0;
    }
    let k = (n as f64 * fraction - 1e-9).ceil() as usize;
    k.max(2).min(n)
}

/// Generates `n_segments` records with a uniformly drawn arousal class each.
/// Only a `labelled_fraction` subset (rounded up, at least one per class)
/// keeps its arousal label; every record keeps `reference_class`.
pub fn synth_corpus(params: SynthParams) -> Result<Vec<CorpusRecord>> {
    let SynthParams {
        n_segments,
        labelled_fraction,
        seed,
    } = params;
    if n_segments < 100 {
        return Err(Error::InvalidConfig(format!(
            "synthetic corpus needs at least 100 segments, got {n_segments}"
        )));
    }
    if !(0.0..=1.0).contains(&labelled_fraction) {
        return Err(Error::InvalidConfig(format!(
            "labelled fraction {labelled_fraction} outside [0, 1]"
        )));
    }
    let mut rng = stream(seed, "synth");
    let mut records = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let class = rng.random_range(0..2usize);
        let mut rec = CorpusRecord::from_segment(generate_segment(class, &mut rng)?, None)?;
        rec.reference_class = Some(class);
        records.push(rec);
    }

    let mut label_rng = stream(seed, "synth.labels");
    let want = labelled_count(n_segments, labelled_fraction);
    let mut chosen = Vec::with_capacity(want);
    if want > 0 {
        for class in 0..2 {
            let members: Vec<usize> = (0..n_segments)
                .filter(|&i| records[i].reference_class == Some(class))
                .collect();
            if let Some(&i) = members.choose(&mut label_rng) {
                chosen.push(i);
            }
        }
        let mut rest: Vec<usize> = (0..n_segments).filter(|i| !chosen.contains(i)).collect();
        rest.shuffle(&mut label_rng);
        chosen.extend(rest.into_iter().take(want.saturating_sub(chosen.len())));
    }
    for i in chosen {
        let class = records[i].reference_class.expect("generated");
        let magnitude = label_rng.random_range(0.2..=1.0);
        let raw = if class == 1 { magnitude } else { -magnitude };
        records[i].arousal_raw = Some(raw);
        records[i].arousal_class = Some(class);
    }
    Ok(records)
}
