//! Low-level attribute labels: per-step rhythm states, per-step polyphony,
//! their scalar densities, and a global key estimate.

use serde::{Deserialize, Serialize};

use crate::codec::{Segment, SEGMENT_STEPS};
use crate::error::{Error, Result};

pub const RHYTHM_CLASSES: usize = 3;
pub const NOTE_CLASSES: usize = 16;
pub const KEY_CLASSES: usize = 24;
pub const MAX_POLYPHONY: usize = NOTE_CLASSES - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RhythmState {
    Onset = 0,
    Hold = 1,
    Rest = 2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhythmLabel {
    pub steps: [RhythmState; SEGMENT_STEPS],
}

impl RhythmLabel {
    /// Class indices in `{0, 1, 2}` for onset, hold and rest.
    pub fn classes(&self) -> [usize; SEGMENT_STEPS] {
        self.steps.map(|s| s as usize)
    }

    pub fn one_hot(&self) -> [[f64; RHYTHM_CLASSES]; SEGMENT_STEPS] {
        let mut out = [[0.0; RHYTHM_CLASSES]; SEGMENT_STEPS];
        for (row, s) in out.iter_mut().zip(self.steps) {
            row[s as usize] = 1.0;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteLabel {
    pub counts: [u8; SEGMENT_STEPS],
}

impl NoteLabel {
    pub fn classes(&self) -> [usize; SEGMENT_STEPS] {
        self.counts.map(|c| c as usize)
    }

    pub fn one_hot(&self) -> [[f64; NOTE_CLASSES]; SEGMENT_STEPS] {
        let mut out = [[0.0; NOTE_CLASSES]; SEGMENT_STEPS];
        for (row, c) in out.iter_mut().zip(self.counts) {
            row[c as usize] = 1.0;
        }
        out
    }
}

/// One-hot key: indices 0..12 are C..B major, 12..24 are C..B minor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyVector(usize);

impl KeyVector {
    pub fn new(index: usize) -> Result<Self> {
        if index >= KEY_CLASSES {
            return Err(Error::IndexError {
                index,
                bound: KEY_CLASSES,
            });
        }
        Ok(Self(index))
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn is_minor(self) -> bool {
        self.0 >= 12
    }

    pub fn tonic(self) -> usize {
        self.0 % 12
    }

    pub fn one_hot(self) -> [f64; KEY_CLASSES] {
        let mut v = [0.0; KEY_CLASSES];
        v[self.0] = 1.0;
        v
    }

    pub fn name(self) -> String {
        const NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
        let mode = if self.is_minor() { "minor" } else { "major" };
        format!("{} {mode}", NAMES[self.tonic()])
    }
}

/// The two low-level attributes a fader controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Rhythm,
    Note,
}

impl Feature {
    pub const ALL: [Feature; 2] = [Feature::Rhythm, Feature::Note];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Rhythm => "rhythm",
            Feature::Note => "note",
        }
    }

    pub fn other(self) -> Feature {
        match self {
            Feature::Rhythm => Feature::Note,
            Feature::Note => Feature::Rhythm,
        }
    }

    /// Label alphabet size per step.
    pub fn classes(self) -> usize {
        match self {
            Feature::Rhythm => RHYTHM_CLASSES,
            Feature::Note => NOTE_CLASSES,
        }
    }

    /// Raw density (note density is mean polyphony, not normalized).
    pub fn density(self, d: &Densities) -> f64 {
        match self {
            Feature::Rhythm => d.rhythm_density,
            Feature::Note => d.note_density,
        }
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rhythm" => Ok(Feature::Rhythm),
            "note" => Ok(Feature::Note),
            other => Err(Error::InvalidConfig(format!("unknown feature {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Densities {
    pub rhythm_density: f64,
    pub note_density: f64,
}

impl Densities {
    pub fn of(segment: &Segment) -> Self {
        Self {
            rhythm_density: rhythm_density(&rhythm_label(segment)),
            note_density: note_density(&note_label(segment)),
        }
    }
}

pub fn rhythm_label(segment: &Segment) -> RhythmLabel {
    let mut steps = [RhythmState::Rest; SEGMENT_STEPS];
    for n in segment.notes() {
        for s in &mut steps[n.onset_step as usize..n.end_step()] {
            if *s == RhythmState::Rest {
                *s = RhythmState::Hold;
            }
        }
    }
    for n in segment.notes() {
        steps[n.onset_step as usize] = RhythmState::Onset;
    }
    RhythmLabel { steps }
}

pub fn note_label(segment: &Segment) -> NoteLabel {
    let mut counts = [0usize; SEGMENT_STEPS];
    for n in segment.notes() {
        for c in &mut counts[n.onset_step as usize..n.end_step()] {
            *c += 1;
        }
    }
    NoteLabel {
        counts: counts.map(|c| c.min(MAX_POLYPHONY) as u8),
    }
}

pub fn rhythm_density(label: &RhythmLabel) -> f64 {
    let onsets = label.steps.iter().filter(|&&s| s == RhythmState::Onset).count();
    onsets as f64 / SEGMENT_STEPS as f64
}

pub fn note_density(label: &NoteLabel) -> f64 {
    label.counts.iter().map(|&c| c as f64).sum::<f64>() / SEGMENT_STEPS as f64
}

// Krumhansl-Kessler probe-tone profiles, tonic first.
pub const MAJOR_PROFILE: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
pub const MINOR_PROFILE: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

/// Duration-weighted pitch-class histogram.
pub fn pitch_class_histogram(segment: &Segment) -> [f64; 12] {
    let mut hist = [0.0; 12];
    for n in segment.notes() {
        hist[n.pitch as usize % 12] += n.duration_steps as f64;
    }
    hist
}

fn pearson(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let ma = a.iter().sum::<f64>() / 12.0;
    let mb = b.iter().sum::<f64>() / 12.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..12 {
        let (da, db) = (a[i] - ma, b[i] - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Correlation of the histogram with each of the 24 rotated key profiles.
pub fn key_correlations(hist: &[f64; 12]) -> [f64; KEY_CLASSES] {
    let mut out = [0.0; KEY_CLASSES];
    for (idx, slot) in out.iter_mut().enumerate() {
        let profile = if idx < 12 { &MAJOR_PROFILE } else { &MINOR_PROFILE };
        let tonic = idx % 12;
        let rotated: [f64; 12] = std::array::from_fn(|pc| profile[(pc + 12 - tonic) % 12]);
        *slot = pearson(hist, &rotated);
    }
    out
}

/// Krumhansl-Schmuckler key estimate; ties go to the lowest index.
pub fn estimate_key(segment: &Segment) -> Result<KeyVector> {
    if segment.is_empty() {
        return Err(Error::EmptySegment);
    }
    let corr = key_correlations(&pitch_class_histogram(segment));
    let mut best = 0;
    for (i, &c) in corr.iter().enumerate() {
        if c > corr[best] {
            best = i;
        }
    }
    KeyVector::new(best)
}

/// Key used for conditioning. Empty segments fall back to C major.
pub fn conditioning_key(segment: &Segment) -> KeyVector {
    estimate_key(segment).unwrap_or(KeyVector(0))
}
