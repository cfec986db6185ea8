//! Random segments and a brute-force density recomputation.

use fadernets::codec::SEGMENT_STEPS;
use fadernets::{NoteEvent, Segment};
use rand::Rng;

pub fn random_segment(rng: &mut impl Rng) -> Segment {
    let n = rng.random_range(0..=12);
    let notes = (0..n).map(|_| {
        let onset = rng.random_range(0..SEGMENT_STEPS as u8);
        let duration = rng.random_range(1..=SEGMENT_STEPS as u8 - onset);
        NoteEvent::new(rng.random_range(21..=108), onset, duration)
    });
    Segment::from_notes(notes).unwrap()
}

/// Densities straight from the note list: distinct onset steps over 16, and
/// the polyphony at each step (capped at 15) averaged over 16 steps.
pub fn brute_force_densities(segment: &Segment) -> (f64, f64) {
    let mut onset_steps = Vec::new();
    let mut poly = 0usize;
    for step in 0..SEGMENT_STEPS {
        if segment.notes().iter().any(|n| n.onset_step as usize == step) {
            onset_steps.push(step);
        }
        let sounding = segment
            .notes()
            .iter()
            .filter(|n| (n.onset_step as usize..n.onset_step as usize + n.duration_steps as usize).contains(&step))
            .count();
        poly += sounding.min(15);
    }
    (onset_steps.len() as f64 / 16.0, poly as f64 / 16.0)
}
