use crate::codec::SEGMENT_STEPS;
use crate::corpus::CorpusRecord;
use crate::labels::{Densities, Feature, KeyVector};

/// Model inputs and targets for a minibatch.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub tokens: Vec<Vec<usize>>,
    pub keys: Vec<KeyVector>,
    pub y_rhythm: Vec<[usize; SEGMENT_STEPS]>,
    pub y_note: Vec<[usize; SEGMENT_STEPS]>,
    pub densities: Vec<Densities>,
    pub arousal: Vec<Option<usize>>,
}

impl Batch {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a CorpusRecord>) -> Self {
        let mut b = Batch::default();
        for r in records {
            b.tokens.push(r.tokens.ids());
            b.keys.push(r.key);
            b.y_rhythm.push(r.y_rhythm.classes());
            b.y_note.push(r.y_note.classes());
            b.densities.push(r.densities);
            b.arousal.push(r.arousal_class);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn labels(&self, feature: Feature) -> &[[usize; SEGMENT_STEPS]] {
        match feature {
            Feature::Rhythm => &self.y_rhythm,
            Feature::Note => &self.y_note,
        }
    }

    /// Raw densities used as regularization targets.
    pub fn targets(&self, feature: Feature) -> Vec<f64> {
        self.densities.iter().map(|d| feature.density(d)).collect()
    }
}
