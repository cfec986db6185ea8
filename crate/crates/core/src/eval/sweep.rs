use std::io::Write;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{consistency_score, linearity_score, normalized_density, restrictiveness_score, slide_values};
use crate::codec::{decode_tokens, Segment};
use crate::corpus::CorpusRecord;
use crate::diff::rng::stream;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::labels::{Densities, Feature, KeyVector};
use crate::model::{FaderNet, FaderRange, ModelMode, INFERENCE_CHUNK};

/// What a fader sweep needs from a model.
pub trait Controllable {
    /// Posterior means of each record, one `N x z_dim` tensor per latent.
    fn encode_latents(&self, records: &[&CorpusRecord]) -> Result<Vec<Tensor<f64>>>;
    /// Decodes latents (one tensor per latent) back to segments. `sources`
    /// are the records the latents were encoded from.
    fn decode_latents(&self, latents: &[Tensor<f64>], keys: &[KeyVector], sources: &[&CorpusRecord]) -> Result<Vec<Segment>>;
    /// Latent slot and regularized dimension driving `feature`.
    fn fader(&self, feature: Feature) -> Result<(usize, usize)>;
    fn fader_range(&self, feature: Feature) -> Result<FaderRange>;
    fn label(&self) -> String;
    fn checkpoint_id(&self) -> String;
}

impl Controllable for FaderNet<f32> {
    fn encode_latents(&self, records: &[&CorpusRecord]) -> Result<Vec<Tensor<f64>>> {
        let z = self.config().z_dim;
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); self.latent_count()];
        for chunk in records.chunks(INFERENCE_CHUNK) {
            let tokens: Vec<Vec<usize>> = chunk.iter().map(|r| r.tokens.ids()).collect();
            for (slot, mu) in self.encode_means(&tokens)?.into_iter().enumerate() {
                cols[slot].extend(mu.data().iter().map(|&v| v as f64));
            }
        }
        cols.into_iter().map(|c| Tensor::matrix(records.len(), z, c)).collect()
    }

    fn decode_latents(&self, latents: &[Tensor<f64>], keys: &[KeyVector], _sources: &[&CorpusRecord]) -> Result<Vec<Segment>> {
        let zs: Vec<Tensor<f32>> = latents.iter().map(|t| t.cast()).collect();
        Ok(self.greedy_decode(&zs, keys)?.iter().map(decode_tokens).collect())
    }

    fn fader(&self, feature: Feature) -> Result<(usize, usize)> {
        if self.mode() == ModelMode::AblationSingleLatent {
            return Err(Error::UnsupportedInMode(format!("{} has no per-feature faders", self.mode())));
        }
        Ok((self.slot_of(feature), self.config().reg_dim))
    }

    fn fader_range(&self, feature: Feature) -> Result<FaderRange> {
        let (slot, _) = self.fader(feature)?;
        self.fader_ranges
            .get(slot)
            .copied()
            .ok_or_else(|| Error::MalformedCheckpoint("checkpoint stores no fader ranges".into()))
    }

    fn label(&self) -> String {
        let reg = if self.config().latent_reg { "" } else { "_no_reg" };
        format!("{}{reg}", self.mode())
    }

    fn checkpoint_id(&self) -> String {
        crate::model::checkpoint::checkpoint_id(self).unwrap_or_default()
    }
}

/// Stand-in whose decoder returns the input segment whatever the latent.
#[derive(Debug, Clone, Default)]
pub struct IdentityStub;

impl Controllable for IdentityStub {
    fn encode_latents(&self, records: &[&CorpusRecord]) -> Result<Vec<Tensor<f64>>> {
        let n = records.len();
        Ok(vec![Tensor::zeros(&[n, 2]), Tensor::zeros(&[n, 2])])
    }

    fn decode_latents(&self, _latents: &[Tensor<f64>], _keys: &[KeyVector], sources: &[&CorpusRecord]) -> Result<Vec<Segment>> {
        Ok(sources.iter().map(|r| r.segment.clone()).collect())
    }

    fn fader(&self, feature: Feature) -> Result<(usize, usize)> {
        Ok((feature.index(), 0))
    }

    fn fader_range(&self, _feature: Feature) -> Result<FaderRange> {
        Ok(FaderRange { min: -1.0, max: 1.0 })
    }

    fn label(&self) -> String {
        "identity_stub".into()
    }

    fn checkpoint_id(&self) -> String {
        "identity".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub feature: Feature,
    pub values: Vec<f64>,
    /// Test-set indices of the swept samples, in row order.
    pub samples: Vec<usize>,
    /// `M x T` rhythm density of each decoded output.
    pub rhythm: Vec<Vec<f64>>,
    /// `M x T` raw note density (mean polyphony) of each decoded output.
    pub note: Vec<Vec<f64>>,
}

impl SweepResult {
    pub fn density(&self, feature: Feature) -> &[Vec<f64>] {
        match feature {
            Feature::Rhythm => &self.rhythm,
            Feature::Note => &self.note,
        }
    }

    /// Densities of `feature` mapped onto `[0, 1]`.
    pub fn normalized(&self, feature: Feature) -> Vec<Vec<f64>> {
        self.density(feature)
            .iter()
            .map(|row| row.iter().map(|&v| normalized_density(feature, v)).collect())
            .collect()
    }

    /// All `(slid value, output density)` pairs for `feature`.
    pub fn pairs(&self, feature: Feature) -> Vec<(f64, f64)> {
        self.density(feature)
            .iter()
            .flat_map(|row| row.iter().zip(&self.values).map(|(&y, &x)| (x, y)))
            .collect()
    }
}

/// Slides `feature`'s fader across its training range for `m` sampled test
/// records and measures both densities of every decoded output.
pub fn fader_sweep(
    model: &impl Controllable,
    test_set: &[CorpusRecord],
    feature: Feature,
    steps: usize,
    m: usize,
    seed: u64,
) -> Result<SweepResult> {
    if test_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let range = model.fader_range(feature)?;
    let values = slide_values(range.min, range.max, steps)?;
    let (slot, dim) = model.fader(feature)?;
    let m = m.min(test_set.len());
    let samples = sample(&mut stream(seed, "sweep"), test_set.len(), m).into_vec();
    let records: Vec<&CorpusRecord> = samples.iter().map(|&i| &test_set[i]).collect();
    let keys: Vec<KeyVector> = records.iter().map(|r| r.key).collect();
    let base = model.encode_latents(&records)?;

    let mut rhythm = vec![Vec::with_capacity(steps); m];
    let mut note = vec![Vec::with_capacity(steps); m];
    for &v in &values {
        let mut latents = base.clone();
        let cols = latents[slot].cols();
        for r in 0..m {
            latents[slot].data_mut()[r * cols + dim] = v;
        }
        for (i, seg) in model.decode_latents(&latents, &keys, &records)?.iter().enumerate() {
            let d = Densities::of(seg);
            rhythm[i].push(d.rhythm_density);
            note[i].push(d.note_density);
        }
    }
    Ok(SweepResult {
        feature,
        values,
        samples,
        rhythm,
        note,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            steps: 8,
            samples: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScores {
    pub feature: Feature,
    pub consistency: f64,
    pub restrictiveness: f64,
    pub linearity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub checkpoint_id: String,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub features: Vec<FeatureScores>,
}

impl EvalReport {
    pub fn scores(&self, feature: Feature) -> Option<&FeatureScores> {
        self.features.iter().find(|s| s.feature == feature)
    }

    pub const CSV_HEADER: [&'static str; 9] = [
        "model",
        "feature",
        "consistency",
        "restrictiveness",
        "linearity",
        "steps",
        "samples",
        "seed",
        "checkpoint_id",
    ];

    pub fn write_csv(reports: &[EvalReport], out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in reports {
            for s in &r.features {
                w.write_record([
                    r.model.clone(),
                    s.feature.name().to_string(),
                    s.consistency.to_string(),
                    s.restrictiveness.to_string(),
                    s.linearity.to_string(),
                    r.steps.to_string(),
                    r.samples.to_string(),
                    r.seed.to_string(),
                    r.checkpoint_id.clone(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Sweeps each feature and scores the outputs. Consistency and linearity
/// read the swept feature's density, restrictiveness the other one's.
pub fn evaluate(model: &impl Controllable, test_set: &[CorpusRecord], opts: EvalOptions) -> Result<EvalReport> {
    let mut features = Vec::with_capacity(2);
    let mut samples = 0;
    for feature in Feature::ALL {
        let sweep = fader_sweep(model, test_set, feature, opts.steps, opts.samples, opts.seed)?;
        samples = sweep.samples.len();
        features.push(FeatureScores {
            feature,
            consistency: consistency_score(&sweep.normalized(feature))?,
            restrictiveness: restrictiveness_score(&sweep.normalized(feature.other()))?,
            linearity: linearity_score(&sweep.pairs(feature))?,
        });
    }
    Ok(EvalReport {
        model: model.label(),
        checkpoint_id: model.checkpoint_id(),
        steps: opts.steps,
        samples,
        seed: opts.seed,
        features,
    })
}
