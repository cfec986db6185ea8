use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::batch::Batch;
use super::config::{ModelConfig, ModelMode};
use super::loss::{total_loss, LossBreakdown};
use super::net::{FaderNet, FaderRange, TrainMeta};
use crate::corpus::CorpusRecord;
use crate::diff::rng::{stream, StreamRng};
use crate::diff::{AdamState, Graph, Scalar, Tensor};
use crate::error::{Error, Result};

/// Records per forward pass when encoding outside training.
pub const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<LossBreakdown>,
}

impl TrainLog {
    pub fn totals(&self) -> Vec<f64> {
        self.losses.iter().map(|l| l.total).collect()
    }

    /// Trailing moving average of the total loss ending at `step` (inclusive).
    pub fn moving_average(&self, step: usize, window: usize) -> f64 {
        let end = (step + 1).min(self.losses.len());
        let start = end.saturating_sub(window.max(1));
        let slice = &self.losses[start..end];
        slice.iter().map(|l| l.total).sum::<f64>() / slice.len().max(1) as f64
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LossBreakdown::CSV_HEADER)?;
        for l in &self.losses {
            w.write_record(l.csv_row())?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: FaderNet<f32>,
    pub log: TrainLog,
}

fn standard_noise(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor<f32> {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("sized by construction")
}

/// Trains from scratch for `config.train_steps` steps.
pub fn train(config: &ModelConfig, records: &[CorpusRecord], seed: u64) -> Result<Trained> {
    train_with(config, records, seed, |_| {})
}

/// Like [`train`], calling `on_step` after every optimizer step.
pub fn train_with(
    config: &ModelConfig,
    records: &[CorpusRecord],
    seed: u64,
    mut on_step: impl FnMut(&LossBreakdown),
) -> Result<Trained> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = FaderNet::<f32>::new(config.clone(), seed)?;
    let n = records.len();
    let bs = config.batch_size.min(n);
    if bs < 2 && config.mode != ModelMode::AblationSingleLatent && config.latent_reg {
        return Err(Error::BatchTooSmall(bs));
    }
    let mut adam = AdamState::new(model.store(), config.learning_rate);
    let mut shuffle_rng = stream(seed, "shuffle");
    let mut noise_rng = stream(seed, "noise");
    let mut labelled_rng = stream(seed, "labelled");
    let labelled: Vec<usize> = (0..n).filter(|&i| records[i].arousal_class.is_some()).collect();
    let quota = if labelled.is_empty() {
        0
    } else {
        config.labelled_per_batch.min(bs - 1)
    };
    let fresh = bs - quota;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut shuffle_rng);
    let mut pos = 0;
    let mut log = TrainLog::default();

    for step in 0..config.train_steps {
        if pos + fresh > n {
            order.shuffle(&mut shuffle_rng);
            pos = 0;
        }
        let mut picks = order[pos..pos + fresh].to_vec();
        pos += fresh;
        picks.extend((0..quota).map(|_| labelled[labelled_rng.random_range(0..labelled.len())]));
        let batch = Batch::from_records(picks.iter().map(|&i| &records[i]));
        let noise: Vec<Tensor<f32>> = (0..model.latent_count())
            .map(|_| standard_noise(&mut noise_rng, bs, config.z_dim))
            .collect();

        let mut g = Graph::new();
        let (loss, breakdown) = total_loss(&model, &mut g, &batch, Some(&noise), step)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = g.backward(loss);
        let store = model.store_mut();
        store.zero_grad();
        g.accumulate(&grads, store);
        adam.step(store);
        on_step(&breakdown);
        log.losses.push(breakdown);
    }

    model.fader_ranges = fader_ranges(&model, records)?;
    model.train_meta = Some(TrainMeta {
        seed,
        steps: config.train_steps,
        records: n,
        labelled: records.iter().filter(|r| r.arousal_class.is_some()).count(),
    });
    Ok(Trained { model, log })
}

/// Posterior means of every record, one `N x z_dim` tensor per latent.
pub fn encode_records<T: Scalar>(model: &FaderNet<T>, records: &[CorpusRecord]) -> Result<Vec<Tensor<T>>> {
    let z = model.config().z_dim;
    let mut cols: Vec<Vec<T>> = vec![Vec::with_capacity(records.len() * z); model.latent_count()];
    for chunk in records.chunks(INFERENCE_CHUNK) {
        let tokens: Vec<Vec<usize>> = chunk.iter().map(|r| r.tokens.ids()).collect();
        for (slot, mu) in model.encode_means(&tokens)?.into_iter().enumerate() {
            cols[slot].extend_from_slice(mu.data());
        }
    }
    cols.into_iter().map(|data| Tensor::matrix(records.len(), z, data)).collect()
}

/// Min and max of each latent's regularized dimension over `records`.
pub fn fader_ranges<T: Scalar>(model: &FaderNet<T>, records: &[CorpusRecord]) -> Result<Vec<FaderRange>> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let d = model.config().reg_dim;
    Ok(encode_records(model, records)?
        .iter()
        .map(|mu| {
            let col = (0..mu.rows()).map(|r| mu.get(r, d).f64());
            let (min, max) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            FaderRange { min, max }
        })
        .collect())
}
