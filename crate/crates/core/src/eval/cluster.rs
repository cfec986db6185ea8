//! Arousal classification from the mixture posteriors.

use crate::corpus::CorpusRecord;
use crate::diff::{Graph, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::model::prior::cluster_log_posterior;
use crate::model::{encode_records, FaderNet};

fn log_posterior<T: Scalar>(z: &Tensor<T>, means: &Tensor<T>, variance: f64) -> Result<Tensor<T>> {
    let mut g = Graph::inference();
    let (zv, mv) = (g.constant(z.clone()), g.constant(means.clone()));
    let lq = cluster_log_posterior(&mut g, zv, mv, variance)?;
    Ok(g.value(lq).clone())
}

/// Argmax over clusters of the product of every latent's `q(c | z)` at the
/// posterior means. Ties go to the lower class.
pub fn classify_arousal<T: Scalar>(model: &FaderNet<T>, records: &[CorpusRecord]) -> Result<Vec<usize>> {
    let variance = model.config().prior_variance;
    let latents = encode_records(model, records)?;
    let mut log_posteriors = Vec::with_capacity(latents.len());
    for (slot, z) in latents.iter().enumerate() {
        log_posteriors.push(log_posterior(z, model.prior_means_tensor(slot)?, variance)?);
    }
    let k = model.config().clusters;
    Ok((0..records.len())
        .map(|i| {
            let score = |c: usize| log_posteriors.iter().map(|q| q.get(i, c).f64()).sum::<f64>();
            (1..k).fold(0, |best, c| if score(c) > score(best) { c } else { best })
        })
        .collect())
}

/// Share of records whose predicted class matches their reference class,
/// falling back to the arousal label. Records with neither are skipped.
pub fn cluster_accuracy<T: Scalar>(model: &FaderNet<T>, records: &[CorpusRecord]) -> Result<f64> {
    let known: Vec<(&CorpusRecord, usize)> = records
        .iter()
        .filter_map(|r| r.reference_class.or(r.arousal_class).map(|c| (r, c)))
        .collect();
    if known.is_empty() {
        return Err(Error::InsufficientSamples("no records with a known class".into()));
    }
    let subset: Vec<CorpusRecord> = known.iter().map(|(r, _)| (*r).clone()).collect();
    let predicted = classify_arousal(model, &subset)?;
    let correct = predicted.iter().zip(&known).filter(|(p, (_, c))| *p == c).count();
    Ok(correct as f64 / known.len() as f64)
}
