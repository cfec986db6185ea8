//! Arousal style transfer: latents outside the target mixture component are
//! moved along the difference of component means.

use serde::{Deserialize, Serialize};

use crate::codec::{decode_tokens, encode_tokens, NoteEvent, Segment, TokenSeq};
use crate::diff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::labels::{conditioning_key, Densities, Feature};
use crate::model::{infer_cluster_tensor, FaderNet, ModelMode};

/// Upper end of the strength dial.
pub const MAX_STRENGTH: f64 = 1.5;

/// What a transfer did to each latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftPlan {
    pub target_class: usize,
    pub strength: f64,
    /// Whether the rhythm and note latents (in that order) were shifted.
    pub applied: [bool; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub plan: ShiftPlan,
    pub tokens_in: Vec<usize>,
    pub tokens_out: Vec<usize>,
    pub segment_out: Vec<NoteEvent>,
    pub densities_before: Densities,
    pub densities_after: Densities,
    /// `after - before` for rhythm and note density.
    pub density_delta: [f64; 2],
    /// `q(c | z)` per feature before the shift.
    pub clusters_before: [Vec<f64>; 2],
    /// `q(c | z)` per feature at the shifted latents.
    pub clusters_after: [Vec<f64>; 2],
}

fn require_mixture<T: Scalar>(model: &FaderNet<T>) -> Result<()> {
    if model.mode() != ModelMode::GmVae {
        return Err(Error::UnsupportedInMode(format!(
            "transfer needs gm_vae, got {}",
            model.mode()
        )));
    }
    Ok(())
}

fn check_class(class: usize, bound: usize) -> Result<()> {
    if class >= bound {
        return Err(Error::IndexError { index: class, bound });
    }
    Ok(())
}

/// `mu_{feature, to} - mu_{feature, from}`.
pub fn shift_vector<T: Scalar>(model: &FaderNet<T>, feature: Feature, from: usize, to: usize) -> Result<Vec<T>> {
    require_mixture(model)?;
    let means = model.prior_means_tensor(model.slot_of(feature))?;
    let k = means.rows();
    check_class(from, k)?;
    check_class(to, k)?;
    Ok(means.row(to).iter().zip(means.row(from)).map(|(&b, &a)| b - a).collect())
}

fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

fn posterior<T: Scalar>(model: &FaderNet<T>, feature: Feature, z: &Tensor<T>) -> Result<Vec<f64>> {
    let means = model.prior_means_tensor(model.slot_of(feature))?;
    let q = infer_cluster_tensor(z, means, model.config().prior_variance)?;
    Ok(q.row(0).iter().map(|v| v.f64()).collect())
}

/// `q(c | z)` for the rhythm and note latents.
pub type ClusterPair = [Vec<f64>; 2];

/// Shifts single-row latents (one `1 x z_dim` tensor per feature) toward
/// `target`. Returns the plan and the posteriors before and after.
pub fn shift_latents<T: Scalar>(
    model: &FaderNet<T>,
    latents: &mut [Tensor<T>],
    target: usize,
    strength: f64,
) -> Result<(ShiftPlan, ClusterPair, ClusterPair)> {
    require_mixture(model)?;
    check_class(target, model.config().clusters)?;
    if !(0.0..=MAX_STRENGTH).contains(&strength) {
        return Err(Error::InvalidConfig(format!(
            "strength {strength} outside [0, {MAX_STRENGTH}]"
        )));
    }
    if latents.len() != 2 || latents.iter().any(|z| z.rows() != 1) {
        return Err(Error::ShapeError("expected one single-row latent per feature".into()));
    }
    let mut applied = [false; 2];
    let mut before: [Vec<f64>; 2] = Default::default();
    let mut after: [Vec<f64>; 2] = Default::default();
    for feature in Feature::ALL {
        let i = feature.index();
        let z = &mut latents[model.slot_of(feature)];
        before[i] = posterior(model, feature, z)?;
        let current = argmax(&before[i]);
        if current != target {
            let s = shift_vector(model, feature, current, target)?;
            let a = T::of(strength);
            z.data_mut().iter_mut().zip(&s).for_each(|(v, &d)| *v = *v + a * d);
            applied[i] = true;
        }
        after[i] = posterior(model, feature, z)?;
    }
    let plan = ShiftPlan {
        target_class: target,
        strength,
        applied,
    };
    Ok((plan, before, after))
}

fn encode_one<T: Scalar>(model: &FaderNet<T>, tokens: &TokenSeq) -> Result<Vec<Tensor<T>>> {
    model.encode_means(&[tokens.ids()])
}

/// Greedy reconstruction from the posterior means.
pub fn reconstruct<T: Scalar>(model: &FaderNet<T>, segment: &Segment) -> Result<TokenSeq> {
    let tokens = encode_tokens(segment)?;
    let z = encode_one(model, &tokens)?;
    let mut out = model.greedy_decode(&z, &[conditioning_key(segment)])?;
    Ok(out.remove(0))
}

/// Encodes `segment`, shifts each latent whose argmax cluster differs from
/// `target` by `strength` times the mean difference, and decodes with the
/// segment's own key.
pub fn transfer<T: Scalar>(model: &FaderNet<T>, segment: &Segment, target: usize, strength: f64) -> Result<TransferResult> {
    require_mixture(model)?;
    let tokens = encode_tokens(segment)?;
    let mut z = encode_one(model, &tokens)?;
    let (plan, clusters_before, clusters_after) = shift_latents(model, &mut z, target, strength)?;
    let out = model.greedy_decode(&z, &[conditioning_key(segment)])?.remove(0);
    let segment_out = decode_tokens(&out);
    let densities_before = Densities::of(segment);
    let densities_after = Densities::of(&segment_out);
    Ok(TransferResult {
        plan,
        tokens_in: tokens.ids(),
        tokens_out: out.ids(),
        segment_out: segment_out.notes().to_vec(),
        density_delta: [
            densities_after.rhythm_density - densities_before.rhythm_density,
            densities_after.note_density - densities_before.note_density,
        ],
        densities_before,
        densities_after,
        clusters_before,
        clusters_after,
    })
}
