use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::config::ModelMode;
use super::net::{decoder_targets, FaderNet};
use super::prior::{kl_mixture_rows, kl_standard_rows};
use crate::codec::SEGMENT_STEPS;
use crate::diff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::labels::Feature;

/// Scalar loss terms of one step. In single-latent mode the one KL term is
/// reported as `kl_rhythm` and the regularization and discriminator terms are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub beta: f64,
    pub reconstruction: f64,
    pub kl_rhythm: f64,
    pub kl_note: f64,
    pub reg_rhythm: f64,
    pub reg_note: f64,
    pub disc_rhythm: f64,
    pub disc_note: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: [&'static str; 10] = [
        "step",
        "beta",
        "reconstruction",
        "kl_rhythm",
        "kl_note",
        "reg_rhythm",
        "reg_note",
        "disc_rhythm",
        "disc_note",
        "total",
    ];

    /// `reconstruction + beta (kl_rhythm + kl_note) + reg + disc`.
    pub fn component_sum(&self) -> f64 {
        self.reconstruction
            + self.beta * (self.kl_rhythm + self.kl_note)
            + self.reg_rhythm
            + self.reg_note
            + self.disc_rhythm
            + self.disc_note
    }

    pub fn csv_row(&self) -> [String; 10] {
        [
            self.step.to_string(),
            self.beta.to_string(),
            self.reconstruction.to_string(),
            self.kl_rhythm.to_string(),
            self.kl_note.to_string(),
            self.reg_rhythm.to_string(),
            self.reg_note.to_string(),
            self.disc_rhythm.to_string(),
            self.disc_note.to_string(),
            self.total.to_string(),
        ]
    }
}

/// Pairwise-ordering loss `mean_ij (tanh(z_i - z_j) - sign(y_i - y_j))^2`.
pub fn latent_reg_loss<T: Scalar>(g: &mut Graph<T>, z_d: Var, y: &[f64]) -> Result<Var> {
    g.latent_reg(z_d, y)
}

/// Plain-value form of [`latent_reg_loss`].
pub fn latent_reg_value(z_d: &[f64], y: &[f64]) -> Result<f64> {
    if z_d.len() != y.len() {
        return Err(Error::ShapeError(format!("{} latents for {} targets", z_d.len(), y.len())));
    }
    let mut g = Graph::<f64>::inference();
    let z = g.constant(Tensor::from_f64(&[z_d.len(), 1], z_d)?);
    let loss = g.latent_reg(z, y)?;
    Ok(g.scalar(loss))
}

/// Weighted objective for one batch. `noise` holds one `B x z_dim` standard
/// normal draw per latent; without it the posterior means are used.
pub fn total_loss<T: Scalar>(
    model: &FaderNet<T>,
    g: &mut Graph<T>,
    batch: &Batch,
    noise: Option<&[Tensor<T>]>,
    step: u64,
) -> Result<(Var, LossBreakdown)> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::BatchTooSmall(0));
    }
    let cfg = model.config();
    let beta = cfg.beta.at(step);
    let norm = T::of(b as f64);
    let post = model.encode(g, &batch.tokens, noise)?;

    let zs: Vec<Var> = post.iter().map(|p| p.z).collect();
    let logits = model.decode_teacher(g, &zs, &batch.keys, &batch.tokens)?;
    let (targets, weights) = decoder_targets::<T>(&batch.tokens);
    let recon = g.softmax_ce_weighted(logits, &targets, &weights, norm)?;

    let mut kls = Vec::with_capacity(post.len());
    for (slot, p) in post.iter().enumerate() {
        let rows = if cfg.mode.has_mixture_prior() {
            let means = model.prior_means(g, slot)?;
            kl_mixture_rows(g, p, means, cfg.prior_variance, &batch.arousal)?
        } else {
            kl_standard_rows(g, p)?
        };
        kls.push(g.mean(rows));
    }

    let mut terms = vec![recon];
    let kl_sum = if kls.len() == 1 { kls[0] } else { g.add(kls[0], kls[1])? };
    terms.push(g.scale(kl_sum, T::of(beta)));

    let mut regs = [None, None];
    let mut discs = [None, None];
    if cfg.mode != ModelMode::AblationSingleLatent {
        for feature in Feature::ALL {
            let p = post[model.slot_of(feature)];
            if cfg.latent_reg {
                let r = latent_reg_loss(g, p.z_d, &batch.targets(feature))?;
                regs[feature.index()] = Some(r);
                terms.push(r);
            }
            let labels = batch.labels(feature);
            let logits = model.discriminate(g, p.z, feature, labels)?;
            let targets: Vec<usize> = (0..SEGMENT_STEPS).flat_map(|t| labels.iter().map(move |l| l[t])).collect();
            let ones = vec![T::one(); targets.len()];
            let d = g.softmax_ce_weighted(logits, &targets, &ones, norm)?;
            discs[feature.index()] = Some(d);
            terms.push(d);
        }
    }

    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }

    let val = |g: &Graph<T>, v: Option<Var>| v.map_or(0.0, |v| g.scalar(v).f64());
    let breakdown = LossBreakdown {
        step,
        beta,
        reconstruction: g.scalar(recon).f64(),
        kl_rhythm: g.scalar(kls[0]).f64(),
        kl_note: kls.get(1).map_or(0.0, |&v| g.scalar(v).f64()),
        reg_rhythm: val(g, regs[0]),
        reg_note: val(g, regs[1]),
        disc_rhythm: val(g, discs[0]),
        disc_note: val(g, discs[1]),
        total: g.scalar(total).f64(),
    };
    Ok((total, breakdown))
}
