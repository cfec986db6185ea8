//! Gaussian-mixture prior terms: cluster posteriors and the KL divergence
//! with per-record supervised/unsupervised branches.

use crate::diff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

use super::net::Posterior;

/// Per-component Gaussian log-density of each row of `z` up to a constant
/// shared by all components: `-|z - mu_k|^2 / (2 var)`. Returns `B x K`.
fn component_scores<T: Scalar>(g: &mut Graph<T>, z: Var, means: Var, variance: f64) -> Result<Var> {
    let (b, d) = g.value(z).dims2();
    let (k, md) = g.value(means).dims2();
    if md != d {
        return Err(Error::ShapeError(format!("z has {d} dims, means have {md}")));
    }
    let mut cols = Vec::with_capacity(k);
    for c in 0..k {
        let mu = g.gather_rows(means, &vec![c; b])?;
        let diff = g.sub(z, mu)?;
        let sq = g.square(diff);
        let dist = g.sum_cols(sq);
        cols.push(g.scale(dist, T::of(-0.5 / variance)));
    }
    g.concat_cols(&cols)
}

/// `log q(c | z)` for a uniform categorical prior, `B x K`.
pub fn cluster_log_posterior<T: Scalar>(g: &mut Graph<T>, z: Var, means: Var, variance: f64) -> Result<Var> {
    let scores = component_scores(g, z, means, variance)?;
    Ok(g.log_softmax(scores))
}

/// `q(c | z)`: softmax over components of the Gaussian log-densities.
pub fn infer_cluster<T: Scalar>(g: &mut Graph<T>, z: Var, means: Var, variance: f64) -> Result<Var> {
    let lq = cluster_log_posterior(g, z, means, variance)?;
    Ok(g.exp(lq))
}

/// Cluster posteriors for plain tensors (inference only).
pub fn infer_cluster_tensor<T: Scalar>(z: &Tensor<T>, means: &Tensor<T>, variance: f64) -> Result<Tensor<T>> {
    let mut g = Graph::inference();
    let (zv, mv) = (g.constant(z.clone()), g.constant(means.clone()));
    let q = infer_cluster(&mut g, zv, mv, variance)?;
    Ok(g.value(q).clone())
}

/// Per-record KL term, `B x 1`.
///
/// Records with a label use `KL(q(z|X) || N(mu_c, var))`. Unlabelled
/// records use `sum_k q(c_k|z) KL(q(z|X) || N(mu_k, var)) + KL(q(c|z) || U)`
/// with `q(c|z)` evaluated at the sampled `z`.
pub fn kl_mixture_rows<T: Scalar>(
    g: &mut Graph<T>,
    post: &Posterior,
    means: Var,
    variance: f64,
    labels: &[Option<usize>],
) -> Result<Var> {
    let b = labels.len();
    let k = g.value(means).rows();
    if g.value(post.mu).rows() != b {
        return Err(Error::ShapeError(format!(
            "{} labels for a batch of {}",
            b,
            g.value(post.mu).rows()
        )));
    }
    if let Some(bad) = labels.iter().flatten().find(|&&c| c >= k) {
        return Err(Error::IndexError { index: *bad, bound: k });
    }
    let var = T::of(variance);
    let any_sup = labels.iter().any(Option::is_some);
    let any_unsup = labels.iter().any(Option::is_none);

    let sup = if any_sup {
        let idx: Vec<usize> = labels.iter().map(|c| c.unwrap_or(0)).collect();
        let mu_c = g.gather_rows(means, &idx)?;
        Some(g.kl_diag_rows(post.mu, post.log_sigma, mu_c, var)?)
    } else {
        None
    };

    let unsup = if any_unsup {
        let mut kls = Vec::with_capacity(k);
        for c in 0..k {
            let mu_c = g.gather_rows(means, &vec![c; b])?;
            kls.push(g.kl_diag_rows(post.mu, post.log_sigma, mu_c, var)?);
        }
        let kl_mat = g.concat_cols(&kls)?;
        let log_q = cluster_log_posterior(g, post.z, means, variance)?;
        let q = g.exp(log_q);
        // sum_k q_k (KL_k + log q_k + log K)
        let shifted = g.offset(log_q, T::of((k as f64).ln()));
        let inner = g.add(kl_mat, shifted)?;
        let weighted = g.mul(q, inner)?;
        Some(g.sum_cols(weighted))
    } else {
        None
    };

    match (sup, unsup) {
        (Some(s), None) => Ok(s),
        (None, Some(u)) => Ok(u),
        (Some(s), Some(u)) => {
            let mask: Vec<T> = labels
                .iter()
                .map(|c| if c.is_none() { T::one() } else { T::zero() })
                .collect();
            g.masked_update(s, u, &mask)
        }
        (None, None) => Err(Error::BatchTooSmall(0)),
    }
}

/// Per-record KL against a standard normal, `B x 1`.
pub fn kl_standard_rows<T: Scalar>(g: &mut Graph<T>, post: &Posterior) -> Result<Var> {
    let shape = g.value(post.mu).dims2();
    let zero = g.constant(Tensor::zeros(&[shape.0, shape.1]));
    g.kl_diag_rows(post.mu, post.log_sigma, zero, T::one())
}
