//! Minimal differentiable substrate: dense tensors, a reverse-mode tape with
//! the handful of primitives the model needs, GRU cells, Adam, seeded
//! random streams, and finite-difference gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod init;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, GradSample};
pub use graph::{Grads, Graph, Var};
pub use gru::{gru_step, BoundGru, GruCell};
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Reparameterized draw `mu + exp(log_sigma) * noise`.
pub fn gaussian_sample<T: Scalar>(g: &mut Graph<T>, mu: Var, log_sigma: Var, noise: &Tensor<T>) -> Result<Var> {
    let shape = g.value(mu).dims2();
    if g.value(log_sigma).dims2() != shape || noise.dims2() != shape {
        return Err(Error::ShapeError(format!(
            "gaussian_sample mu {:?}, log_sigma {:?}, noise {:?}",
            shape,
            g.value(log_sigma).dims2(),
            noise.dims2()
        )));
    }
    let sigma = g.exp(log_sigma);
    let eps = g.constant(noise.clone());
    let scaled = g.mul(sigma, eps)?;
    g.add(mu, scaled)
}

/// Closed-form KL between diagonal Gaussians with a constant prior variance,
/// summed over dimensions and averaged over the batch.
pub fn kl_diag_gaussians<T: Scalar>(g: &mut Graph<T>, mu_q: Var, log_sigma_q: Var, mu_p: Var, var_p: T) -> Result<Var> {
    let rows = g.kl_diag_rows(mu_q, log_sigma_q, mu_p, var_p)?;
    Ok(g.mean(rows))
}
