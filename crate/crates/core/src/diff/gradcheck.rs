//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::rng::stream;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates sampled per parameter tensor (all of them if the tensor is smaller).
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            samples_per_param: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub samples: Vec<GradSample>,
}

/// One checked coordinate.
#[derive(Debug, Clone)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

/// Relative discrepancy `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Reverse-mode gradient of `loss_fn` for every parameter in `store`.
pub fn analytic_gradients<F>(loss_fn: &F, store: &ParamStore<f64>) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let grads = g.backward(loss);
    let mut scratch = store.clone();
    scratch.zero_grad();
    g.accumulate(&grads, &mut scratch);
    Ok(scratch.iter().map(|p| p.grad.clone()).collect())
}

fn eval<F>(loss_fn: &F, store: &ParamStore<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::inference();
    let loss = loss_fn(&mut g, store)?;
    Ok(g.scalar(loss))
}

/// Compares the supplied gradients against central differences on sampled coordinates.
pub fn numeric_check<F>(
    loss_fn: &F,
    store: &ParamStore<f64>,
    analytic: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut rng = stream(opts.seed, "gradcheck");
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        samples: Vec::new(),
    };
    for (pi, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let picks: Vec<usize> = if n <= opts.samples_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.samples_per_param).into_vec()
        };
        for idx in picks {
            let id = super::params::ParamId(pi);
            let orig = work.value(id).data()[idx];
            work.get_mut(id).value.data_mut()[idx] = orig + opts.epsilon;
            let up = eval(loss_fn, &work)?;
            work.get_mut(id).value.data_mut()[idx] = orig - opts.epsilon;
            let down = eval(loss_fn, &work)?;
            work.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * opts.epsilon);
            let err = relative_error(grad.data()[idx], numeric);
            let name = work.get(id).name.clone();
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), idx));
            }
            report.samples.push(GradSample {
                param: name,
                index: idx,
                analytic: grad.data()[idx],
                numeric,
            });
        }
    }
    Ok(report)
}

/// Reverse-mode vs central finite differences at 64-bit precision.
pub fn grad_check<F>(loss_fn: F, store: &ParamStore<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let analytic = analytic_gradients(&loss_fn, store)?;
    numeric_check(&loss_fn, store, &analytic, opts)
}
