use rand::Rng;

use super::graph::{Graph, Var};
use super::init::xavier_uniform;
use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gated recurrent unit with separate reset/update/candidate weights.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_r: ParamId,
    pub w_z: ParamId,
    pub w_n: ParamId,
    pub u_r: ParamId,
    pub u_z: ParamId,
    pub u_n: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_n: ParamId,
}

/// A cell whose weights have been placed on a graph, gate blocks fused.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    /// `input x 3H`
    pub w: Var,
    /// `H x 3H`
    pub u: Var,
    /// `1 x 3H`
    pub b: Var,
    pub hidden_size: usize,
}

impl GruCell {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let w = |name: &str, rows: usize, store: &mut ParamStore<T>, rng: &mut R| {
            store.add(format!("{prefix}.{name}"), xavier_uniform(rows, hidden_size, rng))
        };
        let w_r = w("w_r", input_size, store, rng);
        let w_z = w("w_z", input_size, store, rng);
        let w_n = w("w_n", input_size, store, rng);
        let u_r = w("u_r", hidden_size, store, rng);
        let u_z = w("u_z", hidden_size, store, rng);
        let u_n = w("u_n", hidden_size, store, rng);
        let mut b = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[1, hidden_size]));
        let b_r = b("b_r");
        let b_z = b("b_z");
        let b_n = b("b_n");
        Self {
            input_size,
            hidden_size,
            w_r,
            w_z,
            w_n,
            u_r,
            u_z,
            u_n,
            b_r,
            b_z,
            b_n,
        }
    }

    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>) -> Result<BoundGru> {
        let ids = [self.w_r, self.w_z, self.w_n];
        let ws: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
        let us: Vec<Var> = [self.u_r, self.u_z, self.u_n].iter().map(|&id| g.param(store, id)).collect();
        let bs: Vec<Var> = [self.b_r, self.b_z, self.b_n].iter().map(|&id| g.param(store, id)).collect();
        Ok(BoundGru {
            w: g.concat_cols(&ws)?,
            u: g.concat_cols(&us)?,
            b: g.concat_cols(&bs)?,
            hidden_size: self.hidden_size,
        })
    }
}

impl BoundGru {
    /// Input gate pre-activations `x W + b`.
    pub fn input_gates<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let xw = g.matmul(x, self.w)?;
        g.add_row(xw, self.b)
    }

    /// One step given precomputed input gates.
    pub fn step_from_gates<T: Scalar>(&self, g: &mut Graph<T>, gx: Var, h: Var) -> Result<Var> {
        let gh = g.matmul(h, self.u)?;
        g.gru_combine(gx, gh, h)
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, x: Var, h: Var) -> Result<Var> {
        let gx = self.input_gates(g, x)?;
        self.step_from_gates(g, gx, h)
    }
}

/// Single GRU step: `h' = (1 - u) * n + u * h`.
pub fn gru_step<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, cell: &GruCell, x: Var, h: Var) -> Result<Var> {
    let (xb, xi) = g.value(x).dims2();
    let (hb, hh) = g.value(h).dims2();
    if xi != cell.input_size || hh != cell.hidden_size || xb != hb {
        return Err(Error::ShapeError(format!(
            "gru_step x {xb}x{xi}, h {hb}x{hh} for cell {}->{}",
            cell.input_size, cell.hidden_size
        )));
    }
    cell.bind(g, store)?.step(g, x, h)
}
