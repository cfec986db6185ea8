//! Gradient-check fixtures shared by the gradient tests and the acceptance run.

use fadernets::corpus::{synth_corpus, SynthParams};
use fadernets::diff::rng::{standard_normals, stream};
use fadernets::diff::{
    gaussian_sample, grad_check, gru_step, GradCheckOptions, GradCheckReport, Graph, GruCell, ParamId, ParamStore, Tensor, Var,
};
use fadernets::model::{total_loss, Batch};
use fadernets::{FaderNet, ModelConfig, ModelMode, Result};
use rand::Rng;

pub const TOLERANCE: f64 = 1e-4;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, "test.params");
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Reduces `out` to a scalar with fixed, uneven weights so every output
/// entry carries a distinct upstream gradient.
fn reduce(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let (r, c) = g.value(out).dims2();
    let w = g.constant(random(r, c, 999));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn store(shapes: &[(usize, usize)]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        s.add(format!("p{i}"), random(r, c, i as u64 + 1));
    }
    s
}

type Primitive = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;
type Case = (&'static str, Vec<(usize, usize)>, Primitive);

fn case(f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static) -> Primitive {
    Box::new(f)
}

fn check(store: &ParamStore<f64>, f: &Primitive) -> GradCheckReport {
    let ids: Vec<ParamId> = (0..store.len()).map(ParamId).collect();
    let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
        let out = f(g, &vars)?;
        if g.value(out).len() == 1 {
            Ok(out)
        } else {
            reduce(g, out)
        }
    };
    let opts = GradCheckOptions {
        samples_per_param: 64,
        ..GradCheckOptions::default()
    };
    grad_check(loss, store, &opts).unwrap()
}

fn gru_report() -> GradCheckReport {
    let mut s = store(&[(3, 4), (3, 5)]);
    let cell = GruCell::new(&mut s, "cell", 4, 5, &mut stream(3, "test.gru"));
    for p in s.iter_mut().filter(|p| p.name.contains(".b_")) {
        p.value = random(1, 5, 77);
    }
    let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
        let (x, h) = (g.param(s, ParamId(0)), g.param(s, ParamId(1)));
        let out = gru_step(g, s, &cell, x, h)?;
        reduce(g, out)
    };
    grad_check(loss, &s, &GradCheckOptions::default()).unwrap()
}

/// Gradient-check report for every differentiable primitive, by name.
pub fn primitive_reports() -> Vec<(&'static str, GradCheckReport)> {
    let var = (-2.0f64).exp();
    let noise = random(3, 2, 55);
    let cases: Vec<Case> = vec![
        ("add", vec![(3, 4), (3, 4)], case(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![(3, 4), (3, 4)], case(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![(3, 4), (3, 4)], case(|g, v| g.mul(v[0], v[1]))),
        ("matmul", vec![(3, 4), (4, 2)], case(|g, v| g.matmul(v[0], v[1]))),
        ("add_row", vec![(3, 4), (1, 4)], case(|g, v| g.add_row(v[0], v[1]))),
        ("scale", vec![(3, 4)], case(|g, v| Ok(g.scale(v[0], 1.7)))),
        ("offset", vec![(3, 4)], case(|g, v| Ok(g.offset(v[0], 0.3)))),
        ("sigmoid", vec![(3, 4)], case(|g, v| Ok(g.sigmoid(v[0])))),
        ("tanh", vec![(3, 4)], case(|g, v| Ok(g.tanh(v[0])))),
        ("exp", vec![(3, 4)], case(|g, v| Ok(g.exp(v[0])))),
        ("square", vec![(3, 4)], case(|g, v| Ok(g.square(v[0])))),
        (
            "sum",
            vec![(3, 4)],
            case(|g, v| {
                let sq = g.square(v[0]);
                Ok(g.sum(sq))
            }),
        ),
        (
            "mean",
            vec![(3, 4)],
            case(|g, v| {
                let sq = g.square(v[0]);
                Ok(g.mean(sq))
            }),
        ),
        ("sum_cols", vec![(3, 4)], case(|g, v| Ok(g.sum_cols(v[0])))),
        (
            "concat_cols",
            vec![(3, 2), (3, 3)],
            case(|g, v| g.concat_cols(&[v[0], v[1], v[0]])),
        ),
        ("concat_rows", vec![(2, 3), (1, 3)], case(|g, v| g.concat_rows(&[v[0], v[1]]))),
        ("slice_cols", vec![(4, 5)], case(|g, v| g.slice_cols(v[0], 1, 3))),
        ("slice_rows", vec![(4, 5)], case(|g, v| g.slice_rows(v[0], 2, 2))),
        (
            "gather_rows",
            vec![(4, 5)],
            case(|g, v| g.gather_rows(v[0], &[0, 2, 2, 3, 0])),
        ),
        (
            "masked_update",
            vec![(3, 2), (3, 2)],
            case(|g, v| g.masked_update(v[0], v[1], &[1.0, 0.0, 1.0])),
        ),
        (
            "gru_combine",
            vec![(2, 6), (2, 6), (2, 2)],
            case(|g, v| g.gru_combine(v[0], v[1], v[2])),
        ),
        ("log_softmax", vec![(3, 4)], case(|g, v| Ok(g.log_softmax(v[0])))),
        ("softmax_ce", vec![(3, 4)], case(|g, v| g.softmax_ce(v[0], &[0, 3, 1]))),
        (
            "softmax_ce_weighted",
            vec![(3, 4)],
            case(|g, v| g.softmax_ce_weighted(v[0], &[2, 3, 1], &[0.5, 0.0, 2.0], 2.0)),
        ),
        (
            "kl_diag_rows",
            vec![(3, 2), (3, 2), (3, 2)],
            case(move |g, v| g.kl_diag_rows(v[0], v[1], v[2], var)),
        ),
        (
            "latent_reg",
            vec![(5, 1)],
            case(|g, v| g.latent_reg(v[0], &[0.1, 0.4, 0.4, 0.2, 0.9])),
        ),
        (
            "gaussian_sample",
            vec![(3, 2), (3, 2)],
            case(move |g, v| gaussian_sample(g, v[0], v[1], &noise)),
        ),
    ];
    let mut reports: Vec<_> = cases
        .iter()
        .map(|(name, shapes, f)| (*name, check(&store(shapes), f)))
        .collect();
    reports.push(("gru_step", gru_report()));
    reports
}

/// The loss sits in the hundreds, so its f64 rounding is near 1e-13 and a
/// 1e-5 step leaves about 5e-9 of noise on every numeric gradient.
pub fn total_loss_options() -> GradCheckOptions {
    GradCheckOptions {
        epsilon: 1e-4,
        samples_per_param: 6,
        ..GradCheckOptions::default()
    }
}

/// Total loss at desk dims on one labelled and one unlabelled segment with
/// fixed sampling noise, past the KL warm-up. Returns the report and the
/// loss value.
pub fn total_loss_report(mode: ModelMode) -> (GradCheckReport, f64) {
    let config = ModelConfig::desk().with_mode(mode);
    let model = FaderNet::<f64>::new(config.clone(), 21).unwrap();
    let records = synth_corpus(SynthParams::new(200, 4)).unwrap();
    let labelled = records.iter().find(|r| r.arousal_class.is_some()).unwrap();
    let unlabelled = records.iter().find(|r| r.arousal_class.is_none()).unwrap();
    let batch = Batch::from_records([labelled, unlabelled]);
    let mut rng = stream(8, "test.noise");
    let noise: Vec<Tensor<f64>> = (0..mode.latent_count())
        .map(|_| Tensor::matrix(2, config.z_dim, standard_normals(&mut rng, 2 * config.z_dim)).unwrap())
        .collect();
    let step = config.beta.start_steps + config.beta.ramp_steps;
    let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
        let mut m = model.clone();
        *m.store_mut() = s.clone();
        Ok(total_loss(&m, g, &batch, Some(&noise), step)?.0)
    };
    let mut g = Graph::inference();
    let value = loss(&mut g, model.store()).unwrap();
    let value = g.scalar(value);
    let report = grad_check(loss, model.store(), &total_loss_options()).unwrap();
    (report, value)
}
