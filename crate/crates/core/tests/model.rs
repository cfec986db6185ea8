use std::sync::OnceLock;

use fadernets::codec::SEGMENT_STEPS;
use fadernets::corpus::{synth_corpus, SynthParams};
use fadernets::diff::{Graph, Tensor};
use fadernets::eval::{classify_arousal, cluster_accuracy};
use fadernets::model::checkpoint::{self, from_bytes, to_bytes};
use fadernets::model::{decoder_targets, encode_records, infer_cluster_tensor, total_loss, train, Batch, Trained};
use fadernets::{CorpusRecord, Error, FaderNet, Feature, ModelConfig, ModelMode};

fn corpus() -> &'static Vec<CorpusRecord> {
    static C: OnceLock<Vec<CorpusRecord>> = OnceLock::new();
    C.get_or_init(|| synth_corpus(SynthParams::new(400, 3)).unwrap())
}

fn short(mode: ModelMode, steps: u64) -> ModelConfig {
    ModelConfig {
        train_steps: steps,
        ..ModelConfig::desk().with_mode(mode)
    }
}

/// Desk model after 200 steps, shared by the smoke tests.
fn smoke() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| train(&short(ModelMode::GmVae, 200), corpus(), 17).unwrap())
}

fn batch(n: usize) -> Batch {
    Batch::from_records(corpus().iter().take(n))
}

#[test]
fn encode_without_noise_returns_means() {
    let model = FaderNet::<f64>::new(ModelConfig::desk(), 2).unwrap();
    let b = batch(3);
    let mut g = Graph::inference();
    let post = model.encode(&mut g, &b.tokens, None).unwrap();
    assert_eq!(post.len(), 2);
    for p in &post {
        assert_eq!(g.value(p.z), g.value(p.mu));
        assert_eq!(g.value(p.mu).dims2(), (3, 16));
    }
    let again = model.encode_means(&b.tokens).unwrap();
    assert_eq!(&again[0], g.value(post[0].mu));
}

#[test]
fn discriminator_shapes_and_untrained_loss() {
    let model = FaderNet::<f64>::new(ModelConfig::desk(), 2).unwrap();
    let b = batch(64);
    let mut g = Graph::inference();
    let post = model.encode(&mut g, &b.tokens, None).unwrap();
    let labels = b.labels(Feature::Rhythm);
    let logits = model.discriminate(&mut g, post[0].z, Feature::Rhythm, labels).unwrap();
    assert_eq!(g.value(logits).dims2(), (SEGMENT_STEPS * 64, 3));
    let targets: Vec<usize> = (0..SEGMENT_STEPS).flat_map(|t| labels.iter().map(move |l| l[t])).collect();
    let ce = g.softmax_ce(logits, &targets).unwrap();
    let ce = g.scalar(ce);
    assert!((ce - 3f64.ln()).abs() < 0.25, "untrained rhythm CE {ce}");

    let single = FaderNet::<f64>::new(ModelConfig::desk().with_mode(ModelMode::AblationSingleLatent), 2).unwrap();
    let mut g = Graph::inference();
    let post = single.encode(&mut g, &b.tokens, None).unwrap();
    assert!(matches!(
        single.discriminate(&mut g, post[0].z, Feature::Rhythm, labels),
        Err(Error::UnsupportedInMode(_))
    ));
}

#[test]
fn teacher_logits_shape_and_greedy_determinism() {
    let model = FaderNet::<f32>::new(ModelConfig::desk(), 2).unwrap();
    let b = batch(4);
    let longest = b.tokens.iter().map(Vec::len).max().unwrap();
    let mut g = Graph::inference();
    let post = model.encode(&mut g, &b.tokens, None).unwrap();
    let zs: Vec<_> = post.iter().map(|p| p.z).collect();
    let logits = model.decode_teacher(&mut g, &zs, &b.keys, &b.tokens).unwrap();
    assert_eq!(g.value(logits).dims2(), (longest * 4, 274));

    let z = model.encode_means(&b.tokens).unwrap();
    let first = model.greedy_decode(&z, &b.keys).unwrap();
    assert_eq!(first, model.greedy_decode(&z, &b.keys).unwrap());
    for seq in &first {
        assert!(seq.len() <= 100);
        assert!(seq.ids().iter().all(|&id| id >= 2));
    }
}

#[test]
fn breakdown_composition_and_beta_gate() {
    let model = FaderNet::<f64>::new(ModelConfig::desk(), 5).unwrap();
    let b = batch(8);
    let run = |m: &FaderNet<f64>, step| {
        let mut g = Graph::inference();
        total_loss(m, &mut g, &b, None, step).unwrap().1
    };
    let l = run(&model, 1500);
    assert!((l.component_sum() - l.total).abs() < 1e-9 * l.total.abs());
    assert!(l.kl_rhythm > 0.0 && l.kl_note > 0.0 && l.reg_rhythm > 0.0 && l.disc_note > 0.0);

    // Moving the mixture means changes only the KL terms, which beta gates.
    let mut moved = model.clone();
    let id = moved.store().find("prior.rhythm.means").unwrap();
    moved
        .store_mut()
        .get_mut(id)
        .value
        .data_mut()
        .iter_mut()
        .for_each(|v| *v += 0.7);
    let (a, c) = (run(&model, 0), run(&moved, 0));
    assert_eq!(a.beta, 0.0);
    assert_ne!(a.kl_rhythm, c.kl_rhythm);
    assert_eq!(a.total, c.total);
    assert_ne!(run(&model, 1500).total, run(&moved, 1500).total);
}

#[test]
fn single_latent_contract() {
    let model = FaderNet::<f64>::new(ModelConfig::desk().with_mode(ModelMode::AblationSingleLatent), 5).unwrap();
    let mut g = Graph::inference();
    let l = total_loss(&model, &mut g, &batch(8), None, 1500).unwrap().1;
    assert_eq!(model.latent_count(), 1);
    assert!(l.kl_rhythm > 0.0);
    assert_eq!([l.kl_note, l.reg_rhythm, l.reg_note, l.disc_rhythm, l.disc_note], [0.0; 5]);
    assert!((l.component_sum() - l.total).abs() < 1e-9 * l.total.abs());
    assert!(model.store().iter().all(|p| !p.name.starts_with("disc.")));
}

#[test]
fn mixture_means_follow_the_mode() {
    let vanilla = FaderNet::<f64>::new(ModelConfig::desk().with_mode(ModelMode::VanillaVae), 5).unwrap();
    assert!(vanilla.store().iter().all(|p| !p.name.starts_with("prior.")));
    assert!(matches!(vanilla.prior_means_tensor(0), Err(Error::UnsupportedInMode(_))));

    let gm = FaderNet::<f64>::new(ModelConfig::desk(), 5).unwrap();
    let b = batch(8);
    let mut g = Graph::new();
    let (loss, _) = total_loss(&gm, &mut g, &b, None, 1500).unwrap();
    let grads = g.backward(loss);
    let mut store = gm.store().clone();
    store.zero_grad();
    g.accumulate(&grads, &mut store);
    for name in ["prior.rhythm.means", "prior.note.means"] {
        let p = store.get(store.find(name).unwrap());
        assert!(p.grad.data().iter().any(|&v| v != 0.0), "{name} has no gradient");
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let config = short(ModelMode::GmVae, 15);
    let a = train(&config, corpus(), 9).unwrap();
    let b = train(&config, corpus(), 9).unwrap();
    let bits = |t: &Trained| t.log.totals().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(to_bytes(&a.model).unwrap(), to_bytes(&b.model).unwrap());
    let c = train(&config, corpus(), 10).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn smoke_run_reduces_loss() {
    let t = smoke();
    assert_eq!(t.log.losses.len(), 200);
    assert!(t.log.moving_average(199, 10) < t.log.moving_average(9, 10));
}

#[test]
fn smoke_run_learns_above_chance() {
    let model = smoke().model.cast::<f64>();
    let held: Vec<&CorpusRecord> = corpus().iter().skip(300).collect();
    let b = Batch::from_records(held.iter().copied());
    let mut g = Graph::inference();
    let post = model.encode(&mut g, &b.tokens, None).unwrap();
    assert_ne!(g.value(post[0].mu).row(0), g.value(post[0].mu).row(1));

    let labels = b.labels(Feature::Rhythm);
    let logits = model.discriminate(&mut g, post[0].z, Feature::Rhythm, labels).unwrap();
    let predicted = argmax_rows(g.value(logits));
    let targets: Vec<usize> = (0..SEGMENT_STEPS).flat_map(|t| labels.iter().map(move |l| l[t])).collect();
    let acc = accuracy(&predicted, &targets);
    assert!(acc > 1.0 / 3.0, "rhythm step accuracy {acc}");

    let zs: Vec<_> = post.iter().map(|p| p.z).collect();
    let logits = model.decode_teacher(&mut g, &zs, &b.keys, &b.tokens).unwrap();
    let (targets, weights) = decoder_targets::<f64>(&b.tokens);
    let predicted = argmax_rows(g.value(logits));
    let real: Vec<usize> = (0..targets.len()).filter(|&i| weights[i] > 0.0).collect();
    let acc = real.iter().filter(|&&i| predicted[i] == targets[i]).count() as f64 / real.len() as f64;
    assert!(acc > 20.0 / 274.0, "token accuracy {acc}");
}

fn argmax_rows(t: &Tensor<f64>) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
        })
        .collect()
}

fn accuracy(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

#[test]
fn unlabelled_corpus_trains() {
    let mut records = corpus().clone();
    for r in &mut records {
        r.arousal_raw = None;
        r.arousal_class = None;
    }
    let t = train(&short(ModelMode::GmVae, 10), &records, 1).unwrap();
    assert!(t.log.totals().iter().all(|v| v.is_finite()));
    assert_eq!(t.model.train_meta.unwrap().labelled, 0);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let model = &smoke().model;
    let bytes = to_bytes(model).unwrap();
    let (loaded, manifest) = from_bytes(&bytes).unwrap();
    assert_eq!(manifest.id, checkpoint::checkpoint_id(model).unwrap());
    assert_eq!(to_bytes(&loaded).unwrap(), bytes);
    for (a, b) in model.store().iter().zip(loaded.store().iter()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    assert_eq!(loaded.fader_ranges, model.fader_ranges);
    assert_eq!(loaded.config(), model.config());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(model, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);

    let mut corrupt = bytes.clone();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 1;
    assert!(matches!(from_bytes(&corrupt), Err(Error::MalformedCheckpoint(_))));
    assert!(matches!(
        from_bytes(b"not a checkpoint at all"),
        Err(Error::MalformedCheckpoint(_))
    ));
}

#[test]
fn arousal_classification_matches_posterior_product() {
    let model = &smoke().model;
    let held = &corpus()[300..];
    let z = encode_records(model, held).unwrap();
    let q: Vec<_> = (0..2)
        .map(|s| infer_cluster_tensor(&z[s], model.prior_means_tensor(s).unwrap(), model.config().prior_variance).unwrap())
        .collect();
    let expected: Vec<usize> = (0..held.len())
        .map(|i| {
            let p = |c| q[0].get(i, c) as f64 * q[1].get(i, c) as f64;
            usize::from(p(1) > p(0))
        })
        .collect();
    assert_eq!(classify_arousal(model, held).unwrap(), expected);
    let correct = held
        .iter()
        .zip(&expected)
        .filter(|(r, &c)| r.reference_class == Some(c))
        .count();
    assert_eq!(cluster_accuracy(model, held).unwrap(), correct as f64 / held.len() as f64);

    let vanilla = FaderNet::<f64>::new(ModelConfig::desk().with_mode(ModelMode::VanillaVae), 1).unwrap();
    assert!(matches!(classify_arousal(&vanilla, held), Err(Error::UnsupportedInMode(_))));
}
