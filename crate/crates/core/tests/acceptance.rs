//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! when a criterion fails that is not listed in `KNOWN_FAILURES`.
//!
//! Trains three desk-scale models on the 2000-segment synthetic corpus, which
//! takes roughly 25 minutes on one core.

#[path = "support/density_oracle.rs"]
mod density_oracle;
#[path = "support/grad_fixtures.rs"]
mod grad_fixtures;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use density_oracle::{brute_force_densities, random_segment};
use fadernets::codec::SEGMENT_STEPS;
use fadernets::corpus::{split, synth_corpus, SynthParams};
use fadernets::diff::rng::stream;
use fadernets::eval::{
    cluster_accuracy, consistency_score, evaluate, linearity_score, restrictiveness_score, EvalOptions, IdentityStub,
};
use fadernets::model::checkpoint::to_bytes;
use fadernets::model::{train, Trained};
use fadernets::transfer::reconstruct;
use fadernets::{
    decode_tokens, encode_tokens, transfer, CorpusRecord, Densities, Feature, ModelConfig, ModelMode, NoteEvent, Segment,
};
use grad_fixtures::{primitive_reports, total_loss_report, TOLERANCE};

const GRADIENT_BUDGET: Duration = Duration::from_secs(120);
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const TRAIN_BUDGET: Duration = Duration::from_secs(15 * 60);
const ORACLE_SEGMENTS: usize = 1000;
const METRIC_TOLERANCE: f64 = 1e-9;

const CORPUS_SIZE: usize = 2000;
const SEED: u64 = 7;
const EVAL: EvalOptions = EvalOptions {
    steps: 8,
    samples: 100,
    seed: SEED,
};
const MIN_LINEARITY: f64 = 0.6;
const MIN_LINEARITY_MARGIN: f64 = 0.2;
const MIN_CLUSTER_ACCURACY: f64 = 0.9;
const MIN_TRANSFER_SEGMENTS: usize = 50;
const MIN_TRANSFER_SHARE: f64 = 0.8;
const DETERMINISM_STEPS: u64 = 200;

/// Criteria expected to fail with the current model; see the project notes.
const KNOWN_FAILURES: &[&str] = &["semi-supervised clustering"];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let primitives = primitive_reports();
    let worst_primitive = primitives
        .iter()
        .max_by(|a, b| a.1.max_relative_error.total_cmp(&b.1.max_relative_error))
        .unwrap();
    let primitives_ok = primitives
        .iter()
        .all(|(_, r)| r.checked > 0 && r.max_relative_error <= TOLERANCE);
    let (gm, _) = total_loss_report(ModelMode::GmVae);
    let (single, _) = total_loss_report(ModelMode::AblationSingleLatent);
    let (vanilla, _) = total_loss_report(ModelMode::VanillaVae);
    let elapsed = start.elapsed();
    outcome(
        "gradient suite",
        primitives_ok && gm.max_relative_error <= TOLERANCE && elapsed < GRADIENT_BUDGET,
        format!(
            "{} primitives, worst {} {:.1e}; total_loss gm_vae {:.1e} over {} coords \
             (ablation_single_latent {:.1e}, vanilla_vae {:.1e}); {:.1}s",
            primitives.len(),
            worst_primitive.0,
            worst_primitive.1.max_relative_error,
            gm.max_relative_error,
            gm.checked,
            single.max_relative_error,
            vanilla.max_relative_error,
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(SEED, "acceptance.segments");
    let (mut densities, mut round_trips) = (0, 0);
    for _ in 0..ORACLE_SEGMENTS {
        let s = random_segment(&mut rng);
        let d = Densities::of(&s);
        if (d.rhythm_density, d.note_density) == brute_force_densities(&s) {
            densities += 1;
        }
        if encode_tokens(&s).is_ok_and(|t| t.total_shift() == SEGMENT_STEPS && decode_tokens(&t) == s) {
            round_trips += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        "oracle equivalence",
        densities == ORACLE_SEGMENTS && round_trips == ORACLE_SEGMENTS && elapsed < ORACLE_BUDGET,
        format!(
            "densities {densities}/{ORACLE_SEGMENTS} exact, codec round-trips {round_trips}/{ORACLE_SEGMENTS}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

/// Segments sharing one rhythm and one polyphony profile at different pitches.
fn same_density_records(n: usize) -> Vec<CorpusRecord> {
    (0..n)
        .map(|i| {
            let p = 48 + (i % 30) as u8;
            let seg = Segment::from_notes([
                NoteEvent::new(p, 0, 4),
                NoteEvent::new(p + 4, 4, 8),
                NoteEvent::new(p + 7, 4, 2),
            ])
            .unwrap();
            CorpusRecord::from_segment(seg, None).unwrap()
        })
        .collect()
}

fn metric_correctness() -> Outcome {
    let near = |a: f64, b: f64| (a - b).abs() <= METRIC_TOLERANCE;
    let checks = [
        (
            "consistency flat",
            near(consistency_score(&[vec![0.3; 4], vec![0.3; 4]]).unwrap(), 1.0),
        ),
        (
            "consistency 0/1 columns",
            near(consistency_score(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(), 0.5),
        ),
        (
            "consistency 3x2",
            near(
                consistency_score(&[vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 1.0]]).unwrap(),
                1.0 - (population_std(&[0.0, 1.0, 2.0]) + population_std(&[1.0; 3])) / 2.0,
            ),
        ),
        (
            "restrictiveness flat rows",
            near(restrictiveness_score(&[vec![0.2; 5], vec![0.9; 5]]).unwrap(), 1.0),
        ),
        (
            "restrictiveness alternating row",
            near(
                restrictiveness_score(&[vec![0.0, 1.0, 0.0, 1.0], vec![0.4; 4]]).unwrap(),
                0.75,
            ),
        ),
        (
            "restrictiveness 2x4",
            near(
                restrictiveness_score(&[vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 0.0, 0.0, 4.0]]).unwrap(),
                1.0 - (0.5 + 3f64.sqrt()) / 2.0,
            ),
        ),
        (
            "linearity exact line",
            near(
                linearity_score(&(0..6).map(|i| (i as f64, 0.5 - 2.0 * i as f64)).collect::<Vec<_>>()).unwrap(),
                1.0,
            ),
        ),
        (
            "linearity constant targets",
            linearity_score(&[(0.0, 2.0), (1.0, 2.0), (5.0, 2.0)]).unwrap() == 0.0,
        ),
        (
            "linearity 4-point OLS",
            near(
                linearity_score(&[(0.0, 1.0), (1.0, 3.0), (2.0, 2.0), (3.0, 5.0)]).unwrap(),
                121.0 / 175.0,
            ),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let stub = evaluate(&IdentityStub, &same_density_records(60), EvalOptions { samples: 40, ..EVAL }).unwrap();
    let stub_ok = stub.features.iter().all(|s| s.consistency == 1.0 && s.restrictiveness == 1.0);
    outcome(
        "metric correctness",
        failed.is_empty() && stub_ok,
        format!(
            "{}/{} worked examples within {METRIC_TOLERANCE:e}{}; identity stub {}",
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(" (failed: {})", failed.join(", "))
            },
            stub.features
                .iter()
                .map(|s| format!("{} c={} r={}", s.feature, s.consistency, s.restrictiveness))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

struct Desk {
    model: Trained,
    elapsed: Duration,
}

fn train_desk(mode: ModelMode, latent_reg: bool, train_set: &[CorpusRecord]) -> Desk {
    let mut config = ModelConfig::desk().with_mode(mode);
    config.latent_reg = latent_reg;
    let start = Instant::now();
    let model = train(&config, train_set, SEED).unwrap();
    Desk {
        model,
        elapsed: start.elapsed(),
    }
}

fn regularization_efficacy(reg: &Desk, no_reg: &Desk, test: &[CorpusRecord]) -> Outcome {
    let with = evaluate(&reg.model.model, test, EVAL).unwrap();
    let without = evaluate(&no_reg.model.model, test, EVAL).unwrap();
    let mut pass = reg.elapsed < TRAIN_BUDGET && no_reg.elapsed < TRAIN_BUDGET;
    let mut parts = Vec::new();
    for f in Feature::ALL {
        let (a, b) = (with.scores(f).unwrap().linearity, without.scores(f).unwrap().linearity);
        pass &= a >= MIN_LINEARITY && a - b >= MIN_LINEARITY_MARGIN;
        parts.push(format!("{f} {a:.3} vs {b:.3} without L_reg"));
    }
    outcome(
        "regularization efficacy",
        pass,
        format!(
            "{}; trained in {:.0}s and {:.0}s",
            parts.join(", "),
            reg.elapsed.as_secs_f64(),
            no_reg.elapsed.as_secs_f64()
        ),
    )
}

fn semi_supervised_clustering(gm: &Desk, single: &Desk, test: &[CorpusRecord], labelled: usize) -> Outcome {
    let a = cluster_accuracy(&gm.model.model, test).unwrap();
    let b = cluster_accuracy(&single.model.model, test).unwrap();
    outcome(
        "semi-supervised clustering",
        a >= MIN_CLUSTER_ACCURACY && b < a,
        format!(
            "gm_vae {a:.3}, ablation_single_latent {b:.3} on {} test segments ({labelled} labelled training segments)",
            test.len()
        ),
    )
}

fn transfer_direction(gm: &Desk, test: &[CorpusRecord]) -> Outcome {
    let model = &gm.model.model;
    let low: Vec<&CorpusRecord> = test.iter().filter(|r| r.reference_class == Some(0)).collect();
    let (mut moved, mut identity) = (0, 0);
    for r in &low {
        let plain = reconstruct(model, &r.segment).unwrap();
        let base = Densities::of(&decode_tokens(&plain));
        let shifted = transfer(model, &r.segment, 1, 1.0).unwrap();
        let after = shifted.densities_after;
        if after.rhythm_density > base.rhythm_density && after.note_density < base.note_density {
            moved += 1;
        }
        if transfer(model, &r.segment, 1, 0.0).unwrap().tokens_out == plain.ids() {
            identity += 1;
        }
    }
    let share = moved as f64 / low.len() as f64;
    outcome(
        "transfer direction",
        low.len() >= MIN_TRANSFER_SEGMENTS && share >= MIN_TRANSFER_SHARE && identity == low.len(),
        format!(
            "{moved}/{} class-0 segments gain rhythm and lose note density ({:.1}%); strength 0 identical for {identity}/{}",
            low.len(),
            100.0 * share,
            low.len()
        ),
    )
}

fn determinism(train_set: &[CorpusRecord], test: &[CorpusRecord]) -> Outcome {
    let config = ModelConfig {
        train_steps: DETERMINISM_STEPS,
        ..ModelConfig::desk()
    };
    let a = train(&config, train_set, SEED).unwrap();
    let b = train(&config, train_set, SEED).unwrap();
    let bits = |t: &Trained| t.log.totals().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let curves = bits(&a) == bits(&b);
    let checkpoints = to_bytes(&a.model).unwrap() == to_bytes(&b.model).unwrap();
    let report = |t: &Trained| serde_json::to_string(&evaluate(&t.model, test, EVAL).unwrap()).unwrap();
    let reports = report(&a) == report(&b);
    outcome(
        "determinism",
        curves && checkpoints && reports,
        format!(
            "{DETERMINISM_STEPS}-step runs: loss curves {}, checkpoints {}, eval reports {}",
            same(curves),
            same(checkpoints),
            same(reports)
        ),
    )
}

fn same(equal: bool) -> &'static str {
    if equal {
        "identical"
    } else {
        "differ"
    }
}

fn main() -> ExitCode {
    // libtest arguments such as `--list` or a name filter mean a partial run.
    if std::env::args().skip(1).any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }

    let mut outcomes = vec![gradient_suite(), oracle_equivalence(), metric_correctness()];

    let records = synth_corpus(SynthParams::new(CORPUS_SIZE, SEED)).unwrap();
    let split = split(&records, SEED).unwrap();
    let labelled = split.train.iter().filter(|r| r.arousal_class.is_some()).count();
    let gm = train_desk(ModelMode::GmVae, true, &split.train);
    let no_reg = train_desk(ModelMode::GmVae, false, &split.train);
    let single = train_desk(ModelMode::AblationSingleLatent, true, &split.train);

    outcomes.push(regularization_efficacy(&gm, &no_reg, &split.test));
    outcomes.push(semi_supervised_clustering(&gm, &single, &split.test, labelled));
    outcomes.push(transfer_direction(&gm, &split.test));
    outcomes.push(determinism(&split.train, &split.test));

    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", outcomes.len());
    let unexpected: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| !o.pass && !KNOWN_FAILURES.contains(&o.name))
        .collect();
    for o in &unexpected {
        eprintln!("unexpected failure: {}: {}", o.name, o.detail);
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
