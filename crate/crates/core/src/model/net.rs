use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, ModelMode};
use crate::codec::{Token, TokenSeq, MAX_TOKENS, PAD_ID, SEGMENT_STEPS, START_ID, VOCAB_SIZE};
use crate::diff::init::xavier_uniform;
use crate::diff::rng::stream;
use crate::diff::{gaussian_sample, Graph, GruCell, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::labels::{Feature, KeyVector, KEY_CLASSES};

#[derive(Debug, Clone)]
struct EncoderParams {
    gru: GruCell,
    mu_w: ParamId,
    mu_b: ParamId,
    ls_w: ParamId,
    ls_b: ParamId,
}

#[derive(Debug, Clone)]
struct DiscriminatorParams {
    feature: Feature,
    init_w: ParamId,
    init_b: ParamId,
    gru: GruCell,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone)]
struct DecoderParams {
    init_w: ParamId,
    init_b: ParamId,
    /// Conditioning projection added to the input gates at every step.
    cond_w: ParamId,
    /// Input-gate offset per elapsed step position `0..=16`.
    time_w: ParamId,
    gru: GruCell,
    out_w: ParamId,
    out_b: ParamId,
}

/// Training-set range of a latent's regularized dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaderRange {
    pub min: f64,
    pub max: f64,
}

impl FaderRange {
    /// Fader position in `[0, 1]` to latent value.
    pub fn to_latent(&self, fader: f64) -> f64 {
        self.min + fader * (self.max - self.min)
    }

    /// Latent value to fader position, clamped to `[0, 1]`.
    pub fn to_fader(&self, z: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0.0;
        }
        ((z - self.min) / span).clamp(0.0, 1.0)
    }
}

/// Where a trained model came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub steps: u64,
    pub records: usize,
    pub labelled: usize,
}

/// Graph handles for one latent's posterior.
#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub mu: Var,
    pub log_sigma: Var,
    /// Sampled latent, or `mu` when no noise is supplied.
    pub z: Var,
    /// Column `d` of `z`.
    pub z_d: Var,
}

#[derive(Debug, Clone)]
pub struct FaderNet<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    embed: ParamId,
    encoders: Vec<EncoderParams>,
    discriminators: Vec<DiscriminatorParams>,
    decoder: DecoderParams,
    prior_means: Vec<ParamId>,
    pub fader_ranges: Vec<FaderRange>,
    pub train_meta: Option<TrainMeta>,
}

fn linear<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (w, b) = (g.param(store, w), g.param(store, b));
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

fn check_tokens(tokens: &[Vec<usize>]) -> Result<usize> {
    let mut longest = 0;
    for seq in tokens {
        if seq.len() > MAX_TOKENS {
            return Err(Error::TokenOverflow(seq.len()));
        }
        if let Some(&bad) = seq.iter().find(|&&id| id >= VOCAB_SIZE) {
            return Err(Error::IndexError {
                index: bad,
                bound: VOCAB_SIZE,
            });
        }
        longest = longest.max(seq.len());
    }
    Ok(longest)
}

/// Row `t * B + b` holds `f(b, t)`.
fn step_major<V>(batch: usize, steps: usize, f: impl Fn(usize, usize) -> V) -> Vec<V> {
    (0..steps)
        .flat_map(|t| (0..batch).map(move |b| (b, t)))
        .map(|(b, t)| f(b, t))
        .collect()
}

/// Elapsed step position before each of the first `len` tokens of `seq`.
fn elapsed_steps(seq: &[usize], len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut cur = 0usize;
    for t in 0..len {
        out.push(cur.min(SEGMENT_STEPS));
        if let Some(Token::TimeShift(n)) = seq.get(t).and_then(|&id| Token::from_id(id)) {
            cur += n as usize;
        }
    }
    out
}

/// Decoder targets in step-major order with a unit weight on real positions.
pub fn decoder_targets<T: Scalar>(tokens: &[Vec<usize>]) -> (Vec<usize>, Vec<T>) {
    let l = tokens.iter().map(Vec::len).max().unwrap_or(0);
    let targets = step_major(tokens.len(), l, |b, t| tokens[b].get(t).copied().unwrap_or(PAD_ID));
    let weights = step_major(tokens.len(), l, |b, t| if t < tokens[b].len() { T::one() } else { T::zero() });
    (targets, weights)
}

impl<T: Scalar> FaderNet<T> {
    /// Fresh model with weights drawn from the `init` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "init");
        let mut store = ParamStore::new();
        let (h, z, e) = (config.hidden_dim, config.z_dim, config.embed_dim);
        let mode = config.mode;
        let n_latent = mode.latent_count();

        let embed = store.add("embed", xavier_uniform(VOCAB_SIZE, e, &mut rng));
        let slot_names: &[&str] = if n_latent == 1 { &["global"] } else { &["rhythm", "note"] };
        let mut encoders = Vec::new();
        for name in slot_names {
            let p = format!("enc.{name}");
            let gru = GruCell::new(&mut store, &format!("{p}.gru"), e, h, &mut rng);
            let mu_w = store.add(format!("{p}.mu_w"), xavier_uniform(h, z, &mut rng));
            let mu_b = store.add(format!("{p}.mu_b"), Tensor::zeros(&[1, z]));
            let ls_w = store.add(format!("{p}.ls_w"), xavier_uniform(h, z, &mut rng));
            let ls_b = store.add(format!("{p}.ls_b"), Tensor::zeros(&[1, z]));
            encoders.push(EncoderParams {
                gru,
                mu_w,
                mu_b,
                ls_w,
                ls_b,
            });
        }

        let mut discriminators = Vec::new();
        if mode != ModelMode::AblationSingleLatent {
            for feature in Feature::ALL {
                let p = format!("disc.{}", feature.name());
                let c = feature.classes();
                let init_w = store.add(format!("{p}.init_w"), xavier_uniform(z, h, &mut rng));
                let init_b = store.add(format!("{p}.init_b"), Tensor::zeros(&[1, h]));
                let gru = GruCell::new(&mut store, &format!("{p}.gru"), c, h, &mut rng);
                let out_w = store.add(format!("{p}.out_w"), xavier_uniform(h, c, &mut rng));
                let out_b = store.add(format!("{p}.out_b"), Tensor::zeros(&[1, c]));
                discriminators.push(DiscriminatorParams {
                    feature,
                    init_w,
                    init_b,
                    gru,
                    out_w,
                    out_b,
                });
            }
        }

        let cond = n_latent * z + KEY_CLASSES;
        let decoder = DecoderParams {
            init_w: store.add("dec.init_w", xavier_uniform(cond, h, &mut rng)),
            init_b: store.add("dec.init_b", Tensor::zeros(&[1, h])),
            cond_w: store.add("dec.cond_w", xavier_uniform(cond, 3 * h, &mut rng)),
            time_w: store.add("dec.time_w", xavier_uniform(SEGMENT_STEPS + 1, 3 * h, &mut rng)),
            gru: GruCell::new(&mut store, "dec.gru", e, h, &mut rng),
            out_w: store.add("dec.out_w", xavier_uniform(h, VOCAB_SIZE, &mut rng)),
            out_b: store.add("dec.out_b", Tensor::zeros(&[1, VOCAB_SIZE])),
        };

        let mut prior_means = Vec::new();
        if mode.has_mixture_prior() {
            for name in slot_names {
                prior_means.push(store.add(format!("prior.{name}.means"), xavier_uniform(config.clusters, z, &mut rng)));
            }
        }

        Ok(Self {
            config,
            store,
            embed,
            encoders,
            discriminators,
            decoder,
            prior_means,
            fader_ranges: Vec::new(),
            train_meta: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> ModelMode {
        self.config.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn latent_count(&self) -> usize {
        self.encoders.len()
    }

    /// Latent slot carrying `feature`'s fader. In single-latent mode both
    /// features map to the one latent.
    pub fn slot_of(&self, feature: Feature) -> usize {
        if self.latent_count() == 1 {
            0
        } else {
            feature.index()
        }
    }

    /// Same model at another precision.
    pub fn cast<U: Scalar>(&self) -> FaderNet<U> {
        FaderNet {
            config: self.config.clone(),
            store: self.store.cast(),
            embed: self.embed,
            encoders: self.encoders.clone(),
            discriminators: self.discriminators.clone(),
            decoder: self.decoder.clone(),
            prior_means: self.prior_means.clone(),
            fader_ranges: self.fader_ranges.clone(),
            train_meta: self.train_meta,
        }
    }

    /// Mixture means for a latent slot as a `K x z_dim` graph node.
    pub fn prior_means(&self, g: &mut Graph<T>, slot: usize) -> Result<Var> {
        let id = self
            .prior_means
            .get(slot)
            .ok_or_else(|| Error::UnsupportedInMode(format!("{} has no mixture prior", self.mode())))?;
        Ok(g.param(&self.store, *id))
    }

    pub fn prior_means_tensor(&self, slot: usize) -> Result<&Tensor<T>> {
        let id = self
            .prior_means
            .get(slot)
            .ok_or_else(|| Error::UnsupportedInMode(format!("{} has no mixture prior", self.mode())))?;
        Ok(self.store.value(*id))
    }

    /// Runs every encoder over the batch. With `noise` (one `B x z_dim`
    /// tensor per latent) `z` is a reparameterized sample, otherwise `z = mu`.
    pub fn encode(&self, g: &mut Graph<T>, tokens: &[Vec<usize>], noise: Option<&[Tensor<T>]>) -> Result<Vec<Posterior>> {
        let b = tokens.len();
        let l = check_tokens(tokens)?;
        if let Some(n) = noise {
            if n.len() != self.encoders.len() {
                return Err(Error::ShapeError(format!(
                    "{} noise tensors for {} latents",
                    n.len(),
                    self.encoders.len()
                )));
            }
        }
        let hd = self.config.hidden_dim;
        let emb = if l > 0 {
            let table = g.param(&self.store, self.embed);
            let ids = step_major(b, l, |bi, t| tokens[bi].get(t).copied().unwrap_or(PAD_ID));
            Some(g.gather_rows(table, &ids)?)
        } else {
            None
        };
        let masks: Vec<Option<Vec<T>>> = (0..l)
            .map(|t| {
                let m: Vec<T> = tokens
                    .iter()
                    .map(|s| if t < s.len() { T::one() } else { T::zero() })
                    .collect();
                (!m.iter().all(|&v| v == T::one())).then_some(m)
            })
            .collect();

        let mut out = Vec::with_capacity(self.encoders.len());
        for (slot, enc) in self.encoders.iter().enumerate() {
            let cell = enc.gru.bind(g, &self.store)?;
            let mut h = g.constant(Tensor::zeros(&[b, hd]));
            if let Some(emb) = emb {
                let gx = cell.input_gates(g, emb)?;
                for (t, mask) in masks.iter().enumerate() {
                    let gxt = g.slice_rows(gx, t * b, b)?;
                    let next = cell.step_from_gates(g, gxt, h)?;
                    h = match mask {
                        Some(m) => g.masked_update(h, next, m)?,
                        None => next,
                    };
                }
            }
            let mu = linear(g, &self.store, h, enc.mu_w, enc.mu_b)?;
            let log_sigma = linear(g, &self.store, h, enc.ls_w, enc.ls_b)?;
            let z = match noise {
                Some(n) => gaussian_sample(g, mu, log_sigma, &n[slot])?,
                None => mu,
            };
            let z_d = g.slice_cols(z, self.config.reg_dim, 1)?;
            out.push(Posterior { mu, log_sigma, z, z_d });
        }
        Ok(out)
    }

    /// Teacher-forced label decoder for `feature`, initialized from `z`.
    /// Returns `16B x C` logits; row `t * B + b` is step `t` of sample `b`.
    pub fn discriminate(&self, g: &mut Graph<T>, z: Var, feature: Feature, labels: &[[usize; SEGMENT_STEPS]]) -> Result<Var> {
        let disc = self
            .discriminators
            .iter()
            .find(|d| d.feature == feature)
            .ok_or_else(|| Error::UnsupportedInMode(format!("{} has no discriminators", self.mode())))?;
        let b = labels.len();
        if g.value(z).dims2() != (b, self.config.z_dim) {
            return Err(Error::ShapeError(format!(
                "discriminator z {:?} for {b} labels",
                g.value(z).dims2()
            )));
        }
        let c = feature.classes();
        let mut onehot = vec![T::zero(); SEGMENT_STEPS * b * c];
        for t in 1..SEGMENT_STEPS {
            for (bi, lab) in labels.iter().enumerate() {
                let prev = lab[t - 1];
                if prev >= c {
                    return Err(Error::IndexError { index: prev, bound: c });
                }
                onehot[(t * b + bi) * c + prev] = T::one();
            }
        }
        if let Some(bad) = labels.iter().map(|l| l[SEGMENT_STEPS - 1]).find(|&v| v >= c) {
            return Err(Error::IndexError { index: bad, bound: c });
        }
        let x = g.constant(Tensor::matrix(SEGMENT_STEPS * b, c, onehot)?);
        let cell = disc.gru.bind(g, &self.store)?;
        let gx = cell.input_gates(g, x)?;
        let pre = linear(g, &self.store, z, disc.init_w, disc.init_b)?;
        let mut h = g.tanh(pre);
        let mut hs = Vec::with_capacity(SEGMENT_STEPS);
        for t in 0..SEGMENT_STEPS {
            let gxt = g.slice_rows(gx, t * b, b)?;
            h = cell.step_from_gates(g, gxt, h)?;
            hs.push(h);
        }
        let all = g.concat_rows(&hs)?;
        linear(g, &self.store, all, disc.out_w, disc.out_b)
    }

    fn condition(&self, g: &mut Graph<T>, latents: &[Var], keys: &[KeyVector]) -> Result<Var> {
        if latents.len() != self.encoders.len() {
            return Err(Error::ShapeError(format!(
                "decoder needs {} latents, got {}",
                self.encoders.len(),
                latents.len()
            )));
        }
        let b = keys.len();
        for &z in latents {
            if g.value(z).dims2() != (b, self.config.z_dim) {
                return Err(Error::ShapeError(format!(
                    "latent {:?} for batch {b} x {}",
                    g.value(z).dims2(),
                    self.config.z_dim
                )));
            }
        }
        let key_rows: Vec<f64> = keys.iter().flat_map(|k| k.one_hot()).collect();
        let key = g.constant(Tensor::from_f64(&[b, KEY_CLASSES], &key_rows)?);
        let mut parts = latents.to_vec();
        parts.push(key);
        g.concat_cols(&parts)
    }

    /// Teacher-forced token logits, `L*B x 274` in step-major order, where
    /// `L` is the longest sequence in the batch.
    pub fn decode_teacher(&self, g: &mut Graph<T>, latents: &[Var], keys: &[KeyVector], tokens: &[Vec<usize>]) -> Result<Var> {
        let b = keys.len();
        if tokens.len() != b {
            return Err(Error::ShapeError(format!("{} keys for {} sequences", b, tokens.len())));
        }
        let l = check_tokens(tokens)?;
        if l == 0 {
            return Err(Error::ShapeError("teacher forcing needs at least one token".into()));
        }
        let dec = &self.decoder;
        let cond = self.condition(g, latents, keys)?;
        let pre = linear(g, &self.store, cond, dec.init_w, dec.init_b)?;
        let mut h = g.tanh(pre);
        let cond_w = g.param(&self.store, dec.cond_w);
        let cond_gates = g.matmul(cond, cond_w)?;
        let inputs = step_major(b, l, |bi, t| {
            if t == 0 {
                START_ID
            } else {
                tokens[bi].get(t - 1).copied().unwrap_or(PAD_ID)
            }
        });
        let elapsed: Vec<Vec<usize>> = tokens.iter().map(|seq| elapsed_steps(seq, l)).collect();
        let positions = step_major(b, l, |bi, t| elapsed[bi][t]);
        let table = g.param(&self.store, self.embed);
        let emb = g.gather_rows(table, &inputs)?;
        let cell = dec.gru.bind(g, &self.store)?;
        let gx = cell.input_gates(g, emb)?;
        let time_w = g.param(&self.store, dec.time_w);
        let time = g.gather_rows(time_w, &positions)?;
        let gx = g.add(gx, time)?;
        let mut hs = Vec::with_capacity(l);
        for t in 0..l {
            let gxt = g.slice_rows(gx, t * b, b)?;
            let gxt = g.add(gxt, cond_gates)?;
            h = cell.step_from_gates(g, gxt, h)?;
            hs.push(h);
        }
        let all = g.concat_rows(&hs)?;
        linear(g, &self.store, all, dec.out_w, dec.out_b)
    }

    /// Greedy generation from START, one sequence per row of the latents.
    /// A row stops once its time shifts reach the segment end or at the
    /// token limit. PAD and START are never emitted.
    pub fn greedy_decode(&self, latents: &[Tensor<T>], keys: &[KeyVector]) -> Result<Vec<TokenSeq>> {
        let b = keys.len();
        let mut g = Graph::inference();
        let zs: Vec<Var> = latents.iter().map(|t| g.constant(t.clone())).collect();
        let dec = &self.decoder;
        let cond = self.condition(&mut g, &zs, keys)?;
        let pre = linear(&mut g, &self.store, cond, dec.init_w, dec.init_b)?;
        let mut h = g.tanh(pre);
        let cond_w = g.param(&self.store, dec.cond_w);
        let cond_gates = g.matmul(cond, cond_w)?;
        let table = g.param(&self.store, self.embed);
        let cell = dec.gru.bind(&mut g, &self.store)?;
        let time_w = g.param(&self.store, dec.time_w);
        let out_w = g.param(&self.store, dec.out_w);
        let out_b = g.param(&self.store, dec.out_b);

        let mut seqs: Vec<Vec<Token>> = vec![Vec::new(); b];
        let mut elapsed = vec![0usize; b];
        let mut done = vec![false; b];
        let mut prev = vec![START_ID; b];
        for _ in 0..MAX_TOKENS {
            if done.iter().all(|&d| d) {
                break;
            }
            let x = g.gather_rows(table, &prev)?;
            let gx = cell.input_gates(&mut g, x)?;
            let gx = g.add(gx, cond_gates)?;
            let positions: Vec<usize> = elapsed.iter().map(|&e| e.min(SEGMENT_STEPS)).collect();
            let time = g.gather_rows(time_w, &positions)?;
            let gx = g.add(gx, time)?;
            h = cell.step_from_gates(&mut g, gx, h)?;
            let hw = g.matmul(h, out_w)?;
            let logits = g.add_row(hw, out_b)?;
            let values = g.value(logits);
            for bi in 0..b {
                if done[bi] {
                    prev[bi] = PAD_ID;
                    continue;
                }
                let row = values.row(bi);
                let mut best = START_ID + 1;
                for id in best + 1..VOCAB_SIZE {
                    if row[id] > row[best] {
                        best = id;
                    }
                }
                let tok = Token::from_id(best).expect("ids past START are tokens");
                if let Token::TimeShift(n) = tok {
                    elapsed[bi] += n as usize;
                }
                seqs[bi].push(tok);
                prev[bi] = best;
                if elapsed[bi] >= SEGMENT_STEPS || seqs[bi].len() >= MAX_TOKENS {
                    done[bi] = true;
                }
            }
        }
        Ok(seqs.into_iter().map(|tokens| TokenSeq { tokens }).collect())
    }

    /// Posterior means for each latent, `B x z_dim` per slot.
    pub fn encode_means(&self, tokens: &[Vec<usize>]) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::inference();
        let post = self.encode(&mut g, tokens, None)?;
        Ok(post.iter().map(|p| g.value(p.mu).clone()).collect())
    }
}
