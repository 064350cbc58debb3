//! Step generator: an encoder over the edited ingredient names, a causal
//! decoder over direction tokens, a tied output projection and a copy path
//! that can emit input tokens directly.
//!
//! The output distribution at each position mixes the vocabulary softmax with
//! the copy attention, weighted by a learned gate:
//! `p = p_gen · p_vocab + (1 − p_gen) · Σ_{i: w_i = w} α_i`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraint::{ConstraintId, ConstraintSpec};
use crate::corpus::{IngredientId, IngredientVocab, Recipe};
use crate::error::{Error, Result};
use crate::nn::layers::{
    transformer_decoder, transformer_encoder, Embedding, Linear, Positions, TransformerStack,
};
use crate::nn::{checkpoint, Graph, Lamb, LambConfig, ModelConfig, ParamId, ParameterStore, Var};
use crate::rng::{stream, Stream};
use crate::text;
use crate::trie::TokenTrie;
use crate::words::{WordVocab, BOS, COMMA, EOS, PAD, SEP, UNK};

/// Probability floor inside the log of the training loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Ingredient names as word ids, joined by the comma token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorInput {
    pub token_ids: Vec<u32>,
}

impl GeneratorInput {
    pub fn new(token_ids: Vec<u32>) -> Result<Self> {
        if !token_ids.iter().any(|&t| t != COMMA) {
            return Err(Error::Validation("generator input has no ingredient tokens".into()));
        }
        Ok(Self { token_ids })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S], words: &WordVocab) -> Result<Self> {
        let mut ids = Vec::new();
        for (i, n) in names.iter().enumerate() {
            if i > 0 {
                ids.push(COMMA);
            }
            ids.extend(words.encode(&text::tokenize(n.as_ref())));
        }
        Self::new(ids)
    }

    /// Canonical names of `ids` in id order.
    pub fn from_ids(
        ids: &BTreeSet<IngredientId>,
        ingredients: &IngredientVocab,
        words: &WordVocab,
    ) -> Result<Self> {
        let names: Vec<String> =
            ids.iter().map(|&i| ingredient_name(ingredients, i)).collect::<Result<_>>()?;
        Self::from_names(&names, words)
    }

    fn copyable(&self) -> Vec<bool> {
        self.token_ids.iter().map(|&t| t != COMMA).collect()
    }
}

fn ingredient_name(vocab: &IngredientVocab, id: IngredientId) -> Result<String> {
    vocab
        .entry(id)
        .map(|e| e.name())
        .ok_or_else(|| Error::Validation(format!("ingredient id {} outside vocabulary", id.0)))
}

/// Next-token distribution at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    pub p_vocab: Vec<f64>,
    pub alpha: Vec<f64>,
    pub p_gen: f64,
    pub p_final: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub model: ModelConfig,
    pub max_input_len: usize,
    /// Decoder positional table size; longer targets are truncated.
    pub max_target_len: usize,
    /// When false the copy path is skipped and `p_final = p_vocab`.
    pub copy_attention: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { model: ModelConfig::desk(), max_input_len: 256, max_target_len: 320, copy_attention: true }
    }
}

#[derive(Debug, Clone)]
struct Layers {
    tokens: Embedding,
    enc_pos: Positions,
    dec_pos: Positions,
    encoder: TransformerStack,
    decoder: TransformerStack,
    out_bias: ParamId,
    gate: Linear,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: String,
    config: GeneratorConfig,
    words: WordVocab,
    trained: bool,
}

const KIND: &str = "step-generator";

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    pub store: ParameterStore,
    pub words: WordVocab,
    pub trained: bool,
    layers: Layers,
}

/// Vars for every decoder row.
pub struct Heads {
    pub p_final: Var,
    pub p_vocab: Var,
    pub alpha: Option<Var>,
    pub p_gen: Option<Var>,
}

/// Softmax over input positions of `h · Eᵀ / √K`, with non-copyable
/// positions masked out. `h` may hold several query rows.
pub fn copy_attention(g: &mut Graph, h: Var, inputs: Var, copyable: &[bool]) -> Result<Var> {
    let k = g.shape(inputs).0;
    if k == 0 || copyable.len() != k || !copyable.iter().any(|&c| c) {
        return Err(Error::Validation("copy attention needs at least one copyable input".into()));
    }
    let rows = g.shape(h).0;
    let scores = g.matmul_bt(h, inputs)?;
    let scores = g.scale(scores, 1.0 / (k as f64).sqrt());
    let mask: Vec<f64> =
        (0..rows).flat_map(|_| copyable.iter().map(|&c| if c { 0.0 } else { f64::NEG_INFINITY })).collect();
    g.softmax(scores, Some(&mask))
}

/// `σ(h · w + b)` per row.
pub fn gen_gate(g: &mut Graph, h: Var, w: Var, b: Var) -> Result<Var> {
    let z = g.matmul(h, w)?;
    let z = g.add_row(z, b)?;
    Ok(g.sigmoid(z))
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, words: WordVocab, seed: u64) -> Result<Self> {
        config.model.validate()?;
        if words.is_empty() {
            return Err(Error::Validation("empty word vocabulary".into()));
        }
        let mut rng = stream(seed, Stream::Init);
        let m = config.model;
        let d = m.d_model;
        let mut store = ParameterStore::new(m);
        let s = &mut store;
        let table_std = match m.embed_dim {
            Some(_) => 1.0,
            None => 1.0 / (d as f64).sqrt(),
        };
        let layers = Layers {
            tokens: Embedding::new(s, "generator.tokens", words.len(), d, m.embed_dim, table_std, &mut rng)?,
            enc_pos: Positions::new(s, "generator.enc_pos", config.max_input_len, d, &mut rng)?,
            dec_pos: Positions::new(s, "generator.dec_pos", config.max_target_len, d, &mut rng)?,
            encoder: TransformerStack::new(s, "generator.encoder", &m, false, &mut rng)?,
            decoder: TransformerStack::new(s, "generator.decoder", &m, true, &mut rng)?,
            out_bias: s.add_zeros("generator.out_bias", vec![words.len()])?,
            gate: Linear::new(s, "generator.gate", d, 1, true, &mut rng)?,
        };
        Ok(Self { config, store, words, trained: false, layers })
    }

    fn bind(config: &GeneratorConfig, store: &ParameterStore) -> Result<Layers> {
        let m = config.model;
        Ok(Layers {
            tokens: Embedding::load(store, "generator.tokens")?,
            enc_pos: Positions::load(store, "generator.enc_pos")?,
            dec_pos: Positions::load(store, "generator.dec_pos")?,
            encoder: TransformerStack::load(store, "generator.encoder", &m, false)?,
            decoder: TransformerStack::load(store, "generator.decoder", &m, true)?,
            out_bias: store.require("generator.out_bias")?,
            gate: Linear::load(store, "generator.gate")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Metadata {
            kind: KIND.into(),
            config: self.config,
            words: self.words.clone(),
            trained: self.trained,
        };
        let json = serde_json::to_string(&meta).expect("metadata serializes");
        checkpoint::save(path, &self.store, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, json) = checkpoint::load(path)?;
        let meta: Metadata =
            serde_json::from_str(&json).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        if meta.kind != KIND {
            return Err(Error::Checkpoint(format!("expected a {KIND} checkpoint, found `{}`", meta.kind)));
        }
        let layers = Self::bind(&meta.config, &store)?;
        Ok(Self { config: meta.config, store, words: meta.words, trained: meta.trained, layers })
    }

    fn check_ids(&self, ids: &[u32]) -> Result<Vec<usize>> {
        let v = self.words.len() as u32;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Validation(format!("word id {bad} outside vocabulary of {v}")));
        }
        Ok(ids.iter().map(|&i| i as usize).collect())
    }

    /// (encoder memory, raw input embeddings)
    fn encode(&self, g: &mut Graph, input: &GeneratorInput) -> Result<(Var, Var)> {
        let ids = self.check_ids(&input.token_ids)?;
        let emb = self.layers.tokens.forward(g, &ids)?;
        let x = self.layers.enc_pos.add_to(g, emb)?;
        let memory = transformer_encoder(g, x, &self.layers.encoder)?;
        Ok((memory, emb))
    }

    fn decode(&self, g: &mut Graph, memory: Var, dec_in: &[u32]) -> Result<Var> {
        let ids = self.check_ids(dec_in)?;
        let y = self.layers.tokens.forward(g, &ids)?;
        let y = self.layers.dec_pos.add_to(g, y)?;
        transformer_decoder(g, y, memory, &self.layers.decoder, true)
    }

    /// Output distributions for decoder states `h`.
    pub fn heads(&self, g: &mut Graph, h: Var, emb: Var, input: &GeneratorInput) -> Result<Heads> {
        let e = self.layers.tokens.matrix(g)?;
        let logits = g.matmul_bt(h, e)?;
        let bias = g.param(self.layers.out_bias);
        let logits = g.add_row(logits, bias)?;
        let p_vocab = g.softmax(logits, None)?;
        if !self.config.copy_attention {
            return Ok(Heads { p_final: p_vocab, p_vocab, alpha: None, p_gen: None });
        }
        let alpha = copy_attention(g, h, emb, &input.copyable())?;
        let ids = self.check_ids(&input.token_ids)?;
        let copy = g.scatter_cols(alpha, &ids, self.words.len())?;
        let w = g.param(self.layers.gate.weight);
        let b = g.param(self.layers.gate.bias.expect("gate has a bias"));
        let p_gen = gen_gate(g, h, w, b)?;
        let rest = g.affine(p_gen, -1.0, 1.0);
        let a = g.mul_col(p_vocab, p_gen)?;
        let c = g.mul_col(copy, rest)?;
        let p_final = g.add(a, c)?;
        Ok(Heads { p_final, p_vocab, alpha: Some(alpha), p_gen: Some(p_gen) })
    }

    /// Distribution of the token following `prefix` (which excludes the
    /// begin token).
    pub fn step_distribution(&self, input: &GeneratorInput, prefix: &[u32]) -> Result<StepDistribution> {
        let mut g = Graph::new(&self.store);
        let (memory, emb) = self.encode(&mut g, input)?;
        self.last_step(&mut g, memory, emb, input, prefix)
    }

    fn last_step(
        &self,
        g: &mut Graph,
        memory: Var,
        emb: Var,
        input: &GeneratorInput,
        prefix: &[u32],
    ) -> Result<StepDistribution> {
        let mut dec_in = Vec::with_capacity(prefix.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(prefix);
        let h = self.decode(g, memory, &dec_in)?;
        let last = g.gather(h, &[dec_in.len() - 1])?;
        let heads = self.heads(g, last, emb, input)?;
        Ok(StepDistribution {
            p_vocab: g.value(heads.p_vocab).to_vec(),
            alpha: match heads.alpha {
                Some(a) => g.value(a).to_vec(),
                None => Vec::new(),
            },
            p_gen: heads.p_gen.map_or(1.0, |p| g.scalar(p)),
            p_final: g.value(heads.p_final).to_vec(),
        })
    }
}

/// Teacher-forced loss node plus per-token bookkeeping.
pub struct TeacherForced {
    pub loss: Var,
    pub correct: usize,
    pub total: usize,
    /// Gold tokens whose probability fell below [`PROB_FLOOR`].
    pub floor_hits: usize,
}

/// Mean `−ln p_final(gold)` over `target`, which must end with the end token.
pub fn teacher_forced(
    model: &GeneratorModel,
    g: &mut Graph,
    input: &GeneratorInput,
    target: &[u32],
) -> Result<TeacherForced> {
    if target.last() != Some(&EOS) {
        return Err(Error::Validation("target must end with the end token".into()));
    }
    let (memory, emb) = model.encode(g, input)?;
    let mut dec_in = Vec::with_capacity(target.len());
    dec_in.push(BOS);
    dec_in.extend_from_slice(&target[..target.len() - 1]);
    let h = model.decode(g, memory, &dec_in)?;
    let heads = model.heads(g, h, emb, input)?;
    let gold: Vec<usize> = target.iter().map(|&t| t as usize).collect();
    let v = model.words.len();
    let probs = g.value(heads.p_final);
    let mut correct = 0;
    let mut floor_hits = 0;
    for (r, &t) in gold.iter().enumerate() {
        let row = &probs[r * v..(r + 1) * v];
        if argmax(row) == t {
            correct += 1;
        }
        if row[t] < PROB_FLOOR {
            floor_hits += 1;
        }
    }
    let loss = g.nll_probs(heads.p_final, &gold, PROB_FLOOR)?;
    Ok(TeacherForced { loss, correct, total: gold.len(), floor_hits })
}

pub fn lm_loss(model: &GeneratorModel, input: &GeneratorInput, target: &[u32]) -> Result<f64> {
    let mut g = Graph::new(&model.store);
    let tf = teacher_forced(model, &mut g, input, target)?;
    Ok(g.scalar(tf.loss))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best
}

/// Word-id sequences of banned ingredient surface forms.
#[derive(Debug, Clone, Default)]
pub struct BlacklistTrie {
    trie: TokenTrie<u32, IngredientId>,
}

impl BlacklistTrie {
    /// Every canonical name and alias of the banned ingredients that can be
    /// spelled with in-vocabulary words.
    pub fn new(spec: &ConstraintSpec, ingredients: &IngredientVocab, words: &WordVocab) -> Self {
        let mut trie = TokenTrie::new();
        for (form, id) in ingredients.surface_forms() {
            if !spec.is_banned(id) {
                continue;
            }
            let ids: Option<Vec<u32>> = form.iter().map(|t| words.get(t)).collect();
            if let Some(ids) = ids {
                trie.insert(&ids, id);
            }
        }
        Self { trie }
    }

    pub fn is_empty(&self) -> bool {
        self.trie.is_empty()
    }

    /// Tokens that would complete a banned sequence after `prefix`.
    pub fn blocked_after(&self, prefix: &[u32]) -> BTreeSet<u32> {
        self.trie.completions_after(prefix).into_iter().copied().collect()
    }
}

/// Zeroes tokens that would complete a banned sequence and renormalizes. If
/// nothing is left, returns the uniform distribution over allowed tokens.
pub fn apply_blacklist(p: &[f64], prefix: &[u32], trie: &BlacklistTrie) -> Vec<f64> {
    let blocked = trie.blocked_after(prefix);
    if blocked.is_empty() {
        return p.to_vec();
    }
    let mut out: Vec<f64> =
        p.iter().enumerate().map(|(i, &x)| if blocked.contains(&(i as u32)) { 0.0 } else { x }).collect();
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        out.iter_mut().for_each(|x| *x /= sum);
    } else {
        let allowed = (p.len() - blocked.len()) as f64;
        for (i, x) in out.iter_mut().enumerate() {
            *x = if blocked.contains(&(i as u32)) { 0.0 } else { 1.0 / allowed };
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct GenerateOptions<'a> {
    pub max_len: usize,
    pub blacklist: Option<&'a BlacklistTrie>,
}

impl Default for GenerateOptions<'_> {
    fn default() -> Self {
        Self { max_len: 256, blacklist: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Generated ids, without the end token.
    pub tokens: Vec<u32>,
    pub steps: Vec<String>,
    /// True if decoding stopped at `max_len` (or the positional limit)
    /// rather than at the end token.
    pub truncated: bool,
}

/// Greedy decoding. Padding, begin and unknown tokens are never emitted;
/// ties go to the lower id.
pub fn generate_steps(
    model: &GeneratorModel,
    input: &GeneratorInput,
    opts: GenerateOptions,
) -> Result<Generation> {
    let max_len = opts.max_len.min(model.config.max_target_len.saturating_sub(1));
    let (memory, emb) = {
        let mut g = Graph::new(&model.store);
        let (m, e) = model.encode(&mut g, input)?;
        let (mr, mc) = g.shape(m);
        ((mr, mc, g.value(m).to_vec()), (g.shape(e).0, g.shape(e).1, g.value(e).to_vec()))
    };
    let mut tokens = Vec::new();
    let mut finished = false;
    while tokens.len() < max_len {
        let mut g = Graph::new(&model.store);
        let m = g.input(memory.0, memory.1, memory.2.clone())?;
        let e = g.input(emb.0, emb.1, emb.2.clone())?;
        let dist = model.last_step(&mut g, m, e, input, &tokens)?;
        let mut p = match opts.blacklist {
            Some(trie) => apply_blacklist(&dist.p_final, &tokens, trie),
            None => dist.p_final,
        };
        for special in [PAD, BOS, UNK] {
            p[special as usize] = f64::NEG_INFINITY;
        }
        let next = argmax(&p) as u32;
        if next == EOS {
            finished = true;
            break;
        }
        tokens.push(next);
    }
    let steps = split_steps(&model.words, &tokens);
    Ok(Generation { tokens, steps, truncated: !finished })
}

/// Splits on the step separator and detokenizes; empty steps are dropped.
pub fn split_steps(words: &WordVocab, tokens: &[u32]) -> Vec<String> {
    tokens
        .split(|&t| t == SEP)
        .filter(|s| !s.is_empty())
        .map(|s| text::detokenize(&words.decode(s)))
        .collect()
}

/// Steps as one token stream: `<sep>` between steps and `<eos>` at the end,
/// truncated to `max_len` tokens (the end token is kept).
pub fn encode_steps<S: AsRef<str>>(steps: &[S], words: &WordVocab, max_len: usize) -> Vec<u32> {
    let mut out = Vec::new();
    for (i, s) in steps.iter().enumerate() {
        if i > 0 {
            out.push(SEP);
        }
        out.extend(words.encode(&text::tokenize(s.as_ref())));
    }
    out.truncate(max_len.saturating_sub(1));
    out.push(EOS);
    out
}

/// JSON dump of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub base_id: String,
    pub constraint: ConstraintId,
    pub ingredients: Vec<String>,
    pub steps: Vec<String>,
    pub truncated: bool,
    pub blacklist_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorExample {
    pub recipe_id: String,
    pub input: GeneratorInput,
    pub target: Vec<u32>,
}

/// Word vocabulary over step text; every token of every ingredient name and
/// alias is kept regardless of frequency so that copy targets exist.
pub fn build_word_vocab(recipes: &[&Recipe], ingredients: &IngredientVocab, min_count: usize) -> WordVocab {
    let step_tokens: Vec<Vec<String>> =
        recipes.iter().flat_map(|r| r.steps_text.iter().map(|s| text::tokenize(s))).collect();
    let forced: BTreeSet<&str> =
        ingredients.surface_forms().flat_map(|(form, _)| form.iter().map(String::as_str)).collect();
    WordVocab::build(step_tokens.iter().map(Vec::as_slice), min_count, forced)
}

/// One example per recipe with at least one ingredient and one step.
pub fn build_generator_examples(
    recipes: &[&Recipe],
    ingredients: &IngredientVocab,
    words: &WordVocab,
    cfg: &GeneratorConfig,
) -> Result<Vec<GeneratorExample>> {
    let mut out = Vec::new();
    for r in recipes {
        if r.ingredient_ids.is_empty() || r.steps_text.is_empty() {
            continue;
        }
        let mut input = GeneratorInput::from_ids(&r.ingredient_set(), ingredients, words)?;
        input.token_ids.truncate(cfg.max_input_len);
        out.push(GeneratorExample {
            recipe_id: r.recipe_id.clone(),
            input: GeneratorInput::new(input.token_ids)?,
            target: encode_steps(&r.steps_text, words, cfg.max_target_len),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainConfig {
    pub generator: GeneratorConfig,
    pub optimizer: LambConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without validation-loss improvement.
    pub patience: Option<usize>,
    pub min_word_count: usize,
    pub seed: u64,
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            optimizer: LambConfig::default(),
            epochs: 30,
            batch_size: 16,
            patience: Some(5),
            min_word_count: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_token_accuracy: f64,
    pub floor_hits: usize,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenTrainReport {
    pub log: Vec<GenEpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_examples: usize,
}

pub struct GeneratorTrainer<'a> {
    pub model: GeneratorModel,
    examples: &'a [GeneratorExample],
    optimizer: Lamb,
    order: Vec<usize>,
    rng: rand_chacha::ChaCha8Rng,
    batch_size: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub token_accuracy: f64,
    pub floor_hits: usize,
}

impl<'a> GeneratorTrainer<'a> {
    pub fn new(
        examples: &'a [GeneratorExample],
        words: WordVocab,
        cfg: &GeneratorTrainConfig,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Validation("no training recipes".into()));
        }
        let model = GeneratorModel::new(cfg.generator, words, cfg.seed)?;
        let optimizer = Lamb::new(cfg.optimizer, &model.store);
        Ok(Self {
            model,
            examples,
            optimizer,
            order: (0..examples.len()).collect(),
            rng: stream(cfg.seed, Stream::Shuffle),
            batch_size: cfg.batch_size.max(1),
            epoch: 0,
        })
    }

    pub fn epoch(&mut self) -> Result<EpochStats> {
        use rand::seq::SliceRandom;
        self.order.shuffle(&mut self.rng);
        let order = self.order.clone();
        let (mut loss_sum, mut correct, mut total, mut floor_hits) = (0.0, 0, 0, 0);
        for batch in order.chunks(self.batch_size) {
            for &i in batch {
                let ex = &self.examples[i];
                let grads = {
                    let mut g = Graph::new(&self.model.store);
                    let tf = teacher_forced(&self.model, &mut g, &ex.input, &ex.target)?;
                    let lv = g.scalar(tf.loss);
                    if !lv.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite generator loss at epoch {} on `{}`",
                            self.epoch + 1,
                            ex.recipe_id
                        )));
                    }
                    loss_sum += lv;
                    correct += tf.correct;
                    total += tf.total;
                    floor_hits += tf.floor_hits;
                    g.backward(tf.loss)?
                };
                self.model.store.accumulate_grads(&grads);
            }
            self.model.store.scale_grads(1.0 / batch.len() as f64);
            self.optimizer.step(&mut self.model.store)?;
        }
        self.epoch += 1;
        self.model.trained = true;
        Ok(EpochStats {
            loss: loss_sum / self.examples.len() as f64,
            token_accuracy: correct as f64 / total.max(1) as f64,
            floor_hits,
        })
    }
}

/// Mean teacher-forced loss and token accuracy over `examples`.
pub fn evaluate_examples(model: &GeneratorModel, examples: &[GeneratorExample]) -> Result<EpochStats> {
    let (mut loss, mut correct, mut total, mut floor_hits) = (0.0, 0, 0, 0);
    for ex in examples {
        let mut g = Graph::new(&model.store);
        let tf = teacher_forced(model, &mut g, &ex.input, &ex.target)?;
        loss += g.scalar(tf.loss);
        correct += tf.correct;
        total += tf.total;
        floor_hits += tf.floor_hits;
    }
    Ok(EpochStats {
        loss: loss / examples.len().max(1) as f64,
        token_accuracy: correct as f64 / total.max(1) as f64,
        floor_hits,
    })
}

/// Trains for up to `cfg.epochs`, keeping the parameters of the epoch with
/// the lowest validation loss when a validation set is given.
pub fn train_generator(
    train: &[GeneratorExample],
    val: &[GeneratorExample],
    words: WordVocab,
    cfg: &GeneratorTrainConfig,
    mut on_epoch: impl FnMut(&GenEpochLog, &GeneratorModel),
) -> Result<(GeneratorModel, GenTrainReport)> {
    let mut trainer = GeneratorTrainer::new(train, words, cfg)?;
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let stats = trainer.epoch()?;
        let val_loss = if val.is_empty() { None } else { Some(evaluate_examples(&trainer.model, val)?.loss) };
        let entry = GenEpochLog {
            epoch,
            train_loss: stats.loss,
            train_token_accuracy: stats.token_accuracy,
            floor_hits: stats.floor_hits,
            val_loss,
        };
        on_epoch(&entry, &trainer.model);
        log.push(entry);
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, trainer.model.store.clone()));
            } else if let (Some(p), Some((_, be, _))) = (cfg.patience, &best) {
                if epoch - be >= p {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let mut model = trainer.model;
    let best_epoch = match best {
        Some((_, e, store)) => {
            model.store = store;
            e
        }
        None => log.len(),
    };
    Ok((model, GenTrainReport { log, best_epoch, stopped_early, n_examples: train.len() }))
}
