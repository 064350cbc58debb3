//! Set-pooled ingredient editor.
//!
//! The encoder reads `[constraint; name tokens]`. The decoder reads one row
//! per base ingredient (no positional signal, so the ingredient scores do not
//! depend on input order) followed by learned slot rows up to `T` positions.
//! Each decoder row is projected to `|I| + 1` logits; the ingredient columns
//! are max-pooled across rows and the last column is a per-position
//! end-of-set logit that determines how many ingredients to keep.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{ConstraintId, ConstraintSpec};
use crate::corpus::{IngredientId, IngredientVocab, Recipe, RecipePair};
use crate::error::{Error, Result};
use crate::eval::set_f1;
use crate::nn::layers::{
    transformer_decoder, transformer_encoder, Embedding, Linear, Positions, TransformerStack,
};
use crate::nn::{checkpoint, sigmoid, Graph, Lamb, LambConfig, ModelConfig, ParamId, ParameterStore, Var};
use crate::rng::{stream, Stream};
use crate::rules::filter_ingredient_list;
use crate::words::WordVocab;

const N_CONSTRAINTS: usize = ConstraintId::ALL.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditorInput {
    pub constraint: ConstraintId,
    pub name_tokens: Vec<String>,
    pub base_ingredient_ids: Vec<IngredientId>,
}

impl EditorInput {
    pub fn from_recipe(recipe: &Recipe, constraint: ConstraintId) -> Self {
        Self {
            constraint,
            name_tokens: recipe.name_tokens.clone(),
            base_ingredient_ids: recipe.ingredient_ids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditorPrediction {
    pub pooled_probs: Vec<f64>,
    /// Cardinality chosen from the end-of-set logits. When the hard filter
    /// removes banned items, `selected` can be smaller than this.
    pub k_predicted: usize,
    pub selected: BTreeSet<IngredientId>,
    pub eos_probs: Vec<f64>,
    pub filtered_out: BTreeSet<IngredientId>,
}

/// Per-position logits, `n_positions × (n_ingredients + 1)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionLogits {
    pub n_positions: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl PositionLogits {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn eos(&self) -> Vec<f64> {
        (0..self.n_positions).map(|t| self.data[t * self.width + self.width - 1]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditorConfig {
    pub model: ModelConfig,
    /// Extra decoder positions beyond the base ingredients at inference.
    pub margin: usize,
    /// Upper bound on decoder positions (slot and end-of-set tables).
    pub max_positions: usize,
    /// Upper bound on encoder length (constraint token + name).
    pub max_name_len: usize,
}

impl Default for EditorConfig {
    fn default() -> Self {
        Self { model: ModelConfig::desk(), margin: 8, max_positions: 96, max_name_len: 48 }
    }
}

#[derive(Debug, Clone)]
struct Layers {
    tokens: Embedding,
    enc_pos: Positions,
    encoder: TransformerStack,
    ingredients: ParamId,
    slots: ParamId,
    decoder: TransformerStack,
    out: Linear,
    eos: Linear,
    eos_bias: ParamId,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: String,
    config: EditorConfig,
    names: WordVocab,
    ingredients: IngredientVocab,
    trained: bool,
}

const KIND: &str = "ingredient-editor";

#[derive(Debug, Clone)]
pub struct EditorModel {
    pub config: EditorConfig,
    pub store: ParameterStore,
    pub names: WordVocab,
    pub ingredients: IngredientVocab,
    pub trained: bool,
    layers: Layers,
}

impl EditorModel {
    /// Freshly initialized model; parameters come from the `Init` substream.
    pub fn new(
        config: EditorConfig,
        names: WordVocab,
        ingredients: IngredientVocab,
        seed: u64,
    ) -> Result<Self> {
        config.model.validate()?;
        if ingredients.is_empty() {
            return Err(Error::Validation("empty ingredient vocabulary".into()));
        }
        let mut rng = stream(seed, Stream::Init);
        let m = config.model;
        let d = m.d_model;
        let mut store = ParameterStore::new(m);
        let s = &mut store;
        let layers = Layers {
            tokens: Embedding::new(
                s,
                "editor.tokens",
                N_CONSTRAINTS + names.len(),
                d,
                m.embed_dim,
                1.0,
                &mut rng,
            )?,
            enc_pos: Positions::new(s, "editor.enc_pos", config.max_name_len, d, &mut rng)?,
            encoder: TransformerStack::new(s, "editor.encoder", &m, false, &mut rng)?,
            ingredients: s.add_normal("editor.ingredients", vec![ingredients.len(), d], 1.0, &mut rng)?,
            slots: s.add_normal("editor.slots", vec![config.max_positions, d], 1.0, &mut rng)?,
            decoder: TransformerStack::new(s, "editor.decoder", &m, true, &mut rng)?,
            out: Linear::new(s, "editor.out", d, ingredients.len(), true, &mut rng)?,
            eos: Linear::new(s, "editor.eos", d, 1, true, &mut rng)?,
            eos_bias: s.add_zeros("editor.eos_bias", vec![config.max_positions])?,
        };
        Ok(Self { config, store, names, ingredients, trained: false, layers })
    }

    fn bind(config: &EditorConfig, store: &ParameterStore) -> Result<Layers> {
        let m = config.model;
        Ok(Layers {
            tokens: Embedding::load(store, "editor.tokens")?,
            enc_pos: Positions::load(store, "editor.enc_pos")?,
            encoder: TransformerStack::load(store, "editor.encoder", &m, false)?,
            ingredients: store.require("editor.ingredients")?,
            slots: store.require("editor.slots")?,
            decoder: TransformerStack::load(store, "editor.decoder", &m, true)?,
            out: Linear::load(store, "editor.out")?,
            eos: Linear::load(store, "editor.eos")?,
            eos_bias: store.require("editor.eos_bias")?,
        })
    }

    pub fn n_ingredients(&self) -> usize {
        self.ingredients.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Metadata {
            kind: KIND.into(),
            config: self.config,
            names: self.names.clone(),
            ingredients: self.ingredients.clone(),
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
            return Err(Error::Checkpoint(format!("expected an {KIND} checkpoint, found `{}`", meta.kind)));
        }
        let layers = Self::bind(&meta.config, &store)?;
        Ok(Self {
            config: meta.config,
            store,
            names: meta.names,
            ingredients: meta.ingredients,
            trained: meta.trained,
            layers,
        })
    }

    /// Decoder positions used at inference for `input`.
    pub fn inference_positions(&self, input: &EditorInput) -> usize {
        (input.base_ingredient_ids.len() + self.config.margin).clamp(1, self.config.max_positions)
    }

    fn encoder_ids(&self, input: &EditorInput) -> Vec<usize> {
        std::iter::once(input.constraint.index())
            .chain(input.name_tokens.iter().map(|t| N_CONSTRAINTS + self.names.id(t) as usize))
            .collect()
    }

    /// Builds the `T × (|I|+1)` logit node.
    pub fn forward(&self, g: &mut Graph, input: &EditorInput, t: usize) -> Result<Var> {
        if input.name_tokens.is_empty() {
            return Err(Error::Validation("recipe name is empty".into()));
        }
        let nb = input.base_ingredient_ids.len();
        if t == 0 || t > self.config.max_positions || t < nb {
            return Err(Error::Validation(format!(
                "{t} decoder positions for {nb} base ingredients (max {})",
                self.config.max_positions
            )));
        }
        if let Some(bad) = input.base_ingredient_ids.iter().find(|i| i.index() >= self.n_ingredients()) {
            return Err(Error::Validation(format!("ingredient id {} outside vocabulary", bad.0)));
        }
        let l = &self.layers;
        let x = l.tokens.forward(g, &self.encoder_ids(input))?;
        let x = l.enc_pos.add_to(g, x)?;
        let memory = transformer_encoder(g, x, &l.encoder)?;

        let slot_ids: Vec<usize> = (0..t - nb).collect();
        let slots = g.param(l.slots);
        let slot_rows = g.gather(slots, &slot_ids)?;
        let dec_in = if nb == 0 {
            slot_rows
        } else {
            let ids: Vec<usize> = input.base_ingredient_ids.iter().map(|i| i.index()).collect();
            let table = g.param(l.ingredients);
            let ing_rows = g.gather(table, &ids)?;
            if t == nb {
                ing_rows
            } else {
                g.concat_rows(&[ing_rows, slot_rows])?
            }
        };
        let h = transformer_decoder(g, dec_in, memory, &l.decoder, false)?;
        let ing = l.out.forward(g, h)?;
        let eos = l.eos.forward(g, h)?;
        let bias = g.param(l.eos_bias);
        let bias = g.slice_cols(bias, 0, t)?;
        let bias = g.transpose(bias);
        let eos = g.add(eos, bias)?;
        g.concat_cols(&[ing, eos])
    }

    pub fn score_positions(&self, input: &EditorInput, t: usize) -> Result<PositionLogits> {
        let mut g = Graph::new(&self.store);
        let v = self.forward(&mut g, input, t)?;
        let (n_positions, width) = g.shape(v);
        Ok(PositionLogits { n_positions, width, data: g.value(v).to_vec() })
    }
}

/// Column-wise max over positions, excluding the final end-of-set column.
pub fn pool_scores(logits: &PositionLogits) -> Vec<f64> {
    assert!(logits.n_positions >= 1, "pooling needs at least one position");
    let n = logits.width - 1;
    let mut out = logits.row(0)[..n].to_vec();
    for t in 1..logits.n_positions {
        for (o, &x) in out.iter_mut().zip(&logits.row(t)[..n]) {
            if x > *o {
                *o = x;
            }
        }
    }
    out
}

/// Scans positions in order with one Bernoulli(σ(logit)) draw each; the
/// index of the first success is K, or `T` if none succeeds.
pub fn predict_cardinality<R: Rng>(eos_logits: &[f64], rng: &mut R) -> usize {
    for (t, &l) in eos_logits.iter().enumerate() {
        if rng.random::<f64>() < sigmoid(l) {
            return t;
        }
    }
    eos_logits.len()
}

/// First position whose end-of-set probability exceeds 0.5, else `T`.
pub fn deterministic_cardinality(eos_logits: &[f64]) -> usize {
    eos_logits.iter().position(|&l| sigmoid(l) > 0.5).unwrap_or(eos_logits.len())
}

/// The `k` highest-scoring ids; ties go to the lower id.
pub fn select_top_k(scores: &[f64], k: usize) -> BTreeSet<IngredientId> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| IngredientId(i as u32)).collect()
}

/// Mean BCE of the pooled logits against set membership plus mean BCE of the
/// end-of-set column against a one-hot at `k_true` (all zeros if
/// `k_true == T`).
pub fn editor_loss(
    g: &mut Graph,
    logits: Var,
    target: &BTreeSet<IngredientId>,
    k_true: usize,
) -> Result<Var> {
    let (t, width) = g.shape(logits);
    let n = width - 1;
    if k_true > t {
        return Err(Error::Validation(format!("target size {k_true} exceeds {t} positions")));
    }
    if let Some(bad) = target.iter().find(|i| i.index() >= n) {
        return Err(Error::Validation(format!("target id {} outside vocabulary", bad.0)));
    }
    let ing = g.slice_cols(logits, 0, n)?;
    let pooled = g.max_rows(ing)?;
    let mut membership = vec![0.0; n];
    for i in target {
        membership[i.index()] = 1.0;
    }
    let set_loss = g.bce_with_logits(pooled, &membership)?;
    let eos = g.slice_cols(logits, n, 1)?;
    let mut onehot = vec![0.0; t];
    if k_true < t {
        onehot[k_true] = 1.0;
    }
    let card_loss = g.bce_with_logits(eos, &onehot)?;
    g.add(set_loss, card_loss)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditOptions {
    pub hard_filter: bool,
    /// Sample K with this seed instead of the deterministic threshold rule.
    pub sample_seed: Option<u64>,
}

/// score → pool → K → top-k, then optionally drop banned ingredients.
pub fn edit_ingredients(
    model: &EditorModel,
    input: &EditorInput,
    spec: Option<&ConstraintSpec>,
    opts: EditOptions,
) -> Result<EditorPrediction> {
    if !model.trained {
        return Err(Error::Validation("editor model has not been trained".into()));
    }
    predict(model, input, spec, opts)
}

fn predict(
    model: &EditorModel,
    input: &EditorInput,
    spec: Option<&ConstraintSpec>,
    opts: EditOptions,
) -> Result<EditorPrediction> {
    let t = model.inference_positions(input);
    let logits = model.score_positions(input, t)?;
    let pooled = pool_scores(&logits);
    let eos = logits.eos();
    let k = match opts.sample_seed {
        Some(seed) => predict_cardinality(&eos, &mut stream(seed, Stream::Cardinality)),
        None => deterministic_cardinality(&eos),
    }
    .min(pooled.len());
    let mut selected = select_top_k(&pooled, k);
    let mut filtered_out = BTreeSet::new();
    if opts.hard_filter {
        if let Some(spec) = spec {
            let kept = filter_ingredient_list(&selected, spec);
            filtered_out = selected.difference(&kept).copied().collect();
            selected = kept;
        }
    }
    Ok(EditorPrediction {
        pooled_probs: pooled.iter().map(|&x| sigmoid(x)).collect(),
        k_predicted: k,
        selected,
        eos_probs: eos.iter().map(|&x| sigmoid(x)).collect(),
        filtered_out,
    })
}

/// JSON dump of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub base_id: String,
    pub constraint: ConstraintId,
    pub selected: Vec<String>,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditorExample {
    pub base_id: String,
    pub input: EditorInput,
    pub target: BTreeSet<IngredientId>,
}

/// Joins pairs with their recipes.
pub fn build_examples(pairs: &[RecipePair], recipes: &HashMap<String, Recipe>) -> Result<Vec<EditorExample>> {
    pairs
        .iter()
        .map(|p| {
            let get = |id: &str| {
                recipes
                    .get(id)
                    .ok_or_else(|| Error::Validation(format!("pair refers to unknown recipe `{id}`")))
            };
            let base = get(&p.base_id)?;
            let target = get(&p.target_id)?;
            Ok(EditorExample {
                base_id: p.base_id.clone(),
                input: EditorInput::from_recipe(base, p.constraint),
                target: target.ingredient_set(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditorTrainConfig {
    pub editor: EditorConfig,
    pub optimizer: LambConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without validation-F1 improvement.
    pub patience: Option<usize>,
    pub min_name_count: usize,
    pub seed: u64,
}

impl Default for EditorTrainConfig {
    fn default() -> Self {
        Self {
            editor: EditorConfig::default(),
            optimizer: LambConfig::default(),
            epochs: 100,
            batch_size: 16,
            patience: Some(10),
            min_name_count: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Epoch-at-a-time training loop.
pub struct EditorTrainer<'a> {
    pub model: EditorModel,
    examples: &'a [EditorExample],
    optimizer: Lamb,
    order: Vec<usize>,
    rng: rand_chacha::ChaCha8Rng,
    batch_size: usize,
    epoch: usize,
}

impl<'a> EditorTrainer<'a> {
    pub fn new(
        examples: &'a [EditorExample],
        vocab: &IngredientVocab,
        cfg: &EditorTrainConfig,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Validation("no training pairs".into()));
        }
        let names =
            WordVocab::build(examples.iter().map(|e| e.input.name_tokens.as_slice()), cfg.min_name_count, []);
        let model = EditorModel::new(cfg.editor, names, vocab.clone(), cfg.seed)?;
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

    fn training_positions(&self, ex: &EditorExample) -> Result<usize> {
        let t = (ex.input.base_ingredient_ids.len() + self.model.config.margin).max(ex.target.len() + 1);
        if t > self.model.config.max_positions {
            return Err(Error::Validation(format!(
                "example `{}` needs {t} decoder positions, more than {}",
                ex.base_id, self.model.config.max_positions
            )));
        }
        Ok(t)
    }

    /// One pass over the shuffled examples; returns the mean loss.
    pub fn epoch(&mut self) -> Result<f64> {
        use rand::seq::SliceRandom;
        self.order.shuffle(&mut self.rng);
        let order = self.order.clone();
        let mut total = 0.0;
        for batch in order.chunks(self.batch_size) {
            for &i in batch {
                let ex = &self.examples[i];
                let t = self.training_positions(ex)?;
                let grads = {
                    let mut g = Graph::new(&self.model.store);
                    let logits = self.model.forward(&mut g, &ex.input, t)?;
                    let loss = editor_loss(&mut g, logits, &ex.target, ex.target.len())?;
                    let lv = g.scalar(loss);
                    if !lv.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite editor loss at epoch {} on `{}`",
                            self.epoch + 1,
                            ex.base_id
                        )));
                    }
                    total += lv;
                    g.backward(loss)?
                };
                self.model.store.accumulate_grads(&grads);
            }
            self.model.store.scale_grads(1.0 / batch.len() as f64);
            self.optimizer.step(&mut self.model.store)?;
        }
        self.epoch += 1;
        self.model.trained = true;
        Ok(total / self.examples.len() as f64)
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }
}

/// Mean set F1 of deterministic predictions (no filtering) on `examples`.
pub fn mean_f1(model: &EditorModel, examples: &[EditorExample]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for ex in examples {
        let p = predict(model, &ex.input, None, EditOptions::default())?;
        sum += set_f1(&p.selected, &ex.target);
    }
    Ok(sum / examples.len() as f64)
}

/// Trains for up to `cfg.epochs`, keeping the parameters of the best
/// validation epoch when a validation set is given.
pub fn train_editor(
    train: &[EditorExample],
    val: &[EditorExample],
    vocab: &IngredientVocab,
    cfg: &EditorTrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &EditorModel),
) -> Result<(EditorModel, TrainReport)> {
    let mut trainer = EditorTrainer::new(train, vocab, cfg)?;
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let train_loss = trainer.epoch()?;
        let val_f1 = if val.is_empty() { None } else { Some(mean_f1(&trainer.model, val)?) };
        let entry = EpochLog { epoch, train_loss, val_f1 };
        on_epoch(&entry, &trainer.model);
        log.push(entry);
        if let Some(f) = val_f1 {
            if best.as_ref().is_none_or(|(b, _, _)| f > *b) {
                best = Some((f, epoch, trainer.model.store.clone()));
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
    Ok((model, TrainReport { log, best_epoch, stopped_early }))
}
