use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run_dir::RunDir;
use super::{BuildArgs, CheckArgs, Cli, Command, EditArgs, EvaluateArgs, System, TrainArgs, TrainWhat};
use crate::constraint::{ConstraintId, ConstraintSet, ConstraintSpec};
use crate::corpus::io::{load_corpus, load_pairs, read_jsonl};
use crate::corpus::{
    build_vocab, pair_recipes, resolve_corpus, resolve_recipe, satisfies, split_dataset, AliasTable,
    IngredientId, IngredientVocab, Lexicon, RawRecipe, Recipe, RecipePair, Splits,
};
use crate::editor::{
    self, edit_ingredients, train_editor, EditOptions, EditorConfig, EditorInput, EditorModel,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_pairs, format_report, violation_rates, EditedRecipe, EvalContext, EvalReport, VerbLexicon,
};
use crate::generator::{
    build_generator_examples, build_word_vocab, generate_steps, train_generator, BlacklistTrie,
    GenerateOptions, GeneratorConfig, GeneratorInput, GeneratorModel,
};
use crate::nn::LambConfig;
use crate::rules::{check_steps_indexed, rule_edit_indexed, MentionIndex, StepViolation};

pub(super) fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = cli.out {
        cfg.paths.out = Some(o);
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    match cli.command {
        Command::BuildDataset(a) => build_dataset(cfg, a)?,
        Command::Train { what: TrainWhat::Ingredients(a) } => train_ingredients(cfg, a)?,
        Command::Train { what: TrainWhat::Steps(a) } => train_steps(cfg, a)?,
        Command::Edit(a) => edit(cfg, a)?,
        Command::Evaluate(a) => evaluate(cfg, a)?,
        Command::Check(a) => check(cfg, a)?,
    }
    Ok(())
}

fn existing(path: &Option<PathBuf>, what: &str) -> Result<Option<PathBuf>> {
    match path {
        Some(p) if !p.exists() => Err(Error::Config(format!("{what} {} not found", p.display()))),
        other => Ok(other.clone()),
    }
}

fn require(path: &Option<PathBuf>, what: &str, flag: &str) -> Result<PathBuf> {
    existing(path, what)?
        .ok_or_else(|| Error::Config(format!("no {what} given (use {flag} or the config file)")))
}

fn run_dir(cfg: &RunConfig) -> Result<RunDir> {
    let out =
        cfg.paths.out.as_ref().ok_or_else(|| Error::Config("no run directory given (use --out)".into()))?;
    RunDir::create(out)
}

fn lexicon(cfg: &RunConfig, run: &mut RunDir) -> Result<(Lexicon, AliasTable)> {
    let lex = match existing(&cfg.paths.lexicon, "lexicon directory")? {
        Some(d) => Lexicon::from_dir(&d)?,
        None => Lexicon::default(),
    };
    let aliases = match existing(&cfg.paths.aliases, "alias table")? {
        Some(p) => {
            run.input(&p)?;
            AliasTable::load(&p)?
        }
        None => AliasTable::bundled(),
    };
    Ok((lex, aliases))
}

fn constraints(cfg: &RunConfig, vocab: &IngredientVocab) -> Result<ConstraintSet> {
    let policy = cfg.dataset.rule_policy.into();
    match existing(&cfg.paths.constraints, "constraint directory")? {
        Some(d) => ConstraintSet::load(&d, vocab, policy),
        None => ConstraintSet::bundled(vocab, policy),
    }
}

/// Files written by `build-dataset`.
struct Dataset {
    vocab: IngredientVocab,
    recipes: Vec<Recipe>,
    map: HashMap<String, Recipe>,
    splits: Splits,
}

impl Dataset {
    fn load(cfg: &RunConfig, flag: &Option<PathBuf>, run: &mut RunDir) -> Result<Self> {
        let dir = require(&flag.clone().or_else(|| cfg.paths.data.clone()), "dataset directory", "--data")?;
        let mut file = |name: &str| -> Result<PathBuf> {
            let p = dir.join(name);
            if !p.exists() {
                return Err(Error::Config(format!("{} missing; run build-dataset first", p.display())));
            }
            run.input(&p)?;
            Ok(p)
        };
        let vocab = IngredientVocab::load(&file("vocab.json")?)?;
        let recipes: Vec<Recipe> = read_jsonl(&file("recipes.jsonl")?)?;
        let splits = Splits {
            train: load_pairs(&file("train.jsonl")?)?,
            val: load_pairs(&file("val.jsonl")?)?,
            test: load_pairs(&file("test.jsonl")?)?,
        };
        let map = recipes.iter().map(|r| (r.recipe_id.clone(), r.clone())).collect();
        Ok(Self { vocab, recipes, map, splits })
    }

    fn split(&self, name: &str) -> Result<&[RecipePair]> {
        match name {
            "train" => Ok(&self.splits.train),
            "val" => Ok(&self.splits.val),
            "test" => Ok(&self.splits.test),
            other => Err(Error::Config(format!("unknown split `{other}` (train, val or test)"))),
        }
    }

    fn recipe(&self, id: &str) -> Result<&Recipe> {
        self.map.get(id).ok_or_else(|| Error::Validation(format!("unknown recipe id `{id}`")))
    }
}

#[derive(Serialize)]
struct CountRow {
    constraint: String,
    kind: &'static str,
    pairs: usize,
    train: usize,
    val: usize,
    test: usize,
}

fn count_table(rows: &[CountRow]) -> String {
    let mut s = format!(
        "{:<13} {:<5} {:>7} {:>7} {:>5} {:>5}\n",
        "constraint", "kind", "pairs", "train", "val", "test"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<13} {:<5} {:>7} {:>7} {:>5} {:>5}",
            r.constraint, r.kind, r.pairs, r.train, r.val, r.test
        );
    }
    s
}

fn build_dataset(mut cfg: RunConfig, a: BuildArgs) -> Result<()> {
    if a.corpus.is_some() {
        cfg.paths.corpus = a.corpus;
    }
    if a.constraints.is_some() {
        cfg.paths.constraints = a.constraints;
    }
    let d = &mut cfg.dataset;
    d.min_recipe_count = a.min_recipe_count.unwrap_or(d.min_recipe_count);
    d.overlap_min = a.overlap_min.unwrap_or(d.overlap_min);
    d.n_val = a.n_val.unwrap_or(d.n_val);
    d.n_test = a.n_test.unwrap_or(d.n_test);
    cfg.validate()?;
    let corpus_path = require(&cfg.paths.corpus, "corpus", "--corpus")?;
    let mut run = run_dir(&cfg)?;
    run.input(&corpus_path)?;
    let (lex, aliases) = lexicon(&cfg, &mut run)?;
    let raw = load_corpus(&corpus_path)?;
    let (vocab, recipes) = if raw.is_empty() {
        (IngredientVocab::from_names::<&str>(&[], &aliases), Vec::new())
    } else {
        let vocab = build_vocab(&raw, cfg.dataset.min_recipe_count, &lex, &aliases)?;
        let recipes = resolve_corpus(&raw, &vocab, &lex, &aliases);
        (vocab, recipes)
    };
    let set = constraints(&cfg, &vocab)?;
    let pairs: Vec<RecipePair> =
        set.iter().flat_map(|spec| pair_recipes(&recipes, spec, cfg.dataset.overlap_min)).collect();
    let splits = if pairs.is_empty() {
        Splits::default()
    } else {
        split_dataset(&pairs, cfg.train.seed, cfg.dataset.n_val, cfg.dataset.n_test)?
    };
    run.write_json("vocab.json", &vocab)?;
    run.write_jsonl("recipes.jsonl", &recipes)?;
    run.write_jsonl("pairs.jsonl", &pairs)?;
    run.write_jsonl("train.jsonl", &splits.train)?;
    run.write_jsonl("val.jsonl", &splits.val)?;
    run.write_jsonl("test.jsonl", &splits.test)?;
    let count = |ps: &[RecipePair], c: ConstraintId| ps.iter().filter(|p| p.constraint == c).count();
    let mut rows: Vec<CountRow> = ConstraintId::ALL
        .iter()
        .map(|&c| CountRow {
            constraint: c.to_string(),
            kind: if c.is_hard() { "hard" } else { "soft" },
            pairs: count(&pairs, c),
            train: count(&splits.train, c),
            val: count(&splits.val, c),
            test: count(&splits.test, c),
        })
        .collect();
    rows.push(CountRow {
        constraint: "total".into(),
        kind: "",
        pairs: pairs.len(),
        train: splits.train.len(),
        val: splits.val.len(),
        test: splits.test.len(),
    });
    let table = count_table(&rows);
    run.write_text("counts.txt", &table)?;
    run.write_csv("counts.csv", &rows)?;
    let mut skipped = set.skipped_names.join("\n");
    if !skipped.is_empty() {
        skipped.push('\n');
    }
    run.write_text("skipped_constraint_names.txt", &skipped)?;
    print!("{} recipes, {} ingredients, {} pairs\n{table}", recipes.len(), vocab.len(), pairs.len());
    run.finish("build-dataset", cfg.train.seed, &cfg)?;
    Ok(())
}

fn apply_train_args(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(p) = a.preset {
        t.preset = p;
    }
    if !a.lr.is_empty() {
        t.learning_rates = a.lr.clone();
    }
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.patience = a.patience.unwrap_or(t.patience);
    cfg.flags.paired_data_only |= a.paired_data_only;
    cfg.flags.no_copy_attention |= a.no_copy_attention;
    if a.data.is_some() {
        cfg.paths.data = a.data.clone();
    }
    cfg.validate()
}

#[derive(Serialize)]
struct GridRow {
    seed: u64,
    lr: f64,
    epochs_run: usize,
    best_epoch: usize,
    stopped_early: bool,
    /// Validation F1 (editor) or validation loss (generator); final training
    /// loss when there is no validation split.
    selection_metric: String,
    score: f64,
    selected: bool,
}

#[derive(Serialize)]
struct EditorEpochRow {
    lr: f64,
    epoch: usize,
    train_loss: f64,
    val_f1: Option<f64>,
}

#[derive(Serialize)]
struct GeneratorEpochRow {
    lr: f64,
    epoch: usize,
    train_loss: f64,
    train_token_accuracy: f64,
    floor_hits: usize,
    val_loss: Option<f64>,
}

/// Index of the best score; ties keep the earlier entry.
fn best_index(scores: &[f64], higher_is_better: bool) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        let better = if higher_is_better { s > scores[best] } else { s < scores[best] };
        if better {
            best = i;
        }
    }
    best
}

fn train_ingredients(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    apply_train_args(&mut cfg, &a)?;
    let mut run = run_dir(&cfg)?;
    let data = Dataset::load(&cfg, &None, &mut run)?;
    let train = editor::build_examples(&data.splits.train, &data.map)?;
    let val = editor::build_examples(&data.splits.val, &data.map)?;
    if train.is_empty() {
        return Err(Error::Validation("the training split has no pairs".into()));
    }
    let t = cfg.train.clone();
    let mut grid = Vec::new();
    let mut models = Vec::new();
    for (i, &lr) in t.learning_rates.iter().enumerate() {
        let ecfg = editor::EditorTrainConfig {
            editor: EditorConfig { model: t.preset.model(), margin: t.margin, ..Default::default() },
            optimizer: LambConfig { lr, ..Default::default() },
            epochs: t.epochs,
            batch_size: t.batch_size,
            patience: cfg.patience(),
            min_name_count: 1,
            seed: t.seed,
        };
        let mut rows = Vec::new();
        let mut last_good: Option<EditorModel> = None;
        let result = train_editor(&train, &val, &data.vocab, &ecfg, |log, m| {
            rows.push(EditorEpochRow {
                lr,
                epoch: log.epoch,
                train_loss: log.train_loss,
                val_f1: log.val_f1,
            });
            last_good = Some(m.clone());
        });
        run.write_csv(&format!("epochs_lr{i}.csv"), &rows)?;
        let (model, report) = match result {
            Ok(x) => x,
            Err(e) => {
                if let Some(m) = last_good {
                    m.save(&run.path("editor.last_good.ckpt"))?;
                    run.record("editor.last_good.ckpt")?;
                }
                run.finish("train ingredients", t.seed, &cfg)?;
                return Err(e);
            }
        };
        let (metric, score) = if val.is_empty() {
            ("final_train_loss", report.log.last().map_or(f64::INFINITY, |l| l.train_loss))
        } else {
            ("val_f1", report.log.iter().filter_map(|l| l.val_f1).fold(f64::NEG_INFINITY, f64::max))
        };
        println!("lr {lr:e}: best epoch {} {metric} {score:.4}", report.best_epoch);
        grid.push(GridRow {
            seed: t.seed,
            lr,
            epochs_run: report.log.len(),
            best_epoch: report.best_epoch,
            stopped_early: report.stopped_early,
            selection_metric: metric.into(),
            score,
            selected: false,
        });
        models.push(model);
    }
    let scores: Vec<f64> = grid.iter().map(|g| g.score).collect();
    let best = best_index(&scores, !val.is_empty());
    grid[best].selected = true;
    models[best].save(&run.path("editor.ckpt"))?;
    run.record("editor.ckpt")?;
    run.write_csv("grid.csv", &grid)?;
    println!("selected lr {:e}", grid[best].lr);
    run.finish("train ingredients", t.seed, &cfg)?;
    Ok(())
}

/// Recipe ids touched by evaluation pairs.
fn held_out_ids(splits: &Splits) -> BTreeSet<&str> {
    splits.val.iter().chain(&splits.test).flat_map(|p| [p.base_id.as_str(), p.target_id.as_str()]).collect()
}

fn targets<'a>(data: &'a Dataset, pairs: &[RecipePair]) -> Result<Vec<&'a Recipe>> {
    let ids: BTreeSet<&str> = pairs.iter().map(|p| p.target_id.as_str()).collect();
    ids.into_iter().map(|id| data.recipe(id)).collect()
}

fn train_steps(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    apply_train_args(&mut cfg, &a)?;
    let mut run = run_dir(&cfg)?;
    let data = Dataset::load(&cfg, &None, &mut run)?;
    let t = cfg.train.clone();
    let train_recipes: Vec<&Recipe> = if cfg.flags.paired_data_only {
        targets(&data, &data.splits.train)?
    } else {
        let held = held_out_ids(&data.splits);
        data.recipes.iter().filter(|r| !held.contains(r.recipe_id.as_str())).collect()
    };
    let gcfg = GeneratorConfig {
        model: t.preset.model(),
        max_target_len: t.max_target_len,
        copy_attention: !cfg.flags.no_copy_attention,
        ..Default::default()
    };
    let words = build_word_vocab(&train_recipes, &data.vocab, t.min_word_count);
    let train = build_generator_examples(&train_recipes, &data.vocab, &words, &gcfg)?;
    let val = build_generator_examples(&targets(&data, &data.splits.val)?, &data.vocab, &words, &gcfg)?;
    if train.is_empty() {
        return Err(Error::Validation("no training recipes with ingredients and steps".into()));
    }
    let mut grid = Vec::new();
    let mut models = Vec::new();
    for (i, &lr) in t.learning_rates.iter().enumerate() {
        let tcfg = crate::generator::GeneratorTrainConfig {
            generator: gcfg,
            optimizer: LambConfig { lr, ..Default::default() },
            epochs: t.epochs,
            batch_size: t.batch_size,
            patience: cfg.patience(),
            min_word_count: t.min_word_count,
            seed: t.seed,
        };
        let mut rows = Vec::new();
        let mut last_good: Option<GeneratorModel> = None;
        let result = train_generator(&train, &val, words.clone(), &tcfg, |log, m| {
            rows.push(GeneratorEpochRow {
                lr,
                epoch: log.epoch,
                train_loss: log.train_loss,
                train_token_accuracy: log.train_token_accuracy,
                floor_hits: log.floor_hits,
                val_loss: log.val_loss,
            });
            last_good = Some(m.clone());
        });
        run.write_csv(&format!("epochs_lr{i}.csv"), &rows)?;
        let (model, report) = match result {
            Ok(x) => x,
            Err(e) => {
                if let Some(m) = last_good {
                    m.save(&run.path("generator.last_good.ckpt"))?;
                    run.record("generator.last_good.ckpt")?;
                }
                run.finish("train steps", t.seed, &cfg)?;
                return Err(e);
            }
        };
        let (metric, score) = if val.is_empty() {
            ("final_train_loss", report.log.last().map_or(f64::INFINITY, |l| l.train_loss))
        } else {
            ("val_loss", report.log.iter().filter_map(|l| l.val_loss).fold(f64::INFINITY, f64::min))
        };
        println!("lr {lr:e}: best epoch {} {metric} {score:.4}", report.best_epoch);
        grid.push(GridRow {
            seed: t.seed,
            lr,
            epochs_run: report.log.len(),
            best_epoch: report.best_epoch,
            stopped_early: report.stopped_early,
            selection_metric: metric.into(),
            score,
            selected: false,
        });
        models.push(model);
    }
    let scores: Vec<f64> = grid.iter().map(|g| g.score).collect();
    let best = best_index(&scores, false);
    grid[best].selected = true;
    models[best].save(&run.path("generator.ckpt"))?;
    run.record("generator.ckpt")?;
    run.write_csv("grid.csv", &grid)?;
    println!("selected lr {:e}", grid[best].lr);
    run.finish("train steps", t.seed, &cfg)?;
    Ok(())
}

/// One edited recipe as written by `edit`. Readable as an [`EditedRecipe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub base_id: String,
    pub base_name: String,
    pub constraint: ConstraintId,
    pub system: String,
    pub seed: u64,
    pub ingredients: Vec<String>,
    pub steps: Vec<String>,
    pub added: Vec<String>,
    pub removed: Vec<String>,
    /// Predicted ingredients dropped by the hard filter.
    pub filtered_out: Vec<String>,
    pub truncated: bool,
    pub hard_filter: bool,
    pub blacklist_active: bool,
    pub warnings: Vec<String>,
}

struct Share {
    editor: EditorModel,
    generator: GeneratorModel,
    tries: BTreeMap<ConstraintId, BlacklistTrie>,
}

fn names(vocab: &IngredientVocab, ids: impl IntoIterator<Item = IngredientId>) -> Vec<String> {
    ids.into_iter().map(|i| vocab.name(i)).collect()
}

fn edit(mut cfg: RunConfig, a: EditArgs) -> Result<()> {
    cfg.flags.hard_filter |= a.hard_filter;
    cfg.flags.blacklist |= a.blacklist;
    if a.editor.is_some() {
        cfg.paths.editor = a.editor.clone();
    }
    if a.generator.is_some() {
        cfg.paths.generator = a.generator.clone();
    }
    let mut run = run_dir(&cfg)?;
    let data = Dataset::load(&cfg, &a.data, &mut run)?;
    let set = constraints(&cfg, &data.vocab)?;

    let mut jobs: Vec<(Recipe, ConstraintId)> = Vec::new();
    if let Some(split) = &a.split {
        let mut seen = BTreeSet::new();
        for p in data.split(split)? {
            if seen.insert((p.base_id.clone(), p.constraint)) {
                jobs.push((data.recipe(&p.base_id)?.clone(), p.constraint));
            }
        }
    }
    if !a.base_ids.is_empty() || a.base_file.is_some() {
        let c = a
            .constraint
            .ok_or_else(|| Error::Config("--constraint is required with --base-id or --base-file".into()))?;
        for id in &a.base_ids {
            jobs.push((data.recipe(id)?.clone(), c));
        }
        if let Some(path) = existing(&a.base_file, "base recipe file")? {
            run.input(&path)?;
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let raw: RawRecipe =
                serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
            let (lex, aliases) = lexicon(&cfg, &mut run)?;
            let recipe = resolve_recipe(&raw, &data.vocab, &lex, &aliases).ok_or_else(|| {
                Error::Validation(format!("{}: recipe needs a name and steps", path.display()))
            })?;
            jobs.push((recipe, c));
        }
    }
    if jobs.is_empty() {
        return Err(Error::Config("nothing to edit (use --base-id, --base-file or --split)".into()));
    }

    let mut share = match a.system {
        System::Rule => None,
        System::Share => {
            let ep = require(&cfg.paths.editor, "editor checkpoint", "--editor")?;
            let gp = require(&cfg.paths.generator, "generator checkpoint", "--generator")?;
            run.input(&ep)?;
            run.input(&gp)?;
            let editor = EditorModel::load(&ep)?;
            if editor.ingredients != data.vocab {
                return Err(Error::Validation(
                    "editor checkpoint was trained on a different ingredient vocabulary".into(),
                ));
            }
            Some(Share { editor, generator: GeneratorModel::load(&gp)?, tries: BTreeMap::new() })
        }
    };
    let index = MentionIndex::new(&data.vocab);
    let seed = cfg.train.seed;
    let mut records = Vec::new();
    for (i, (base, c)) in jobs.iter().enumerate() {
        let spec = set.get(*c);
        let mut warnings = Vec::new();
        if satisfies(base, spec) {
            let w = format!("{} already satisfies {c}", base.recipe_id);
            eprintln!("warning: {w}");
            warnings.push(w);
        }
        let record = match share.as_mut() {
            None => {
                let r = rule_edit_indexed(base, spec, &data.vocab, &index);
                EditRecord {
                    ingredients: names(&data.vocab, r.ingredient_ids.iter().copied()),
                    steps: r.steps_text,
                    filtered_out: Vec::new(),
                    truncated: false,
                    system: "rule".into(),
                    ..blank_record(base, *c, seed, &cfg, warnings)
                }
            }
            Some(s) => {
                let opts = EditOptions {
                    hard_filter: cfg.flags.hard_filter,
                    sample_seed: a.sample_k.then(|| seed.wrapping_add(i as u64)),
                };
                let pred =
                    edit_ingredients(&s.editor, &EditorInput::from_recipe(base, *c), Some(spec), opts)?;
                let (steps, truncated) = if pred.selected.is_empty() {
                    warnings.push("no ingredients predicted; steps left empty".into());
                    (Vec::new(), false)
                } else {
                    let mut input =
                        GeneratorInput::from_ids(&pred.selected, &data.vocab, &s.generator.words)?;
                    input.token_ids.truncate(s.generator.config.max_input_len);
                    let input = GeneratorInput::new(input.token_ids)?;
                    let trie = cfg.flags.blacklist.then(|| {
                        s.tries
                            .entry(*c)
                            .or_insert_with(|| BlacklistTrie::new(spec, &data.vocab, &s.generator.words))
                            as &BlacklistTrie
                    });
                    let g = generate_steps(
                        &s.generator,
                        &input,
                        GenerateOptions { max_len: cfg.train.max_generate_len, blacklist: trie },
                    )?;
                    (g.steps, g.truncated)
                };
                EditRecord {
                    ingredients: names(&data.vocab, pred.selected.iter().copied()),
                    steps,
                    filtered_out: names(&data.vocab, pred.filtered_out.iter().copied()),
                    truncated,
                    system: "share".into(),
                    ..blank_record(base, *c, seed, &cfg, warnings)
                }
            }
        };
        records.push(with_diff(record, base, &data.vocab));
    }
    run.write_jsonl("edited.jsonl", &records)?;
    if a.side_by_side {
        let text: String = records
            .iter()
            .zip(&jobs)
            .map(|(r, (base, _))| side_by_side(base, r, &data.vocab))
            .collect::<Vec<_>>()
            .join("\n");
        run.write_text("side_by_side.txt", &text)?;
        print!("{text}");
    }
    println!("{} recipes edited", records.len());
    run.finish("edit", seed, &cfg)?;
    Ok(())
}

fn blank_record(
    base: &Recipe,
    c: ConstraintId,
    seed: u64,
    cfg: &RunConfig,
    warnings: Vec<String>,
) -> EditRecord {
    EditRecord {
        base_id: base.recipe_id.clone(),
        base_name: base.name(),
        constraint: c,
        system: String::new(),
        seed,
        ingredients: Vec::new(),
        steps: Vec::new(),
        added: Vec::new(),
        removed: Vec::new(),
        filtered_out: Vec::new(),
        truncated: false,
        hard_filter: cfg.flags.hard_filter,
        blacklist_active: cfg.flags.blacklist,
        warnings,
    }
}

fn with_diff(mut r: EditRecord, base: &Recipe, vocab: &IngredientVocab) -> EditRecord {
    let base_names: BTreeSet<String> =
        names(vocab, base.ingredient_ids.iter().copied()).into_iter().collect();
    let edited: BTreeSet<String> = r.ingredients.iter().cloned().collect();
    r.added = edited.difference(&base_names).cloned().collect();
    r.removed = base_names.difference(&edited).cloned().collect();
    r
}

const COLUMN: usize = 44;

fn wrap(text: &str, width: usize) -> Vec<String> {
    let mut lines = Vec::new();
    let mut line = String::new();
    for word in text.split_whitespace() {
        if !line.is_empty() && line.len() + 1 + word.len() > width {
            lines.push(std::mem::take(&mut line));
        }
        if !line.is_empty() {
            line.push(' ');
        }
        line.push_str(word);
    }
    if !line.is_empty() || lines.is_empty() {
        lines.push(line);
    }
    lines
}

/// Two text columns, base on the left and edit on the right. Removed
/// ingredients are marked `-`, added ones `+`.
fn side_by_side(base: &Recipe, r: &EditRecord, vocab: &IngredientVocab) -> String {
    let removed: BTreeSet<&str> = r.removed.iter().map(String::as_str).collect();
    let added: BTreeSet<&str> = r.added.iter().map(String::as_str).collect();
    let mark = |n: &str, set: &BTreeSet<&str>, sign: char| {
        if set.contains(n) {
            format!("{sign} {n}")
        } else {
            format!("  {n}")
        }
    };
    let left_ingr: Vec<String> =
        names(vocab, base.ingredient_ids.iter().copied()).iter().map(|n| mark(n, &removed, '-')).collect();
    let right_ingr: Vec<String> = r.ingredients.iter().map(|n| mark(n, &added, '+')).collect();
    let steps = |s: &[String]| -> Vec<String> {
        s.iter()
            .enumerate()
            .flat_map(|(i, t)| {
                wrap(t, COLUMN - 4).into_iter().enumerate().map(move |(j, l)| {
                    if j == 0 {
                        format!("{:>2}. {l}", i + 1)
                    } else {
                        format!("    {l}")
                    }
                })
            })
            .collect()
    };
    let mut out = String::new();
    let _ = writeln!(out, "{} ({}) -> {}", base.name(), base.recipe_id, r.constraint);
    let rule = "-".repeat(COLUMN * 2 + 3);
    let _ = writeln!(out, "{rule}");
    let mut block = |title_l: &str, title_r: &str, l: &[String], rr: &[String]| {
        let _ = writeln!(out, "{title_l:<COLUMN$} | {title_r}");
        for i in 0..l.len().max(rr.len()) {
            let a = l.get(i).map_or("", String::as_str);
            let b = rr.get(i).map_or("", String::as_str);
            let _ = writeln!(out, "{a:<COLUMN$} | {b}");
        }
        let _ = writeln!(out, "{rule}");
    };
    block("Base ingredients", "Edited ingredients", &left_ingr, &right_ingr);
    block("Base steps", "Edited steps", &steps(&base.steps_text), &steps(&r.steps));
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

#[derive(Serialize)]
struct ReportFile<'a> {
    seed: u64,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn verbs(cfg: &RunConfig, run: &mut RunDir) -> Result<VerbLexicon> {
    match existing(&cfg.paths.verbs, "verb lexicon")? {
        Some(p) => {
            run.input(&p)?;
            VerbLexicon::load(&p)
        }
        None => Ok(VerbLexicon::default()),
    }
}

fn evaluate(cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    let mut run = run_dir(&cfg)?;
    let data = Dataset::load(&cfg, &a.data, &mut run)?;
    let set = constraints(&cfg, &data.vocab)?;
    let outputs_path = require(&Some(a.outputs.clone()), "outputs file", "--outputs")?;
    run.input(&outputs_path)?;
    let outputs: Vec<EditedRecipe> = read_jsonl(&outputs_path)?;
    let pairs: Vec<RecipePair> = match &a.pairs {
        Some(p) => {
            let p = require(&Some(p.clone()), "pair file", "--pairs")?;
            run.input(&p)?;
            load_pairs(&p)?
        }
        None => data.split(a.split.as_deref().unwrap_or("test"))?.to_vec(),
    };
    let ctx = EvalContext::new(&data.vocab, &set, verbs(&cfg, &mut run)?);
    let report = evaluate_pairs(&outputs, &pairs, &data.map, &ctx)?;
    let text = format_report(&report);
    run.write_json("report.json", &ReportFile { seed: cfg.train.seed, report: &report })?;
    run.write_text("report.txt", &text)?;
    print!("{text}");
    run.finish("evaluate", cfg.train.seed, &cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct CheckRow {
    base_id: String,
    constraint: ConstraintId,
    list_violations: Vec<String>,
    step_violations: Vec<StepViolationRow>,
}

#[derive(Serialize)]
struct StepViolationRow {
    step: usize,
    ingredient: String,
    text: String,
}

#[derive(Serialize)]
struct CheckFile {
    seed: u64,
    n: usize,
    n_hard: usize,
    list_violation_rate: f64,
    step_violation_rate: f64,
    violations: Vec<CheckRow>,
}

fn check(cfg: RunConfig, a: CheckArgs) -> Result<()> {
    let mut run = run_dir(&cfg)?;
    let data = Dataset::load(&cfg, &a.data, &mut run)?;
    let set = constraints(&cfg, &data.vocab)?;
    let path = require(&Some(a.recipes.clone()), "recipes file", "--recipes")?;
    run.input(&path)?;
    let recipes: Vec<EditedRecipe> = read_jsonl(&path)?;
    let index = MentionIndex::new(&data.vocab);
    let mut triples = Vec::new();
    let mut rows = Vec::new();
    for r in &recipes {
        let spec: &ConstraintSpec = set.get(r.constraint);
        let ids: BTreeSet<IngredientId> = r.ingredients.iter().filter_map(|n| data.vocab.lookup(n)).collect();
        let list: Vec<String> = names(&data.vocab, ids.iter().copied().filter(|&i| spec.is_banned(i)));
        let steps: Vec<StepViolation> = check_steps_indexed(&r.steps, spec, &index);
        if !list.is_empty() || !steps.is_empty() {
            rows.push(CheckRow {
                base_id: r.base_id.clone(),
                constraint: r.constraint,
                list_violations: list,
                step_violations: steps
                    .iter()
                    .map(|v| StepViolationRow {
                        step: v.step,
                        ingredient: data.vocab.name(v.ingredient),
                        text: r.steps[v.step].clone(),
                    })
                    .collect(),
            });
        }
        triples.push((r.constraint, ids, r.steps.clone()));
    }
    let rates = violation_rates(&triples, &set, &index);
    let n_bad = rows.len();
    run.write_json(
        "check.json",
        &CheckFile {
            seed: cfg.train.seed,
            n: recipes.len(),
            n_hard: rates.n,
            list_violation_rate: rates.list_rate,
            step_violation_rate: rates.step_rate,
            violations: rows,
        },
    )?;
    println!(
        "{} recipes, {} hard; list violations {:.2}%, step violations {:.2}%",
        recipes.len(),
        rates.n,
        100.0 * rates.list_rate,
        100.0 * rates.step_rate
    );
    run.finish("check", cfg.train.seed, &cfg)?;
    if n_bad > 0 {
        return Err(Error::Validation(format!(
            "{n_bad} of {} recipes violate their constraint (see check.json)",
            recipes.len()
        )));
    }
    Ok(())
}
