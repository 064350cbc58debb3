//! C ABI over the recipe-edit library.
//!
//! Handles are opaque pointers created by a `*_load` function and released
//! with the matching `*_free`. Every fallible call returns a [`ReStatus`];
//! on failure [`re_last_error`] describes the problem. Strings returned
//! through `out_json` are owned by the caller and must be released with
//! [`re_string_free`]. Recipes are passed as JSON objects with `id`, `name`,
//! `ingredients`, `steps` and optional `tags`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use recipe_edit::corpus::{
    resolve_recipe, AliasTable, IngredientId, IngredientVocab, Lexicon, RawRecipe, Recipe,
};
use recipe_edit::editor::{edit_ingredients, EditOptions, EditorInput, EditorModel};
use recipe_edit::eval::rouge_l;
use recipe_edit::generator::{
    generate_steps, BlacklistTrie, GenerateOptions, GeneratorInput, GeneratorModel,
};
use recipe_edit::rules::{check_recipe, rule_edit_indexed, MentionIndex, RulePolicy};
use recipe_edit::{text, ConstraintId, ConstraintSet, Error};
use serde::Serialize;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    Io = 4,
    Config = 5,
    Validation = 6,
    UnknownConstraint = 7,
    Numeric = 8,
    Checkpoint = 9,
    Panic = 10,
}

/// Ask for a hard filter on the predicted ingredient list.
pub const RE_HARD_FILTER: u32 = 1;
/// Ask for banned-name blocking during step generation.
pub const RE_BLACKLIST: u32 = 2;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(ReStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => ReStatus::Io,
            Error::Parse { .. } => ReStatus::InvalidJson,
            Error::UnknownConstraint(_) => ReStatus::UnknownConstraint,
            Error::Config(_) => ReStatus::Config,
            Error::Validation(_) | Error::Shape(_) => ReStatus::Validation,
            Error::Numeric(_) => ReStatus::Numeric,
            Error::Checkpoint(_) => ReStatus::Checkpoint,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ReStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ReStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ReStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ReStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(ReStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn constraint_arg(p: *const c_char) -> Result<ConstraintId, Failure> {
    Ok(str_arg(p, "constraint")?.parse::<ConstraintId>()?)
}

unsafe fn write_out<T: Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), Failure> {
    let json = serde_json::to_string(value).expect("value serializes");
    let c = CString::new(json).map_err(|_| Failure(ReStatus::Validation, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn parse_recipe(json: &str, vocab: &IngredientVocab) -> Result<Recipe, Failure> {
    let raw: RawRecipe =
        serde_json::from_str(json).map_err(|e| Failure(ReStatus::InvalidJson, format!("recipe: {e}")))?;
    resolve_recipe(&raw, vocab, &Lexicon::default(), &AliasTable::bundled())
        .ok_or_else(|| Failure(ReStatus::Validation, "recipe needs a name and steps".into()))
}

fn names(vocab: &IngredientVocab, ids: impl IntoIterator<Item = IngredientId>) -> Vec<String> {
    ids.into_iter().map(|i| vocab.name(i)).collect()
}

/// Substitution-rule baseline and constraint checker over one vocabulary.
pub struct ReRules {
    vocab: IngredientVocab,
    constraints: ConstraintSet,
    index: MentionIndex,
}

/// Trained ingredient editor and step generator.
pub struct ReSystem {
    editor: EditorModel,
    generator: GeneratorModel,
    constraints: ConstraintSet,
    tries: RefCell<BTreeMap<ConstraintId, BlacklistTrie>>,
}

#[derive(Serialize)]
struct Edited {
    ingredients: Vec<String>,
    steps: Vec<String>,
    filtered_out: Vec<String>,
    truncated: bool,
}

#[derive(Serialize)]
struct Violations {
    list: Vec<String>,
    steps: Vec<(usize, String)>,
}

/// Null-terminated library version; static, never freed.
#[no_mangle]
pub extern "C" fn re_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn re_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned through an `out_json` argument.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn re_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a `vocab.json` written by `build-dataset` together with the bundled
/// constraint tables.
///
/// # Safety
/// `vocab_path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn re_rules_load(vocab_path: *const c_char, out: *mut *mut ReRules) -> ReStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let vocab = IngredientVocab::load(Path::new(str_arg(vocab_path, "vocab_path")?))?;
        let constraints = ConstraintSet::bundled(&vocab, RulePolicy::SkipUnknown)?;
        let index = MentionIndex::new(&vocab);
        *out = Box::into_raw(Box::new(ReRules { vocab, constraints, index }));
        Ok(())
    })
}

/// # Safety
/// `rules` must come from [`re_rules_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn re_rules_free(rules: *mut ReRules) {
    if !rules.is_null() {
        drop(Box::from_raw(rules));
    }
}

/// Rule-baseline edit of `recipe_json` for `constraint`. Writes
/// `{"ingredients", "steps", "filtered_out", "truncated"}`.
///
/// # Safety
/// Pointers must be valid; `out_json` receives a string to free with
/// [`re_string_free`].
#[no_mangle]
pub unsafe extern "C" fn re_rules_edit(
    rules: *const ReRules,
    recipe_json: *const c_char,
    constraint: *const c_char,
    out_json: *mut *mut c_char,
) -> ReStatus {
    guard(|| {
        let r = handle(rules, "rules")?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let recipe = parse_recipe(str_arg(recipe_json, "recipe_json")?, &r.vocab)?;
        let spec = r.constraints.get(constraint_arg(constraint)?);
        let edited = rule_edit_indexed(&recipe, spec, &r.vocab, &r.index);
        write_out(
            out_json,
            &Edited {
                ingredients: names(&r.vocab, edited.ingredient_ids),
                steps: edited.steps_text,
                filtered_out: Vec::new(),
                truncated: false,
            },
        )
    })
}

/// Checks a recipe against `constraint`. Writes the number of violations
/// to `out_count` and, when `out_json` is non-null, the details as
/// `{"list": [...], "steps": [[step, name], ...]}`.
///
/// # Safety
/// Pointers must be valid; `out_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn re_rules_check(
    rules: *const ReRules,
    recipe_json: *const c_char,
    constraint: *const c_char,
    out_count: *mut usize,
    out_json: *mut *mut c_char,
) -> ReStatus {
    guard(|| {
        let r = handle(rules, "rules")?;
        if out_count.is_null() {
            return Err(null("out_count"));
        }
        let recipe = parse_recipe(str_arg(recipe_json, "recipe_json")?, &r.vocab)?;
        let spec = r.constraints.get(constraint_arg(constraint)?);
        let report = check_recipe(&recipe, spec, &r.index);
        *out_count = report.list_violations.len() + report.step_violations.len();
        if !out_json.is_null() {
            write_out(
                out_json,
                &Violations {
                    list: names(&r.vocab, report.list_violations),
                    steps: report
                        .step_violations
                        .iter()
                        .map(|v| (v.step, r.vocab.name(v.ingredient)))
                        .collect(),
                },
            )?;
        }
        Ok(())
    })
}

/// Loads editor and generator checkpoints written by `train`.
///
/// # Safety
/// Paths must be valid C strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn re_system_load(
    editor_path: *const c_char,
    generator_path: *const c_char,
    out: *mut *mut ReSystem,
) -> ReStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let editor = EditorModel::load(Path::new(str_arg(editor_path, "editor_path")?))?;
        let generator = GeneratorModel::load(Path::new(str_arg(generator_path, "generator_path")?))?;
        let constraints = ConstraintSet::bundled(&editor.ingredients, RulePolicy::SkipUnknown)?;
        *out = Box::into_raw(Box::new(ReSystem {
            editor,
            generator,
            constraints,
            tries: RefCell::new(BTreeMap::new()),
        }));
        Ok(())
    })
}

/// # Safety
/// `system` must come from [`re_system_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn re_system_free(system: *mut ReSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Predicts an edited ingredient list and generates steps for it. `flags`
/// is a bitwise OR of [`RE_HARD_FILTER`] and [`RE_BLACKLIST`]; `max_len`
/// caps the generated tokens.
///
/// # Safety
/// Pointers must be valid; a handle must not be used from two threads at
/// once.
#[no_mangle]
pub unsafe extern "C" fn re_system_edit(
    system: *const ReSystem,
    recipe_json: *const c_char,
    constraint: *const c_char,
    flags: u32,
    max_len: usize,
    out_json: *mut *mut c_char,
) -> ReStatus {
    guard(|| {
        let s = handle(system, "system")?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let vocab = &s.editor.ingredients;
        let recipe = parse_recipe(str_arg(recipe_json, "recipe_json")?, vocab)?;
        let c = constraint_arg(constraint)?;
        let spec = s.constraints.get(c);
        let opts = EditOptions { hard_filter: flags & RE_HARD_FILTER != 0, sample_seed: None };
        let pred = edit_ingredients(&s.editor, &EditorInput::from_recipe(&recipe, c), Some(spec), opts)?;
        let (steps, truncated) = if pred.selected.is_empty() {
            (Vec::new(), false)
        } else {
            let mut input = GeneratorInput::from_ids(&pred.selected, vocab, &s.generator.words)?;
            input.token_ids.truncate(s.generator.config.max_input_len);
            let input = GeneratorInput::new(input.token_ids)?;
            let mut tries = s.tries.borrow_mut();
            let trie = (flags & RE_BLACKLIST != 0).then(|| {
                &*tries.entry(c).or_insert_with(|| BlacklistTrie::new(spec, vocab, &s.generator.words))
            });
            let g = generate_steps(&s.generator, &input, GenerateOptions { max_len, blacklist: trie })?;
            (g.steps, g.truncated)
        };
        write_out(
            out_json,
            &Edited {
                ingredients: names(vocab, pred.selected),
                steps,
                filtered_out: names(vocab, pred.filtered_out),
                truncated,
            },
        )
    })
}

/// ROUGE-L F-measure between two whitespace/punctuation-tokenized texts.
///
/// # Safety
/// `pred` and `gold` must be valid C strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn re_rouge_l(pred: *const c_char, gold: *const c_char, out: *mut f64) -> ReStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = text::tokenize(str_arg(pred, "pred")?);
        let g = text::tokenize(str_arg(gold, "gold")?);
        *out = rouge_l(&p, &g);
        Ok(())
    })
}
