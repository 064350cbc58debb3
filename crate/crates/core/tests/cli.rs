use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use recipe_edit::corpus::io::{load_pairs, read_jsonl, write_jsonl};
use recipe_edit::corpus::{IngredientVocab, Recipe};
use recipe_edit::eval::EditedRecipe;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recipe-edit"))
        .current_dir(dir)
        .env_remove("RECIPE_EDIT_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Copies the toy corpus and a config next to each other and builds the
/// dataset into `data/`.
fn dataset(dir: &Path) {
    std::fs::copy(fixture("toy_corpus.jsonl"), dir.join("toy_corpus.jsonl")).unwrap();
    std::fs::copy(fixture("smoke.toml"), dir.join("smoke.toml")).unwrap();
    let o = run(dir, &["--config", "smoke.toml", "build-dataset", "--out", "data"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["frobnicate"])), 1);
    assert_eq!(code(&run(d, &["--help"])), 0);
    assert_eq!(code(&run(d, &["--config", "missing.toml", "build-dataset", "--out", "x"])), 1);
    std::fs::write(d.join("bad.toml"), "[train]\nlearning_rate = 3\n").unwrap();
    let o = run(d, &["--config", "bad.toml", "build-dataset", "--out", "x"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
    // no run directory
    assert_eq!(code(&run(d, &["build-dataset", "--corpus", "nowhere.jsonl"])), 1);
    assert_eq!(code(&run(d, &["build-dataset", "--corpus", "nowhere.jsonl", "--out", "x"])), 1);
    assert_eq!(code(&run(d, &["train", "ingredients", "--data", "nowhere", "--out", "y"])), 1);
}

#[test]
fn unreadable_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    std::fs::write(d.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let o = run(
        d,
        &[
            "edit",
            "--data",
            "data",
            "--editor",
            "junk.ckpt",
            "--generator",
            "junk.ckpt",
            "--base-id",
            "cd0",
            "--constraint",
            "dairy-free",
            "--out",
            "e",
        ],
    );
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn empty_corpus_builds_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    let o = run(d, &["build-dataset", "--corpus", "empty.jsonl", "--out", "data"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["recipes.jsonl", "pairs.jsonl", "train.jsonl", "val.jsonl", "test.jsonl"] {
        assert_eq!(std::fs::read_to_string(d.join("data").join(f)).unwrap(), "", "{f}");
    }
    assert!(d.join("data/manifest.json").exists());
}

#[test]
fn gold_outputs_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    let data = d.join("data");
    let vocab = IngredientVocab::load(&data.join("vocab.json")).unwrap();
    let recipes: HashMap<String, Recipe> = read_jsonl::<Recipe>(&data.join("recipes.jsonl"))
        .unwrap()
        .into_iter()
        .map(|r| (r.recipe_id.clone(), r))
        .collect();
    let pairs = load_pairs(&data.join("test.jsonl")).unwrap();
    assert!(!pairs.is_empty());
    let gold: Vec<EditedRecipe> = pairs
        .iter()
        .map(|p| {
            let t = &recipes[&p.target_id];
            EditedRecipe {
                base_id: p.base_id.clone(),
                constraint: p.constraint,
                ingredients: t.ingredient_ids.iter().map(|&i| vocab.name(i)).collect(),
                steps: t.steps_text.clone(),
            }
        })
        .collect();
    // one output per (base, constraint); duplicates would be ambiguous
    let mut seen = std::collections::BTreeSet::new();
    let gold: Vec<EditedRecipe> =
        gold.into_iter().filter(|g| seen.insert((g.base_id.clone(), g.constraint))).collect();
    write_jsonl(&d.join("gold.jsonl"), &gold).unwrap();
    let o = run(d, &["evaluate", "--data", "data", "--outputs", "gold.jsonl", "--out", "eval"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&d.join("eval/report.json"));
    let overall = &r["overall"];
    for k in ["iou", "f1", "rouge_l"] {
        assert!(overall[k].as_f64().unwrap() > 0.99, "{k}: {overall}");
    }
    assert_eq!(overall["list_violation_rate"], 0.0);
}

#[test]
fn rule_baseline_has_no_violations_and_renders_side_by_side() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    let o = run(
        d,
        &[
            "edit",
            "--system",
            "rule",
            "--data",
            "data",
            "--base-id",
            "cd0",
            "--constraint",
            "dairy-free",
            "--side-by-side",
            "--out",
            "dijon",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sbs = std::fs::read_to_string(d.join("dijon/side_by_side.txt")).unwrap();
    assert!(sbs.to_lowercase().contains("chicken dijon"), "{sbs}");
    assert!(sbs.contains("- butter") || sbs.contains("-butter") || sbs.contains("- heavy cream"), "{sbs}");
    let edited: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(d.join("dijon/edited.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    assert!(edited["removed"].as_array().unwrap().iter().any(|x| x == "butter"), "{edited}");

    let o = run(d, &["edit", "--system", "rule", "--data", "data", "--split", "test", "--out", "rule"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(d, &["check", "--data", "data", "--recipes", "rule/edited.jsonl", "--out", "check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = json(&d.join("check/check.json"));
    assert_eq!(c["list_violation_rate"], 0.0);
    assert_eq!(c["step_violation_rate"], 0.0);
}

#[test]
fn check_flags_violating_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    let bad = EditedRecipe {
        base_id: "cd0".into(),
        constraint: "dairy-free".parse().unwrap(),
        ingredients: vec!["chicken".into(), "butter".into()],
        steps: vec!["Melt the butter.".into()],
    };
    write_jsonl(&d.join("bad.jsonl"), &[bad]).unwrap();
    let o = run(d, &["check", "--data", "data", "--recipes", "bad.jsonl", "--out", "check"]);
    assert_eq!(code(&o), 1);
    let c = json(&d.join("check/check.json"));
    assert_eq!(c["list_violation_rate"], 1.0);
    assert_eq!(c["violations"][0]["list_violations"][0], "butter");
}
