//! JSON-lines readers and writers for corpus and pair files.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{RawRecipe, RecipePair};
use crate::error::{Error, Result};

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("value serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: &Path) -> Result<Vec<RawRecipe>> {
    read_jsonl(path)
}

pub fn save_corpus(path: &Path, recipes: &[RawRecipe]) -> Result<()> {
    write_jsonl(path, recipes)
}

pub fn load_pairs(path: &Path) -> Result<Vec<RecipePair>> {
    read_jsonl(path)
}

pub fn save_pairs(path: &Path, pairs: &[RecipePair]) -> Result<()> {
    write_jsonl(path, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::ConstraintId;

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_corpus(&p).unwrap().is_empty());
    }

    #[test]
    fn corpus_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let line = r#"{"id":"1","name":"Chicken Dijon","ingredients":["2 tbsp butter","chicken"],"steps":["Melt butter."],"tags":["low-calorie"]}"#;
        fs::write(&p, format!("{line}\n")).unwrap();
        let recipes = load_corpus(&p).unwrap();
        assert_eq!(recipes.len(), 1);
        assert_eq!(recipes[0].name, "Chicken Dijon");
        let q = dir.path().join("d.jsonl");
        save_corpus(&q, &recipes).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"base_id\":\"a\",\"target_id\":\"b\",\"constraint\":\"vegan\"}\n").unwrap();
        match load_pairs(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, "{\"base_id\":\"a\",\"target_id\":\"b\",\"constraint\":\"dairy-free\"}\n\nnot json\n")
            .unwrap();
        match load_pairs(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pairs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        let pairs = vec![RecipePair {
            base_id: "a".into(),
            target_id: "b".into(),
            constraint: ConstraintId::DairyFree,
        }];
        save_pairs(&p, &pairs).unwrap();
        assert_eq!(load_pairs(&p).unwrap(), pairs);
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "{\"base_id\":\"a\",\"target_id\":\"b\",\"constraint\":\"dairy-free\"}\n"
        );
    }
}
