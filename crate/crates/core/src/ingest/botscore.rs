use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    File,
    Service,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BotScoreEntry {
    pub score: f64,
    pub provenance: Provenance,
    pub fetched_at: Option<i64>,
}

/// Per-user bot scores in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BotScoreTable {
    entries: BTreeMap<String, BotScoreEntry>,
}

pub(crate) fn check_score(score: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(Error::Domain(format!("bot score {score} outside [0, 1]")))
    }
}

impl BotScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        user_id: impl Into<String>,
        score: f64,
        provenance: Provenance,
        fetched_at: Option<i64>,
    ) -> Result<()> {
        let score = check_score(score)?;
        self.entries.insert(
            user_id.into(),
            BotScoreEntry {
                score,
                provenance,
                fetched_at,
            },
        );
        Ok(())
    }

    pub fn get(&self, user_id: &str) -> Option<f64> {
        self.entries.get(user_id).map(|e| e.score)
    }

    pub fn entry(&self, user_id: &str) -> Option<&BotScoreEntry> {
        self.entries.get(user_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BotScoreEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Adds entries for users not already present.
    pub fn merge_missing(&mut self, other: &BotScoreTable) {
        for (k, v) in &other.entries {
            self.entries.entry(k.clone()).or_insert(*v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based data row (the header is row 0).
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct BotScoreLoad {
    pub table: BotScoreTable,
    pub out_of_range: usize,
    pub errors: Vec<RowError>,
}

#[derive(Deserialize)]
struct ScoreRow {
    user_id: String,
    bot_score: String,
}

/// Reads a `user_id,bot_score` CSV. Out-of-range and non-numeric rows are
/// rejected individually; a missing file is fatal.
pub fn load_bot_scores(path: &Path) -> Result<BotScoreLoad> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        .clone();
    if headers.iter().next().is_some()
        && (!headers.iter().any(|h| h == "user_id") || !headers.iter().any(|h| h == "bot_score"))
    {
        return Err(Error::Input(format!(
            "{}: expected header user_id,bot_score",
            path.display()
        )));
    }
    let mut load = BotScoreLoad::default();
    for (i, row) in reader.deserialize::<ScoreRow>().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                load.errors.push(RowError {
                    row: row_no,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match row.bot_score.parse::<f64>() {
            Ok(s) if (0.0..=1.0).contains(&s) => {
                load.table.insert(row.user_id, s, Provenance::File, None)?;
            }
            Ok(s) => {
                load.out_of_range += 1;
                load.errors.push(RowError {
                    row: row_no,
                    message: format!("score {s} outside [0, 1]"),
                });
            }
            Err(_) => load.errors.push(RowError {
                row: row_no,
                message: format!("non-numeric score {:?}", row.bot_score),
            }),
        }
    }
    Ok(load)
}

pub fn write_bot_scores<W: Write>(sink: W, table: &BotScoreTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["user_id", "bot_score"]).map_err(csv_err)?;
    for (user, e) in table.iter() {
        w.write_record([user, &e.score.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Input(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> BotScoreLoad {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bs.csv");
        std::fs::write(&p, text).unwrap();
        load_bot_scores(&p).unwrap()
    }

    #[test]
    fn loads_in_range_rows() {
        let l = load("user_id,bot_score\nu1,0.39\n");
        assert_eq!(l.table.get("u1"), Some(0.39));
        assert_eq!(l.table.entry("u1").unwrap().provenance, Provenance::File);
    }

    #[test]
    fn rejects_out_of_range_and_non_numeric() {
        let l = load("user_id,bot_score\nu1,0.1\nu2,1.5\nu3,abc\nu4,NaN\n");
        assert_eq!(l.table.len(), 1);
        assert!(l.table.get("u2").is_none());
        assert_eq!(l.out_of_range, 2);
        assert_eq!(l.errors.len(), 3);
        assert_eq!(l.errors[1].row, 3);
    }

    #[test]
    fn header_only_is_empty() {
        let l = load("user_id,bot_score\n");
        assert!(l.table.is_empty());
        assert!(l.errors.is_empty());
    }

    #[test]
    fn missing_file_is_fatal() {
        assert!(load_bot_scores(Path::new("/nonexistent/bs.csv")).is_err());
    }

    #[test]
    fn write_then_load() {
        let mut t = BotScoreTable::new();
        t.insert("a", 0.25, Provenance::File, None).unwrap();
        t.insert("b,c", 1.0, Provenance::File, None).unwrap();
        let mut buf = Vec::new();
        write_bot_scores(&mut buf, &t).unwrap();
        let l = load(std::str::from_utf8(&buf).unwrap());
        assert_eq!(l.table, t);
    }
}
