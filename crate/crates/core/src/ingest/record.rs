//! Line-delimited tweet records.
//!
//! One JSON object per line with the fields `tweet_id`, `author_id`,
//! `timestamp`, optional `retweeted_author_id` / `retweeted_tweet_id`, and
//! `urls`. Unknown fields are ignored.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub author_id: String,
    /// UTC epoch seconds.
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retweeted_author_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retweeted_tweet_id: Option<String>,
    #[serde(default)]
    pub urls: Vec<String>,
}

impl TweetRecord {
    pub fn is_retweet(&self) -> bool {
        self.retweeted_author_id.is_some()
    }

    /// Checks the both-or-neither invariant on the retweet fields.
    pub fn validate(&self) -> std::result::Result<(), String> {
        match (&self.retweeted_author_id, &self.retweeted_tweet_id) {
            (Some(_), None) => Err("retweeted_author_id present without retweeted_tweet_id".into()),
            (None, Some(_)) => Err("retweeted_tweet_id present without retweeted_author_id".into()),
            _ => Ok(()),
        }
    }
}

/// A recoverable per-line failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub kind: LineErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineErrorKind {
    Malformed,
    DuplicateId,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ParseTally {
    pub lines: usize,
    pub records: usize,
    pub blank: usize,
    pub malformed: usize,
    pub duplicate_ids: usize,
}

#[derive(Debug, Default)]
pub struct ParsedStream {
    pub records: Vec<TweetRecord>,
    pub errors: Vec<LineError>,
    pub tally: ParseTally,
}

fn parse_line(text: &str) -> std::result::Result<TweetRecord, String> {
    let record: TweetRecord = serde_json::from_str(text).map_err(|e| e.to_string())?;
    record.validate()?;
    Ok(record)
}

enum LineOutcome {
    Blank,
    Record(TweetRecord),
    Bad(String),
}

fn classify_line(text: &str) -> LineOutcome {
    if text.trim().is_empty() {
        return LineOutcome::Blank;
    }
    match parse_line(text) {
        Ok(r) => LineOutcome::Record(r),
        Err(e) => LineOutcome::Bad(e),
    }
}

#[derive(Default)]
struct Collector {
    seen: HashSet<String>,
    out: ParsedStream,
}

impl Collector {
    fn push(&mut self, line: usize, outcome: LineOutcome) {
        self.out.tally.lines += 1;
        match outcome {
            LineOutcome::Blank => self.out.tally.blank += 1,
            LineOutcome::Bad(message) => {
                self.out.tally.malformed += 1;
                self.out.errors.push(LineError {
                    line,
                    kind: LineErrorKind::Malformed,
                    message,
                });
            }
            LineOutcome::Record(r) => {
                if self.seen.contains(&r.tweet_id) {
                    self.out.tally.duplicate_ids += 1;
                    self.out.errors.push(LineError {
                        line,
                        kind: LineErrorKind::DuplicateId,
                        message: format!("duplicate tweet_id {:?}", r.tweet_id),
                    });
                } else {
                    self.seen.insert(r.tweet_id.clone());
                    self.out.tally.records += 1;
                    self.out.records.push(r);
                }
            }
        }
    }
}

/// Parses a line-delimited record stream in file order.
///
/// Malformed lines and duplicate ids are reported in `errors` and counted in
/// the tally; an unreadable stream is fatal.
pub fn parse_tweet_stream<R: BufRead>(source: R) -> Result<ParsedStream> {
    let mut collector = Collector::default();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        collector.push(idx + 1, classify_line(&line));
    }
    Ok(collector.out)
}

/// Parses an in-memory buffer, sharding the JSON decoding across threads at
/// line boundaries. Output is identical to [`parse_tweet_stream`].
pub fn parse_tweet_bytes(data: &[u8]) -> Result<ParsedStream> {
    let text = std::str::from_utf8(data).map_err(|e| {
        std::io::Error::new(std::io::ErrorKind::InvalidData, e)
    })?;
    let lines: Vec<&str> = text.lines().collect();
    let outcomes: Vec<LineOutcome> = lines.par_iter().map(|l| classify_line(l)).collect();
    let mut collector = Collector::default();
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        collector.push(idx + 1, outcome);
    }
    Ok(collector.out)
}

pub fn write_tweet_stream<'a, W, I>(mut sink: W, records: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TweetRecord>,
{
    for r in records {
        serde_json::to_writer(&mut sink, r).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_record() {
        let parsed =
            parse_tweet_stream(r#"{"tweet_id":"1","author_id":"a","timestamp":0,"urls":[]}"#.as_bytes())
                .unwrap();
        assert_eq!(parsed.records.len(), 1);
        let r = &parsed.records[0];
        assert_eq!(r.tweet_id, "1");
        assert_eq!(r.author_id, "a");
        assert!(r.urls.is_empty());
        assert!(!r.is_retweet());
    }

    #[test]
    fn half_retweet_is_rejected() {
        let line = r#"{"tweet_id":"1","author_id":"a","timestamp":0,"retweeted_author_id":"b","urls":[]}"#;
        let parsed = parse_tweet_stream(line.as_bytes()).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].line, 1);
        assert_eq!(parsed.errors[0].kind, LineErrorKind::Malformed);
    }

    #[test]
    fn malformed_lines_are_tallied() {
        let data = concat!(
            r#"{"tweet_id":"1","author_id":"a","timestamp":0,"urls":[]}"#,
            "\n",
            "{not json\n",
            r#"{"tweet_id":"2","author_id":"b","timestamp":5,"urls":["x.it/a"],"extra":true}"#,
            "\n"
        );
        let parsed = parse_tweet_stream(data.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.tally.malformed, 1);
        assert_eq!(parsed.errors[0].line, 2);
        let again = parse_tweet_bytes(data.as_bytes()).unwrap();
        assert_eq!(again.records, parsed.records);
        assert_eq!(again.tally, parsed.tally);
    }

    #[test]
    fn duplicate_ids_are_tallied() {
        let data = concat!(
            r#"{"tweet_id":"1","author_id":"a","timestamp":0,"urls":[]}"#,
            "\n",
            r#"{"tweet_id":"1","author_id":"b","timestamp":0,"urls":[]}"#,
            "\n"
        );
        let parsed = parse_tweet_stream(data.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.tally.duplicate_ids, 1);
        assert_eq!(parsed.errors[0].kind, LineErrorKind::DuplicateId);
    }

    fn arb_record() -> impl Strategy<Value = TweetRecord> {
        (
            "[a-z0-9]{1,8}",
            "[a-zA-Z0-9_\"\\\\ ]{1,10}",
            any::<i64>(),
            proptest::option::of(("[a-z]{1,6}", "[0-9]{1,6}")),
            proptest::collection::vec("[ -~]{0,20}", 0..3),
        )
            .prop_map(|(id, author, ts, rt, urls)| TweetRecord {
                tweet_id: id,
                author_id: author,
                timestamp: ts,
                retweeted_author_id: rt.as_ref().map(|(a, _)| a.clone()),
                retweeted_tweet_id: rt.map(|(_, t)| t),
                urls,
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(records in proptest::collection::vec(arb_record(), 0..20)) {
            let mut seen = HashSet::new();
            let records: Vec<_> = records.into_iter().filter(|r| seen.insert(r.tweet_id.clone())).collect();
            let mut buf = Vec::new();
            write_tweet_stream(&mut buf, &records).unwrap();
            let parsed = parse_tweet_stream(buf.as_slice()).unwrap();
            prop_assert_eq!(parsed.tally.malformed, 0);
            prop_assert_eq!(parsed.records, records);
        }
    }
}
