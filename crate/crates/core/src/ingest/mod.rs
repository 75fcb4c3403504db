//! Reading tweet records, source catalogs and bot scores.

mod botscore;
mod catalog;
mod record;
pub mod service;
mod url;

pub use self::botscore::{
    load_bot_scores, write_bot_scores, BotScoreEntry, BotScoreLoad, BotScoreTable, Provenance, RowError,
};
pub use self::catalog::{classify_domain, load_source_catalog, SourceCatalog, SourceClass};
pub use self::record::{
    parse_tweet_bytes, parse_tweet_stream, write_tweet_stream, LineError, LineErrorKind, ParseTally,
    ParsedStream, TweetRecord,
};
pub use self::service::{fetch_bot_score, BotScoreClient, FetchError, FetchedScore};
pub use self::url::{normalize_url, registered_domain, NormalizedUrl};

pub(crate) use self::botscore::csv_err;
