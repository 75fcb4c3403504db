//! HTTP client for an external bot-scoring service.
//!
//! Requests are `GET {endpoint}?user_id=<id>` with an optional
//! `Authorization: Bearer <token>` header. A successful response body is
//! either a bare JSON number or a JSON object with a numeric `score` field,
//! in `[0, 1]`. Every successful lookup is written through to an on-disk
//! cache so repeated runs never re-query the same user.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use serde::Serialize;

use super::botscore::{csv_err, BotScoreTable, Provenance};
use crate::error::{Error, Result};

pub const CACHE_FILE: &str = "bot_scores.cache.csv";

/// Raw outcome of one request that reached the service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceReply {
    pub status: u16,
    pub body: String,
    pub retry_after: Option<Duration>,
}

pub trait ScoreTransport: Send + Sync {
    /// `Err` means the request did not produce an HTTP response.
    fn request(&self, user_id: &str) -> std::result::Result<ServiceReply, String>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        HttpTransport {
            agent: ureq::Agent::new_with_config(config),
            endpoint: endpoint.into(),
            token,
        }
    }
}

impl ScoreTransport for HttpTransport {
    fn request(&self, user_id: &str) -> std::result::Result<ServiceReply, String> {
        let mut req = self.agent.get(&self.endpoint).query("user_id", user_id);
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let resp = req.call().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = resp
            .into_body()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok(ServiceReply {
            status,
            body,
            retry_after,
        })
    }
}

/// Time source for rate limiting and backoff.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
    fn epoch_seconds(&self) -> i64;
}

pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            start: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }

    fn epoch_seconds(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct ClientSettings {
    /// Request budget; `None` disables pacing.
    pub requests_per_minute: Option<u32>,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for ClientSettings {
    fn default() -> Self {
        ClientSettings {
            requests_per_minute: Some(60),
            max_retries: 5,
            initial_backoff: Duration::from_secs(2),
            max_backoff: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FetchError {
    #[error("empty user id")]
    EmptyUserId,
    /// Recoverable: the user is excluded from bot-score analyses.
    #[error("score unavailable for {user_id} after {attempts} attempts: {last_error}")]
    Unavailable {
        user_id: String,
        attempts: u32,
        last_error: String,
    },
    #[error("protocol error for {user_id}: {message}")]
    Protocol { user_id: String, message: String },
    #[error("service rejected credentials (HTTP {0})")]
    Unauthorized(u16),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FetchedScore {
    pub score: f64,
    pub from_cache: bool,
    pub fetched_at: i64,
}

/// Write-through score cache. Readers share the map; writers append to the
/// backing file under an exclusive lock.
pub struct ScoreCache {
    path: Option<PathBuf>,
    entries: RwLock<BTreeMap<String, (f64, i64)>>,
    file: Mutex<Option<File>>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        ScoreCache {
            path: None,
            entries: RwLock::new(BTreeMap::new()),
            file: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) `dir/bot_scores.cache.csv`.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CACHE_FILE);
        let mut entries = BTreeMap::new();
        if path.exists() {
            let mut reader = csv::Reader::from_path(&path).map_err(csv_err)?;
            for row in reader.records() {
                let row = row.map_err(csv_err)?;
                let parsed = (
                    row.get(0),
                    row.get(1).and_then(|s| s.parse::<f64>().ok()),
                    row.get(2).and_then(|s| s.parse::<i64>().ok()),
                );
                match parsed {
                    (Some(u), Some(s), Some(t)) if (0.0..=1.0).contains(&s) => {
                        entries.insert(u.to_string(), (s, t));
                    }
                    _ => warn!("{}: skipping invalid cache row {:?}", path.display(), row),
                }
            }
        }
        let new_file = !path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if new_file {
            writeln!(file, "user_id,bot_score,fetched_at").map_err(|e| Error::io(&path, e))?;
        }
        Ok(ScoreCache {
            path: Some(path),
            entries: RwLock::new(entries),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, user_id: &str) -> Option<(f64, i64)> {
        self.entries.read().unwrap().get(user_id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn put(&self, user_id: &str, score: f64, at: i64) -> Result<()> {
        let mut file = self.file.lock().unwrap();
        if let Some(f) = file.as_mut() {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record([user_id, &score.to_string(), &at.to_string()])
                .map_err(csv_err)?;
            let line = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
            f.write_all(&line).map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
            f.flush().map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
        }
        self.entries
            .write()
            .unwrap()
            .insert(user_id.to_string(), (score, at));
        Ok(())
    }

    pub fn to_table(&self) -> BotScoreTable {
        let mut t = BotScoreTable::new();
        for (u, (s, at)) in self.entries.read().unwrap().iter() {
            t.insert(u.clone(), *s, Provenance::Service, Some(*at))
                .expect("cache scores are range-checked on insert");
        }
        t
    }
}

/// Parses a response body: a bare JSON number or an object with a `score` field.
pub fn parse_score_body(body: &str) -> std::result::Result<f64, String> {
    let value: serde_json::Value =
        serde_json::from_str(body.trim()).map_err(|e| format!("unparseable body: {e}"))?;
    let score = match &value {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::Object(map) => map.get("score").and_then(|v| v.as_f64()),
        _ => None,
    }
    .ok_or_else(|| format!("no numeric score in body {body:?}"))?;
    if (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(format!("score {score} outside [0, 1]"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FetchTally {
    pub requested: usize,
    pub cache_hits: usize,
    pub fetched: usize,
    pub unavailable: usize,
    pub protocol_errors: usize,
}

pub struct BotScoreClient<T: ScoreTransport = HttpTransport> {
    transport: T,
    cache: ScoreCache,
    settings: ClientSettings,
    clock: Box<dyn Clock>,
    last_request: Mutex<Option<Duration>>,
}

impl<T: ScoreTransport> BotScoreClient<T> {
    pub fn new(transport: T, cache: ScoreCache, settings: ClientSettings) -> Self {
        Self::with_clock(transport, cache, settings, Box::new(SystemClock::default()))
    }

    pub fn with_clock(
        transport: T,
        cache: ScoreCache,
        settings: ClientSettings,
        clock: Box<dyn Clock>,
    ) -> Self {
        BotScoreClient {
            transport,
            cache,
            settings,
            clock,
            last_request: Mutex::new(None),
        }
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let exp = self
            .settings
            .initial_backoff
            .saturating_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX))
            .min(self.settings.max_backoff);
        retry_after.map_or(exp, |r| r.max(exp))
    }

    fn paced_request(&self, user_id: &str) -> std::result::Result<ServiceReply, String> {
        let mut last = self.last_request.lock().unwrap();
        if let (Some(rpm), Some(prev)) = (self.settings.requests_per_minute, *last) {
            let interval = Duration::from_secs(60) / rpm.max(1);
            let elapsed = self.clock.now().saturating_sub(prev);
            if elapsed < interval {
                self.clock.sleep(interval - elapsed);
            }
        }
        *last = Some(self.clock.now());
        self.transport.request(user_id)
    }

    /// Returns the user's score from the cache, or queries the service and
    /// writes the result through to the cache.
    pub fn fetch_bot_score(&self, user_id: &str) -> std::result::Result<FetchedScore, FetchError> {
        if user_id.is_empty() {
            return Err(FetchError::EmptyUserId);
        }
        if let Some((score, at)) = self.cache.get(user_id) {
            return Ok(FetchedScore {
                score,
                from_cache: true,
                fetched_at: at,
            });
        }
        let attempts = self.settings.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            let reply = self.paced_request(user_id);
            let retry_after = match reply {
                Ok(r) if r.status == 200 => {
                    let score = parse_score_body(&r.body).map_err(|message| FetchError::Protocol {
                        user_id: user_id.to_string(),
                        message,
                    })?;
                    let at = self.clock.epoch_seconds();
                    if let Err(e) = self.cache.put(user_id, score, at) {
                        warn!("could not persist score for {user_id}: {e}");
                    }
                    return Ok(FetchedScore {
                        score,
                        from_cache: false,
                        fetched_at: at,
                    });
                }
                Ok(r) if r.status == 401 || r.status == 403 => {
                    return Err(FetchError::Unauthorized(r.status));
                }
                Ok(r) if r.status == 429 || r.status >= 500 => {
                    last_error = format!("HTTP {}", r.status);
                    r.retry_after
                }
                Ok(r) => {
                    return Err(FetchError::Unavailable {
                        user_id: user_id.to_string(),
                        attempts: attempt + 1,
                        last_error: format!("HTTP {}", r.status),
                    });
                }
                Err(e) => {
                    last_error = e;
                    None
                }
            };
            if attempt + 1 < attempts {
                let wait = self.backoff(attempt, retry_after);
                debug!("retrying {user_id} in {wait:?} ({last_error})");
                self.clock.sleep(wait);
            }
        }
        Err(FetchError::Unavailable {
            user_id: user_id.to_string(),
            attempts,
            last_error,
        })
    }

    /// Fetches scores for every user, skipping unavailable ones. Credential
    /// rejection aborts the whole batch.
    pub fn fetch_all<'a, I>(&self, users: I) -> Result<(BotScoreTable, FetchTally)>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut table = BotScoreTable::new();
        let mut tally = FetchTally::default();
        for user in users {
            tally.requested += 1;
            match self.fetch_bot_score(user) {
                Ok(f) => {
                    if f.from_cache {
                        tally.cache_hits += 1;
                    } else {
                        tally.fetched += 1;
                    }
                    table.insert(user, f.score, Provenance::Service, Some(f.fetched_at))?;
                }
                Err(FetchError::Unauthorized(code)) => {
                    return Err(Error::Service(format!("credentials rejected (HTTP {code})")));
                }
                Err(FetchError::Protocol { user_id, message }) => {
                    warn!("bot score for {user_id}: {message}");
                    tally.protocol_errors += 1;
                }
                Err(e) => {
                    warn!("{e}");
                    tally.unavailable += 1;
                }
            }
        }
        Ok((table, tally))
    }
}

pub fn fetch_bot_score<T: ScoreTransport>(
    client: &BotScoreClient<T>,
    user_id: &str,
) -> std::result::Result<FetchedScore, FetchError> {
    client.fetch_bot_score(user_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[derive(Default)]
    struct VirtualClock {
        now: Mutex<Duration>,
        sleeps: Mutex<Vec<Duration>>,
    }

    impl Clock for Arc<VirtualClock> {
        fn now(&self) -> Duration {
            *self.now.lock().unwrap()
        }
        fn sleep(&self, d: Duration) {
            *self.now.lock().unwrap() += d;
            self.sleeps.lock().unwrap().push(d);
        }
        fn epoch_seconds(&self) -> i64 {
            1_600_000_000 + self.now().as_secs() as i64
        }
    }

    /// Replays a fixed script of replies and records every request.
    struct Scripted {
        script: Mutex<Vec<std::result::Result<ServiceReply, String>>>,
        calls: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(mut script: Vec<std::result::Result<ServiceReply, String>>) -> Self {
            script.reverse();
            Scripted {
                script: Mutex::new(script),
                calls: Mutex::new(Vec::new()),
            }
        }
        fn calls(&self) -> Vec<String> {
            self.calls.lock().unwrap().clone()
        }
    }

    impl ScoreTransport for Scripted {
        fn request(&self, user_id: &str) -> std::result::Result<ServiceReply, String> {
            self.calls.lock().unwrap().push(user_id.to_string());
            self.script
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err("script exhausted".into()))
        }
    }

    fn reply(status: u16, body: &str) -> std::result::Result<ServiceReply, String> {
        Ok(ServiceReply {
            status,
            body: body.to_string(),
            retry_after: None,
        })
    }

    fn settings() -> ClientSettings {
        ClientSettings {
            requests_per_minute: None,
            max_retries: 3,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(10),
        }
    }

    fn client(
        script: Vec<std::result::Result<ServiceReply, String>>,
        cache: ScoreCache,
        settings: ClientSettings,
    ) -> (BotScoreClient<Scripted>, Arc<VirtualClock>) {
        let clock = Arc::new(VirtualClock::default());
        let c = BotScoreClient::with_clock(Scripted::new(script), cache, settings, Box::new(clock.clone()));
        (c, clock)
    }

    #[test]
    fn throttled_twice_then_ok() {
        let (c, clock) = client(
            vec![reply(429, ""), reply(429, ""), reply(200, r#"{"score":0.8}"#)],
            ScoreCache::in_memory(),
            settings(),
        );
        let got = c.fetch_bot_score("u1").unwrap();
        assert_eq!(got.score, 0.8);
        assert!(!got.from_cache);
        assert_eq!(c.transport().calls(), vec!["u1", "u1", "u1"]);
        assert_eq!(
            *clock.sleeps.lock().unwrap(),
            vec![Duration::from_millis(100), Duration::from_millis(200)]
        );
        assert_eq!(c.cache().get("u1").map(|(s, _)| s), Some(0.8));
    }

    #[test]
    fn zero_score_is_stored() {
        let (c, _) = client(vec![reply(200, "0.0")], ScoreCache::in_memory(), settings());
        assert_eq!(c.fetch_bot_score("u").unwrap().score, 0.0);
        let t = c.cache().to_table();
        assert_eq!(t.get("u"), Some(0.0));
        assert_eq!(t.entry("u").unwrap().provenance, Provenance::Service);
    }

    #[test]
    fn cached_user_makes_no_calls() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (c, _) = client(vec![reply(200, "0.3")], ScoreCache::open(dir.path()).unwrap(), settings());
            c.fetch_bot_score("u7").unwrap();
        }
        let (c, _) = client(vec![], ScoreCache::open(dir.path()).unwrap(), settings());
        let got = c.fetch_bot_score("u7").unwrap();
        assert!(got.from_cache);
        assert_eq!(got.score, 0.3);
        assert!(c.transport().calls().is_empty());
    }

    #[test]
    fn out_of_range_payload_is_protocol_error() {
        let (c, _) = client(vec![reply(200, r#"{"score":1.7}"#)], ScoreCache::in_memory(), settings());
        assert!(matches!(c.fetch_bot_score("u"), Err(FetchError::Protocol { .. })));
        assert!(c.cache().is_empty());
    }

    #[test]
    fn network_failures_exhaust_retries() {
        let script = (0..4).map(|_| Err("connection refused".to_string())).collect();
        let (c, clock) = client(script, ScoreCache::in_memory(), settings());
        match c.fetch_bot_score("u") {
            Err(FetchError::Unavailable { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(clock.sleeps.lock().unwrap().len(), 3);
    }

    #[test]
    fn retry_after_header_extends_backoff() {
        let throttled = Ok(ServiceReply {
            status: 429,
            body: String::new(),
            retry_after: Some(Duration::from_secs(5)),
        });
        let (c, clock) = client(vec![throttled, reply(200, "0.5")], ScoreCache::in_memory(), settings());
        c.fetch_bot_score("u").unwrap();
        assert_eq!(*clock.sleeps.lock().unwrap(), vec![Duration::from_secs(5)]);
    }

    #[test]
    fn unauthorized_is_not_retried() {
        let (c, _) = client(vec![reply(401, "")], ScoreCache::in_memory(), settings());
        assert_eq!(c.fetch_bot_score("u"), Err(FetchError::Unauthorized(401)));
        let (c, _) = client(vec![reply(403, "")], ScoreCache::in_memory(), settings());
        assert!(c.fetch_all(["u"]).is_err());
    }

    #[test]
    fn requests_are_paced() {
        let mut s = settings();
        s.requests_per_minute = Some(30);
        let (c, clock) = client(
            vec![reply(200, "0.1"), reply(200, "0.2"), reply(200, "0.3")],
            ScoreCache::in_memory(),
            s,
        );
        let (table, tally) = c.fetch_all(["a", "b", "c", "a"]).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(tally.fetched, 3);
        assert_eq!(tally.cache_hits, 1);
        assert_eq!(
            *clock.sleeps.lock().unwrap(),
            vec![Duration::from_secs(2), Duration::from_secs(2)]
        );
    }

    #[test]
    fn body_formats() {
        assert_eq!(parse_score_body("0.25"), Ok(0.25));
        assert_eq!(parse_score_body(r#"{"user_id":"x","score":1}"#), Ok(1.0));
        assert!(parse_score_body(r#"{"overall":0.2}"#).is_err());
        assert!(parse_score_body("-0.1").is_err());
        assert!(parse_score_body("nope").is_err());
    }

    #[test]
    fn empty_user_id() {
        let (c, _) = client(vec![], ScoreCache::in_memory(), settings());
        assert_eq!(c.fetch_bot_score(""), Err(FetchError::EmptyUserId));
    }
}
