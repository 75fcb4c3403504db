//! Synthetic scenarios with planted structure.
//!
//! Users sit in planted communities wired by a stochastic block model. Every
//! user posts URL-bearing tweets whose source is unreliable with the
//! community's planted rate; every sampled link `s → t` becomes a retweet by
//! `s` of one of `t`'s posts. Cascades add URLs posted by chosen original
//! posters and retweeted inside a controlled number of communities.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_bot_scores, write_tweet_stream, BotScoreTable, Provenance, TweetRecord};

pub const TWEETS_FILE: &str = "tweets.jsonl";
pub const UNRELIABLE_FILE: &str = "unreliable.txt";
pub const RELIABLE_FILE: &str = "reliable.txt";
pub const BOT_SCORES_FILE: &str = "bot_scores.csv";
pub const TRUTH_USERS_FILE: &str = "truth_users.csv";
pub const TRUTH_URLS_FILE: &str = "truth_urls.csv";

const EPOCH: i64 = 1_546_300_800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunitySpec {
    pub size: usize,
    /// Probability that a user's own post links an unreliable source.
    pub unreliable_rate: f64,
    #[serde(default)]
    pub bot_fraction: f64,
    #[serde(default = "default_bot_scores")]
    pub bot_scores: (f64, f64),
    #[serde(default = "default_human_scores")]
    pub human_scores: (f64, f64),
}

fn default_bot_scores() -> (f64, f64) {
    (0.8, 1.0)
}

fn default_human_scores() -> (f64, f64) {
    (0.0, 0.4)
}

impl CommunitySpec {
    pub fn new(size: usize, unreliable_rate: f64) -> Self {
        CommunitySpec {
            size,
            unreliable_rate,
            bot_fraction: 0.0,
            bot_scores: default_bot_scores(),
            human_scores: default_human_scores(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Bot,
    Human,
    #[default]
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSpec {
    /// Number of URLs planted with these settings.
    pub count: usize,
    pub origin_community: usize,
    #[serde(default = "one")]
    pub ops_per_url: usize,
    #[serde(default)]
    pub op_kind: OpKind,
    /// Link an unreliable (true) or reliable (false) source.
    pub unreliable: bool,
    pub retweets_per_url: usize,
    /// Communities reached: the origin and the next `breadth - 1` by index.
    #[serde(default = "one")]
    pub breadth: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub communities: Vec<CommunitySpec>,
    pub p_intra: f64,
    pub p_inter: f64,
    #[serde(default = "default_posts")]
    pub posts_per_user: usize,
    /// Reject specs whose communities cannot be internally connected.
    #[serde(default = "default_true")]
    pub require_connected: bool,
    #[serde(default = "default_unreliable")]
    pub unreliable_domains: Vec<String>,
    #[serde(default = "default_reliable")]
    pub reliable_domains: Vec<String>,
    #[serde(default)]
    pub cascades: Vec<CascadeSpec>,
}

fn default_posts() -> usize {
    3
}

fn default_true() -> bool {
    true
}

fn default_unreliable() -> Vec<String> {
    ["dailyhoax.example", "clickbait.example", "rumormill.example"]
        .map(String::from)
        .to_vec()
}

fn default_reliable() -> Vec<String> {
    ["gazette.example", "chronicle.example", "wire.example", "herald.example"]
        .map(String::from)
        .to_vec()
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} = {p} outside [0, 1]")))
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    check_prob(name, lo)?;
    check_prob(name, hi)?;
    if lo > hi {
        return Err(Error::Validation(format!("{name} range ({lo}, {hi}) is reversed")));
    }
    Ok(())
}

impl SyntheticSpec {
    /// Small two-community scenario with one confined cascade.
    pub fn demo() -> Self {
        let mut echo = CommunitySpec::new(60, 0.5);
        echo.bot_fraction = 0.2;
        SyntheticSpec {
            communities: vec![echo, CommunitySpec::new(60, 0.05)],
            p_intra: 0.15,
            p_inter: 0.005,
            posts_per_user: 3,
            require_connected: true,
            unreliable_domains: default_unreliable(),
            reliable_domains: default_reliable(),
            cascades: vec![CascadeSpec {
                count: 3,
                origin_community: 0,
                ops_per_url: 1,
                op_kind: OpKind::Bot,
                unreliable: true,
                retweets_per_url: 40,
                breadth: 1,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.communities.is_empty() {
            return Err(Error::Validation("at least one community is required".into()));
        }
        for (i, c) in self.communities.iter().enumerate() {
            if c.size < 2 {
                return Err(Error::Validation(format!("community {i} has size {} < 2", c.size)));
            }
            check_prob(&format!("communities[{i}].unreliable_rate"), c.unreliable_rate)?;
            check_prob(&format!("communities[{i}].bot_fraction"), c.bot_fraction)?;
            check_range(&format!("communities[{i}].bot_scores"), c.bot_scores)?;
            check_range(&format!("communities[{i}].human_scores"), c.human_scores)?;
        }
        check_prob("p_intra", self.p_intra)?;
        check_prob("p_inter", self.p_inter)?;
        if self.require_connected && self.p_intra == 0.0 {
            return Err(Error::Validation(
                "p_intra = 0 cannot connect any community; set require_connected = false".into(),
            ));
        }
        if self.posts_per_user == 0 && (self.p_intra > 0.0 || self.p_inter > 0.0) {
            return Err(Error::Validation("links need posts to retweet; posts_per_user must be >= 1".into()));
        }
        if self.unreliable_domains.is_empty() || self.reliable_domains.is_empty() {
            return Err(Error::Validation("both domain lists must be non-empty".into()));
        }
        let k = self.communities.len();
        for (i, c) in self.cascades.iter().enumerate() {
            if c.origin_community >= k {
                return Err(Error::Validation(format!(
                    "cascades[{i}].origin_community {} out of range",
                    c.origin_community
                )));
            }
            if c.breadth == 0 || c.breadth > k {
                return Err(Error::Validation(format!("cascades[{i}].breadth must be in 1..={k}")));
            }
            if c.ops_per_url == 0 || c.ops_per_url >= self.communities[c.origin_community].size {
                return Err(Error::Validation(format!(
                    "cascades[{i}].ops_per_url must be between 1 and the origin size minus one"
                )));
            }
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.communities.iter().map(|c| c.size).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthUser {
    pub author_id: String,
    pub community: usize,
    pub is_bot: bool,
    pub bot_score: f64,
    pub unreliable_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TruthUrl {
    pub url: String,
    /// `background` for users' own posts, `cascade` for planted URLs.
    pub kind: &'static str,
    pub origin_community: usize,
    pub breadth: usize,
    pub unreliable: bool,
    pub n_ops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub records: Vec<TweetRecord>,
    pub unreliable_domains: Vec<String>,
    pub reliable_domains: Vec<String>,
    pub bot_scores: BotScoreTable,
    pub users: Vec<TruthUser>,
    pub urls: Vec<TruthUrl>,
}

impl SyntheticData {
    /// Planted community of every user, in user order.
    pub fn truth_labels(&self) -> Vec<usize> {
        self.users.iter().map(|u| u.community).collect()
    }

    /// Writes the tweet file, catalogs, bot scores and ground truth.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(path, e))
        };
        write_tweet_stream(create(TWEETS_FILE)?, &self.records)?;
        for (name, list) in [
            (UNRELIABLE_FILE, &self.unreliable_domains),
            (RELIABLE_FILE, &self.reliable_domains),
        ] {
            let mut f = create(name)?;
            for d in list {
                writeln!(f, "{d}")?;
            }
            f.flush()?;
        }
        write_bot_scores(create(BOT_SCORES_FILE)?, &self.bot_scores)?;
        let err = crate::ingest::csv_err;
        let mut w = csv::Writer::from_writer(create(TRUTH_USERS_FILE)?);
        for u in &self.users {
            w.serialize(u).map_err(err)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(create(TRUTH_URLS_FILE)?);
        for u in &self.urls {
            w.serialize(u).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Index gaps between successes of independent Bernoulli(`p`) trials.
struct Skipper {
    log_q: f64,
    p: f64,
}

impl Skipper {
    fn new(p: f64) -> Self {
        Skipper {
            log_q: (1.0 - p).ln(),
            p,
        }
    }

    /// Failures before the next success, or `None` when `p = 0`.
    fn next(&self, rng: &mut ChaCha8Rng) -> Option<u64> {
        if self.p <= 0.0 {
            return None;
        }
        if self.p >= 1.0 {
            return Some(0);
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        let skip = (u.ln() / self.log_q).floor();
        Some(if skip >= u64::MAX as f64 { u64::MAX } else { skip as u64 })
    }
}

/// Samples `count` Bernoulli(`p`) trials and calls `hit` with each success
/// index.
fn sample_indices(count: u64, p: f64, rng: &mut ChaCha8Rng, mut hit: impl FnMut(u64)) {
    let s = Skipper::new(p);
    let mut i: u64 = 0;
    while let Some(skip) = s.next(rng) {
        i = match i.checked_add(skip) {
            Some(v) if v < count => v,
            _ => break,
        };
        hit(i);
        i += 1;
    }
}

/// Stochastic block model links over consecutive blocks of `sizes`.
///
/// Directed samples ordered pairs `(s, t)` with `s != t`; undirected samples
/// pairs `s < t` once.
pub fn sample_sbm(sizes: &[usize], p_intra: f64, p_inter: f64, directed: bool, rng: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
    let mut starts = Vec::with_capacity(sizes.len());
    let mut acc = 0usize;
    for &s in sizes {
        starts.push(acc);
        acc += s;
    }
    let mut edges = Vec::new();
    for (a, &na) in sizes.iter().enumerate() {
        for (b, &nb) in sizes.iter().enumerate() {
            if !directed && b < a {
                continue;
            }
            let (sa, sb) = (starts[a] as u64, starts[b] as u64);
            let (na, nb) = (na as u64, nb as u64);
            if a == b {
                let p = p_intra;
                if directed && na >= 2 {
                    // n·(n−1) off-diagonal cells, row-major with the diagonal removed
                    sample_indices(na * (na - 1), p, rng, |k| {
                        let row = k / (na - 1);
                        let mut col = k % (na - 1);
                        if col >= row {
                            col += 1;
                        }
                        edges.push(((sa + row) as u32, (sa + col) as u32));
                    });
                } else if !directed {
                    // strict upper triangle, row by row
                    for row in 0..na.saturating_sub(1) {
                        let len = na - row - 1;
                        sample_indices(len, p, rng, |k| {
                            edges.push(((sa + row) as u32, (sa + row + 1 + k) as u32));
                        });
                    }
                }
            } else {
                sample_indices(na * nb, p_inter, rng, |k| {
                    edges.push(((sa + k / nb) as u32, (sb + k % nb) as u32));
                });
            }
        }
    }
    edges
}

struct Emitter {
    records: Vec<TweetRecord>,
}

impl Emitter {
    fn post(&mut self, author: &str, urls: Vec<String>) -> usize {
        let i = self.records.len();
        self.records.push(TweetRecord {
            tweet_id: format!("t{i}"),
            author_id: author.to_string(),
            timestamp: EPOCH + i as i64,
            retweeted_author_id: None,
            retweeted_tweet_id: None,
            urls,
        });
        i
    }

    fn retweet(&mut self, author: &str, of: usize) {
        let i = self.records.len();
        let src = &self.records[of];
        let rec = TweetRecord {
            tweet_id: format!("t{i}"),
            author_id: author.to_string(),
            timestamp: EPOCH + i as i64,
            retweeted_author_id: Some(src.author_id.clone()),
            retweeted_tweet_id: Some(src.tweet_id.clone()),
            urls: src.urls.clone(),
        };
        self.records.push(rec);
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.communities.len();
    let mut users = Vec::with_capacity(spec.n_users());
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); k];
    let mut bot_scores = BotScoreTable::new();
    for (c, cs) in spec.communities.iter().enumerate() {
        for _ in 0..cs.size {
            let id = users.len();
            let is_bot = rng.random::<f64>() < cs.bot_fraction;
            let (lo, hi) = if is_bot { cs.bot_scores } else { cs.human_scores };
            let score = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let author_id = format!("u{id}");
            bot_scores.insert(author_id.clone(), score, Provenance::File, None)?;
            members[c].push(id as u32);
            users.push(TruthUser {
                author_id,
                community: c,
                is_bot,
                bot_score: score,
                unreliable_rate: cs.unreliable_rate,
            });
        }
    }

    let mut out = Emitter { records: Vec::new() };
    let mut truth_urls = Vec::new();
    let mut posts: Vec<Vec<usize>> = vec![Vec::new(); users.len()];
    for (id, u) in users.iter().enumerate() {
        for _ in 0..spec.posts_per_user {
            let unreliable = rng.random::<f64>() < u.unreliable_rate;
            let list = if unreliable {
                &spec.unreliable_domains
            } else {
                &spec.reliable_domains
            };
            let domain = list.choose(&mut rng).expect("validated non-empty");
            let url = format!("https://{domain}/a{}", out.records.len());
            truth_urls.push(TruthUrl {
                url: url.clone(),
                kind: "background",
                origin_community: u.community,
                breadth: 1,
                unreliable,
                n_ops: 1,
            });
            posts[id].push(out.post(&u.author_id, vec![url]));
        }
    }

    let sizes: Vec<usize> = spec.communities.iter().map(|c| c.size).collect();
    let mut links = sample_sbm(&sizes, spec.p_intra, spec.p_inter, true, &mut rng);
    links.shuffle(&mut rng);
    for (s, t) in links {
        let of = *posts[t as usize].choose(&mut rng).expect("posts_per_user >= 1");
        out.retweet(&users[s as usize].author_id, of);
    }

    for (ci, c) in spec.cascades.iter().enumerate() {
        let pool: Vec<u32> = members[c.origin_community]
            .iter()
            .copied()
            .filter(|&u| match c.op_kind {
                OpKind::Any => true,
                OpKind::Bot => users[u as usize].is_bot,
                OpKind::Human => !users[u as usize].is_bot,
            })
            .collect();
        if pool.len() < c.ops_per_url {
            return Err(Error::Validation(format!(
                "cascades[{ci}] needs {} {:?} posters but community {} has {}",
                c.ops_per_url,
                c.op_kind,
                c.origin_community,
                pool.len()
            )));
        }
        let reach: Vec<usize> = (0..c.breadth).map(|j| (c.origin_community + j) % k).collect();
        for j in 0..c.count {
            let list = if c.unreliable {
                &spec.unreliable_domains
            } else {
                &spec.reliable_domains
            };
            let domain = list.choose(&mut rng).expect("validated non-empty");
            let url = format!("https://{domain}/story-{ci}-{j}");
            let ops: BTreeSet<u32> = pool.choose_multiple(&mut rng, c.ops_per_url).copied().collect();
            let op_posts: Vec<usize> = ops
                .iter()
                .map(|&u| out.post(&users[u as usize].author_id, vec![url.clone()]))
                .collect();
            let mut emitted = 0;
            while emitted < c.retweets_per_url {
                let community = reach[rng.random_range(0..reach.len())];
                let &who = members[community].choose(&mut rng).expect("size >= 2");
                if ops.contains(&who) {
                    continue;
                }
                let of = *op_posts.choose(&mut rng).expect("ops_per_url >= 1");
                out.retweet(&users[who as usize].author_id, of);
                emitted += 1;
            }
            truth_urls.push(TruthUrl {
                url,
                kind: "cascade",
                origin_community: c.origin_community,
                breadth: c.breadth,
                unreliable: c.unreliable,
                n_ops: ops.len(),
            });
        }
    }

    Ok(SyntheticData {
        records: out.records,
        unreliable_domains: spec.unreliable_domains.clone(),
        reliable_domains: spec.reliable_domains.clone(),
        bot_scores,
        users,
        urls: truth_urls,
    })
}
