//! Per-user and per-URL measures.
//!
//! Users get tallies of catalog-matched tweets (`T`, `T⁻`, `T⁺`), the
//! unreliable ratio `R = T⁻ / T` and the untrustworthiness score `U`. URLs
//! get a share vector over communities, its entropy, the set of original
//! posters and mean scores of the users spreading them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::Partition;
use crate::error::{Error, Result};
use crate::graph::NodeTable;
use crate::ingest::{classify_domain, normalize_url, BotScoreTable, NormalizedUrl, SourceCatalog, SourceClass, TweetRecord};

pub const DEFAULT_MIN_SHARES: u64 = 100;

// ---------------------------------------------------------------- URL index

/// Normalized URLs of a tweet collection, interned once.
///
/// Each tweet maps to its distinct URLs; a URL repeated inside one tweet
/// counts once. Unparseable URL strings are dropped and counted.
#[derive(Debug, Clone, Default)]
pub struct UrlIndex {
    urls: Vec<NormalizedUrl>,
    ids: HashMap<String, u32>,
    per_tweet: Vec<Box<[u32]>>,
    invalid: u64,
}

impl UrlIndex {
    pub fn build(tweets: &[TweetRecord]) -> Self {
        let normalized: Vec<(Vec<NormalizedUrl>, u64)> = tweets
            .par_iter()
            .map(|t| {
                let mut bad = 0;
                let mut out: Vec<NormalizedUrl> = Vec::with_capacity(t.urls.len());
                for raw in &t.urls {
                    match normalize_url(raw) {
                        Ok(n) => {
                            if !out.iter().any(|o| o.canonical == n.canonical) {
                                out.push(n);
                            }
                        }
                        Err(_) => bad += 1,
                    }
                }
                (out, bad)
            })
            .collect();
        let mut index = UrlIndex::default();
        index.per_tweet.reserve(normalized.len());
        for (urls, bad) in normalized {
            index.invalid += bad;
            let ids: Vec<u32> = urls
                .into_iter()
                .map(|n| match index.ids.get(&n.canonical) {
                    Some(&id) => id,
                    None => {
                        let id = index.urls.len() as u32;
                        index.ids.insert(n.canonical.clone(), id);
                        index.urls.push(n);
                        id
                    }
                })
                .collect();
            index.per_tweet.push(ids.into_boxed_slice());
        }
        index
    }

    pub fn urls(&self) -> &[NormalizedUrl] {
        &self.urls
    }

    pub fn id(&self, canonical: &str) -> Option<u32> {
        self.ids.get(canonical).copied()
    }

    /// Distinct URL ids of tweet `i`.
    pub fn tweet_urls(&self, i: usize) -> &[u32] {
        &self.per_tweet[i]
    }

    pub fn len(&self) -> usize {
        self.urls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.urls.is_empty()
    }

    /// URL strings that failed normalization.
    pub fn invalid_urls(&self) -> u64 {
        self.invalid
    }
}

// ------------------------------------------------------------ user tallies

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct UserTally {
    pub t: u64,
    pub t_minus: u64,
    pub t_plus: u64,
}

impl UserTally {
    /// `T⁻ / T`, or `None` when `T = 0`.
    pub fn ratio(&self) -> Option<f64> {
        (self.t > 0).then(|| self.t_minus as f64 / self.t as f64)
    }
}

/// Catalog-matched tweet counts per author. Retweets count for the
/// retweeter. A tweet with any unreliable URL counts as `T⁻`, otherwise one
/// with a reliable URL counts as `T⁺`. Authors with no match are absent.
pub fn user_tallies(tweets: &[TweetRecord], catalog: &SourceCatalog) -> BTreeMap<String, UserTally> {
    user_tallies_indexed(tweets, &UrlIndex::build(tweets), catalog)
}

pub fn user_tallies_indexed(
    tweets: &[TweetRecord],
    index: &UrlIndex,
    catalog: &SourceCatalog,
) -> BTreeMap<String, UserTally> {
    let classes: Vec<SourceClass> = index.urls().iter().map(|u| classify_domain(u, catalog)).collect();
    let mut out: BTreeMap<String, UserTally> = BTreeMap::new();
    for (i, t) in tweets.iter().enumerate() {
        let mut unreliable = false;
        let mut reliable = false;
        for &id in index.tweet_urls(i) {
            match classes[id as usize] {
                SourceClass::Unreliable => unreliable = true,
                SourceClass::Reliable => reliable = true,
                SourceClass::Unknown => {}
            }
        }
        if !(unreliable || reliable) {
            continue;
        }
        let e = out.entry(t.author_id.clone()).or_default();
        e.t += 1;
        if unreliable {
            e.t_minus += 1;
        } else {
            e.t_plus += 1;
        }
    }
    out
}

// -------------------------------------------------------- untrustworthiness

/// Which closed form turns `(T, R, T_max)` into `U`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UntrustworthinessFormula {
    /// `2·R·A / (R + A)` with `A = T / T_max`.
    #[default]
    HarmonicMean,
    /// `((T_max + 1/R) / 2)⁻¹`, independent of the user's own `T`.
    Printed,
}

impl FromStr for UntrustworthinessFormula {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harmonic-mean" => Ok(Self::HarmonicMean),
            "printed" => Ok(Self::Printed),
            _ => Err(Error::Validation(format!("unknown untrustworthiness formula {s:?}"))),
        }
    }
}

impl fmt::Display for UntrustworthinessFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HarmonicMean => "harmonic-mean",
            Self::Printed => "printed",
        })
    }
}

pub fn untrustworthiness(t: u64, r: f64, t_max: u64) -> Result<f64> {
    untrustworthiness_with(UntrustworthinessFormula::HarmonicMean, t, r, t_max)
}

pub fn untrustworthiness_with(formula: UntrustworthinessFormula, t: u64, r: f64, t_max: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::Domain("untrustworthiness needs T >= 1".into()));
    }
    if t > t_max {
        return Err(Error::Domain(format!("T = {t} exceeds T_max = {t_max}")));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("R = {r} outside [0, 1]")));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let u = match formula {
        UntrustworthinessFormula::HarmonicMean => {
            let a = t as f64 / t_max as f64;
            2.0 * r * a / (r + a)
        }
        UntrustworthinessFormula::Printed => 2.0 * r / (r * t_max as f64 + 1.0),
    };
    Ok(u.min(1.0))
}

// ------------------------------------------------------------------ profiles

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UserProfile {
    pub user: u32,
    pub t: u64,
    pub t_minus: u64,
    pub t_plus: u64,
    pub r: f64,
    pub u: f64,
    pub bs: Option<f64>,
}

/// Scores for every node of a graph. Nodes with `T = 0` have no profile but
/// may still carry a bot score.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    profiles: Vec<Option<UserProfile>>,
    bs: Vec<Option<f64>>,
    t_max: u64,
    formula: UntrustworthinessFormula,
}

impl ProfileTable {
    pub fn build(
        tallies: &BTreeMap<String, UserTally>,
        nodes: &NodeTable,
        bot_scores: &BotScoreTable,
        formula: UntrustworthinessFormula,
    ) -> Result<Self> {
        let n = nodes.len();
        let bs: Vec<Option<f64>> = nodes.names().iter().map(|a| bot_scores.get(a)).collect();
        let t_max = tallies.values().map(|t| t.t).max().unwrap_or(0);
        let mut profiles = vec![None; n];
        for (author, tally) in tallies {
            let user = nodes
                .get(author)
                .ok_or_else(|| Error::Integrity(format!("author {author:?} is not a graph node")))?;
            let Some(r) = tally.ratio() else { continue };
            let u = untrustworthiness_with(formula, tally.t, r, t_max)?;
            profiles[user as usize] = Some(UserProfile {
                user,
                t: tally.t,
                t_minus: tally.t_minus,
                t_plus: tally.t_plus,
                r,
                u,
                bs: bs[user as usize],
            });
        }
        Ok(ProfileTable {
            profiles,
            bs,
            t_max,
            formula,
        })
    }

    pub fn t_max(&self) -> u64 {
        self.t_max
    }

    pub fn formula(&self) -> UntrustworthinessFormula {
        self.formula
    }

    pub fn node_count(&self) -> usize {
        self.bs.len()
    }

    pub fn profile(&self, node: u32) -> Option<&UserProfile> {
        self.profiles[node as usize].as_ref()
    }

    pub fn u(&self, node: u32) -> Option<f64> {
        self.profile(node).map(|p| p.u)
    }

    pub fn bs(&self, node: u32) -> Option<f64> {
        self.bs[node as usize]
    }

    /// Profiles in node order.
    pub fn iter(&self) -> impl Iterator<Item = &UserProfile> {
        self.profiles.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Writes `author_id,community,T,T_minus,T_plus,R,U,BS` for every node.
pub fn write_user_report<W: Write>(sink: W, profiles: &ProfileTable, partition: &Partition) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let err = crate::ingest::csv_err;
    w.write_record(["author_id", "community", "T", "T_minus", "T_plus", "R", "U", "BS"])
        .map_err(err)?;
    let nodes = partition.nodes();
    for i in 0..nodes.len() as u32 {
        let p = profiles.profile(i);
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            nodes.name(i).to_string(),
            Partition::name(partition.label(i)),
            p.map_or("0".into(), |p| p.t.to_string()),
            p.map_or("0".into(), |p| p.t_minus.to_string()),
            p.map_or("0".into(), |p| p.t_plus.to_string()),
            opt(p.map(|p| p.r.to_string())),
            opt(p.map(|p| p.u.to_string())),
            opt(profiles.bs(i).map(|b| b.to_string())),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

// ------------------------------------------------------------------- entropy

/// Shannon entropy (natural log) of the proportions of `counts`.
pub fn entropy<I: IntoIterator<Item = u64>>(counts: I) -> Result<f64> {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Domain("entropy of an empty share vector".into()));
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyClass {
    Low,
    Medium,
    High,
}

impl EntropyClass {
    pub const ALL: [EntropyClass; 3] = [EntropyClass::Low, EntropyClass::Medium, EntropyClass::High];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntropyClass::Low => "low",
            EntropyClass::Medium => "medium",
            EntropyClass::High => "high",
        }
    }
}

impl fmt::Display for EntropyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Upper bounds (inclusive) of the low and medium entropy classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyThresholds {
    pub low: f64,
    pub medium: f64,
}

impl Default for EntropyThresholds {
    fn default() -> Self {
        EntropyThresholds { low: 0.4, medium: 0.9 }
    }
}

impl EntropyThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.low.is_finite() && self.medium.is_finite() && 0.0 <= self.low && self.low <= self.medium) {
            return Err(Error::Validation(format!(
                "entropy thresholds must satisfy 0 <= low <= medium, got {} and {}",
                self.low, self.medium
            )));
        }
        Ok(())
    }

    pub fn classify(&self, h: f64) -> EntropyClass {
        if h <= self.low {
            EntropyClass::Low
        } else if h <= self.medium {
            EntropyClass::Medium
        } else {
            EntropyClass::High
        }
    }
}

/// Class of `h` under the default thresholds (0.4 and 0.9).
pub fn entropy_class(h: f64) -> EntropyClass {
    EntropyThresholds::default().classify(h)
}

// -------------------------------------------------------------- per-URL ops

fn tweet_has(t: &TweetRecord, url: &NormalizedUrl) -> bool {
    t.urls
        .iter()
        .any(|raw| normalize_url(raw).is_ok_and(|n| n.canonical == url.canonical))
}

/// Shares of `url` per community label; one per tweet or retweet.
pub fn share_vector(url: &NormalizedUrl, tweets: &[TweetRecord], partition: &Partition) -> Result<BTreeMap<u32, u64>> {
    let mut out = BTreeMap::new();
    for t in tweets.iter().filter(|t| tweet_has(t, url)) {
        let label = partition
            .label_of_author(&t.author_id)
            .ok_or_else(|| Error::Integrity(format!("author {:?} has no community", t.author_id)))?;
        *out.entry(label).or_insert(0) += 1;
    }
    Ok(out)
}

/// Authors of original (non-retweet) tweets containing `url`.
pub fn identify_ops(url: &NormalizedUrl, tweets: &[TweetRecord]) -> BTreeSet<String> {
    tweets
        .iter()
        .filter(|t| !t.is_retweet() && tweet_has(t, url))
        .map(|t| t.author_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrlDiffusionRecord {
    pub url: NormalizedUrl,
    pub shares_by_community: BTreeMap<u32, u64>,
    pub total_shares: u64,
    /// Shares that are retweets; the popularity measure behind success.
    pub retweets: u64,
    pub entropy: f64,
    pub entropy_class: EntropyClass,
    /// Node indices of original posters, ascending.
    pub ops: Vec<u32>,
    pub avg_u_retweeters: Option<f64>,
    pub avg_bs_retweeters: Option<f64>,
    pub avg_u_ops: Option<f64>,
    pub avg_bs_ops: Option<f64>,
    pub successful: bool,
}

impl UrlDiffusionRecord {
    /// False when the URL only appears in retweets.
    pub fn has_ops(&self) -> bool {
        !self.ops.is_empty()
    }
}

fn mean_of<I: Iterator<Item = Option<f64>>>(values: I) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Default)]
struct Accum {
    shares: BTreeMap<u32, u64>,
    retweets: u64,
    ops: BTreeSet<u32>,
    spreaders: BTreeSet<u32>,
}

fn finish(
    url: NormalizedUrl,
    acc: Accum,
    profiles: &ProfileTable,
    thresholds: &EntropyThresholds,
) -> Result<UrlDiffusionRecord> {
    let total_shares = acc.shares.values().sum();
    let h = entropy(acc.shares.values().copied())?;
    let retweeters: Vec<u32> = acc.spreaders.difference(&acc.ops).copied().collect();
    Ok(UrlDiffusionRecord {
        url,
        total_shares,
        retweets: acc.retweets,
        entropy: h,
        entropy_class: thresholds.classify(h),
        avg_u_retweeters: mean_of(retweeters.iter().map(|&v| profiles.u(v))),
        avg_bs_retweeters: mean_of(retweeters.iter().map(|&v| profiles.bs(v))),
        avg_u_ops: mean_of(acc.ops.iter().map(|&v| profiles.u(v))),
        avg_bs_ops: mean_of(acc.ops.iter().map(|&v| profiles.bs(v))),
        ops: acc.ops.into_iter().collect(),
        shares_by_community: acc.shares,
        successful: false,
    })
}

fn node_of(partition: &Partition, author: &str) -> Result<u32> {
    partition
        .nodes()
        .get(author)
        .ok_or_else(|| Error::Integrity(format!("author {author:?} has no community")))
}

/// Diffusion record of one URL, scanning every tweet. `None` if the URL is
/// never shared. `successful` is left false.
pub fn aggregate_url(
    url: &NormalizedUrl,
    tweets: &[TweetRecord],
    partition: &Partition,
    profiles: &ProfileTable,
    thresholds: &EntropyThresholds,
) -> Result<Option<UrlDiffusionRecord>> {
    let mut acc = Accum::default();
    for t in tweets.iter().filter(|t| tweet_has(t, url)) {
        let v = node_of(partition, &t.author_id)?;
        *acc.shares.entry(partition.label(v)).or_insert(0) += 1;
        if t.is_retweet() {
            acc.retweets += 1;
            acc.spreaders.insert(v);
        } else {
            acc.ops.insert(v);
        }
    }
    if acc.shares.is_empty() {
        return Ok(None);
    }
    finish(url.clone(), acc, profiles, thresholds).map(Some)
}

/// Diffusion records of every indexed URL in one pass, sorted by canonical
/// URL.
pub fn aggregate_all(
    tweets: &[TweetRecord],
    index: &UrlIndex,
    partition: &Partition,
    profiles: &ProfileTable,
    thresholds: &EntropyThresholds,
) -> Result<Vec<UrlDiffusionRecord>> {
    let mut accs: Vec<Accum> = (0..index.len()).map(|_| Accum::default()).collect();
    for (i, t) in tweets.iter().enumerate() {
        let ids = index.tweet_urls(i);
        if ids.is_empty() {
            continue;
        }
        let v = node_of(partition, &t.author_id)?;
        let label = partition.label(v);
        for &id in ids {
            let acc = &mut accs[id as usize];
            *acc.shares.entry(label).or_insert(0) += 1;
            if t.is_retweet() {
                acc.retweets += 1;
                acc.spreaders.insert(v);
            } else {
                acc.ops.insert(v);
            }
        }
    }
    let mut records = index
        .urls()
        .par_iter()
        .cloned()
        .zip(accs.into_par_iter())
        .map(|(url, acc)| finish(url, acc, profiles, thresholds))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.url.canonical.cmp(&b.url.canonical));
    Ok(records)
}

/// Records shared strictly more than `min_shares` times.
pub fn filter_urls(records: &[UrlDiffusionRecord], min_shares: u64) -> Vec<UrlDiffusionRecord> {
    records.iter().filter(|r| r.total_shares > min_shares).cloned().collect()
}

pub const URL_REPORT_HEADER: [&str; 10] = [
    "url",
    "total_shares",
    "entropy",
    "entropy_class",
    "n_ops",
    "avg_U_retweeters",
    "avg_BS_retweeters",
    "avg_U_ops",
    "avg_BS_ops",
    "successful",
];

pub fn write_url_report<W: Write>(sink: W, records: &[UrlDiffusionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let err = crate::ingest::csv_err;
    w.write_record(URL_REPORT_HEADER).map_err(err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.url.canonical.clone(),
            r.total_shares.to_string(),
            r.entropy.to_string(),
            r.entropy_class.to_string(),
            r.ops.len().to_string(),
            opt(r.avg_u_retweeters),
            opt(r.avg_bs_retweeters),
            opt(r.avg_u_ops),
            opt(r.avg_bs_ops),
            r.successful.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_retweet_graph;
    use crate::ingest::Provenance;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn tw(id: &str, author: &str, rt: Option<&str>, urls: &[&str]) -> TweetRecord {
        TweetRecord {
            tweet_id: id.into(),
            author_id: author.into(),
            timestamp: 0,
            retweeted_author_id: rt.map(String::from),
            retweeted_tweet_id: rt.map(|_| format!("{id}-src")),
            urls: urls.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn catalog() -> SourceCatalog {
        SourceCatalog::new(["fake.it"], ["news.it"])
    }

    #[test]
    fn tallies_follow_the_domination_rule() {
        let mut tweets: Vec<TweetRecord> = (0..4)
            .map(|i| tw(&format!("r{i}"), "v", None, &["http://news.it/a"]))
            .collect();
        tweets.push(tw("u", "v", None, &["fake.it/x"]));
        tweets.push(tw("k", "w", None, &["other.org/p"]));
        tweets.push(tw("m", "x", None, &["news.it/1", "fake.it/2"]));
        tweets.push(tw("d", "y", None, &["fake.it/1", "fake.it/1#frag"]));
        let t = user_tallies(&tweets, &catalog());
        assert_eq!(t["v"], UserTally { t: 5, t_minus: 1, t_plus: 4 });
        assert_eq!(t["v"].ratio(), Some(0.2));
        assert!(!t.contains_key("w"));
        assert_eq!(t["x"], UserTally { t: 1, t_minus: 1, t_plus: 0 });
        assert_eq!(t["y"].t, 1);
    }

    #[test]
    fn retweets_count_for_the_retweeter() {
        let tweets = vec![
            tw("1", "a", None, &["fake.it/x"]),
            tw("2", "b", Some("a"), &["fake.it/x"]),
        ];
        let t = user_tallies(&tweets, &catalog());
        assert_eq!(t["b"].t_minus, 1);
    }

    #[test]
    fn untrustworthiness_examples() {
        assert_eq!(untrustworthiness(100, 1.0, 100).unwrap(), 1.0);
        assert_eq!(untrustworthiness(7, 0.0, 100).unwrap(), 0.0);
        // 2 * 0.4 * 0.05 / 0.45 = 0.04 / 0.45 = 4/45
        let u = untrustworthiness(5, 0.4, 100).unwrap();
        assert!((u - 4.0 / 45.0).abs() < 1e-15);
        assert!(matches!(untrustworthiness(0, 0.5, 10), Err(Error::Domain(_))));
        assert!(matches!(untrustworthiness(11, 0.5, 10), Err(Error::Domain(_))));
        let p = untrustworthiness_with(UntrustworthinessFormula::Printed, 5, 0.4, 100).unwrap();
        assert!((p - 0.8 / 41.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy([10]).unwrap(), 0.0);
        assert!((entropy([3, 3, 3, 3, 3]).unwrap() - 5f64.ln()).abs() < 1e-15);
        let oracle = -(0.5f64 * 0.5f64.ln() + 0.3 * 0.3f64.ln() + 0.2 * 0.2f64.ln());
        assert!((entropy([50, 30, 20]).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 1.0297).abs() < 1e-4);
        assert!(matches!(entropy([]), Err(Error::Domain(_))));
        assert!(matches!(entropy([0, 0]), Err(Error::Domain(_))));
    }

    #[test]
    fn entropy_class_boundaries() {
        assert_eq!(entropy_class(0.0), EntropyClass::Low);
        assert_eq!(entropy_class(0.4), EntropyClass::Low);
        assert_eq!(entropy_class(0.9), EntropyClass::Medium);
        assert_eq!(entropy_class(1.61), EntropyClass::High);
        assert!(EntropyThresholds { low: 1.0, medium: 0.5 }.validate().is_err());
    }

    #[test]
    fn ops_exclude_retweeters() {
        let url = normalize_url("x.org/a").unwrap();
        let tweets = vec![
            tw("1", "A", None, &["x.org/a"]),
            tw("2", "B", Some("A"), &["x.org/a"]),
            tw("3", "C", Some("A"), &["x.org/a"]),
            tw("4", "D", None, &["https://www.x.org/a/"]),
        ];
        let ops: Vec<String> = identify_ops(&url, &tweets).into_iter().collect();
        assert_eq!(ops, ["A", "D"]);
        let only_rt = vec![tw("2", "B", Some("A"), &["x.org/a"])];
        assert!(identify_ops(&url, &only_rt).is_empty());
    }

    /// Ten-tweet fixture with hand-computed aggregates.
    fn fixture() -> (Vec<TweetRecord>, Partition, ProfileTable) {
        let tweets = vec![
            tw("1", "a", None, &["fake.it/s"]),
            tw("2", "b", Some("a"), &["fake.it/s"]),
            tw("3", "c", Some("a"), &["fake.it/s"]),
            tw("4", "d", Some("a"), &["fake.it/s"]),
            tw("5", "e", None, &["fake.it/s"]),
            tw("6", "b", Some("e"), &["fake.it/s"]),
            tw("7", "c", None, &["news.it/r"]),
            tw("8", "c", None, &["news.it/q"]),
            tw("9", "d", Some("c"), &["news.it/q"]),
            tw("10", "f", None, &["unlisted.org/z"]),
        ];
        let (g, _) = build_retweet_graph(&tweets);
        let nodes = g.nodes().clone();
        // a, b, c in community X; d, e, f in Y
        let labels: Vec<u32> = nodes
            .names()
            .iter()
            .map(|n| u32::from(!matches!(n.as_str(), "a" | "b" | "c")))
            .collect();
        let partition = Partition::from_labels(nodes.clone(), &labels).unwrap();
        let mut bots = BotScoreTable::new();
        for (u, s) in [("a", 0.9), ("b", 0.2), ("c", 0.4), ("e", 0.7)] {
            bots.insert(u, s, Provenance::File, None).unwrap();
        }
        let tallies = user_tallies(&tweets, &catalog());
        let profiles = ProfileTable::build(&tallies, &nodes, &bots, UntrustworthinessFormula::HarmonicMean).unwrap();
        (tweets, partition, profiles)
    }

    #[test]
    fn aggregate_matches_hand_computation() {
        let (tweets, partition, profiles) = fixture();
        let node = |n: &str| partition.nodes().get(n).unwrap();
        // tallies: a (1,1,0) b (2,2,0) c (3,1,2) d (2,1,1) e (1,1,0); T_max = 3
        assert_eq!(profiles.t_max(), 3);
        let hm = |r: f64, a: f64| 2.0 * r * a / (r + a);
        let u_a = hm(1.0, 1.0 / 3.0);
        let u_b = hm(1.0, 2.0 / 3.0);
        let u_c = hm(1.0 / 3.0, 1.0);
        let u_d = hm(0.5, 2.0 / 3.0);
        let u_e = hm(1.0, 1.0 / 3.0);
        for (n, u) in [("a", u_a), ("b", u_b), ("c", u_c), ("d", u_d), ("e", u_e)] {
            assert!((profiles.u(node(n)).unwrap() - u).abs() < 1e-15, "{n}");
        }
        assert!(profiles.profile(node("f")).is_none());

        let thresholds = EntropyThresholds::default();
        let url = normalize_url("fake.it/s").unwrap();
        let r = aggregate_url(&url, &tweets, &partition, &profiles, &thresholds)
            .unwrap()
            .unwrap();
        // shares: a,b,c,b in X (4); d,e in Y (2)
        assert_eq!(r.total_shares, 6);
        assert_eq!(r.retweets, 4);
        let x = partition.label(node("a"));
        let y = partition.label(node("d"));
        assert_eq!(r.shares_by_community, BTreeMap::from([(x, 4), (y, 2)]));
        let h = -(4.0 / 6.0 * (4.0f64 / 6.0).ln() + 2.0 / 6.0 * (2.0f64 / 6.0).ln());
        assert!((r.entropy - h).abs() < 1e-15);
        assert_eq!(r.entropy_class, EntropyClass::Medium);
        // OPs a, e; retweeters b, c, d
        let mut ops = vec![node("a"), node("e")];
        ops.sort();
        assert_eq!(r.ops, ops);
        assert!((r.avg_u_retweeters.unwrap() - (u_b + u_c + u_d) / 3.0).abs() < 1e-15);
        assert!((r.avg_bs_retweeters.unwrap() - 0.3).abs() < 1e-15);
        assert!((r.avg_u_ops.unwrap() - (u_a + u_e) / 2.0).abs() < 1e-15);
        assert!((r.avg_bs_ops.unwrap() - 0.8).abs() < 1e-15);

        let q = normalize_url("news.it/q").unwrap();
        let rq = aggregate_url(&q, &tweets, &partition, &profiles, &thresholds)
            .unwrap()
            .unwrap();
        // retweeter d has no bot score
        assert_eq!(rq.avg_bs_retweeters, None);
        assert_eq!(rq.avg_bs_ops, Some(0.4));

        let none = normalize_url("never.org").unwrap();
        assert!(aggregate_url(&none, &tweets, &partition, &profiles, &thresholds)
            .unwrap()
            .is_none());
    }

    #[test]
    fn bulk_and_single_routes_agree() {
        let (tweets, partition, profiles) = fixture();
        let thresholds = EntropyThresholds::default();
        let index = UrlIndex::build(&tweets);
        let all = aggregate_all(&tweets, &index, &partition, &profiles, &thresholds).unwrap();
        assert_eq!(all.len(), 4);
        for r in &all {
            let single = aggregate_url(&r.url, &tweets, &partition, &profiles, &thresholds)
                .unwrap()
                .unwrap();
            assert_eq!(&single, r);
            let sv = share_vector(&r.url, &tweets, &partition).unwrap();
            assert_eq!(sv, r.shares_by_community);
        }
    }

    #[test]
    fn share_vector_requires_known_authors() {
        let (tweets, _, _) = fixture();
        let nodes = Arc::new(NodeTable::new());
        let empty = Partition::from_labels(nodes, &[]).unwrap();
        let url = normalize_url("fake.it/s").unwrap();
        assert!(matches!(share_vector(&url, &tweets, &empty), Err(Error::Integrity(_))));
        let fresh = normalize_url("nowhere.org").unwrap();
        assert!(share_vector(&fresh, &tweets, &empty).unwrap().is_empty());
    }

    #[test]
    fn filter_is_strict() {
        let (tweets, partition, profiles) = fixture();
        let index = UrlIndex::build(&tweets);
        let all = aggregate_all(&tweets, &index, &partition, &profiles, &EntropyThresholds::default()).unwrap();
        let mut a = all[0].clone();
        a.total_shares = 100;
        let mut b = a.clone();
        b.total_shares = 101;
        let kept = filter_urls(&[a.clone(), b.clone()], DEFAULT_MIN_SHARES);
        assert_eq!(kept, vec![b]);
        assert_eq!(filter_urls(&all, 0).len(), all.len());
    }

    #[test]
    fn url_report_columns() {
        let (tweets, partition, profiles) = fixture();
        let index = UrlIndex::build(&tweets);
        let all = aggregate_all(&tweets, &index, &partition, &profiles, &EntropyThresholds::default()).unwrap();
        let mut buf = Vec::new();
        write_url_report(&mut buf, &all).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), URL_REPORT_HEADER.join(","));
        let z = text.lines().find(|l| l.starts_with("unlisted.org/z")).unwrap();
        assert_eq!(z, "unlisted.org/z,1,0,low,1,,,,,false");
    }

    proptest! {
        #[test]
        fn profile_invariants(rows in prop::collection::vec((0u64..50, 0u64..50), 1..30)) {
            let mut tallies = BTreeMap::new();
            let mut nodes = NodeTable::new();
            for (i, &(m, p)) in rows.iter().enumerate() {
                let name = format!("u{i}");
                nodes.intern(&name);
                tallies.insert(name, UserTally { t: m + p, t_minus: m, t_plus: p });
            }
            let table = ProfileTable::build(&tallies, &nodes, &BotScoreTable::new(), UntrustworthinessFormula::HarmonicMean).unwrap();
            for p in table.iter() {
                prop_assert_eq!(p.t, p.t_minus + p.t_plus);
                prop_assert!((0.0..=1.0).contains(&p.r));
                prop_assert!((0.0..=1.0).contains(&p.u));
                let a = p.t as f64 / table.t_max() as f64;
                prop_assert!(p.u <= 2.0 * p.r.min(a) + 1e-15);
            }
            let expected = rows.iter().filter(|(m, p)| m + p > 0).count();
            prop_assert_eq!(table.len(), expected);
        }

        #[test]
        fn untrustworthiness_is_monotone(t_max in 1u64..1000, t in 1u64..1000, r in 0.0f64..1.0, dr in 1e-6f64..0.5) {
            let t = t.min(t_max);
            let u = untrustworthiness(t, r, t_max).unwrap();
            prop_assert!((0.0..=1.0).contains(&u));
            let r2 = (r + dr).min(1.0);
            if r2 > r {
                prop_assert!(untrustworthiness(t, r2, t_max).unwrap() > u);
            }
            if t < t_max && r > 0.0 {
                prop_assert!(untrustworthiness(t + 1, r, t_max).unwrap() > u);
            }
        }

        #[test]
        fn entropy_properties(counts in prop::collection::vec(0u64..1000, 1..12), k in 1u64..20) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let h = entropy(counts.iter().copied()).unwrap();
            let nonzero = counts.iter().filter(|&&c| c > 0).count();
            prop_assert_eq!(h == 0.0, nonzero == 1);
            prop_assert!(h <= (nonzero as f64).ln() + 1e-12);
            let mut rev = counts.clone();
            rev.reverse();
            prop_assert!((entropy(rev).unwrap() - h).abs() < 1e-12);
            prop_assert!((entropy(counts.iter().map(|c| c * k)).unwrap() - h).abs() < 1e-12);
        }

        #[test]
        fn aggregation_ignores_tweet_order(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (mut tweets, partition, profiles) = fixture();
            let th = EntropyThresholds::default();
            let before = aggregate_all(&tweets, &UrlIndex::build(&tweets), &partition, &profiles, &th).unwrap();
            tweets.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let after = aggregate_all(&tweets, &UrlIndex::build(&tweets), &partition, &profiles, &th).unwrap();
            prop_assert_eq!(before, after);
        }
    }
}
