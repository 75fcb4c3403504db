//! Rank tests, null-model comparisons and success-probability curves.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::community::{reshuffle_with, Partition};
use crate::error::{Error, Result};
use crate::metrics::{EntropyClass, EntropyThresholds, UrlDiffusionRecord};

/// Largest per-sample size handled by exact enumeration.
pub const EXACT_MAX: usize = 12;
pub const DEFAULT_RESHUFFLES: usize = 100;
pub const DEFAULT_SUCCESS_QUANTILE: f64 = 0.75;
pub const DEFAULT_STABILITY_TOL: f64 = 0.1;
pub const DEFAULT_GRID_POINTS: usize = 100;
pub const HISTOGRAM_BINS: usize = 20;

// ------------------------------------------------------------ Mann-Whitney

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `a` tends to be smaller than `b`.
    Less,
    /// `a` tends to be larger than `b`.
    Greater,
}

impl FromStr for Alternative {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" => Ok(Self::TwoSided),
            "less" => Ok(Self::Less),
            "greater" => Ok(Self::Greater),
            _ => Err(Error::Validation(format!("unknown alternative {s:?}"))),
        }
    }
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TwoSided => "two-sided",
            Self::Less => "less",
            Self::Greater => "greater",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    ExactEnumeration,
    NormalApproximation,
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ExactEnumeration => "exact-enumeration",
            Self::NormalApproximation => "normal-approximation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    /// `U` of the first sample: pairs with `a > b`, ties counting one half.
    pub u_statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    /// `(extreme, total)` label assignments behind an exact p-value.
    pub exact: Option<(u64, u64)>,
    pub n_a: usize,
    pub n_b: usize,
}

/// Twice the midrank of every value of `a` followed by `b`, plus the tie
/// group sizes.
fn doubled_ranks(a: &[f64], b: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let mut all: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks = vec![0u64; all.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // positions i..=j hold 1-based ranks i+1..=j+1; doubled midrank = i+j+2
        for item in &all[i..=j] {
            ranks[item.1] = (i + j + 2) as u64;
        }
        ties.push((j - i + 1) as u64);
        i = j + 1;
    }
    (ranks, ties)
}

pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestResult> {
    mann_whitney_with(a, b, Alternative::TwoSided)
}

pub fn mann_whitney_with(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("Mann-Whitney needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Domain("Mann-Whitney sample contains NaN".into()));
    }
    let first = a[0];
    if a.iter().chain(b).all(|&v| v == first) {
        return Err(Error::Degenerate("all values are identical".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let (ranks, ties) = doubled_ranks(a, b);
    let doubled_rank_sum: u64 = ranks[..na].iter().sum();
    let doubled_u = doubled_rank_sum as i64 - (na * (na + 1)) as i64;
    let u = doubled_u as f64 / 2.0;

    if na <= EXACT_MAX && nb <= EXACT_MAX {
        let (extreme, total) = exact_count(&ranks, na, doubled_rank_sum, alternative);
        return Ok(TestResult {
            u_statistic: u,
            p_value: extreme as f64 / total as f64,
            method: TestMethod::ExactEnumeration,
            exact: Some((extreme, total)),
            n_a: na,
            n_b: nb,
        });
    }

    let n = (na + nb) as f64;
    let mu = na as f64 * nb as f64 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = na as f64 * nb as f64 / 12.0 * ((n + 1.0) - tie_term);
    let sd = var.sqrt();
    let normal = Normal::standard();
    let p = match alternative {
        Alternative::TwoSided => {
            let dev = (u - mu).abs() - 0.5;
            if dev <= 0.0 {
                1.0
            } else {
                2.0 * normal.sf(dev / sd)
            }
        }
        Alternative::Less => normal.cdf((u - mu + 0.5) / sd),
        Alternative::Greater => normal.sf((u - mu - 0.5) / sd),
    };
    Ok(TestResult {
        u_statistic: u,
        p_value: p.clamp(0.0, 1.0),
        method: TestMethod::NormalApproximation,
        exact: None,
        n_a: na,
        n_b: nb,
    })
}

/// Counts size-`na` subsets of `ranks` whose doubled rank sum is at least as
/// extreme as `observed`.
fn exact_count(ranks: &[u64], na: usize, observed: u64, alternative: Alternative) -> (u64, u64) {
    let max_sum: u64 = {
        let mut r = ranks.to_vec();
        r.sort_unstable_by(|x, y| y.cmp(x));
        r[..na].iter().sum()
    };
    let width = max_sum as usize + 1;
    // dp[k * width + s]: subsets of size k with doubled rank sum s
    let mut dp = vec![0u64; (na + 1) * width];
    dp[0] = 1;
    for &r in ranks {
        let r = r as usize;
        for k in (1..=na).rev() {
            for s in (r..width).rev() {
                let add = dp[(k - 1) * width + s - r];
                dp[k * width + s] += add;
            }
        }
    }
    let row = &dp[na * width..];
    let n = ranks.len() as i64;
    let center = na as i64 * (n + 1);
    let obs = observed as i64;
    let extreme: u64 = row
        .iter()
        .enumerate()
        .filter(|&(s, &c)| {
            c > 0 && {
                let s = s as i64;
                match alternative {
                    Alternative::TwoSided => (s - center).abs() >= (obs - center).abs(),
                    Alternative::Less => s <= obs,
                    Alternative::Greater => s >= obs,
                }
            }
        })
        .map(|(_, &c)| c)
        .sum();
    let total: u64 = row.iter().sum();
    (extreme, total)
}

// -------------------------------------------------------------- null model

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum NullOutcome {
    Tested(TestResult),
    /// Fewer than two scored members; no test run.
    Skipped { reason: String },
    /// The test itself rejected the data, e.g. all scores identical.
    Degenerate { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityTest {
    pub label: u32,
    pub name: String,
    pub n_observed: usize,
    pub n_null: usize,
    pub outcome: NullOutcome,
    pub observed_histogram: Vec<u64>,
    pub null_histogram: Vec<u64>,
}

impl CommunityTest {
    pub fn result(&self) -> Option<&TestResult> {
        match &self.outcome {
            NullOutcome::Tested(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullModelReport {
    pub n_reshuffles: usize,
    pub seed: u64,
    pub communities: Vec<CommunityTest>,
}

/// Counts of `values` (assumed in [0, 1]) in `bins` equal-width bins.
pub fn histogram(values: &[f64], bins: usize) -> Vec<u64> {
    let mut h = vec![0u64; bins];
    for &v in values {
        let i = ((v * bins as f64).floor() as isize).clamp(0, bins as isize - 1);
        h[i as usize] += 1;
    }
    h
}

/// Compares each of the `top_k` largest communities' scores against the
/// pooled scores of the same label after `n_reshuffles` random reshuffles
/// of the partition. `values` is indexed by node; unscored nodes are `None`.
pub fn null_model_report(
    values: &[Option<f64>],
    partition: &Partition,
    n_reshuffles: usize,
    top_k: usize,
    seed: u64,
    alternative: Alternative,
) -> Result<NullModelReport> {
    if values.len() != partition.labels().len() {
        return Err(Error::Integrity(format!(
            "{} scores for {} nodes",
            values.len(),
            partition.labels().len()
        )));
    }
    if values.iter().all(Option::is_none) {
        return Err(Error::Domain("no scored users".into()));
    }
    if n_reshuffles == 0 {
        return Err(Error::Validation("n_reshuffles must be at least 1".into()));
    }
    let k = top_k.min(partition.n_communities());
    let pool = |labels: &[u32], into: &mut Vec<Vec<f64>>| {
        for (node, &l) in labels.iter().enumerate() {
            if (l as usize) < k {
                if let Some(v) = values[node] {
                    into[l as usize].push(v);
                }
            }
        }
    };
    let mut observed = vec![Vec::new(); k];
    pool(partition.labels(), &mut observed);
    let mut null = vec![Vec::new(); k];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_reshuffles {
        let shuffled = reshuffle_with(partition, &mut rng);
        pool(shuffled.labels(), &mut null);
    }

    let communities = observed
        .into_iter()
        .zip(null)
        .enumerate()
        .map(|(label, (obs, nul))| {
            let outcome = if obs.len() < 2 {
                NullOutcome::Skipped {
                    reason: format!("{} scored members", obs.len()),
                }
            } else if nul.is_empty() {
                NullOutcome::Skipped {
                    reason: "empty null sample".into(),
                }
            } else {
                match mann_whitney_with(&obs, &nul, alternative) {
                    Ok(r) => NullOutcome::Tested(r),
                    Err(e) => NullOutcome::Degenerate { reason: e.to_string() },
                }
            };
            CommunityTest {
                label: label as u32,
                name: Partition::name(label as u32),
                n_observed: obs.len(),
                n_null: nul.len(),
                observed_histogram: histogram(&obs, HISTOGRAM_BINS),
                null_histogram: histogram(&nul, HISTOGRAM_BINS),
                outcome,
            }
        })
        .collect();
    Ok(NullModelReport {
        n_reshuffles,
        seed,
        communities,
    })
}

/// CSV `community,u_statistic,p_value,method,n_observed,n_null`. Skipped
/// and degenerate tests leave the statistic columns blank.
pub fn write_null_report<W: Write>(sink: W, report: &NullModelReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let err = crate::ingest::csv_err;
    w.write_record(["community", "u_statistic", "p_value", "method", "n_observed", "n_null"])
        .map_err(err)?;
    for c in &report.communities {
        let (u, p, m) = match &c.outcome {
            NullOutcome::Tested(r) => (r.u_statistic.to_string(), r.p_value.to_string(), r.method.to_string()),
            NullOutcome::Skipped { .. } => (String::new(), String::new(), "skipped".into()),
            NullOutcome::Degenerate { .. } => (String::new(), String::new(), "degenerate".into()),
        };
        w.write_record([c.name.clone(), u, p, m, c.n_observed.to_string(), c.n_null.to_string()])
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `community,sample,bin_lo,bin_hi,count` for both samples of each test.
pub fn write_null_histograms<W: Write>(sink: W, report: &NullModelReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let err = crate::ingest::csv_err;
    w.write_record(["community", "sample", "bin_lo", "bin_hi", "count"])
        .map_err(err)?;
    for c in &report.communities {
        for (sample, h) in [("observed", &c.observed_histogram), ("null", &c.null_histogram)] {
            for (i, n) in h.iter().enumerate() {
                let (lo, hi) = bin_edges(i, h.len());
                w.write_record([c.name.clone(), sample.into(), lo, hi, n.to_string()])
                    .map_err(err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn bin_edges(i: usize, bins: usize) -> (String, String) {
    (
        (i as f64 / bins as f64).to_string(),
        ((i + 1) as f64 / bins as f64).to_string(),
    )
}

// ---------------------------------------------------------------- success

/// Nearest-rank `q`-quantile: the smallest count with at least a fraction
/// `q` of all counts at or below it.
pub fn success_threshold(counts: &[u64], q: f64) -> Result<u64> {
    if counts.len() < 4 {
        return Err(Error::Domain(format!(
            "success threshold needs at least 4 URLs, got {}",
            counts.len()
        )));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Validation(format!("quantile {q} outside (0, 1)")));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let exact = q * n as f64;
    let rank = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    } as usize;
    let t = sorted[rank.clamp(1, n) - 1];
    if sorted[0] == sorted[n - 1] {
        warn!("all {n} URLs have {t} retweets; every URL counts as successful");
    }
    Ok(t)
}

/// Sets `successful` on every record with at least `t` retweets.
pub fn mark_success(records: &mut [UrlDiffusionRecord], t: u64) {
    for r in records {
        r.successful = r.retweets >= t;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SuccessFeature {
    /// Mean bot score of a URL's original posters.
    #[serde(rename = "BS")]
    Bs,
    /// Mean untrustworthiness of a URL's original posters.
    U,
}

impl SuccessFeature {
    pub const ALL: [SuccessFeature; 2] = [SuccessFeature::Bs, SuccessFeature::U];

    pub fn of(&self, r: &UrlDiffusionRecord) -> Option<f64> {
        match self {
            SuccessFeature::Bs => r.avg_bs_ops,
            SuccessFeature::U => r.avg_u_ops,
        }
    }
}

impl fmt::Display for SuccessFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuccessFeature::Bs => "BS",
            SuccessFeature::U => "U",
        })
    }
}

/// Joint counts over a URL table: all URLs `n`, successful `s`, with
/// feature at least `x` (`f`), and both (`a`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuccessCounts {
    pub n: u64,
    pub s: u64,
    pub f: u64,
    pub a: u64,
}

impl SuccessCounts {
    pub fn tally(urls: &[UrlDiffusionRecord], feature: SuccessFeature, x: f64, t: u64) -> Self {
        let mut c = SuccessCounts { n: 0, s: 0, f: 0, a: 0 };
        for r in urls {
            c.n += 1;
            let ok = r.retweets >= t;
            let hit = feature.of(r).is_some_and(|v| v >= x);
            c.s += ok as u64;
            c.f += hit as u64;
            c.a += (ok && hit) as u64;
        }
        c
    }

    /// `#(success ∧ feature ≥ x) / #(feature ≥ x)`.
    pub fn direct(&self) -> Option<f64> {
        (self.f > 0).then(|| self.a as f64 / self.f as f64)
    }

    /// `P(feature ≥ x | success) · P(success) / P(feature ≥ x)`.
    pub fn bayes(&self) -> Option<f64> {
        if self.f == 0 {
            return None;
        }
        if self.s == 0 {
            return Some(0.0);
        }
        let n = self.n as f64;
        let likelihood = self.a as f64 / self.s as f64;
        let prior = self.s as f64 / n;
        let evidence = self.f as f64 / n;
        Some(likelihood * prior / evidence)
    }
}

/// `P(retweets ≥ t | feature ≥ x)`, or `None` when no URL reaches `x`.
pub fn conditional_success(urls: &[UrlDiffusionRecord], feature: SuccessFeature, x: f64, t: u64) -> Result<Option<f64>> {
    let c = SuccessCounts::tally(urls, feature, x, t);
    match (c.bayes(), c.direct()) {
        (Some(b), Some(d)) => {
            if (b - d).abs() > 1e-12 {
                return Err(Error::Integrity(format!(
                    "Bayes decomposition {b} differs from direct count {d}"
                )));
            }
            Ok(Some(d))
        }
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    /// `None` when the conditioning set is empty.
    pub probability: Option<f64>,
    pub n_conditioning: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessCurve {
    pub feature: SuccessFeature,
    pub entropy_class: EntropyClass,
    pub points: Vec<CurvePoint>,
    /// Feature values of the class's URLs, binned over [0, 1].
    pub histogram: Vec<u64>,
}

/// `points` evenly spaced values over the observed range of `feature`.
pub fn default_grid(urls: &[UrlDiffusionRecord], feature: SuccessFeature, points: usize) -> Vec<f64> {
    let values: Vec<f64> = urls.iter().filter_map(|r| feature.of(r)).collect();
    let Some(lo) = values.iter().copied().reduce(f64::min) else {
        return Vec::new();
    };
    let hi = values.iter().copied().fold(lo, f64::max);
    if points <= 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Success curves for each entropy class along the grid `xs`.
pub fn success_curves(
    urls: &[UrlDiffusionRecord],
    feature: SuccessFeature,
    xs: &[f64],
    t: u64,
    thresholds: &EntropyThresholds,
) -> Result<Vec<SuccessCurve>> {
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Validation("threshold grid must be nondecreasing".into()));
    }
    let mut by_class: BTreeMap<EntropyClass, Vec<UrlDiffusionRecord>> = BTreeMap::new();
    for r in urls {
        by_class.entry(thresholds.classify(r.entropy)).or_default().push(r.clone());
    }
    EntropyClass::ALL
        .iter()
        .map(|&class| {
            let subset = by_class.remove(&class).unwrap_or_default();
            let values: Vec<f64> = subset.iter().filter_map(|r| feature.of(r)).collect();
            let points = if subset.is_empty() {
                Vec::new()
            } else {
                xs.iter()
                    .map(|&x| {
                        let probability = conditional_success(&subset, feature, x, t)?;
                        let n_conditioning = SuccessCounts::tally(&subset, feature, x, t).f;
                        Ok(CurvePoint {
                            x,
                            probability,
                            n_conditioning,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            Ok(SuccessCurve {
                feature,
                entropy_class: class,
                points,
                histogram: histogram(&values, HISTOGRAM_BINS),
            })
        })
        .collect()
}

/// CSV `feature,entropy_class,x,probability,probability_or_zero,n_conditioning`.
/// Empty conditioning sets leave `probability` blank and write 0 to
/// `probability_or_zero`.
pub fn write_curves<W: Write>(sink: W, curves: &[SuccessCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let err = crate::ingest::csv_err;
    w.write_record([
        "feature",
        "entropy_class",
        "x",
        "probability",
        "probability_or_zero",
        "n_conditioning",
    ])
    .map_err(err)?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.feature.to_string(),
                c.entropy_class.to_string(),
                p.x.to_string(),
                p.probability.map(|v| v.to_string()).unwrap_or_default(),
                p.probability.unwrap_or(0.0).to_string(),
                p.n_conditioning.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV `feature,entropy_class,bin_lo,bin_hi,count`.
pub fn write_curve_histograms<W: Write>(sink: W, curves: &[SuccessCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let err = crate::ingest::csv_err;
    w.write_record(["feature", "entropy_class", "bin_lo", "bin_hi", "count"])
        .map_err(err)?;
    for c in curves {
        for (i, n) in c.histogram.iter().enumerate() {
            let (lo, hi) = bin_edges(i, c.histogram.len());
            w.write_record([c.feature.to_string(), c.entropy_class.to_string(), lo, hi, n.to_string()])
                .map_err(err)?;
        }
    }
    w.flush()?;
    Ok(())
}

// -------------------------------------------------------------- stability

/// Fraction of users present in both maps whose scores differ by at most
/// `tol`.
pub fn score_stability(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>, tol: f64) -> Result<f64> {
    let mut common = 0u64;
    let mut close = 0u64;
    for (user, ua) in a {
        if let Some(ub) = b.get(user) {
            common += 1;
            if (ua - ub).abs() <= tol {
                close += 1;
            }
        }
    }
    if common == 0 {
        return Err(Error::Domain("the score maps share no user".into()));
    }
    Ok(close as f64 / common as f64)
}
