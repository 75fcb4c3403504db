//! End-to-end runs and the individual stages behind the CLI subcommands.
//!
//! Reports go to the output directory; reusable intermediates (graph, URL
//! records, service scores) go to `<output_dir>/cache`. Every report is a
//! pure function of the inputs and the configuration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::community::{louvain, load_partition, save_partition, top_communities, Partition};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{build_retweet_graph, degree_stats, internal_link_density, load_graph_cache, save_graph_cache, BuildTally, DegreeSummary, NodeTable, RetweetGraph};
use crate::ingest::service::{ClientSettings, FetchTally, HttpTransport, ScoreCache};
use crate::ingest::{load_bot_scores, load_source_catalog, parse_tweet_bytes, BotScoreClient, BotScoreTable, ParseTally, SourceCatalog, TweetRecord};
use crate::metrics::{aggregate_all, filter_urls, user_tallies_indexed, write_url_report, write_user_report, ProfileTable, UrlDiffusionRecord, UrlIndex};
use crate::stats::{default_grid, mark_success, null_model_report, success_curves, success_threshold, write_curve_histograms, write_curves, write_null_histograms, write_null_report, NullOutcome, SuccessFeature};

pub const CACHE_DIR: &str = "cache";
pub const URL_RECORDS_FILE: &str = "url_records.jsonl";
pub const PARTITION_FILE: &str = "partition.csv";
pub const COMMUNITIES_FILE: &str = "communities.csv";
pub const USERS_FILE: &str = "users.csv";
pub const URLS_FILE: &str = "urls.csv";
pub const BOT_OP_URLS_FILE: &str = "urls_bot_ops.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const CURVE_HISTOGRAMS_FILE: &str = "curve_histograms.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn nulltest_file(feature: SuccessFeature) -> String {
    format!("nulltest_{feature}.csv")
}

fn null_histogram_file(feature: SuccessFeature) -> String {
    format!("null_histograms_{feature}.csv")
}

fn graph_cache_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join(CACHE_DIR)
}

fn write_file<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

// ------------------------------------------------------------------ ingest

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestCounts {
    #[serde(flatten)]
    pub parse: ParseTally,
    pub unreliable_domains: usize,
    pub reliable_domains: usize,
    pub catalog_overlap: usize,
}

pub struct Ingested {
    pub records: Vec<TweetRecord>,
    pub catalog: SourceCatalog,
    pub counts: IngestCounts,
    pub digests: BTreeMap<String, InputDigest>,
}

pub fn stage_ingest(cfg: &RunConfig) -> Result<Ingested> {
    let run = || -> Result<Ingested> {
        let tweets_path = cfg.require("tweets", &cfg.tweets)?;
        let unreliable = cfg.require("unreliable_sources", &cfg.unreliable_sources)?;
        let reliable = cfg.require("reliable_sources", &cfg.reliable_sources)?;
        let data = std::fs::read(tweets_path).map_err(|e| Error::io(tweets_path, e))?;
        let parsed = parse_tweet_bytes(&data)?;
        for e in parsed.errors.iter().take(10) {
            warn!("{}:{}: {:?} {}", tweets_path.display(), e.line, e.kind, e.message);
        }
        if parsed.errors.len() > 10 {
            warn!("{} more bad lines", parsed.errors.len() - 10);
        }
        let catalog = load_source_catalog(unreliable, reliable)?;
        let mut digests = BTreeMap::new();
        digests.insert(
            "tweets".to_string(),
            InputDigest {
                path: tweets_path.to_path_buf(),
                bytes: data.len() as u64,
                sha256: sha256_hex(&data),
            },
        );
        digests.insert("unreliable_sources".into(), digest_file(unreliable)?);
        digests.insert("reliable_sources".into(), digest_file(reliable)?);
        if let Some(p) = &cfg.bot_scores {
            digests.insert("bot_scores".into(), digest_file(p)?);
        }
        Ok(Ingested {
            counts: IngestCounts {
                parse: parsed.tally,
                unreliable_domains: catalog.unreliable().len(),
                reliable_domains: catalog.reliable().len(),
                catalog_overlap: catalog.overlap().len(),
            },
            records: parsed.records,
            catalog,
            digests,
        })
    };
    run().map_err(|e| e.at_stage("ingest"))
}

// ------------------------------------------------------------------- graph

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphCounts {
    #[serde(flatten)]
    pub build: BuildTally,
    pub nodes: usize,
    pub edges: usize,
    pub total_weight: u64,
    pub degrees: Option<DegreeSummary>,
}

pub fn stage_graph(cfg: &RunConfig, records: &[TweetRecord]) -> Result<(RetweetGraph, GraphCounts)> {
    let run = || -> Result<(RetweetGraph, GraphCounts)> {
        let (g, build) = build_retweet_graph(records);
        if g.total_weight() == 0 {
            return Err(Error::Degenerate("edgeless graph".into()));
        }
        let recon = g.total_weight() as usize + build.original_tweets + build.self_retweets;
        if recon != build.records {
            return Err(Error::Integrity(format!(
                "{} records but {recon} accounted for by edges, originals and self-retweets",
                build.records
            )));
        }
        save_graph_cache(&g, &graph_cache_dir(cfg))?;
        let counts = GraphCounts {
            build,
            nodes: g.node_count(),
            edges: g.edge_count(),
            total_weight: g.total_weight(),
            degrees: degree_stats(&g).summary,
        };
        info!("graph: {} nodes, {} edges", counts.nodes, counts.edges);
        Ok((g, counts))
    };
    run().map_err(|e| e.at_stage("graph"))
}

pub fn load_cached_graph(cfg: &RunConfig) -> Result<RetweetGraph> {
    let dir = graph_cache_dir(cfg);
    load_graph_cache(&dir).map_err(|e| {
        Error::Input(format!("no usable graph cache in {} ({e}); run `graph` first", dir.display()))
    })
}

// ------------------------------------------------------------- communities

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityCounts {
    pub communities: usize,
    pub modularity: f64,
    pub top_sizes: Vec<usize>,
    pub other_nodes: usize,
}

pub fn stage_communities(cfg: &RunConfig, g: &RetweetGraph) -> Result<(Partition, CommunityCounts)> {
    let run = || -> Result<(Partition, CommunityCounts)> {
        let p = louvain(&g.to_undirected(), cfg.louvain_seed)?;
        save_partition(&p, &cfg.output_dir.join(PARTITION_FILE))?;
        let (top, other) = top_communities(&p, cfg.top_k);
        write_file(&cfg.output_dir.join(COMMUNITIES_FILE), |w| {
            let mut c = csv::Writer::from_writer(w);
            let err = crate::ingest::csv_err;
            c.write_record(["community", "size", "internal_link_density"]).map_err(err)?;
            for s in &top {
                let density = internal_link_density(g, &p.members(s.label))
                    .map(|d| d.to_string())
                    .unwrap_or_default();
                c.write_record([s.name.clone(), s.size.to_string(), density]).map_err(err)?;
            }
            c.write_record(["other".to_string(), other.to_string(), String::new()])
                .map_err(err)?;
            c.flush()?;
            Ok(())
        })?;
        let counts = CommunityCounts {
            communities: p.n_communities(),
            modularity: p.modularity().unwrap_or(f64::NAN),
            top_sizes: top.iter().map(|s| s.size).collect(),
            other_nodes: other,
        };
        info!("communities: {} (Q = {})", counts.communities, counts.modularity);
        Ok((p, counts))
    };
    run().map_err(|e| e.at_stage("communities"))
}

pub fn load_cached_partition(cfg: &RunConfig, nodes: Arc<NodeTable>) -> Result<Partition> {
    let path = cfg.output_dir.join(PARTITION_FILE);
    if !path.exists() {
        return Err(Error::Input(format!("{} missing; run `communities` first", path.display())));
    }
    load_partition(&path, nodes)
}

// ------------------------------------------------------------------ scores

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreCounts {
    pub profiles: usize,
    pub t_max: u64,
    pub file_scores: usize,
    pub file_out_of_range: usize,
    pub file_bad_rows: usize,
    pub service: Option<FetchTally>,
    pub users_with_bot_score: usize,
}

/// Bot scores for `nodes` from the score file, then the service for users
/// the file lacks.
pub fn gather_bot_scores(cfg: &RunConfig, nodes: &NodeTable) -> Result<(BotScoreTable, ScoreCounts)> {
    let mut counts = ScoreCounts {
        profiles: 0,
        t_max: 0,
        file_scores: 0,
        file_out_of_range: 0,
        file_bad_rows: 0,
        service: None,
        users_with_bot_score: 0,
    };
    let mut table = BotScoreTable::new();
    if let Some(path) = &cfg.bot_scores {
        let load = load_bot_scores(path)?;
        counts.file_scores = load.table.len();
        counts.file_out_of_range = load.out_of_range;
        counts.file_bad_rows = load.errors.len();
        for e in load.errors.iter().take(10) {
            warn!("{} row {}: {}", path.display(), e.row, e.message);
        }
        table = load.table;
    }
    if let Some(endpoint) = &cfg.service_endpoint {
        let token = std::env::var(&cfg.service_token_env).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            warn!("{} is unset; querying the service without credentials", cfg.service_token_env);
        }
        let transport = HttpTransport::new(endpoint.clone(), token, Duration::from_secs(cfg.service_timeout_secs));
        let settings = ClientSettings {
            requests_per_minute: Some(cfg.service_rate_limit),
            max_retries: cfg.service_max_retries,
            ..ClientSettings::default()
        };
        let client = BotScoreClient::new(transport, ScoreCache::open(&cfg.cache_dir)?, settings);
        let missing: Vec<&str> = nodes
            .names()
            .iter()
            .map(String::as_str)
            .filter(|n| table.get(n).is_none())
            .collect();
        let (fetched, tally) = client.fetch_all(missing)?;
        table.merge_missing(&fetched);
        counts.service = Some(tally);
    }
    counts.users_with_bot_score = nodes.names().iter().filter(|n| table.get(n).is_some()).count();
    Ok((table, counts))
}

pub fn stage_scores(
    cfg: &RunConfig,
    records: &[TweetRecord],
    index: &UrlIndex,
    catalog: &SourceCatalog,
    partition: &Partition,
) -> Result<(ProfileTable, ScoreCounts)> {
    let run = || -> Result<(ProfileTable, ScoreCounts)> {
        let nodes = partition.nodes();
        let (bots, mut counts) = gather_bot_scores(cfg, nodes)?;
        let tallies = user_tallies_indexed(records, index, catalog);
        let profiles = ProfileTable::build(&tallies, nodes, &bots, cfg.untrustworthiness_formula)?;
        counts.profiles = profiles.len();
        counts.t_max = profiles.t_max();
        write_file(&cfg.output_dir.join(USERS_FILE), |w| write_user_report(w, &profiles, partition))?;
        Ok((profiles, counts))
    };
    run().map_err(|e| e.at_stage("scores"))
}

// -------------------------------------------------------------------- urls

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UrlCounts {
    pub distinct_urls: usize,
    pub invalid_urls: u64,
    pub without_ops: usize,
    pub above_min_shares: usize,
    pub success_threshold: u64,
    pub successful: usize,
    pub bot_op_urls: usize,
}

fn write_url_records(path: &Path, records: &[UrlDiffusionRecord]) -> Result<()> {
    write_file(path, |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r).map_err(|e| Error::Input(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn load_url_records(cfg: &RunConfig) -> Result<Vec<UrlDiffusionRecord>> {
    let path = graph_cache_dir(cfg).join(URL_RECORDS_FILE);
    let f = File::open(&path)
        .map_err(|e| Error::Input(format!("{} ({e}); run `urls` first", path.display())))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Applies the share filter and marks success on the survivors.
pub fn select_urls(cfg: &RunConfig, all: &[UrlDiffusionRecord]) -> Result<(Vec<UrlDiffusionRecord>, u64)> {
    let mut kept = filter_urls(all, cfg.min_shares);
    let counts: Vec<u64> = kept.iter().map(|r| r.retweets).collect();
    let t = success_threshold(&counts, cfg.success_quantile)?;
    mark_success(&mut kept, t);
    Ok((kept, t))
}

pub fn stage_urls(
    cfg: &RunConfig,
    records: &[TweetRecord],
    index: &UrlIndex,
    partition: &Partition,
    profiles: &ProfileTable,
) -> Result<(Vec<UrlDiffusionRecord>, u64, UrlCounts)> {
    let run = || -> Result<(Vec<UrlDiffusionRecord>, u64, UrlCounts)> {
        let h_max = (partition.n_communities() as f64).ln();
        if cfg.entropy_medium >= h_max {
            warn!(
                "entropy_medium = {} is not below ln K = {h_max:.3} for {} communities; no URL can be classed high",
                cfg.entropy_medium,
                partition.n_communities()
            );
        }
        let all = aggregate_all(records, index, partition, profiles, &cfg.entropy_thresholds())?;
        write_url_records(&graph_cache_dir(cfg).join(URL_RECORDS_FILE), &all)?;
        let (kept, t) = select_urls(cfg, &all)?;
        write_file(&cfg.output_dir.join(URLS_FILE), |w| write_url_report(w, &kept))?;
        let bot_ops: Vec<UrlDiffusionRecord> = kept
            .iter()
            .filter(|r| r.avg_bs_ops.is_some_and(|b| b > cfg.op_bs_cutoff))
            .cloned()
            .collect();
        write_file(&cfg.output_dir.join(BOT_OP_URLS_FILE), |w| write_url_report(w, &bot_ops))?;
        let counts = UrlCounts {
            distinct_urls: all.len(),
            invalid_urls: index.invalid_urls(),
            without_ops: all.iter().filter(|r| !r.has_ops()).count(),
            above_min_shares: kept.len(),
            success_threshold: t,
            successful: kept.iter().filter(|r| r.successful).count(),
            bot_op_urls: bot_ops.len(),
        };
        Ok((kept, t, counts))
    };
    run().map_err(|e| e.at_stage("urls"))
}

// ------------------------------------------------------------------ curves

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveCounts {
    /// Points with a defined probability, per `feature/class`.
    pub points_with_data: BTreeMap<String, usize>,
    pub urls_with_ops: usize,
}

pub fn stage_curves(cfg: &RunConfig, urls: &[UrlDiffusionRecord], t: u64) -> Result<CurveCounts> {
    let run = || -> Result<CurveCounts> {
        let op_urls: Vec<UrlDiffusionRecord> = urls.iter().filter(|r| r.has_ops()).cloned().collect();
        let mut curves = Vec::new();
        for feature in SuccessFeature::ALL {
            let xs = default_grid(&op_urls, feature, cfg.grid_points);
            curves.extend(success_curves(&op_urls, feature, &xs, t, &cfg.entropy_thresholds())?);
        }
        write_file(&cfg.output_dir.join(CURVES_FILE), |w| write_curves(w, &curves))?;
        write_file(&cfg.output_dir.join(CURVE_HISTOGRAMS_FILE), |w| write_curve_histograms(w, &curves))?;
        Ok(CurveCounts {
            points_with_data: curves
                .iter()
                .map(|c| {
                    (
                        format!("{}/{}", c.feature, c.entropy_class),
                        c.points.iter().filter(|p| p.probability.is_some()).count(),
                    )
                })
                .collect(),
            urls_with_ops: op_urls.len(),
        })
    };
    run().map_err(|e| e.at_stage("curves"))
}

// ---------------------------------------------------------------- nulltest

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullCounts {
    pub tested: usize,
    pub skipped: usize,
    pub degenerate: usize,
    /// Set when no user carries the score, so nothing was tested.
    pub unscored: bool,
}

pub fn stage_nulltest(
    cfg: &RunConfig,
    profiles: &ProfileTable,
    partition: &Partition,
) -> Result<BTreeMap<String, NullCounts>> {
    let run = || -> Result<BTreeMap<String, NullCounts>> {
        let mut out = BTreeMap::new();
        for feature in [SuccessFeature::U, SuccessFeature::Bs] {
            let values: Vec<Option<f64>> = (0..profiles.node_count() as u32)
                .map(|v| match feature {
                    SuccessFeature::U => profiles.u(v),
                    SuccessFeature::Bs => profiles.bs(v),
                })
                .collect();
            if values.iter().all(Option::is_none) {
                warn!("no user has a {feature} score; skipping its null-model test");
                out.insert(
                    feature.to_string(),
                    NullCounts {
                        tested: 0,
                        skipped: 0,
                        degenerate: 0,
                        unscored: true,
                    },
                );
                continue;
            }
            let report = null_model_report(&values, partition, cfg.n_reshuffles, cfg.top_k, cfg.null_seed, cfg.alternative)?;
            write_file(&cfg.output_dir.join(nulltest_file(feature)), |w| write_null_report(w, &report))?;
            write_file(&cfg.output_dir.join(null_histogram_file(feature)), |w| {
                write_null_histograms(w, &report)
            })?;
            let mut c = NullCounts {
                tested: 0,
                skipped: 0,
                degenerate: 0,
                unscored: false,
            };
            for t in &report.communities {
                match t.outcome {
                    NullOutcome::Tested(_) => c.tested += 1,
                    NullOutcome::Skipped { .. } => c.skipped += 1,
                    NullOutcome::Degenerate { .. } => c.degenerate += 1,
                }
            }
            out.insert(feature.to_string(), c);
        }
        Ok(out)
    };
    run().map_err(|e| e.at_stage("nulltest"))
}

// -------------------------------------------------------------------- runs

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageCounts {
    pub ingest: IngestCounts,
    pub graph: GraphCounts,
    pub communities: CommunityCounts,
    pub scores: ScoreCounts,
    pub urls: UrlCounts,
    pub curves: CurveCounts,
    pub nulltest: BTreeMap<String, NullCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub louvain: u64,
    pub null_model: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub parameters: RunConfig,
    pub seeds: Seeds,
    pub inputs: BTreeMap<String, InputDigest>,
    pub stages: StageCounts,
    /// SHA-256 of every report written by the run, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

/// The reports written by a full run, relative to the output directory.
pub fn report_files() -> Vec<String> {
    let mut v: Vec<String> = [
        PARTITION_FILE,
        COMMUNITIES_FILE,
        USERS_FILE,
        URLS_FILE,
        BOT_OP_URLS_FILE,
        CURVES_FILE,
        CURVE_HISTOGRAMS_FILE,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for f in [SuccessFeature::U, SuccessFeature::Bs] {
        v.push(nulltest_file(f));
        v.push(null_histogram_file(f));
    }
    v
}

/// Runs every stage and writes the manifest.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let ingested = stage_ingest(cfg)?;
    let (g, graph_counts) = stage_graph(cfg, &ingested.records)?;
    let (partition, community_counts) = stage_communities(cfg, &g)?;
    drop(g);
    let index = UrlIndex::build(&ingested.records);
    let (profiles, score_counts) = stage_scores(cfg, &ingested.records, &index, &ingested.catalog, &partition)?;
    let (urls, t, url_counts) = stage_urls(cfg, &ingested.records, &index, &partition, &profiles)?;
    let curve_counts = stage_curves(cfg, &urls, t)?;
    let null_counts = stage_nulltest(cfg, &profiles, &partition)?;

    let mut outputs = BTreeMap::new();
    for name in report_files() {
        let path = cfg.output_dir.join(&name);
        if path.exists() {
            outputs.insert(name, digest_file(&path)?.sha256);
        }
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        parameters: cfg.clone(),
        seeds: Seeds {
            louvain: cfg.louvain_seed,
            null_model: cfg.null_seed,
        },
        inputs: ingested.digests,
        stages: StageCounts {
            ingest: ingested.counts,
            graph: graph_counts,
            communities: community_counts,
            scores: score_counts,
            urls: url_counts,
            curves: curve_counts,
            nulltest: null_counts,
        },
        outputs,
    };
    write_file(&cfg.output_dir.join(MANIFEST_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(|e| Error::Input(e.to_string()))?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    Ok(manifest)
}
