//! Weighted directed retweet graph and its undirected projection.
//!
//! Nodes are users interned to dense `u32` indices in first-appearance
//! order. A directed edge `(s, t)` carries the number of times `s` retweeted
//! content authored by `t`; self-retweets are dropped and tallied.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::TweetRecord;

/// Bijection between author ids and dense node indices.
#[derive(Debug, Clone, Default)]
pub struct NodeTable {
    id_of: HashMap<String, u32>,
    name_of: Vec<String>,
}

impl PartialEq for NodeTable {
    fn eq(&self, other: &Self) -> bool {
        self.name_of == other.name_of
    }
}

impl Eq for NodeTable {}

impl NodeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.id_of.get(name) {
            return i;
        }
        let i = u32::try_from(self.name_of.len()).expect("more than u32::MAX nodes");
        self.id_of.insert(name.to_string(), i);
        self.name_of.push(name.to_string());
        i
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.id_of.get(name).copied()
    }

    pub fn name(&self, index: u32) -> &str {
        &self.name_of[index as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.name_of
    }

    pub fn len(&self) -> usize {
        self.name_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.name_of.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BuildTally {
    pub records: usize,
    pub original_tweets: usize,
    pub retweets_accepted: usize,
    pub self_retweets: usize,
}

/// Directed weighted graph with edges sorted by `(src, dst)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetweetGraph {
    nodes: Arc<NodeTable>,
    edges: Vec<(u32, u32, u64)>,
    offsets: Vec<usize>,
}

fn csr_offsets(n: usize, edges: &[(u32, u32, u64)]) -> Vec<usize> {
    let mut offsets = vec![0usize; n + 1];
    for &(s, _, _) in edges {
        offsets[s as usize + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    offsets
}

impl RetweetGraph {
    /// Assembles a graph from a node table and weighted edges, validating
    /// indices, weights and the absence of self-loops and duplicates.
    pub fn from_parts(nodes: NodeTable, mut edges: Vec<(u32, u32, u64)>) -> Result<Self> {
        let n = nodes.len();
        for &(s, t, w) in &edges {
            if s as usize >= n || t as usize >= n {
                return Err(Error::Integrity(format!("edge ({s}, {t}) references unknown node")));
            }
            if s == t {
                return Err(Error::Integrity(format!("self-loop on node {s}")));
            }
            if w == 0 {
                return Err(Error::Integrity(format!("edge ({s}, {t}) has zero weight")));
            }
        }
        edges.sort_unstable();
        if edges.windows(2).any(|p| p[0].0 == p[1].0 && p[0].1 == p[1].1) {
            return Err(Error::Integrity("duplicate edge".into()));
        }
        let offsets = csr_offsets(n, &edges);
        Ok(RetweetGraph {
            nodes: Arc::new(nodes),
            edges,
            offsets,
        })
    }

    pub fn nodes(&self) -> &Arc<NodeTable> {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32, u64)] {
        &self.edges
    }

    pub fn out_edges(&self, node: u32) -> &[(u32, u32, u64)] {
        let i = node as usize;
        &self.edges[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn weight(&self, src: u32, dst: u32) -> u64 {
        let row = self.out_edges(src);
        row.binary_search_by_key(&dst, |e| e.1)
            .map(|i| row[i].2)
            .unwrap_or(0)
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    pub fn to_undirected(&self) -> UndirectedGraph {
        to_undirected(self)
    }
}

pub fn build_retweet_graph<'a, I>(tweets: I) -> (RetweetGraph, BuildTally)
where
    I: IntoIterator<Item = &'a TweetRecord>,
{
    let mut nodes = NodeTable::new();
    let mut weights: HashMap<u64, u64> = HashMap::new();
    let mut tally = BuildTally::default();
    for r in tweets {
        tally.records += 1;
        let s = nodes.intern(&r.author_id);
        match &r.retweeted_author_id {
            None => tally.original_tweets += 1,
            Some(target) => {
                let t = nodes.intern(target);
                if s == t {
                    tally.self_retweets += 1;
                } else {
                    tally.retweets_accepted += 1;
                    *weights.entry(((s as u64) << 32) | t as u64).or_insert(0) += 1;
                }
            }
        }
    }
    let edges = weights
        .into_iter()
        .map(|(k, w)| ((k >> 32) as u32, k as u32, w))
        .collect();
    let g = RetweetGraph::from_parts(nodes, edges).expect("builder produces valid edges");
    (g, tally)
}

/// Undirected projection; `weight(u, v) = w(u, v) + w(v, u)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    nodes: Arc<NodeTable>,
    /// `(u, v, w)` with `u < v`, sorted.
    edges: Vec<(u32, u32, u64)>,
    offsets: Vec<usize>,
    adjacency: Vec<(u32, u64)>,
    strength: Vec<u64>,
}

impl UndirectedGraph {
    pub fn from_edges(nodes: Arc<NodeTable>, edges: impl IntoIterator<Item = (u32, u32, u64)>) -> Result<Self> {
        let n = nodes.len();
        let mut acc: HashMap<(u32, u32), u64> = HashMap::new();
        for (a, b, w) in edges {
            if a as usize >= n || b as usize >= n {
                return Err(Error::Integrity(format!("edge ({a}, {b}) references unknown node")));
            }
            if a == b {
                return Err(Error::Integrity(format!("self-loop on node {a}")));
            }
            if w > 0 {
                *acc.entry((a.min(b), a.max(b))).or_insert(0) += w;
            }
        }
        let mut edges: Vec<(u32, u32, u64)> = acc.into_iter().map(|((u, v), w)| (u, v, w)).collect();
        edges.sort_unstable();

        let mut degree = vec![0usize; n + 1];
        let mut strength = vec![0u64; n];
        for &(u, v, w) in &edges {
            degree[u as usize + 1] += 1;
            degree[v as usize + 1] += 1;
            strength[u as usize] += w;
            strength[v as usize] += w;
        }
        for i in 0..n {
            degree[i + 1] += degree[i];
        }
        let offsets = degree;
        let mut fill = offsets.clone();
        let mut adjacency = vec![(0u32, 0u64); edges.len() * 2];
        for &(u, v, w) in &edges {
            adjacency[fill[u as usize]] = (v, w);
            fill[u as usize] += 1;
            adjacency[fill[v as usize]] = (u, w);
            fill[v as usize] += 1;
        }
        for i in 0..n {
            adjacency[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Ok(UndirectedGraph {
            nodes,
            edges,
            offsets,
            adjacency,
            strength,
        })
    }

    pub fn nodes(&self) -> &Arc<NodeTable> {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &[(u32, u32, u64)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, node: u32) -> &[(u32, u64)] {
        let i = node as usize;
        &self.adjacency[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Weighted degree of each node.
    pub fn strength(&self) -> &[u64] {
        &self.strength
    }

    /// Total undirected weight `m`.
    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    pub fn weight(&self, a: u32, b: u32) -> u64 {
        let row = self.neighbors(a);
        row.binary_search_by_key(&b, |e| e.0).map(|i| row[i].1).unwrap_or(0)
    }
}

pub fn to_undirected(g: &RetweetGraph) -> UndirectedGraph {
    UndirectedGraph::from_edges(g.nodes.clone(), g.edges.iter().copied())
        .expect("directed graph invariants carry over")
}

/// Fraction of possible directed links present among `members`.
pub fn internal_link_density(g: &RetweetGraph, members: &[u32]) -> Result<f64> {
    let mut mask = vec![false; g.node_count()];
    let mut k = 0usize;
    for &m in members {
        let slot = mask
            .get_mut(m as usize)
            .ok_or_else(|| Error::Integrity(format!("member {m} is not a node")))?;
        if !*slot {
            *slot = true;
            k += 1;
        }
    }
    if k < 2 {
        return Err(Error::Domain(format!(
            "internal link density needs at least 2 members, got {k}"
        )));
    }
    let internal = members
        .iter()
        .filter(|&&m| mask[m as usize])
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .flat_map(|&m| g.out_edges(m))
        .filter(|e| mask[e.1 as usize])
        .count();
    Ok(internal as f64 / (k as f64 * (k as f64 - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

/// Nearest-rank quantiles of a sample; `None` when empty.
pub fn quantiles(values: &[u64]) -> Option<Quantiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    let rank = |q: f64| v[((q * n as f64).ceil() as usize).clamp(1, n) - 1] as f64;
    Some(Quantiles {
        min: v[0] as f64,
        q25: rank(0.25),
        median: rank(0.5),
        q75: rank(0.75),
        max: v[n - 1] as f64,
        mean: v.iter().map(|&x| x as f64).sum::<f64>() / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeSummary {
    pub in_degree: Quantiles,
    pub out_degree: Quantiles,
    pub in_strength: Quantiles,
    pub out_strength: Quantiles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeStats {
    pub in_degree: Vec<u64>,
    pub out_degree: Vec<u64>,
    pub in_strength: Vec<u64>,
    pub out_strength: Vec<u64>,
    pub summary: Option<DegreeSummary>,
}

pub fn degree_stats(g: &RetweetGraph) -> DegreeStats {
    let n = g.node_count();
    let mut s = DegreeStats {
        in_degree: vec![0; n],
        out_degree: vec![0; n],
        in_strength: vec![0; n],
        out_strength: vec![0; n],
        summary: None,
    };
    for &(a, b, w) in g.edges() {
        s.out_degree[a as usize] += 1;
        s.in_degree[b as usize] += 1;
        s.out_strength[a as usize] += w;
        s.in_strength[b as usize] += w;
    }
    if n > 0 {
        s.summary = Some(DegreeSummary {
            in_degree: quantiles(&s.in_degree).unwrap(),
            out_degree: quantiles(&s.out_degree).unwrap(),
            in_strength: quantiles(&s.in_strength).unwrap(),
            out_strength: quantiles(&s.out_strength).unwrap(),
        });
    }
    s
}

pub const NODES_FILE: &str = "nodes.csv";
pub const EDGES_FILE: &str = "edges.csv";

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

/// Writes `nodes.csv` (`index,author_id`) and `edges.csv`
/// (`src_index,dst_index,weight`) into `dir`.
pub fn save_graph_cache(g: &RetweetGraph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let np = dir.join(NODES_FILE);
    let mut w = csv::Writer::from_path(&np).map_err(|e| csv_error(&np, e))?;
    w.write_record(["index", "author_id"]).map_err(|e| csv_error(&np, e))?;
    for (i, name) in g.nodes.names().iter().enumerate() {
        w.write_record([i.to_string().as_str(), name]).map_err(|e| csv_error(&np, e))?;
    }
    w.flush().map_err(|e| Error::io(&np, e))?;

    let ep = dir.join(EDGES_FILE);
    let mut w = csv::Writer::from_path(&ep).map_err(|e| csv_error(&ep, e))?;
    w.write_record(["src_index", "dst_index", "weight"]).map_err(|e| csv_error(&ep, e))?;
    for &(s, t, wt) in &g.edges {
        w.serialize((s, t, wt)).map_err(|e| csv_error(&ep, e))?;
    }
    w.flush().map_err(|e| Error::io(&ep, e))?;
    Ok(())
}

pub fn load_graph_cache(dir: &Path) -> Result<RetweetGraph> {
    let np = dir.join(NODES_FILE);
    let mut r = csv::Reader::from_path(&np).map_err(|e| csv_error(&np, e))?;
    let mut nodes = NodeTable::new();
    for (expected, row) in r.deserialize::<(u32, String)>().enumerate() {
        let (idx, name) = row.map_err(|e| csv_error(&np, e))?;
        if idx as usize != expected || nodes.intern(&name) != idx {
            return Err(Error::Integrity(format!(
                "{}: node table is not a dense bijection at row {}",
                np.display(),
                expected + 1
            )));
        }
    }
    let ep = dir.join(EDGES_FILE);
    let mut r = csv::Reader::from_path(&ep).map_err(|e| csv_error(&ep, e))?;
    let edges = r
        .deserialize::<(u32, u32, u64)>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error(&ep, e))?;
    RetweetGraph::from_parts(nodes, edges)
}
