use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{NodeTable, UndirectedGraph};

use super::modularity;

/// Non-overlapping assignment of every node to a community.
///
/// Labels are dense (`0..n_communities`), every label is used, and label 0
/// is the largest community (ties broken by smallest member index).
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    nodes: Arc<NodeTable>,
    label_of: Vec<u32>,
    n_communities: u32,
    modularity: Option<f64>,
}

/// Relabels so communities are numbered by descending size.
fn canonical_labels(raw: &[u32]) -> (Vec<u32>, u32) {
    let mut first: HashMap<u32, (usize, usize)> = HashMap::new();
    for (i, &l) in raw.iter().enumerate() {
        first.entry(l).or_insert((0, i)).0 += 1;
    }
    let mut order: Vec<(u32, usize, usize)> = first.into_iter().map(|(l, (n, i))| (l, n, i)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let remap: HashMap<u32, u32> = order
        .iter()
        .enumerate()
        .map(|(new, &(old, _, _))| (old, new as u32))
        .collect();
    (raw.iter().map(|l| remap[l]).collect(), order.len() as u32)
}

impl Partition {
    /// Builds a partition from arbitrary labels, renumbering them by size.
    pub fn from_labels(nodes: Arc<NodeTable>, labels: &[u32]) -> Result<Self> {
        if labels.len() != nodes.len() {
            return Err(Error::Integrity(format!(
                "{} labels for {} nodes",
                labels.len(),
                nodes.len()
            )));
        }
        let (label_of, n_communities) = canonical_labels(labels);
        Ok(Partition {
            nodes,
            label_of,
            n_communities,
            modularity: None,
        })
    }

    /// Every node in its own community.
    pub fn singletons(nodes: Arc<NodeTable>) -> Self {
        let labels: Vec<u32> = (0..nodes.len() as u32).collect();
        Self::from_labels(nodes, &labels).expect("lengths match")
    }

    /// Computes and stores modularity on `g`.
    pub fn with_modularity(mut self, g: &UndirectedGraph) -> Result<Self> {
        self.modularity = Some(modularity(g, &self.label_of)?);
        Ok(self)
    }

    pub(crate) fn with_labels_unchecked(&self, label_of: Vec<u32>) -> Self {
        Partition {
            nodes: self.nodes.clone(),
            label_of,
            n_communities: self.n_communities,
            modularity: None,
        }
    }

    pub fn nodes(&self) -> &Arc<NodeTable> {
        &self.nodes
    }

    pub fn labels(&self) -> &[u32] {
        &self.label_of
    }

    pub fn label(&self, node: u32) -> u32 {
        self.label_of[node as usize]
    }

    pub fn label_of_author(&self, author: &str) -> Option<u32> {
        self.nodes.get(author).map(|i| self.label_of[i as usize])
    }

    pub fn n_communities(&self) -> usize {
        self.n_communities as usize
    }

    pub fn modularity(&self) -> Option<f64> {
        self.modularity
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0usize; self.n_communities as usize];
        for &l in &self.label_of {
            s[l as usize] += 1;
        }
        s
    }

    pub fn members(&self, label: u32) -> Vec<u32> {
        self.label_of
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Display name, `RT1` for the largest community.
    pub fn name(label: u32) -> String {
        format!("RT{}", label + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommunitySummary {
    pub label: u32,
    pub name: String,
    pub size: usize,
}

/// The `k` largest communities plus the node count of everything else.
pub fn top_communities(p: &Partition, k: usize) -> (Vec<CommunitySummary>, usize) {
    let sizes = p.sizes();
    let top: Vec<CommunitySummary> = sizes
        .iter()
        .enumerate()
        .take(k)
        .map(|(l, &size)| CommunitySummary {
            label: l as u32,
            name: Partition::name(l as u32),
            size,
        })
        .collect();
    let other = sizes.iter().skip(k).sum();
    (top, other)
}

/// Writes `author_id,community_label` rows in node-index order.
pub fn save_partition(p: &Partition, path: &Path) -> Result<()> {
    let err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["author_id", "community_label"]).map_err(err)?;
    for (i, &l) in p.label_of.iter().enumerate() {
        w.write_record([p.nodes.name(i as u32), &l.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a partition CSV against an existing node table. Every node must be
/// labelled and every author must be known.
pub fn load_partition(path: &Path, nodes: Arc<NodeTable>) -> Result<Partition> {
    let err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let mut labels: Vec<Option<u32>> = vec![None; nodes.len()];
    for row in r.deserialize::<(String, u32)>() {
        let (author, label) = row.map_err(err)?;
        let idx = nodes
            .get(&author)
            .ok_or_else(|| Error::Integrity(format!("partition names unknown author {author:?}")))?;
        labels[idx as usize] = Some(label);
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Integrity(format!("author {:?} has no community", nodes.name(i as u32)))))
        .collect::<Result<Vec<u32>>>()?;
    Partition::from_labels(nodes, &labels)
}
