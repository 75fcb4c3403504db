//! Community detection on the undirected projection.

mod louvain;
mod partition;

pub use self::louvain::{louvain, louvain_with_trace, LouvainOutcome};
pub use self::partition::{load_partition, save_partition, top_communities, CommunitySummary, Partition};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::UndirectedGraph;

/// Newman–Girvan weighted modularity of `labels` on `g` (resolution 1).
///
/// `Q = Σ_c [ in_c / 2m − (tot_c / 2m)² ]` where `in_c` is twice the weight
/// internal to `c` and `tot_c` the summed strength of its members.
pub fn modularity(g: &UndirectedGraph, labels: &[u32]) -> Result<f64> {
    if labels.len() != g.node_count() {
        return Err(Error::Integrity(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.node_count()
        )));
    }
    let m = g.total_weight();
    if m == 0 {
        return Err(Error::Domain("modularity is undefined on an edgeless graph".into()));
    }
    let k = labels.iter().copied().max().map_or(0, |l| l as usize + 1);
    let mut internal = vec![0u128; k];
    let mut total = vec![0u128; k];
    for &(u, v, w) in g.edges() {
        if labels[u as usize] == labels[v as usize] {
            internal[labels[u as usize] as usize] += 2 * w as u128;
        }
    }
    for (i, &s) in g.strength().iter().enumerate() {
        total[labels[i] as usize] += s as u128;
    }
    Ok(exact_modularity(&internal, &total, 2 * m as u128))
}

/// `Σ (in_c · 2m − tot_c²) / (2m)²`, with the numerator summed exactly.
pub(crate) fn exact_modularity(internal: &[u128], total: &[u128], two_m: u128) -> f64 {
    let num: i128 = internal
        .iter()
        .zip(total)
        .map(|(&i, &t)| (i * two_m) as i128 - (t * t) as i128)
        .sum();
    num as f64 / (two_m as f64 * two_m as f64)
}

/// Randomly permutes community labels across nodes, preserving every
/// community's size.
pub fn reshuffle_partition(p: &Partition, seed: u64) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reshuffle_with(p, &mut rng)
}

pub(crate) fn reshuffle_with(p: &Partition, rng: &mut ChaCha8Rng) -> Partition {
    let mut labels = p.labels().to_vec();
    labels.shuffle(rng);
    p.with_labels_unchecked(labels)
}
