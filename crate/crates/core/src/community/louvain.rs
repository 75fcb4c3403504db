//! Two-phase Louvain modularity optimization.
//!
//! Phase one sweeps nodes in a seed-determined order and moves each to the
//! neighbouring community with the largest strictly positive modularity
//! gain; phase two collapses communities into super-nodes. The loop stops
//! when a level produces no move.
//!
//! Edge weights are integers, so gains are compared exactly as
//! `2m · k_i,in(c) − Σ_tot(c) · k_i` in `i128`. Equal gains go to the
//! smallest community label.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{exact_modularity, modularity, Partition};
use crate::error::{Error, Result};
use crate::graph::UndirectedGraph;

struct Level {
    offsets: Vec<usize>,
    adjacency: Vec<(u32, u64)>,
    self_loop: Vec<u64>,
    strength: Vec<u64>,
}

impl Level {
    fn len(&self) -> usize {
        self.strength.len()
    }

    fn neighbors(&self, i: usize) -> &[(u32, u64)] {
        &self.adjacency[self.offsets[i]..self.offsets[i + 1]]
    }

    fn from_graph(g: &UndirectedGraph) -> Self {
        let n = g.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut adjacency = Vec::new();
        offsets.push(0);
        for i in 0..n {
            adjacency.extend_from_slice(g.neighbors(i as u32));
            offsets.push(adjacency.len());
        }
        Level {
            offsets,
            adjacency,
            self_loop: vec![0; n],
            strength: g.strength().to_vec(),
        }
    }

    /// Collapses each community (dense labels) into one node.
    fn aggregate(&self, comm: &[u32], k: usize) -> Level {
        let mut self_loop = vec![0u64; k];
        let mut strength = vec![0u64; k];
        let mut rows: Vec<HashMap<u32, u64>> = vec![HashMap::new(); k];
        let mut internal_twice = vec![0u64; k];
        for i in 0..self.len() {
            let ci = comm[i];
            self_loop[ci as usize] += self.self_loop[i];
            strength[ci as usize] += self.strength[i];
            for &(j, w) in self.neighbors(i) {
                let cj = comm[j as usize];
                if ci == cj {
                    internal_twice[ci as usize] += w;
                } else {
                    *rows[ci as usize].entry(cj).or_insert(0) += w;
                }
            }
        }
        for c in 0..k {
            self_loop[c] += internal_twice[c] / 2;
        }
        let mut offsets = Vec::with_capacity(k + 1);
        let mut adjacency = Vec::new();
        offsets.push(0);
        for row in rows {
            let mut r: Vec<(u32, u64)> = row.into_iter().collect();
            r.sort_unstable();
            adjacency.extend(r);
            offsets.push(adjacency.len());
        }
        Level {
            offsets,
            adjacency,
            self_loop,
            strength,
        }
    }

    fn modularity_of(&self, comm: &[u32], two_m: u128) -> f64 {
        let k = comm.iter().copied().max().map_or(0, |c| c as usize + 1);
        let mut internal = vec![0u128; k];
        let mut total = vec![0u128; k];
        for i in 0..self.len() {
            let c = comm[i] as usize;
            internal[c] += 2 * self.self_loop[i] as u128;
            total[c] += self.strength[i] as u128;
            for &(j, w) in self.neighbors(i) {
                if comm[j as usize] as usize == c {
                    internal[c] += w as u128;
                }
            }
        }
        exact_modularity(&internal, &total, two_m)
    }
}

/// Louvain result with the modularity recorded after every sweep that moved
/// at least one node. The first entry is the all-singletons value.
#[derive(Debug, Clone, PartialEq)]
pub struct LouvainOutcome {
    pub partition: Partition,
    pub trace: Vec<f64>,
    pub levels: usize,
    pub moves: usize,
}

/// Returns the community assignment at this level and the number of moves.
fn local_moving(level: &Level, two_m: u128, rng: &mut ChaCha8Rng, trace: &mut Vec<f64>) -> (Vec<u32>, usize) {
    let n = level.len();
    let mut comm: Vec<u32> = (0..n as u32).collect();
    let mut tot: Vec<u128> = level.strength.iter().map(|&s| s as u128).collect();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(rng);

    let mut link = vec![0u128; n];
    let mut touched: Vec<u32> = Vec::new();
    let two_m_i = two_m as i128;
    let mut total_moves = 0;

    loop {
        let mut moves = 0;
        for &node in &order {
            let i = node as usize;
            let ki = level.strength[i] as u128;
            if ki == 0 {
                continue;
            }
            let own = comm[i];
            for &(j, w) in level.neighbors(i) {
                let c = comm[j as usize];
                if link[c as usize] == 0 {
                    touched.push(c);
                }
                link[c as usize] += w as u128;
            }
            tot[own as usize] -= ki;

            let gain = |c: u32, link: &[u128]| -> i128 {
                two_m_i * link[c as usize] as i128 - (tot[c as usize] * ki) as i128
            };
            let own_gain = gain(own, &link);
            let mut best = own;
            let mut best_gain = own_gain;
            for &c in &touched {
                let g = gain(c, &link);
                if g > best_gain || (g == best_gain && c < best && g > own_gain) {
                    best = c;
                    best_gain = g;
                }
            }
            for &c in &touched {
                link[c as usize] = 0;
            }
            touched.clear();

            tot[best as usize] += ki;
            if best != own {
                comm[i] = best;
                moves += 1;
            }
        }
        if moves == 0 {
            break;
        }
        total_moves += moves;
        trace.push(level.modularity_of(&comm, two_m));
    }
    (comm, total_moves)
}

/// Renumbers labels densely in order of first appearance.
fn densify(comm: &mut [u32]) -> usize {
    let mut map: HashMap<u32, u32> = HashMap::new();
    for c in comm.iter_mut() {
        let next = map.len() as u32;
        *c = *map.entry(*c).or_insert(next);
    }
    map.len()
}

pub fn louvain_with_trace(g: &UndirectedGraph, seed: u64) -> Result<LouvainOutcome> {
    let m = g.total_weight();
    if m == 0 {
        return Err(Error::Degenerate("edgeless graph".into()));
    }
    let two_m = 2 * m as u128;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = Level::from_graph(g);
    let mut assignment: Vec<u32> = (0..g.node_count() as u32).collect();
    let mut trace = vec![level.modularity_of(&assignment, two_m)];
    let mut levels = 0;
    let mut moves = 0;

    loop {
        let (mut comm, moved) = local_moving(&level, two_m, &mut rng, &mut trace);
        levels += 1;
        if moved == 0 {
            break;
        }
        moves += moved;
        let k = densify(&mut comm);
        for a in assignment.iter_mut() {
            *a = comm[*a as usize];
        }
        level = level.aggregate(&comm, k);
    }

    let partition = Partition::from_labels(g.nodes().clone(), &assignment)?;
    let q = modularity(g, partition.labels())?;
    let partition = partition.with_modularity(g)?;
    debug_assert_eq!(partition.modularity(), Some(q));
    Ok(LouvainOutcome {
        partition,
        trace,
        levels,
        moves,
    })
}

/// Louvain communities of `g`; deterministic for a fixed seed.
pub fn louvain(g: &UndirectedGraph, seed: u64) -> Result<Partition> {
    Ok(louvain_with_trace(g, seed)?.partition)
}
