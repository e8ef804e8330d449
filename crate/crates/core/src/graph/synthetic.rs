//! Small seeded graph-classification corpora.

use super::{Dataset, Graph, Split};
use crate::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const MIN_NODES: usize = 6;
const MAX_NODES: usize = 12;
/// community-pair: label 1 iff more than this many inter-community edges.
const INTER_EDGE_THRESHOLD: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassRule {
    /// Label 1 iff the graph contains a triangle.
    TriangleMotif,
    /// Two planted communities; label 1 iff they share more than a
    /// threshold number of edges.
    CommunityPair,
}

impl std::str::FromStr for ClassRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "triangle-motif" => Ok(ClassRule::TriangleMotif),
            "community-pair" => Ok(ClassRule::CommunityPair),
            other => Err(format!(
                "unknown rule {other:?}; expected triangle-motif or community-pair"
            )),
        }
    }
}

pub fn has_triangle(g: &Graph) -> bool {
    let n = g.node_count();
    for u in 0..n {
        for v in (u + 1)..n {
            if !g.has_edge(u, v) {
                continue;
            }
            if ((v + 1)..n).any(|w| g.has_edge(u, w) && g.has_edge(v, w)) {
                return true;
            }
        }
    }
    false
}

/// Deterministic for a given seed. Exactly `n_graphs / 2` graphs are
/// positive; splits are a shuffled 80/10/10 partition with non-empty
/// valid and test parts.
pub fn generate_synthetic_dataset(
    seed: u64,
    n_graphs: usize,
    rule: ClassRule,
    feature_dim: usize,
) -> Dataset {
    assert!(n_graphs >= 4, "need at least 4 graphs");
    assert!(feature_dim >= 1, "feature_dim must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut labels: Vec<u8> = (0..n_graphs).map(|i| u8::from(i < n_graphs / 2)).collect();
    labels.shuffle(&mut rng);

    let graphs: Vec<Graph> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let id = format!("g{i:05}");
            match rule {
                ClassRule::TriangleMotif => triangle_graph(&mut rng, id, y, feature_dim),
                ClassRule::CommunityPair => community_graph(&mut rng, id, y, feature_dim),
            }
        })
        .collect();

    let n_eval = (n_graphs / 10).max(1);
    let mut order: Vec<usize> = (0..n_graphs).collect();
    order.shuffle(&mut rng);
    let mut splits = vec![Some(Split::Train); n_graphs];
    for &i in &order[..n_eval] {
        splits[i] = Some(Split::Test);
    }
    for &i in &order[n_eval..2 * n_eval] {
        splits[i] = Some(Split::Valid);
    }
    Dataset::new(graphs, splits).expect("generated graphs share F and ids are unique")
}

fn noise_features(rng: &mut ChaCha8Rng, n: usize, f: usize) -> Matrix {
    Matrix::from_fn(n, f, |_, j| {
        if j == 0 {
            1.0
        } else {
            let z: f64 = StandardNormal.sample(rng);
            0.5 * z
        }
    })
}

/// Bipartite base (triangle-free), plus one planted triangle for positives.
fn triangle_graph(rng: &mut ChaCha8Rng, id: String, y: u8, f: usize) -> Graph {
    let n = rng.random_range(MIN_NODES..=MAX_NODES);
    let side: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let mut adj = Matrix::zeros(n, n);
    for u in 0..n {
        for v in (u + 1)..n {
            if side[u] != side[v] && rng.random_bool(0.35) {
                adj[(u, v)] = 1.0;
                adj[(v, u)] = 1.0;
            }
        }
    }
    if y == 1 {
        let mut nodes: Vec<usize> = (0..n).collect();
        nodes.shuffle(rng);
        let t = &nodes[..3];
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[0], t[2])] {
            adj[(a, b)] = 1.0;
            adj[(b, a)] = 1.0;
        }
    }
    let g = Graph::new(id, adj, noise_features(rng, n, f), Some(y)).expect("valid construction");
    debug_assert_eq!(has_triangle(&g), y == 1);
    g
}

fn community_graph(rng: &mut ChaCha8Rng, id: String, y: u8, f: usize) -> Graph {
    let n = rng.random_range(MIN_NODES..=MAX_NODES);
    let mut members: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    members.shuffle(rng);
    let mut adj = Matrix::zeros(n, n);
    let mut cross = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if members[u] == members[v] {
                if rng.random_bool(0.6) {
                    adj[(u, v)] = 1.0;
                    adj[(v, u)] = 1.0;
                }
            } else {
                cross.push((u, v));
            }
        }
    }
    cross.shuffle(rng);
    let k = if y == 1 {
        rng.random_range(INTER_EDGE_THRESHOLD + 1..=INTER_EDGE_THRESHOLD + 3)
    } else {
        rng.random_range(0..=INTER_EDGE_THRESHOLD)
    };
    for &(u, v) in cross.iter().take(k) {
        adj[(u, v)] = 1.0;
        adj[(v, u)] = 1.0;
    }
    let mut x = noise_features(rng, n, f);
    if f > 1 {
        for (i, &m) in members.iter().enumerate() {
            x[(i, 1)] += if m { 1.0 } else { -1.0 };
        }
    }
    Graph::new(id, adj, x, Some(y)).expect("valid construction")
}
