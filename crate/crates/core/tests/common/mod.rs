//! Seeded instance generators shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dwmap::model::{Edge, Graph};
use dwmap::relaxation::DenseLp;
use dwmap::sideconstraints::SideConstraint;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Graph with the given structure and U[-1, 1] potentials.
pub fn with_uniform_potentials(rng: &mut ChaCha8Rng, cards: Vec<usize>, pairs: &[(usize, usize)]) -> Graph {
    let local = cards.iter().map(|&c| uniform(rng, c)).collect();
    let edges = pairs.iter().map(|&(s, t)| Edge::new(s, t, uniform(rng, cards[s] * cards[t]))).collect();
    Graph::new(cards, local, edges).expect("generated graph is valid")
}

/// Random recursive tree: node `i` hangs off a uniformly chosen earlier node.
/// Endpoints are randomly oriented.
pub fn tree_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    (1..n)
        .map(|i| {
            let p = rng.gen_range(0..i);
            if rng.gen_bool(0.5) {
                (p, i)
            } else {
                (i, p)
            }
        })
        .collect()
}

/// A tree with `nodes` and per-node `states` drawn uniformly, resampling
/// cardinalities until the joint space is at most `max_space`.
pub fn random_tree(
    rng: &mut ChaCha8Rng,
    nodes: std::ops::RangeInclusive<usize>,
    states: std::ops::RangeInclusive<usize>,
    max_space: f64,
) -> Graph {
    let n = rng.gen_range(nodes);
    let cards = loop {
        let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(states.clone())).collect();
        if cards.iter().map(|&c| c as f64).product::<f64>() <= max_space {
            break cards;
        }
    };
    let pairs = tree_pairs(rng, n);
    with_uniform_potentials(rng, cards, &pairs)
}

/// Connected graph with at least one cycle: a random tree plus extra edges.
pub fn loopy_pairs(rng: &mut ChaCha8Rng, n: usize, extra_p: f64) -> Vec<(usize, usize)> {
    assert!(n >= 3);
    let mut pairs = tree_pairs(rng, n);
    let has = |pairs: &[(usize, usize)], a: usize, b: usize| pairs.iter().any(|&(s, t)| (s, t) == (a, b) || (s, t) == (b, a));
    for a in 0..n {
        for b in a + 1..n {
            if !has(&pairs, a, b) && rng.gen_bool(extra_p) {
                pairs.push((a, b));
            }
        }
    }
    if pairs.len() < n {
        let missing: Vec<(usize, usize)> =
            (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).filter(|&(a, b)| !has(&pairs, a, b)).collect();
        pairs.push(*missing.choose(rng).expect("a tree on three or more nodes is not complete"));
    }
    pairs
}

pub fn random_loopy(rng: &mut ChaCha8Rng, max_nodes: usize, max_states: usize) -> Graph {
    let n = rng.gen_range(3..=max_nodes);
    let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=max_states)).collect();
    let p = rng.gen_range(0.1..0.5);
    let pairs = loopy_pairs(rng, n, p);
    with_uniform_potentials(rng, cards, &pairs)
}

/// Arbitrary graph: possibly disconnected, possibly with isolated nodes.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, max_states: usize) -> Graph {
    let n = rng.gen_range(1..=max_nodes);
    let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=max_states)).collect();
    let p = rng.gen_range(0.0..0.7);
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(p) {
                pairs.push(if rng.gen_bool(0.5) { (a, b) } else { (b, a) });
            }
        }
    }
    pairs.shuffle(rng);
    with_uniform_potentials(rng, cards, &pairs)
}

/// Bipartite matching posed as MAP: each of `n` left nodes picks one of `m`
/// right items or the outlier state `m`. Potentials favour a hidden
/// injective ground truth, blurred by noise.
pub struct Matching {
    pub graph: Graph,
    pub side: Vec<SideConstraint>,
    pub truth: Vec<usize>,
}

pub fn matching_instance(rng: &mut ChaCha8Rng, max_per_side: usize) -> Matching {
    let n = rng.gen_range(3..=max_per_side);
    let m = rng.gen_range(3..=max_per_side.min(5));
    let outlier = m;
    let mut items: Vec<usize> = (0..m).collect();
    items.shuffle(rng);
    let truth: Vec<usize> = (0..n).map(|i| items.get(i).copied().unwrap_or(outlier)).collect();

    let cards = vec![m + 1; n];
    let local: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..=m)
                .map(|x| {
                    let signal = if x == truth[i] { 1.0 } else { 0.0 };
                    let base = if x == outlier { -0.3 } else { 0.0 };
                    signal + base + rng.gen_range(-1.0..1.0)
                })
                .collect()
        })
        .collect();
    let pairs = loopy_pairs(rng, n, 0.3);
    let edges = pairs
        .iter()
        .map(|&(s, t)| {
            let table = (0..=m)
                .flat_map(|a| (0..=m).map(move |b| (a, b)))
                .map(|(a, b)| {
                    let agree = if (a, b) == (truth[s], truth[t]) { 0.4 } else { 0.0 };
                    agree + rng.gen_range(-0.4..0.4)
                })
                .collect();
            Edge::new(s, t, table)
        })
        .collect();
    let graph = Graph::new(cards, local, edges).expect("generated graph is valid");
    let side = vec![SideConstraint::injective_all(&graph, Some(outlier))];
    Matching { graph, side, truth }
}

/// Maximisation LP with a known feasible point and finite bounds, so it is
/// feasible and bounded.
pub fn random_feasible_lp(rng: &mut ChaCha8Rng) -> DenseLp {
    let n = rng.gen_range(2..=12);
    let lower: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.2) { -rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.5..3.0)).collect();
    let x0: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| rng.gen_range(*l..=*u)).collect();
    let mut lp = DenseLp { objective: uniform(rng, n), lower, upper, ..Default::default() };
    let row = |rng: &mut ChaCha8Rng| -> (Vec<(usize, f64)>, f64) {
        let mut r = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.6) {
                r.push((j, rng.gen_range(-1.0..=1.0)));
            }
        }
        if r.is_empty() {
            r.push((rng.gen_range(0..n), 1.0));
        }
        let at_x0 = r.iter().map(|&(j, a)| a * x0[j]).sum();
        (r, at_x0)
    };
    for _ in 0..rng.gen_range(0..=n.min(4)) {
        let (r, b) = row(rng);
        lp.add_eq(r, b);
    }
    for _ in 0..rng.gen_range(1..=6) {
        let (r, b) = row(rng);
        let slack = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) };
        lp.add_ub(r, b + slack);
    }
    lp
}

/// Relative closeness with an absolute floor of one.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
