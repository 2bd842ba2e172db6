//! Seeded random trees and tables for tests and benchmarks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::newick::{Node, PhyloTree};
use crate::table::SampleTable;

/// Random rooted bifurcating tree over leaves `F0..F{n-1}` with branch
/// lengths uniform in `[0, max_length)`.
pub fn random_tree<R: Rng>(n_leaves: usize, max_length: f64, rng: &mut R) -> PhyloTree {
    assert!(n_leaves >= 1);
    let mut nodes: Vec<Node> = (0..n_leaves)
        .map(|i| Node {
            parent: None,
            children: Vec::new(),
            branch_length: rng.random_range(0.0..max_length),
            name: Some(format!("F{i}")),
        })
        .collect();
    if n_leaves == 1 {
        let root = nodes.len();
        nodes.push(Node {
            parent: None,
            children: vec![0],
            branch_length: 0.0,
            name: None,
        });
        nodes[0].parent = Some(root);
        return PhyloTree::from_nodes(nodes, root);
    }
    let mut active: Vec<usize> = (0..n_leaves).collect();
    while active.len() > 1 {
        let a = active.swap_remove(rng.random_range(0..active.len()));
        let b = active.swap_remove(rng.random_range(0..active.len()));
        let parent = nodes.len();
        nodes.push(Node {
            parent: None,
            children: vec![a, b],
            branch_length: rng.random_range(0.0..max_length),
            name: None,
        });
        nodes[a].parent = Some(parent);
        nodes[b].parent = Some(parent);
        active.push(parent);
    }
    let root = active[0];
    PhyloTree::from_nodes(nodes, root)
}

/// Random sparse integer counts: each (feature, sample) cell is nonzero
/// with probability `density`; every sample gets at least one feature.
pub fn random_table<R: Rng>(
    feature_ids: &[String],
    n_samples: usize,
    density: f64,
    rng: &mut R,
) -> SampleTable {
    assert!(!feature_ids.is_empty() && n_samples >= 1);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); feature_ids.len()];
    let mut has_any = vec![false; n_samples];
    for row in rows.iter_mut() {
        for (s, any) in has_any.iter_mut().enumerate() {
            if rng.random_bool(density) {
                row.push((s, rng.random_range(1..=100) as f64));
                *any = true;
            }
        }
    }
    for (s, any) in has_any.iter().enumerate() {
        if !any {
            let f = rng.random_range(0..feature_ids.len());
            rows[f].push((s, rng.random_range(1..=100) as f64));
        }
    }
    let sample_ids = (0..n_samples).map(|s| format!("S{s}")).collect();
    SampleTable::from_rows(sample_ids, feature_ids.to_vec(), rows)
        .expect("generated table is valid")
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub tree: PhyloTree,
    pub table: SampleTable,
}

impl Instance {
    /// Tree with `n_features` leaves (`2 * n_features - 2` embedding rows for
    /// `n_features >= 2`) and a table over all of them.
    pub fn generate(seed: u64, n_samples: usize, n_features: usize, density: f64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(n_features, 2.0, &mut rng);
        let table = random_table(tree.leaf_names(), n_samples, density, &mut rng);
        Instance { tree, table }
    }

    /// Like [`generate`](Self::generate) but the table only uses a random
    /// subset of the tree's leaves, exercising shearing.
    pub fn generate_subset(
        seed: u64,
        n_samples: usize,
        n_features: usize,
        density: f64,
    ) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(n_features, 2.0, &mut rng);
        let keep = rng.random_range(1..=n_features);
        let features: Vec<String> = tree
            .leaf_names()
            .choose_multiple(&mut rng, keep)
            .cloned()
            .collect();
        let table = random_table(&features, n_samples, density, &mut rng);
        Instance { tree, table }
    }
}
