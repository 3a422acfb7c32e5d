//! Reverse Cuthill-McKee reordering of the mask's sparsity graph.
//!
//! Ordering uses the symmetrized pattern; the attention mask itself is
//! permuted as-is, so asymmetric masks stay asymmetric.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::matrix::{AttentionInputs, Element, Matrix};

/// Undirected graph with an edge `i - j` when `mask[i][j]` or `mask[j][i]` is set, `i != j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityGraph {
    adjacency: Vec<Vec<usize>>,
}

impl SparsityGraph {
    /// Builds a graph from an edge list; duplicates and self-loops are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { adjacency }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

pub fn build_graph(mask: &Mask) -> SparsityGraph {
    let n = mask.n();
    let transpose = mask.transpose();
    let adjacency = (0..n)
        .map(|i| {
            let mut list: Vec<usize> = mask
                .row_indices(i)
                .chain(transpose.row_indices(i))
                .filter(|&j| j != i)
                .collect();
            list.sort_unstable();
            list.dedup();
            list
        })
        .collect();
    SparsityGraph { adjacency }
}

/// Token reordering: `forward[new] = old`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        let forward: Vec<usize> = (0..n).collect();
        Self {
            inverse: forward.clone(),
            forward,
        }
    }

    /// Validates that `forward` is a bijection on `0..len`.
    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in forward.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "not a permutation of 0..{n}: index {old} repeated or out of range"
                )));
            }
            inverse[old] = new;
        }
        Ok(Self { forward, inverse })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }
}

/// Cuthill-McKee BFS per component, then reversed.
///
/// Components are taken in ascending order of their smallest node index and
/// started from their minimum-degree node (lowest index on ties). Unvisited
/// neighbors are enqueued by ascending degree, then index.
pub fn rcm_order(graph: &SparsityGraph) -> Permutation {
    let n = graph.n_nodes();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut in_component = vec![false; n];
    let mut queue = VecDeque::new();

    for root in 0..n {
        if seen[root] {
            continue;
        }
        // collect the component to pick its start node
        let mut component = vec![root];
        in_component[root] = true;
        let mut k = 0;
        while k < component.len() {
            let u = component[k];
            k += 1;
            for &w in graph.neighbors(u) {
                if !in_component[w] {
                    in_component[w] = true;
                    component.push(w);
                }
            }
        }
        let start = *component
            .iter()
            .min_by_key(|&&u| (graph.degree(u), u))
            .expect("component contains root");

        seen[start] = true;
        queue.push_back(start);
        let mut next = Vec::new();
        while let Some(u) = queue.pop_front() {
            order.push(u);
            next.clear();
            next.extend(graph.neighbors(u).iter().copied().filter(|&w| !seen[w]));
            next.sort_unstable_by_key(|&w| (graph.degree(w), w));
            for &w in &next {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    Permutation::from_forward(order).expect("BFS visits every node exactly once")
}

/// `max |i - j|` over the nonzero entries; 0 for empty or diagonal masks.
pub fn bandwidth(mask: &Mask) -> usize {
    (0..mask.n())
        .flat_map(|i| mask.row_indices(i).map(move |j| i.abs_diff(j)))
        .max()
        .unwrap_or(0)
}

/// `mask'[a][b] = mask[forward[a]][forward[b]]`.
pub fn permute_mask(mask: &Mask, perm: &Permutation) -> Result<Mask> {
    check_len(mask.n(), perm)?;
    let mut out = Mask::zeros(mask.n());
    for (a, &old_row) in perm.forward.iter().enumerate() {
        for old_col in mask.row_indices(old_row) {
            out.set(a, perm.inverse[old_col], true);
        }
    }
    Ok(out)
}

pub fn permute_inputs<T: Element>(inputs: &AttentionInputs<T>, perm: &Permutation) -> Result<AttentionInputs<T>> {
    check_len(inputs.n_tokens(), perm)?;
    AttentionInputs::with_scale(
        inputs.q().gather_rows(&perm.forward),
        inputs.k().gather_rows(&perm.forward),
        inputs.v().gather_rows(&perm.forward),
        inputs.scale(),
    )
}

/// Permutes the mask and the token rows of Q, K, V together.
pub fn apply_reordering<T: Element>(
    mask: &Mask,
    inputs: &AttentionInputs<T>,
    perm: &Permutation,
) -> Result<(Mask, AttentionInputs<T>)> {
    Ok((permute_mask(mask, perm)?, permute_inputs(inputs, perm)?))
}

/// Maps rows computed on permuted tokens back to the original order.
pub fn un_permute_output<T: Element>(out: &Matrix<T>, perm: &Permutation) -> Result<Matrix<T>> {
    check_len(out.rows(), perm)?;
    Ok(out.gather_rows(&perm.inverse))
}

/// Same as [`un_permute_output`] for per-row statistics.
pub fn un_permute_rows<X: Copy>(values: &[X], perm: &Permutation) -> Result<Vec<X>> {
    check_len(values.len(), perm)?;
    Ok(perm.inverse.iter().map(|&a| values[a]).collect())
}

fn check_len(n: usize, perm: &Permutation) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Shape(format!(
            "permutation of length {} applied to {n} tokens",
            perm.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{blocked_forward, Prep, Variant};
    use crate::mask::{block_stats, block_sums, BlockSpec};
    use crate::reference::naive_forward;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_perm(n: usize, seed: u64) -> Permutation {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Permutation::from_forward(v).unwrap()
    }

    fn graph_mask(graph: &SparsityGraph) -> Mask {
        Mask::from_fn(graph.n_nodes(), |i, j| i == j || graph.neighbors(i).binary_search(&j).is_ok())
    }

    fn random_inputs(n: usize, d: usize, seed: u64) -> AttentionInputs<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = || Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let (q, k, v) = (m(), m(), m());
        AttentionInputs::new(q, k, v).unwrap()
    }

    #[test]
    fn diagonal_mask_has_no_edges() {
        let g = build_graph(&Mask::from_fn(6, |i, j| i == j));
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn single_entry_one_edge() {
        let mut mask = Mask::zeros(6);
        mask.set(0, 5, true);
        let g = build_graph(&mask);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.neighbors(0), &[5]);
        assert_eq!(g.neighbors(5), &[0]);
    }

    #[test]
    fn causal_symmetrizes_to_complete_graph() {
        let g = build_graph(&Mask::from_fn(4, |i, j| j <= i));
        assert_eq!(g.edge_count(), 6);
        for i in 0..4 {
            assert_eq!(g.degree(i), 3);
        }
    }

    #[test]
    fn ordered_path_keeps_bandwidth_one() {
        let g = SparsityGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let perm = rcm_order(&g);
        assert_eq!(bandwidth(&permute_mask(&graph_mask(&g), &perm).unwrap()), 1);
    }

    #[test]
    fn relabeled_path_recovers_bandwidth_one() {
        let relabel = random_perm(8, 3);
        let edges: Vec<(usize, usize)> = (0..7).map(|i| (relabel.forward()[i], relabel.forward()[i + 1])).collect();
        let g = SparsityGraph::from_edges(8, &edges);
        let mask = graph_mask(&g);
        assert!(bandwidth(&mask) > 1);
        let perm = rcm_order(&g);
        assert_eq!(bandwidth(&permute_mask(&mask, &perm).unwrap()), 1);
    }

    #[test]
    fn components_are_contiguous() {
        // {0, 2, 4} and {1, 3, 5}
        let g = SparsityGraph::from_edges(6, &[(0, 2), (2, 4), (1, 3), (3, 5)]);
        let order = rcm_order(&g).forward().to_vec();
        let parity: Vec<usize> = order.iter().map(|i| i % 2).collect();
        let switches = parity.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(switches, 1, "{order:?}");
    }

    #[test]
    fn bandwidth_examples() {
        assert_eq!(bandwidth(&Mask::from_fn(5, |i, j| i == j)), 0);
        assert_eq!(bandwidth(&Mask::zeros(5)), 0);
        let mut m = Mask::zeros(9);
        m.set(0, 8, true);
        assert_eq!(bandwidth(&m), 8);
        assert_eq!(bandwidth(&Mask::from_fn(30, |i, j| i.abs_diff(j) <= 4)), 4);
    }

    #[test]
    fn identity_permutation_is_noop() {
        let mask = Mask::from_fn(7, |i, j| (i * j) % 3 == 1);
        let inputs = random_inputs(7, 2, 1);
        let perm = Permutation::identity(7);
        let (m2, i2) = apply_reordering(&mask, &inputs, &perm).unwrap();
        assert_eq!(m2, mask);
        assert_eq!(i2, inputs);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mask = Mask::ones(4);
        assert!(matches!(permute_mask(&mask, &Permutation::identity(5)), Err(Error::Shape(_))));
        assert!(Permutation::from_forward(vec![0, 0, 1]).is_err());
        assert!(Permutation::from_forward(vec![0, 3]).is_err());
    }

    #[test]
    fn all_ones_round_trip_is_bit_exact() {
        let mask = Mask::ones(24);
        let inputs = random_inputs(24, 4, 5);
        let perm = random_perm(24, 6);
        let base = naive_forward(&inputs, &mask).unwrap();
        let (pm, pi) = apply_reordering(&mask, &inputs, &perm).unwrap();
        let permuted = naive_forward(&pi, &pm).unwrap();
        let back = un_permute_output(&permuted.out, &perm).unwrap();
        assert_eq!(back, base.out);
    }

    #[test]
    fn binblk_after_rcm_matches_oracle() {
        let n = 96;
        let band = Mask::from_fn(n, |i, j| i.abs_diff(j) <= 3);
        let shuffle = random_perm(n, 9);
        let mask = permute_mask(&band, &shuffle).unwrap();
        let inputs = random_inputs(n, 4, 10);
        let perm = rcm_order(&build_graph(&mask));
        let (pm, pi) = apply_reordering(&mask, &inputs, &perm).unwrap();
        let spec = BlockSpec::new(16, 16).unwrap();
        let before = block_stats(&block_sums(&mask, spec)).blocks_nonzero;
        let after = block_stats(&block_sums(&pm, spec)).blocks_nonzero;
        assert!(after < before, "{after} >= {before}");
        let (out, _) = blocked_forward(&pi, Some(&pm), spec, Variant::BinBlk, &Prep::build(&pm, spec, Variant::BinBlk)).unwrap();
        let back = un_permute_output(&out.out, &perm).unwrap();
        let oracle = naive_forward(&inputs, &mask).unwrap();
        assert!(back.max_abs_diff(&oracle.out) <= 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rcm_yields_a_bijection(n in 1usize..120, density in 0.0f64..0.1, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = Mask::from_fn(n, |_, _| rng.random_bool(density));
            let perm = rcm_order(&build_graph(&mask));
            let mut sorted = perm.forward().to_vec();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            for (new, &old) in perm.forward().iter().enumerate() {
                prop_assert_eq!(perm.inverse()[old], new);
            }
            prop_assert_eq!(rcm_order(&build_graph(&mask)), perm);
        }

        #[test]
        fn reference_is_permutation_equivariant(n in 1usize..24, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = Mask::from_fn(n, |_, _| rng.random_bool(0.4));
            let inputs = random_inputs(n, 3, seed ^ 1);
            let perm = random_perm(n, seed ^ 2);
            let base = naive_forward(&inputs, &mask).unwrap();
            let (pm, pi) = apply_reordering(&mask, &inputs, &perm).unwrap();
            let permuted = naive_forward(&pi, &pm).unwrap();
            prop_assert_eq!(permuted.out, base.out.gather_rows(perm.forward()));
        }
    }
}
