//! Stochastic choices made during training: positive edges, the graph coin
//! and negative items.

use std::collections::HashMap;

use rand::Rng;

use crate::graph::{BipartiteGraph, Edge};
use crate::{Error, Result};

/// Exponent applied to item popularity in both noise distributions.
pub const NOISE_POWER: f64 = 0.75;

/// Walker/Vose alias table: O(1) draws from a fixed discrete distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
    target: Vec<f64>,
    total: f64,
}

impl AliasTable {
    /// Builds a table proportional to `weights`, which must be nonnegative
    /// with positive sum.
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Shape("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || total <= 0.0 {
            return Err(Error::EmptyDistribution);
        }
        let n = weights.len();
        let target: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut prob: Vec<f64> = target.iter().map(|p| p * n as f64).collect();
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| prob[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l as u32;
            prob[l] -= 1.0 - prob[s];
            if prob[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        let fallback = target.iter().position(|&p| p > 0.0).unwrap() as u32;
        for i in large.into_iter().chain(small) {
            // Leftovers exist only through rounding; zero-mass entries must
            // stay unreachable.
            if target[i] > 0.0 {
                prob[i] = 1.0;
            } else {
                prob[i] = 0.0;
                alias[i] = fallback;
            }
        }
        Ok(AliasTable { prob, alias, target, total })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    /// The normalized target distribution.
    pub fn probabilities(&self) -> &[f64] {
        &self.target
    }

    /// Sum of the weights the table was built from.
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.gen_range(0..self.prob.len());
        if rng.gen::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoiseKind {
    /// `P(v) ∝ d_v^0.75` over item degrees of the graph being trained.
    Classic,
    /// `P(v) ∝ (Σ_{u ∈ group} w_uv + γ)^0.75` from the user-item graph.
    #[default]
    GroupAware,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub gamma: f64,
}

/// Degree-based noise over the items of `g`.
pub fn classic_noise(g: &BipartiteGraph) -> Result<AliasTable> {
    let weights: Vec<f64> = g.item_out_degree().iter().map(|d| d.powf(NOISE_POWER)).collect();
    AliasTable::new(&weights)
}

/// Unnormalized group-aware noise weights over all items of `uv`.
pub fn group_aware_weights(uv: &BipartiteGraph, members: &[u32], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidGamma(gamma));
    }
    let mut popularity = vec![0.0; uv.right_count()];
    for &u in members {
        for &(item, w) in uv.adjacency(u) {
            popularity[item as usize] += w;
        }
    }
    Ok(popularity.into_iter().map(|p| (p + gamma).powf(NOISE_POWER)).collect())
}

pub fn group_aware_noise(uv: &BipartiteGraph, members: &[u32], gamma: f64) -> Result<AliasTable> {
    AliasTable::new(&group_aware_weights(uv, members, gamma)?)
}

/// Draws edges of a bipartite graph with probability proportional to their
/// weight (uniform for unit-weight graphs).
#[derive(Clone, Debug)]
pub struct EdgeSampler {
    table: AliasTable,
}

impl EdgeSampler {
    pub fn new(g: &BipartiteGraph) -> Result<Self> {
        let weights: Vec<f64> = g.edges().iter().map(|e| e.weight).collect();
        Ok(EdgeSampler { table: AliasTable::new(&weights)? })
    }

    pub fn draw<'g, R: Rng + ?Sized>(&self, g: &'g BipartiteGraph, rng: &mut R) -> &'g Edge {
        &g.edges()[self.table.sample(rng)]
    }
}

/// Draws a positive `(left, item)` pair from `g`.
pub fn draw_positive_edge<R: Rng + ?Sized>(g: &BipartiteGraph, sampler: &EdgeSampler, rng: &mut R) -> (u32, u32) {
    let e = sampler.draw(g, rng);
    (e.left, e.item)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GraphChoice {
    GroupItem,
    UserItem,
}

impl GraphChoice {
    pub fn name(self) -> &'static str {
        match self {
            GraphChoice::GroupItem => "gv",
            GraphChoice::UserItem => "uv",
        }
    }
}

/// Group-item with probability `1/(1+η)`, user-item otherwise.
pub fn choose_graph<R: Rng + ?Sized>(eta: f64, rng: &mut R) -> GraphChoice {
    if rng.gen::<f64>() < 1.0 / (1.0 + eta) {
        GraphChoice::GroupItem
    } else {
        GraphChoice::UserItem
    }
}

/// Group-aware tables, built on first use per group.
#[derive(Clone, Debug)]
pub struct GroupNoiseCache {
    gamma: f64,
    tables: HashMap<u32, AliasTable>,
}

impl GroupNoiseCache {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidGamma(gamma));
        }
        Ok(GroupNoiseCache { gamma, tables: HashMap::new() })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Changing γ drops every cached table.
    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidGamma(gamma));
        }
        if gamma != self.gamma {
            self.gamma = gamma;
            self.tables.clear();
        }
        Ok(())
    }

    pub fn cached(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&mut self, uv: &BipartiteGraph, group: u32, members: &[u32]) -> &AliasTable {
        let gamma = self.gamma;
        self.tables.entry(group).or_insert_with(|| group_aware_noise(uv, members, gamma).expect("gamma validated"))
    }
}

/// Redraw limit when a negative collides with the positive item.
const MAX_REDRAWS: usize = 64;

/// Fills `out` with up to `m` negatives from `table`, rejecting `positive`.
/// Fewer are returned only when the table has (almost) all its mass on the
/// positive item.
pub fn draw_negatives<R: Rng + ?Sized>(table: &AliasTable, positive: u32, m: usize, rng: &mut R, out: &mut Vec<u32>) {
    out.clear();
    for _ in 0..m {
        for _ in 0..MAX_REDRAWS {
            let v = table.sample(rng) as u32;
            if v != positive {
                out.push(v);
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DuplicatePolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frequencies(table: &AliasTable, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0usize; table.len()];
        for _ in 0..draws {
            counts[table.sample(&mut rng)] += 1;
        }
        counts.into_iter().map(|c| c as f64 / draws as f64).collect()
    }

    fn graph_with_degrees(degrees: &[f64]) -> BipartiteGraph {
        let edges = degrees.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(j, &w)| Edge {
            left: 0,
            item: j as u32,
            weight: w,
            timestamp: None,
        });
        BipartiteGraph::new(1, degrees.len(), edges, DuplicatePolicy::Sum).unwrap()
    }

    #[test]
    fn classic_noise_examples() {
        let t = classic_noise(&graph_with_degrees(&[1.0, 16.0])).unwrap();
        let p = t.probabilities();
        assert!((p[0] - 1.0 / 9.0).abs() < 1e-12 && (p[1] - 8.0 / 9.0).abs() < 1e-12);
        let t = classic_noise(&graph_with_degrees(&[3.0, 3.0, 3.0])).unwrap();
        assert!(t.probabilities().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
        let t = classic_noise(&graph_with_degrees(&[0.0, 1.0])).unwrap();
        assert_eq!(t.probabilities(), &[0.0, 1.0]);
        assert!(frequencies(&t, 10_000, 1)[0] == 0.0);
        assert!(matches!(classic_noise(&graph_with_degrees(&[0.0, 0.0])), Err(Error::EmptyDistribution)));
    }

    #[test]
    fn group_aware_examples() {
        // member weights: item a = 2, item b = 0
        let uv = graph_with_degrees(&[2.0, 0.0]);
        let t = group_aware_noise(&uv, &[0], 1.0).unwrap();
        let expected_a = 3f64.powf(0.75) / (3f64.powf(0.75) + 1.0);
        assert!((t.probabilities()[0] - expected_a).abs() < 1e-12);
        assert!((t.probabilities()[0] - 0.695).abs() < 1e-3);

        let uv = BipartiteGraph::new(2, 3, Vec::new(), DuplicatePolicy::Sum).unwrap();
        let t = group_aware_noise(&uv, &[0, 1], 0.5).unwrap();
        assert!(t.probabilities().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));

        assert!(matches!(group_aware_noise(&uv, &[0], 0.0), Err(Error::InvalidGamma(_))));
        assert!(matches!(group_aware_noise(&uv, &[0], -1.0), Err(Error::InvalidGamma(_))));
    }

    #[test]
    fn larger_gamma_moves_toward_uniform() {
        let uv = graph_with_degrees(&[5.0, 1.0, 0.0, 2.0]);
        let tv = |gamma: f64| {
            let t = group_aware_noise(&uv, &[0], gamma).unwrap();
            0.5 * t.probabilities().iter().map(|p| (p - 0.25).abs()).sum::<f64>()
        };
        let (a, b, c) = (tv(1.0), tv(10.0), tv(100.0));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn edge_draws_follow_weights() {
        let g = graph_with_degrees(&[1.0, 3.0]);
        let sampler = EdgeSampler::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let second = (0..draws).filter(|_| draw_positive_edge(&g, &sampler, &mut rng).1 == 1).count();
        assert!((second as f64 / draws as f64 - 0.75).abs() < 0.01);

        let single = graph_with_degrees(&[0.0, 2.0]);
        let sampler = EdgeSampler::new(&single).unwrap();
        assert!((0..100).all(|_| draw_positive_edge(&single, &sampler, &mut rng) == (0, 1)));
    }

    #[test]
    fn seeded_draws_are_reproducible() {
        let g = graph_with_degrees(&[1.0, 2.0, 3.0, 4.0]);
        let sampler = EdgeSampler::new(&g).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..50).map(|_| draw_positive_edge(&g, &sampler, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn coin_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flips = 100_000;
        for (eta, expected) in [(0.0, 1.0), (1.0, 0.5), (3.0, 0.25)] {
            let gv = (0..flips).filter(|_| choose_graph(eta, &mut rng) == GraphChoice::GroupItem).count();
            assert!((gv as f64 / flips as f64 - expected).abs() < 0.01, "eta {eta}");
        }
    }

    #[test]
    fn negatives_never_equal_positive() {
        let t = AliasTable::new(&[1.0, 1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::new();
        for _ in 0..1000 {
            draw_negatives(&t, 1, 6, &mut rng, &mut out);
            assert_eq!(out.len(), 6);
            assert!(!out.contains(&1));
        }
        let only = AliasTable::new(&[0.0, 1.0]).unwrap();
        draw_negatives(&only, 1, 3, &mut rng, &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn cache_is_invalidated_by_gamma() {
        let uv = graph_with_degrees(&[2.0, 0.0]);
        let mut cache = GroupNoiseCache::new(1.0).unwrap();
        let first = cache.table(&uv, 0, &[0]).clone();
        assert_eq!(cache.table(&uv, 0, &[0]), &first);
        assert_eq!(cache.cached(), 1);
        cache.set_gamma(1.0).unwrap();
        assert_eq!(cache.cached(), 1);
        cache.set_gamma(2.0).unwrap();
        assert_eq!(cache.cached(), 0);
        assert_ne!(cache.table(&uv, 0, &[0]), &first);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn alias_table_matches_target(weights in proptest::collection::vec(0.0f64..10.0, 1..12), seed in 0u64..1000) {
            proptest::prop_assume!(weights.iter().sum::<f64>() > 0.1);
            let t = AliasTable::new(&weights).unwrap();
            let freq = frequencies(&t, 200_000, seed);
            let tv: f64 = 0.5 * freq.iter().zip(t.probabilities()).map(|(a, b)| (a - b).abs()).sum::<f64>();
            proptest::prop_assert!(tv < 0.01, "tv {}", tv);
            for (f, &w) in freq.iter().zip(&weights) {
                if w == 0.0 { proptest::prop_assert_eq!(*f, 0.0); }
            }
        }
    }
}
