//! Temporal split, ranking and top-n metrics.

use std::collections::{BTreeMap, HashSet};

use log::warn;

use crate::graph::{BipartiteGraph, Edge, GroupTable};
use crate::linalg::dot;
use crate::params::ModelState;
use crate::train::Network;
use crate::{Error, Result};

/// Cutoffs reported by [`EvalReport`].
pub const HITS_AT: [usize; 5] = [1, 5, 10, 15, 20];

pub const TRAIN_FRACTION: f64 = 0.8;
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Group-item interactions partitioned by time.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    /// Everything at or before `cutoff`, validation records included.
    pub train: Vec<Edge>,
    /// The latest `ceil(0.1 · |train|)` training records.
    pub validation: Vec<Edge>,
    pub test: Vec<Edge>,
    pub cutoff: i64,
}

fn time_of(e: &Edge) -> Result<i64> {
    e.timestamp.ok_or_else(|| Error::Config("group-item interactions need timestamps for the temporal split".into()))
}

/// Splits at the 80th-percentile timestamp; ties at the cutoff go to train.
pub fn temporal_split(gv: &BipartiteGraph) -> Result<SplitSpec> {
    let mut edges = gv.edges().to_vec();
    if edges.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut keyed = Vec::with_capacity(edges.len());
    for e in edges.drain(..) {
        keyed.push((time_of(&e)?, e));
    }
    keyed.sort_by_key(|(t, e)| (*t, e.left, e.item));
    let n = keyed.len();
    let at = ((TRAIN_FRACTION * n as f64).ceil() as usize).clamp(1, n) - 1;
    let cutoff = keyed[at].0;
    let (train, test): (Vec<_>, Vec<_>) = keyed.into_iter().partition(|(t, _)| *t <= cutoff);
    if test.is_empty() {
        warn!("temporal split: every interaction is at or before the cutoff {cutoff}; the test set is empty");
    }
    let train: Vec<Edge> = train.into_iter().map(|(_, e)| e).collect();
    let test: Vec<Edge> = test.into_iter().map(|(_, e)| e).collect();
    let n_val = (VALIDATION_FRACTION * train.len() as f64).ceil() as usize;
    let validation = train[train.len() - n_val..].to_vec();
    Ok(SplitSpec { train, validation, test, cutoff })
}

impl SplitSpec {
    /// The group-item graph restricted to training records.
    pub fn train_graph(&self, gv: &BipartiteGraph) -> BipartiteGraph {
        gv.with_edges(self.train.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalCase {
    pub group: u32,
    pub item: u32,
}

/// Test cases plus, per group, the items excluded from its ranking.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSet {
    pub cases: Vec<EvalCase>,
    exclusions: BTreeMap<u32, Vec<u32>>,
}

impl EvalSet {
    pub fn new(cases: Vec<EvalCase>, excluded: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut exclusions: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (g, v) in excluded {
            exclusions.entry(g).or_default().push(v);
        }
        for items in exclusions.values_mut() {
            items.sort_unstable();
            items.dedup();
        }
        EvalSet { cases, exclusions }
    }

    /// Held-out test interactions, excluding each group's training items.
    pub fn test(split: &SplitSpec) -> Self {
        let cases = split.test.iter().map(|e| EvalCase { group: e.left, item: e.item }).collect();
        EvalSet::new(cases, split.train.iter().map(|e| (e.left, e.item)))
    }

    /// Validation records, excluding each group's remaining training items.
    pub fn validation(split: &SplitSpec) -> Self {
        let held: HashSet<(u32, u32)> = split.validation.iter().map(|e| (e.left, e.item)).collect();
        let cases = split.validation.iter().map(|e| EvalCase { group: e.left, item: e.item }).collect();
        let excluded = split.train.iter().map(|e| (e.left, e.item)).filter(|p| !held.contains(p));
        EvalSet::new(cases, excluded)
    }

    pub fn exclusions(&self, group: u32) -> &[u32] {
        self.exclusions.get(&group).map_or(&[], Vec::as_slice)
    }
}

/// Scores `s = g · v` of every non-excluded item, best first; equal scores
/// in ascending item order.
pub fn rank_items(state: &ModelState<f32>, group: &[f32], exclusions: &[u32]) -> Vec<(u32, f32)> {
    let mut ranked: Vec<(u32, f32)> = (0..state.shape.items as u32)
        .filter(|v| exclusions.binary_search(v).is_err())
        .map(|v| (v, dot(group, state.item(v))))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// One-based rank of `target` under the ordering of [`rank_items`].
/// `exclusions` must be sorted and must not contain `target`.
pub fn rank_of(state: &ModelState<f32>, group: &[f32], target: u32, exclusions: &[u32]) -> usize {
    let t = dot(group, state.item(target));
    let mut rank = 1;
    for v in 0..state.shape.items as u32 {
        if v == target || exclusions.binary_search(&v).is_ok() {
            continue;
        }
        let s = dot(group, state.item(v));
        if s.total_cmp(&t).is_gt() || (s == t && v < target) {
            rank += 1;
        }
    }
    rank
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `(n, Hits@n)` for each cutoff in [`HITS_AT`].
    pub hits: Vec<(usize, f64)>,
    pub mrr: f64,
    pub cases: usize,
}

impl EvalReport {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let cases = ranks.len();
        let denom = cases.max(1) as f64;
        let hits = HITS_AT.iter().map(|&n| (n, ranks.iter().filter(|&&r| r <= n).count() as f64 / denom)).collect();
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / denom;
        EvalReport { hits, mrr, cases }
    }

    pub fn hits_at(&self, n: usize) -> Option<f64> {
        self.hits.iter().find(|(k, _)| *k == n).map(|(_, h)| *h)
    }

    /// Range, monotonicity and `MRR ≥ Hits@k / k`.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        const SLACK: f64 = 1e-12;
        if !(0.0..=1.0).contains(&self.mrr) {
            return Err(format!("mrr {} outside [0, 1]", self.mrr));
        }
        let mut prev = 0.0;
        for &(n, h) in &self.hits {
            if !(0.0..=1.0).contains(&h) {
                return Err(format!("hits@{n} = {h} outside [0, 1]"));
            }
            if h + SLACK < prev {
                return Err(format!("hits@{n} = {h} below a smaller cutoff ({prev})"));
            }
            if self.mrr + SLACK < h / n as f64 {
                return Err(format!("mrr {} below hits@{n}/{n} = {}", self.mrr, h / n as f64));
            }
            prev = h;
        }
        Ok(())
    }

    /// `{"cases": .., "hits@1": .., .., "mrr": ..}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("cases".into(), self.cases.into());
        for &(n, h) in &self.hits {
            map.insert(format!("hits@{n}"), h.into());
        }
        map.insert("mrr".into(), self.mrr.into());
        serde_json::Value::Object(map)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Rank of each case, in the order of [`EvalSet::cases`].
    pub ranks: Vec<usize>,
}

fn case_rank(
    net: &Network,
    state: &ModelState<f32>,
    groups: &GroupTable,
    set: &EvalSet,
    case: &EvalCase,
) -> Result<usize> {
    let g = net.group_vector(state, groups.members(case.group))?;
    Ok(rank_of(state, &g, case.item, set.exclusions(case.group)))
}

/// Ranks every case of `set`. Cases are independent; the result does not
/// depend on how they are scheduled.
pub fn evaluate(net: &Network, state: &ModelState<f32>, groups: &GroupTable, set: &EvalSet) -> Result<Evaluation> {
    net.check(state)?;
    if let Some(c) = set.cases.iter().find(|c| c.group as usize >= groups.len() || c.item as usize >= state.shape.items)
    {
        return Err(Error::Shape(format!("case (group {}, item {}) is out of range", c.group, c.item)));
    }
    if set.cases.is_empty() {
        warn!("evaluating an empty case set");
    }
    #[cfg(feature = "parallel")]
    let ranks: Result<Vec<usize>> = {
        use rayon::prelude::*;
        set.cases.par_iter().map(|c| case_rank(net, state, groups, set, c)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let ranks: Result<Vec<usize>> = set.cases.iter().map(|c| case_rank(net, state, groups, set, c)).collect();
    let ranks = ranks?;
    Ok(Evaluation { report: EvalReport::from_ranks(&ranks), ranks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DuplicatePolicy;
    use crate::params::Shape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gv(times: &[i64]) -> BipartiteGraph {
        let edges = times.iter().enumerate().map(|(i, &t)| Edge {
            left: (i % 3) as u32,
            item: i as u32,
            weight: 1.0,
            timestamp: Some(t),
        });
        BipartiteGraph::new(3, times.len(), edges, DuplicatePolicy::Unit).unwrap()
    }

    #[test]
    fn split_sizes() {
        let s = temporal_split(&gv(&[5, 1, 9, 3, 7, 2, 8, 4, 6, 10])).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert_eq!(s.cutoff, 8);
        assert_eq!(s.validation.len(), 1);
        assert_eq!(s.validation[0].timestamp, Some(8));

        let s = temporal_split(&gv(&[1, 2, 3, 4, 5])).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (4, 1));

        let s = temporal_split(&gv(&[4; 6])).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (6, 0));
    }

    #[test]
    fn ties_at_cutoff_go_to_train() {
        let s = temporal_split(&gv(&[1, 2, 3, 3, 3])).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (5, 0));
        let s = temporal_split(&gv(&[1, 2, 2, 2, 5])).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (4, 1));
    }

    #[test]
    fn validation_excludes_only_remaining_train_items() {
        let s = temporal_split(&gv(&[5, 1, 9, 3, 7, 2, 8, 4, 6, 10])).unwrap();
        let val = EvalSet::validation(&s);
        let test = EvalSet::test(&s);
        let held = s.validation[0];
        assert!(!val.exclusions(held.left).contains(&held.item));
        assert!(test.exclusions(held.left).contains(&held.item));
    }

    fn state(items: usize, seed: u64) -> ModelState<f32> {
        ModelState::<f32>::init(Shape { d: 4, heads: 1, views: 0, users: 1, items }, seed).unwrap()
    }

    #[test]
    fn aligned_item_with_largest_norm_ranks_first() {
        let mut s = state(6, 1);
        let g = [0.6f32, -0.2, 0.1, 0.7];
        s.item_emb[3 * 4..4 * 4].copy_from_slice(&g.map(|x| x * 10.0));
        let ranked = rank_items(&s, &g, &[]);
        assert_eq!(ranked[0].0, 3);
        assert_eq!(rank_of(&s, &g, 3, &[]), 1);
    }

    #[test]
    fn exclusions_and_ties() {
        let mut s = state(5, 2);
        s.item_emb.iter_mut().for_each(|x| *x = 0.0);
        let g = [1.0f32, 0.0, 0.0, 0.0];
        let ranked = rank_items(&s, &g, &[1, 3]);
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 2, 4]);
        assert_eq!(rank_of(&s, &g, 4, &[1, 3]), 3);
        assert_eq!(rank_of(&s, &g, 0, &[1, 3]), 1);
    }

    #[test]
    fn metrics_by_definition() {
        let r = EvalReport::from_ranks(&[4]);
        assert_eq!(r.hits_at(1), Some(0.0));
        assert_eq!(r.hits_at(5), Some(1.0));
        assert_eq!(r.mrr, 0.25);
        let r = EvalReport::from_ranks(&[1, 1, 1]);
        assert!(r.hits.iter().all(|&(_, h)| h == 1.0));
        assert_eq!(r.mrr, 1.0);
        assert_eq!(r.cases, 3);
        let json = r.to_json();
        assert_eq!(json["hits@10"], 1.0);
        assert_eq!(json["cases"], 3);
    }

    #[test]
    fn random_model_hits_match_binomial_band() {
        let items = 100;
        let cases = 3000;
        let s = state(items, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ranks: Vec<usize> = (0..cases)
            .map(|_| {
                let g: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                rank_of(&s, &g, rng.gen_range(0..items as u32), &[])
            })
            .collect();
        let report = EvalReport::from_ranks(&ranks);
        for &(n, h) in &report.hits {
            let p = n as f64 / items as f64;
            let sigma = (p * (1.0 - p) / cases as f64).sqrt();
            assert!((h - p).abs() <= 3.0 * sigma, "hits@{n} = {h}, expected {p} ± {}", 3.0 * sigma);
        }
    }

    proptest! {
        #[test]
        fn reports_satisfy_invariants(ranks in prop::collection::vec(1usize..200, 0..50)) {
            let r = EvalReport::from_ranks(&ranks);
            prop_assert!(r.check_invariants().is_ok(), "{:?}", r.check_invariants());
        }

        #[test]
        fn rank_of_agrees_with_rank_items(seed in 0u64..1000, target in 0u32..12, mask in 0u16..4096) {
            let mut s = state(12, seed);
            // Force some ties.
            for v in (0..12).step_by(3) {
                s.item_emb.copy_within(0..4, v * 4);
            }
            let exclusions: Vec<u32> = (0..12).filter(|&v| v != target && mask & (1 << v) != 0).collect();
            let g = [0.3f32, -0.5, 0.2, 0.9];
            let ranked = rank_items(&s, &g, &exclusions);
            let pos = ranked.iter().position(|r| r.0 == target).unwrap() + 1;
            prop_assert_eq!(pos, rank_of(&s, &g, target, &exclusions));
        }
    }
}
