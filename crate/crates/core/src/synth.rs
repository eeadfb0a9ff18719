//! Synthetic datasets with planted cluster structure.
//!
//! Users and items are partitioned into clusters, and each cluster's items
//! into topics. Users mostly interact with popular items of their own
//! cluster, concentrated on one favourite topic, and befriend users of their
//! own cluster who tend to share that topic. Groups gather a user and their
//! friends; group choices follow the members' own tastes, leaning towards the
//! most connected member, so a model that reads member preferences and the
//! social graph can recover them.
//!
//! Groups come in two kinds. Groups with history interact several times
//! early on; occasional groups interact exactly once, after the
//! 80th-percentile cutoff, so every test case is a group never seen in
//! training.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::TRAIN_FRACTION;
use crate::graph::DatasetText;
use crate::sampling::AliasTable;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub clusters: usize,
    pub users_per_cluster: usize,
    pub items_per_cluster: usize,
    /// Mean in-cluster user-item probability.
    pub p_in: f64,
    /// Cross-cluster user-item probability.
    pub p_out: f64,
    /// Zipf exponent of in-cluster item popularity.
    pub popularity_skew: f64,
    /// Zipf exponent of per-user activity, shared by items and friendships.
    pub activity_skew: f64,
    pub topics_per_cluster: usize,
    /// Share of a user's in-cluster interactions on their favourite topic.
    pub topic_focus: f64,
    /// Share of a user's in-cluster friendships with same-topic users.
    pub social_focus: f64,
    pub groups: usize,
    pub group_size_min: usize,
    pub group_size_max: usize,
    /// Interactions of each group with history. Occasional groups have one.
    pub interactions_per_group: usize,
    /// Probability that a group interaction copies a member's own item.
    pub member_bias: f64,
    /// Given a copied item, probability that it comes from the leader.
    pub leader_share: f64,
    /// Mean in-cluster friendship probability.
    pub social_p_in: f64,
    pub social_p_out: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            clusters: 2,
            users_per_cluster: 50,
            items_per_cluster: 40,
            p_in: 0.2,
            p_out: 0.01,
            popularity_skew: 0.8,
            activity_skew: 0.0,
            topics_per_cluster: 4,
            topic_focus: 0.7,
            social_focus: 0.8,
            groups: 60,
            group_size_min: 4,
            group_size_max: 4,
            interactions_per_group: 5,
            member_bias: 0.3,
            leader_share: 0.9,
            social_p_in: 0.15,
            social_p_out: 0.005,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        for (name, p) in [
            ("p_in", self.p_in),
            ("p_out", self.p_out),
            ("topic_focus", self.topic_focus),
            ("social_focus", self.social_focus),
            ("member_bias", self.member_bias),
            ("leader_share", self.leader_share),
            ("social_p_in", self.social_p_in),
            ("social_p_out", self.social_p_out),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(&format!("{name} = {p} is not a probability"));
            }
        }
        if self.p_in <= self.p_out {
            return fail("p_in must exceed p_out");
        }
        for (name, x) in [("popularity_skew", self.popularity_skew), ("activity_skew", self.activity_skew)] {
            if !(x >= 0.0 && x.is_finite()) {
                return fail(&format!("{name} must be nonnegative"));
            }
        }
        if self.clusters == 0 || self.users_per_cluster == 0 || self.items_per_cluster == 0 {
            return fail("clusters, users and items must be nonzero");
        }
        if self.topics_per_cluster == 0 || self.topics_per_cluster > self.items_per_cluster {
            return fail("topics_per_cluster must be between 1 and items_per_cluster");
        }
        if self.groups == 0 || self.interactions_per_group == 0 {
            return fail("groups and interactions_per_group must be nonzero");
        }
        if self.group_size_min == 0 || self.group_size_min > self.group_size_max {
            return fail("group sizes must satisfy 1 <= min <= max");
        }
        if self.group_size_max > self.users_per_cluster {
            return fail("groups cannot be larger than a cluster");
        }
        if self.interactions_per_group > self.items_per_cluster / self.topics_per_cluster {
            return fail("interactions_per_group exceeds the number of items per topic");
        }
        if occasional_groups(self.groups, self.interactions_per_group).is_none() {
            return fail("no number of occasional groups fills exactly the held-out share");
        }
        Ok(())
    }

    pub fn user_count(&self) -> usize {
        self.clusters * self.users_per_cluster
    }

    pub fn item_count(&self) -> usize {
        self.clusters * self.items_per_cluster
    }
}

/// Generated files plus the planted ground truth, keyed by the names used in
/// the files (`u{i}`, `i{j}`, `g{k}`).
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub text: DatasetText,
    pub user_cluster: Vec<usize>,
    pub item_cluster: Vec<usize>,
    /// Favourite topic of each user, numbered within its cluster.
    pub user_topic: Vec<usize>,
    /// Topic of each item, numbered within its cluster.
    pub item_topic: Vec<usize>,
    pub group_cluster: Vec<usize>,
    /// Groups `0..history_groups` have history; the rest are occasional.
    pub history_groups: usize,
    pub group_leader: Vec<usize>,
}

pub fn user_name(u: usize) -> String {
    format!("u{u}")
}

pub fn item_name(v: usize) -> String {
    format!("i{v}")
}

pub fn group_name(g: usize) -> String {
    format!("g{g}")
}

/// Weights with mean one, Zipf-distributed over a random permutation.
fn popularity<R: Rng>(n: usize, skew: f64, rng: &mut R) -> Vec<f64> {
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let raw: Vec<f64> = ranks.iter().map(|&r| ((r + 1) as f64).powf(-skew)).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    raw.into_iter().map(|x| x / mean).collect()
}

/// Number of occasional groups `t` such that, with the other groups making
/// `per_group` interactions each, the latest 20% of all interactions are
/// exactly the `t` occasional ones.
pub fn occasional_groups(groups: usize, per_group: usize) -> Option<usize> {
    (1..=groups).find(|&t| {
        let n = t + (groups - t) * per_group;
        n - (TRAIN_FRACTION * n as f64).ceil() as usize == t
    })
}

/// Multipliers `(same, other)` that put a `focus` share of mass on one of `t`
/// equally sized topics while keeping the mean multiplier at one.
fn focus_factors(focus: f64, t: usize) -> (f64, f64) {
    if t == 1 {
        (1.0, 1.0)
    } else {
        (focus * t as f64, (1.0 - focus) * t as f64 / (t - 1) as f64)
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, nu, ni) = (spec.clusters, spec.users_per_cluster, spec.items_per_cluster);
    let users = c * nu;
    let items = c * ni;
    let user_cluster: Vec<usize> = (0..users).map(|u| u / nu).collect();
    let item_cluster: Vec<usize> = (0..items).map(|v| v / ni).collect();
    let topics = spec.topics_per_cluster;
    let item_topic: Vec<usize> = (0..items).map(|v| (v % ni) * topics / ni).collect();
    let user_topic: Vec<usize> = (0..users).map(|_| rng.gen_range(0..topics)).collect();
    let (item_same, item_other) = focus_factors(spec.topic_focus, topics);
    let (social_same, social_other) = focus_factors(spec.social_focus, topics);

    // Users differ in how active they are, both with items and socially.
    let activity: Vec<f64> = (0..c).flat_map(|_| popularity(nu, spec.activity_skew, &mut rng)).collect();

    // User-item interactions.
    let pop: Vec<Vec<f64>> = (0..c).map(|_| popularity(ni, spec.popularity_skew, &mut rng)).collect();
    let pop_tables = pop.iter().map(|w| AliasTable::new(w)).collect::<Result<Vec<_>>>()?;
    let mut uv: Vec<Vec<(usize, u32)>> = vec![Vec::new(); users];
    for (u, row) in uv.iter_mut().enumerate() {
        let cu = user_cluster[u];
        for v in 0..items {
            let cv = item_cluster[v];
            let p = if cu == cv {
                let f = if user_topic[u] == item_topic[v] { item_same } else { item_other };
                (spec.p_in * pop[cv][v % ni] * f * activity[u]).min(1.0)
            } else {
                spec.p_out
            };
            if rng.gen_bool(p) {
                row.push((v, rng.gen_range(1..=3)));
            }
        }
    }
    // Every user and item appears at least once.
    for (u, row) in uv.iter_mut().enumerate() {
        if row.is_empty() {
            let cu = user_cluster[u];
            row.push((cu * ni + pop_tables[cu].sample(&mut rng), 1));
        }
    }
    let mut seen = vec![false; items];
    uv.iter().flatten().for_each(|&(v, _)| seen[v] = true);
    for v in (0..items).filter(|&v| !seen[v]) {
        let u = item_cluster[v] * nu + rng.gen_range(0..nu);
        uv[u].push((v, 1));
        uv[u].sort_unstable();
    }

    // Social graph: Chung-Lu style inside clusters, uniform across.
    let mut friends: Vec<(usize, usize)> = Vec::new();
    let mut degree = vec![0usize; users];
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); users];
    for a in 0..users {
        for b in a + 1..users {
            let p = if user_cluster[a] == user_cluster[b] {
                let f = if user_topic[a] == user_topic[b] { social_same } else { social_other };
                (spec.social_p_in * activity[a] * activity[b] * f).min(1.0)
            } else {
                spec.social_p_out
            };
            if rng.gen_bool(p) {
                friends.push((a, b));
                degree[a] += 1;
                degree[b] += 1;
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }

    // Groups and their interactions.
    let mut group_cluster = Vec::with_capacity(spec.groups);
    let mut group_leader = Vec::with_capacity(spec.groups);
    let mut group_members = Vec::with_capacity(spec.groups);
    let mut group_items: Vec<Vec<usize>> = Vec::with_capacity(spec.groups);
    let occasional = occasional_groups(spec.groups, spec.interactions_per_group).expect("validated");
    let history_groups = spec.groups - occasional;
    for g in 0..spec.groups {
        let wanted = if g < history_groups { spec.interactions_per_group } else { 1 };
        // An organizer, their in-cluster friends, then other cluster members.
        let organizer = rng.gen_range(0..users);
        let cluster = user_cluster[organizer];
        let size = rng.gen_range(spec.group_size_min..=spec.group_size_max);
        let mut members = vec![organizer];
        let friends_in: Vec<usize> =
            adjacency[organizer].iter().copied().filter(|&f| user_cluster[f] == cluster).collect();
        members.extend(friends_in.choose_multiple(&mut rng, size - 1).copied());
        let rest: Vec<usize> = (cluster * nu..(cluster + 1) * nu).filter(|u| !members.contains(u)).collect();
        let missing = size - members.len();
        members.extend(rest.choose_multiple(&mut rng, missing).copied());
        let leader = *members.iter().max_by_key(|&&u| (degree[u], std::cmp::Reverse(u))).expect("groups are nonempty");
        let own = |u: usize| -> Vec<usize> {
            uv[u].iter().map(|&(v, _)| v).filter(|&v| item_cluster[v] == cluster).collect()
        };
        let mut chosen: Vec<usize> = Vec::with_capacity(wanted);
        while chosen.len() < wanted {
            let mut pick = None;
            if rng.gen_bool(spec.member_bias) {
                let who = if rng.gen_bool(spec.leader_share) {
                    leader
                } else {
                    *members.choose(&mut rng).expect("groups are nonempty")
                };
                pick = own(who).choose(&mut rng).copied();
            }
            let v = pick.unwrap_or_else(|| loop {
                let v = cluster * ni + pop_tables[cluster].sample(&mut rng);
                if item_topic[v] == user_topic[leader] {
                    break v;
                }
            });
            if !chosen.contains(&v) {
                chosen.push(v);
            }
        }
        group_cluster.push(cluster);
        group_leader.push(leader);
        group_members.push(members);
        group_items.push(chosen);
    }

    // History first, round by round, then the occasional groups.
    let mut order: Vec<(usize, usize)> = Vec::new();
    for k in 0..spec.interactions_per_group {
        order.extend((0..history_groups).map(|g| (g, k)));
    }
    order.extend((history_groups..spec.groups).map(|g| (g, 0)));

    let mut text = DatasetText::default();
    for (u, row) in uv.iter().enumerate() {
        for &(v, w) in row {
            let _ = writeln!(text.user_item, "{}\t{}\t{w}", user_name(u), item_name(v));
        }
    }
    for (t, &(g, k)) in order.iter().enumerate() {
        let _ = writeln!(text.group_item, "{}\t{}\t{}", group_name(g), item_name(group_items[g][k]), t + 1);
    }
    for (g, members) in group_members.iter().enumerate() {
        let names: Vec<String> = members.iter().map(|&u| user_name(u)).collect();
        let _ = writeln!(text.groups, "{}\t{}", group_name(g), names.join(","));
    }
    for &(a, b) in &friends {
        let _ = writeln!(text.social, "{}\t{}", user_name(a), user_name(b));
        let _ = writeln!(text.social, "{}\t{}", user_name(b), user_name(a));
    }

    Ok(Synthetic {
        text,
        user_cluster,
        item_cluster,
        user_topic,
        item_topic,
        group_cluster,
        history_groups,
        group_leader,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::temporal_split;

    fn parse_index(name: &str) -> usize {
        name[1..].parse().unwrap()
    }

    fn cross_cluster_user_items(s: &Synthetic) -> usize {
        s.text
            .user_item
            .lines()
            .filter(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                s.user_cluster[parse_index(f[0])] != s.item_cluster[parse_index(f[1])]
            })
            .count()
    }

    #[test]
    fn occasional_group_count() {
        assert_eq!(occasional_groups(60, 5), Some(33));
        assert_eq!(occasional_groups(10, 1), Some(2));
        assert_eq!(occasional_groups(100, 7), None);
        for (g, r) in [(60, 5), (8, 3), (20, 4), (5, 2)] {
            let t = occasional_groups(g, r).unwrap();
            let n = t + (g - t) * r;
            assert_eq!(n - (0.8 * n as f64).ceil() as usize, t);
        }
    }

    #[test]
    fn same_seed_same_files() {
        let a = generate(&SynthSpec::default()).unwrap();
        let b = generate(&SynthSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 8, ..SynthSpec::default() }).unwrap();
        assert_ne!(a.text, c.text);
    }

    #[test]
    fn default_dataset_shape() {
        let spec = SynthSpec::default();
        let s = generate(&spec).unwrap();
        let ds = s.text.parse().unwrap();
        assert_eq!(ds.ids.users.len(), spec.user_count());
        assert_eq!(ds.ids.items.len(), spec.item_count());
        assert_eq!(ds.groups.len(), spec.groups);
        assert!(ds.social.is_symmetric());
        assert_eq!(s.history_groups, 27);
        for (g, members) in ds.groups.iter().enumerate() {
            let cluster = s.group_cluster[parse_index(ds.ids.groups.name(g as u32))];
            assert_eq!(members.len(), 4);
            for &u in members {
                assert_eq!(s.user_cluster[parse_index(ds.ids.users.name(u))], cluster);
            }
        }
    }

    #[test]
    fn test_split_is_exactly_the_occasional_groups() {
        let s = generate(&SynthSpec::default()).unwrap();
        let ds = s.text.parse().unwrap();
        let split = temporal_split(&ds.gv).unwrap();
        let mut test_groups: Vec<usize> = split.test.iter().map(|e| parse_index(ds.ids.groups.name(e.left))).collect();
        test_groups.sort_unstable();
        assert_eq!(test_groups, (27..60).collect::<Vec<_>>());
        assert!(split.train.iter().all(|e| parse_index(ds.ids.groups.name(e.left)) < s.history_groups));
    }

    #[test]
    fn no_cross_cluster_edges_without_p_out() {
        let spec = SynthSpec { p_out: 0.0, social_p_out: 0.0, ..SynthSpec::default() };
        let s = generate(&spec).unwrap();
        assert_eq!(cross_cluster_user_items(&s), 0);
        for l in s.text.social.lines() {
            let (a, b) = l.split_once('\t').unwrap();
            assert_eq!(s.user_cluster[parse_index(a)], s.user_cluster[parse_index(b)]);
        }
    }

    #[test]
    fn cross_cluster_count_ignores_activity() {
        // 100 users × 40 foreign items × 0.01: mean 40, sd ≈ 6.3.
        for skew in [0.0, 0.8] {
            for seed in 1..=5 {
                let spec = SynthSpec { seed, activity_skew: skew, ..SynthSpec::default() };
                let n = cross_cluster_user_items(&generate(&spec).unwrap()) as f64;
                assert!((n - 40.0).abs() < 3.0 * 6.3, "seed {seed} skew {skew}: {n}");
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let d = SynthSpec::default;
        for bad in [
            SynthSpec { p_in: 1.5, ..d() },
            SynthSpec { p_in: 0.01, p_out: 0.01, ..d() },
            SynthSpec { popularity_skew: -1.0, ..d() },
            SynthSpec { clusters: 0, ..d() },
            SynthSpec { topics_per_cluster: 41, ..d() },
            SynthSpec { group_size_min: 5, group_size_max: 4, ..d() },
            SynthSpec { group_size_max: 51, ..d() },
            SynthSpec { interactions_per_group: 11, ..d() },
            SynthSpec { groups: 0, ..d() },
            SynthSpec { groups: 100, interactions_per_group: 7, ..d() },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
