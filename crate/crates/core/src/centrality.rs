//! Node centrality on the social graph and the ranked neighbor views built
//! from it.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{SocialGraph, View};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    PageRank,
    Eigenvector,
    Closeness,
    Betweenness,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::PageRank, Measure::Eigenvector, Measure::Closeness, Measure::Betweenness];

    pub fn name(self) -> &'static str {
        match self {
            Measure::PageRank => "pagerank",
            Measure::Eigenvector => "eigenvector",
            Measure::Closeness => "closeness",
            Measure::Betweenness => "betweenness",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown centrality measure `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentralityScores {
    pub measure: Measure,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CentralityOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Source-sample betweenness when the graph has more users than this.
    pub betweenness_exact_limit: usize,
    pub betweenness_samples: usize,
    pub seed: u64,
}

impl Default for CentralityOptions {
    fn default() -> Self {
        CentralityOptions {
            damping: 0.85,
            tol: 1e-12,
            max_iter: 10_000,
            betweenness_exact_limit: 5_000,
            betweenness_samples: 1_000,
            seed: 0,
        }
    }
}

pub fn pagerank(g: &SocialGraph, damping: f64, tol: f64, max_iter: usize) -> Result<CentralityScores> {
    let n = g.user_count();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    if !(damping > 0.0 && damping < 1.0) {
        return Err(Error::Config(format!("damping {damping} outside (0, 1)")));
    }
    let nf = n as f64;
    let mut x = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let dangling: f64 = (0..n).filter(|&u| g.neighbors(u as u32).is_empty()).map(|u| x[u]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        next.iter_mut().for_each(|v| *v = base);
        for (u, &xu) in x.iter().enumerate() {
            let nbrs = g.neighbors(u as u32);
            if !nbrs.is_empty() {
                let share = damping * xu / nbrs.len() as f64;
                for &v in nbrs {
                    next[v as usize] += share;
                }
            }
        }
        residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual < tol {
            let total: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= total);
            return Ok(CentralityScores { measure: Measure::PageRank, scores: x });
        }
    }
    Err(Error::NoConvergence { measure: "pagerank", iterations: max_iter, residual })
}

/// Power iteration on `A + I`, which shares the dominant eigenvector of the
/// adjacency matrix but does not oscillate on bipartite graphs.
pub fn eigenvector_centrality(g: &SocialGraph, tol: f64, max_iter: usize) -> Result<CentralityScores> {
    let n = g.user_count();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        for (u, out) in next.iter_mut().enumerate() {
            *out = x[u] + g.neighbors(u as u32).iter().map(|&v| x[v as usize]).sum::<f64>();
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        next.iter_mut().for_each(|v| *v /= norm);
        residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual < tol {
            return Ok(CentralityScores { measure: Measure::Eigenvector, scores: x });
        }
    }
    Err(Error::NoConvergence { measure: "eigenvector", iterations: max_iter, residual })
}

/// `(reachable - 1) / Σ distances` inside each node's component; 0 for
/// isolated nodes.
pub fn closeness_centrality(g: &SocialGraph) -> CentralityScores {
    let n = g.user_count();
    let scores = per_source(n, |s| {
        let dist = bfs_distances(g, s);
        let (reached, total) =
            dist.iter().filter(|&&d| d != usize::MAX).fold((0usize, 0usize), |(r, t), &d| (r + 1, t + d));
        if total == 0 {
            0.0
        } else {
            (reached - 1) as f64 / total as f64
        }
    });
    CentralityScores { measure: Measure::Closeness, scores }
}

/// Brandes betweenness counting each unordered pair once. With
/// `sample_sources = Some(k)` only `k` sources (drawn without replacement) are
/// expanded and the result is scaled by `n / k`.
pub fn betweenness_centrality(g: &SocialGraph, sample_sources: Option<usize>, seed: u64) -> Result<CentralityScores> {
    let n = g.user_count();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let sources: Vec<usize> = match sample_sources {
        Some(k) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, n, k.max(1)).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..n).collect(),
    };
    let scale = n as f64 / sources.len() as f64 / 2.0;

    // Fixed chunking keeps the reduction order independent of thread count.
    let chunk = sources.len().div_ceil(64).max(1);
    let chunks: Vec<&[usize]> = sources.chunks(chunk).collect();
    let partial = map_chunks(&chunks, |srcs| {
        let mut acc = vec![0.0; n];
        let mut state = BrandesState::new(n);
        for &s in srcs {
            state.accumulate(g, s, &mut acc);
        }
        acc
    });
    let mut scores = vec![0.0; n];
    for acc in partial {
        for (s, a) in scores.iter_mut().zip(acc) {
            *s += a;
        }
    }
    scores.iter_mut().for_each(|s| *s *= scale);
    Ok(CentralityScores { measure: Measure::Betweenness, scores })
}

struct BrandesState {
    sigma: Vec<f64>,
    dist: Vec<usize>,
    delta: Vec<f64>,
    preds: Vec<Vec<u32>>,
    stack: Vec<u32>,
    queue: VecDeque<u32>,
}

impl BrandesState {
    fn new(n: usize) -> Self {
        BrandesState {
            sigma: vec![0.0; n],
            dist: vec![usize::MAX; n],
            delta: vec![0.0; n],
            preds: vec![Vec::new(); n],
            stack: Vec::with_capacity(n),
            queue: VecDeque::new(),
        }
    }

    fn accumulate(&mut self, g: &SocialGraph, s: usize, acc: &mut [f64]) {
        for &v in &self.stack {
            let v = v as usize;
            self.sigma[v] = 0.0;
            self.dist[v] = usize::MAX;
            self.delta[v] = 0.0;
            self.preds[v].clear();
        }
        self.stack.clear();
        self.sigma[s] = 1.0;
        self.dist[s] = 0;
        self.queue.push_back(s as u32);
        while let Some(v) = self.queue.pop_front() {
            self.stack.push(v);
            let dv = self.dist[v as usize];
            for &w in g.neighbors(v) {
                let wi = w as usize;
                if self.dist[wi] == usize::MAX {
                    self.dist[wi] = dv + 1;
                    self.queue.push_back(w);
                }
                if self.dist[wi] == dv + 1 {
                    self.sigma[wi] += self.sigma[v as usize];
                    self.preds[wi].push(v);
                }
            }
        }
        for &w in self.stack.iter().rev() {
            let wi = w as usize;
            let coeff = (1.0 + self.delta[wi]) / self.sigma[wi];
            for &v in &self.preds[wi] {
                self.delta[v as usize] += self.sigma[v as usize] * coeff;
            }
            if wi != s {
                acc[wi] += self.delta[wi];
            }
        }
    }
}

fn bfs_distances(g: &SocialGraph, s: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.user_count()];
    let mut queue = VecDeque::from([s as u32]);
    dist[s] = 0;
    while let Some(v) = queue.pop_front() {
        let dv = dist[v as usize];
        for &w in g.neighbors(v) {
            if dist[w as usize] == usize::MAX {
                dist[w as usize] = dv + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

#[cfg(feature = "parallel")]
fn per_source<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(&f).collect()
}

#[cfg(not(feature = "parallel"))]
fn per_source<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
fn map_chunks<T: Send, F: Fn(&[usize]) -> T + Sync>(chunks: &[&[usize]], f: F) -> Vec<T> {
    use rayon::prelude::*;
    chunks.par_iter().map(|c| f(c)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_chunks<T, F: Fn(&[usize]) -> T>(chunks: &[&[usize]], f: F) -> Vec<T> {
    chunks.iter().map(|c| f(c)).collect()
}

pub fn compute(g: &SocialGraph, measure: Measure, opts: &CentralityOptions) -> Result<CentralityScores> {
    match measure {
        Measure::PageRank => pagerank(g, opts.damping, opts.tol, opts.max_iter),
        Measure::Eigenvector => eigenvector_centrality(g, opts.tol, opts.max_iter),
        Measure::Closeness => {
            if g.user_count() == 0 {
                return Err(Error::EmptyGraph);
            }
            Ok(closeness_centrality(g))
        }
        Measure::Betweenness => {
            let sample = (g.user_count() > opts.betweenness_exact_limit).then_some(opts.betweenness_samples);
            betweenness_centrality(g, sample, opts.seed)
        }
    }
}

/// Orders `neighbors` by descending score, ties by ascending id.
pub fn rank_neighbors(neighbors: &[u32], scores: &[f64]) -> Vec<u32> {
    let mut ranked = neighbors.to_vec();
    ranked.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
    ranked
}

/// Returns a copy of `g` with one view per entry of `scores`, in that order.
pub fn build_views(g: &SocialGraph, scores: &[CentralityScores]) -> SocialGraph {
    let views = scores
        .iter()
        .map(|s| View {
            measure: s.measure,
            scores: s.scores.clone(),
            ranked: (0..g.user_count()).map(|u| rank_neighbors(g.neighbors(u as u32), &s.scores)).collect(),
        })
        .collect();
    let mut out = g.clone();
    out.set_views(views);
    out
}

/// Computes every measure in `measures` and attaches the views.
pub fn with_views(g: &SocialGraph, measures: &[Measure], opts: &CentralityOptions) -> Result<SocialGraph> {
    let scores = measures.iter().map(|&m| compute(g, m, opts)).collect::<Result<Vec<_>>>()?;
    Ok(build_views(g, &scores))
}
