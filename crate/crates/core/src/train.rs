//! Negative-sampling objectives and the training procedures.
//!
//! Each SGD step draws one positive edge and `M` negative items and descends
//!
//! ```text
//! -log σ(x · v_pos) - Σ_k log σ(-x · v_k)
//! ```
//!
//! where `x` is either a group representation (group-item step) or a
//! centrality-aware user representation (user-item step).

use std::cell::UnsafeCell;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{group_backward, group_forward, AttentionScale};
use crate::config::{MemberSource, Mode, TrainingConfig};
use crate::conv::{convolve_backward, user_forward, ConvOptions, ConvOutput};
use crate::graph::{BipartiteGraph, GroupTable, SocialGraph};
use crate::linalg::{axpy, dot};
use crate::params::{Gradients, ModelState, Shape};
use crate::sampling::{
    choose_graph, classic_noise, draw_negatives, AliasTable, EdgeSampler, GraphChoice, GroupNoiseCache, NoiseKind,
};
use crate::{Error, Real, Result};

/// Scores beyond this magnitude are clamped before the sigmoid.
pub const SCORE_CLAMP: f64 = 30.0;

/// Everything needed to turn parameters into user and group vectors.
#[derive(Clone, Debug)]
pub struct Network<'a> {
    pub social: &'a SocialGraph,
    pub conv: ConvOptions,
    pub scale: AttentionScale,
    pub members: MemberSource,
}

impl<'a> Network<'a> {
    pub fn new(social: &'a SocialGraph, cfg: &TrainingConfig) -> Self {
        Network { social, conv: cfg.conv_options(), scale: cfg.scale, members: cfg.members }
    }

    /// Fails unless the social graph carries exactly the views the state was
    /// shaped for.
    pub fn check<F: Real>(&self, state: &ModelState<F>) -> Result<()> {
        if self.social.views().len() != state.shape.views {
            return Err(Error::Shape(format!(
                "social graph has {} views, model has {}",
                self.social.views().len(),
                state.shape.views
            )));
        }
        if self.social.user_count() != state.shape.users {
            return Err(Error::Shape(format!(
                "social graph has {} users, model has {}",
                self.social.user_count(),
                state.shape.users
            )));
        }
        Ok(())
    }

    fn user_forward<F: Real>(&self, state: &ModelState<F>, user: u32) -> Option<ConvOutput<F>> {
        (state.shape.views > 0).then(|| user_forward(state, self.social, user, &self.conv))
    }

    /// Representation used for user-item scoring.
    pub fn user_vector<F: Real>(&self, state: &ModelState<F>, user: u32) -> Vec<F> {
        match self.user_forward(state, user) {
            Some(out) => out.fused,
            None => state.user(user).to_vec(),
        }
    }

    fn member_forward<F: Real>(&self, state: &ModelState<F>, members: &[u32]) -> (Vec<F>, Vec<Option<ConvOutput<F>>>) {
        let d = state.shape.d;
        let mut matrix = Vec::with_capacity(members.len() * d);
        let mut caches = Vec::with_capacity(members.len());
        for &u in members {
            let cache = match self.members {
                MemberSource::Fused => self.user_forward(state, u),
                MemberSource::Base => None,
            };
            match &cache {
                Some(c) => matrix.extend_from_slice(&c.fused),
                None => matrix.extend_from_slice(state.user(u)),
            }
            caches.push(cache);
        }
        (matrix, caches)
    }

    /// Group representation of `members`.
    pub fn group_vector<F: Real>(&self, state: &ModelState<F>, members: &[u32]) -> Result<Vec<F>> {
        let (matrix, _) = self.member_forward(state, members);
        Ok(group_forward(state, &matrix, self.scale)?.group)
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn clamp_score<F: Real>(x: F) -> F {
    let c = F::of(SCORE_CLAMP);
    x.max(-c).min(c)
}

/// Loss of one positive and its negatives for representation `x`; writes item
/// gradients and returns `(loss, ∂loss/∂x)`.
fn score_loss<F: Real>(
    state: &ModelState<F>,
    x: &[F],
    positive: u32,
    negatives: &[u32],
    grads: &mut Gradients<F>,
) -> (F, Vec<F>) {
    let mut d_x = vec![F::zero(); x.len()];
    let s = clamp_score(dot(x, state.item(positive)));
    let mut loss = (F::one() + (-s).exp()).ln();
    let coeff = -sigmoid(-s);
    axpy(coeff, state.item(positive), &mut d_x);
    axpy(coeff, x, grads.items.push(positive));
    for &v in negatives {
        let s = clamp_score(dot(x, state.item(v)));
        loss += (F::one() + s.exp()).ln();
        let coeff = sigmoid(s);
        axpy(coeff, state.item(v), &mut d_x);
        axpy(coeff, x, grads.items.push(v));
    }
    (loss, d_x)
}

/// Group-item step: `group_members` aggregated into a group vector scored
/// against `positive` and `negatives`. Gradients are accumulated into
/// `grads`.
pub fn loss_sgv_step<F: Real>(
    net: &Network,
    state: &ModelState<F>,
    group_members: &[u32],
    positive: u32,
    negatives: &[u32],
    grads: &mut Gradients<F>,
) -> Result<F> {
    let d = state.shape.d;
    let (matrix, caches) = net.member_forward(state, group_members);
    let fwd = group_forward(state, &matrix, net.scale)?;
    let (loss, d_group) = score_loss(state, &fwd.group, positive, negatives, grads);
    let d_members = group_backward(state, &fwd, &d_group, grads);
    for (i, (&u, cache)) in group_members.iter().zip(&caches).enumerate() {
        let g = &d_members[i * d..(i + 1) * d];
        match cache {
            Some(c) => convolve_backward(state, c, g, grads, &net.conv),
            None => grads.users.add(u, g),
        }
    }
    Ok(loss)
}

/// User-item step on the centrality-aware representation of `user`.
pub fn loss_uv_step<F: Real>(
    net: &Network,
    state: &ModelState<F>,
    user: u32,
    positive: u32,
    negatives: &[u32],
    grads: &mut Gradients<F>,
) -> F {
    match net.user_forward(state, user) {
        Some(cache) => {
            let (loss, d_user) = score_loss(state, &cache.fused, positive, negatives, grads);
            convolve_backward(state, &cache, &d_user, grads, &net.conv);
            loss
        }
        None => {
            let (loss, d_user) = score_loss(state, state.user(user), positive, negatives, grads);
            grads.users.add(user, &d_user);
            loss
        }
    }
}

/// Graphs a model is trained on. `gv` should hold training interactions
/// only.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub uv: &'a BipartiteGraph,
    pub gv: &'a BipartiteGraph,
    pub social: &'a SocialGraph,
    pub groups: &'a GroupTable,
}

impl TrainData<'_> {
    pub fn shape(&self, cfg: &TrainingConfig) -> Shape {
        Shape {
            d: cfg.d,
            heads: cfg.heads,
            views: cfg.views.len(),
            users: self.uv.left_count().max(self.social.user_count()),
            items: self.uv.right_count().max(self.gv.right_count()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub graph: GraphChoice,
    /// Moving average of the per-step loss on `graph`.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: ModelState<f32>,
    pub trace: Vec<TracePoint>,
    pub gv_steps: usize,
    pub uv_steps: usize,
}

struct MovingAverage {
    window: VecDeque<f64>,
    cap: usize,
    sum: f64,
}

impl MovingAverage {
    fn new(cap: usize) -> Self {
        MovingAverage { window: VecDeque::with_capacity(cap.min(1 << 16)), cap: cap.max(1), sum: 0.0 }
    }

    fn push(&mut self, x: f64) {
        if self.window.len() == self.cap {
            self.sum -= self.window.pop_front().unwrap_or(0.0);
        }
        self.window.push_back(x);
        self.sum += x;
    }

    fn mean(&self) -> Option<f64> {
        (!self.window.is_empty()).then(|| self.sum / self.window.len() as f64)
    }
}

enum GroupNoise {
    Classic(AliasTable),
    GroupAware(GroupNoiseCache),
}

/// Per-worker sampling state and buffers.
struct Worker<'a> {
    data: TrainData<'a>,
    net: Network<'a>,
    cfg: &'a TrainingConfig,
    rng: ChaCha8Rng,
    uv_edges: Option<EdgeSampler>,
    gv_edges: Option<EdgeSampler>,
    uv_noise: Option<AliasTable>,
    gv_noise: GroupNoise,
    grads: Gradients<f32>,
    negatives: Vec<u32>,
    averages: [MovingAverage; 2],
    trace: Vec<TracePoint>,
    gv_steps: usize,
    uv_steps: usize,
}

impl<'a> Worker<'a> {
    fn new(data: TrainData<'a>, cfg: &'a TrainingConfig, shape: &Shape, worker: u64) -> Result<Self> {
        let non_empty = |g: &BipartiteGraph| !g.edges().is_empty();
        let uv_edges = non_empty(data.uv).then(|| EdgeSampler::new(data.uv)).transpose()?;
        let gv_edges = non_empty(data.gv).then(|| EdgeSampler::new(data.gv)).transpose()?;
        let uv_noise = non_empty(data.uv).then(|| classic_noise(data.uv)).transpose()?;
        let gv_noise = match cfg.neg_sampler {
            NoiseKind::Classic if non_empty(data.gv) => GroupNoise::Classic(classic_noise(data.gv)?),
            NoiseKind::Classic => GroupNoise::Classic(AliasTable::new(&[1.0])?),
            NoiseKind::GroupAware => GroupNoise::GroupAware(GroupNoiseCache::new(cfg.gamma)?),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(worker));
        rng.set_stream(1);
        Ok(Worker {
            data,
            net: Network::new(data.social, cfg),
            cfg,
            rng,
            uv_edges,
            gv_edges,
            uv_noise,
            gv_noise,
            grads: Gradients::new(shape),
            negatives: Vec::with_capacity(cfg.negatives),
            averages: [MovingAverage::new(cfg.loss_window), MovingAverage::new(cfg.loss_window)],
            trace: Vec::new(),
            gv_steps: 0,
            uv_steps: 0,
        })
    }

    fn has(&self, graph: GraphChoice) -> bool {
        match graph {
            GraphChoice::GroupItem => self.gv_edges.is_some(),
            GraphChoice::UserItem => self.uv_edges.is_some(),
        }
    }

    fn pick(&mut self, mode_graph: Option<GraphChoice>) -> GraphChoice {
        match mode_graph {
            Some(g) => g,
            None if !self.has(GraphChoice::UserItem) => GraphChoice::GroupItem,
            None if !self.has(GraphChoice::GroupItem) => GraphChoice::UserItem,
            None => choose_graph(self.cfg.eta, &mut self.rng),
        }
    }

    /// Samples one training example on `graph` and computes its gradient into
    /// `self.grads`. Returns the loss.
    fn compute(&mut self, state: &ModelState<f32>, graph: GraphChoice) -> Result<f32> {
        self.grads.reset();
        let m = self.cfg.negatives;
        match graph {
            GraphChoice::GroupItem => {
                let sampler = self.gv_edges.as_ref().expect("group-item graph has edges");
                let edge = *sampler.draw(self.data.gv, &mut self.rng);
                let members = self.data.groups.members(edge.left);
                let table = match &mut self.gv_noise {
                    GroupNoise::Classic(t) => &*t,
                    GroupNoise::GroupAware(cache) => cache.table(self.data.uv, edge.left, members),
                };
                draw_negatives(table, edge.item, m, &mut self.rng, &mut self.negatives);
                self.gv_steps += 1;
                loss_sgv_step(&self.net, state, members, edge.item, &self.negatives, &mut self.grads)
            }
            GraphChoice::UserItem => {
                let sampler = self.uv_edges.as_ref().expect("user-item graph has edges");
                let edge = *sampler.draw(self.data.uv, &mut self.rng);
                let table = self.uv_noise.as_ref().expect("user-item graph has edges");
                draw_negatives(table, edge.item, m, &mut self.rng, &mut self.negatives);
                self.uv_steps += 1;
                Ok(loss_uv_step(&self.net, state, edge.left, edge.item, &self.negatives, &mut self.grads))
            }
        }
    }

    fn record(&mut self, step: usize, graph: GraphChoice, loss: f32, last: bool) {
        let slot = graph as usize;
        self.averages[slot].push(loss as f64);
        if (step + 1).is_multiple_of(self.cfg.trace_interval.max(1)) || last {
            for g in [GraphChoice::GroupItem, GraphChoice::UserItem] {
                if let Some(mean) = self.averages[g as usize].mean() {
                    self.trace.push(TracePoint { step: step + 1, graph: g, loss: mean });
                }
            }
        }
    }

    /// Runs `total` single-writer steps starting at global step `offset`.
    fn run(
        &mut self,
        state: &mut ModelState<f32>,
        total: usize,
        offset: usize,
        fixed: Option<GraphChoice>,
    ) -> Result<()> {
        for t in 0..total {
            let graph = self.pick(fixed);
            let loss = self.compute(state, graph)?;
            let lr = self.cfg.learning_rate(t, total) as f32;
            self.grads.apply(state, lr);
            if self.cfg.nan_check {
                if let Some(block) = self.grads.written_finite(state) {
                    return Err(Error::NonFinite { block: block.name(), iteration: offset + t });
                }
            }
            self.record(offset + t, graph, loss, t + 1 == total);
        }
        Ok(())
    }
}

/// Parameters shared between lock-free workers.
struct Shared(UnsafeCell<ModelState<f32>>);

// Workers read and write concurrently without synchronization. Updates are
// sparse, and lost or torn updates are tolerated.
unsafe impl Sync for Shared {}

impl Shared {
    #[allow(clippy::mut_from_ref)]
    unsafe fn get(&self) -> &mut ModelState<f32> {
        unsafe { &mut *self.0.get() }
    }
}

/// Trains a freshly initialized model.
pub fn train(data: TrainData, cfg: &TrainingConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let state = ModelState::init(data.shape(cfg), cfg.seed)?;
    train_from(state, data, cfg)
}

/// Trains starting from `state`.
pub fn train_from(mut state: ModelState<f32>, data: TrainData, cfg: &TrainingConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let shape = data.shape(cfg);
    if state.shape != shape {
        return Err(Error::Shape(format!("state {:?} does not match data {:?}", state.shape, shape)));
    }
    Network::new(data.social, cfg).check(&state)?;
    let need = |g: &BipartiteGraph, what: &str| {
        if g.edges().is_empty() {
            Err(Error::Config(format!("{what} graph has no edges")))
        } else {
            Ok(())
        }
    };
    match cfg.mode {
        Mode::Simple => need(data.gv, "group-item")?,
        Mode::TwoStage => {
            need(data.gv, "group-item")?;
            need(data.uv, "user-item")?;
        }
        Mode::Joint => {
            if data.gv.edges().is_empty() && data.uv.edges().is_empty() {
                return Err(Error::Config("no training edges".into()));
            }
        }
    }

    if cfg.workers > 1 {
        return train_parallel(state, data, cfg, &shape);
    }

    let mut worker = Worker::new(data, cfg, &shape, 0)?;
    match cfg.mode {
        Mode::Simple => worker.run(&mut state, cfg.iterations, 0, Some(GraphChoice::GroupItem))?,
        Mode::Joint => worker.run(&mut state, cfg.iterations, 0, None)?,
        Mode::TwoStage => {
            let (n1, n2) = cfg.stage_iterations();
            worker.run(&mut state, n1, 0, Some(GraphChoice::UserItem))?;
            worker.run(&mut state, n2, n1, Some(GraphChoice::GroupItem))?;
        }
    }
    Ok(TrainOutcome { state, trace: worker.trace, gv_steps: worker.gv_steps, uv_steps: worker.uv_steps })
}

/// Lock-free multi-worker training. No determinism guarantee.
fn train_parallel(
    state: ModelState<f32>,
    data: TrainData,
    cfg: &TrainingConfig,
    shape: &Shape,
) -> Result<TrainOutcome> {
    let shared = Shared(UnsafeCell::new(state));
    let stages: Vec<(usize, Option<GraphChoice>)> = match cfg.mode {
        Mode::Simple => vec![(cfg.iterations, Some(GraphChoice::GroupItem))],
        Mode::Joint => vec![(cfg.iterations, None)],
        Mode::TwoStage => {
            let (n1, n2) = cfg.stage_iterations();
            vec![(n1, Some(GraphChoice::UserItem)), (n2, Some(GraphChoice::GroupItem))]
        }
    };
    let mut workers = (0..cfg.workers).map(|w| Worker::new(data, cfg, shape, w as u64)).collect::<Result<Vec<_>>>()?;
    let mut offset = 0;
    for (total, fixed) in stages {
        let counter = AtomicUsize::new(0);
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = workers
                .iter_mut()
                .map(|worker| {
                    let shared = &shared;
                    let counter = &counter;
                    scope.spawn(move || -> Result<()> {
                        loop {
                            let t = counter.fetch_add(1, Ordering::Relaxed);
                            if t >= total {
                                return Ok(());
                            }
                            // SAFETY: see `Shared`; races are accepted in this mode.
                            let state = unsafe { shared.get() };
                            let graph = worker.pick(fixed);
                            let loss = worker.compute(state, graph)?;
                            worker.grads.apply(state, cfg.learning_rate(t, total) as f32);
                            worker.record(offset + t, graph, loss, t + 1 == total);
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        results.into_iter().collect::<Result<Vec<_>>>()?;
        offset += total;
    }
    let state = shared.0.into_inner();
    if cfg.nan_check {
        if let Some(block) = state.find_non_finite() {
            return Err(Error::NonFinite { block: block.name(), iteration: offset });
        }
    }
    let (gv_steps, uv_steps) = workers.iter().fold((0, 0), |(g, u), w| (g + w.gv_steps, u + w.uv_steps));
    let mut trace: Vec<TracePoint> = workers.into_iter().flat_map(|w| w.trace).collect();
    trace.sort_by_key(|p| (p.step, p.graph as u8));
    Ok(TrainOutcome { state, trace, gv_steps, uv_steps })
}

/// `loss_trace.tsv` body: `step<TAB>graph<TAB>loss`.
pub fn trace_tsv(trace: &[TracePoint]) -> String {
    let mut out = String::from("# step\tgraph\tloss\n");
    for p in trace {
        out.push_str(&format!("{}\t{}\t{:.6}\n", p.step, p.graph.name(), p.loss));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centrality::{with_views, CentralityOptions, Measure};
    use crate::graph::Dataset;
    use crate::params::Block;
    use crate::synth::{generate, SynthSpec};

    fn tiny() -> (Dataset, SocialGraph) {
        let spec = SynthSpec {
            users_per_cluster: 10,
            items_per_cluster: 10,
            topics_per_cluster: 2,
            groups: 8,
            group_size_min: 2,
            group_size_max: 3,
            social_p_in: 0.5,
            seed: 5,
            ..SynthSpec::default()
        };
        let ds = generate(&spec).unwrap().text.parse().unwrap();
        let social =
            with_views(&ds.social, &[Measure::PageRank, Measure::Closeness], &CentralityOptions::default()).unwrap();
        (ds, social)
    }

    fn config(mode: Mode, iterations: usize) -> TrainingConfig {
        TrainingConfig {
            mode,
            d: 8,
            heads: 2,
            iterations,
            views: vec![Measure::PageRank, Measure::Closeness],
            nan_check: true,
            trace_interval: 50,
            loss_window: 50,
            ..TrainingConfig::default()
        }
    }

    fn data<'a>(ds: &'a Dataset, social: &'a SocialGraph) -> TrainData<'a> {
        TrainData { uv: &ds.uv, gv: &ds.gv, social, groups: &ds.groups }
    }

    #[test]
    fn zero_learning_rate_leaves_state_unchanged() {
        let (ds, social) = tiny();
        for mode in [Mode::Simple, Mode::TwoStage, Mode::Joint] {
            let cfg = TrainingConfig { lr0: 0.0, ..config(mode, 200) };
            let init = ModelState::<f32>::init(data(&ds, &social).shape(&cfg), cfg.seed).unwrap();
            let out = train(data(&ds, &social), &cfg).unwrap();
            assert_eq!(out.state, init, "{mode:?}");
        }
    }

    #[test]
    fn same_seed_same_model() {
        let (ds, social) = tiny();
        let cfg = config(Mode::Joint, 300);
        let a = train(data(&ds, &social), &cfg).unwrap();
        let b = train(data(&ds, &social), &cfg).unwrap();
        assert_eq!(crate::params::to_bytes(&a.state), crate::params::to_bytes(&b.state));
        assert_eq!(a.trace, b.trace);
        let c = train(data(&ds, &social), &TrainingConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.state, c.state);
    }

    #[test]
    fn modes_schedule_the_right_steps() {
        let (ds, social) = tiny();
        let st = train(data(&ds, &social), &config(Mode::Simple, 100)).unwrap();
        assert_eq!((st.gv_steps, st.uv_steps), (100, 0));
        let tst = train(
            data(&ds, &social),
            &TrainingConfig { stage1_iterations: Some(70), stage2_iterations: Some(30), ..config(Mode::TwoStage, 100) },
        )
        .unwrap();
        assert_eq!((tst.gv_steps, tst.uv_steps), (30, 70));
        let only_groups = train(data(&ds, &social), &TrainingConfig { eta: 0.0, ..config(Mode::Joint, 100) }).unwrap();
        assert_eq!(only_groups.uv_steps, 0);
        let jt = train(data(&ds, &social), &TrainingConfig { eta: 3.0, ..config(Mode::Joint, 2000) }).unwrap();
        assert_eq!(jt.gv_steps + jt.uv_steps, 2000);
        let share = jt.gv_steps as f64 / 2000.0;
        assert!((share - 0.25).abs() < 0.04, "{share}");
    }

    #[test]
    fn two_stage_leaves_attention_untouched_in_stage_one() {
        let (ds, social) = tiny();
        let cfg = TrainingConfig {
            stage1_iterations: Some(100),
            stage2_iterations: Some(1),
            lr0: 0.05,
            ..config(Mode::TwoStage, 100)
        };
        let init = ModelState::<f32>::init(data(&ds, &social).shape(&cfg), cfg.seed).unwrap();
        let mut worker = Worker::new(data(&ds, &social), &cfg, &init.shape, 0).unwrap();
        let mut state = init.clone();
        worker.run(&mut state, 100, 0, Some(GraphChoice::UserItem)).unwrap();
        for b in Block::ALL {
            assert_eq!(state.block(b) == init.block(b), b.is_attention(), "{}", b.name());
        }
    }

    #[test]
    fn loss_goes_down() {
        let (ds, social) = tiny();
        let out = train(data(&ds, &social), &TrainingConfig { lr0: 0.05, ..config(Mode::Joint, 6000) }).unwrap();
        let gv: Vec<f64> = out.trace.iter().filter(|p| p.graph == GraphChoice::GroupItem).map(|p| p.loss).collect();
        assert!(gv.len() > 10);
        assert!(gv[gv.len() - 1] < 0.8 * gv[0], "{gv:?}");
        assert!(out.trace.windows(2).all(|w| w[0].step <= w[1].step));
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let (ds, social) = tiny();
        let cfg = config(Mode::Joint, 10);
        let mut state = ModelState::<f32>::init(data(&ds, &social).shape(&cfg), 1).unwrap();
        state.item_emb.iter_mut().for_each(|x| *x = f32::NAN);
        match train_from(state, data(&ds, &social), &cfg) {
            Err(Error::NonFinite { iteration: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_views_are_rejected() {
        let (ds, social) = tiny();
        let cfg = TrainingConfig { views: vec![Measure::PageRank], ..config(Mode::Joint, 10) };
        assert!(matches!(train(data(&ds, &social), &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn lock_free_workers_share_the_budget() {
        let (ds, social) = tiny();
        let out = train(data(&ds, &social), &TrainingConfig { workers: 3, ..config(Mode::Joint, 900) }).unwrap();
        assert_eq!(out.gv_steps + out.uv_steps, 900);
        assert!(out.state.find_non_finite().is_none());
    }

    #[test]
    fn base_members_skip_convolution() {
        let (ds, social) = tiny();
        let cfg = TrainingConfig { members: MemberSource::Base, ..config(Mode::Simple, 50) };
        let init = ModelState::<f32>::init(data(&ds, &social).shape(&cfg), cfg.seed).unwrap();
        let out = train(data(&ds, &social), &cfg).unwrap();
        for b in Block::ALL.into_iter().filter(|b| b.is_conv()) {
            assert_eq!(out.state.block(b), init.block(b), "{}", b.name());
        }
    }
}
