//! Finite-difference check of both step losses on a small fixed instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::centrality::{with_views, CentralityOptions, Measure};
use crate::config::TrainingConfig;
use crate::graph::SocialGraph;
use crate::linalg::norm;
use crate::params::{Block, Gradients, ModelState, Shape};
use crate::train::{loss_sgv_step, loss_uv_step, Network};
use crate::Result;

pub const USERS: usize = 6;
pub const ITEMS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSpec {
    pub d: usize,
    pub heads: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Half-width of the uniform parameter initialization. Larger than the
    /// training init so every unit is far from its ReLU kink.
    pub init_scale: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec { d: 6, heads: 2, epsilon: 1e-3, seed: 3, init_scale: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    /// `"sgv"` or `"uv"`.
    pub loss: &'static str,
    pub block: Block,
    /// `|a - n| / max(|a|, |n|)` over the whole block, zero if both vanish.
    pub relative_error: f64,
    pub analytic_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.relative_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// The fixed instance: social graph with one PageRank view, two groups.
pub struct Instance {
    pub social: SocialGraph,
    pub groups: [Vec<u32>; 2],
    pub state: ModelState<f64>,
    pub config: TrainingConfig,
}

pub fn instance(spec: &GradCheckSpec) -> Result<Instance> {
    let pairs = [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5), (1, 5), (0, 4)];
    let (plain, _) = SocialGraph::from_pairs(USERS, &pairs)?;
    let social = with_views(&plain, &[Measure::PageRank], &CentralityOptions::default())?;
    let shape = Shape { d: spec.d, heads: spec.heads, views: 1, users: USERS, items: ITEMS };
    let state = scrambled(shape, spec.seed, spec.init_scale)?;
    let config = TrainingConfig {
        d: spec.d,
        heads: spec.heads,
        views: vec![Measure::PageRank],
        n_neighbors: 2,
        ..TrainingConfig::default()
    };
    Ok(Instance { social, groups: [vec![0, 1, 2], vec![3, 4, 5]], state, config })
}

/// Central-difference gradient of `f` with respect to every entry of block
/// `b`.
pub fn numeric_gradient(
    state: &ModelState<f64>,
    b: Block,
    epsilon: f64,
    f: &dyn Fn(&ModelState<f64>) -> f64,
) -> Vec<f64> {
    let mut probe = state.clone();
    (0..state.block(b).len())
        .map(|i| {
            let orig = probe.block(b)[i];
            probe.block_mut(b)[i] = orig + epsilon;
            let plus = f(&probe);
            probe.block_mut(b)[i] = orig - epsilon;
            let minus = f(&probe);
            probe.block_mut(b)[i] = orig;
            (plus - minus) / (2.0 * epsilon)
        })
        .collect()
}

/// Fills every block uniformly in `±scale`.
pub fn scrambled(shape: Shape, seed: u64, scale: f64) -> Result<ModelState<f64>> {
    let mut state = ModelState::<f64>::zeroed(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in Block::ALL {
        for x in state.block_mut(b) {
            *x = rng.gen_range(-scale..scale);
        }
    }
    Ok(state)
}

type StepLoss<'a> = &'a dyn Fn(&ModelState<f64>, &mut Gradients<f64>) -> Result<f64>;

fn check_loss(name: &'static str, state: &ModelState<f64>, epsilon: f64, loss: StepLoss) -> Result<Vec<BlockError>> {
    let shape = state.shape;
    let mut grads = Gradients::new(&shape);
    loss(state, &mut grads)?;
    let mut scratch = Gradients::new(&shape);
    let mut probe = state.clone();
    let mut out = Vec::new();
    for b in Block::ALL {
        let analytic = grads.to_dense(b, &shape);
        let mut numeric = vec![0.0; analytic.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = probe.block(b)[i];
            probe.block_mut(b)[i] = orig + epsilon;
            scratch.reset();
            let plus = loss(&probe, &mut scratch)?;
            probe.block_mut(b)[i] = orig - epsilon;
            scratch.reset();
            let minus = loss(&probe, &mut scratch)?;
            probe.block_mut(b)[i] = orig;
            *n = (plus - minus) / (2.0 * epsilon);
        }
        out.push(BlockError {
            loss: name,
            block: b,
            relative_error: relative_error(&analytic, &numeric),
            analytic_norm: norm(&analytic),
        });
    }
    Ok(out)
}

/// Compares analytic and central-difference gradients of every parameter
/// block for one group-item and one user-item step.
pub fn run(spec: &GradCheckSpec) -> Result<GradCheckReport> {
    let inst = instance(spec)?;
    let net = Network::new(&inst.social, &inst.config);
    net.check(&inst.state)?;
    let members = &inst.groups[0];
    let mut blocks =
        check_loss("sgv", &inst.state, spec.epsilon, &|s, g| loss_sgv_step(&net, s, members, 1, &[0, 3, 2], g))?;
    blocks.extend(check_loss("uv", &inst.state, spec.epsilon, &|s, g| Ok(loss_uv_step(&net, s, 2, 0, &[1, 3], g)))?);
    Ok(GradCheckReport { blocks })
}
