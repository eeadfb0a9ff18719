//! Glue between a loaded dataset and the trainer / evaluator.

use crate::centrality::{with_views, CentralityOptions};
use crate::config::TrainingConfig;
use crate::eval::{evaluate, temporal_split, EvalSet, Evaluation, SplitSpec};
use crate::graph::{BipartiteGraph, Dataset, SocialGraph};
use crate::params::ModelState;
use crate::train::{train, Network, TrainData, TrainOutcome};
use crate::Result;

/// A dataset made ready for training: centrality views computed and the
/// group-item graph split in time.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub social: SocialGraph,
    pub split: SplitSpec,
    pub gv_train: BipartiteGraph,
}

impl Prepared {
    pub fn new(ds: &Dataset, cfg: &TrainingConfig, centrality: &CentralityOptions) -> Result<Self> {
        let social = with_views(&ds.social, &cfg.views, centrality)?;
        let split = temporal_split(&ds.gv)?;
        let gv_train = split.train_graph(&ds.gv);
        Ok(Prepared { social, split, gv_train })
    }

    pub fn data<'a>(&'a self, ds: &'a Dataset) -> TrainData<'a> {
        TrainData { uv: &ds.uv, gv: &self.gv_train, social: &self.social, groups: &ds.groups }
    }

    pub fn network<'a>(&'a self, cfg: &TrainingConfig) -> Network<'a> {
        Network::new(&self.social, cfg)
    }

    pub fn evaluate_test(&self, ds: &Dataset, cfg: &TrainingConfig, state: &ModelState<f32>) -> Result<Evaluation> {
        evaluate(&self.network(cfg), state, &ds.groups, &EvalSet::test(&self.split))
    }
}

/// Prepares, trains and evaluates on the held-out test cases.
pub fn train_and_evaluate(ds: &Dataset, cfg: &TrainingConfig) -> Result<(TrainOutcome, Evaluation)> {
    let prepared = Prepared::new(ds, cfg, &CentralityOptions::default())?;
    let outcome = train(prepared.data(ds), cfg)?;
    let evaluation = prepared.evaluate_test(ds, cfg, &outcome.state)?;
    Ok((outcome, evaluation))
}
