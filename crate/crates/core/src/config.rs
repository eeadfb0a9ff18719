//! Training configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::attention::AttentionScale;
use crate::centrality::Measure;
use crate::conv::{ConvOptions, Pooling};
use crate::sampling::NoiseKind;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    /// Group-item objective only.
    Simple,
    /// User-item objective, then group-item objective from those embeddings.
    TwoStage,
    /// Both objectives interleaved by a biased coin.
    #[default]
    Joint,
}

/// Which member representations feed the group aggregator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MemberSource {
    /// Centrality-aware fused vectors (base embeddings when no views).
    #[default]
    Fused,
    /// Raw base embeddings.
    Base,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub mode: Mode,
    pub d: usize,
    pub heads: usize,
    /// Negatives per positive (`M`).
    pub negatives: usize,
    /// SGD steps (`N`); for two-stage training, per stage unless overridden.
    pub iterations: usize,
    pub stage1_iterations: Option<usize>,
    pub stage2_iterations: Option<usize>,
    pub eta: f64,
    pub gamma: f64,
    pub lr0: f64,
    pub n_neighbors: usize,
    pub views: Vec<Measure>,
    pub neg_sampler: NoiseKind,
    pub pooling: Pooling,
    pub scale: AttentionScale,
    pub members: MemberSource,
    pub seed: u64,
    pub workers: usize,
    /// Check touched parameters for NaN/inf after every step.
    pub nan_check: bool,
    /// Moving-average window of the loss trace.
    pub loss_window: usize,
    /// Steps between loss trace points.
    pub trace_interval: usize,
}

/// Learning-rate floor as a fraction of `lr0`.
pub const LR_FLOOR: f64 = 1e-4;

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            mode: Mode::Joint,
            d: 128,
            heads: 16,
            negatives: 6,
            iterations: 4_000_000,
            stage1_iterations: None,
            stage2_iterations: None,
            eta: 1.0,
            gamma: 1.0,
            lr0: 0.025,
            n_neighbors: 4,
            views: Measure::ALL.to_vec(),
            neg_sampler: NoiseKind::GroupAware,
            pooling: Pooling::Mean,
            scale: AttentionScale::Full,
            members: MemberSource::Fused,
            seed: 1,
            workers: 1,
            nan_check: cfg!(debug_assertions),
            loss_window: 10_000,
            trace_interval: 1_000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::HeadMismatch { d: self.d, h: self.heads });
        }
        if self.negatives == 0 {
            return fail("negatives must be at least 1".into());
        }
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be nonnegative, got {}", self.eta));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidGamma(self.gamma));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be nonnegative, got {}", self.lr0));
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        let mut seen = self.views.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.views.len() {
            return fail("views must not repeat".into());
        }
        Ok(())
    }

    pub fn conv_options(&self) -> ConvOptions {
        ConvOptions { n_neighbors: self.n_neighbors, pooling: self.pooling }
    }

    /// `lr0 · max(1 - t/n, floor)`.
    pub fn learning_rate(&self, step: usize, total: usize) -> f64 {
        self.lr0 * (1.0 - step as f64 / total as f64).max(LR_FLOOR)
    }

    pub fn stage_iterations(&self) -> (usize, usize) {
        (self.stage1_iterations.unwrap_or(self.iterations), self.stage2_iterations.unwrap_or(self.iterations))
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "mode" => self.mode = parse_mode(value)?,
            "d" => self.d = num(key, value)?,
            "h" | "heads" => self.heads = num(key, value)?,
            "m" | "negatives" => self.negatives = num(key, value)?,
            "n" | "iterations" => self.iterations = num(key, value)?,
            "stage1_iterations" => self.stage1_iterations = Some(num(key, value)?),
            "stage2_iterations" => self.stage2_iterations = Some(num(key, value)?),
            "eta" => self.eta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "lr0" => self.lr0 = num(key, value)?,
            "n_neighbors" => self.n_neighbors = num(key, value)?,
            "views" => {
                self.views = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && *s != "none")
                    .map(Measure::from_str)
                    .collect::<Result<_>>()?
            }
            "neg_sampler" => {
                self.neg_sampler = match value {
                    "classic" => NoiseKind::Classic,
                    "group_aware" => NoiseKind::GroupAware,
                    _ => return Err(bad(key, value)),
                }
            }
            "pooling" => {
                self.pooling = match value {
                    "mean" => Pooling::Mean,
                    "sum" => Pooling::Sum,
                    _ => return Err(bad(key, value)),
                }
            }
            "scale" => {
                self.scale = match value {
                    "full" => AttentionScale::Full,
                    "per_head" => AttentionScale::PerHead,
                    _ => return Err(bad(key, value)),
                }
            }
            "members" => {
                self.members = match value {
                    "fused" => MemberSource::Fused,
                    "base" => MemberSource::Base,
                    _ => return Err(bad(key, value)),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "nan_check" => self.nan_check = num(key, value)?,
            "loss_window" => self.loss_window = num(key, value)?,
            "trace_interval" => self.trace_interval = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Text form that [`TrainingConfig::parse`] reads back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            Mode::Simple => "st",
            Mode::TwoStage => "tst",
            Mode::Joint => "jt",
        };
        let views: Vec<&str> = self.views.iter().map(|m| m.name()).collect();
        let views = if views.is_empty() { "none".to_string() } else { views.join(",") };
        let sampler = match self.neg_sampler {
            NoiseKind::Classic => "classic",
            NoiseKind::GroupAware => "group_aware",
        };
        let pooling = match self.pooling {
            Pooling::Mean => "mean",
            Pooling::Sum => "sum",
        };
        let scale = match self.scale {
            AttentionScale::Full => "full",
            AttentionScale::PerHead => "per_head",
        };
        let members = match self.members {
            MemberSource::Fused => "fused",
            MemberSource::Base => "base",
        };
        let _ = writeln!(out, "mode = {mode}");
        let _ = writeln!(out, "d = {}", self.d);
        let _ = writeln!(out, "heads = {}", self.heads);
        let _ = writeln!(out, "negatives = {}", self.negatives);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        if let Some(n) = self.stage1_iterations {
            let _ = writeln!(out, "stage1_iterations = {n}");
        }
        if let Some(n) = self.stage2_iterations {
            let _ = writeln!(out, "stage2_iterations = {n}");
        }
        let _ = writeln!(out, "eta = {:?}", self.eta);
        let _ = writeln!(out, "gamma = {:?}", self.gamma);
        let _ = writeln!(out, "lr0 = {:?}", self.lr0);
        let _ = writeln!(out, "n_neighbors = {}", self.n_neighbors);
        let _ = writeln!(out, "views = {views}");
        let _ = writeln!(out, "neg_sampler = {sampler}");
        let _ = writeln!(out, "pooling = {pooling}");
        let _ = writeln!(out, "scale = {scale}");
        let _ = writeln!(out, "members = {members}");
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "workers = {}", self.workers);
        let _ = writeln!(out, "nan_check = {}", self.nan_check);
        let _ = writeln!(out, "loss_window = {}", self.loss_window);
        let _ = writeln!(out, "trace_interval = {}", self.trace_interval);
        out
    }
}

fn parse_mode(value: &str) -> Result<Mode> {
    match value {
        "st" => Ok(Mode::Simple),
        "tst" => Ok(Mode::TwoStage),
        "jt" => Ok(Mode::Joint),
        _ => Err(bad("mode", value)),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("bad value `{value}` for `{key}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainingConfig::default();
        assert_eq!((c.d, c.heads, c.negatives, c.iterations, c.n_neighbors), (128, 16, 6, 4_000_000, 4));
        assert_eq!(c.views.len(), 4);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainingConfig::parse(
            "mode = tst\n# comment\nd = 32 # inline\nh = 4\nviews = pagerank\nstage2_iterations = 9\nmembers = base\n",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::TwoStage);
        assert_eq!(c.d, 32);
        assert_eq!(c.views, vec![Measure::PageRank]);
        assert_eq!(c.stage_iterations(), (4_000_000, 9));
        assert_eq!(TrainingConfig::parse(&c.to_text()).unwrap(), c);
        c.views.clear();
        c.eta = 0.3;
        assert_eq!(TrainingConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainingConfig::parse("bogus = 1").is_err());
        assert!(TrainingConfig::parse("d 3").is_err());
        assert!(TrainingConfig::parse("mode = fast").is_err());
        let c = TrainingConfig::parse("d = 7\nh = 2").unwrap();
        assert!(matches!(c.validate(), Err(Error::HeadMismatch { .. })));
        let c = TrainingConfig::parse("negatives = 0").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn learning_rate_decays_to_floor() {
        let c = TrainingConfig::default();
        assert_eq!(c.learning_rate(0, 100), 0.025);
        assert!((c.learning_rate(50, 100) - 0.0125).abs() < 1e-15);
        assert_eq!(c.learning_rate(100, 100), 0.025 * LR_FLOOR);
        assert_eq!(c.learning_rate(200, 100), 0.025 * LR_FLOOR);
    }
}
