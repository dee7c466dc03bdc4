use serde::{Deserialize, Serialize};

use super::{evaluate, fit_probe, EvalReport, Metric, ProbeConfig};
use crate::error::{Error, Result};
use crate::graph::{make_splits, Graph, SplitSpec};
use crate::matrix::Matrix;
use crate::trainer::{embed, train, TrainConfig};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    pub metric: Metric,
    pub probe: ProbeConfig,
    pub train_frac: Real,
    pub val_frac: Real,
    /// Reuse one split for every run instead of drawing one per run.
    pub fixed_split: Option<SplitSpec>,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            metric: Metric::Accuracy,
            probe: ProbeConfig::default(),
            train_frac: 0.1,
            val_frac: 0.1,
            fixed_split: None,
        }
    }
}

impl ProtocolOptions {
    pub fn split(&self, g: &Graph, seed: u64) -> Result<SplitSpec> {
        match &self.fixed_split {
            Some(s) => {
                s.validate(g)?;
                Ok(s.clone())
            }
            None => make_splits(g, self.train_frac, self.val_frac, seed),
        }
    }

    /// Fits the probe on the split's train nodes and scores its test nodes.
    pub fn score(&self, e: &Matrix, g: &Graph, split: &SplitSpec, seed: u64) -> Result<Real> {
        if e.rows() != g.n_nodes() {
            return Err(Error::Dimension(format!("{} embeddings for {} nodes", e.rows(), g.n_nodes())));
        }
        let probe = fit_probe(e, g.labels(), &split.train, &self.probe, seed)?;
        evaluate(&probe, e, g.labels(), &split.test, self.metric)
    }
}

/// Outcome of one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub score: Real,
    pub train_size: usize,
    pub test_size: usize,
    /// Last training loss; absent for raw-feature runs.
    pub final_loss: Option<Real>,
}

/// Run `run` of the protocol: seed `cfg.seed + run`, a fresh model, that
/// seed's split, and the probe on the resulting embeddings.
pub fn protocol_run(g: &Graph, cfg: &TrainConfig, run: usize, opts: &ProtocolOptions) -> Result<RunRecord> {
    let seed = cfg.seed.wrapping_add(run as u64);
    let run_cfg = TrainConfig { seed, ..cfg.clone() };
    let split = opts.split(g, seed)?;
    let out = train(g, &run_cfg)?;
    let e = embed(&out.model, g)?;
    let score = opts.score(&e, g, &split, seed)?;
    Ok(RunRecord {
        run,
        seed,
        score,
        train_size: split.train.len(),
        test_size: split.test.len(),
        final_loss: out.log.last().map(|r| r.loss),
    })
}

/// The probe on raw features, on the split [`protocol_run`] would use.
pub fn raw_feature_run(g: &Graph, base_seed: u64, run: usize, opts: &ProtocolOptions) -> Result<RunRecord> {
    let seed = base_seed.wrapping_add(run as u64);
    let split = opts.split(g, seed)?;
    let score = opts.score(g.features(), g, &split, seed)?;
    Ok(RunRecord {
        run,
        seed,
        score,
        train_size: split.train.len(),
        test_size: split.test.len(),
        final_loss: None,
    })
}

/// `n_runs` sequential protocol runs aggregated into one report.
pub fn run_protocol(g: &Graph, cfg: &TrainConfig, n_runs: usize, opts: &ProtocolOptions) -> Result<EvalReport> {
    if n_runs == 0 {
        return Err(Error::InvalidArgument("n_runs must be at least 1".into()));
    }
    let runs = (0..n_runs)
        .map(|r| protocol_run(g, cfg, r, opts).map(|rec| rec.score))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_runs(opts.metric, runs, cfg.digest())
}
