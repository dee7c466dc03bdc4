//! Command implementations. Each writes its artifacts under an output
//! directory and returns a serialisable summary.

mod study;

pub use study::{
    cmd_ablate, cmd_compare_nce, cmd_contaminate, cmd_sensitivity, contaminate_features, run_variant, Comparison,
    ContaminationRow, Reference, SweepCell, SweepSpec, Variant, VariantRow,
};

use std::path::{Path, PathBuf};

use grace_core::encoder::{read_checkpoint, write_checkpoint};
use grace_core::eval::{raw_feature_run, RunRecord};
use grace_core::graph::{load_dataset, load_splits, make_splits};
use grace_core::trainer::{embed, train_with};
use grace_core::{EvalReport, Graph, Matrix, ProtocolOptions, Real};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, Manifest};
use crate::config::ExperimentConfig;
use crate::failure::{CliResult, Failure};

pub const CHECKPOINT_FILE: &str = "model.grcp";
pub const EMBEDDINGS_FILE: &str = "embeddings.grem";
pub const LOG_FILE: &str = "train_log.ndjson";

pub fn load_graph(dir: &Path) -> CliResult<Graph> {
    if !dir.is_dir() {
        return Err(Failure::Data(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(load_dataset(dir)?)
}

/// Dataset name for reports: the last component of the data directory.
pub fn dataset_name(cfg: &ExperimentConfig) -> String {
    cfg.data
        .as_deref()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().to_lowercase())
        .unwrap_or_default()
}

/// Protocol options for `cfg`, resolving the fixed split if one is requested.
pub fn protocol_options(cfg: &ExperimentConfig, g: &Graph) -> CliResult<ProtocolOptions> {
    let mut opts = ProtocolOptions {
        metric: cfg.metric,
        ..ProtocolOptions::default()
    };
    if cfg.fixed_split {
        let stored = match &cfg.data {
            Some(dir) => load_splits(dir)?,
            None => None,
        };
        let split = match stored {
            Some(s) => s,
            None => make_splits(g, opts.train_frac, opts.val_frac, cfg.train.seed)?,
        };
        opts.fixed_split = Some(split);
    }
    Ok(opts)
}

/// Runs `job(r)` for `r` in `0..n` on the rayon pool, keeping run order.
pub(crate) fn par_runs<T: Send>(n: usize, job: impl Fn(usize) -> CliResult<T> + Send + Sync) -> CliResult<Vec<T>> {
    (0..n).into_par_iter().map(job).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_digest: String,
    pub n_nodes: usize,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub final_loss: Real,
    pub final_bound_gap: Real,
    pub checkpoint: PathBuf,
    pub embeddings: PathBuf,
    pub log: PathBuf,
}

/// Trains one model with the config's seed and writes checkpoint, embedding
/// dump, training log and manifest to `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> CliResult<TrainSummary> {
    let g = load_graph(cfg.data_dir()?)?;
    let epochs = cfg.train.epochs;
    let outcome = train_with(&g, &cfg.train, |rec, _, _| {
        if rec.epoch == 1 || rec.epoch % 20 == 0 || rec.epoch == epochs {
            log::info!("epoch {}/{epochs}: loss {:.5}, bound gap {:.4}", rec.epoch, rec.loss, rec.bound_gap);
        }
    })?;
    let e = embed(&outcome.model, &g)?;
    artifacts::create_dir(out)?;
    let summary = TrainSummary {
        config_digest: outcome.config_digest.clone(),
        n_nodes: e.rows(),
        embedding_dim: e.cols(),
        epochs,
        final_loss: outcome.log.last().map_or(Real::NAN, |r| r.loss),
        final_bound_gap: outcome.log.last().map_or(Real::NAN, |r| r.bound_gap),
        checkpoint: out.join(CHECKPOINT_FILE),
        embeddings: out.join(EMBEDDINGS_FILE),
        log: out.join(LOG_FILE),
    };
    write_checkpoint(&outcome.model, &summary.checkpoint).map_err(|e| Failure::output(&summary.checkpoint, e))?;
    artifacts::write_embeddings(&summary.embeddings, &e, &outcome.config_digest)?;
    artifacts::write_log(&summary.log, &outcome.log)?;
    artifacts::write_json(&out.join("train_summary.json"), &summary)?;
    let mut manifest = Manifest::new("train", cfg);
    manifest.files = vec![
        CHECKPOINT_FILE.into(),
        EMBEDDINGS_FILE.into(),
        LOG_FILE.into(),
        "train_summary.json".into(),
    ];
    manifest.write(out)?;
    Ok(summary)
}

/// What `eval` probes.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalSource {
    Embeddings(PathBuf),
    /// Checkpoint of the model; embeddings are recomputed on the clean graph.
    Checkpoint(PathBuf),
    /// The node features themselves (identity encoder).
    RawFeatures,
}

/// Report of `eval`: one probe per run, run `r` using seed `seed + r` for
/// its split and probe initialisation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput {
    pub source: String,
    pub report: EvalReport,
    pub runs: Vec<RunRecord>,
}

pub fn cmd_eval(cfg: &ExperimentConfig, source: &EvalSource, out: &Path) -> CliResult<EvalOutput> {
    let g = load_graph(cfg.data_dir()?)?;
    let opts = protocol_options(cfg, &g)?;
    let (e, digest, label) = match source {
        EvalSource::Embeddings(p) => {
            let (e, digest) = artifacts::read_embeddings(p)?;
            (e, digest, p.display().to_string())
        }
        EvalSource::Checkpoint(p) => {
            if !p.is_file() {
                return Err(Failure::Data(format!("checkpoint {} does not exist", p.display())));
            }
            let model = read_checkpoint(p, cfg.train.activation)?;
            (embed(&model, &g)?, cfg.digest(), p.display().to_string())
        }
        EvalSource::RawFeatures => (g.features().clone(), cfg.digest(), "raw-features".to_string()),
    };
    let runs = probe_runs(&e, &g, cfg, &opts)?;
    let report = EvalReport::from_runs(cfg.metric, runs.iter().map(|r| r.score).collect(), digest)?;
    let output = EvalOutput {
        source: label,
        report,
        runs,
    };
    artifacts::create_dir(out)?;
    artifacts::write_json(&out.join("eval_report.json"), &output)?;
    let mut manifest = Manifest::new("eval", cfg);
    manifest.config_digest = output.report.config_digest.clone();
    manifest.files = vec!["eval_report.json".into()];
    manifest.write(out)?;
    Ok(output)
}

fn probe_runs(e: &Matrix, g: &Graph, cfg: &ExperimentConfig, opts: &ProtocolOptions) -> CliResult<Vec<RunRecord>> {
    if e.rows() != g.n_nodes() {
        return Err(Failure::Data(format!("{} embedding rows for {} nodes", e.rows(), g.n_nodes())));
    }
    par_runs(cfg.runs, |r| {
        let seed = cfg.train.seed.wrapping_add(r as u64);
        let split = opts.split(g, seed)?;
        let score = opts.score(e, g, &split, seed)?;
        Ok(RunRecord {
            run: r,
            seed,
            score,
            train_size: split.train.len(),
            test_size: split.test.len(),
            final_loss: None,
        })
    })
}

/// Raw-feature probe scores on the splits the protocol runs of `cfg` use.
pub fn raw_feature_runs(g: &Graph, cfg: &ExperimentConfig) -> CliResult<Vec<RunRecord>> {
    let opts = protocol_options(cfg, g)?;
    par_runs(cfg.runs, |r| Ok(raw_feature_run(g, cfg.train.seed, r, &opts)?))
}
