//! Multi-run studies: ablations, the InfoNCE comparison, the corruption
//! sensitivity grid and static feature contamination.

use std::fmt::Write as _;
use std::path::Path;

use grace_core::eval::{protocol_run, RunRecord};
use grace_core::rng::{stream, Purpose};
use grace_core::trainer::digest_str;
use grace_core::{EvalReport, Graph, LossMode, Matrix, Real, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dataset_name, load_graph, par_runs, protocol_options};
use crate::artifacts::{self, Manifest};
use crate::config::ExperimentConfig;
use crate::failure::{CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Grace,
    /// No edge removal in either view.
    NoEdgeRemoval,
    /// No feature masking in either view.
    NoFeatureMasking,
    /// InfoNCE objective instead of the intra-view objective.
    InfoNce,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Grace => "GRACE",
            Variant::NoEdgeRemoval => "GRACE (-RE)",
            Variant::NoFeatureMasking => "GRACE (-MF)",
            Variant::InfoNce => "GRACE-NCE",
        }
    }

    pub fn config(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Grace => {}
            Variant::NoEdgeRemoval => (c.p_r_1, c.p_r_2) = (0.0, 0.0),
            Variant::NoFeatureMasking => (c.p_m_1, c.p_m_2) = (0.0, 0.0),
            Variant::InfoNce => c.objective = LossMode::Infonce,
        }
        c
    }

    /// Published accuracy (percent mean, std) for this variant, when known.
    pub fn reference(self, dataset: &str) -> Option<Reference> {
        let col = ["cora", "citeseer", "pubmed", "dblp"].iter().position(|d| *d == dataset)?;
        let table: [(Real, Real); 4] = match self {
            Variant::Grace => [(83.2, 0.5), (72.1, 0.5), (86.7, 0.1), (84.2, 0.1)],
            Variant::NoEdgeRemoval => [(82.3, 0.4), (72.0, 0.4), (84.8, 0.2), (83.6, 0.2)],
            Variant::NoFeatureMasking => [(81.6, 0.4), (69.9, 0.6), (85.7, 0.1), (83.5, 0.1)],
            Variant::InfoNce => [(82.1, 0.4), (70.9, 0.6), (85.0, 0.1), (82.1, 0.1)],
        };
        let (mean, std) = table[col];
        Some(Reference {
            mean,
            std,
            note: "published value, quoted and not recomputed".into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub mean: Real,
    pub std: Real,
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub label: String,
    pub report: EvalReport,
    pub runs: Vec<RunRecord>,
    pub reference: Option<Reference>,
}

/// `cfg.runs` protocol runs of one variant. Run `r` uses seed
/// `cfg.train.seed + r` for every variant, so rows share corruption,
/// initialisation and split streams.
pub fn run_variant(g: &Graph, cfg: &ExperimentConfig, variant: Variant) -> CliResult<VariantRow> {
    let train = variant.config(&cfg.train);
    let opts = protocol_options(cfg, g)?;
    let runs = par_runs(cfg.runs, |r| {
        let rec = protocol_run(g, &train, r, &opts)?;
        log::info!("{} run {r} (seed {}): {:.4}", variant.label(), rec.seed, rec.score);
        Ok(rec)
    })?;
    let report = EvalReport::from_runs(cfg.metric, runs.iter().map(|r| r.score).collect(), train.digest())?;
    Ok(VariantRow {
        variant,
        label: variant.label().into(),
        report,
        runs,
        reference: variant.reference(&dataset_name(cfg)),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: String,
    pub rows: Vec<VariantRow>,
}

impl Comparison {
    /// Plain-text table in percent.
    pub fn table(&self) -> String {
        let mut s = format!("{:<14} {:>16} {:>16}\n", "variant", "measured", "published");
        for row in &self.rows {
            let published = row
                .reference
                .as_ref()
                .map_or("-".to_string(), |r| format!("{:.1} ± {:.1}", r.mean, r.std));
            writeln!(s, "{:<14} {:>16} {:>16}", row.label, row.report.summary(), published).unwrap();
        }
        s
    }
}

fn compare(cfg: &ExperimentConfig, variants: &[Variant], out: &Path, command: &str) -> CliResult<Comparison> {
    let g = load_graph(cfg.data_dir()?)?;
    let rows = variants
        .iter()
        .map(|&v| run_variant(&g, cfg, v))
        .collect::<CliResult<Vec<_>>>()?;
    let cmp = Comparison {
        dataset: dataset_name(cfg),
        rows,
    };
    artifacts::create_dir(out)?;
    let file = format!("{command}.json");
    artifacts::write_json(&out.join(&file), &cmp)?;
    let mut manifest = Manifest::new(command, cfg);
    manifest.files = vec![file];
    manifest.write(out)?;
    Ok(cmp)
}

/// GRACE against its variants without edge removal and without feature masking.
pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> CliResult<Comparison> {
    compare(
        cfg,
        &[Variant::Grace, Variant::NoEdgeRemoval, Variant::NoFeatureMasking],
        out,
        "ablation",
    )
}

/// GRACE against the InfoNCE objective under identical settings.
pub fn cmd_compare_nce(cfg: &ExperimentConfig, out: &Path) -> CliResult<Comparison> {
    compare(cfg, &[Variant::Grace, Variant::InfoNce], out, "compare_nce")
}

/// Grid of `(p_1, p_2)` where `p_1` sets both corruption rates of view 1 and
/// `p_2` those of view 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub p1: Vec<Real>,
    pub p2: Vec<Real>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let steps: Vec<Real> = (1..=9).map(|i| i as Real / 10.0).collect();
        SweepSpec {
            p1: steps.clone(),
            p2: steps,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> CliResult<()> {
        if self.p1.is_empty() || self.p2.is_empty() {
            return Err(Failure::Config("sweep grid is empty".into()));
        }
        match self.p1.iter().chain(&self.p2).find(|p| !(0.0..=1.0).contains(*p)) {
            Some(p) => Err(Failure::Config(format!("sweep value {p} outside [0, 1]"))),
            None => Ok(()),
        }
    }

    /// Cells in row-major order over `p1` then `p2`.
    pub fn cells(&self) -> Vec<(Real, Real)> {
        self.p1.iter().flat_map(|&a| self.p2.iter().map(move |&b| (a, b))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub p_1: Real,
    pub p_2: Real,
    /// Mean score over the cell's runs.
    pub score: Real,
    pub runs: Vec<Real>,
}

pub fn sweep_config(base: &TrainConfig, p_1: Real, p_2: Real) -> TrainConfig {
    TrainConfig {
        p_r_1: p_1,
        p_m_1: p_1,
        p_r_2: p_2,
        p_m_2: p_2,
        ..base.clone()
    }
}

/// One protocol evaluation (`cfg.runs` runs) per grid cell. Writes
/// `sensitivity.csv` with columns `p_1,p_2,<metric>`.
pub fn cmd_sensitivity(cfg: &ExperimentConfig, sweep: &SweepSpec, out: &Path) -> CliResult<Vec<SweepCell>> {
    sweep.validate()?;
    let g = load_graph(cfg.data_dir()?)?;
    let opts = protocol_options(cfg, &g)?;
    let cells = sweep.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.runs).map(move |r| (c, r))).collect();
    let scores = jobs
        .par_iter()
        .map(|&(c, r)| {
            let (p_1, p_2) = cells[c];
            let rec = protocol_run(&g, &sweep_config(&cfg.train, p_1, p_2), r, &opts)?;
            log::info!("p_1 = {p_1}, p_2 = {p_2}, run {r}: {:.4}", rec.score);
            Ok(rec.score)
        })
        .collect::<CliResult<Vec<Real>>>()?;
    let result: Vec<SweepCell> = cells
        .iter()
        .zip(scores.chunks(cfg.runs))
        .map(|(&(p_1, p_2), runs)| SweepCell {
            p_1,
            p_2,
            score: runs.iter().sum::<Real>() / runs.len() as Real,
            runs: runs.to_vec(),
        })
        .collect();

    artifacts::create_dir(out)?;
    let metric = serde_json::to_value(cfg.metric).expect("metric serialises");
    let mut csv = format!("p_1,p_2,{}\n", metric.as_str().unwrap_or("score"));
    for c in &result {
        writeln!(csv, "{},{},{}", c.p_1, c.p_2, c.score).unwrap();
    }
    let path = out.join("sensitivity.csv");
    std::fs::write(&path, csv).map_err(|e| Failure::output(&path, e))?;
    artifacts::write_json(&out.join("sensitivity.json"), &result)?;
    let mut manifest = Manifest::new("sensitivity", cfg);
    manifest.files = vec!["sensitivity.csv".into(), "sensitivity.json".into()];
    manifest.write(out)?;
    Ok(result)
}

/// Zeroes exactly `⌊rate·N·F⌋` feature entries, chosen uniformly without
/// replacement from the contamination stream of `seed`.
pub fn contaminate_features(x: &Matrix, rate: Real, seed: u64) -> CliResult<(Matrix, usize)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Failure::Config(format!("contamination rate {rate} outside [0, 1]")));
    }
    let total = x.len();
    let count = ((rate * total as Real).floor() as usize).min(total);
    let mut out = x.clone();
    let mut rng = stream(seed, 0, 0, Purpose::Contamination);
    for i in rand::seq::index::sample(&mut rng, total, count) {
        out.data_mut()[i] = 0.0;
    }
    Ok((out, count))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContaminationRow {
    pub rate: Real,
    pub zeroed_entries: usize,
    pub report: EvalReport,
    pub runs: Vec<RunRecord>,
}

/// For each rate: contaminate the features once with the base seed, then run
/// the usual protocol on the contaminated graph.
pub fn cmd_contaminate(cfg: &ExperimentConfig, rates: &[Real], out: &Path) -> CliResult<Vec<ContaminationRow>> {
    if rates.is_empty() {
        return Err(Failure::Config("no contamination rates given".into()));
    }
    let g = load_graph(cfg.data_dir()?)?;
    let opts = protocol_options(cfg, &g)?;
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let (x, zeroed) = contaminate_features(g.features(), rate, cfg.train.seed)?;
        let dirty = g.with_features(x)?;
        let runs = par_runs(cfg.runs, |r| {
            let rec = protocol_run(&dirty, &cfg.train, r, &opts)?;
            log::info!("rate {rate}, run {r}: {:.4}", rec.score);
            Ok(rec)
        })?;
        let digest = if zeroed == 0 {
            cfg.digest()
        } else {
            digest_str(&format!("{}contamination_rate={rate}\n", cfg.train.canonical()))
        };
        let report = EvalReport::from_runs(cfg.metric, runs.iter().map(|r| r.score).collect(), digest)?;
        rows.push(ContaminationRow {
            rate,
            zeroed_entries: zeroed,
            report,
            runs,
        });
    }
    artifacts::create_dir(out)?;
    artifacts::write_json(&out.join("contamination.json"), &rows)?;
    let mut manifest = Manifest::new("contaminate", cfg);
    manifest.files = vec!["contamination.json".into()];
    manifest.write(out)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_change_only_their_knob() {
        let base = TrainConfig::preset("cora").unwrap();
        let re = Variant::NoEdgeRemoval.config(&base);
        assert_eq!((re.p_r_1, re.p_r_2, re.p_m_1, re.p_m_2), (0.0, 0.0, base.p_m_1, base.p_m_2));
        let mf = Variant::NoFeatureMasking.config(&base);
        assert_eq!((mf.p_r_1, mf.p_r_2, mf.p_m_1, mf.p_m_2), (base.p_r_1, base.p_r_2, 0.0, 0.0));
        let nce = Variant::InfoNce.config(&base);
        assert_eq!(TrainConfig { objective: LossMode::Grace, ..nce }, base);
        assert_eq!(Variant::Grace.config(&base), base);
    }

    #[test]
    fn references_quote_the_published_tables() {
        assert_eq!(Variant::NoFeatureMasking.reference("cora").unwrap().mean, 81.6);
        assert_eq!(Variant::InfoNce.reference("citeseer").unwrap().mean, 70.9);
        assert!(Variant::Grace.reference("toy").is_none());
    }

    #[test]
    fn default_grid_has_81_cells() {
        let s = SweepSpec::default();
        assert_eq!(s.cells().len(), 81);
        assert_eq!(s.cells()[0], (0.1, 0.1));
        assert_eq!(s.cells()[80], (0.9, 0.9));
        assert!(SweepSpec { p1: vec![1.5], p2: vec![0.1] }.validate().is_err());
    }

    #[test]
    fn contamination_zeroes_exact_count() {
        let x = Matrix::filled(7, 9, 1.0);
        for rate in [0.0, 0.25, 0.5, 1.0] {
            let (y, n) = contaminate_features(&x, rate, 3).unwrap();
            assert_eq!(n, (rate * 63.0).floor() as usize);
            assert_eq!(y.data().iter().filter(|&&v| v == 0.0).count(), n);
        }
        assert_eq!(contaminate_features(&x, 0.0, 3).unwrap().0, x);
        assert_eq!(contaminate_features(&x, 0.4, 3).unwrap(), contaminate_features(&x, 0.4, 3).unwrap());
        assert!(contaminate_features(&x, 1.1, 3).is_err());
    }
}
