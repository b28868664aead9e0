//! Accuracy as measurements are removed: one model per feature-vector length.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ann::{evaluate, train, History, MlpModel, ModelConfig, Samples, TrainConfig, HIDDEN_WIDTH};
use crate::collective::{ReductionPlan, FEATURE_NAMES};
use crate::correlations::ClassLabel;
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::metrics::{subset_scores, SubsetReport, DEFAULT_SUBSETS};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub plan: ReductionPlan,
    pub train: TrainConfig,
    /// Feature-vector lengths to train, in order.
    pub lengths: Vec<usize>,
    /// Also train a model that sees no features at all.
    pub baseline: bool,
    pub bn_input: bool,
    pub hidden: Vec<usize>,
    pub model_seed: u64,
    pub subsets: usize,
    pub subset_seed: u64,
}

impl SweepConfig {
    pub fn new(plan: ReductionPlan, train: TrainConfig) -> Self {
        let lengths = plan.lengths().collect();
        Self {
            plan,
            train,
            lengths,
            baseline: true,
            bn_input: true,
            hidden: vec![HIDDEN_WIDTH, HIDDEN_WIDTH],
            model_seed: 0,
            subsets: DEFAULT_SUBSETS,
            subset_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub features: Vec<String>,
    pub epochs: usize,
    pub best_val_loss: f64,
    pub report: SubsetReport,
}

impl SweepRow {
    pub fn predicted(&self, c: ClassLabel) -> u64 {
        self.report.confusion.column_sum(c.index())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Ordered as trained; the zero-feature baseline, when present, is last.
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn row(&self, n: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// Largest rise in accuracy when going from a longer to a shorter
    /// feature vector, over all pairs of trained lengths.
    pub fn worst_monotonicity_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in &self.rows {
            for b in &self.rows {
                if b.n < a.n {
                    worst = worst.max(b.report.overall.accuracy - a.report.overall.accuracy);
                }
            }
        }
        worst
    }

    fn sorted(&self) -> Vec<&SweepRow> {
        let mut rows: Vec<&SweepRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.n.cmp(&a.n));
        rows
    }

    pub fn write_accuracy_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,accuracy,accuracy_std,relaxed_accuracy,relaxed_accuracy_std,features")?;
        for r in self.sorted() {
            let s = &r.report;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.n,
                s.overall.accuracy,
                opt(s.accuracy.std),
                s.overall.relaxed_accuracy,
                opt(s.relaxed_accuracy.std),
                r.features.join(" ")
            )?;
        }
        Ok(())
    }

    pub fn write_f1_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["n".to_string()];
        for c in ClassLabel::ALL {
            header.push(format!("f1_{}", c.name()));
            header.push(format!("f1_{}_std", c.name()));
        }
        writeln!(w, "{}", header.join(","))?;
        for r in self.sorted() {
            let mut cells = vec![r.n.to_string()];
            for e in &r.report.f1 {
                cells.push(e.mean.to_string());
                cells.push(opt(e.std));
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// `accuracy_vs_n.csv`, `f1_vs_n.csv` and `confusion_n<k>.csv` for every row.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut emit = |name: String, f: &dyn Fn(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path)?);
            f(&mut w)?;
            w.flush()?;
            written.push(path);
            Ok(())
        };
        emit("accuracy_vs_n.csv".into(), &|w| self.write_accuracy_csv(w))?;
        emit("f1_vs_n.csv".into(), &|w| self.write_f1_csv(w))?;
        for r in self.sorted() {
            emit(format!("confusion_n{}.csv", r.n), &|w| r.report.confusion.write_csv(w))?;
        }
        Ok(written)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Trains and scores one model on the given canonical feature indices.
pub fn train_and_score(
    split: &Split,
    indices: &[usize],
    cfg: &SweepConfig,
) -> Result<(MlpModel, History, SweepRow)> {
    let mut mc = ModelConfig::new(indices.to_vec(), cfg.model_seed);
    mc.bn_input = cfg.bn_input;
    mc.hidden = cfg.hidden.clone();
    let mut model = MlpModel::new(&mc)?;
    let tr = Samples::from_dataset(&split.train, indices);
    let va = Samples::from_dataset(&split.validation, indices);
    let te = Samples::from_dataset(&split.test, indices);
    let n = indices.len();
    let history = train(&mut model, &tr, &va, &cfg.train).map_err(|e| match e {
        Error::Divergence { epoch, what } => Error::Divergence {
            epoch,
            what: format!("n = {n}: {what}"),
        },
        other => other,
    })?;
    let (_, _, predicted) = evaluate(&model, &te)?;
    let report = subset_scores(&split.test.labels(), &predicted, cfg.subsets, cfg.subset_seed)?;
    let row = SweepRow {
        n,
        features: indices.iter().map(|&i| FEATURE_NAMES[i].to_string()).collect(),
        epochs: history.epochs.len(),
        best_val_loss: history.best_val_loss,
        report,
    };
    Ok((model, history, row))
}

/// Runs every configured length, then the baseline. `on_model` sees each
/// trained model before the next one starts.
pub fn run_sweep(
    split: &Split,
    cfg: &SweepConfig,
    mut on_model: impl FnMut(&SweepRow, &MlpModel, &History) -> Result<()>,
) -> Result<SweepReport> {
    let mut jobs = Vec::new();
    for &n in &cfg.lengths {
        let set = cfg
            .plan
            .retained(n)
            .ok_or_else(|| Error::Config(format!("reduction plan has no set of length {n}")))?;
        jobs.push(set.to_vec());
    }
    if cfg.baseline {
        jobs.push(Vec::new());
    }
    let mut report = SweepReport::default();
    for indices in jobs {
        log::info!("training n = {} on {:?}", indices.len(), indices);
        let (model, history, row) = train_and_score(split, &indices, cfg)?;
        log::info!(
            "n = {}: accuracy {:.4}, relaxed {:.4}",
            row.n,
            row.report.overall.accuracy,
            row.report.overall.relaxed_accuracy
        );
        on_model(&row, &model, &history)?;
        report.rows.push(row);
    }
    Ok(report)
}
