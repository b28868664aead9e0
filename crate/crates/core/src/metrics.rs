//! Confusion matrices, per-class scores and shard-based uncertainties.

use std::fmt;
use std::io::Write;
use std::ops::{Add, AddAssign};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correlations::{ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};

pub const DEFAULT_SUBSETS: usize = 12;

/// Minimum test records per subset.
pub const MIN_PER_SUBSET: usize = 25;

const SUBSET_STREAM: u64 = 0x5_0B5E7;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn column_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// Records counted correct when sep and ent are merged.
    pub fn relaxed_correct(&self) -> u64 {
        let merged = self.counts[0][0] + self.counts[0][1] + self.counts[1][0] + self.counts[1][1];
        merged + (2..NUM_CLASSES).map(|c| self.counts[c][c]).sum::<u64>()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let names: Vec<&str> = ClassLabel::ALL.iter().map(|c| c.name()).collect();
        writeln!(w, "true\\predicted,{}", names.join(","))?;
        for (c, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(w, "{},{}", names[c], cells.join(","))?;
        }
        Ok(())
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().flatten().zip(rhs.counts.iter().flatten()) {
            *a += b;
        }
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>8}", "")?;
        for c in ClassLabel::ALL {
            write!(f, "{:>10}", c.name())?;
        }
        writeln!(f)?;
        for (c, row) in self.counts.iter().enumerate() {
            write!(f, "{:>8}", ClassLabel::ALL[c].name())?;
            for v in row {
                write!(f, "{v:>10}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn confusion(truth: &[ClassLabel], predicted: &[ClassLabel]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(predicted) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// The class was never true or never predicted; the affected scores are 0.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub accuracy: f64,
    pub relaxed_accuracy: f64,
    pub classes: [ClassScores; NUM_CLASSES],
}

impl ScoreReport {
    pub fn class(&self, c: ClassLabel) -> &ClassScores {
        &self.classes[c.index()]
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of recall and precision; 0 when both vanish.
pub fn f1_score(recall: f64, precision: f64) -> f64 {
    if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    }
}

pub fn scores(cm: &ConfusionMatrix) -> Result<ScoreReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::TooFewRecords { needed: 1, got: 0 });
    }
    let classes = std::array::from_fn(|c| {
        let tp = cm.counts[c][c];
        let recall = ratio(tp, cm.row_sum(c));
        let precision = ratio(tp, cm.column_sum(c));
        let (r, p) = (recall.unwrap_or(0.0), precision.unwrap_or(0.0));
        ClassScores {
            recall: r,
            precision: p,
            f1: f1_score(r, p),
            degenerate: recall.is_none() || precision.is_none(),
        }
    });
    Ok(ScoreReport {
        accuracy: cm.trace() as f64 / total as f64,
        relaxed_accuracy: cm.relaxed_correct() as f64 / total as f64,
        classes,
    })
}

/// Fraction of records wrong even with sep and ent merged.
pub fn relaxed_error_rate(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    (total - cm.relaxed_correct()) as f64 / total as f64
}

/// Σ true positives over Σ true counts.
pub fn micro_recall(cm: &ConfusionMatrix) -> f64 {
    let tp = cm.trace();
    let all: u64 = (0..NUM_CLASSES).map(|c| cm.row_sum(c)).sum();
    tp as f64 / all as f64
}

/// Mean and sample standard deviation across subsets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Absent for a single subset.
    pub std: Option<f64>,
}

impl Estimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean, std }
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * s),
            None => write!(f, "{:.2}", 100.0 * self.mean),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub subsets: usize,
    pub accuracy: Estimate,
    pub relaxed_accuracy: Estimate,
    pub recall: [Estimate; NUM_CLASSES],
    pub precision: [Estimate; NUM_CLASSES],
    pub f1: [Estimate; NUM_CLASSES],
    /// Sum of all subset matrices, i.e. the full-test matrix.
    pub confusion: ConfusionMatrix,
    pub overall: ScoreReport,
}

impl SubsetReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "metric,class,mean,std")?;
        let std = |e: &Estimate| e.std.map_or(String::new(), |s| s.to_string());
        writeln!(w, "accuracy,all,{},{}", self.accuracy.mean, std(&self.accuracy))?;
        writeln!(w, "relaxed_accuracy,all,{},{}", self.relaxed_accuracy.mean, std(&self.relaxed_accuracy))?;
        for (name, values) in [("recall", &self.recall), ("precision", &self.precision), ("f1", &self.f1)] {
            for (c, e) in values.iter().enumerate() {
                writeln!(w, "{name},{},{},{}", ClassLabel::ALL[c].name(), e.mean, std(e))?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for SubsetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy          {}", self.accuracy)?;
        writeln!(f, "relaxed accuracy  {}", self.relaxed_accuracy)?;
        writeln!(f, "{:>8}{:>18}{:>18}{:>18}", "class", "recall", "precision", "F1")?;
        for c in 0..NUM_CLASSES {
            writeln!(
                f,
                "{:>8}{:>18}{:>18}{:>18}",
                ClassLabel::ALL[c].name(),
                self.recall[c].to_string(),
                self.precision[c].to_string(),
                self.f1[c].to_string()
            )?;
        }
        Ok(())
    }
}

/// Splits the test records into `k` shuffled shards of near-equal size and
/// reports the spread of every score across shards.
pub fn subset_scores(truth: &[ClassLabel], predicted: &[ClassLabel], k: usize, seed: u64) -> Result<SubsetReport> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    let needed = k.max(1) * MIN_PER_SUBSET;
    if k == 0 || truth.len() < needed {
        return Err(Error::TooFewRecords {
            needed,
            got: truth.len(),
        });
    }
    let mut order: Vec<usize> = (0..truth.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SUBSET_STREAM);
    order.shuffle(&mut rng);

    let n = truth.len();
    let mut start = 0;
    let mut shards = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    for i in 0..k {
        let len = n / k + usize::from(i < n % k);
        let mut cm = ConfusionMatrix::default();
        for &j in &order[start..start + len] {
            cm.counts[truth[j].index()][predicted[j].index()] += 1;
        }
        start += len;
        reports.push(scores(&cm)?);
        shards.push(cm);
    }
    let confusion = shards.iter().fold(ConfusionMatrix::default(), |a, b| a + *b);
    let est = |f: &dyn Fn(&ScoreReport) -> f64| Estimate::from_samples(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(SubsetReport {
        subsets: k,
        accuracy: est(&|r| r.accuracy),
        relaxed_accuracy: est(&|r| r.relaxed_accuracy),
        recall: std::array::from_fn(|c| est(&|r| r.classes[c].recall)),
        precision: std::array::from_fn(|c| est(&|r| r.classes[c].precision)),
        f1: std::array::from_fn(|c| est(&|r| r.classes[c].f1)),
        overall: scores(&confusion)?,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ClassLabel::*;

    fn labels(v: &[u8]) -> Vec<ClassLabel> {
        v.iter().map(|&i| ClassLabel::ALL[i as usize]).collect()
    }

    #[test]
    fn confusion_counts() {
        let t = labels(&[0, 0, 1, 2, 4, 4, 3]);
        let p = labels(&[0, 1, 1, 2, 4, 3, 3]);
        let cm = confusion(&t, &p).unwrap();
        assert_eq!(cm.counts[0], [1, 1, 0, 0, 0]);
        assert_eq!(cm.counts[1], [0, 1, 0, 0, 0]);
        assert_eq!(cm.counts[4], [0, 0, 0, 1, 1]);
        assert_eq!(cm.total(), 7);
        assert_eq!(cm.trace(), 5);
        assert!(confusion(&t, &p[1..]).is_err());
    }

    #[test]
    fn perfect_and_constant_predictions() {
        let t: Vec<ClassLabel> = (0..50).map(|i| ClassLabel::ALL[i % 5]).collect();
        let cm = confusion(&t, &t).unwrap();
        for c in 0..5 {
            for d in 0..5 {
                assert_eq!(cm.counts[c][d] > 0, c == d);
            }
        }
        let s = scores(&cm).unwrap();
        assert_eq!(s.accuracy, 1.0);
        assert!(s.classes.iter().all(|c| c.recall == 1.0 && c.precision == 1.0 && c.f1 == 1.0));

        let cm = confusion(&t, &vec![Sep; 50]).unwrap();
        assert!((0..5).all(|c| cm.row_sum(c) == 10 && cm.column_sum(c) == if c == 0 { 50 } else { 0 }));
    }

    #[test]
    fn empty_predicted_column_has_zero_f1() {
        let t = labels(&[2, 2, 3, 3, 0]);
        let p = labels(&[3, 0, 3, 3, 0]);
        let s = scores(&confusion(&t, &p).unwrap()).unwrap();
        assert_eq!(s.class(Fef).f1, 0.0);
        assert_eq!(s.class(Fef).precision, 0.0);
        assert!(s.class(Fef).degenerate);
        assert!(!s.class(Steer).degenerate);
        assert!(scores(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn steer_scores_from_counts() {
        // 199 of 200 steerable found, 199 of 201 steer predictions correct
        let mut cm = ConfusionMatrix::default();
        cm.counts[3][3] = 199;
        cm.counts[3][4] = 1;
        cm.counts[4][3] = 1;
        cm.counts[2][3] = 1;
        cm.counts[4][4] = 99;
        cm.counts[2][2] = 99;
        let s = scores(&cm).unwrap();
        let st = s.class(Steer);
        assert!((st.recall - 0.995).abs() < 1e-15);
        assert!((st.precision - 199.0 / 201.0).abs() < 1e-15);
        let f1 = 2.0 * st.recall * st.precision / (st.recall + st.precision);
        assert_eq!(st.f1, f1);
    }

    #[test]
    fn f1_of_rounded_scores() {
        let f1 = f1_score(0.9950, 0.9927);
        // inputs are rounded to 0.01 pp
        assert!((f1 - 0.9939).abs() < 1e-4);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn relaxed_accuracy_merges_sep_and_ent() {
        let t = labels(&[0, 1, 0, 1, 2]);
        let p = labels(&[1, 0, 0, 1, 3]);
        let cm = confusion(&t, &p).unwrap();
        let s = scores(&cm).unwrap();
        assert_eq!(s.accuracy, 0.4);
        assert_eq!(s.relaxed_accuracy, 0.8);
        assert_eq!(relaxed_error_rate(&cm), 0.2);
    }

    #[test]
    fn subsets_need_enough_records() {
        let t = vec![Sep; 299];
        assert!(matches!(subset_scores(&t, &t, 12, 0), Err(Error::TooFewRecords { .. })));
        let t = vec![Sep; 300];
        assert!(subset_scores(&t, &t, 12, 0).is_ok());
    }

    #[test]
    fn identical_shards_have_zero_std() {
        let t: Vec<ClassLabel> = (0..600).map(|i| ClassLabel::ALL[i % 5]).collect();
        let r = subset_scores(&t, &t, 12, 1).unwrap();
        assert_eq!(r.accuracy.std, Some(0.0));
        assert!(r.f1.iter().all(|e| e.std == Some(0.0) && e.mean == 1.0));
        let single = subset_scores(&t, &t, 1, 1).unwrap();
        assert_eq!(single.accuracy.std, None);
    }

    fn arb_pairs() -> impl Strategy<Value = (Vec<ClassLabel>, Vec<ClassLabel>)> {
        prop::collection::vec((0u8..5, 0u8..5), 300..900)
            .prop_map(|v| (labels(&v.iter().map(|p| p.0).collect::<Vec<_>>()), labels(&v.iter().map(|p| p.1).collect::<Vec<_>>())))
    }

    proptest! {
        #[test]
        fn scores_bounded_and_consistent((t, p) in arb_pairs(), seed in any::<u64>()) {
            let cm = confusion(&t, &p).unwrap();
            for c in 0..5 {
                prop_assert_eq!(cm.row_sum(c), t.iter().filter(|l| l.index() == c).count() as u64);
            }
            let s = scores(&cm).unwrap();
            prop_assert_eq!(s.accuracy, cm.trace() as f64 / cm.total() as f64);
            prop_assert_eq!(micro_recall(&cm), s.accuracy);
            prop_assert_eq!(relaxed_error_rate(&cm) + s.relaxed_accuracy, 1.0);
            for c in s.classes {
                for v in [c.recall, c.precision, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let r = subset_scores(&t, &p, 12, seed).unwrap();
            prop_assert_eq!(r.confusion, cm);
            prop_assert_eq!(r.overall, s);
        }

        #[test]
        fn macro_recall_equals_accuracy_on_equal_classes(per in 5usize..60, preds in prop::collection::vec(0u8..5, 300)) {
            let t: Vec<ClassLabel> = (0..5 * per).map(|i| ClassLabel::ALL[i % 5]).collect();
            let p = labels(&preds[..5 * per]);
            let s = scores(&confusion(&t, &p).unwrap()).unwrap();
            let macro_recall = s.classes.iter().map(|c| c.recall).sum::<f64>() / 5.0;
            prop_assert!((macro_recall - s.accuracy).abs() < 1e-15);
        }
    }
}
