//! Adam optimisation with early stopping and a two-phase batch schedule.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels::Scalar;
use super::model::{Grads, Mlp, MlpModel, Workspace};
use crate::correlations::{ClassLabel, NUM_CLASSES};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

const SHUFFLE_STREAM: u64 = 0x5_4FF1E;

/// Feature rows and labels prepared for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub x: Vec<f32>,
    pub labels: Vec<u8>,
    pub n_features: usize,
}

impl Samples {
    pub fn new(x: Vec<f32>, labels: Vec<u8>, n_features: usize) -> Result<Self> {
        if x.len() != labels.len() * n_features {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * n_features,
                got: x.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Config(format!("label {bad} out of range")));
        }
        Ok(Self { x, labels, n_features })
    }

    /// Selects the features in `indices` order.
    pub fn from_dataset(ds: &Dataset, indices: &[usize]) -> Self {
        let x = ds.feature_matrix(indices).into_iter().map(|v| v as f32).collect();
        let labels = ds.records.iter().map(|r| r.label as u8).collect();
        Self {
            x,
            labels,
            n_features: indices.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate of the second phase; the first-phase rate when absent.
    pub phase2_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub phase1_batch: usize,
    pub phase2_batch: usize,
    /// Budget shared by both phases.
    pub max_epochs: usize,
    pub patience: usize,
    /// Largest number of rows pushed through the network at once; larger
    /// batches are normalized in independent slices of at most this size and
    /// their gradients summed.
    pub micro_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            phase2_learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            phase1_batch: 4096,
            phase2_batch: 1 << 18,
            max_epochs: 4096,
            patience: 10,
            micro_batch: 8192,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.phase1_batch < 2 || self.phase2_batch < 2 || self.micro_batch < 2 {
            return bad("batch sizes must be at least 2");
        }
        let rates = [Some(self.learning_rate), self.phase2_learning_rate];
        if rates.iter().flatten().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("invalid Adam constants");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl History {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,phase,train_loss,val_loss,val_acc")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{},{}", e.epoch, e.phase, e.train_loss, e.val_loss, e.val_acc)?;
        }
        Ok(())
    }
}

/// Adam with bias correction over the slices of [`Mlp::param_slices_mut`].
pub struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Mlp<T>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<T>> = Grads::zeros_like(model)
            .slices()
            .iter()
            .map(|s| vec![T::zero(); s.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step(&mut self, model: &mut Mlp<T>, grads: &Grads<T>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step = T::from_f64_lossy(lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(self.epsilon);
        let params = model.param_slices_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads.slices()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + ob1 * g[i];
                v[i] = b2 * v[i] + ob2 * g[i] * g[i];
                p[i] = p[i] - step * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            }
        }
    }
}

/// Mean cross-entropy, accuracy and predicted labels in inference mode.
pub fn evaluate(model: &MlpModel, data: &Samples) -> Result<(f64, f64, Vec<ClassLabel>)> {
    let probs = model.predict_proba(&data.x, data.len())?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut predicted = Vec::with_capacity(data.len());
    for (p, &y) in probs.chunks_exact(NUM_CLASSES).zip(&data.labels) {
        loss -= (p[y as usize] as f64).max(f64::MIN_POSITIVE).ln();
        let label = argmax(p);
        correct += (label.index() == y as usize) as usize;
        predicted.push(label);
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n, predicted))
}

/// First index of the largest probability.
pub fn argmax<T: PartialOrd + Copy>(p: &[T]) -> ClassLabel {
    let mut best = 0;
    for k in 1..p.len().min(NUM_CLASSES) {
        if p[k] > p[best] {
            best = k;
        }
    }
    ClassLabel::from_index(best).expect("class index in range")
}

/// Split `rows` into the fewest nearly equal parts no larger than `max`.
fn micro_sizes(rows: usize, max: usize) -> impl Iterator<Item = usize> {
    let parts = rows.div_ceil(max).max(1);
    (0..parts).map(move |i| rows / parts + usize::from(i < rows % parts))
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    train: &'a Samples,
    ws: Workspace<f32>,
    grads: Grads<f32>,
    adam: Adam<f32>,
    xbuf: Vec<f32>,
    ybuf: Vec<u8>,
}

impl Trainer<'_> {
    /// One optimizer step over the rows in `idx`; returns the summed loss.
    fn step(&mut self, model: &mut MlpModel, idx: &[u32], lr: f64) -> Result<f64> {
        let n = self.train.n_features;
        self.xbuf.clear();
        self.ybuf.clear();
        for &i in idx {
            self.xbuf.extend_from_slice(self.train.row(i as usize));
            self.ybuf.push(self.train.labels[i as usize]);
        }
        self.grads.zero();
        let scale = 1.0 / idx.len() as f32;
        let mut start = 0;
        let mut total = 0.0;
        for rows in micro_sizes(idx.len(), self.cfg.micro_batch) {
            let (x, y) = (&self.xbuf[start * n..(start + rows) * n], &self.ybuf[start..start + rows]);
            model.forward(x, rows, &mut self.ws)?;
            total += model.loss(&self.ws, y) * rows as f64;
            model.backward(&mut self.ws, y, scale, &mut self.grads);
            model.update_running_stats(&self.ws);
            start += rows;
        }
        self.adam.step(model, &self.grads, lr);
        Ok(total)
    }
}

/// Trains `model` in place and leaves it holding the parameters with the
/// lowest validation loss, in inference mode.
pub fn train(model: &mut MlpModel, train: &Samples, validation: &Samples, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let n = model.n_inputs();
    if train.n_features != n || validation.n_features != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: train.n_features,
        });
    }
    if train.len() < 2 || validation.is_empty() {
        return Err(Error::TooFewRecords {
            needed: 2,
            got: train.len().min(validation.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut trainer = Trainer {
        cfg,
        train,
        ws: Workspace::new(),
        grads: Grads::zeros_like(model),
        adam: Adam::new(model, cfg.beta1, cfg.beta2, cfg.epsilon),
        xbuf: Vec::new(),
        ybuf: Vec::new(),
    };
    let mut order: Vec<u32> = (0..train.len() as u32).collect();
    let mut history = History {
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = model.clone();
    let mut epoch = 0;
    let phases = [
        (1u8, cfg.phase1_batch, cfg.learning_rate),
        (2u8, cfg.phase2_batch, cfg.phase2_learning_rate.unwrap_or(cfg.learning_rate)),
    ];
    for (phase, batch, lr) in phases {
        let batch = batch.min(train.len());
        let mut stale = 0;
        while epoch < cfg.max_epochs && stale < cfg.patience {
            epoch += 1;
            model.set_training(true);
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut seen = 0usize;
            for idx in order.chunks(batch).filter(|c| c.len() >= 2) {
                loss_sum += trainer.step(model, idx, lr).map_err(|e| at_epoch(e, epoch))?;
                seen += idx.len();
            }
            model.set_training(false);
            let train_loss = loss_sum / seen.max(1) as f64;
            let (val_loss, val_acc, _) = evaluate(model, validation).map_err(|e| at_epoch(e, epoch))?;
            if !train_loss.is_finite() || !val_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    what: format!("loss train {train_loss} validation {val_loss}"),
                });
            }
            log::info!(
                "epoch {epoch} phase {phase} batch {batch}: train {train_loss:.5} val {val_loss:.5} acc {val_acc:.4}"
            );
            history.epochs.push(EpochRecord {
                epoch,
                phase,
                train_loss,
                val_loss,
                val_acc,
            });
            if val_loss < history.best_val_loss {
                history.best_val_loss = val_loss;
                history.best_epoch = epoch;
                best.clone_from(model);
                stale = 0;
            } else {
                stale += 1;
            }
        }
        model.clone_from(&best);
    }
    model.set_training(false);
    Ok(history)
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Divergence { what, .. } => Error::Divergence { epoch, what },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::model::ModelConfig;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(rows: usize, seed: u64) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for i in 0..rows {
            let label = if i % 2 == 0 { 1u8 } else { 3u8 };
            let centre = if label == 1 { -2.0 } else { 2.0 };
            for _ in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                x.push((centre + 0.5 * z) as f32);
            }
            labels.push(label);
        }
        Samples::new(x, labels, 3).unwrap()
    }

    fn small_model(n: usize, seed: u64) -> MlpModel {
        let mut cfg = ModelConfig::new((0..n).collect(), seed);
        cfg.hidden = vec![32, 32];
        MlpModel::new(&cfg).unwrap()
    }

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            phase1_batch: 64,
            phase2_batch: 512,
            max_epochs: 50,
            patience: 5,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.1, 0.6, 0.1, 0.1]), ClassLabel::Fef);
        assert_eq!(argmax(&[0.5, 0.5, 0.0, 0.0, 0.0]), ClassLabel::Sep);
    }

    #[test]
    fn micro_batches_cover_rows() {
        let sizes: Vec<usize> = micro_sizes(20000, 8192).collect();
        assert_eq!(sizes, vec![6667, 6667, 6666]);
        assert_eq!(micro_sizes(10, 8192).collect::<Vec<_>>(), vec![10]);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (tr, va) = (blobs(2000, 1), blobs(500, 2));
        let mut m = small_model(3, 1);
        let h = train(&mut m, &tr, &va, &quick_config(1)).unwrap();
        assert!(h.epochs.len() <= 50);
        let (_, acc, _) = evaluate(&m, &va).unwrap();
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn shuffled_labels_stay_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let make = |rows: usize, rng: &mut ChaCha8Rng| {
            let x = (0..rows * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let labels = (0..rows).map(|_| rng.gen_range(0..5u8)).collect();
            Samples::new(x, labels, 4).unwrap()
        };
        let (tr, va) = (make(5000, &mut rng), make(20000, &mut rng));
        let mut m = small_model(4, 2);
        train(&mut m, &tr, &va, &quick_config(2)).unwrap();
        let (_, acc, _) = evaluate(&m, &va).unwrap();
        assert!((acc - 0.2).abs() <= 0.02, "accuracy {acc}");
    }

    #[test]
    fn single_class_loss_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f32> = (0..64 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = Samples::new(x, vec![2; 64], 5).unwrap();
        let mut m = small_model(5, 4);
        let cfg = TrainConfig::default();
        let mut t = Trainer {
            cfg: &cfg,
            train: &data,
            ws: Workspace::new(),
            grads: Grads::zeros_like(&m),
            adam: Adam::new(&m, 0.9, 0.999, 1e-8),
            xbuf: Vec::new(),
            ybuf: Vec::new(),
        };
        let idx: Vec<u32> = (0..64).collect();
        m.set_training(true);
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let loss = t.step(&mut m, &idx, 1e-3).unwrap() / 64.0;
            assert!(loss < last, "{loss} !< {last}");
            last = loss;
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (tr, va) = (blobs(600, 5), blobs(200, 6));
        let run = || {
            let mut m = small_model(3, 9);
            let mut cfg = quick_config(9);
            cfg.max_epochs = 4;
            let h = train(&mut m, &tr, &va, &cfg).unwrap();
            (m, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn best_epoch_parameters_are_kept() {
        let (tr, va) = (blobs(600, 7), blobs(200, 8));
        let mut m = small_model(3, 3);
        let cfg = TrainConfig {
            max_epochs: 1000,
            ..quick_config(3)
        };
        let h = train(&mut m, &tr, &va, &cfg).unwrap();
        let (loss, _, _) = evaluate(&m, &va).unwrap();
        assert!((loss - h.best_val_loss).abs() < 1e-12);
        let min = h.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(min, h.best_val_loss);
        assert!(h.epochs.iter().any(|e| e.phase == 2));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.patience = 0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            learning_rate: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn history_csv_header() {
        let mut buf = Vec::new();
        History::default().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,phase,train_loss,val_loss,val_acc\n");
    }
}
