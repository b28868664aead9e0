//! Feed-forward classifier: `n` inputs, two hidden layers of 512 ReLU units,
//! batch normalization before every dense map, softmax over the five classes.

mod checkpoint;
mod gradcheck;
mod kernels;
mod model;
mod train;

pub use checkpoint::{load_model, read_model, save_model, write_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{analytic_gradients, gradient_check, GradCheckReport, GRADCHECK_FLOOR, GRADCHECK_STEP};
pub use kernels::Scalar;
pub use model::{
    BatchNorm, Dense, Grads, Layer, LayerGrads, Mlp, MlpModel, ModelConfig, Workspace, BN_EPSILON, BN_MOMENTUM,
    HIDDEN_WIDTH,
};
pub use train::{argmax, evaluate, train, Adam, EpochRecord, History, Samples, TrainConfig};

use crate::collective::FeatureVector;
use crate::correlations::{ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};

/// Classifies one measured feature vector. Every feature the model was
/// trained on must be present.
pub fn predict(model: &MlpModel, features: &FeatureVector) -> Result<(ClassLabel, [f64; NUM_CLASSES])> {
    let mut row = Vec::with_capacity(model.n_inputs());
    for &i in model.feature_indices() {
        if !features.mask[i] {
            return Err(Error::MissingFeature {
                name: crate::collective::FEATURE_NAMES[i],
            });
        }
        row.push(features.values[i] as f32);
    }
    let p = model.predict_proba(&row, 1)?;
    let probs = std::array::from_fn(|k| p[k] as f64);
    Ok((argmax(&p), probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collective::features;
    use crate::states::DensityMatrix;

    #[test]
    fn predict_requires_model_features() {
        let m = MlpModel::new(&ModelConfig::new(vec![6, 1], 0)).unwrap();
        let f = features(&DensityMatrix::singlet());
        let (label, p) = predict(&m, &f).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(label, argmax(&p));
        assert!(matches!(
            predict(&m, &f.masked(&[6])),
            Err(Error::MissingFeature { name: "p22" })
        ));
    }
}
