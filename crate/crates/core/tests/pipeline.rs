use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qcorr::ann::{self, evaluate, load_model, predict, save_model, MlpModel, ModelConfig, Samples, TrainConfig};
use qcorr::collective::{features, reconstruct_r, ReductionPlan, NUM_FEATURES};
use qcorr::correlations::{label_state, quantities_from_correlation, ClassLabel, NUM_CLASSES};
use qcorr::dataset::{equalize, generate, split, Dataset, Split};
use qcorr::metrics::subset_scores;
use qcorr::states::{random_state_with, StateMeasure};
use qcorr::Error;

#[test]
fn dataset_to_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let raw = generate(40_000, 3, StateMeasure::default()).unwrap();
    raw.save(dir.path().join("raw.qds")).unwrap();
    let back = Dataset::load(dir.path().join("raw.qds")).unwrap();
    assert_eq!(back, raw);

    let eq = equalize(&back, 3).unwrap();
    let counts = eq.class_counts();
    assert!(counts.iter().all(|&c| c == counts[0]));
    let parts = split(&eq, 3).unwrap();
    assert_eq!(parts.train.len() + parts.validation.len() + parts.test.len(), eq.len());
    parts.save(dir.path()).unwrap();
    let parts = Split::load(dir.path()).unwrap();

    let indices = ReductionPlan::paper().retained(10).unwrap().to_vec();
    let mut mc = ModelConfig::new(indices.clone(), 3);
    mc.hidden = vec![64, 64];
    let mut model = MlpModel::new(&mc).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        phase1_batch: 256,
        phase2_batch: 2048,
        max_epochs: 12,
        patience: 3,
        ..TrainConfig::default()
    };
    let history = ann::train(
        &mut model,
        &Samples::from_dataset(&parts.train, &indices),
        &Samples::from_dataset(&parts.validation, &indices),
        &cfg,
    )
    .unwrap();
    assert!(!history.epochs.is_empty());

    let path = dir.path().join("model.qcm");
    save_model(&model, &path).unwrap();
    let model = load_model(&path).unwrap();
    let test = Samples::from_dataset(&parts.test, &indices);
    let (_, acc, predicted) = evaluate(&model, &test).unwrap();
    assert!(acc > 0.6, "accuracy {acc}");
    let report = subset_scores(&parts.test.labels(), &predicted, 12, 3).unwrap();
    assert!((report.overall.accuracy - acc).abs() < 1e-12);
    assert!(report.overall.relaxed_accuracy >= report.overall.accuracy);

    let rec = &parts.test.records[0];
    let fv = qcorr::collective::FeatureVector::full(rec.features);
    let (label, probs) = predict(&model, &fv).unwrap();
    assert_eq!(label, predicted[0]);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);

    let partial = fv.masked(ReductionPlan::paper().retained(3).unwrap());
    assert!(matches!(predict(&model, &partial), Err(Error::MissingFeature { .. })));
}

#[test]
fn stored_records_match_recomputation() {
    let ds = generate(500, 8, StateMeasure::default()).unwrap();
    for rec in &ds.records {
        let r = reconstruct_r(&qcorr::collective::FeatureVector::full(rec.features)).unwrap();
        let (fef, s3, b) = quantities_from_correlation(&r).unwrap();
        assert!((fef - rec.quantities.fef_witness).abs() < 1e-8);
        assert!((s3 - rec.quantities.steering).abs() < 1e-8);
        assert!((b - rec.quantities.bell).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_follow_from_features(seed in any::<u64>(), hs in any::<bool>()) {
        let measure = if hs { StateMeasure::HilbertSchmidt } else { StateMeasure::HaarStickBreaking };
        let rho = random_state_with(measure, &mut ChaCha8Rng::seed_from_u64(seed));
        let rec = label_state(&rho).unwrap();
        let f = features(&rho);
        prop_assert!(f.is_complete());
        prop_assert!(f.values.iter().all(|v| v.is_finite()));
        prop_assert_eq!(f.values.len(), NUM_FEATURES);
        let (_, s3, b) = quantities_from_correlation(&reconstruct_r(&f).unwrap()).unwrap();
        let q = rec.quantities;
        prop_assert!((s3 - q.steering).abs() < 1e-8 && (b - q.bell).abs() < 1e-8);
        // sep and ent are both below every R-based threshold
        prop_assert!(rec.label.index() < NUM_CLASSES);
        if rec.label <= ClassLabel::Ent {
            prop_assert!(q.fef_witness <= 1e-10 && q.steering <= 1e-10 && q.bell <= 1e-10);
        }
    }
}
