//! Cross-checks between independent computational routes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ann::{gradient_check, GradCheckReport, Mlp, ModelConfig};
use crate::collective::{CollectiveSimulator, NUM_FEATURES};
use crate::correlations::{classify, correlation_matrix, label_state, quantities, quantities_from_correlation, ClassLabel, CLASS_TOLERANCE, NUM_CLASSES};
use crate::error::Result;
use crate::qmath::sym3_spectrum;
use crate::states::{random_state_with, DensityMatrix, StateMeasure, StateSeed};

const SHARD: usize = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct OracleStats {
    pub states: usize,
    /// Largest eigenvalue difference between the collective and direct `R`.
    pub max_spectrum_diff: f64,
    /// Largest difference of `FEF_w`, `S3`, `B` recomputed from features.
    pub max_quantity_diff: f64,
}

fn sharded<T: Send>(count: usize, seed: u64, f: impl Fn(&mut ChaCha8Rng, usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..count.div_ceil(SHARD))
        .into_par_iter()
        .map(|k| {
            let mut rng = StateSeed::new(seed, k as u64).rng();
            f(&mut rng, SHARD.min(count - k * SHARD))
        })
        .collect()
}

fn measure_for(shard_state: usize) -> StateMeasure {
    if shard_state % 2 == 0 {
        StateMeasure::HaarStickBreaking
    } else {
        StateMeasure::HilbertSchmidt
    }
}

/// Compares the collective-measurement route with the direct `TᵀT` route on
/// `count` random states drawn alternately from both measures.
pub fn oracle_equivalence(count: usize, seed: u64) -> Result<OracleStats> {
    let sim = CollectiveSimulator::shared();
    let parts = sharded(count, seed, |rng, len| {
        let mut stats = OracleStats {
            states: len,
            ..Default::default()
        };
        for i in 0..len {
            let rho = random_state_with(measure_for(i), rng);
            let direct = sym3_spectrum(&correlation_matrix(&rho))?;
            let collective = sym3_spectrum(&sim.collective_r(&rho))?;
            for (a, b) in direct.eigenvalues.iter().zip(collective.eigenvalues) {
                stats.max_spectrum_diff = stats.max_spectrum_diff.max((a - b).abs());
            }
            let q = quantities(&rho)?;
            let (fef, s3, b) = quantities_from_correlation(&sim.reconstruct_r(&sim.features(&rho))?)?;
            for (x, y) in [(q.fef_witness, fef), (q.steering, s3), (q.bell, b)] {
                stats.max_quantity_diff = stats.max_quantity_diff.max((x - y).abs());
            }
        }
        Ok(stats)
    })?;
    Ok(parts.into_iter().fold(OracleStats::default(), |a, b| OracleStats {
        states: a.states + b.states,
        max_spectrum_diff: a.max_spectrum_diff.max(b.max_spectrum_diff),
        max_quantity_diff: a.max_quantity_diff.max(b.max_quantity_diff),
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WernerBoundary {
    /// Lowest class reached above the boundary.
    pub class: ClassLabel,
    pub expected: f64,
    pub found: f64,
}

/// Smallest Werner weight whose label is at least `class`, by bisection.
pub fn werner_threshold(class: ClassLabel, tolerance: f64) -> Result<f64> {
    let reaches = |p: f64| -> Result<bool> { Ok(label_state(&DensityMatrix::werner(p))?.label >= class) };
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if reaches(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Werner class boundaries: 1/3 (separable to FEF), 1/√3 and 1/√2.
pub fn werner_thresholds() -> Result<Vec<WernerBoundary>> {
    [
        (ClassLabel::Fef, 1.0 / 3.0),
        (ClassLabel::Steer, 1.0 / 3f64.sqrt()),
        (ClassLabel::Bell, std::f64::consts::FRAC_1_SQRT_2),
    ]
    .into_iter()
    .map(|(class, expected)| {
        Ok(WernerBoundary {
            class,
            expected,
            found: werner_threshold(class, 1e-12)?,
        })
    })
    .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct HierarchyStats {
    pub states: usize,
    /// Count of states where a quantifier exceeds the class tolerance while
    /// the one below it in `B ⇒ S3 ⇒ FEF_w ⇒ N` vanishes.
    pub violations: usize,
    pub class_counts: [usize; NUM_CLASSES],
}

/// Checks the nesting of the four quantifiers on `count` random states.
pub fn hierarchy_violations(count: usize, seed: u64) -> Result<HierarchyStats> {
    let parts = sharded(count, seed, |rng, len| {
        let mut stats = HierarchyStats {
            states: len,
            ..Default::default()
        };
        for i in 0..len {
            let q = quantities(&random_state_with(measure_for(i), rng))?;
            let chain = [q.bell, q.steering, q.fef_witness, q.negativity];
            if chain.windows(2).any(|w| w[0] > CLASS_TOLERANCE && w[1] <= 0.0) {
                stats.violations += 1;
            }
            stats.class_counts[classify(&q).index()] += 1;
        }
        Ok(stats)
    })?;
    Ok(parts.into_iter().fold(HierarchyStats::default(), |mut a, b| {
        a.states += b.states;
        a.violations += b.violations;
        for c in 0..NUM_CLASSES {
            a.class_counts[c] += b.class_counts[c];
        }
        a
    }))
}

/// Gradient checks on `configs` small networks with random inputs, widths,
/// batch sizes and perturbed parameters.
pub fn gradient_checks(configs: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..configs)
        .map(|_| {
            let n = rng.gen_range(1..=NUM_FEATURES);
            let width = rng.gen_range(4..=12);
            let rows = rng.gen_range(4..=16);
            let mut cfg = ModelConfig::new((0..n).collect(), rng.gen());
            cfg.hidden = vec![width, width];
            cfg.bn_input = rng.gen_bool(0.5);
            let mut model = Mlp::<f64>::new(&cfg)?;
            for s in model.param_slices_mut() {
                s.iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
            }
            let x: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let labels: Vec<u8> = (0..rows).map(|_| rng.gen_range(0..NUM_CLASSES as u8)).collect();
            gradient_check(&model, &x, &labels)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Sizes of the randomized checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfTestSize {
    pub oracle_states: usize,
    pub hierarchy_states: usize,
    pub gradient_configs: usize,
}

impl Default for SelfTestSize {
    fn default() -> Self {
        Self {
            oracle_states: 10_000,
            hierarchy_states: 1_000_000,
            gradient_configs: 20,
        }
    }
}

pub fn run_all(size: SelfTestSize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let basis_err = CollectiveSimulator::shared().basis().inverse_error();
    out.push(CheckOutcome {
        name: "minimal basis inverse",
        passed: basis_err < 1e-14,
        detail: format!("max |M M⁻¹ − 1| = {basis_err:.2e}"),
    });

    let o = oracle_equivalence(size.oracle_states, seed)?;
    out.push(CheckOutcome {
        name: "collective vs direct correlation matrix",
        passed: o.max_spectrum_diff <= 1e-10 && o.max_quantity_diff <= 1e-8,
        detail: format!(
            "{} states: spectrum {:.2e}, quantities {:.2e}",
            o.states, o.max_spectrum_diff, o.max_quantity_diff
        ),
    });

    for b in werner_thresholds()? {
        out.push(CheckOutcome {
            name: "Werner class boundary",
            passed: (b.found - b.expected).abs() <= 1e-6,
            detail: format!("{}: found {:.9}, expected {:.9}", b.class, b.found, b.expected),
        });
    }

    let h = hierarchy_violations(size.hierarchy_states, seed)?;
    out.push(CheckOutcome {
        name: "class hierarchy",
        passed: h.violations == 0,
        detail: format!("{} violations in {} states, classes {:?}", h.violations, h.states, h.class_counts),
    });

    let reports = gradient_checks(size.gradient_configs, seed)?;
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    out.push(CheckOutcome {
        name: "analytic vs finite-difference gradients",
        passed: worst < 1e-4,
        detail: format!("{} configurations, max relative error {worst:.2e}", reports.len()),
    });
    Ok(out)
}
