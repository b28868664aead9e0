//! Collective measurements on two copies of a state in the entanglement-swapping
//! geometry.
//!
//! Two copies `ρ_ab ⊗ ρ_a'b'` are measured jointly: qubits `b, b'` with the
//! singlet witness `S = 1 − 4|Ψ−⟩⟨Ψ−|`, qubits `a, a'` with a product of local
//! operators. With Pauli operators on `a, a'` the expectation values are the
//! entries of the correlation matrix; with the four tetrahedral minimal-basis
//! operators `Π_i` they are the ten features `p_ij = p_ji` used by the
//! classifier. Since `S = Σ_k σ_k ⊗ σ_k`, the features satisfy
//! `P = M·G·Mᵀ` where `G_μν = Σ_k T_μk T_νk` (with `T_0k` the Bloch vector of
//! qubit `b`), so inverting `M` recovers the correlation matrix from the
//! features alone.
//!
//! A Pauli-projector scheme needs 36 von Neumann configurations, reducible to
//! 16 by symmetry and completeness; the minimal basis needs only the 10 unique
//! `p_ij`. Only the minimal-basis scheme is simulated here.
//!
//! Tensor-factor ordering of the 16-dimensional space is `(a, b, a', b')`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::{ComplexMatrix4, Matrix2, RealSym3, C64, PAULIS, ZERO};
use crate::states::{singlet_vector, DensityMatrix};

pub const NUM_FEATURES: usize = 10;

/// Canonical feature order as zero-based `(i, j)` pairs of the `Π` basis.
pub const FEATURE_PAIRS: [(usize, usize); NUM_FEATURES] = [
    (0, 0),
    (1, 1),
    (2, 2),
    (3, 3),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 2),
    (1, 3),
    (2, 3),
];

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["p11", "p22", "p33", "p44", "p12", "p13", "p14", "p23", "p24", "p34"];

/// Canonical index of a feature by name (`"p14"` → 6).
pub fn feature_index(name: &str) -> Option<usize> {
    let name = name.trim();
    FEATURE_NAMES.iter().position(|n| *n == name).or_else(|| {
        // accept "p41" for "p14"
        let b = name.as_bytes();
        if b.len() == 3 && b[0] == b'p' {
            let swapped = format!("p{}{}", b[2] as char, b[1] as char);
            FEATURE_NAMES.iter().position(|n| *n == swapped)
        } else {
            None
        }
    })
}

/// Tetrahedral minimal qubit basis `Π_i = Σ_j M_ij σ_j`.
#[derive(Clone, Debug)]
pub struct MinimalBasis {
    pub projectors: [Matrix2; 4],
    pub transform: [[f64; 4]; 4],
    pub inverse_transform: [[f64; 4]; 4],
}

const SIGNS: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];

impl MinimalBasis {
    pub fn new() -> Self {
        let s = 1.0 / 3f64.sqrt();
        let mut transform = [[0.0; 4]; 4];
        let mut inverse_transform = [[0.0; 4]; 4];
        for i in 0..4 {
            transform[i][0] = 0.25;
            inverse_transform[0][i] = 1.0;
            for k in 0..3 {
                transform[i][k + 1] = 0.25 * s * SIGNS[i][k];
                inverse_transform[k + 1][i] = 3f64.sqrt() * SIGNS[i][k];
            }
        }
        let projectors = std::array::from_fn(|i| {
            let mut p = [[ZERO; 2]; 2];
            for (mu, sigma) in PAULIS.iter().enumerate() {
                for r in 0..2 {
                    for c in 0..2 {
                        p[r][c] += sigma[r][c] * transform[i][mu];
                    }
                }
            }
            p
        });
        let basis = Self {
            projectors,
            transform,
            inverse_transform,
        };
        let err = basis.inverse_error();
        assert!(err < 1e-14, "closed-form inverse off by {err:e}");
        basis
    }

    /// `max |M⁻¹·M − 1|`.
    pub fn inverse_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                let v: f64 = (0..4).map(|k| self.inverse_transform[i][k] * self.transform[k][j]).sum();
                worst = worst.max((v - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }
}

impl Default for MinimalBasis {
    fn default() -> Self {
        Self::new()
    }
}

/// The ten unique `p_ij` values with a presence mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; NUM_FEATURES],
    pub mask: [bool; NUM_FEATURES],
}

impl FeatureVector {
    pub fn full(values: [f64; NUM_FEATURES]) -> Self {
        Self {
            values,
            mask: [true; NUM_FEATURES],
        }
    }

    /// Keeps only `retained` (canonical indices); others become absent and zero.
    pub fn masked(&self, retained: &[usize]) -> Self {
        let mut out = Self {
            values: [0.0; NUM_FEATURES],
            mask: [false; NUM_FEATURES],
        };
        for &k in retained {
            out.values[k] = self.values[k];
            out.mask[k] = true;
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_FEATURES).filter(|&k| self.mask[k])
    }

    /// `p_ij` for zero-based basis indices, in either order.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let k = FEATURE_PAIRS.iter().position(|&p| p == (i, j))?;
        self.mask[k].then_some(self.values[k])
    }
}

type Matrix16 = [[C64; 16]; 16];

/// `S = 1 − 4|Ψ−⟩⟨Ψ−|`.
pub fn singlet_witness_operator() -> ComplexMatrix4 {
    let proj = ComplexMatrix4::outer(&singlet_vector());
    ComplexMatrix4::identity() - proj.scale(4.0)
}

/// `(A_a ⊗ B_a')·S_bb'` on the ordering `(a, b, a', b')`.
fn collective_operator(a: &Matrix2, a_prime: &Matrix2, s: &ComplexMatrix4) -> Box<Matrix16> {
    let mut op = Box::new([[ZERO; 16]; 16]);
    for row in 0..16 {
        let (ra, rb, rap, rbp) = (row >> 3 & 1, row >> 2 & 1, row >> 1 & 1, row & 1);
        for col in 0..16 {
            let (ca, cb, cap, cbp) = (col >> 3 & 1, col >> 2 & 1, col >> 1 & 1, col & 1);
            op[row][col] = a[ra][ca] * a_prime[rap][cap] * s.get(2 * rb + rbp, 2 * cb + cbp);
        }
    }
    op
}

/// Cached 16×16 measurement operators.
pub struct CollectiveSimulator {
    basis: MinimalBasis,
    pauli_ops: Vec<Box<Matrix16>>,
    feature_ops: Vec<Box<Matrix16>>,
}

impl CollectiveSimulator {
    pub fn new() -> Self {
        let basis = MinimalBasis::new();
        let s = singlet_witness_operator();
        let mut pauli_ops = Vec::with_capacity(9);
        for i in 1..4 {
            for j in 1..4 {
                pauli_ops.push(collective_operator(&PAULIS[i], &PAULIS[j], &s));
            }
        }
        let feature_ops = FEATURE_PAIRS
            .iter()
            .map(|&(i, j)| collective_operator(&basis.projectors[i], &basis.projectors[j], &s))
            .collect();
        Self {
            basis,
            pauli_ops,
            feature_ops,
        }
    }

    /// Process-wide shared instance.
    pub fn shared() -> &'static CollectiveSimulator {
        static SHARED: OnceLock<CollectiveSimulator> = OnceLock::new();
        SHARED.get_or_init(CollectiveSimulator::new)
    }

    pub fn basis(&self) -> &MinimalBasis {
        &self.basis
    }

    fn two_copies(rho: &DensityMatrix) -> Box<Matrix16> {
        let m = rho.matrix();
        let mut out = Box::new([[ZERO; 16]; 16]);
        for r in 0..16 {
            for c in 0..16 {
                out[r][c] = m.get(r >> 2, c >> 2) * m.get(r & 3, c & 3);
            }
        }
        out
    }

    fn expectation(state: &Matrix16, op: &Matrix16) -> f64 {
        // Tr(A·O) = Σ_ij A_ij O_ji
        let mut acc = ZERO;
        for i in 0..16 {
            for j in 0..16 {
                acc += state[i][j] * op[j][i];
            }
        }
        acc.re
    }

    /// `R_ij = Tr[(ρ ⊗ ρ) S_bb' (σ_i ⊗ σ_j)_aa']`, symmetrized.
    pub fn collective_r(&self, rho: &DensityMatrix) -> RealSym3 {
        let state = Self::two_copies(rho);
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = Self::expectation(&state, &self.pauli_ops[3 * i + j]);
            }
        }
        RealSym3::symmetrized(r)
    }

    /// All ten `p_ij`.
    pub fn features(&self, rho: &DensityMatrix) -> FeatureVector {
        let state = Self::two_copies(rho);
        let values = std::array::from_fn(|k| Self::expectation(&state, &self.feature_ops[k]));
        FeatureVector::full(values)
    }

    /// Correlation matrix from a complete feature vector:
    /// `G = M⁻¹·P·M⁻ᵀ`, lower-right 3×3 block.
    pub fn reconstruct_r(&self, f: &FeatureVector) -> Result<RealSym3> {
        if let Some(k) = (0..NUM_FEATURES).find(|&k| !f.mask[k]) {
            return Err(Error::MissingFeature { name: FEATURE_NAMES[k] });
        }
        let mut p = [[0.0; 4]; 4];
        for (k, &(i, j)) in FEATURE_PAIRS.iter().enumerate() {
            p[i][j] = f.values[k];
            p[j][i] = f.values[k];
        }
        let inv = &self.basis.inverse_transform;
        let mut left = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                left[i][j] = (0..4).map(|k| inv[i][k] * p[k][j]).sum();
            }
        }
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..4).map(|k| left[i + 1][k] * inv[j + 1][k]).sum();
            }
        }
        Ok(RealSym3::symmetrized(r))
    }
}

impl Default for CollectiveSimulator {
    fn default() -> Self {
        Self::new()
    }
}

pub fn collective_r(rho: &DensityMatrix) -> RealSym3 {
    CollectiveSimulator::shared().collective_r(rho)
}

pub fn features(rho: &DensityMatrix) -> FeatureVector {
    CollectiveSimulator::shared().features(rho)
}

pub fn reconstruct_r(f: &FeatureVector) -> Result<RealSym3> {
    CollectiveSimulator::shared().reconstruct_r(f)
}

/// Retained feature set for every vector length `n ∈ 1..=10`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionPlan {
    retained_sets: BTreeMap<usize, Vec<usize>>,
}

impl ReductionPlan {
    /// The optimal removal sequence: off-diagonal elements are dropped first,
    /// never two on the same row or column in a row (`p13`, `p24`, `p34`,
    /// `p12`, `p23`), then a collectibility-style selection below five.
    pub fn paper() -> Self {
        let idx = |name: &str| feature_index(name).expect("known feature");
        let mut sets = BTreeMap::new();
        let mut current: Vec<usize> = (0..NUM_FEATURES).collect();
        sets.insert(10, current.clone());
        for (n, removed) in [(9, "p13"), (8, "p24"), (7, "p34"), (6, "p12"), (5, "p23")] {
            current.retain(|&k| k != idx(removed));
            sets.insert(n, current.clone());
        }
        let small: [(usize, &[&str]); 4] = [
            (4, &["p14", "p11", "p44", "p33"]),
            (3, &["p14", "p11", "p44"]),
            (2, &["p14", "p23"]),
            (1, &["p22"]),
        ];
        for (n, names) in small {
            let mut set: Vec<usize> = names.iter().map(|s| idx(s)).collect();
            set.sort_unstable();
            sets.insert(n, set);
        }
        Self { retained_sets: sets }
    }

    /// Nested plan from a priority order: `retained(n)` is the first `n`
    /// entries of `priority` (canonical indices, most important first).
    pub fn from_priority(priority: &[usize]) -> Result<Self> {
        let mut seen = [false; NUM_FEATURES];
        if priority.len() != NUM_FEATURES {
            return Err(Error::Config(format!(
                "custom plan must list all {NUM_FEATURES} features, got {}",
                priority.len()
            )));
        }
        for &k in priority {
            if k >= NUM_FEATURES || std::mem::replace(&mut seen[k], true) {
                return Err(Error::Config(format!("invalid or repeated feature index {k}")));
            }
        }
        let sets = (1..=NUM_FEATURES)
            .map(|n| {
                let mut set = priority[..n].to_vec();
                set.sort_unstable();
                (n, set)
            })
            .collect();
        Ok(Self { retained_sets: sets })
    }

    /// Canonical indices retained at length `n`, ascending.
    pub fn retained(&self, n: usize) -> Option<&[usize]> {
        self.retained_sets.get(&n).map(Vec::as_slice)
    }

    pub fn lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.retained_sets.keys().rev().copied()
    }
}
