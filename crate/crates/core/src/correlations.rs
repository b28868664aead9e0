//! Analytical correlation quantities and the five-class hierarchy.
//!
//! | class | condition                      |
//! |-------|--------------------------------|
//! | sep   | `N = 0`                        |
//! | ent   | `N > 0` and `FEF_w = 0`        |
//! | FEF   | `FEF_w > 0` and `S3 = 0`       |
//! | steer | `S3 > 0` and `B = 0`           |
//! | Bell  | `B > 0`                        |
//!
//! `N` comes from the spectrum of the partial transpose; the other three
//! only depend on the spectrum of `R = TᵀT`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::{hermitian_eigenvalues, partial_transpose, sym3_spectrum, ComplexMatrix4, RealSym3, PAULIS};
use crate::states::DensityMatrix;

/// Quantities at or below this count as zero when labelling.
pub const CLASS_TOLERANCE: f64 = 1e-10;

pub const NUM_CLASSES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ClassLabel {
    Sep = 0,
    Ent = 1,
    Fef = 2,
    Steer = 3,
    Bell = 4,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Sep,
        ClassLabel::Ent,
        ClassLabel::Fef,
        ClassLabel::Steer,
        ClassLabel::Bell,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Sep => "sep",
            ClassLabel::Ent => "ent",
            ClassLabel::Fef => "FEF",
            ClassLabel::Steer => "steer",
            ClassLabel::Bell => "Bell",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Negativity, FEF witness, three-setting steering and Bell quantifiers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantities {
    pub negativity: f64,
    pub fef_witness: f64,
    pub steering: f64,
    pub bell: f64,
}

impl Quantities {
    pub fn to_array(self) -> [f64; 4] {
        [self.negativity, self.fef_witness, self.steering, self.bell]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            negativity: a[0],
            fef_witness: a[1],
            steering: a[2],
            bell: a[3],
        }
    }
}

/// Quantities of one state together with its class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantRecord {
    pub quantities: Quantities,
    pub label: ClassLabel,
}

/// `T_ij = Tr[ρ (σ_i ⊗ σ_j)]`, `i, j ∈ {x, y, z}`.
pub fn t_matrix(rho: &DensityMatrix) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in t.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let op = ComplexMatrix4::kron(&PAULIS[i + 1], &PAULIS[j + 1]);
            *v = rho.matrix().trace_product(&op).re;
        }
    }
    t
}

/// `R = TᵀT`.
pub fn correlation_matrix(rho: &DensityMatrix) -> RealSym3 {
    RealSym3::gram(&t_matrix(rho))
}

/// `N = Σ (|λ_i| − λ_i)` over the spectrum of the partial transpose.
pub fn negativity(rho: &DensityMatrix) -> Result<f64> {
    let eig = hermitian_eigenvalues(&partial_transpose(rho.matrix()))?;
    Ok(eig.iter().map(|l| l.abs() - l).sum())
}

/// FEF witness, steering and Bell quantifiers from a correlation matrix.
/// Returns `(FEF_w, S3, B)`.
pub fn quantities_from_correlation(r: &RealSym3) -> Result<(f64, f64, f64)> {
    let spectrum = sym3_spectrum(r)?;
    let trace: f64 = spectrum.eigenvalues.iter().sum();
    let fef = 0.5 * (spectrum.trace_sqrt - 1.0).max(0.0);
    let steering = (0.5 * (trace - 1.0).max(0.0)).sqrt();
    let bell = (trace - spectrum.eigenvalues[0] - 1.0).max(0.0).sqrt();
    Ok((fef, steering, bell))
}

pub fn quantities(rho: &DensityMatrix) -> Result<Quantities> {
    let negativity = negativity(rho)?;
    let (fef_witness, steering, bell) = quantities_from_correlation(&correlation_matrix(rho))?;
    Ok(Quantities {
        negativity,
        fef_witness,
        steering,
        bell,
    })
}

/// Strongest class whose quantifier exceeds [`CLASS_TOLERANCE`].
pub fn classify(q: &Quantities) -> ClassLabel {
    if q.bell > CLASS_TOLERANCE {
        ClassLabel::Bell
    } else if q.steering > CLASS_TOLERANCE {
        ClassLabel::Steer
    } else if q.fef_witness > CLASS_TOLERANCE {
        ClassLabel::Fef
    } else if q.negativity > CLASS_TOLERANCE {
        ClassLabel::Ent
    } else {
        ClassLabel::Sep
    }
}

pub fn label_state(rho: &DensityMatrix) -> Result<QuantRecord> {
    let quantities = quantities(rho)?;
    Ok(QuantRecord {
        label: classify(&quantities),
        quantities,
    })
}

impl TryFrom<u8> for ClassLabel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        ClassLabel::from_index(v as usize).ok_or_else(|| Error::Corrupt(format!("invalid class label byte {v}")))
    }
}
