//! Random two-qubit density matrices.
//!
//! Two ensembles are provided:
//!
//! - [`StateMeasure::HilbertSchmidt`]: `ρ = GG†/Tr(GG†)` with `G` a 4×4
//!   Ginibre matrix. Unitarily invariant, mean purity `8/17`.
//! - [`StateMeasure::HaarStickBreaking`]: `ρ = U diag(p) U†` with `U` Haar
//!   distributed and the spectrum `p` drawn by sequential stick breaking
//!   (`p1 = u1`, `p2 = (1 − p1)·u2`, `p3 = (1 − p1 − p2)·u3`, `p4` the rest).
//!   This ensemble is much richer in strongly correlated states; its
//!   least-populated correlation class is the steerable one and an equalized
//!   subset keeps about a third of the raw states. It is the default for
//!   dataset generation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::{hermitian_eigenvalues, ComplexMatrix4, C64, ONE, ZERO};

/// Tolerances a [`DensityMatrix`] is validated against.
pub const STATE_TOLERANCE: f64 = 1e-12;

/// Seed of one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateSeed {
    pub seed: u64,
    pub stream_index: u64,
}

impl StateSeed {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        Self { seed, stream_index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateMeasure {
    HilbertSchmidt,
    #[default]
    HaarStickBreaking,
}

impl StateMeasure {
    pub fn name(self) -> &'static str {
        match self {
            StateMeasure::HilbertSchmidt => "hilbert-schmidt",
            StateMeasure::HaarStickBreaking => "haar-stick-breaking",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "hilbert-schmidt" | "hs" => Some(StateMeasure::HilbertSchmidt),
            "haar-stick-breaking" | "haar" => Some(StateMeasure::HaarStickBreaking),
            _ => None,
        }
    }
}

/// A two-qubit state: Hermitian, positive semidefinite, unit trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(ComplexMatrix4);

impl DensityMatrix {
    pub fn new(m: ComplexMatrix4) -> Result<Self> {
        let dev = m.hermitian_deviation();
        if dev > STATE_TOLERANCE {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {dev:e})")));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > STATE_TOLERANCE {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let min = hermitian_eigenvalues(&m)?[0];
        if min < -STATE_TOLERANCE {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix already known to be a valid state.
    pub fn new_unchecked(m: ComplexMatrix4) -> Self {
        Self(m)
    }

    pub fn from_pure(psi: &[C64; 4]) -> Self {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        Self(ComplexMatrix4::outer(psi).scale(1.0 / norm))
    }

    pub fn maximally_mixed() -> Self {
        Self(ComplexMatrix4::identity().scale(0.25))
    }

    /// `|Ψ−⟩⟨Ψ−|` with `|Ψ−⟩ = (|01⟩ − |10⟩)/√2`.
    pub fn singlet() -> Self {
        Self::from_pure(&singlet_vector())
    }

    /// `p·|Ψ−⟩⟨Ψ−| + (1 − p)·1/4`.
    pub fn werner(p: f64) -> Self {
        let s = Self::singlet().0.scale(p);
        let mixed = ComplexMatrix4::identity().scale(0.25 * (1.0 - p));
        Self(s + mixed)
    }

    /// Computational-basis product state `|k⟩⟨k|`, `k ∈ 0..4`.
    pub fn basis(k: usize) -> Self {
        let mut v = [ZERO; 4];
        v[k] = ONE;
        Self::from_pure(&v)
    }

    #[inline]
    pub fn matrix(&self) -> &ComplexMatrix4 {
        &self.0
    }

    pub fn purity(&self) -> f64 {
        self.0.trace_product(&self.0).re
    }
}

/// `(|01⟩ − |10⟩)/√2`.
pub fn singlet_vector() -> [C64; 4] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [ZERO, C64::new(h, 0.0), C64::new(-h, 0.0), ZERO]
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn ginibre<R: Rng + ?Sized>(rng: &mut R) -> ComplexMatrix4 {
    ComplexMatrix4::from_fn(|_, _| complex_normal(rng))
}

/// Builds `ρ` from the upper triangle of `f`, mirroring the lower triangle and
/// dividing by the trace, so the result is Hermitian to the last bit.
fn hermitian_normalized(f: impl Fn(usize, usize) -> C64) -> Option<DensityMatrix> {
    let mut m = ComplexMatrix4::zeros();
    let mut trace = 0.0;
    for i in 0..4 {
        let d = f(i, i).re;
        m.0[i][i] = C64::new(d, 0.0);
        trace += d;
        for j in (i + 1)..4 {
            let z = f(i, j);
            m.0[i][j] = z;
            m.0[j][i] = z.conj();
        }
    }
    if !(trace > 0.0) || !trace.is_finite() {
        return None;
    }
    Some(DensityMatrix(m.scale(1.0 / trace)))
}

/// Hilbert–Schmidt random state (Ginibre construction).
pub fn random_state<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
    loop {
        let g = ginibre(rng);
        let rho = hermitian_normalized(|i, j| (0..4).map(|k| g.0[i][k] * g.0[j][k].conj()).sum());
        if let Some(rho) = rho {
            return rho;
        }
    }
}

/// Haar-random 4×4 unitary: Gram–Schmidt on the columns of a Ginibre matrix.
pub fn haar_unitary<R: Rng + ?Sized>(rng: &mut R) -> ComplexMatrix4 {
    'retry: loop {
        let g = ginibre(rng);
        let mut cols = [[ZERO; 4]; 4];
        for j in 0..4 {
            let mut v: [C64; 4] = std::array::from_fn(|i| g.0[i][j]);
            for prev in cols.iter().take(j) {
                let overlap: C64 = (0..4).map(|i| prev[i].conj() * v[i]).sum();
                for i in 0..4 {
                    v[i] -= overlap * prev[i];
                }
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if !(norm > 1e-12) {
                continue 'retry;
            }
            cols[j] = v.map(|z| z / norm);
        }
        return ComplexMatrix4::from_fn(|i, j| cols[j][i]);
    }
}

/// Spectrum drawn by sequential stick breaking. Ordering is irrelevant once
/// rotated by a Haar unitary.
pub fn stick_breaking_spectrum<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    let mut p = [0.0; 4];
    let mut rest = 1.0;
    for v in p.iter_mut().take(3) {
        *v = rest * rng.gen::<f64>();
        rest -= *v;
    }
    p[3] = rest.max(0.0);
    p
}

/// `U diag(p) U†` for Haar `U` and stick-breaking `p`.
pub fn random_state_stick_breaking<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
    loop {
        let u = haar_unitary(rng);
        let p = stick_breaking_spectrum(rng);
        let rho = hermitian_normalized(|i, j| (0..4).map(|k| u.0[i][k] * u.0[j][k].conj() * p[k]).sum());
        if let Some(rho) = rho {
            return rho;
        }
    }
}

pub fn random_state_with<R: Rng + ?Sized>(measure: StateMeasure, rng: &mut R) -> DensityMatrix {
    match measure {
        StateMeasure::HilbertSchmidt => random_state(rng),
        StateMeasure::HaarStickBreaking => random_state_stick_breaking(rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_valid(rho: &DensityMatrix) {
        let m = rho.matrix();
        assert!(m.hermitian_deviation() < 1e-14);
        assert!((m.trace() - ONE).norm() < 1e-14);
        assert!(hermitian_eigenvalues(m).unwrap()[0] > -1e-12);
    }

    #[test]
    fn generated_states_are_valid() {
        let mut rng = StateSeed::new(1, 0).rng();
        for _ in 0..2000 {
            check_valid(&random_state(&mut rng));
            check_valid(&random_state_stick_breaking(&mut rng));
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<_> = {
            let mut rng = StateSeed::new(9, 3).rng();
            (0..5).map(|_| random_state(&mut rng)).collect()
        };
        let b: Vec<_> = {
            let mut rng = StateSeed::new(9, 3).rng();
            (0..5).map(|_| random_state(&mut rng)).collect()
        };
        let c: Vec<_> = {
            let mut rng = StateSeed::new(9, 4).rng();
            (0..5).map(|_| random_state(&mut rng)).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = StateSeed::new(2, 0).rng();
        for _ in 0..100 {
            let u = haar_unitary(&mut rng);
            assert!((u * u.adjoint()).max_abs_diff(&ComplexMatrix4::identity()) < 1e-13);
        }
    }

    #[test]
    fn hilbert_schmidt_mean_is_maximally_mixed() {
        // entrywise mean within 5 standard errors of 1/4 · identity
        let count = 100_000;
        let mut rng = StateSeed::new(7, 0).rng();
        let mut sum = [[C64::new(0.0, 0.0); 4]; 4];
        let mut sum_sq = [[0.0f64; 4]; 4];
        for _ in 0..count {
            let rho = random_state(&mut rng);
            for i in 0..4 {
                for j in 0..4 {
                    let z = rho.matrix().get(i, j);
                    sum[i][j] += z;
                    sum_sq[i][j] += z.norm_sqr();
                }
            }
        }
        let n = count as f64;
        for i in 0..4 {
            for j in 0..4 {
                let mean = sum[i][j] / n;
                let target = if i == j { 0.25 } else { 0.0 };
                let var = sum_sq[i][j] / n - mean.norm_sqr();
                let stderr = (var / n).sqrt();
                assert!((mean - C64::new(target, 0.0)).norm() < 5.0 * stderr + 1e-12, "({i},{j}) {mean}");
            }
        }
    }

    #[test]
    fn hilbert_schmidt_mean_purity() {
        // E[Tr ρ²] = 2d/(d² + 1) = 8/17 for d = 4
        let count = 100_000;
        let mut rng = StateSeed::new(8, 0).rng();
        let mean = (0..count).map(|_| random_state(&mut rng).purity()).sum::<f64>() / count as f64;
        assert!((mean - 8.0 / 17.0).abs() < 0.01, "mean purity {mean}");
    }

    #[test]
    fn stick_breaking_spectrum_sums_to_one() {
        let mut rng = StateSeed::new(4, 0).rng();
        for _ in 0..1000 {
            let p = stick_breaking_spectrum(&mut rng);
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        assert!(DensityMatrix::new(ComplexMatrix4::identity()).is_err());
        assert!(DensityMatrix::new(ComplexMatrix4::diagonal([1.5, -0.5, 0.0, 0.0])).is_err());
        assert!(DensityMatrix::new(*DensityMatrix::werner(0.3).matrix()).is_ok());
    }
}
