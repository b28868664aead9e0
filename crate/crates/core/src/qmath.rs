//! Fixed-size complex and real linear algebra for two-qubit states.
//!
//! Everything here works on stack-allocated 4×4 complex and 3×3 real
//! matrices. Hermitian spectra come from cyclic Jacobi rotations on the
//! 8×8 real symmetric embedding `[[A, -B], [B, A]]` of `A + iB`, which
//! carries every eigenvalue of the complex matrix twice.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Tolerance for the Hermiticity precondition of [`hermitian_eigenvalues`].
pub const HERMITIAN_TOLERANCE: f64 = 1e-12;

/// Eigenvalues of a correlation matrix below this are floating-point noise
/// and are clamped to zero.
pub const PSD_CLAMP: f64 = 1e-10;

/// Eigenvalues of a correlation matrix below this mean the matrix is corrupt.
pub const PSD_FAILURE: f64 = 1e-6;

const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

pub type Matrix2 = [[C64; 2]; 2];

pub const PAULI_X: Matrix2 = [[ZERO, ONE], [ONE, ZERO]];
pub const PAULI_Y: Matrix2 = [[ZERO, C64::new(0.0, -1.0)], [I, ZERO]];
pub const PAULI_Z: Matrix2 = [[ONE, ZERO], [ZERO, C64::new(-1.0, 0.0)]];
pub const IDENTITY2: Matrix2 = [[ONE, ZERO], [ZERO, ONE]];

/// σ_0 = 1, σ_1 = X, σ_2 = Y, σ_3 = Z.
pub const PAULIS: [Matrix2; 4] = [IDENTITY2, PAULI_X, PAULI_Y, PAULI_Z];

/// Dense 4×4 complex matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexMatrix4(pub [[C64; 4]; 4]);

impl Default for ComplexMatrix4 {
    fn default() -> Self {
        Self::zeros()
    }
}

impl ComplexMatrix4 {
    pub const fn zeros() -> Self {
        Self([[ZERO; 4]; 4])
    }

    pub fn identity() -> Self {
        Self::from_fn(|i, j| if i == j { ONE } else { ZERO })
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = f(i, j);
            }
        }
        m
    }

    pub fn diagonal(d: [f64; 4]) -> Self {
        Self::from_fn(|i, j| if i == j { C64::new(d[i], 0.0) } else { ZERO })
    }

    /// `|v⟩⟨v|`.
    pub fn outer(v: &[C64; 4]) -> Self {
        Self::from_fn(|i, j| v[i] * v[j].conj())
    }

    /// Kronecker product `a ⊗ b` with `a` acting on the first qubit.
    pub fn kron(a: &Matrix2, b: &Matrix2) -> Self {
        Self::from_fn(|r, c| a[r / 2][c / 2] * b[r % 2][c % 2])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[i][j]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i].conj())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    pub fn trace(&self) -> C64 {
        (0..4).map(|i| self.0[i][i]).sum()
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let mut acc = ZERO;
        for i in 0..4 {
            for k in 0..4 {
                acc += self.0[i][k] * other.0[k][i];
            }
        }
        acc
    }

    /// Largest entrywise deviation `|m_ij − conj(m_ji)|`.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in i..4 {
                worst = worst.max((self.0[i][j] - self.0[j][i].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).norm());
            }
        }
        worst
    }
}

impl Mul for ComplexMatrix4 {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| (0..4).map(|k| self.0[i][k] * rhs.0[k][j]).sum())
    }
}

impl Add for ComplexMatrix4 {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] + rhs.0[i][j])
    }
}

impl Sub for ComplexMatrix4 {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] - rhs.0[i][j])
    }
}

/// Real symmetric 3×3 matrix. Symmetry is exact: `entries[i][j] == entries[j][i]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RealSym3([[f64; 3]; 3]);

impl RealSym3 {
    pub fn new(entries: [[f64; 3]; 3]) -> Result<Self> {
        for i in 0..3 {
            for j in (i + 1)..3 {
                if entries[i][j] != entries[j][i] {
                    return Err(Error::NotSymmetric {
                        deviation: (entries[i][j] - entries[j][i]).abs(),
                    });
                }
            }
        }
        Ok(Self(entries))
    }

    /// `(m + mᵀ) / 2`, for matrices that are symmetric up to rounding.
    pub fn symmetrized(m: [[f64; 3]; 3]) -> Self {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            out[i][i] = m[i][i];
            for j in (i + 1)..3 {
                let v = 0.5 * (m[i][j] + m[j][i]);
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        Self(out)
    }

    /// `tᵀ · t`.
    pub fn gram(t: &[[f64; 3]; 3]) -> Self {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                let v = (0..3).map(|k| t[k][i] * t[k][j]).sum();
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        Self(out)
    }

    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.0;
        out.iter_mut().flatten().for_each(|v| *v *= s);
        Self(out)
    }

    pub fn entries(&self) -> &[[f64; 3]; 3] {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }
}

/// Spectral data of a PSD 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sym3Spectrum {
    /// Ascending, clamped at zero.
    pub eigenvalues: [f64; 3],
    /// `Σ √λ_i`, i.e. `Tr √R`.
    pub trace_sqrt: f64,
}

/// Cyclic Jacobi eigenvalue iteration for a small real symmetric matrix.
/// Returns eigenvalues in ascending order.
pub(crate) fn jacobi_eigenvalues<const N: usize>(mut a: [[f64; N]; N]) -> [f64; N] {
    let scale = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let target = JACOBI_TOLERANCE * scale.max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= target {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                a[p][q] = 0.0;
                a[q][p] = 0.0;
            }
        }
    }
    let mut eig = [0.0; N];
    for (i, e) in eig.iter_mut().enumerate() {
        *e = a[i][i];
    }
    eig.sort_by(f64::total_cmp);
    eig
}

fn off_diagonal_norm<const N: usize>(a: &[[f64; N]; N]) -> f64 {
    let mut s = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                s += v * v;
            }
        }
    }
    s.sqrt()
}

/// All four eigenvalues of a Hermitian 4×4 matrix, ascending.
pub fn hermitian_eigenvalues(m: &ComplexMatrix4) -> Result<[f64; 4]> {
    let deviation = m.hermitian_deviation();
    if !(deviation <= HERMITIAN_TOLERANCE) {
        return Err(Error::NotHermitian { deviation });
    }
    let mut embedded = [[0.0f64; 8]; 8];
    for i in 0..4 {
        for j in 0..4 {
            // average with the conjugate transpose so the embedding is exactly symmetric
            let z = 0.5 * (m.0[i][j] + m.0[j][i].conj());
            embedded[i][j] = z.re;
            embedded[i + 4][j + 4] = z.re;
            embedded[i][j + 4] = -z.im;
            embedded[i + 4][j] = z.im;
        }
    }
    let doubled = jacobi_eigenvalues(embedded);
    let mut eig = [0.0; 4];
    for (k, e) in eig.iter_mut().enumerate() {
        *e = 0.5 * (doubled[2 * k] + doubled[2 * k + 1]);
    }
    Ok(eig)
}

/// Transpose of the second qubit's index pair: `(2i+j, 2k+l) ↦ (2i+l, 2k+j)`.
pub fn partial_transpose(rho: &ComplexMatrix4) -> ComplexMatrix4 {
    let mut out = ComplexMatrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out.0[2 * i + l][2 * k + j] = rho.0[2 * i + j][2 * k + l];
                }
            }
        }
    }
    out
}

/// Eigenvalues and `Tr √r` of a PSD 3×3 matrix.
pub fn sym3_spectrum(r: &RealSym3) -> Result<Sym3Spectrum> {
    let raw = jacobi_eigenvalues(r.0);
    if raw[0] < -PSD_FAILURE {
        return Err(Error::NumericalDegeneracy {
            eigenvalue: raw[0],
        });
    }
    let eigenvalues = raw.map(|e| e.max(0.0));
    let trace_sqrt = eigenvalues.iter().map(|e| e.sqrt()).sum();
    Ok(Sym3Spectrum {
        eigenvalues,
        trace_sqrt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(rng: &mut impl Rng) -> ComplexMatrix4 {
        let g = ComplexMatrix4::from_fn(|_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        (g + g.adjoint()).scale(0.5)
    }

    fn singlet_projector() -> ComplexMatrix4 {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        ComplexMatrix4::outer(&[ZERO, C64::new(h, 0.0), C64::new(-h, 0.0), ZERO])
    }

    /// Real roots of the characteristic quartic via Durand–Kerner on the
    /// coefficients from Newton's identities. Independent of Jacobi.
    fn charpoly_roots(m: &ComplexMatrix4) -> [f64; 4] {
        let p1 = m.trace().re;
        let m2 = *m * *m;
        let m3 = m2 * *m;
        let m4 = m3 * *m;
        let (p2, p3, p4) = (m2.trace().re, m3.trace().re, m4.trace().re);
        let e1 = p1;
        let e2 = (e1 * p1 - p2) / 2.0;
        let e3 = (e2 * p1 - e1 * p2 + p3) / 3.0;
        let e4 = (e3 * p1 - e2 * p2 + e1 * p3 - p4) / 4.0;
        let poly = |x: C64| x.powu(4) - x.powu(3) * e1 + x * x * e2 - x * e3 + e4;
        let mut roots = [C64::new(0.4, 0.9); 4];
        for k in 1..4 {
            roots[k] = roots[k - 1] * C64::new(0.4, 0.9);
        }
        for _ in 0..500 {
            for i in 0..4 {
                let mut denom = ONE;
                for j in 0..4 {
                    if i != j {
                        denom *= roots[i] - roots[j];
                    }
                }
                roots[i] -= poly(roots[i]) / denom;
            }
        }
        // polish each root with Newton steps on the real axis
        let dpoly = |x: f64| 4.0 * x.powi(3) - 3.0 * e1 * x * x + 2.0 * e2 * x - e3;
        let mut out = roots.map(|r| r.re);
        for r in out.iter_mut() {
            for _ in 0..5 {
                let d = dpoly(*r);
                if d.abs() > 1e-300 {
                    *r -= poly(C64::new(*r, 0.0)).re / d;
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// Trigonometric closed form for symmetric 3×3 eigenvalues.
    fn closed_form_sym3(a: &[[f64; 3]; 3]) -> [f64; 3] {
        let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
        let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        if p == 0.0 {
            return [q; 3];
        }
        let mut b = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i][j] = (a[i][j] - if i == j { q } else { 0.0 }) / p;
            }
        }
        let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let mut e = [e1, 3.0 * q - e1 - e3, e3];
        e.sort_by(f64::total_cmp);
        e
    }

    #[test]
    fn diagonal_spectrum() {
        let eig = hermitian_eigenvalues(&ComplexMatrix4::diagonal([0.4, 0.1, 0.3, 0.2])).unwrap();
        assert_eq!(eig, [0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn singlet_partial_transpose_spectrum() {
        let eig = hermitian_eigenvalues(&partial_transpose(&singlet_projector())).unwrap();
        let expected = [-0.5, 0.5, 0.5, 0.5];
        for (a, b) in eig.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{eig:?}");
        }
    }

    #[test]
    fn matches_characteristic_polynomial_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_hermitian(&mut rng);
            let eig = hermitian_eigenvalues(&m).unwrap();
            let oracle = charpoly_roots(&m);
            for (a, b) in eig.iter().zip(oracle) {
                assert!((a - b).abs() < 1e-8, "{eig:?} vs {oracle:?}");
            }
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = ComplexMatrix4::identity();
        m.0[0][1] = C64::new(1e-6, 0.0);
        assert!(matches!(hermitian_eigenvalues(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn partial_transpose_fixed_points() {
        let mixed = ComplexMatrix4::identity().scale(0.25);
        assert_eq!(partial_transpose(&mixed), mixed);
        let mut v = [ZERO; 4];
        v[1] = ONE;
        let product = ComplexMatrix4::outer(&v);
        assert_eq!(partial_transpose(&product), product);
    }

    #[test]
    fn partial_transpose_is_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ComplexMatrix4::from_fn(|_, _| C64::new(rng.gen(), rng.gen()));
        assert_eq!(partial_transpose(&partial_transpose(&m)), m);
    }

    #[test]
    fn sym3_known_spectra() {
        let s = sym3_spectrum(&RealSym3::identity()).unwrap();
        assert_eq!(s.eigenvalues, [1.0; 3]);
        assert_eq!(s.trace_sqrt, 3.0);

        let werner = sym3_spectrum(&RealSym3::identity().scaled(0.25)).unwrap();
        assert!((werner.trace_sqrt - 1.5).abs() < 1e-15);

        let zero = sym3_spectrum(&RealSym3::default()).unwrap();
        assert_eq!(zero.eigenvalues, [0.0; 3]);
        assert_eq!(zero.trace_sqrt, 0.0);
    }

    #[test]
    fn sym3_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let t: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
            let r = RealSym3::gram(&t);
            let s = sym3_spectrum(&r).unwrap();
            let oracle = closed_form_sym3(r.entries()).map(|e| e.max(0.0));
            for (a, b) in s.eigenvalues.iter().zip(oracle) {
                assert!((a - b).abs() < 1e-12, "{:?} vs {oracle:?}", s.eigenvalues);
            }
        }
    }

    #[test]
    fn sym3_clamps_and_rejects_negative_eigenvalues() {
        let tiny = RealSym3::new([[-1e-9, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let s = sym3_spectrum(&tiny).unwrap();
        assert_eq!(s.eigenvalues[0], 0.0);
        let bad = RealSym3::new([[-1e-3, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(sym3_spectrum(&bad), Err(Error::NumericalDegeneracy { .. })));
    }

    #[test]
    fn real_sym3_requires_exact_symmetry() {
        assert!(RealSym3::new([[1.0, 0.1, 0.0], [0.1 + 1e-15, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn hermitian() -> impl Strategy<Value = ComplexMatrix4> {
            proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16).prop_map(|v| {
                let g = ComplexMatrix4::from_fn(|i, j| C64::new(v[4 * i + j].0, v[4 * i + j].1));
                (g + g.adjoint()).scale(0.5)
            })
        }

        proptest! {
            #[test]
            fn spectrum_preserves_trace_invariants(m in hermitian()) {
                let eig = hermitian_eigenvalues(&m).unwrap();
                let sum: f64 = eig.iter().sum();
                let sum_sq: f64 = eig.iter().map(|e| e * e).sum();
                prop_assert!((sum - m.trace().re).abs() < 1e-10);
                prop_assert!((sum_sq - (m * m).trace().re).abs() < 1e-10);
            }

            #[test]
            fn partial_transpose_involution_bitwise(m in hermitian()) {
                prop_assert_eq!(partial_transpose(&partial_transpose(&m)), m);
            }

            #[test]
            fn trace_sqrt_bounded(t in proptest::array::uniform3(proptest::array::uniform3(-1.0f64..1.0))) {
                let r = RealSym3::gram(&t);
                let s = sym3_spectrum(&r).unwrap();
                prop_assert!(s.trace_sqrt <= (3.0 * r.trace()).sqrt() + 1e-12);
                prop_assert!(s.trace_sqrt * s.trace_sqrt >= r.trace() - 1e-12);
            }
        }
    }
}
