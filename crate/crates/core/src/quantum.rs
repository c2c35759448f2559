//! Two-qubit polarization state algebra.
//!
//! Every vector and matrix in this crate uses the fixed basis order
//! `(HH, HV, VH, VV)`: index `2 * a + b` where `a` is the polarization of the
//! first photon and `b` the polarization of the second (`H = 0`, `V = 1`).

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat4 = Matrix4<C64>;
pub type Vec4 = Vector4<C64>;
pub type Mat2 = Matrix2<C64>;
pub type Vec2 = Vector2<C64>;

pub const HH: usize = 0;
pub const HV: usize = 1;
pub const VH: usize = 2;
pub const VV: usize = 3;

/// Structural tolerance for density-matrix invariants.
pub const STRUCTURAL_TOL: f64 = 1e-9;
/// Hermiticity defect above which an eigendecomposition is refused.
pub const HERMITIAN_REJECT_TOL: f64 = 1e-6;

const JACOBI_OFF_TOL: f64 = 1e-12;
/// Relative eigenvalue floor used before taking square roots.
pub const EIG_FLOOR: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 64;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BellKind {
    PsiPlus,
    PsiMinus,
    PhiPlus,
    PhiMinus,
}

/// A two-photon polarization ket.
///
/// Normalized kets carry unit squared norm within [`STRUCTURAL_TOL`].
/// Post-selected intermediates may be built with [`PolarizationKet::unnormalized`],
/// which only requires squared norm `<= 1 + 1e-9`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationKet {
    amps: Vec4,
    normalized: bool,
}

impl PolarizationKet {
    pub fn new(amps: [C64; 4]) -> Result<Self> {
        let amps = Vec4::from(amps);
        let norm_sqr = amps.norm_squared();
        if (norm_sqr - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::NotNormalized { norm_sqr });
        }
        Ok(Self {
            amps,
            normalized: true,
        })
    }

    pub fn unnormalized(amps: [C64; 4]) -> Result<Self> {
        let amps = Vec4::from(amps);
        let norm_sqr = amps.norm_squared();
        if !norm_sqr.is_finite() || norm_sqr > 1.0 + STRUCTURAL_TOL {
            return Err(Error::NotNormalized { norm_sqr });
        }
        Ok(Self {
            amps,
            normalized: false,
        })
    }

    /// Rescales an arbitrary nonzero vector to unit norm.
    pub fn normalize(amps: [C64; 4]) -> Result<Self> {
        let v = Vec4::from(amps);
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::NotNormalized { norm_sqr: n * n });
        }
        Ok(Self {
            amps: v / c(n, 0.0),
            normalized: true,
        })
    }

    pub fn basis(index: usize) -> Self {
        let mut amps = Vec4::zeros();
        amps[index] = c(1.0, 0.0);
        Self {
            amps,
            normalized: true,
        }
    }

    /// Product ket `a ⊗ b` of two single-photon polarization kets.
    pub fn product(a: &Vec2, b: &Vec2) -> Result<Self> {
        Self::new([a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]])
    }

    pub fn amps(&self) -> &Vec4 {
        &self.amps
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.norm_squared()
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &PolarizationKet) -> C64 {
        self.amps.dotc(&other.amps)
    }
}

pub fn bell_state(kind: BellKind) -> PolarizationKet {
    let h = c(FRAC_1_SQRT_2, 0.0);
    let z = c(0.0, 0.0);
    let amps = match kind {
        BellKind::PsiPlus => [z, h, h, z],
        BellKind::PsiMinus => [z, h, -h, z],
        BellKind::PhiPlus => [h, z, z, h],
        BellKind::PhiMinus => [h, z, z, -h],
    };
    PolarizationKet {
        amps: Vec4::from(amps),
        normalized: true,
    }
}

/// `(|HV⟩ + e^{iθ}|VH⟩)/√2`
pub fn psi_theta(theta: f64) -> PolarizationKet {
    let h = FRAC_1_SQRT_2;
    let z = c(0.0, 0.0);
    PolarizationKet {
        amps: Vec4::from([z, c(h, 0.0), C64::from_polar(h, theta), z]),
        normalized: true,
    }
}

/// A 4×4 two-qubit operator used as a (possibly unnormalized) density matrix.
///
/// Construction does not enforce the density-matrix invariants; use
/// [`DensityMatrix::validate`] or [`validate_density`] to check them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(Mat4);

impl DensityMatrix {
    pub fn from_matrix(m: Mat4) -> Self {
        Self(m)
    }

    pub fn diagonal(d: [f64; 4]) -> Self {
        let mut m = Mat4::zeros();
        for (i, x) in d.into_iter().enumerate() {
            m[(i, i)] = c(x, 0.0);
        }
        Self(m)
    }

    pub fn maximally_mixed() -> Self {
        Self::diagonal([0.25; 4])
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    pub fn into_matrix(self) -> Mat4 {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// Returns `self / trace`.
    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        if !(tr.is_finite() && tr > 0.0) {
            return Err(Error::invalid(format!(
                "cannot normalize matrix with trace {tr}"
            )));
        }
        Ok(Self(self.0 / c(tr, 0.0)))
    }

    /// `(ρ + ρ†)/2`
    pub fn hermitian_part(&self) -> Self {
        Self((self.0 + self.0.adjoint()) * c(0.5, 0.0))
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (self.0 - self.0.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_density(self)
    }

    /// `U ρ U†`
    pub fn conjugate_by(&self, u: &Mat4) -> Self {
        Self(u * self.0 * u.adjoint())
    }

    /// Mixture `w·self + (1-w)·other` without renormalization.
    pub fn mix(&self, w: f64, other: &DensityMatrix) -> Self {
        Self(self.0 * c(w, 0.0) + other.0 * c(1.0 - w, 0.0))
    }
}

#[derive(Serialize, Deserialize)]
struct DensityMatrixJson {
    re: [[f64; 4]; 4],
    im: [[f64; 4]; 4],
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut re = [[0.0; 4]; 4];
        let mut im = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                re[i][j] = self.0[(i, j)].re;
                im[i][j] = self.0[(i, j)].im;
            }
        }
        DensityMatrixJson { re, im }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = DensityMatrixJson::deserialize(d)?;
        Ok(Self(Mat4::from_fn(|i, k| c(j.re[i][k], j.im[i][k]))))
    }
}

/// `|k⟩⟨k|`; rejects unnormalized kets.
pub fn ket_to_density(k: &PolarizationKet) -> Result<DensityMatrix> {
    if !k.normalized {
        return Err(Error::NotNormalized {
            norm_sqr: k.norm_sqr(),
        });
    }
    Ok(DensityMatrix(outer(k.amps(), k.amps())))
}

/// `|a⟩⟨b|`
pub fn outer(a: &Vec4, b: &Vec4) -> Mat4 {
    a * b.adjoint()
}

/// `⟨k|ρ|k⟩`
pub fn fidelity_to_ket(rho: &DensityMatrix, k: &PolarizationKet) -> f64 {
    k.amps.dotc(&(rho.0 * k.amps)).re
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn state_fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    let sqrt_rho = psd_sqrt(rho)?;
    let inner = DensityMatrix(sqrt_rho * sigma.0 * sqrt_rho).hermitian_part();
    let eig = hermitian_eig(&inner)?;
    let floor = eig.values[0] * EIG_FLOOR;
    let root_sum: f64 = eig
        .values
        .iter()
        .map(|&l| if l > floor { l.sqrt() } else { 0.0 })
        .sum();
    Ok(root_sum * root_sum)
}

/// Square root of the positive part of a Hermitian matrix.
///
/// Eigenvalues below `EIG_FLOOR` times the largest one are treated as zero so
/// rounding noise on a rank-deficient matrix is not amplified by the root.
pub fn psd_sqrt(rho: &DensityMatrix) -> Result<Mat4> {
    let eig = hermitian_eig(rho)?;
    let floor = eig.values[0] * EIG_FLOOR;
    Ok(eig.rebuild_with(|l| if l > floor { l.sqrt() } else { 0.0 }))
}

/// Eigendecomposition of a 4×4 Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianEig {
    /// Eigenvalues, descending.
    pub values: [f64; 4],
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: Mat4,
}

impl HermitianEig {
    pub fn vector(&self, i: usize) -> Vec4 {
        self.vectors.column(i).into_owned()
    }

    pub fn reconstruct(&self) -> Mat4 {
        self.rebuild_with(|l| l)
    }

    /// `V f(Λ) V†`
    pub fn rebuild_with(&self, f: impl Fn(f64) -> f64) -> Mat4 {
        let mut d = Mat4::zeros();
        for i in 0..4 {
            d[(i, i)] = c(f(self.values[i]), 0.0);
        }
        self.vectors * d * self.vectors.adjoint()
    }
}

/// Cyclic complex Jacobi eigensolver.
///
/// The input is symmetrized to its Hermitian part after checking that the
/// anti-Hermitian defect does not exceed [`HERMITIAN_REJECT_TOL`].
pub fn hermitian_eig(rho: &DensityMatrix) -> Result<HermitianEig> {
    let defect = rho.hermiticity_defect();
    if !(defect <= HERMITIAN_REJECT_TOL) {
        return Err(Error::NotHermitian { defect });
    }
    let mut a = rho.hermitian_part().0;
    let mut v = Mat4::identity();
    let scale = a
        .iter()
        .map(|z| z.norm_sqr())
        .sum::<f64>()
        .sqrt()
        .max(1e-300);

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= 1e-15 * scale {
            break;
        }
        let mut rotated = false;
        for p in 0..3 {
            for q in (p + 1)..4 {
                let apq = a[(p, q)];
                let g = apq.norm();
                if g <= 1e-18 * scale {
                    continue;
                }
                rotated = true;
                let phase = apq / g;
                let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * g);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                let mut u = Mat4::identity();
                u[(p, p)] = c(cs, 0.0);
                u[(p, q)] = c(sn, 0.0);
                u[(q, p)] = -phase.conj() * sn;
                u[(q, q)] = phase.conj() * cs;
                a = u.adjoint() * a * u;
                // clean the annihilated pair exactly
                a[(p, q)] = c(0.0, 0.0);
                a[(q, p)] = c(0.0, 0.0);
                v *= u;
            }
        }
        if !rotated {
            break;
        }
    }
    debug_assert!(off_diagonal_norm(&a) <= JACOBI_OFF_TOL * scale.max(1.0));

    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re));
    let values = order.map(|i| a[(i, i)].re);
    let vectors = Mat4::from_fn(|r, k| v[(r, order[k])]);
    Ok(HermitianEig { values, vectors })
}

fn off_diagonal_norm(a: &Mat4) -> f64 {
    let mut s = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Diagnostic report on the density-matrix invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    pub hermiticity_defect: f64,
    pub trace_defect: f64,
    pub min_eigenvalue: f64,
    pub hermitian_ok: bool,
    pub trace_ok: bool,
    pub positivity_ok: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.hermitian_ok && self.trace_ok && self.positivity_ok
    }
}

pub fn validate_density(rho: &DensityMatrix) -> ValidationReport {
    let hermiticity_defect = rho.hermiticity_defect();
    let trace_defect = (rho.0.trace() - c(1.0, 0.0)).norm();
    // The Hermitian part is always diagonalizable; skip the rejection gate.
    let min_eigenvalue = hermitian_eig(&rho.hermitian_part())
        .map(|e| e.values[3])
        .unwrap_or(f64::NAN);
    ValidationReport {
        hermiticity_defect,
        trace_defect,
        min_eigenvalue,
        hermitian_ok: hermiticity_defect <= STRUCTURAL_TOL,
        trace_ok: trace_defect <= STRUCTURAL_TOL,
        positivity_ok: min_eigenvalue >= -STRUCTURAL_TOL,
    }
}

/// Kronecker product of two single-qubit operators in the `(HH, HV, VH, VV)` order.
pub fn kron2(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|r, k| a[(r / 2, k / 2)] * b[(r % 2, k % 2)])
}

pub mod random {
    //! Seeded random states and unitaries for property tests and oracles.

    use super::*;

    fn gaussian_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    /// Haar-random pure two-qubit ket.
    pub fn ket<R: Rng + ?Sized>(rng: &mut R) -> PolarizationKet {
        let amps = [(); 4].map(|_| gaussian_c64(rng));
        PolarizationKet::normalize(amps).expect("gaussian vector is nonzero")
    }

    /// Full-rank Ginibre-distributed density matrix.
    pub fn density<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
        let g = Mat4::from_fn(|_, _| gaussian_c64(rng));
        DensityMatrix(g * g.adjoint())
            .normalized()
            .expect("ginibre product has positive trace")
    }

    /// Haar-random element of SU(2).
    pub fn su2<R: Rng + ?Sized>(rng: &mut R) -> Mat2 {
        let mut q = [0.0f64; 4];
        for x in &mut q {
            *x = rng.sample(StandardNormal);
        }
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let q = q.map(|x| x / n);
        su2_from_quaternion(&q)
    }

    /// Random local unitary `U ⊗ V`.
    pub fn local_unitary<R: Rng + ?Sized>(rng: &mut R) -> Mat4 {
        let a = su2(rng);
        let b = su2(rng);
        kron2(&a, &b)
    }
}

/// SU(2) element from a unit quaternion `(q0, q1, q2, q3)`.
pub fn su2_from_quaternion(q: &[f64; 4]) -> Mat2 {
    Mat2::new(c(q[0], q[3]), c(q[2], q[1]), c(-q[2], q[1]), c(q[0], -q[3]))
}
