//! Entanglement quantifiers: Wootters concurrence, fully entangled fraction,
//! survivor-phase fit, purity and the `F_e > 1/2` witness.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::quantum::{
    bell_state, c, hermitian_eig, kron2, random, su2_from_quaternion, BellKind, DensityMatrix,
    Mat2, Mat4, PolarizationKet, Vec4, EIG_FLOOR, HV, VH,
};

/// Metrics within this distance of their admissible range are clipped;
/// anything further out is reported as an error.
pub const RANGE_TOL: f64 = 1e-9;

fn clip(quantity: &'static str, value: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(value >= lo - RANGE_TOL && value <= hi + RANGE_TOL) {
        return Err(Error::OutOfRange { quantity, value });
    }
    Ok(value.clamp(lo, hi))
}

/// `σ_y ⊗ σ_y` in the `(HH, HV, VH, VV)` basis.
pub fn sigma_yy() -> Mat4 {
    let mut y = Mat4::zeros();
    y[(0, 3)] = c(-1.0, 0.0);
    y[(1, 2)] = c(1.0, 0.0);
    y[(2, 1)] = c(1.0, 0.0);
    y[(3, 0)] = c(-1.0, 0.0);
    y
}

/// `ρ̃ = (σ_y ⊗ σ_y) ρ* (σ_y ⊗ σ_y)`
pub fn spin_flip(rho: &DensityMatrix) -> DensityMatrix {
    let y = sigma_yy();
    DensityMatrix::from_matrix(y * rho.matrix().conjugate() * y)
}

/// Wootters concurrence `max(0, λ₁ - λ₂ - λ₃ - λ₄)`.
///
/// The `λᵢ` (square roots of the eigenvalues of `ρ ρ̃`) are obtained as the
/// singular values of `Wᵀ (σ_y⊗σ_y) W` with `ρ = W W†`, which avoids taking
/// square roots of rounding-level eigenvalues.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    let lambdas = spin_flip_roots(rho)?;
    let mut value = (lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0);
    // residue of an exact cancellation
    if value <= 16.0 * f64::EPSILON * lambdas[0] {
        value = 0.0;
    }
    clip("concurrence", value, 0.0, 1.0)
}

/// Descending square roots of the eigenvalues of `ρ ρ̃`.
pub fn spin_flip_roots(rho: &DensityMatrix) -> Result<[f64; 4]> {
    let eig = hermitian_eig(rho)?;
    let floor = eig.values[0].max(0.0) * EIG_FLOOR;
    let mut w = eig.vectors;
    for (k, &l) in eig.values.iter().enumerate() {
        let s = if l > floor { l.sqrt() } else { 0.0 };
        for r in 0..4 {
            w[(r, k)] *= s;
        }
    }
    let tau = w.transpose() * sigma_yy() * w;
    let sv = tau.singular_values();
    let mut lambdas = [sv[0], sv[1], sv[2], sv[3]];
    lambdas.sort_by(|a, b| b.total_cmp(a));
    Ok(lambdas)
}

/// Pure-state concurrence `|⟨k|σ_y⊗σ_y|k*⟩| = 2|k_HH k_VV - k_HV k_VH|`.
pub fn concurrence_pure_oracle(k: &PolarizationKet) -> f64 {
    let a = k.amps();
    2.0 * (a[0] * a[3] - a[1] * a[2]).norm()
}

/// Magic basis `{Φ⁺, iΦ⁻, iΨ⁺, Ψ⁻}` as matrix columns.
pub fn magic_basis() -> Mat4 {
    let i = c(0.0, 1.0);
    let cols = [
        *bell_state(BellKind::PhiPlus).amps(),
        bell_state(BellKind::PhiMinus).amps() * i,
        bell_state(BellKind::PsiPlus).amps() * i,
        *bell_state(BellKind::PsiMinus).amps(),
    ];
    Mat4::from_columns(&cols)
}

fn unscaled_magic_basis() -> Mat4 {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    let cols = [
        Vec4::new(o, z, z, o),
        Vec4::new(i, z, z, -i),
        Vec4::new(z, i, i, z),
        Vec4::new(z, o, -o, z),
    ];
    Mat4::from_columns(&cols)
}

/// Fully entangled fraction: the largest eigenvalue of `Re(Q† ρ Q)` in the magic basis.
///
/// Maximally entangled states are exactly the real unit vectors (up to a
/// global phase) in that basis, so the maximum overlap is a real symmetric
/// eigenvalue problem.
pub fn entanglement_fidelity(rho: &DensityMatrix) -> Result<f64> {
    let (value, _) = entanglement_fidelity_with_state(rho)?;
    clip("entanglement_fidelity", value, 0.0, 1.0)
}

/// Fully entangled fraction together with the maximizing maximally entangled ket.
pub fn entanglement_fidelity_with_state(rho: &DensityMatrix) -> Result<(f64, Vec4)> {
    let q = magic_basis();
    // √2·Q has entries in {0, ±1, ±i}, so the change of basis is exact
    let scaled = unscaled_magic_basis();
    let in_magic = scaled.adjoint() * rho.matrix() * scaled;
    let real_part = Mat4::from_fn(|r, k| c(0.5 * in_magic[(r, k)].re, 0.0));
    let eig = hermitian_eig(&DensityMatrix::from_matrix(real_part).hermitian_part())?;
    // real eigenvector coefficients map back to a maximally entangled ket
    let coeffs = eig.vector(0).map(|z| c(z.re, 0.0));
    let norm = coeffs.norm();
    let coeffs = if norm > 0.0 {
        coeffs / c(norm, 0.0)
    } else {
        coeffs
    };
    Ok((eig.values[0], q * coeffs))
}

/// Independent check of [`entanglement_fidelity`]: sample `(U ⊗ I)|Φ⁺⟩` over
/// Haar-random `U ∈ SU(2)` and refine the best candidates by simplex search
/// on the quaternion parameters.
pub fn fef_brute_oracle(rho: &DensityMatrix, samples: usize, seed: u64) -> Result<f64> {
    if samples < 1000 {
        return Err(Error::invalid(format!(
            "oracle needs at least 1000 samples, got {samples}"
        )));
    }
    let phi_plus = *bell_state(BellKind::PhiPlus).amps();
    let identity = Mat2::identity();
    let overlap = |u: &Mat2| -> f64 {
        let v = kron2(u, &identity) * phi_plus;
        v.dotc(&(rho.matrix() * v)).re
    };
    let quaternion_overlap = |q: &[f64]| -> f64 {
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-12 {
            return f64::NEG_INFINITY;
        }
        let unit = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        overlap(&su2_from_quaternion(&unit))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<([f64; 4], f64)> = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u = random::su2(&mut rng);
        // recover the quaternion: U = [[q0 + i q3, q2 + i q1], [-q2 + i q1, q0 - i q3]]
        let q = [u[(0, 0)].re, u[(0, 1)].im, u[(0, 1)].re, u[(0, 0)].im];
        candidates.push((q, overlap(&u)));
    }
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));

    let opts = NelderMeadOptions {
        max_iterations: 5_000,
        f_tol: 1e-15,
        x_tol: 1e-13,
    };
    let mut best = candidates[0].1;
    for (q, _) in candidates.iter().take(4) {
        let m = nelder_mead(|x| -quaternion_overlap(x), q, &[0.05; 4], &opts);
        best = best.max(-m.f);
    }
    Ok(best)
}

/// Best-fitting `|Ψ_θ⟩` for a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaFit {
    /// Phase in `(-π, π]`; `0` when undefined.
    pub theta: f64,
    pub overlap: f64,
    /// `false` when `|⟨HV|ρ|VH⟩| < 1e-12`.
    pub defined: bool,
}

/// Closed-form survivor phase `θ* = -arg⟨HV|ρ|VH⟩` with overlap
/// `(ρ_HV,HV + ρ_VH,VH)/2 + |ρ_HV,VH|`.
pub fn fit_theta(rho: &DensityMatrix) -> ThetaFit {
    let coherence = rho.get(HV, VH);
    let diag = 0.5 * (rho.get(HV, HV).re + rho.get(VH, VH).re);
    if coherence.norm() < 1e-12 {
        return ThetaFit {
            theta: 0.0,
            overlap: diag + coherence.norm(),
            defined: false,
        };
    }
    let mut theta = -coherence.arg();
    if theta <= -PI {
        theta += 2.0 * PI;
    }
    ThetaFit {
        theta,
        overlap: diag + coherence.norm(),
        defined: true,
    }
}

/// `Tr(ρ²)`
pub fn purity(rho: &DensityMatrix) -> Result<f64> {
    let m = rho.matrix();
    let value = (m * m).trace().re;
    clip("purity", value, 0.25, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub concurrence: f64,
    pub entanglement_fidelity: f64,
    pub theta_fit_rad: f64,
    pub theta_fit_over_pi: f64,
    pub theta_fit_defined: bool,
    pub purity: f64,
    pub witness_entangled: bool,
}

pub fn full_report(rho: &DensityMatrix) -> Result<MetricReport> {
    let concurrence = concurrence(rho)?;
    let entanglement_fidelity = entanglement_fidelity(rho)?;
    let theta = fit_theta(rho);
    Ok(MetricReport {
        concurrence,
        entanglement_fidelity,
        theta_fit_rad: theta.theta,
        theta_fit_over_pi: theta.theta / PI,
        theta_fit_defined: theta.defined,
        purity: purity(rho)?,
        witness_entangled: entanglement_fidelity > 0.5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{ket_to_density, psi_theta, random, HH, VV};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn max_diff(a: &Mat4, b: &Mat4) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn pure(k: &PolarizationKet) -> DensityMatrix {
        ket_to_density(k).unwrap()
    }

    #[test]
    fn spin_flip_examples() {
        let singlet = pure(&bell_state(BellKind::PsiMinus));
        assert!(max_diff(spin_flip(&singlet).matrix(), singlet.matrix()) < 1e-15);
        let hh = pure(&PolarizationKet::basis(HH));
        let vv = pure(&PolarizationKet::basis(VV));
        assert!(max_diff(spin_flip(&hh).matrix(), vv.matrix()) < 1e-15);
        let mixed = DensityMatrix::maximally_mixed();
        assert!(max_diff(spin_flip(&mixed).matrix(), mixed.matrix()) < 1e-15);
    }

    #[test]
    fn concurrence_examples() {
        assert_abs_diff_eq!(
            concurrence(&pure(&bell_state(BellKind::PsiPlus))).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(
            concurrence(&DensityMatrix::diagonal([0.0, 0.5, 0.5, 0.0])).unwrap(),
            0.0
        );
        assert_eq!(concurrence(&DensityMatrix::maximally_mixed()).unwrap(), 0.0);
    }

    #[test]
    fn concurrence_rejects_unphysical_input() {
        let doubled =
            DensityMatrix::from_matrix(pure(&bell_state(BellKind::PsiPlus)).matrix() * c(2.0, 0.0));
        assert!(matches!(
            concurrence(&doubled),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn pure_oracle_examples() {
        assert_abs_diff_eq!(
            concurrence_pure_oracle(&bell_state(BellKind::PsiPlus)),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(concurrence_pure_oracle(&PolarizationKet::basis(HV)), 0.0);
        for theta in [0.0, 0.3, 1.7, -2.9, PI] {
            assert_abs_diff_eq!(
                concurrence_pure_oracle(&psi_theta(theta)),
                1.0,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn magic_basis_is_unitary() {
        let q = magic_basis();
        assert!(max_diff(&(q.adjoint() * q), &Mat4::identity()) < 1e-15);
        let scaled = unscaled_magic_basis() * c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        assert!(max_diff(&scaled, &q) < 1e-15);
    }

    #[test]
    fn entanglement_fidelity_examples() {
        for theta in [0.0, 0.45, 2.0, PI] {
            assert_abs_diff_eq!(
                entanglement_fidelity(&pure(&psi_theta(theta))).unwrap(),
                1.0,
                epsilon = 1e-12
            );
        }
        assert_abs_diff_eq!(
            entanglement_fidelity(&DensityMatrix::maximally_mixed()).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        let mixture = DensityMatrix::diagonal([0.0, 0.5, 0.5, 0.0]);
        assert_abs_diff_eq!(
            entanglement_fidelity(&mixture).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            fef_brute_oracle(&mixture, 2000, 5).unwrap(),
            0.5,
            epsilon = 1e-6
        );
    }

    #[test]
    fn fef_maximizer_is_maximally_entangled() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = random::density(&mut rng);
        let (f, ket) = entanglement_fidelity_with_state(&rho).unwrap();
        let k = PolarizationKet::new([ket[0], ket[1], ket[2], ket[3]]).unwrap();
        assert_abs_diff_eq!(concurrence_pure_oracle(&k), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            crate::quantum::fidelity_to_ket(&rho, &k),
            f,
            epsilon = 1e-12
        );
    }

    #[test]
    fn brute_oracle_examples() {
        let bell = pure(&bell_state(BellKind::PsiPlus));
        assert!(fef_brute_oracle(&bell, 1000, 1).unwrap() >= 1.0 - 1e-4);
        assert_abs_diff_eq!(
            fef_brute_oracle(&DensityMatrix::maximally_mixed(), 1000, 2).unwrap(),
            0.25,
            epsilon = 1e-6
        );
        assert!(fef_brute_oracle(&bell, 10, 1).is_err());
    }

    #[test]
    fn theta_fit_examples() {
        let fit = fit_theta(&pure(&psi_theta(0.143 * PI)));
        assert!(fit.defined);
        assert_abs_diff_eq!(fit.theta, 0.143 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.overlap, 1.0, epsilon = 1e-12);

        let fit = fit_theta(&pure(&bell_state(BellKind::PsiMinus)));
        assert_abs_diff_eq!(fit.theta, PI, epsilon = 1e-12);

        let fit = fit_theta(&DensityMatrix::diagonal([0.0, 0.5, 0.5, 0.0]));
        assert!(!fit.defined);
        assert_eq!(fit.theta, 0.0);
        assert_abs_diff_eq!(fit.overlap, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn purity_examples() {
        assert_abs_diff_eq!(
            purity(&pure(&psi_theta(0.2))).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            purity(&DensityMatrix::maximally_mixed()).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            purity(&DensityMatrix::diagonal([0.0, 0.5, 0.5, 0.0])).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn report_examples() {
        let r = full_report(&pure(&bell_state(BellKind::PsiPlus))).unwrap();
        assert_abs_diff_eq!(r.concurrence, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.entanglement_fidelity, 1.0, epsilon = 1e-12);
        assert!(r.witness_entangled);

        let r = full_report(&DensityMatrix::diagonal([0.0, 0.5, 0.5, 0.0])).unwrap();
        assert_eq!(r.concurrence, 0.0);
        assert_abs_diff_eq!(r.entanglement_fidelity, 0.5, epsilon = 1e-15);
        assert!(!r.witness_entangled);

        let r = full_report(&DensityMatrix::maximally_mixed()).unwrap();
        assert_eq!(r.concurrence, 0.0);
        assert_abs_diff_eq!(r.entanglement_fidelity, 0.25, epsilon = 1e-15);
        assert!(!r.witness_entangled);

        let v = serde_json::to_value(r).unwrap();
        for key in [
            "concurrence",
            "entanglement_fidelity",
            "theta_fit_rad",
            "theta_fit_over_pi",
            "purity",
            "witness_entangled",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    /// Bell-diagonal family `p|Ψ⁺⟩⟨Ψ⁺| + (1-p)|Ψ⁻⟩⟨Ψ⁻|`.
    fn psi_mixture(p: f64) -> DensityMatrix {
        let a = pure(&bell_state(BellKind::PsiPlus));
        let b = pure(&bell_state(BellKind::PsiMinus));
        a.mix(p, &b)
    }

    #[test]
    fn bell_diagonal_family() {
        for k in 0..=10 {
            let beta = k as f64 / 10.0;
            let p = 1.0 / (1.0 + beta);
            let rho = psi_mixture(p);
            let c_val = concurrence(&rho).unwrap();
            assert_abs_diff_eq!(c_val, (1.0 - beta) / (1.0 + beta), epsilon = 1e-12);
            assert!(entanglement_fidelity(&rho).unwrap() >= (1.0 + c_val) / 2.0 - 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn local_unitary_invariance(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random::density(&mut rng);
            let u = random::local_unitary(&mut rng);
            let rotated = rho.conjugate_by(&u);
            prop_assert!((concurrence(&rho).unwrap() - concurrence(&rotated).unwrap()).abs() <= 1e-9);
            prop_assert!((entanglement_fidelity(&rho).unwrap()
                - entanglement_fidelity(&rotated).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn pure_state_oracle_agrees(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random::ket(&mut rng);
            let direct = concurrence(&pure(&k)).unwrap();
            prop_assert!((direct - concurrence_pure_oracle(&k)).abs() <= 1e-10,
                "{} vs {}", direct, concurrence_pure_oracle(&k));
        }

        #[test]
        fn witness_is_sound(seed in any::<u64>(), w in 0.0..1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // bias toward entangled states so both branches are exercised
            let k = random::ket(&mut rng);
            let rho = pure(&k).mix(w, &random::density(&mut rng));
            let report = full_report(&rho).unwrap();
            if report.witness_entangled {
                prop_assert!(report.concurrence > 0.0);
            }
        }

        #[test]
        fn theta_closed_form_beats_grid(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random::density(&mut rng);
            let fit = fit_theta(&rho);
            let closed = crate::quantum::fidelity_to_ket(&rho, &psi_theta(fit.theta));
            prop_assert!((closed - fit.overlap).abs() <= 1e-12);
            let grid_best = (0..10_000)
                .map(|i| {
                    let theta = -PI + 2.0 * PI * i as f64 / 10_000.0;
                    crate::quantum::fidelity_to_ket(&rho, &psi_theta(theta))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(closed >= grid_best - 1e-10);
        }
    }
}
