//! Simulated two-qubit polarization tomography: 16 product projections with
//! Poisson counts, linear inversion, maximum-likelihood reconstruction and
//! Poisson bootstrap error bars.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::quantum::{c, hermitian_eig, DensityMatrix, Mat4, Vec2, Vec4, C64};

/// Means below this are sampled by CDF inversion, above by a normal approximation.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;
/// Largest tolerated fraction of failed bootstrap resamples.
pub const MAX_SKIP_FRACTION: f64 = 0.1;
pub const DEFAULT_RESAMPLES: usize = 200;

const ANALYZER_NAMES: [char; 6] = ['H', 'V', 'D', 'A', 'R', 'L'];
const CANONICAL_ANALYZERS: [char; 4] = ['H', 'V', 'D', 'R'];
/// Mixed into the initial estimate so the Cholesky factor exists.
const INIT_RIDGE: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;

/// Single-photon analyzer ket by its conventional letter.
pub fn analyzer(name: char) -> Option<Vec2> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (a, b) = match name {
        'H' => (c(1.0, 0.0), c(0.0, 0.0)),
        'V' => (c(0.0, 0.0), c(1.0, 0.0)),
        'D' => (c(h, 0.0), c(h, 0.0)),
        'A' => (c(h, 0.0), c(-h, 0.0)),
        'R' => (c(h, 0.0), c(0.0, h)),
        'L' => (c(h, 0.0), c(0.0, -h)),
        _ => return None,
    };
    Some(Vec2::new(a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSetting {
    pub analyzer_a: Vec2,
    pub analyzer_b: Vec2,
    pub label: String,
}

impl MeasurementSetting {
    /// Parses a two-letter label such as `"DR"`.
    pub fn from_label(label: &str) -> Result<Self> {
        let chars: Vec<char> = label.chars().collect();
        let parse = |ch: char| {
            analyzer(ch).ok_or_else(|| {
                Error::invalid(format!(
                    "unknown analyzer '{ch}' in setting '{label}' (expected one of {ANALYZER_NAMES:?})"
                ))
            })
        };
        match chars.as_slice() {
            [a, b] => Ok(Self {
                analyzer_a: parse(*a)?,
                analyzer_b: parse(*b)?,
                label: label.to_string(),
            }),
            _ => Err(Error::invalid(format!(
                "setting label '{label}' must have two letters"
            ))),
        }
    }

    pub fn ket(&self) -> Vec4 {
        let (a, b) = (&self.analyzer_a, &self.analyzer_b);
        Vec4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    }

    pub fn projector(&self) -> Mat4 {
        let k = self.ket();
        k * k.adjoint()
    }
}

/// `{H, V, D, R} ⊗ {H, V, D, R}`, first analyzer in the outer loop.
pub fn canonical_settings() -> Vec<MeasurementSetting> {
    CANONICAL_ANALYZERS
        .iter()
        .flat_map(|&a| {
            CANONICAL_ANALYZERS.iter().map(move |&b| {
                MeasurementSetting::from_label(&format!("{a}{b}")).expect("canonical labels parse")
            })
        })
        .collect()
}

/// `p_i = ⟨a_i b_i|ρ|a_i b_i⟩`
pub fn born_probabilities(rho: &DensityMatrix, settings: &[MeasurementSetting]) -> Vec<f64> {
    settings
        .iter()
        .map(|s| {
            let k = s.ket();
            k.dotc(&(rho.matrix() * k)).re
        })
        .collect()
}

/// Generator for task `stream` of a seeded computation.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Poisson draw: CDF inversion for small means, continuity-corrected normal otherwise.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf && p > 0.0 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        k
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (mean + mean.sqrt() * z + 0.5).floor().max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetJson", into = "DatasetJson")]
pub struct TomographyDataset {
    pub settings: Vec<MeasurementSetting>,
    pub counts: Vec<u64>,
    /// Nominal pairs per setting.
    pub n: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    settings: Vec<String>,
    counts: Vec<u64>,
    #[serde(rename = "N")]
    n: u64,
    seed: u64,
}

impl TryFrom<DatasetJson> for TomographyDataset {
    type Error = Error;

    fn try_from(j: DatasetJson) -> Result<Self> {
        let settings = j
            .settings
            .iter()
            .map(|l| MeasurementSetting::from_label(l))
            .collect::<Result<Vec<_>>>()?;
        let ds = TomographyDataset {
            settings,
            counts: j.counts,
            n: j.n,
            seed: j.seed,
        };
        ds.validate()?;
        Ok(ds)
    }
}

impl From<TomographyDataset> for DatasetJson {
    fn from(ds: TomographyDataset) -> Self {
        Self {
            settings: ds.settings.into_iter().map(|s| s.label).collect(),
            counts: ds.counts,
            n: ds.n,
            seed: ds.seed,
        }
    }
}

impl TomographyDataset {
    pub fn validate(&self) -> Result<()> {
        if self.settings.len() != 16 || self.counts.len() != 16 {
            return Err(Error::invalid(format!(
                "dataset needs 16 settings and 16 counts, got {} and {}",
                self.settings.len(),
                self.counts.len()
            )));
        }
        if self.n == 0 {
            return Err(Error::invalid("pairs per setting must be positive"));
        }
        Ok(())
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&k| k as f64).collect()
    }
}

/// Poisson counts with mean `N·p_i`; setting `i` draws from its own stream of `seed`.
pub fn simulate_counts(rho: &DensityMatrix, n: u64, seed: u64) -> Result<TomographyDataset> {
    if n == 0 {
        return Err(Error::invalid("pairs per setting must be at least 1"));
    }
    let settings = canonical_settings();
    let counts = born_probabilities(rho, &settings)
        .iter()
        .enumerate()
        .map(|(i, &p)| sample_poisson(n as f64 * p.max(0.0), &mut stream_rng(seed, i as u64)))
        .collect();
    Ok(TomographyDataset {
        settings,
        counts,
        n,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimate {
    /// Hermitian, unit trace, possibly with negative eigenvalues.
    pub matrix: Mat4,
    /// Euclidean norm of the frequency residual.
    pub residual: f64,
}

fn pauli(k: usize) -> nalgebra::Matrix2<C64> {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    match k {
        0 => nalgebra::Matrix2::new(o, z, z, o),
        1 => nalgebra::Matrix2::new(z, o, o, z),
        2 => nalgebra::Matrix2::new(z, -i, i, z),
        _ => nalgebra::Matrix2::new(o, z, z, -o),
    }
}

fn pauli_product(a: usize, b: usize) -> Mat4 {
    crate::quantum::kron2(&pauli(a), &pauli(b))
}

/// Least-squares inversion of `Tr(ρ Π_i) = f_i` with `ρ = (I + Σ r_ab σ_a⊗σ_b)/4`.
pub fn linear_reconstruct_frequencies(
    settings: &[MeasurementSetting],
    frequencies: &[f64],
) -> Result<LinearEstimate> {
    if settings.len() != frequencies.len() || settings.is_empty() {
        return Err(Error::invalid("one frequency per setting required"));
    }
    if frequencies.iter().all(|&f| f == 0.0) {
        return Err(Error::DegenerateDataset("all counts are zero".into()));
    }
    let basis: Vec<Mat4> = (1..16).map(|k| pauli_product(k / 4, k % 4)).collect();
    let kets: Vec<Vec4> = settings.iter().map(MeasurementSetting::ket).collect();
    let a = DMatrix::from_fn(kets.len(), basis.len(), |i, k| {
        0.25 * kets[i].dotc(&(basis[k] * kets[i])).re
    });
    let rhs = DVector::from_fn(kets.len(), |i, _| {
        frequencies[i] - 0.25 * kets[i].norm_squared()
    });
    let svd = a.clone().svd(true, true);
    let rank = svd.rank(RANK_TOL * svd.singular_values.max());
    if rank < basis.len() {
        return Err(Error::SingularSystem { rank });
    }
    let r = svd
        .solve(&rhs, RANK_TOL)
        .map_err(|e| Error::invalid(format!("least squares failed: {e}")))?;
    let residual = (&a * &r - &rhs).norm();
    let mut matrix = Mat4::identity() * c(0.25, 0.0);
    for (coef, b) in r.iter().zip(&basis) {
        matrix += b * c(0.25 * coef, 0.0);
    }
    Ok(LinearEstimate { matrix, residual })
}

pub fn linear_reconstruct(ds: &TomographyDataset) -> Result<LinearEstimate> {
    ds.validate()?;
    let n = ds.n as f64;
    let f: Vec<f64> = ds.counts.iter().map(|&k| k as f64 / n).collect();
    linear_reconstruct_frequencies(&ds.settings, &f)
}

/// Nearest unit-trace PSD matrix by clipping negative eigenvalues.
pub fn clip_to_density(m: &Mat4) -> Result<DensityMatrix> {
    let eig = hermitian_eig(&DensityMatrix::from_matrix(*m).hermitian_part())?;
    let total: f64 = eig.values.iter().map(|&v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Ok(DensityMatrix::maximally_mixed());
    }
    let clipped = eig.rebuild_with(|v| v.max(0.0) / total);
    Ok(DensityMatrix::from_matrix(clipped).hermitian_part())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionResult {
    pub rho_hat: DensityMatrix,
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Lower-triangular factor: 4 real diagonal entries, then the six
    /// sub-diagonal entries (row-major) as real/imaginary pairs.
    pub t_params: [f64; 16],
}

#[derive(Debug, Clone, Copy)]
pub struct MleOptions {
    /// Seeded restarts after the initial descent.
    pub restarts: usize,
    /// Extra restarts allowed while the likelihood keeps improving.
    pub max_extra_restarts: usize,
    pub max_iterations: usize,
    /// Relative NLL tolerance, both inside a simplex run and across restarts.
    pub rel_tol: f64,
    /// Simplex size (max-norm, unit-norm parameters) at which a run stops.
    pub x_tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_extra_restarts: 5,
            max_iterations: 20_000,
            rel_tol: 1e-10,
            x_tol: 1e-6,
        }
    }
}

const LOWER: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

fn t_from_params(x: &[f64]) -> Mat4 {
    let mut t = Mat4::zeros();
    for d in 0..4 {
        t[(d, d)] = c(x[d], 0.0);
    }
    for (k, &(i, j)) in LOWER.iter().enumerate() {
        t[(i, j)] = c(x[4 + 2 * k], x[5 + 2 * k]);
    }
    t
}

fn params_from_t(t: &Mat4) -> [f64; 16] {
    let mut x = [0.0; 16];
    for d in 0..4 {
        x[d] = t[(d, d)].re;
    }
    for (k, &(i, j)) in LOWER.iter().enumerate() {
        x[4 + 2 * k] = t[(i, j)].re;
        x[5 + 2 * k] = t[(i, j)].im;
    }
    x
}

/// `ρ = T†T / Tr(T†T)`
pub fn density_from_params(x: &[f64]) -> DensityMatrix {
    let t = t_from_params(x);
    let g = t.adjoint() * t;
    let tr = g.trace().re;
    DensityMatrix::from_matrix(g / c(tr, 0.0)).hermitian_part()
}

/// Lower-triangular `T` with `T†T = ρ`, via the Cholesky factor of the
/// index-reversed matrix.
fn factor_density(rho: &Mat4) -> Option<[f64; 16]> {
    let rev = Mat4::from_fn(|i, j| rho[(3 - i, 3 - j)]);
    let l = Cholesky::new(rev)?.unpack();
    let upper = Mat4::from_fn(|i, j| l[(3 - i, 3 - j)]);
    let t = upper.adjoint();
    Some(params_from_t(&t))
}

struct Likelihood<'a> {
    kets: Vec<[C64; 4]>,
    counts: &'a [f64],
    n: f64,
}

impl Likelihood<'_> {
    /// `Σ N p_i − k_i ln(N p_i)`, zero-count terms contributing `N p_i` only.
    fn nll_probabilities(&self, p: impl Iterator<Item = f64>) -> f64 {
        let mut total = 0.0;
        for (pi, &k) in p.zip(self.counts) {
            let mu = self.n * pi;
            if k > 0.0 {
                if !(mu > 0.0) {
                    return f64::INFINITY;
                }
                total += mu - k * mu.ln();
            } else {
                total += mu.max(0.0);
            }
        }
        total
    }

    fn nll_params(&self, x: &[f64]) -> f64 {
        let tr: f64 = x.iter().map(|v| v * v).sum();
        if !(tr > 0.0) {
            return f64::INFINITY;
        }
        // rows of the lower-triangular factor
        let z = |k: usize| C64::new(x[4 + 2 * k], x[5 + 2 * k]);
        let (t10, t20, t21, t30, t31, t32) = (z(0), z(1), z(2), z(3), z(4), z(5));
        let probs = self.kets.iter().map(|k| {
            let r0 = k[0] * x[0];
            let r1 = t10 * k[0] + k[1] * x[1];
            let r2 = t20 * k[0] + t21 * k[1] + k[2] * x[2];
            let r3 = t30 * k[0] + t31 * k[1] + t32 * k[2] + k[3] * x[3];
            (r0.norm_sqr() + r1.norm_sqr() + r2.norm_sqr() + r3.norm_sqr()) / tr
        });
        self.nll_probabilities(probs)
    }

    fn nll_density(&self, rho: &DensityMatrix) -> f64 {
        let probs = self.kets.iter().map(|k| {
            let v = Vec4::new(k[0], k[1], k[2], k[3]);
            v.dotc(&(rho.matrix() * v)).re
        });
        self.nll_probabilities(probs)
    }
}

/// Negative log-likelihood of `rho` for the given counts.
pub fn negative_log_likelihood(
    rho: &DensityMatrix,
    settings: &[MeasurementSetting],
    counts: &[f64],
    n: f64,
) -> f64 {
    Likelihood {
        kets: kets_of(settings),
        counts,
        n,
    }
    .nll_density(rho)
}

fn kets_of(settings: &[MeasurementSetting]) -> Vec<[C64; 4]> {
    settings
        .iter()
        .map(|s| {
            let k = s.ket();
            [k[0], k[1], k[2], k[3]]
        })
        .collect()
}

/// Maximum-likelihood fit for real-valued counts (exact means allowed).
pub fn mle_reconstruct_counts(
    settings: &[MeasurementSetting],
    counts: &[f64],
    n: f64,
    seed: u64,
    opts: &MleOptions,
) -> Result<ReconstructionResult> {
    if counts.len() != settings.len() {
        return Err(Error::invalid("one count per setting required"));
    }
    if counts.iter().any(|&k| !(k >= 0.0 && k.is_finite())) {
        return Err(Error::invalid("counts must be finite and non-negative"));
    }
    if !(n > 0.0) {
        return Err(Error::invalid("pairs per setting must be positive"));
    }
    let f: Vec<f64> = counts.iter().map(|&k| k / n).collect();
    let linear = linear_reconstruct_frequencies(settings, &f)?;
    let clipped = clip_to_density(&linear.matrix)?;
    let ridged = clipped.mix(1.0 - INIT_RIDGE, &DensityMatrix::maximally_mixed());
    let x0 = factor_density(ridged.matrix())
        .or_else(|| factor_density(DensityMatrix::maximally_mixed().matrix()))
        .expect("maximally mixed state is positive definite");

    let lik = Likelihood {
        kets: kets_of(settings),
        counts,
        n,
    };
    // ρ ignores the scale of T; the penalty pins ‖x‖ = 1 so the simplex
    // does not wander along that flat direction
    let objective = |x: &[f64]| {
        let norm_sqr: f64 = x.iter().map(|v| v * v).sum();
        lik.nll_params(x) + (norm_sqr - 1.0).powi(2)
    };
    let nm = NelderMeadOptions {
        max_iterations: opts.max_iterations,
        f_tol: opts.rel_tol,
        x_tol: opts.x_tol,
    };

    let mut rng = stream_rng(seed, 0x004D_4C45);
    let mut best = nelder_mead(objective, &x0, &[0.05; 16], &nm);
    normalize_params(&mut best.x);
    let mut iterations = best.iterations;
    let mut converged = false;
    let max_rounds = opts.restarts + opts.max_extra_restarts;
    for round in 0..max_rounds {
        let scale = 0.005;
        let start: Vec<f64> = best
            .x
            .iter()
            .map(|v| v + scale * (rng.random::<f64>() - 0.5))
            .collect();
        let mut cand = nelder_mead(objective, &start, &[scale; 16], &nm);
        iterations += cand.iterations;
        let improvement = best.f - cand.f;
        if cand.f < best.f {
            normalize_params(&mut cand.x);
            best = cand;
        }
        let settled = improvement <= opts.rel_tol * best.f.abs().max(1.0);
        if round + 1 >= opts.restarts && settled {
            converged = true;
            break;
        }
    }

    let mut t_params = [0.0; 16];
    t_params.copy_from_slice(&best.x);
    let rho_hat = density_from_params(&t_params);
    Ok(ReconstructionResult {
        nll: lik.nll_density(&rho_hat),
        rho_hat,
        iterations,
        converged,
        t_params,
    })
}

fn normalize_params(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
}

pub fn mle_reconstruct(ds: &TomographyDataset) -> Result<ReconstructionResult> {
    mle_reconstruct_with(ds, &MleOptions::default())
}

pub fn mle_reconstruct_with(
    ds: &TomographyDataset,
    opts: &MleOptions,
) -> Result<ReconstructionResult> {
    ds.validate()?;
    mle_reconstruct_counts(&ds.settings, &ds.counts_f64(), ds.n as f64, ds.seed, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapEstimate {
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator).
    pub std: f64,
    pub resamples: usize,
    pub skipped: usize,
}

pub type Metric<'a> = &'a (dyn Fn(&DensityMatrix) -> Result<f64> + Sync);

/// Poisson bootstrap of several metrics sharing one reconstruction per resample.
///
/// Resample `b` redraws every count from `Poisson(counts_i)` using its own
/// generator stream, so the result does not depend on the thread count.
pub fn bootstrap_metrics(
    ds: &TomographyDataset,
    metrics: &[Metric<'_>],
    resamples: usize,
    seed: u64,
) -> Result<Vec<BootstrapEstimate>> {
    ds.validate()?;
    if resamples < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 resamples"));
    }
    let outcomes: Vec<Option<Vec<f64>>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let child = derive_seed(seed, b as u64);
            let counts = ds
                .counts
                .iter()
                .enumerate()
                .map(|(i, &k)| sample_poisson(k as f64, &mut stream_rng(child, i as u64)))
                .collect();
            let resampled = TomographyDataset {
                settings: ds.settings.clone(),
                counts,
                n: ds.n,
                seed: child,
            };
            let fit = mle_reconstruct(&resampled).ok()?;
            metrics.iter().map(|m| m(&fit.rho_hat).ok()).collect()
        })
        .collect();
    let kept: Vec<&Vec<f64>> = outcomes.iter().flatten().collect();
    let skipped = resamples - kept.len();
    if skipped as f64 > MAX_SKIP_FRACTION * resamples as f64 || kept.len() < 2 {
        return Err(Error::BootstrapFailed {
            skipped,
            total: resamples,
        });
    }
    Ok((0..metrics.len())
        .map(|m| {
            let values: Vec<f64> = kept.iter().map(|v| v[m]).collect();
            let (mean, std) = mean_std(&values);
            BootstrapEstimate {
                mean,
                std,
                resamples,
                skipped,
            }
        })
        .collect())
}

pub fn bootstrap_metric(
    ds: &TomographyDataset,
    metric: Metric<'_>,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapEstimate> {
    Ok(bootstrap_metrics(ds, &[metric], resamples, seed)?[0])
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
