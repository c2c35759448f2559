//! Loss-based entanglement filter: a balanced Mach–Zehnder-type interferometer
//! (BS1 → attenuator in one arm → BS2) followed by coincidence post-selection.
//!
//! Two independent descriptions are provided. [`eq2_output`] is the
//! phenomenological map that damps the `Ψ⁻` component by a decay ratio `β`.
//! [`fock_channel_output`] propagates the two photons through the optics in
//! the symmetric two-photon Fock space and keeps the one-photon-per-path
//! component.
//!
//! Mode labels: `0` path 1 H, `1` path 1 V, `2` path 2 H, `3` path 2 V.
//! Path 1 carries the attenuator between the splitters.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::concurrence;
use crate::quantum::{
    bell_state, c, validate_density, BellKind, DensityMatrix, Mat4, Vec4, C64, STRUCTURAL_TOL,
};
use crate::source::{spdc_input_state, SourceConfig};

/// Post-selected traces below this are treated as total annihilation.
pub const ANNIHILATION_TRACE: f64 = 1e-15;
/// Post-selected traces below this are renormalized but flagged.
pub const LOW_TRACE_WARNING: f64 = 1e-9;

const EPS_CONSISTENCY_TOL: f64 = 1e-9;

/// Where the arm wave-plate phases act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmPhasePlacement {
    /// On the output paths after BS2; a local unitary on the post-selected pair.
    #[default]
    Output,
    /// On the internal arms between BS1 and BS2, where it interferes.
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelConfigJson", into = "ChannelConfigJson")]
pub struct ChannelConfig {
    /// Attenuation exponent; the per-photon amplitude transmission is `e^{-γ}`.
    pub gamma: f64,
    /// Extra V phases `(θ₁, θ₂)` of BS1 on output ports 1 and 2, radians.
    pub bs1_thetas: (f64, f64),
    pub bs2_thetas: (f64, f64),
    /// V-relative-to-H phase in arm c (path 1), radians.
    pub arm_phase_c: f64,
    /// V-relative-to-H phase in arm d (path 2), radians.
    pub arm_phase_d: f64,
    /// Two-photon interference visibility in `[0, 1]`.
    pub visibility: f64,
    pub arm_phase_placement: ArmPhasePlacement,
}

impl ChannelConfig {
    /// Ideal splitters, no wave plates, full visibility.
    pub fn ideal(gamma: f64) -> Self {
        Self {
            gamma,
            bs1_thetas: (0.0, 0.0),
            bs2_thetas: (0.0, 0.0),
            arm_phase_c: 0.0,
            arm_phase_d: 0.0,
            visibility: 1.0,
            arm_phase_placement: ArmPhasePlacement::Output,
        }
    }

    pub fn from_loss_rate(eps: f64) -> Result<Self> {
        let cfg = Self::ideal(gamma_from_loss_rate(eps)?);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Measured splitter birefringence (7.2°, −18.6°) placed on BS2.
    pub fn with_measured_birefringence(mut self) -> Self {
        self.bs2_thetas = (7.2_f64.to_radians(), (-18.6_f64).to_radians());
        self
    }

    /// Per-photon amplitude transmission `t = e^{-γ}`.
    pub fn transmission(&self) -> f64 {
        (-self.gamma).exp()
    }

    pub fn loss_rate(&self) -> f64 {
        loss_rate_from_gamma(self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::invalid(format!(
                "visibility must lie in [0, 1], got {}",
                self.visibility
            )));
        }
        let phases = [
            self.bs1_thetas.0,
            self.bs1_thetas.1,
            self.bs2_thetas.0,
            self.bs2_thetas.1,
            self.arm_phase_c,
            self.arm_phase_d,
        ];
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("channel phases must be finite"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelConfigJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    #[serde(default)]
    bs1_theta1_deg: f64,
    #[serde(default)]
    bs1_theta2_deg: f64,
    #[serde(default)]
    bs2_theta1_deg: f64,
    #[serde(default)]
    bs2_theta2_deg: f64,
    #[serde(default)]
    arm_phase_c_deg: f64,
    #[serde(default)]
    arm_phase_d_deg: f64,
    #[serde(default = "full_visibility")]
    visibility: f64,
    #[serde(default)]
    arm_phase_placement: ArmPhasePlacement,
}

fn full_visibility() -> f64 {
    1.0
}

impl TryFrom<ChannelConfigJson> for ChannelConfig {
    type Error = Error;

    fn try_from(j: ChannelConfigJson) -> Result<Self> {
        let gamma = match (j.gamma, j.eps) {
            (Some(g), Some(eps)) => {
                let implied = loss_rate_from_gamma(g);
                if !((implied - eps).abs() <= EPS_CONSISTENCY_TOL) {
                    return Err(Error::invalid(format!(
                        "eps = {eps} is inconsistent with gamma = {g} (expected {implied})"
                    )));
                }
                g
            }
            (Some(g), None) => g,
            (None, Some(eps)) => gamma_from_loss_rate(eps)?,
            (None, None) => return Err(Error::invalid("channel needs gamma or eps")),
        };
        let cfg = ChannelConfig {
            gamma,
            bs1_thetas: (j.bs1_theta1_deg.to_radians(), j.bs1_theta2_deg.to_radians()),
            bs2_thetas: (j.bs2_theta1_deg.to_radians(), j.bs2_theta2_deg.to_radians()),
            arm_phase_c: j.arm_phase_c_deg.to_radians(),
            arm_phase_d: j.arm_phase_d_deg.to_radians(),
            visibility: j.visibility,
            arm_phase_placement: j.arm_phase_placement,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<ChannelConfig> for ChannelConfigJson {
    fn from(cfg: ChannelConfig) -> Self {
        Self {
            gamma: Some(cfg.gamma),
            eps: Some(cfg.loss_rate()),
            bs1_theta1_deg: cfg.bs1_thetas.0.to_degrees(),
            bs1_theta2_deg: cfg.bs1_thetas.1.to_degrees(),
            bs2_theta1_deg: cfg.bs2_thetas.0.to_degrees(),
            bs2_theta2_deg: cfg.bs2_thetas.1.to_degrees(),
            arm_phase_c_deg: cfg.arm_phase_c.to_degrees(),
            arm_phase_d_deg: cfg.arm_phase_d.to_degrees(),
            visibility: cfg.visibility,
            arm_phase_placement: cfg.arm_phase_placement,
        }
    }
}

/// `β = 2/(e^{-γ} + e^{γ}) = sech γ`
pub fn beta_from_gamma(gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    Ok(1.0 / gamma.cosh())
}

/// `ε = 1 − e^{-γ}`
pub fn loss_rate_from_gamma(gamma: f64) -> f64 {
    -(-gamma).exp_m1()
}

/// `γ = −ln(1 − ε)`
pub fn gamma_from_loss_rate(eps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid(format!(
            "loss rate must lie in [0, 1), got {eps}"
        )));
    }
    Ok(-(-eps).ln_1p())
}

/// Amplitude transmission whose Bell-factor ratio `2t/(1+t²)` equals `β`.
pub fn transmission_from_beta(beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(beta / (1.0 + (1.0 - beta * beta).sqrt()))
}

/// `C = (ε/(2−ε))²`, equal to `tanh²(γ/2)`.
pub fn analytic_concurrence_vs_loss(eps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid(format!(
            "loss rate must lie in [0, 1), got {eps}"
        )));
    }
    Ok((eps / (2.0 - eps)).powi(2))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!(
            "beta must lie in [0, 1], got {beta}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelOutput {
    pub rho_out: DensityMatrix,
    pub success_probability: f64,
    /// Set when the post-selected trace fell below [`LOW_TRACE_WARNING`].
    pub low_trace_warning: bool,
}

fn finish(sigma: Mat4, success_probability: f64) -> Result<ChannelOutput> {
    let trace = sigma.trace().re;
    if !(trace >= ANNIHILATION_TRACE) {
        return Err(Error::FilterAnnihilatesInput { trace });
    }
    let rho_out = DensityMatrix::from_matrix(sigma / c(trace, 0.0)).hermitian_part();
    Ok(ChannelOutput {
        rho_out,
        success_probability: success_probability.clamp(0.0, 1.0),
        low_trace_warning: trace < LOW_TRACE_WARNING,
    })
}

/// Phenomenological filter for the mixed source state with pump amplitudes
/// `(c0, c1)` and no pulse-shape coherence.
///
/// Unnormalized output `(|Ψ⁺⟩⟨Ψ⁺| + β|Ψ⁻⟩⟨Ψ⁻|)/2 + (|c0|²−|c1|²)/2 · √β (|Ψ⁺⟩⟨Ψ⁻| + h.c.)`.
/// The `Ψ⁺`-`Ψ⁻` coherence of the input is `(|c0|²−|c1|²)/2`; damping it by
/// `√β` keeps the map positive for unbalanced pumps. The success probability
/// is the trace times the `Ψ⁺` population factor `(1+t²)/2` of the
/// equivalent transmission `t`.
pub fn eq2_output(c0: C64, c1: C64, beta: f64) -> Result<ChannelOutput> {
    let norm = c0.norm_sqr() + c1.norm_sqr();
    if !((norm - 1.0).abs() <= STRUCTURAL_TOL) {
        return Err(Error::invalid(format!(
            "pump amplitudes must satisfy |c0|^2 + |c1|^2 = 1, got {norm}"
        )));
    }
    check_beta(beta)?;
    let psi_p = *bell_state(BellKind::PsiPlus).amps();
    let psi_m = *bell_state(BellKind::PsiMinus).amps();
    let coherence = 0.5 * (c0.norm_sqr() - c1.norm_sqr()) * beta.sqrt();
    let cross = psi_p * psi_m.adjoint() + psi_m * psi_p.adjoint();
    let sigma = (psi_p * psi_p.adjoint() + psi_m * psi_m.adjoint() * c(beta, 0.0)) * c(0.5, 0.0)
        + cross * c(coherence, 0.0);
    eq2_finish(sigma, beta)
}

/// The same phenomenological map applied to an arbitrary input: the `Ψ⁻`
/// amplitude is scaled by `√β`, everything else passes unchanged.
pub fn eq2_map(rho_in: &DensityMatrix, beta: f64) -> Result<ChannelOutput> {
    check_beta(beta)?;
    check_input(rho_in)?;
    let psi_m = *bell_state(BellKind::PsiMinus).amps();
    let k = Mat4::identity() + psi_m * psi_m.adjoint() * c(beta.sqrt() - 1.0, 0.0);
    eq2_finish(k * rho_in.matrix() * k.adjoint(), beta)
}

fn eq2_finish(sigma: Mat4, beta: f64) -> Result<ChannelOutput> {
    let t = transmission_from_beta(beta)?;
    let p = sigma.trace().re * (1.0 + t * t) / 2.0;
    finish(sigma, p)
}

fn check_input(rho_in: &DensityMatrix) -> Result<()> {
    let report = validate_density(rho_in);
    if !report.passed() {
        return Err(Error::invalid(format!(
            "input is not a valid density matrix: {report:?}"
        )));
    }
    Ok(())
}

/// Symmetric two-photon basis `(i, j)`, `i <= j`.
pub const FOCK_PAIRS: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

fn pair_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    FOCK_PAIRS
        .iter()
        .position(|&p| p == (i, j))
        .expect("mode indices below 4")
}

/// Two photons in four modes, amplitudes over `|i,j⟩ = a_i†a_j†|vac⟩/√(1+δ_ij)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhotonFockState {
    coeffs: [C64; 10],
}

/// One of the two spatial paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    One,
    Two,
}

impl Path {
    fn contains(self, mode: usize) -> bool {
        match self {
            Path::One => mode < 2,
            Path::Two => mode >= 2,
        }
    }
}

impl TwoPhotonFockState {
    pub fn new(coeffs: [C64; 10]) -> Result<Self> {
        let s = Self { coeffs };
        let n = s.norm_sqr();
        if !(n <= 1.0 + STRUCTURAL_TOL) {
            return Err(Error::NotNormalized { norm_sqr: n });
        }
        Ok(s)
    }

    /// Photon A in path 1 and photon B in path 2 with polarizations from `ket`.
    pub fn from_coincidence_ket(ket: &Vec4) -> Self {
        let mut coeffs = [C64::new(0.0, 0.0); 10];
        for r in 0..2 {
            for s in 0..2 {
                coeffs[pair_index(r, 2 + s)] = ket[2 * r + s];
            }
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[C64; 10] {
        &self.coeffs
    }

    pub fn amplitude(&self, i: usize, j: usize) -> C64 {
        self.coeffs[pair_index(i, j)]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Component with one photon per path, as an (unnormalized) polarization ket.
    pub fn coincidence_ket(&self) -> Vec4 {
        Vec4::from_fn(|idx, _| self.amplitude(idx / 2, 2 + idx % 2))
    }

    fn to_symmetric(self) -> Mat4 {
        let mut s = Mat4::zeros();
        for (&(i, j), &z) in FOCK_PAIRS.iter().zip(&self.coeffs) {
            if i == j {
                s[(i, i)] = z * FRAC_1_SQRT_2;
            } else {
                s[(i, j)] = z * 0.5;
                s[(j, i)] = z * 0.5;
            }
        }
        s
    }

    fn from_symmetric(s: &Mat4) -> Self {
        let mut coeffs = [C64::new(0.0, 0.0); 10];
        for (n, &(i, j)) in FOCK_PAIRS.iter().enumerate() {
            coeffs[n] = if i == j {
                s[(i, i)] * std::f64::consts::SQRT_2
            } else {
                s[(i, j)] + s[(j, i)]
            };
        }
        Self { coeffs }
    }
}

/// Substitutes `a_i† → Σ_k M_ki a_k†` in every two-photon amplitude.
pub fn apply_mode_transform(state: &TwoPhotonFockState, m: &Mat4) -> TwoPhotonFockState {
    let s = state.to_symmetric();
    TwoPhotonFockState::from_symmetric(&(m * s * m.transpose()))
}

/// Balanced splitter with V-mode phases `e^{iθ₁}` on output port 1 and `e^{iθ₂}` on port 2.
pub fn birefringent_bs(theta1: f64, theta2: f64) -> Mat4 {
    let h = c(FRAC_1_SQRT_2, 0.0);
    let e1 = C64::from_polar(FRAC_1_SQRT_2, theta1);
    let e2 = C64::from_polar(FRAC_1_SQRT_2, theta2);
    let mut m = Mat4::zeros();
    // columns are input modes h1, v1, h2, v2
    m[(0, 0)] = h;
    m[(2, 0)] = h;
    m[(0, 2)] = h;
    m[(2, 2)] = -h;
    m[(1, 1)] = e1;
    m[(3, 1)] = e2;
    m[(1, 3)] = e1;
    m[(3, 3)] = -e2;
    m
}

/// V-relative-to-H phases on path 1 and path 2.
pub fn polarization_phases(phase_path1: f64, phase_path2: f64) -> Mat4 {
    Mat4::from_diagonal(&Vec4::new(
        c(1.0, 0.0),
        C64::from_polar(1.0, phase_path1),
        c(1.0, 0.0),
        C64::from_polar(1.0, phase_path2),
    ))
}

/// No-loss conditional evolution: each amplitude gains `t` per photon in `path`.
pub fn attenuate_path(
    state: &TwoPhotonFockState,
    path: Path,
    t: f64,
) -> Result<TwoPhotonFockState> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!(
            "transmission must lie in [0, 1], got {t}"
        )));
    }
    let mut coeffs = state.coeffs;
    for (z, &(i, j)) in coeffs.iter_mut().zip(&FOCK_PAIRS) {
        let photons = path.contains(i) as i32 + path.contains(j) as i32;
        *z *= t.powi(photons);
    }
    Ok(TwoPhotonFockState { coeffs })
}

/// Post-selected map from input coincidence kets to output coincidence kets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveKraus {
    pub k: Mat4,
}

impl EffectiveKraus {
    pub fn apply(&self, rho: &DensityMatrix) -> Mat4 {
        self.k * rho.matrix() * self.k.adjoint()
    }

    pub fn max_singular_value(&self) -> f64 {
        self.k.singular_values().iter().copied().fold(0.0, f64::max)
    }
}

fn propagate(input: &TwoPhotonFockState, cfg: &ChannelConfig) -> Result<TwoPhotonFockState> {
    let bs1 = birefringent_bs(cfg.bs1_thetas.0, cfg.bs1_thetas.1);
    let bs2 = birefringent_bs(cfg.bs2_thetas.0, cfg.bs2_thetas.1);
    let phases = polarization_phases(cfg.arm_phase_c, cfg.arm_phase_d);
    let mut state = apply_mode_transform(input, &bs1);
    state = attenuate_path(&state, Path::One, cfg.transmission())?;
    if cfg.arm_phase_placement == ArmPhasePlacement::Internal {
        state = apply_mode_transform(&state, &phases);
    }
    state = apply_mode_transform(&state, &bs2);
    if cfg.arm_phase_placement == ArmPhasePlacement::Output {
        state = apply_mode_transform(&state, &phases);
    }
    Ok(state)
}

/// Propagates each polarization basis input through the optics and keeps the
/// coincidence component; the results are the columns of `K`.
pub fn effective_kraus(cfg: &ChannelConfig) -> Result<EffectiveKraus> {
    cfg.validate()?;
    let mut k = Mat4::zeros();
    for col in 0..4 {
        let mut ket = Vec4::zeros();
        ket[col] = c(1.0, 0.0);
        let out = propagate(&TwoPhotonFockState::from_coincidence_ket(&ket), cfg)?;
        k.set_column(col, &out.coincidence_ket());
    }
    Ok(EffectiveKraus { k })
}

/// Single-photon mode matrix of the whole channel, attenuation included.
pub fn single_photon_transfer(cfg: &ChannelConfig) -> Result<Mat4> {
    cfg.validate()?;
    let t = cfg.transmission();
    let bs1 = birefringent_bs(cfg.bs1_thetas.0, cfg.bs1_thetas.1);
    let bs2 = birefringent_bs(cfg.bs2_thetas.0, cfg.bs2_thetas.1);
    let phases = polarization_phases(cfg.arm_phase_c, cfg.arm_phase_d);
    let loss = Mat4::from_diagonal(&Vec4::new(c(t, 0.0), c(t, 0.0), c(1.0, 0.0), c(1.0, 0.0)));
    Ok(match cfg.arm_phase_placement {
        ArmPhasePlacement::Output => phases * bs2 * loss * bs1,
        ArmPhasePlacement::Internal => bs2 * phases * loss * bs1,
    })
}

/// Kraus pair for distinguishable photons: `K1` keeps each photon's path
/// parity (A exits in path 1, B in path 2), `K2` swaps it. Without
/// two-photon interference these branches add incoherently; for
/// indistinguishable photons `K = K1 + K2`.
pub fn distinguishable_kraus(cfg: &ChannelConfig) -> Result<(Mat4, Mat4)> {
    let m = single_photon_transfer(cfg)?;
    let mut k1 = Mat4::zeros();
    let mut k2 = Mat4::zeros();
    for r in 0..2 {
        for s in 0..2 {
            for p in 0..2 {
                for q in 0..2 {
                    k1[(2 * p + q, 2 * r + s)] = m[(p, r)] * m[(2 + q, 2 + s)];
                    k2[(2 * p + q, 2 * r + s)] = m[(2 + q, r)] * m[(p, 2 + s)];
                }
            }
        }
    }
    Ok((k1, k2))
}

/// First-principles filter output.
///
/// With visibility `v < 1` the unnormalized output is
/// `v·KρK† + (1−v)·(K1ρK1† + K2ρK2†)`.
pub fn fock_channel_output(rho_in: &DensityMatrix, cfg: &ChannelConfig) -> Result<ChannelOutput> {
    check_input(rho_in)?;
    let kraus = effective_kraus(cfg)?;
    let mut sigma = kraus.apply(rho_in);
    if cfg.visibility < 1.0 {
        let (k1, k2) = distinguishable_kraus(cfg)?;
        let rho = rho_in.matrix();
        let dist = k1 * rho * k1.adjoint() + k2 * rho * k2.adjoint();
        let v = cfg.visibility;
        sigma = sigma * c(v, 0.0) + dist * c(1.0 - v, 0.0);
    }
    let p = sigma.trace().re;
    finish(sigma, p)
}

/// One γ point of the phenomenological-vs-Fock comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub gamma: f64,
    pub eps: f64,
    pub beta: f64,
    pub c_eq2: f64,
    pub c_fock: f64,
    pub abs_diff: f64,
    pub p_success_eq2: f64,
    pub p_success_fock: f64,
}

/// Evaluates both filter models on the source state over `gamma_grid` with ideal optics.
pub fn compare_models(source: &SourceConfig, gamma_grid: &[f64]) -> Result<Vec<ComparisonRow>> {
    if gamma_grid.is_empty() {
        return Err(Error::invalid("gamma grid is empty"));
    }
    let rho_in = spdc_input_state(source)?;
    gamma_grid
        .iter()
        .map(|&gamma| {
            let beta = beta_from_gamma(gamma)?;
            let eq2 = eq2_map(&rho_in, beta)?;
            let fock = fock_channel_output(&rho_in, &ChannelConfig::ideal(gamma))?;
            let c_eq2 = concurrence(&eq2.rho_out)?;
            let c_fock = concurrence(&fock.rho_out)?;
            Ok(ComparisonRow {
                gamma,
                eps: loss_rate_from_gamma(gamma),
                beta,
                c_eq2,
                c_fock,
                abs_diff: (c_eq2 - c_fock).abs(),
                p_success_eq2: eq2.success_probability,
                p_success_fock: fock.success_probability,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.context("model comparison"))
}
