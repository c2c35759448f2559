//! End-to-end pipelines: input and output characterization, the loss sweep
//! and the four robustness configurations.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_8};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{
    analytic_concurrence_vs_loss, fock_channel_output, gamma_from_loss_rate, ChannelConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{
    concurrence, entanglement_fidelity, fit_theta, full_report, MetricReport, ThetaFit,
};
use crate::quantum::DensityMatrix;
use crate::source::{
    calibrate_overlap, delay_for_overlap, pump_hwp, spdc_input_state, SourceConfig,
};
use crate::tomography::{
    bootstrap_metrics, derive_seed, mle_reconstruct, simulate_counts, Metric, TomographyDataset,
    DEFAULT_RESAMPLES,
};

pub const DEFAULT_LOSS_RATE: f64 = 0.9;
pub const DEFAULT_COUNTS: u64 = 4000;
pub const DEFAULT_SEED: u64 = 42;
/// Input concurrence the mixed source is calibrated to.
pub const CALIBRATED_INPUT_CONCURRENCE: f64 = 0.04;
/// Signed compensator count of the reference source (negative: reversed orientation).
pub const REFERENCE_QUARTZ_UNITS: i32 = -2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseId {
    I,
    II,
    III,
    IV,
}

impl CaseId {
    pub const ALL: [CaseId; 4] = [CaseId::I, CaseId::II, CaseId::III, CaseId::IV];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CaseId::I => "I",
            CaseId::II => "II",
            CaseId::III => "III",
            CaseId::IV => "IV",
        };
        f.write_str(s)
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(CaseId::I),
            "II" | "2" => Ok(CaseId::II),
            "III" | "3" => Ok(CaseId::III),
            "IV" | "4" => Ok(CaseId::IV),
            other => Err(Error::invalid(format!(
                "unknown case '{other}' (expected I, II, III or IV)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub case_id: CaseId,
    pub source: SourceConfig,
    pub channel: ChannelConfig,
    pub counts_per_setting: u64,
    pub seed: u64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

impl CaseConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        if self.counts_per_setting == 0 {
            return Err(Error::invalid("counts_per_setting must be positive"));
        }
        if self.bootstrap_resamples < 2 {
            return Err(Error::invalid("bootstrap_resamples must be at least 2"));
        }
        Ok(())
    }
}

/// Balanced pump with the crystal delay calibrated so the reference stack
/// gives input concurrence [`CALIBRATED_INPUT_CONCURRENCE`].
pub fn reference_source(quartz_units: i32) -> Result<SourceConfig> {
    let (c0, c1) = pump_hwp(FRAC_PI_8);
    let o = calibrate_overlap(CALIBRATED_INPUT_CONCURRENCE, c0, c1)?;
    let delay = delay_for_overlap(REFERENCE_QUARTZ_UNITS, o)?;
    SourceConfig::from_settings(FRAC_PI_8, quartz_units, delay)
}

/// Configuration of one robustness case at the default operating point.
///
/// * I: balanced pump, calibrated mixed input, ideal channel.
/// * II: pump along H, product input `|HV⟩`.
/// * III: case I with a quarter-wave plate (`π/2`) on arm c.
/// * IV: case I with the signed crystal count lowered by one (`-2 → -3`).
pub fn default_case(case_id: CaseId) -> CaseConfig {
    let reference = reference_source(REFERENCE_QUARTZ_UNITS).expect("reference source is valid");
    let mut source = reference;
    let mut channel =
        ChannelConfig::from_loss_rate(DEFAULT_LOSS_RATE).expect("default loss rate is valid");
    match case_id {
        CaseId::I => {}
        CaseId::II => {
            source = SourceConfig::from_settings(
                0.0,
                reference.quartz_units,
                reference.delay_per_quartz,
            )
            .expect("horizontal pump is valid");
        }
        CaseId::III => channel.arm_phase_c = FRAC_PI_2,
        CaseId::IV => {
            let units = REFERENCE_QUARTZ_UNITS - 1;
            source = SourceConfig::from_settings(FRAC_PI_8, units, reference.delay_per_quartz)
                .expect("reduced stack is valid");
        }
    }
    CaseConfig {
        case_id,
        source,
        channel,
        counts_per_setting: DEFAULT_COUNTS,
        seed: DEFAULT_SEED,
        bootstrap_resamples: DEFAULT_RESAMPLES,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseReport {
    pub case_id: CaseId,
    /// Metrics of the exact post-selected state.
    pub exact: MetricReport,
    /// Metrics of the maximum-likelihood reconstruction.
    pub tomographic: MetricReport,
    pub entanglement_fidelity_mean: f64,
    pub entanglement_fidelity_std: f64,
    pub concurrence_mean: f64,
    pub concurrence_std: f64,
    pub theta_fit: ThetaFit,
    pub success_probability: f64,
    pub input_concurrence: f64,
    pub mle_converged: bool,
    pub bootstrap_skipped: usize,
}

struct Tomography {
    dataset: TomographyDataset,
    rho_hat: DensityMatrix,
    converged: bool,
    nll: f64,
}

fn reconstruct(rho: &DensityMatrix, counts: u64, seed: u64) -> Result<Tomography> {
    let dataset = simulate_counts(rho, counts, seed)?;
    let fit = mle_reconstruct(&dataset)?;
    Ok(Tomography {
        dataset,
        rho_hat: fit.rho_hat,
        converged: fit.converged,
        nll: fit.nll,
    })
}

/// Source → filter → simulated tomography → reconstruction → metrics with
/// bootstrap errors.
pub fn run_case(cfg: &CaseConfig) -> Result<CaseReport> {
    let label = format!("case {}", cfg.case_id);
    let inner = || -> Result<CaseReport> {
        cfg.validate()?;
        let rho_in = spdc_input_state(&cfg.source)?;
        let out = fock_channel_output(&rho_in, &cfg.channel)?;
        let exact = full_report(&out.rho_out)?;
        let tomo = reconstruct(&out.rho_out, cfg.counts_per_setting, cfg.seed)?;
        let tomographic = full_report(&tomo.rho_hat)?;
        let metrics: [Metric<'_>; 2] = [&concurrence, &entanglement_fidelity];
        let boot = bootstrap_metrics(
            &tomo.dataset,
            &metrics,
            cfg.bootstrap_resamples,
            derive_seed(cfg.seed, 1),
        )?;
        Ok(CaseReport {
            case_id: cfg.case_id,
            exact,
            tomographic,
            entanglement_fidelity_mean: boot[1].mean,
            entanglement_fidelity_std: boot[1].std,
            concurrence_mean: boot[0].mean,
            concurrence_std: boot[0].std,
            theta_fit: fit_theta(&tomo.rho_hat),
            success_probability: out.success_probability,
            input_concurrence: concurrence(&rho_in)?,
            mle_converged: tomo.converged,
            bootstrap_skipped: boot[0].skipped,
        })
    };
    inner().map_err(|e| e.context(label))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub gamma: f64,
    /// Ideal closed form `(ε/(2−ε))²`.
    pub c_analytic: f64,
    /// Exact post-selected concurrence for the configured source and optics.
    pub c_fock_exact: f64,
    /// Concurrence of the reconstruction from simulated counts.
    pub c_tomo: f64,
    pub c_tomo_std: f64,
    pub p_success: f64,
}

/// One row per loss rate; point `k` uses seeds derived from `(base.seed, k)`.
pub fn sweep_loss(eps_grid: &[f64], base: &CaseConfig) -> Result<Vec<SweepRow>> {
    base.validate()?;
    if eps_grid.is_empty() {
        return Err(Error::invalid("loss-rate grid is empty"));
    }
    let rho_in = spdc_input_state(&base.source)?;
    eps_grid
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let point = || -> Result<SweepRow> {
                let gamma = gamma_from_loss_rate(eps)?;
                let channel = ChannelConfig {
                    gamma,
                    ..base.channel
                };
                let out = fock_channel_output(&rho_in, &channel)?;
                let point_seed = derive_seed(base.seed, k as u64);
                let tomo = reconstruct(&out.rho_out, base.counts_per_setting, point_seed)?;
                let metrics: [Metric<'_>; 1] = [&concurrence];
                let boot = bootstrap_metrics(
                    &tomo.dataset,
                    &metrics,
                    base.bootstrap_resamples,
                    derive_seed(point_seed, 1),
                )?;
                Ok(SweepRow {
                    eps,
                    gamma,
                    c_analytic: analytic_concurrence_vs_loss(eps)?,
                    c_fock_exact: concurrence(&out.rho_out)?,
                    c_tomo: concurrence(&tomo.rho_hat)?,
                    c_tomo_std: boot[0].std,
                    p_success: out.success_probability,
                })
            };
            point().map_err(|e| e.context(format!("loss rate {eps}")))
        })
        .collect()
}

/// Evenly spaced loss rates from `min` to `max` inclusive.
pub fn loss_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("steps must be positive"));
    }
    if !(0.0..1.0).contains(&min) || !(0.0..1.0).contains(&max) || min > max {
        return Err(Error::invalid(format!(
            "loss-rate range [{min}, {max}] must satisfy 0 <= min <= max < 1"
        )));
    }
    if steps == 1 {
        return Ok(vec![min]);
    }
    let h = (max - min) / (steps - 1) as f64;
    Ok((0..steps).map(|i| min + h * i as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Output,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Stage::Input),
            "output" => Ok(Stage::Output),
            other => Err(Error::invalid(format!(
                "unknown stage '{other}' (expected input or output)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Characterization {
    pub stage: Stage,
    pub exact: DensityMatrix,
    pub reconstructed: DensityMatrix,
    pub exact_metrics: MetricReport,
    pub tomographic_metrics: MetricReport,
    pub theta_fit_exact: ThetaFit,
    pub dataset: TomographyDataset,
    pub nll: f64,
    pub mle_converged: bool,
}

/// Exact and reconstructed density matrices of the source or filter output.
pub fn characterize(stage: Stage, cfg: &CaseConfig) -> Result<Characterization> {
    cfg.validate()?;
    let rho_in = spdc_input_state(&cfg.source)?;
    let exact = match stage {
        Stage::Input => rho_in,
        Stage::Output => fock_channel_output(&rho_in, &cfg.channel)?.rho_out,
    };
    let tomo = reconstruct(&exact, cfg.counts_per_setting, cfg.seed)?;
    Ok(Characterization {
        stage,
        exact_metrics: full_report(&exact)?,
        tomographic_metrics: full_report(&tomo.rho_hat)?,
        theta_fit_exact: fit_theta(&exact),
        exact,
        reconstructed: tomo.rho_hat,
        dataset: tomo.dataset,
        nll: tomo.nll,
        mle_converged: tomo.converged,
    })
}
