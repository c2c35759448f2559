//! Command-line front end: runs the filter scenarios and writes CSV/JSON artifacts.
//!
//! Parameter precedence, lowest first: built-in defaults, the `--config` JSON
//! file, command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use entfilter_core::channel::{compare_models, gamma_from_loss_rate, ChannelConfig, ComparisonRow};
use entfilter_core::quantum::c;
use entfilter_core::scenarios::{
    characterize, default_case, loss_grid, run_case, sweep_loss, CaseConfig, CaseId, CaseReport,
    Stage, SweepRow,
};
use entfilter_core::source::SourceConfig;

pub const FIG4_HEADER: &str = "eps,gamma,C_analytic,C_fock_exact,C_tomo,C_tomo_std,p_success";
pub const COMPARE_HEADER: &str =
    "gamma,eps,beta,C_eq2,C_fock,abs_diff,p_success_eq2,p_success_fock";
pub const TABLE1_HEADER: &str = "case,C_exact,C_tomo,C_mean,C_std,F_e_exact,F_e_tomo,F_e_mean,F_e_std,theta_fit_over_pi,p_success,C_input,witness_entangled";

#[derive(Debug, Parser)]
#[command(
    name = "entfilter",
    version,
    about = "Loss-based two-photon entanglement filter laboratory"
)]
pub struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Concurrence versus loss rate.
    Fig4(Fig4Args),
    /// The four robustness configurations.
    Table1(Table1Args),
    /// Density matrices of the source or the filter output.
    Tomo(TomoArgs),
    /// Phenomenological versus first-principles filter over a γ grid.
    Compare(CompareArgs),
    /// Check a configuration file and print it in normalized form.
    Validate,
}

#[derive(Debug, Args)]
pub struct StatArgs {
    /// Pairs per tomography setting.
    #[arg(long)]
    pub counts: Option<u64>,
    /// Bootstrap resamples.
    #[arg(long)]
    pub resamples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Fig4Args {
    #[arg(long, default_value_t = 0.0)]
    pub eps_min: f64,
    #[arg(long, default_value_t = 0.95)]
    pub eps_max: f64,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Explicit loss rates; replaces the evenly spaced grid.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub eps: Option<Vec<f64>>,
    #[command(flatten)]
    pub stats: StatArgs,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    /// Run a single case (I, II, III or IV).
    #[arg(long = "case")]
    pub case_id: Option<String>,
    /// Loss rate of the operating point.
    #[arg(long)]
    pub eps: Option<f64>,
    #[command(flatten)]
    pub stats: StatArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Input,
    Output,
}

#[derive(Debug, Args)]
pub struct TomoArgs {
    #[arg(long, value_enum)]
    pub stage: StageArg,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub counts: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub bs1_theta1_deg: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub bs1_theta2_deg: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub bs2_theta1_deg: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub bs2_theta2_deg: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 8.0)]
    pub gamma_max: f64,
    #[arg(long, default_value_t = 33)]
    pub steps: usize,
    /// Explicit γ values; replaces the evenly spaced grid.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub gamma: Option<Vec<f64>>,
    /// Real pulse-shape overlap of a balanced source.
    #[arg(long)]
    pub overlap: Option<f64>,
}

/// Optional overrides read from `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts_per_setting: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_resamples: Option<usize>,
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 2).
    Usage(anyhow::Error),
    /// Failure while computing or writing results (exit 1).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "configuration error: {e:#}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub master_seed: u64,
    pub output_dir: String,
    pub tool_version: String,
}

impl RunManifest {
    fn csv_preamble(&self) -> String {
        format!(
            "# command: {}\n# config_path: {}\n# master_seed: {}\n# output_dir: {}\n# tool_version: {}\n",
            self.command, self.config_path, self.master_seed, self.output_dir, self.tool_version
        )
    }
}

#[derive(Serialize)]
struct ManifestBlock<'a> {
    #[serde(flatten)]
    manifest: &'a RunManifest,
    timestamp_unix: u64,
}

fn manifest_block(m: &RunManifest) -> ManifestBlock<'_> {
    let timestamp_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    ManifestBlock {
        manifest: m,
        timestamp_unix,
    }
}

/// `%.12g`-style formatting: 12 significant digits, trailing zeros trimmed.
pub fn fmt_g12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa.to_string()),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" {
            "0".to_string()
        } else {
            t.to_string()
        }
    } else {
        s
    }
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| anyhow!(e.error))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(runtime)
}

pub fn load_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))
        .map_err(usage)?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid config file {}", path.display()))
        .map_err(usage)
}

pub fn render_fig4_csv(manifest: &RunManifest, rows: &[SweepRow]) -> String {
    let mut out = manifest.csv_preamble();
    out.push_str(FIG4_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.eps,
            r.gamma,
            r.c_analytic,
            r.c_fock_exact,
            r.c_tomo,
            r.c_tomo_std,
            r.p_success,
        ];
        push_row(&mut out, &fields.map(fmt_g12));
    }
    out
}

pub fn render_compare_csv(manifest: &RunManifest, rows: &[ComparisonRow]) -> String {
    let mut out = manifest.csv_preamble();
    out.push_str(COMPARE_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.gamma,
            r.eps,
            r.beta,
            r.c_eq2,
            r.c_fock,
            r.abs_diff,
            r.p_success_eq2,
            r.p_success_fock,
        ];
        push_row(&mut out, &fields.map(fmt_g12));
    }
    out
}

pub fn render_table1_csv(manifest: &RunManifest, reports: &[CaseReport]) -> String {
    let mut out = manifest.csv_preamble();
    out.push_str(TABLE1_HEADER);
    out.push('\n');
    for r in reports {
        let mut fields = vec![r.case_id.to_string()];
        fields.extend(
            [
                r.exact.concurrence,
                r.tomographic.concurrence,
                r.concurrence_mean,
                r.concurrence_std,
                r.exact.entanglement_fidelity,
                r.tomographic.entanglement_fidelity,
                r.entanglement_fidelity_mean,
                r.entanglement_fidelity_std,
                r.tomographic.theta_fit_over_pi,
                r.success_probability,
                r.input_concurrence,
            ]
            .map(fmt_g12),
        );
        fields.push(r.tomographic.witness_entangled.to_string());
        push_row(&mut out, &fields);
    }
    out
}

fn push_row(out: &mut String, fields: &[String]) {
    let _ = writeln!(out, "{}", fields.join(","));
}

struct Context_ {
    manifest: RunManifest,
    file: FileConfig,
    out: PathBuf,
}

impl Context_ {
    /// Defaults, then the config file, then flags.
    fn base_case(
        &self,
        case_id: CaseId,
        eps: Option<f64>,
        counts: Option<u64>,
        resamples: Option<usize>,
    ) -> Result<CaseConfig, CliError> {
        let mut cfg = default_case(case_id);
        if let Some(src) = self.file.source {
            cfg.source = src;
        }
        if let Some(ch) = self.file.channel {
            cfg.channel = ch;
        }
        self.apply_common(&mut cfg, eps, counts, resamples)?;
        Ok(cfg)
    }

    fn apply_common(
        &self,
        cfg: &mut CaseConfig,
        eps: Option<f64>,
        counts: Option<u64>,
        resamples: Option<usize>,
    ) -> Result<(), CliError> {
        if let Some(n) = self.file.counts_per_setting {
            cfg.counts_per_setting = n;
        }
        if let Some(b) = self.file.bootstrap_resamples {
            cfg.bootstrap_resamples = b;
        }
        cfg.seed = self.manifest.master_seed;
        if let Some(eps) = eps {
            cfg.channel.gamma = gamma_from_loss_rate(eps).map_err(usage)?;
        }
        if let Some(n) = counts {
            cfg.counts_per_setting = n;
        }
        if let Some(b) = resamples {
            cfg.bootstrap_resamples = b;
        }
        cfg.validate().map_err(usage)
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let file = match &cli.config {
        Some(path) => load_config(path)?,
        None => FileConfig::default(),
    };
    let master_seed = cli
        .seed
        .or(file.seed)
        .unwrap_or(entfilter_core::scenarios::DEFAULT_SEED);
    let command = match &cli.command {
        Command::Fig4(_) => "fig4",
        Command::Table1(_) => "table1",
        Command::Tomo(_) => "tomo",
        Command::Compare(_) => "compare",
        Command::Validate => "validate",
    };
    let manifest = RunManifest {
        command: command.to_string(),
        config_path: cli
            .config
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "-".to_string()),
        master_seed,
        output_dir: cli.out.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let ctx = Context_ {
        manifest,
        file,
        out: cli.out.clone(),
    };
    match &cli.command {
        Command::Validate => cmd_validate(&ctx),
        Command::Fig4(a) => cmd_fig4(&ctx, a),
        Command::Table1(a) => cmd_table1(&ctx, a),
        Command::Tomo(a) => cmd_tomo(&ctx, a),
        Command::Compare(a) => cmd_compare(&ctx, a),
    }
}

fn ensure_out(ctx: &Context_) -> Result<(), CliError> {
    fs::create_dir_all(&ctx.out)
        .with_context(|| format!("creating output directory {}", ctx.out.display()))
        .map_err(runtime)
}

fn cmd_validate(ctx: &Context_) -> Result<(), CliError> {
    let base = ctx.base_case(CaseId::I, None, None, None)?;
    let normalized = FileConfig {
        source: Some(base.source),
        channel: Some(base.channel),
        counts_per_setting: Some(base.counts_per_setting),
        seed: Some(base.seed),
        bootstrap_resamples: Some(base.bootstrap_resamples),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&normalized).map_err(runtime)?
    );
    Ok(())
}

fn cmd_fig4(ctx: &Context_, a: &Fig4Args) -> Result<(), CliError> {
    let base = ctx.base_case(CaseId::I, None, a.stats.counts, a.stats.resamples)?;
    let grid = match &a.eps {
        Some(list) => {
            for &e in list {
                gamma_from_loss_rate(e).map_err(usage)?;
            }
            list.clone()
        }
        None => loss_grid(a.eps_min, a.eps_max, a.steps).map_err(usage)?,
    };
    ensure_out(ctx)?;
    let rows = sweep_loss(&grid, &base).map_err(runtime)?;
    write_atomic(
        &ctx.out.join("fig4.csv"),
        render_fig4_csv(&ctx.manifest, &rows).as_bytes(),
    )
    .map_err(runtime)?;
    #[derive(Serialize)]
    struct Meta<'a> {
        manifest: ManifestBlock<'a>,
        base: &'a CaseConfig,
        eps_grid: &'a [f64],
    }
    write_json(
        &ctx.out.join("fig4_meta.json"),
        &Meta {
            manifest: manifest_block(&ctx.manifest),
            base: &base,
            eps_grid: &grid,
        },
    )?;
    println!(
        "fig4: {} rows written to {}",
        rows.len(),
        ctx.out.join("fig4.csv").display()
    );
    Ok(())
}

fn cmd_table1(ctx: &Context_, a: &Table1Args) -> Result<(), CliError> {
    let cases: Vec<CaseId> = match &a.case_id {
        Some(s) => vec![s.parse().map_err(usage)?],
        None => CaseId::ALL.to_vec(),
    };
    let mut configs = Vec::with_capacity(cases.len());
    for &id in &cases {
        // the cases fix their own source; a configured channel replaces the
        // ideal one and case III still adds its wave plate on top
        let mut cfg = default_case(id);
        if let Some(mut ch) = ctx.file.channel {
            ch.arm_phase_c += cfg.channel.arm_phase_c;
            cfg.channel = ch;
        }
        ctx.apply_common(&mut cfg, a.eps, a.stats.counts, a.stats.resamples)?;
        configs.push(cfg);
    }
    ensure_out(ctx)?;
    let reports = configs
        .iter()
        .map(run_case)
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    #[derive(Serialize)]
    struct Table<'a> {
        manifest: ManifestBlock<'a>,
        configs: &'a [CaseConfig],
        reports: &'a [CaseReport],
    }
    write_json(
        &ctx.out.join("table1.json"),
        &Table {
            manifest: manifest_block(&ctx.manifest),
            configs: &configs,
            reports: &reports,
        },
    )?;
    write_atomic(
        &ctx.out.join("table1.csv"),
        render_table1_csv(&ctx.manifest, &reports).as_bytes(),
    )
    .map_err(runtime)?;
    for r in &reports {
        println!(
            "case {:>3}: C = {:.3} ± {:.3}, F_e = {:.3} ± {:.3}, witness {}",
            r.case_id.to_string(),
            r.tomographic.concurrence,
            r.concurrence_std,
            r.tomographic.entanglement_fidelity,
            r.entanglement_fidelity_std,
            r.tomographic.witness_entangled
        );
    }
    Ok(())
}

fn cmd_tomo(ctx: &Context_, a: &TomoArgs) -> Result<(), CliError> {
    let mut cfg = ctx.base_case(CaseId::I, a.eps, a.counts, None)?;
    let ch = &mut cfg.channel;
    let set = |slot: &mut f64, deg: Option<f64>| {
        if let Some(d) = deg {
            *slot = d.to_radians();
        }
    };
    set(&mut ch.bs1_thetas.0, a.bs1_theta1_deg);
    set(&mut ch.bs1_thetas.1, a.bs1_theta2_deg);
    set(&mut ch.bs2_thetas.0, a.bs2_theta1_deg);
    set(&mut ch.bs2_thetas.1, a.bs2_theta2_deg);
    cfg.validate().map_err(usage)?;
    let stage = match a.stage {
        StageArg::Input => Stage::Input,
        StageArg::Output => Stage::Output,
    };
    ensure_out(ctx)?;
    let ch = characterize(stage, &cfg).map_err(runtime)?;
    let name = match stage {
        Stage::Input => "input",
        Stage::Output => "output",
    };
    #[derive(Serialize)]
    struct Density<'a> {
        manifest: ManifestBlock<'a>,
        stage: Stage,
        exact: &'a entfilter_core::quantum::DensityMatrix,
        reconstructed: &'a entfilter_core::quantum::DensityMatrix,
        dataset: &'a entfilter_core::tomography::TomographyDataset,
        nll: f64,
        converged: bool,
    }
    #[derive(Serialize)]
    struct Metrics<'a> {
        manifest: ManifestBlock<'a>,
        stage: Stage,
        exact: &'a entfilter_core::metrics::MetricReport,
        tomographic: &'a entfilter_core::metrics::MetricReport,
        theta_fit_exact: &'a entfilter_core::metrics::ThetaFit,
    }
    write_json(
        &ctx.out.join(format!("tomo_{name}_density.json")),
        &Density {
            manifest: manifest_block(&ctx.manifest),
            stage,
            exact: &ch.exact,
            reconstructed: &ch.reconstructed,
            dataset: &ch.dataset,
            nll: ch.nll,
            converged: ch.mle_converged,
        },
    )?;
    write_json(
        &ctx.out.join(format!("tomo_{name}_metrics.json")),
        &Metrics {
            manifest: manifest_block(&ctx.manifest),
            stage,
            exact: &ch.exact_metrics,
            tomographic: &ch.tomographic_metrics,
            theta_fit_exact: &ch.theta_fit_exact,
        },
    )?;
    println!(
        "tomo {name}: C exact {:.4}, reconstructed {:.4}; theta/pi exact {:.4}, reconstructed {:.4}",
        ch.exact_metrics.concurrence,
        ch.tomographic_metrics.concurrence,
        ch.exact_metrics.theta_fit_over_pi,
        ch.tomographic_metrics.theta_fit_over_pi
    );
    Ok(())
}

fn cmd_compare(ctx: &Context_, a: &CompareArgs) -> Result<(), CliError> {
    let mut source = ctx
        .file
        .source
        .unwrap_or_else(|| SourceConfig::balanced(c(0.0, 0.0)));
    if let Some(o) = a.overlap {
        if !(0.0..=1.0).contains(&o) {
            return Err(usage(anyhow!("overlap must lie in [0, 1], got {o}")));
        }
        source.overlap = c(o, 0.0);
    }
    source.validate().map_err(usage)?;
    let grid = match &a.gamma {
        Some(list) => list.clone(),
        None => {
            if a.steps < 2 || !(a.gamma_max > 0.0 && a.gamma_max.is_finite()) {
                return Err(usage(anyhow!(
                    "need --steps >= 2 and a finite --gamma-max > 0"
                )));
            }
            let h = a.gamma_max / (a.steps - 1) as f64;
            (0..a.steps).map(|i| h * i as f64).collect()
        }
    };
    if grid.is_empty() || grid.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
        return Err(usage(anyhow!(
            "gamma grid must be non-empty, finite and >= 0"
        )));
    }
    ensure_out(ctx)?;
    let rows = compare_models(&source, &grid).map_err(runtime)?;
    write_atomic(
        &ctx.out.join("compare.csv"),
        render_compare_csv(&ctx.manifest, &rows).as_bytes(),
    )
    .map_err(runtime)?;
    let worst = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
    println!(
        "compare: {} rows, largest |C_eq2 - C_fock| = {:.4}",
        rows.len(),
        worst
    );
    Ok(())
}

/// Reads a CSV written by this tool: skips `#` lines, returns header and numeric rows.
pub fn read_csv(text: &str) -> (String, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap_or_default().to_string();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

/// Entry point shared by the binary: parses, runs and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
