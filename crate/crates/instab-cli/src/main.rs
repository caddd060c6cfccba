//! `instab`: certifies when a noisy linear system is impossible to
//! mean-square stabilize within a time-averaged input power budget.
//!
//! Four subcommands: `analyze` computes certified budget thresholds with
//! every method that applies to the model and writes a machine-readable
//! report; `certify-check` re-verifies a saved certificate from scratch;
//! `simulate` runs Monte Carlo paths under a chosen policy and
//! cross-checks them against the exact moment oracle; `synth-noise`
//! rebuilds a model's additive noise from a certificate so that a chosen
//! budget becomes provably insufficient.
//!
//! Exit codes: 0 success, 1 invalid input, 2 a solver or numerical section
//! failed (a partial report is still written), 3 certificate/model digest
//! mismatch, 4 certificate verification failure.

mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use instab_core::eigen::{self, EigenError};
use instab_core::lmi::{self, Certificate, GridSettings, ThresholdSearch, VerdictStatus};
use instab_core::matrix::{self, HermitianMatrix, Mat, PsdTolerance};
use instab_core::model::SystemModel;
use instab_core::moments::{self, MomentTrajectory, MomentsError};
use instab_core::noise;
use instab_core::scalar;
use instab_core::sdp::ClarabelBackend;
use instab_core::sim::{self, Controller, SimConfig, SimError, SimReport};
use instab_core::Threshold;

use report::{
    AnalysisReport, AuditOut, ControllerOut, EigenSection, EnvelopeSection, LmiSection,
    ModelInfo, OracleOut, ScalarSection, Section, SimConfigOut, SimulationSummary,
    TerminalOut, VerdictSection, ANALYSIS_SCHEMA, MC_DISCLAIMER, SIMULATION_SCHEMA,
    TOOL_VERSION,
};

const EXIT_INVALID: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_DIGEST: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "instab",
    version,
    about = "Certified impossibility of mean-square stabilization under an input power budget"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute certified budget thresholds with every applicable method
    Analyze(AnalyzeArgs),
    /// Re-verify a certificate against a model file, from scratch
    CertifyCheck(CertifyCheckArgs),
    /// Run Monte Carlo paths under a policy and cross-check the moment oracle
    Simulate(SimulateArgs),
    /// Substitute additive noise built from a certificate, defeating a budget
    SynthNoise(SynthNoiseArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Model JSON file, or '-' for standard input
    model: String,
    /// Budget to certify against; also sets the divergence-envelope budget
    #[arg(long)]
    u_hat: Option<f64>,
    /// Number of candidate growth rates scanned
    #[arg(long, default_value_t = 64)]
    phi_grid: usize,
    /// Override the computed upper rate limit (treated as heuristic)
    #[arg(long)]
    phi_max: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct CertifyCheckArgs {
    /// Certificate JSON file
    certificate: PathBuf,
    /// Model JSON file, or '-' for standard input
    model: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model JSON file, or '-' for standard input
    model: String,
    #[arg(long, value_enum, default_value_t = ControllerKind::Zero)]
    controller: ControllerKind,
    /// Feedback gain, row-major input-dim x state-dim entries (use
    /// --gain=-3 style for values starting with a minus)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    gain: Option<Vec<f64>>,
    /// Hard pathwise bound on |u|^2 for the saturated policy
    #[arg(long)]
    power_cap: Option<f64>,
    /// Budget audited against the realized average input power
    #[arg(long)]
    u_hat: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 5.0)]
    t_end: f64,
    /// Initial state entries (default: the origin)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Certificate file whose R weights the reported mean_V
    #[arg(long)]
    certificate: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SynthNoiseArgs {
    /// Certificate JSON file providing the pair (R, rate)
    certificate: PathBuf,
    /// Model JSON file, or '-' for standard input
    model: String,
    /// Budget the constructed noise defeats (default: the model's recorded
    /// budget)
    #[arg(long)]
    u_hat: Option<f64>,
    /// Slack above the minimum required noise energy (default: 1% of one
    /// plus the required level)
    #[arg(long)]
    alpha: Option<f64>,
    /// Column count of the substituted noise matrix (default: keep the
    /// model's count)
    #[arg(long)]
    ell2: Option<usize>,
    /// Directory for the emitted model file (created if missing)
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct OutputArgs {
    /// Directory for output files (created if missing)
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Which output files to write
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerKind {
    Zero,
    Feedback,
    Saturated,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_thread_pool();
    let code = match &cli.command {
        Command::Analyze(args) => run_analyze(args),
        Command::CertifyCheck(args) => run_certify_check(args),
        Command::Simulate(args) => run_simulate(args),
        Command::SynthNoise(args) => run_synth_noise(args),
    };
    ExitCode::from(code)
}

/// INSTAB_THREADS caps inner parallelism; unset means rayon's default.
fn init_thread_pool() {
    if let Ok(s) = std::env::var("INSTAB_THREADS") {
        if let Ok(n) = s.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run_analyze(args: &AnalyzeArgs) -> u8 {
    let (model, stem) = match load_model(&args.model) {
        Ok(v) => v,
        Err(msg) => return invalid(&msg),
    };
    if args.phi_grid == 0 {
        return invalid("--phi-grid must be at least 1");
    }
    if let Some(u) = args.u_hat {
        if !(u >= 0.0) || !u.is_finite() {
            return invalid(&format!("--u-hat must be nonnegative and finite, got {u}"));
        }
    }
    if let Some(p) = args.phi_max {
        if !(p > 0.0) || !p.is_finite() {
            return invalid(&format!("--phi-max must be positive and finite, got {p}"));
        }
    }
    println!(
        "model {stem}: {} states, {} inputs, digest {}",
        model.n(),
        model.m(),
        short_digest(&model.digest())
    );

    let backend = ClarabelBackend;
    let settings = GridSettings {
        points: args.phi_grid,
        phi_max: args.phi_max,
        refine_iters: GridSettings::default().refine_iters,
    };
    let mut timings: BTreeMap<&'static str, f64> = BTreeMap::new();

    let t0 = Instant::now();
    let search = lmi::max_threshold(&model, &backend, &settings);
    timings.insert("lmi", ms(t0));
    let mut certificate = None;
    let mut samples_csv = None;
    let mut lmi_section = match &search {
        Ok(s) => {
            certificate = s.certificate.clone();
            samples_csv = Some(rate_scan_csv(s));
            print_lmi_summary(s, timings["lmi"]);
            Section::ok(LmiSection {
                threshold: s.u_star,
                rate_limit: s.limit,
                grid_points: s.samples.len(),
                certified_rate: s.certificate.as_ref().map(|c| c.phi_l),
                certificate_file: None,
                certificate: certificate
                    .as_ref()
                    .map(|c| serde_json::from_str(&c.to_json_string()).expect("round trip")),
            })
        }
        Err(e) => {
            eprintln!("budget threshold scan failed: {e}");
            Section::error(e.to_string())
        }
    };

    let budget_verdict = args.u_hat.map(|u| {
        let t0 = Instant::now();
        let res = lmi::certify(&model, &backend, Threshold::Finite(u), &settings);
        timings.insert("budget_verdict", ms(t0));
        match res {
            Ok(v) => {
                let verdict = match v.status {
                    VerdictStatus::Instabilizable => "Instabilizable",
                    VerdictStatus::NotCertified => "NotCertified",
                };
                println!("  budget verdict at u_hat = {}: {verdict}", fmt_f(u));
                Section::ok(VerdictSection { u_hat: u, verdict })
            }
            Err(e) => {
                eprintln!("budget certification failed: {e}");
                Section::error(e.to_string())
            }
        }
    });

    let eigen_section = if !model.is_additive_only() {
        let note = "state-proportional noise present; the spectral bound needs a purely additive model";
        println!("  spectral bound: skipped ({note})");
        Section::skipped(note)
    } else {
        let t0 = Instant::now();
        let res = eigen::eigen_threshold(&model);
        timings.insert("eigen", ms(t0));
        match res {
            Ok(a) => {
                println!(
                    "  spectral bound: {} over {} modes [{:.0} ms]",
                    fmt_threshold(a.u_star),
                    a.entries.len(),
                    timings["eigen"]
                );
                Section::ok(EigenSection::from_analysis(&a))
            }
            Err(EigenError::NoUnstableNoisyMode) => {
                let note = "no eigenvalue with positive real part carries additive noise energy; the spectral bound certifies nothing";
                println!("  spectral bound: {note}");
                Section::ok_empty(note)
            }
            Err(e) => {
                eprintln!("spectral bound failed: {e}");
                Section::error(e.to_string())
            }
        }
    };

    let scalar_section = match scalar::scalar_parameters(&model) {
        None => {
            let note = format!(
                "not a scalar system ({} states, {} inputs, {} state-noise channels)",
                model.n(),
                model.m(),
                model.ell1()
            );
            println!("  scalar closed form: skipped ({note})");
            Section::skipped(note)
        }
        Some(p) => {
            let t0 = Instant::now();
            let verdict = scalar::scalar_analyze(p.a, p.b, p.c1, p.d);
            timings.insert("scalar", ms(t0));
            println!(
                "  scalar closed form: {:?}{}",
                verdict.regime,
                verdict
                    .u_threshold
                    .map(|u| format!(", tight threshold {}", fmt_f(u)))
                    .unwrap_or_default()
            );
            Section::ok(ScalarSection { a: p.a, b: p.b, c1: p.c1, d: p.d, verdict })
        }
    };

    let envelope_section = match &certificate {
        None => Section::skipped("the divergence envelope needs a certificate"),
        Some(cert) => {
            let u_env = match (args.u_hat, cert.u_star) {
                (Some(u), _) => u,
                (None, Threshold::Finite(k)) => 0.9 * k,
                (None, Threshold::Unbounded) => 1.0,
            };
            let x0 = DVector::zeros(model.n());
            let t0 = Instant::now();
            let res = moments::divergence_envelope(&model, cert, u_env, &x0);
            timings.insert("envelope", ms(t0));
            match res {
                Ok(c) => {
                    println!(
                        "  divergence envelope at u_hat = {}: c0 = {}, c1 = {}, rate = {} (x0 = 0)",
                        fmt_f(u_env),
                        fmt_f(c.c0),
                        fmt_f(c.c1),
                        fmt_f(c.phi)
                    );
                    Section::ok(EnvelopeSection { u_hat: u_env, c0: c.c0, c1: c.c1, phi: c.phi })
                }
                Err(MomentsError::Threshold(msg)) => {
                    println!("  divergence envelope: skipped ({msg})");
                    Section::skipped(msg)
                }
                Err(e) => {
                    eprintln!("divergence envelope failed: {e}");
                    Section::error(e.to_string())
                }
            }
        }
    };

    let mut failed = lmi_section.failed()
        || eigen_section.failed()
        || scalar_section.failed()
        || envelope_section.failed();
    if let Some(v) = &budget_verdict {
        failed = failed || v.failed();
    }

    if args.output.format.json() {
        if let Some(cert) = &certificate {
            let path = args.output.out.join(format!("{stem}.certificate.json"));
            if let Err(msg) = ensure_dir(&args.output.out) {
                return invalid(&msg);
            }
            if let Err(e) = cert.save(&path) {
                return invalid(&format!("writing certificate: {e}"));
            }
            println!("  certificate written to {}", path.display());
            if let Some(body) = lmi_section.body.as_mut() {
                body.certificate_file = Some(path.display().to_string());
            }
        }
    }

    let report = AnalysisReport {
        schema: ANALYSIS_SCHEMA,
        tool_version: TOOL_VERSION,
        model: ModelInfo::new(&model),
        lmi: lmi_section,
        budget_verdict,
        eigen: eigen_section,
        scalar: scalar_section,
        envelope: envelope_section,
        timings_ms: timings,
    };
    if args.output.format.json() {
        match write_out(&args.output.out, &format!("{stem}.analysis.json"), &report::to_json(&report)) {
            Ok(path) => println!("  report written to {}", path.display()),
            Err(msg) => return invalid(&msg),
        }
    }
    if args.output.format.csv() {
        if let Some(csv) = &samples_csv {
            match write_out(&args.output.out, &format!("{stem}.rate_scan.csv"), csv) {
                Ok(path) => println!("  rate scan written to {}", path.display()),
                Err(msg) => return invalid(&msg),
            }
        }
    }

    if failed { EXIT_SOLVER } else { 0 }
}

fn print_lmi_summary(s: &ThresholdSearch, elapsed_ms: f64) {
    let limit_kind = if s.limit.heuristic { "heuristic" } else { "rigorous" };
    match &s.certificate {
        Some(c) => println!(
            "  budget threshold (semidefinite scan): {} at rate {}; scan limit {} ({limit_kind}) [{elapsed_ms:.0} ms]",
            fmt_threshold(s.u_star),
            fmt_f(c.phi_l),
            fmt_f(s.limit.value),
        ),
        None => println!(
            "  budget threshold (semidefinite scan): no certificate found; scan limit {} ({limit_kind}) [{elapsed_ms:.0} ms]",
            fmt_f(s.limit.value),
        ),
    }
}

/// One row per scanned rate: the rate and the certified threshold there
/// (empty cell when infeasible, `inf` when the input has no leverage).
fn rate_scan_csv(s: &ThresholdSearch) -> String {
    let mut out = String::from("phi,u_star\n");
    for sample in &s.samples {
        let u = match sample.u_star {
            None => String::new(),
            Some(Threshold::Finite(v)) => format!("{v}"),
            Some(Threshold::Unbounded) => "inf".into(),
        };
        out.push_str(&format!("{},{}\n", sample.phi, u));
    }
    out
}

fn run_certify_check(args: &CertifyCheckArgs) -> u8 {
    let (model, _) = match load_model(&args.model) {
        Ok(v) => v,
        Err(msg) => return invalid(&msg),
    };
    let cert = match Certificate::load(&args.certificate) {
        Ok(c) => c,
        Err(e) => return invalid(&format!("loading certificate: {e}")),
    };
    if cert.model_digest != model.digest() {
        eprintln!(
            "certificate was issued for model digest {}, but this model has digest {}",
            short_digest(&cert.model_digest),
            short_digest(&model.digest())
        );
        return EXIT_DIGEST;
    }
    let check = lmi::verify_certificate(&model, &cert, PsdTolerance::default());
    if let Some(r) = &check.residuals {
        println!(
            "residuals: min eig(R) = {:.3e}, tr(R) - 1 = {:.3e}, growth slack min eig = {:.3e}, noise trace = {:.6e}",
            r.r_min_eig, r.trace_dev, r.growth_min_eig, r.noise_trace
        );
    }
    if check.passed() {
        println!(
            "certificate verified: rate {} certifies every budget below {}",
            fmt_f(cert.phi_l),
            fmt_threshold(cert.u_star)
        );
        0
    } else {
        for f in &check.failures {
            eprintln!("check failed: {f}");
        }
        EXIT_CHECK_FAILED
    }
}

/// Rebuilds the model's additive channel from the certificate's (R, rate)
/// pair so the requested budget is provably insufficient, then emits the
/// modified model. R is projected onto the PSD cone first: solver output
/// carries eigenvalue dust at the -1e-11 scale, and the construction's
/// guarantee assumes exact semidefiniteness.
fn run_synth_noise(args: &SynthNoiseArgs) -> u8 {
    let (model, stem) = match load_model(&args.model) {
        Ok(v) => v,
        Err(msg) => return invalid(&msg),
    };
    let cert = match Certificate::load(&args.certificate) {
        Ok(c) => c,
        Err(e) => return invalid(&format!("loading certificate: {e}")),
    };
    if cert.model_digest != model.digest() {
        eprintln!(
            "certificate was issued for model digest {}, but this model has digest {}",
            short_digest(&cert.model_digest),
            short_digest(&model.digest())
        );
        return EXIT_DIGEST;
    }
    let check = lmi::verify_certificate(&model, &cert, PsdTolerance::default());
    if !check.passed() {
        for f in &check.failures {
            eprintln!("check failed: {f}");
        }
        eprintln!("refusing to build on an unverified certificate");
        return EXIT_CHECK_FAILED;
    }
    let u_hat = match args.u_hat.or(model.u_hat.and_then(Threshold::finite)) {
        Some(u) if u >= 0.0 && u.is_finite() => u,
        Some(u) => return invalid(&format!("--u-hat must be nonnegative and finite, got {u}")),
        None => return invalid("--u-hat is required when the model records no finite budget"),
    };
    if let Some(a) = args.alpha {
        if !(a > 0.0) || !a.is_finite() {
            return invalid(&format!("--alpha must be positive and finite, got {a}"));
        }
    }
    let ell2 = args.ell2.unwrap_or_else(|| model.ell2());
    if ell2 == 0 {
        return invalid("--ell2 must be at least 1");
    }

    let r_psd = match matrix::psd_projection(&cert.r) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("projecting R onto the PSD cone failed: {e}");
            return EXIT_SOLVER;
        }
    };
    let built = match noise::construct_noise(
        &HermitianMatrix::from_real(&r_psd),
        &model.b,
        u_hat,
        cert.phi_l,
        args.alpha,
        ell2,
    ) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("noise construction failed: {e}");
            return EXIT_SOLVER;
        }
    };

    let achieved = (built.d.transpose() * &r_psd * &built.d).trace();
    println!(
        "constructed noise from eigenvalue {:.6e} (component {:.6e} at row {}):",
        built.mu_tilde,
        built.xi_entry,
        built.j_tilde + 1
    );
    println!(
        "  energy tr(D'RD) = {:.6e} against required {:.6e} + slack {:.6e}",
        achieved,
        u_hat * cert.beta_u / cert.phi_l,
        built.alpha
    );
    let implied = if cert.beta_u > 0.0 {
        format!(
            "budgets below {} are now certifiably insufficient",
            fmt_f(u_hat + cert.phi_l * built.alpha / cert.beta_u)
        )
    } else {
        "the input has no leverage on R; every budget is insufficient".into()
    };
    println!("  {implied}");

    let mut out_model = model;
    out_model.d = built.d;
    out_model.u_hat = Some(Threshold::Finite(u_hat));
    match write_out(&args.out, &format!("{stem}.synth.json"), &out_model.to_json_string()) {
        Ok(path) => println!("  wrote {}", path.display()),
        Err(msg) => return invalid(&msg),
    }
    0
}

fn run_simulate(args: &SimulateArgs) -> u8 {
    let (model, stem) = match load_model(&args.model) {
        Ok(v) => v,
        Err(msg) => return invalid(&msg),
    };
    let controller = match build_controller(&model, args) {
        Ok(c) => c,
        Err(msg) => return invalid(&msg),
    };
    let x0 = match &args.x0 {
        None => DVector::zeros(model.n()),
        Some(v) => {
            if v.len() != model.n() {
                return invalid(&format!(
                    "--x0 needs {} entries, got {}",
                    model.n(),
                    v.len()
                ));
            }
            DVector::from_column_slice(v)
        }
    };
    let mut rmat: Option<Mat> = None;
    if let Some(path) = &args.certificate {
        let cert = match Certificate::load(path) {
            Ok(c) => c,
            Err(e) => return invalid(&format!("loading certificate: {e}")),
        };
        if cert.model_digest != model.digest() {
            eprintln!(
                "certificate was issued for model digest {}, but this model has digest {}",
                short_digest(&cert.model_digest),
                short_digest(&model.digest())
            );
            return EXIT_DIGEST;
        }
        rmat = Some(cert.r);
    }

    let cfg = SimConfig {
        dt: args.dt,
        t_end: args.t_end,
        n_paths: args.paths,
        seed: args.seed,
        x0: x0.clone(),
    };
    let mut timings: BTreeMap<&'static str, f64> = BTreeMap::new();
    let t0 = Instant::now();
    let rep = match sim::simulate(&model, &controller, &cfg, rmat.as_ref()) {
        Ok(r) => r,
        Err(e) => return invalid(&e.to_string()),
    };
    timings.insert("simulate", ms(t0));

    let last = rep.times.len() - 1;
    println!(
        "simulated {} paths, {} steps of dt = {} [{:.0} ms]",
        rep.n_paths,
        last,
        args.dt,
        timings["simulate"]
    );
    println!(
        "  terminal t = {}: mean |x|^2 = {:.6e} (stderr {:.2e}), avg input power = {:.6e}",
        fmt_f(rep.times[last]),
        rep.mean_x2[last],
        rep.stderr_x2[last],
        rep.u_power_avg[last]
    );
    if let Some(mv) = &rep.mean_v {
        println!("  terminal mean x'Rx = {:.6e}", mv[last]);
    }
    if rep.diverged {
        println!(
            "  {:.1}% of paths passed |x| = {:.0e} and were frozen at their last value",
            100.0 * rep.frac_frozen[last],
            sim::FREEZE_NORM
        );
        println!("  note: {MC_DISCLAIMER}");
    }

    let audit = match args.u_hat {
        None => None,
        Some(u) => match sim::audit_constraint(&rep, u) {
            Ok((satisfied, worst_ratio)) => {
                println!(
                    "  budget audit at u_hat = {}: {} (worst ratio {:.4})",
                    fmt_f(u),
                    if satisfied { "satisfied" } else { "violated" },
                    worst_ratio
                );
                Some(AuditOut { u_hat: u, satisfied, worst_ratio })
            }
            Err(e) => return invalid(&e.to_string()),
        },
    };

    let oracle = run_oracle_comparison(&model, &controller, &x0, &rep, rmat.as_ref(), args, &mut timings);
    if let Some(o) = &oracle {
        match (o.max_deviation_stderr, &o.note) {
            (Some(dev), _) => println!("  moment-oracle cross-check: max deviation {dev:.2} stderr units"),
            (None, Some(note)) => println!("  moment-oracle cross-check: {note}"),
            (None, None) => {}
        }
    }

    if args.output.format.csv() {
        match write_out(&args.output.out, &format!("{stem}.sim.csv"), &rep.to_csv()) {
            Ok(path) => println!("  path statistics written to {}", path.display()),
            Err(msg) => return invalid(&msg),
        }
    }
    if args.output.format.json() {
        let summary = SimulationSummary {
            schema: SIMULATION_SCHEMA,
            tool_version: TOOL_VERSION,
            model: ModelInfo::new(&model),
            controller: controller_out(&controller),
            config: SimConfigOut {
                dt: args.dt,
                t_end: args.t_end,
                n_paths: args.paths,
                seed: args.seed,
                x0: x0.iter().copied().collect(),
            },
            diverged: rep.diverged,
            terminal: TerminalOut {
                t: rep.times[last],
                mean_x2: rep.mean_x2[last],
                stderr_x2: rep.stderr_x2[last],
                mean_v: rep.mean_v.as_ref().map(|v| v[last]),
                u_power_avg: rep.u_power_avg[last],
                frac_frozen: rep.frac_frozen[last],
            },
            audit,
            oracle,
            note: MC_DISCLAIMER,
            timings_ms: timings,
        };
        match write_out(&args.output.out, &format!("{stem}.sim.json"), &report::to_json(&summary)) {
            Ok(path) => println!("  summary written to {}", path.display()),
            Err(msg) => return invalid(&msg),
        }
    }
    0
}

/// Exact-moment cross-check for the policies the oracle covers. The
/// comparison grid is a stride of the simulation grid so times align
/// bitwise-tolerably; a moment-ODE overflow truncates the comparison to
/// the surviving prefix rather than failing the run.
fn run_oracle_comparison(
    model: &SystemModel,
    controller: &Controller,
    x0: &DVector<f64>,
    rep: &SimReport,
    rmat: Option<&Mat>,
    args: &SimulateArgs,
    timings: &mut BTreeMap<&'static str, f64>,
) -> Option<OracleOut> {
    let gain: Option<&Mat> = match controller {
        Controller::Zero => None,
        Controller::LinearFeedback(k) => Some(k),
        Controller::SaturatedFeedback { .. } => {
            return Some(OracleOut {
                max_deviation_stderr: None,
                note: Some(
                    "the moment oracle is exact only for the zero and linear policies".into(),
                ),
            });
        }
    };
    let n_steps = rep.times.len() - 1;
    let stride = (n_steps / 50).max(1);
    let dt_out = stride as f64 * args.dt;
    let t_last = rep.times[n_steps];
    let t0 = Instant::now();
    let (traj, note): (MomentTrajectory, Option<String>) =
        match moments::propagate_moments(model, gain, x0, t_last, dt_out, rmat) {
            Ok(t) => (t, None),
            Err(MomentsError::Blowup { at, partial }) => {
                let note = format!(
                    "moment ODE overflowed at t = {at:.3}; compared on the prefix before it"
                );
                (partial, Some(note))
            }
            Err(e) => {
                timings.insert("oracle", ms(t0));
                return Some(OracleOut {
                    max_deviation_stderr: None,
                    note: Some(format!("moment oracle unavailable: {e}")),
                });
            }
        };
    timings.insert("oracle", ms(t0));
    match sim::compare_to_oracle(rep, &traj) {
        Ok(dev) => Some(OracleOut { max_deviation_stderr: Some(dev), note }),
        Err(SimError::Mismatch(msg)) => Some(OracleOut {
            max_deviation_stderr: None,
            note: Some(format!("comparison impossible: {msg}")),
        }),
        Err(e) => Some(OracleOut { max_deviation_stderr: None, note: Some(e.to_string()) }),
    }
}

fn controller_out(controller: &Controller) -> ControllerOut {
    let rows = |k: &Mat| -> Vec<Vec<f64>> {
        (0..k.nrows())
            .map(|i| (0..k.ncols()).map(|j| k[(i, j)]).collect())
            .collect()
    };
    match controller {
        Controller::Zero => ControllerOut { kind: "zero", gain: None, power_cap: None },
        Controller::LinearFeedback(k) => {
            ControllerOut { kind: "feedback", gain: Some(rows(k)), power_cap: None }
        }
        Controller::SaturatedFeedback { gain, power_cap } => ControllerOut {
            kind: "saturated",
            gain: Some(rows(gain)),
            power_cap: Some(*power_cap),
        },
    }
}

fn build_controller(model: &SystemModel, args: &SimulateArgs) -> Result<Controller, String> {
    let make_gain = || -> Result<Mat, String> {
        let vals = args
            .gain
            .as_ref()
            .ok_or_else(|| "--gain is required for this controller".to_string())?;
        let (m, n) = (model.m(), model.n());
        if vals.len() != m * n {
            return Err(format!(
                "--gain needs {} entries (row-major {m} x {n}), got {}",
                m * n,
                vals.len()
            ));
        }
        Ok(Mat::from_row_slice(m, n, vals))
    };
    match args.controller {
        ControllerKind::Zero => {
            if args.gain.is_some() || args.power_cap.is_some() {
                return Err("--gain and --power-cap only apply to feedback policies".into());
            }
            Ok(Controller::Zero)
        }
        ControllerKind::Feedback => {
            if args.power_cap.is_some() {
                return Err("--power-cap only applies to the saturated policy".into());
            }
            Ok(Controller::LinearFeedback(make_gain()?))
        }
        ControllerKind::Saturated => {
            let cap = args
                .power_cap
                .ok_or_else(|| "--power-cap is required for the saturated policy".to_string())?;
            Ok(Controller::SaturatedFeedback { gain: make_gain()?, power_cap: cap })
        }
    }
}

fn load_model(arg: &str) -> Result<(SystemModel, String), String> {
    if arg == "-" {
        let mut text = String::new();
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| format!("reading standard input: {e}"))?;
        let model = SystemModel::from_json_str(&text).map_err(|e| e.to_string())?;
        Ok((model, "model".into()))
    } else {
        let path = Path::new(arg);
        let model = SystemModel::load(path).map_err(|e| e.to_string())?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model")
            .to_string();
        Ok((model, stem))
    }
}

fn ensure_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("creating {}: {e}", dir.display()))
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, String> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("writing {}: {e}", path.display()))?;
    Ok(path)
}

fn invalid(msg: &str) -> u8 {
    eprintln!("error: {msg}");
    EXIT_INVALID
}

fn ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_threshold(t: Threshold) -> String {
    match t {
        Threshold::Finite(v) => fmt_f(v),
        Threshold::Unbounded => "unbounded".into(),
    }
}

fn short_digest(d: &str) -> &str {
    &d[..d.len().min(12)]
}
