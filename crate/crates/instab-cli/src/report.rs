//! Machine-readable output documents.
//!
//! Every numeric field here is copied from a library result, never
//! recomputed, so the JSON traces one-to-one to module outputs. Documents
//! carry a schema tag so downstream consumers can detect layout changes.

use std::collections::BTreeMap;

use serde::Serialize;

use instab_core::eigen::EigenAnalysis;
use instab_core::lmi::PhiLimit;
use instab_core::model::SystemModel;
use instab_core::scalar::ScalarVerdict;
use instab_core::Threshold;

pub const ANALYSIS_SCHEMA: &str = "instab.analysis/1";
pub const SIMULATION_SCHEMA: &str = "instab.simulation/1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Monte Carlo results never prove anything; stamped on every simulation
/// document.
pub const MC_DISCLAIMER: &str = "Monte Carlo output is illustrative: it samples a \
handful of policies. A verified certificate is the proof object and covers every \
admissible policy.";

#[derive(Serialize)]
pub struct ModelInfo {
    pub digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub state_dim: usize,
    pub input_dim: usize,
    pub state_noise_channels: usize,
    pub input_noise_channels: usize,
    pub additive_only: bool,
    pub scalar: bool,
}

impl ModelInfo {
    pub fn new(model: &SystemModel) -> Self {
        ModelInfo {
            digest: model.digest(),
            label: model.label.clone(),
            state_dim: model.n(),
            input_dim: model.m(),
            state_noise_channels: model.ell1(),
            input_noise_channels: model.ell2(),
            additive_only: model.is_additive_only(),
            scalar: model.is_scalar(),
        }
    }
}

/// One analysis method's slot in the report: ran, was skipped as not
/// applicable, or failed. A failed section never poisons the others.
#[derive(Serialize)]
pub struct Section<T: Serialize> {
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub body: Option<T>,
}

impl<T: Serialize> Section<T> {
    pub fn ok(body: T) -> Self {
        Section { status: "ok", note: None, body: Some(body) }
    }

    pub fn ok_empty(note: impl Into<String>) -> Self {
        Section { status: "ok", note: Some(note.into()), body: None }
    }

    pub fn skipped(note: impl Into<String>) -> Self {
        Section { status: "skipped", note: Some(note.into()), body: None }
    }

    pub fn error(note: impl Into<String>) -> Self {
        Section { status: "error", note: Some(note.into()), body: None }
    }

    pub fn failed(&self) -> bool {
        self.status == "error"
    }
}

#[derive(Serialize)]
pub struct LmiSection {
    /// Largest certified budget threshold found by the rate scan.
    pub threshold: Threshold,
    pub rate_limit: PhiLimit,
    pub grid_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<serde_json::Value>,
}

#[derive(Serialize)]
pub struct VerdictSection {
    pub u_hat: f64,
    pub verdict: &'static str,
}

#[derive(Serialize)]
pub struct EigenModeOut {
    /// Eigenvalue as [re, im].
    pub lambda: [f64; 2],
    pub noise_energy: f64,
    #[serde(rename = "beta_U")]
    pub beta_u: f64,
    pub threshold: Threshold,
    /// Unstable with noise energy: contributes to the bound.
    pub in_set: bool,
    /// Produced by maximizing over a repeated eigenvalue's eigenspace.
    pub refined: bool,
}

#[derive(Serialize)]
pub struct EigenSection {
    pub threshold: Threshold,
    pub eigenspace_refined: bool,
    pub modes: Vec<EigenModeOut>,
}

impl EigenSection {
    pub fn from_analysis(analysis: &EigenAnalysis) -> Self {
        EigenSection {
            threshold: analysis.u_star,
            eigenspace_refined: analysis.eigenspace_refined,
            modes: analysis
                .entries
                .iter()
                .map(|e| EigenModeOut {
                    lambda: [e.lambda.re, e.lambda.im],
                    noise_energy: e.noise_energy,
                    beta_u: e.beta_u,
                    threshold: e.phi,
                    in_set: e.in_set,
                    refined: e.refined,
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
pub struct ScalarSection {
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub d: f64,
    #[serde(flatten)]
    pub verdict: ScalarVerdict,
}

#[derive(Serialize)]
pub struct EnvelopeSection {
    pub u_hat: f64,
    pub c0: f64,
    pub c1: f64,
    pub phi: f64,
}

#[derive(Serialize)]
pub struct AnalysisReport {
    pub schema: &'static str,
    pub tool_version: &'static str,
    pub model: ModelInfo,
    pub lmi: Section<LmiSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_verdict: Option<Section<VerdictSection>>,
    pub eigen: Section<EigenSection>,
    pub scalar: Section<ScalarSection>,
    pub envelope: Section<EnvelopeSection>,
    pub timings_ms: BTreeMap<&'static str, f64>,
}

#[derive(Serialize)]
pub struct ControllerOut {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_cap: Option<f64>,
}

#[derive(Serialize)]
pub struct SimConfigOut {
    pub dt: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
}

#[derive(Serialize)]
pub struct TerminalOut {
    pub t: f64,
    pub mean_x2: f64,
    pub stderr_x2: f64,
    #[serde(rename = "mean_V", skip_serializing_if = "Option::is_none")]
    pub mean_v: Option<f64>,
    pub u_power_avg: f64,
    pub frac_frozen: f64,
}

#[derive(Serialize)]
pub struct AuditOut {
    pub u_hat: f64,
    pub satisfied: bool,
    pub worst_ratio: f64,
}

#[derive(Serialize)]
pub struct OracleOut {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_deviation_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Serialize)]
pub struct SimulationSummary {
    pub schema: &'static str,
    pub tool_version: &'static str,
    pub model: ModelInfo,
    pub controller: ControllerOut,
    pub config: SimConfigOut,
    pub diverged: bool,
    pub terminal: TerminalOut,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleOut>,
    pub note: &'static str,
    pub timings_ms: BTreeMap<&'static str, f64>,
}

pub fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialization is infallible");
    s.push('\n');
    s
}
