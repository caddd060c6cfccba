//! Certificate search via semidefinite programming.
//!
//! A certificate is a unit-trace PSD matrix R with a rate phi_L > 0 such
//! that the growth condition `A'R + RA + sum_i C_i' R C_i >= phi_L R` holds,
//! the additive noise registers (`tr(D'RD) > 0`), and the certified budget
//! `u_star = phi_L tr(D'RD) / lambda_max(B'RB)` exceeds the constraint
//! (`u_star` is unbounded when `B'RB = 0`). All three conditions are linear
//! in R once phi_L is fixed, so the search runs a one-dimensional scan over
//! candidate rates with one semidefinite solve per rate.
//!
//! Everything the solver returns is re-verified by direct eigenvalue
//! computation before it is reported; solver status codes are never trusted
//! as the final word. Certificates that fail re-verification are discarded
//! (conservative: a dropped candidate can only under-report the threshold,
//! never falsely certify).
//!
//! Although the divergence argument allows complex Hermitian R, for real
//! system data the real part of any complex certificate is itself a
//! certificate (real quadratic forms preserve semidefiniteness and traces
//! stay real), so the search is restricted to real symmetric R with no loss.

use nalgebra::{DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::matrix::{self, Mat, NumericalError, PsdTolerance};
use crate::model::SystemModel;
use crate::sdp::{
    smat, svec, svec_len, svec_operator, BackendError, ConeSpec, ConicProblem, SdpBackend,
    SolveStatus, SolverTuning,
};
use crate::Threshold;

const EIG_MAX_ITER: usize = 10_000;

#[derive(Debug, Error)]
pub enum LmiError {
    #[error("solver failure at phi = {phi}: {source}")]
    Solver {
        phi: f64,
        #[source]
        source: BackendError,
    },
    #[error("model has no unconstrained channel F")]
    MissingF,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("certificate parse error: {0}")]
    Parse(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerical(#[from] NumericalError),
}

/// Slack of each certificate inequality, by direct eigenvalue computation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Smallest eigenvalue of R (PSD wants >= 0 up to tolerance).
    pub r_min_eig: f64,
    /// tr(R) - 1.
    pub trace_dev: f64,
    /// Smallest eigenvalue of the growth slack A'R + RA + sum C_i'RC_i - phi_L R.
    pub growth_min_eig: f64,
    /// tr(D'RD); must clear 1e-10.
    pub noise_trace: f64,
}

#[derive(Clone, Debug)]
pub struct Certificate {
    /// Real symmetric PSD, trace 1.
    pub r: Mat,
    /// Certified exponential growth rate.
    pub phi_l: f64,
    /// lambda_max(B'RB): the budget's worst-case leverage on the R-form.
    pub beta_u: f64,
    /// tr(D'RD): additive noise injected into the R-form per unit time.
    pub noise_trace: f64,
    /// Certified budget threshold phi_l * noise_trace / beta_u.
    pub u_star: Threshold,
    pub residuals: Residuals,
    /// Digest of the model the certificate was issued for.
    pub model_digest: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictStatus {
    Instabilizable,
    NotCertified,
}

/// Outcome of a budgeted certification scan. `NotCertified` means the scan
/// found nothing; it is NOT a proof that the system can be stabilized.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub certificate: Option<Certificate>,
    pub searched_phi: Vec<f64>,
}

/// Upper end of the candidate-rate scan. For purely additive noise the
/// limit `2 theta_max(A)` is exact: a growth condition at rate phi forces
/// `x(t)'Rx(t) >= exp(phi t) x0'Rx0` along the uncontrolled flow, while
/// `|x(t)|` grows no faster than `exp(theta_max t)` times a polynomial, so
/// no certificate exists above it. With state-proportional noise no such
/// bound is available and the limit is a heuristic, flagged as such.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiLimit {
    pub value: f64,
    pub heuristic: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct GridSettings {
    /// Log-spaced candidate rates spanning three decades up to the limit.
    pub points: usize,
    /// Overrides the computed rate limit (always treated as heuristic).
    pub phi_max: Option<f64>,
    /// Golden-section probes around the best grid point.
    pub refine_iters: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings { points: 64, phi_max: None, refine_iters: 24 }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PhiSample {
    pub phi: f64,
    /// Certified threshold at this rate, if a certificate was verified.
    pub u_star: Option<Threshold>,
}

/// Result of maximizing the certified threshold over the rate grid. The
/// reported value is a lower bound on the true supremum: an incomplete rate
/// search is sound but possibly conservative.
#[derive(Clone, Debug)]
pub struct ThresholdSearch {
    pub u_star: Threshold,
    pub certificate: Option<Certificate>,
    pub samples: Vec<PhiSample>,
    pub limit: PhiLimit,
}

/// Growth form A'R + RA + sum_i C_i' R C_i.
pub fn growth_matrix(model: &SystemModel, r: &Mat) -> Mat {
    let mut g = model.a.transpose() * r + r * &model.a;
    for ci in &model.c {
        g += ci.transpose() * r * ci;
    }
    g
}

/// Largest rate any certificate can attain, hence the top of the scan.
///
/// Additive-only: 2 theta_max(A) by the flow argument on the module-level
/// doc of [`PhiLimit`]. Otherwise lambda_max(A + A') + sum_i
/// lambda_max(C_i'C_i): testing the growth inequality against a unit top
/// eigenvector y of R gives y'(A'R+RA)y = lambda_max(R) y'(A+A')y and
/// y'C'RCy <= lambda_max(R) lambda_max(C'C), so the rate cannot exceed the
/// sum. The second bound dominates the first (lambda_max(A+A') >= 2
/// theta_max), so the additive special case only tightens the grid.
pub fn phi_upper_limit(model: &SystemModel) -> Result<PhiLimit, LmiError> {
    if model.is_additive_only() {
        let mut theta = matrix::spectral_abscissa(&model.a);
        // Schur noise on a marginally stable A must not open a sliver of a
        // grid epsilon past the true boundary.
        if theta.abs() <= 1e-9 * (1.0 + model.a.norm()) {
            theta = 0.0;
        }
        Ok(PhiLimit { value: 2.0 * theta, heuristic: false })
    } else {
        let mut value =
            matrix::sym_eigenvalues(&(&model.a + model.a.transpose()))?[0];
        for ci in &model.c {
            value += matrix::sym_eigenvalues(&(ci.transpose() * ci))?[0];
        }
        Ok(PhiLimit { value, heuristic: false })
    }
}

/// Log-spaced rates over (limit * 1e-3, limit], endpoint included. Empty
/// when the limit is nonpositive (then no positive rate can certify).
pub fn phi_grid(limit: f64, points: usize) -> Vec<f64> {
    if !(limit > 0.0) || !limit.is_finite() || points == 0 {
        return Vec::new();
    }
    if points == 1 {
        return vec![limit];
    }
    (0..points)
        .map(|k| {
            let t = k as f64 / (points - 1) as f64;
            limit * 10f64.powf(-3.0 * (1.0 - t))
        })
        .collect()
}

/// One-rate certification: feasibility of { R PSD, tr R = 1, growth >= phi R,
/// B'RB <= beta I, phi tr(D'RD) - u_hat beta >= margin } with the margin
/// slack maximized. Returns a certificate only after it passes independent
/// re-verification; strict inequalities carry margin 1e-8 (1 + |D|_F^2).
pub fn certify_at<B: SdpBackend>(
    model: &SystemModel,
    backend: &B,
    u_hat: Threshold,
    phi: f64,
) -> Result<Option<Certificate>, LmiError> {
    validate_inputs(model, u_hat)?;
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(LmiError::Invalid(format!(
            "rate must be positive and finite, got {phi}"
        )));
    }
    let maps = Maps::new(model);
    certify_at_inner(model, backend, &maps, u_hat, phi)
}

/// Scans the rate grid and returns the first verified certificate.
pub fn certify<B: SdpBackend + Sync>(
    model: &SystemModel,
    backend: &B,
    u_hat: Threshold,
    settings: &GridSettings,
) -> Result<Verdict, LmiError> {
    validate_inputs(model, u_hat)?;
    let limit = resolved_limit(model, settings)?;
    let grid = phi_grid(limit.value, settings.points);
    let maps = Maps::new(model);
    let results: Vec<Result<Option<Certificate>, LmiError>> = grid
        .par_iter()
        .map(|&phi| certify_at_inner(model, backend, &maps, u_hat, phi))
        .collect();
    let mut certificate = None;
    for res in results {
        if let Some(c) = res? {
            certificate = Some(c);
            break;
        }
    }
    Ok(Verdict {
        status: if certificate.is_some() {
            VerdictStatus::Instabilizable
        } else {
            VerdictStatus::NotCertified
        },
        certificate,
        searched_phi: grid,
    })
}

/// Maximizes the certified threshold over the rate grid, then sharpens the
/// best grid point by golden-section search on log-rate. Ties prefer the
/// smaller rate. The threshold at each rate comes from maximizing tr(D'RD)
/// with the input response capped at B'RB <= I; the trace of R is left free
/// and normalized afterwards, so the cap is the only active scale bound and
/// the ratio is maximized exactly.
pub fn max_threshold<B: SdpBackend + Sync>(
    model: &SystemModel,
    backend: &B,
    settings: &GridSettings,
) -> Result<ThresholdSearch, LmiError> {
    if let Some(first) = model.validate().into_iter().next() {
        return Err(LmiError::Invalid(first));
    }
    let limit = resolved_limit(model, settings)?;
    let grid = phi_grid(limit.value, settings.points);
    let maps = Maps::new(model);
    let evals: Vec<Result<Option<Certificate>, LmiError>> = grid
        .par_iter()
        .map(|&phi| threshold_at(model, backend, &maps, phi))
        .collect();
    let mut samples = Vec::with_capacity(evals.len());
    let mut best: Option<(usize, Certificate)> = None;
    for (idx, res) in evals.into_iter().enumerate() {
        let cand = res?;
        samples.push(PhiSample { phi: grid[idx], u_star: cand.as_ref().map(|c| c.u_star) });
        if let Some(c) = cand {
            if c.u_star.is_unbounded() {
                return Ok(ThresholdSearch {
                    u_star: Threshold::Unbounded,
                    certificate: Some(c),
                    samples,
                    limit,
                });
            }
            if is_better(&c, best.as_ref().map(|(_, b)| b)) {
                best = Some((idx, c));
            }
        }
    }
    let mut best_cert = match best {
        Some((idx, c)) => {
            let lo = if idx > 0 { grid[idx - 1] } else { grid[idx] * 0.1 };
            let hi = if idx + 1 < grid.len() { grid[idx + 1] } else { grid[idx] };
            match refine(model, backend, &maps, lo, hi, settings.refine_iters, c, &mut samples)? {
                RefineOutcome::Finite(c) => Some(c),
                RefineOutcome::Unbounded(c) => {
                    return Ok(ThresholdSearch {
                        u_star: Threshold::Unbounded,
                        certificate: Some(c),
                        samples,
                        limit,
                    });
                }
            }
        }
        None => None,
    };
    let u_star = best_cert
        .as_ref()
        .map(|c| c.u_star)
        .unwrap_or(Threshold::Finite(0.0));
    if let Some(c) = best_cert.take() {
        return Ok(ThresholdSearch { u_star, certificate: Some(c), samples, limit });
    }
    Ok(ThresholdSearch { u_star, certificate: None, samples, limit })
}

/// True iff R annihilates the unconstrained channel (RF = 0 within
/// tolerance), which extends the verdict to the system driven through F by
/// an input of unlimited power.
pub fn check_partial_constraint(
    model: &SystemModel,
    cert: &Certificate,
) -> Result<bool, LmiError> {
    let f = model.f.as_ref().ok_or(LmiError::MissingF)?;
    let rf = &cert.r * f;
    Ok(matrix::max_abs(&rf) <= 1e-9 * (1.0 + matrix::max_abs(&cert.r) * matrix::max_abs(f)))
}

/// Re-verification by direct eigenvalue computation, independent of any
/// solver output. Empty `failures` means every certificate invariant holds.
#[derive(Clone, Debug)]
pub struct CertificateCheck {
    pub residuals: Option<Residuals>,
    pub failures: Vec<String>,
}

impl CertificateCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn verify_certificate(
    model: &SystemModel,
    cert: &Certificate,
    tol: PsdTolerance,
) -> CertificateCheck {
    let mut failures = Vec::new();
    let n = model.n();
    if cert.r.nrows() != n || cert.r.ncols() != n {
        failures.push(format!(
            "R is {}x{}, the model needs {n}x{n}",
            cert.r.nrows(),
            cert.r.ncols()
        ));
        return CertificateCheck { residuals: None, failures };
    }
    if cert.r.iter().any(|v| !v.is_finite()) || !cert.phi_l.is_finite() {
        failures.push("certificate contains non-finite entries".into());
        return CertificateCheck { residuals: None, failures };
    }
    let asym = matrix::max_abs(&(&cert.r - cert.r.transpose()));
    if asym > 1e-9 * (1.0 + matrix::max_abs(&cert.r)) {
        failures.push(format!("R is not symmetric (max asymmetry {asym:.3e})"));
    }
    let r = (&cert.r + cert.r.transpose()) * 0.5;
    let residuals = match compute_residuals(model, &r, cert.phi_l) {
        Ok(res) => res,
        Err(e) => {
            failures.push(format!("eigenvalue computation failed: {e}"));
            return CertificateCheck { residuals: None, failures };
        }
    };
    if cert.phi_l <= 0.0 {
        failures.push(format!("rate must be positive, got {}", cert.phi_l));
    }
    match matrix::is_psd_real(&r, tol) {
        Ok(true) => {}
        Ok(false) => failures.push(format!(
            "R is not PSD (min eigenvalue {:.3e})",
            residuals.r_min_eig
        )),
        Err(e) => failures.push(format!("PSD check failed: {e}")),
    }
    if residuals.trace_dev.abs() > 1e-8 {
        failures.push(format!("tr(R) deviates from 1 by {:.3e}", residuals.trace_dev));
    }
    let growth = growth_matrix(model, &r) - cert.phi_l * &r;
    match matrix::is_psd_real(&growth, tol) {
        Ok(true) => {}
        Ok(false) => failures.push(format!(
            "growth condition fails (min eigenvalue {:.3e})",
            residuals.growth_min_eig
        )),
        Err(e) => failures.push(format!("growth PSD check failed: {e}")),
    }
    if residuals.noise_trace < 1e-10 {
        failures.push(format!(
            "additive noise trace {:.3e} is below the 1e-10 margin",
            residuals.noise_trace
        ));
    }
    if (residuals.noise_trace - cert.noise_trace).abs()
        > 1e-9 * (1.0 + cert.noise_trace.abs())
    {
        failures.push(format!(
            "recorded noise trace {:.6e} does not match recomputed {:.6e}",
            cert.noise_trace, residuals.noise_trace
        ));
    }
    let beta = match matrix::sym_eigenvalues(&(model.b.transpose() * &r * &model.b)) {
        Ok(v) => v[0].max(0.0),
        Err(e) => {
            failures.push(format!("input-response eigenvalue computation failed: {e}"));
            return CertificateCheck { residuals: Some(residuals), failures };
        }
    };
    if (beta - cert.beta_u).abs() > 1e-9 * (1.0 + beta) {
        failures.push(format!(
            "recorded beta_U {:.6e} does not match recomputed {:.6e}",
            cert.beta_u, beta
        ));
    }
    let beta_tol = beta_zero_tolerance(model);
    match cert.u_star {
        Threshold::Finite(u) => {
            if beta <= beta_tol {
                failures.push(
                    "u_star recorded finite but B'RB is numerically zero".into(),
                );
            } else {
                let expect = cert.phi_l * residuals.noise_trace / beta;
                if !(u.is_finite() && (u - expect).abs() <= 1e-6 * (1.0 + u.abs())) {
                    failures.push(format!(
                        "recorded u_star {u:.6e} does not match recomputed {expect:.6e}"
                    ));
                }
            }
        }
        Threshold::Unbounded => {
            if beta > beta_tol {
                failures.push(format!(
                    "u_star recorded unbounded but lambda_max(B'RB) = {beta:.3e} is nonzero"
                ));
            }
        }
    }
    CertificateCheck { residuals: Some(residuals), failures }
}

impl Certificate {
    /// Assembles and audits a certificate from its independent data (R and
    /// the rate); every derived field is recomputed here, never copied from
    /// solver output.
    pub fn from_parts(model: &SystemModel, r: Mat, phi_l: f64) -> Result<Self, LmiError> {
        let beta_u = matrix::sym_eigenvalues(&(model.b.transpose() * &r * &model.b))?[0].max(0.0);
        let noise_trace = (model.d.transpose() * &r * &model.d).trace();
        let u_star = if beta_u <= beta_zero_tolerance(model) {
            Threshold::Unbounded
        } else {
            Threshold::Finite(phi_l * noise_trace / beta_u)
        };
        let residuals = compute_residuals(model, &r, phi_l)?;
        Ok(Certificate {
            r,
            phi_l,
            beta_u,
            noise_trace,
            u_star,
            residuals,
            model_digest: model.digest(),
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&CertDoc::from(self))
            .expect("certificate serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self, LmiError> {
        let doc: CertDoc = serde_json::from_str(s).map_err(|e| LmiError::Parse(e.to_string()))?;
        doc.try_into()
    }

    pub fn load(path: &Path) -> Result<Self, LmiError> {
        let text = fs::read_to_string(path).map_err(|source| LmiError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), LmiError> {
        fs::write(path, self.to_json_string()).map_err(|source| LmiError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CertDoc {
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "phi_L")]
    phi_l: f64,
    #[serde(rename = "beta_U")]
    beta_u: f64,
    noise_trace: f64,
    u_star: Threshold,
    residuals: Residuals,
    model_digest: String,
}

impl From<&Certificate> for CertDoc {
    fn from(c: &Certificate) -> Self {
        CertDoc {
            r: (0..c.r.nrows())
                .map(|i| (0..c.r.ncols()).map(|j| c.r[(i, j)]).collect())
                .collect(),
            phi_l: c.phi_l,
            beta_u: c.beta_u,
            noise_trace: c.noise_trace,
            u_star: c.u_star,
            residuals: c.residuals,
            model_digest: c.model_digest.clone(),
        }
    }
}

impl TryFrom<CertDoc> for Certificate {
    type Error = LmiError;

    fn try_from(doc: CertDoc) -> Result<Self, LmiError> {
        let n = doc.r.len();
        if n == 0 || doc.r.iter().any(|row| row.len() != n) {
            return Err(LmiError::Parse("R must be a nonempty square matrix".into()));
        }
        Ok(Certificate {
            r: Mat::from_fn(n, n, |i, j| doc.r[i][j]),
            phi_l: doc.phi_l,
            beta_u: doc.beta_u,
            noise_trace: doc.noise_trace,
            u_star: doc.u_star,
            residuals: doc.residuals,
            model_digest: doc.model_digest,
        })
    }
}

// ---------------------------------------------------------------------------
// Internals
// ---------------------------------------------------------------------------

/// Problem data in svec coordinates, shared across the grid scan.
struct Maps {
    n: usize,
    m: usize,
    nvec: usize,
    mvec: usize,
    /// Growth operator R -> A'R + RA + sum C_i'RC_i.
    m0: Mat,
    /// Input response R -> B'RB (n-side svec in, m-side svec out).
    g: Mat,
    /// svec(DD'), so w . r = tr(D'RD).
    w: DVector<f64>,
    trace_row: DVector<f64>,
    eye_m: DVector<f64>,
    margin: f64,
}

impl Maps {
    fn new(model: &SystemModel) -> Self {
        let n = model.n();
        let m = model.m();
        Maps {
            n,
            m,
            nvec: svec_len(n),
            mvec: svec_len(m),
            m0: svec_operator(n, n, |x| growth_matrix(model, x)),
            g: svec_operator(n, m, |x| model.b.transpose() * x * &model.b),
            w: svec(&(&model.d * model.d.transpose())),
            trace_row: svec(&Mat::identity(n, n)),
            eye_m: svec(&Mat::identity(m, m)),
            margin: 1e-8 * (1.0 + model.d.norm_squared()),
        }
    }

    /// Growth operator shifted by the rate: M0 - phi I (the map R -> phi R
    /// is phi times the identity in svec coordinates).
    fn m_phi(&self, phi: f64) -> Mat {
        let mut m = self.m0.clone();
        for k in 0..self.nvec {
            m[(k, k)] -= phi;
        }
        m
    }
}

pub(crate) fn beta_zero_tolerance(model: &SystemModel) -> f64 {
    let btb = model.b.transpose() * &model.b;
    let top = matrix::sym_eigenvalues(&btb).map(|v| v[0]).unwrap_or(0.0);
    1e-9 * (1.0 + top.max(0.0))
}

fn validate_inputs(model: &SystemModel, u_hat: Threshold) -> Result<(), LmiError> {
    if let Some(first) = model.validate().into_iter().next() {
        return Err(LmiError::Invalid(first));
    }
    if let Threshold::Finite(u) = u_hat {
        if !(u >= 0.0) || !u.is_finite() {
            return Err(LmiError::Invalid(format!(
                "power budget must be finite and nonnegative, got {u}"
            )));
        }
    }
    Ok(())
}

fn resolved_limit(model: &SystemModel, settings: &GridSettings) -> Result<PhiLimit, LmiError> {
    match settings.phi_max {
        Some(v) => {
            if !(v > 0.0) || !v.is_finite() {
                Err(LmiError::Invalid(format!(
                    "rate limit override must be positive and finite, got {v}"
                )))
            } else {
                Ok(PhiLimit { value: v, heuristic: true })
            }
        }
        None => phi_upper_limit(model),
    }
}

fn compute_residuals(model: &SystemModel, r: &Mat, phi_l: f64) -> Result<Residuals, NumericalError> {
    let r_eigs = matrix::sym_eigenvalues(r)?;
    let growth = growth_matrix(model, r) - phi_l * r;
    let g_eigs = matrix::sym_eigenvalues(&growth)?;
    Ok(Residuals {
        r_min_eig: *r_eigs.last().expect("nonempty spectrum"),
        trace_dev: r.trace() - 1.0,
        growth_min_eig: *g_eigs.last().expect("nonempty spectrum"),
        noise_trace: (model.d.transpose() * r * &model.d).trace(),
    })
}

fn certify_at_inner<B: SdpBackend>(
    model: &SystemModel,
    backend: &B,
    maps: &Maps,
    u_hat: Threshold,
    phi: f64,
) -> Result<Option<Certificate>, LmiError> {
    match u_hat {
        Threshold::Finite(u) => solve_budgeted(model, backend, maps, u, phi),
        Threshold::Unbounded => solve_zero_response(model, backend, maps, phi),
    }
}

/// Rates grazing the feasibility boundary can stall the interior-point
/// method at the default accuracy target; one relaxed retry separates a
/// genuinely broken solve from an over-tight tolerance. Re-verification
/// still gates whatever the retry returns.
fn run_solver<B: SdpBackend>(
    backend: &B,
    prob: &ConicProblem,
    phi: f64,
) -> Result<crate::sdp::Solution, LmiError> {
    match backend.solve(prob, SolverTuning::default()) {
        Ok(sol) => Ok(sol),
        Err(_) => backend
            .solve(prob, SolverTuning::relaxed())
            .map_err(|source| LmiError::Solver { phi, source }),
    }
}

/// Feasibility at a fixed rate and finite budget, with the strict-inequality
/// slack phi tr(D'RD) - u_hat beta maximized for numerical headroom.
fn solve_budgeted<B: SdpBackend>(
    model: &SystemModel,
    backend: &B,
    maps: &Maps,
    u_hat: f64,
    phi: f64,
) -> Result<Option<Certificate>, LmiError> {
    let beta_col = maps.nvec;
    let mut prob = ConicProblem::new(maps.nvec + 1);
    let mut c = vec![0.0; maps.nvec + 1];
    for k in 0..maps.nvec {
        c[k] = -phi * maps.w[k];
    }
    c[beta_col] = u_hat;
    prob.set_objective(&c);
    prob.add_block(
        ConeSpec::Zero(1),
        vec![(0..maps.nvec).map(|k| (k, maps.trace_row[k])).collect()],
        vec![1.0],
    );
    prob.add_dense_block(
        ConeSpec::PsdTriangle(maps.n),
        &(-Mat::identity(maps.nvec, maps.nvec)),
        0,
        vec![0.0; maps.nvec],
    );
    prob.add_dense_block(
        ConeSpec::PsdTriangle(maps.n),
        &(-maps.m_phi(phi)),
        0,
        vec![0.0; maps.nvec],
    );
    let cap_rows = (0..maps.mvec)
        .map(|i| {
            let mut row: Vec<(usize, f64)> =
                (0..maps.nvec).map(|j| (j, maps.g[(i, j)])).collect();
            row.push((beta_col, -maps.eye_m[i]));
            row
        })
        .collect();
    prob.add_block(ConeSpec::PsdTriangle(maps.m), cap_rows, vec![0.0; maps.mvec]);
    prob.add_block(ConeSpec::Nonneg(1), vec![vec![(beta_col, -1.0)]], vec![0.0]);
    let mut margin_row: Vec<(usize, f64)> =
        (0..maps.nvec).map(|k| (k, -phi * maps.w[k])).collect();
    margin_row.push((beta_col, u_hat));
    prob.add_block(ConeSpec::Nonneg(1), vec![margin_row], vec![-maps.margin]);

    let sol = run_solver(backend, &prob, phi)?;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::AlmostOptimal => {
            finalize(model, phi, &sol.x[..maps.nvec])
        }
        SolveStatus::PrimalInfeasible => Ok(None),
        SolveStatus::DualInfeasible => Err(LmiError::Solver {
            phi,
            source: BackendError(
                "unexpected unbounded objective in budgeted feasibility problem".into(),
            ),
        }),
    }
}

/// Threshold maximization at a fixed rate: max tr(D'RD) over certificates
/// with B'RB <= I. Trace-free by design; the cap is the only scale bound, so
/// phi times the optimum is the exact best ratio at this rate. An unbounded
/// objective means B'RB = 0 is attainable with noise, i.e. the threshold is
/// infinite; that branch is confirmed by an explicit feasibility problem.
fn threshold_at<B: SdpBackend>(
    model: &SystemModel,
    backend: &B,
    maps: &Maps,
    phi: f64,
) -> Result<Option<Certificate>, LmiError> {
    let mut prob = ConicProblem::new(maps.nvec);
    let c: Vec<f64> = (0..maps.nvec).map(|k| -maps.w[k]).collect();
    prob.set_objective(&c);
    prob.add_dense_block(
        ConeSpec::PsdTriangle(maps.n),
        &(-Mat::identity(maps.nvec, maps.nvec)),
        0,
        vec![0.0; maps.nvec],
    );
    prob.add_dense_block(
        ConeSpec::PsdTriangle(maps.n),
        &(-maps.m_phi(phi)),
        0,
        vec![0.0; maps.nvec],
    );
    prob.add_dense_block(
        ConeSpec::PsdTriangle(maps.m),
        &maps.g,
        0,
        maps.eye_m.as_slice().to_vec(),
    );
    let sol = run_solver(backend, &prob, phi)?;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::AlmostOptimal => finalize(model, phi, &sol.x),
        SolveStatus::DualInfeasible => solve_zero_response(model, backend, maps, phi),
        SolveStatus::PrimalInfeasible => Err(LmiError::Solver {
            phi,
            source: BackendError(
                "unexpected infeasibility: R = 0 satisfies every constraint".into(),
            ),
        }),
    }
}

/// Feasibility with the input response pinned to zero (B'RB = 0): any
/// solution certifies an unbounded threshold.
fn solve_zero_response<B: SdpBackend>(
    model: &SystemModel,
    backend: &B,
    maps: &Maps,
    phi: f64,
) -> Result<Option<Certificate>, LmiError> {
    let mut prob = ConicProblem::new(maps.nvec);
    let c: Vec<f64> = (0..maps.nvec).map(|k| -maps.w[k]).collect();
    prob.set_objective(&c);
    prob.add_block(
        ConeSpec::Zero(1),
        vec![(0..maps.nvec).map(|k| (k, maps.trace_row[k])).collect()],
        vec![1.0],
    );
    prob.add_dense_block(
        ConeSpec::PsdTriangle(maps.n),
        &(-Mat::identity(maps.nvec, maps.nvec)),
        0,
        vec![0.0; maps.nvec],
    );
    prob.add_dense_block(
        ConeSpec::PsdTriangle(maps.n),
        &(-maps.m_phi(phi)),
        0,
        vec![0.0; maps.nvec],
    );
    prob.add_dense_block(ConeSpec::Zero(maps.mvec), &maps.g, 0, vec![0.0; maps.mvec]);
    prob.add_block(
        ConeSpec::Nonneg(1),
        vec![(0..maps.nvec).map(|k| (k, -maps.w[k])).collect()],
        vec![-maps.margin],
    );
    let sol = run_solver(backend, &prob, phi)?;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::AlmostOptimal => finalize(model, phi, &sol.x),
        SolveStatus::PrimalInfeasible => Ok(None),
        SolveStatus::DualInfeasible => Err(LmiError::Solver {
            phi,
            source: BackendError(
                "unexpected unbounded objective under a unit-trace constraint".into(),
            ),
        }),
    }
}

/// Normalizes a solver iterate to unit trace and accepts it only if the
/// re-verification passes; a failed iterate gets one PSD-projection repair
/// attempt before being dropped.
fn finalize(model: &SystemModel, phi: f64, r_coords: &[f64]) -> Result<Option<Certificate>, LmiError> {
    let r_raw = smat(&DVector::from_column_slice(r_coords), model.n());
    let tr = r_raw.trace();
    if !(tr > 1e-12) {
        return Ok(None);
    }
    let cand = Certificate::from_parts(model, r_raw / tr, phi)?;
    if verify_certificate(model, &cand, PsdTolerance::default()).passed() {
        return Ok(Some(cand));
    }
    if let Some(repaired) = clip_psd(&cand.r) {
        let cand = Certificate::from_parts(model, repaired, phi)?;
        if verify_certificate(model, &cand, PsdTolerance::default()).passed() {
            return Ok(Some(cand));
        }
    }
    Ok(None)
}

/// Nearest-PSD repair: clamp negative eigenvalues to zero, renormalize trace.
fn clip_psd(r: &Mat) -> Option<Mat> {
    let sym = (r + r.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIG_MAX_ITER)?;
    let q = eig.eigenvectors;
    let mut acc = Mat::zeros(r.nrows(), r.ncols());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 0.0 {
            let col = q.column(k);
            acc += lam * &col * col.transpose();
        }
    }
    let tr = acc.trace();
    if tr > 1e-12 {
        Some(acc / tr)
    } else {
        None
    }
}

fn is_better(cand: &Certificate, best: Option<&Certificate>) -> bool {
    match best {
        None => true,
        Some(b) => match cand.u_star.partial_cmp_value(b.u_star) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Equal) => cand.phi_l < b.phi_l,
            _ => false,
        },
    }
}

enum RefineOutcome {
    Finite(Certificate),
    Unbounded(Certificate),
}

/// Golden-section sharpening of the threshold curve on log-rate over
/// [lo, hi]. Every probe is recorded and the best certificate ever seen is
/// kept, so refinement can only improve on the grid answer.
fn refine<B: SdpBackend>(
    model: &SystemModel,
    backend: &B,
    maps: &Maps,
    lo: f64,
    hi: f64,
    iters: usize,
    mut best: Certificate,
    samples: &mut Vec<PhiSample>,
) -> Result<RefineOutcome, LmiError> {
    if !(lo > 0.0) || !(hi > lo) || iters == 0 {
        return Ok(RefineOutcome::Finite(best));
    }
    const INV_GOLDEN: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let eval = |phi: f64,
                    best: &mut Certificate,
                    samples: &mut Vec<PhiSample>|
     -> Result<Option<f64>, LmiError> {
        let cand = threshold_at(model, backend, maps, phi)?;
        samples.push(PhiSample { phi, u_star: cand.as_ref().map(|c| c.u_star) });
        match cand {
            None => Ok(Some(f64::NEG_INFINITY)),
            Some(c) => {
                if c.u_star.is_unbounded() {
                    *best = c;
                    return Ok(None);
                }
                let value = c.u_star.finite().expect("finite by branch");
                if is_better(&c, Some(best)) {
                    *best = c;
                }
                Ok(Some(value))
            }
        }
    };
    let mut c_pt = b - (b - a) * INV_GOLDEN;
    let mut d_pt = a + (b - a) * INV_GOLDEN;
    let mut fc = match eval(c_pt.exp(), &mut best, samples)? {
        Some(v) => v,
        None => return Ok(RefineOutcome::Unbounded(best)),
    };
    let mut fd = match eval(d_pt.exp(), &mut best, samples)? {
        Some(v) => v,
        None => return Ok(RefineOutcome::Unbounded(best)),
    };
    for _ in 0..iters {
        if fc > fd {
            b = d_pt;
            d_pt = c_pt;
            fd = fc;
            c_pt = b - (b - a) * INV_GOLDEN;
            fc = match eval(c_pt.exp(), &mut best, samples)? {
                Some(v) => v,
                None => return Ok(RefineOutcome::Unbounded(best)),
            };
        } else {
            a = c_pt;
            c_pt = d_pt;
            fc = fd;
            d_pt = a + (b - a) * INV_GOLDEN;
            fd = match eval(d_pt.exp(), &mut best, samples)? {
                Some(v) => v,
                None => return Ok(RefineOutcome::Unbounded(best)),
            };
        }
    }
    Ok(RefineOutcome::Finite(best))
}
