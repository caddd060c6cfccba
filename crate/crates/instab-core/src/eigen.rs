//! Closed-form divergence bounds from the unstable eigenstructure.
//!
//! For additive-only dynamics, every left eigenpair (lambda, v) of A with
//! Re(lambda) > 0 and nonzero noise response yields an explicit budget below
//! which no controller can keep the mean-square state bounded: the rank-one
//! candidate R = vv* satisfies the growth condition at rate 2 Re(lambda)
//! exactly, so
//!
//!   phi = 2 Re(lambda) * |D'v|^2 / lambda_max(B'vv*B)
//!
//! is a certified threshold, unbounded when B'v = 0 (the mode is invisible
//! to the input). These bounds need no conic solve and serve as fast checks
//! and as lower references for the full certificate search, which optimizes
//! over all of R and therefore never does worse.

use nalgebra::{Cholesky, Complex, SymmetricEigen};
use thiserror::Error;

use crate::lmi::{self, PhiLimit};
use crate::matrix::{self, CMat, CVec, Mat, NumericalError};
use crate::model::SystemModel;
use crate::threshold::Threshold;

pub use crate::matrix::spectral_abscissa;

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no eigenvalue combines a positive real part with a nonzero noise response")]
    NoUnstableNoisyMode,
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Numerical(#[from] NumericalError),
}

/// One left eigenpair of A with its mode-wise divergence data.
#[derive(Clone, Debug)]
pub struct EigenBoundEntry {
    pub lambda: Complex<f64>,
    /// Unit left eigenvector (eigenvector of A'), first significant
    /// component rotated onto the positive real axis.
    pub v: CVec,
    /// v* D D' v = |D'v|^2, the noise energy entering the mode.
    pub noise_energy: f64,
    /// lambda_max(B' vv* B) = |B'v|^2, the input authority over the mode.
    pub beta_u: f64,
    /// Mode budget 2 Re(lambda) noise / beta; unbounded when beta is zero.
    /// Only meaningful for entries with `in_set`.
    pub phi: Threshold,
    /// Re(lambda) > 0 and noise_energy > 0: the entry bounds the threshold.
    pub in_set: bool,
    /// Synthesized by maximizing over a degenerate eigenspace rather than
    /// taken from the computed nullspace basis.
    pub refined: bool,
}

#[derive(Clone, Debug)]
pub struct EigenAnalysis {
    /// Largest mode budget over the divergent set.
    pub u_star: Threshold,
    /// All recovered eigenpairs, grouped by eigenvalue in descending real
    /// part; an eigenspace maximizer, when present, follows its group.
    pub entries: Vec<EigenBoundEntry>,
    /// Some entry came from an eigenspace search (geometric multiplicity
    /// 2 or 3), a strengthening over per-basis-vector bounds.
    pub eigenspace_refined: bool,
}

/// Top of the certificate search's rate grid for this model. Delegates to
/// the search engine's limit so there is a single source of truth; see
/// [`lmi::phi_upper_limit`] for the bound and its proof.
pub fn phi_grid_limit(model: &SystemModel) -> Result<PhiLimit, EigenError> {
    lmi::phi_upper_limit(model).map_err(|e| match e {
        lmi::LmiError::Numerical(n) => EigenError::Numerical(n),
        other => EigenError::Precondition(other.to_string()),
    })
}

/// Exact threshold for the benchmark oscillator family
/// A = [[0,1],[-1,a]], B = (0,1)', D = d(1,1)', no state noise:
/// d^2 (2-a) a below the real-spectrum seam a = 2, and 4 d^2 (a/2 - 1)
/// above it (both branches meet at 0). Negative a is outside the domain.
pub fn example1_analytic(a: f64, d: f64) -> Result<f64, EigenError> {
    if !a.is_finite() || !d.is_finite() {
        return Err(EigenError::Domain("parameters must be finite".into()));
    }
    if a < 0.0 {
        return Err(EigenError::Domain(format!(
            "closed form requires a >= 0, got {a}"
        )));
    }
    if a < 2.0 {
        Ok(d * d * (2.0 - a) * a)
    } else {
        Ok(4.0 * d * d * (a / 2.0 - 1.0))
    }
}

/// Per-mode divergence bounds and their maximum.
///
/// Requires additive-only dynamics (state-noise matrices absent or zero):
/// with multiplicative noise the rank-one growth identity underlying the
/// bound no longer holds. Returns `NoUnstableNoisyMode` when no eigenvalue
/// has both a positive real part and a nonzero noise response; a Hurwitz A
/// always lands there.
pub fn eigen_threshold(model: &SystemModel) -> Result<EigenAnalysis, EigenError> {
    if let Some(first) = model.validate().into_iter().next() {
        return Err(EigenError::Precondition(first));
    }
    if !model.is_additive_only() {
        return Err(EigenError::Precondition(
            "state-proportional noise present; mode bounds need additive-only dynamics".into(),
        ));
    }
    let tols = Tolerances::for_model(model);
    let n = model.n();
    let at = to_complex(&model.a.transpose());

    let mut entries = Vec::new();
    let mut eigenspace_refined = false;
    for (lambda, _) in cluster_spectrum(&model.a, tols.cluster) {
        let mut shifted = at.clone();
        for k in 0..n {
            shifted[(k, k)] -= lambda;
        }
        let mut basis = matrix::complex_nullspace(&shifted, tols.cluster)?;
        if basis.is_empty() {
            // Clustered representative may sit slightly off the computed
            // eigenvalue; accept the near-null direction and let the
            // residual check below arbitrate.
            basis = matrix::complex_nullspace(&shifted, 1e-6 * tols.a_scale)?;
        }
        if basis.is_empty() {
            return Err(EigenError::Numerical(NumericalError(format!(
                "no left eigenvector recovered at eigenvalue {lambda}"
            ))));
        }
        let group_start = entries.len();
        for v in &basis {
            entries.push(entry_from_vector(model, lambda, v.clone(), false, &tols)?);
        }
        if basis.len() >= 2 && basis.len() <= 3 && lambda.re > tols.re_zero {
            if let Some(best) = maximize_over_eigenspace(model, lambda, &basis, &tols)? {
                let dominated = entries[group_start..].iter().all(|e| {
                    best.phi.partial_cmp_value(e.phi) != Some(std::cmp::Ordering::Less)
                });
                if dominated {
                    entries.push(best);
                    eigenspace_refined = true;
                }
            }
        }
    }

    let mut u_star: Option<Threshold> = None;
    for e in entries.iter().filter(|e| e.in_set) {
        u_star = Some(match u_star {
            None => e.phi,
            Some(cur) => match cur.partial_cmp_value(e.phi) {
                Some(std::cmp::Ordering::Less) => e.phi,
                _ => cur,
            },
        });
    }
    match u_star {
        Some(u_star) => Ok(EigenAnalysis { u_star, entries, eigenspace_refined }),
        None => Err(EigenError::NoUnstableNoisyMode),
    }
}

struct Tolerances {
    a_scale: f64,
    /// Eigenvalues within this distance are one spectral point.
    cluster: f64,
    /// Residual bound for an accepted eigenpair.
    residual: f64,
    /// Positive-real-part test, matching the scan limit's snap-to-zero.
    re_zero: f64,
    /// Numerical zero for the noise energy |D'v|^2.
    noise_zero: f64,
    /// Numerical zero for the input authority |B'v|^2.
    beta_zero: f64,
}

impl Tolerances {
    fn for_model(model: &SystemModel) -> Self {
        let a_scale = 1.0 + model.a.norm();
        Tolerances {
            a_scale,
            cluster: 1e-8 * a_scale,
            residual: 1e-9 * a_scale,
            re_zero: 1e-9 * a_scale,
            noise_zero: 1e-12 * (1.0 + model.d.norm_squared()),
            beta_zero: lmi::beta_zero_tolerance(model),
        }
    }
}

fn to_complex(m: &Mat) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| Complex::new(m[(i, j)], 0.0))
}

/// Distinct eigenvalues of `a` with multiplicities, descending by real then
/// imaginary part. Nearby values merge to their running mean.
fn cluster_spectrum(a: &Mat, tol: f64) -> Vec<(Complex<f64>, usize)> {
    let mut vals: Vec<Complex<f64>> =
        a.clone().complex_eigenvalues().iter().copied().collect();
    vals.sort_by(|p, q| {
        q.re.total_cmp(&p.re).then(q.im.total_cmp(&p.im))
    });
    let mut clusters: Vec<(Complex<f64>, usize)> = Vec::new();
    for z in vals {
        if let Some((rep, count)) = clusters.last_mut() {
            if (z - *rep).norm() <= tol {
                let c = *count as f64;
                *rep = (*rep * c + z) / (c + 1.0);
                *count += 1;
                continue;
            }
        }
        clusters.push((z, 1));
    }
    clusters
}

/// Normalizes, canonicalizes the phase, enforces the eigenpair residual,
/// and evaluates the mode bound. `lambda` may be nudged to the Rayleigh
/// quotient when the clustered representative is slightly off.
fn entry_from_vector(
    model: &SystemModel,
    lambda: Complex<f64>,
    v: CVec,
    refined: bool,
    tols: &Tolerances,
) -> Result<EigenBoundEntry, EigenError> {
    let norm = v.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(EigenError::Numerical(NumericalError(
            "degenerate eigenvector candidate".into(),
        )));
    }
    let mut v = v / Complex::new(norm, 0.0);
    if let Some(k) = (0..v.len()).find(|&k| v[k].norm() > 1e-12) {
        let phase = v[k] / Complex::new(v[k].norm(), 0.0);
        let rot = phase.conj();
        v = v.map(|z| z * rot);
    }

    let at = to_complex(&model.a.transpose());
    let atv = &at * &v;
    let mut lambda = lambda;
    if (&atv - &v * lambda).norm() > tols.residual {
        let rq = v.dotc(&atv);
        if (&atv - &v * rq).norm() > tols.residual {
            return Err(EigenError::Numerical(NumericalError(format!(
                "eigenpair residual exceeds {:.3e} at eigenvalue {lambda}",
                tols.residual
            ))));
        }
        lambda = rq;
    }

    let noise_energy = (to_complex(&model.d.transpose()) * &v).norm_squared();
    let beta_u = (to_complex(&model.b.transpose()) * &v).norm_squared();
    let in_set = lambda.re > tols.re_zero && noise_energy > tols.noise_zero;
    let phi = if beta_u <= tols.beta_zero {
        Threshold::Unbounded
    } else {
        Threshold::Finite(2.0 * lambda.re * noise_energy / beta_u)
    };
    Ok(EigenBoundEntry { lambda, v, noise_energy, beta_u, phi, in_set, refined })
}

/// Best mode bound over a whole eigenspace span(Q), Q orthonormal n x k.
///
/// The bound as a function of v = Qc is the generalized Rayleigh quotient
/// |G c|^2 / |H c|^2 with G = D'Q, H = B'Q. If H has a null direction that
/// still sees noise the bound is unbounded there; otherwise the maximizer
/// is the top eigenvector of the whitened pencil (G*G, H*H), solved
/// exactly on the realified 2k x 2k forms. Returns None when the Cholesky
/// whitening fails (borderline singular H*H): the caller keeps the basis
/// entries, which stay valid lower bounds.
fn maximize_over_eigenspace(
    model: &SystemModel,
    lambda: Complex<f64>,
    basis: &[CVec],
    tols: &Tolerances,
) -> Result<Option<EigenBoundEntry>, EigenError> {
    let n = model.n();
    let k = basis.len();
    let q = CMat::from_fn(n, k, |i, j| basis[j][i]);
    let g = to_complex(&model.d.transpose()) * &q;
    let h = to_complex(&model.b.transpose()) * &q;

    // Exact escape: a direction invisible to the input but visible to the
    // noise has an unbounded budget.
    let null_h = matrix::complex_nullspace(&h, tols.beta_zero.sqrt())?;
    let best_null = null_h
        .into_iter()
        .map(|c| ((&g * &c).norm_squared(), c))
        .filter(|(ne, _)| *ne > tols.noise_zero)
        .max_by(|a, b| a.0.total_cmp(&b.0));
    if let Some((_, c)) = best_null {
        let entry = entry_from_vector(model, lambda, &q * &c, true, tols)?;
        return Ok(Some(entry));
    }

    let gg = g.adjoint() * &g;
    let hh = h.adjoint() * &h;
    let sg = realify_hermitian(&gg);
    let sh = realify_hermitian(&hh);
    let Some(chol) = Cholesky::new(sh) else {
        return Ok(None);
    };
    let l = chol.l();
    let Some(y) = l.solve_lower_triangular(&sg) else {
        return Ok(None);
    };
    let Some(z) = l.solve_lower_triangular(&y.transpose()) else {
        return Ok(None);
    };
    let mut w = z.transpose();
    let wt = w.transpose();
    w = (&w + wt) * 0.5;
    let eig = SymmetricEigen::new(w);
    let mut top = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[top] {
            top = i;
        }
    }
    if !eig.eigenvalues[top].is_finite() {
        return Ok(None);
    }
    let y_top = eig.eigenvectors.column(top).into_owned();
    let Some(zc) = l.transpose().solve_upper_triangular(&y_top) else {
        return Ok(None);
    };
    let c = CVec::from_fn(k, |i, _| Complex::new(zc[i], zc[i + k]));
    if !(c.norm() > 0.0) {
        return Ok(None);
    }
    let entry = entry_from_vector(model, lambda, &q * &c, true, tols)?;
    Ok(Some(entry))
}

/// Real symmetric 2k x 2k representation of a Hermitian form: the quadratic
/// form at (x; y) equals the complex form at x + iy.
fn realify_hermitian(m: &CMat) -> Mat {
    let x = Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re);
    let y = Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].im);
    let t = matrix::realify(&x, &y);
    let tt = t.transpose();
    (&t + tt) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn oscillator(a: f64, c1: f64, c2: f64, d: f64) -> SystemModel {
        let mut c = Vec::new();
        if c1 != 0.0 || c2 != 0.0 {
            c.push(dmatrix![0.0, 0.0; c1, 0.0]);
            c.push(dmatrix![0.0, 0.0; 0.0, c2]);
        }
        SystemModel::new(
            dmatrix![0.0, 1.0; -1.0, a],
            dmatrix![0.0; 1.0],
            c,
            dmatrix![d; d],
        )
        .unwrap()
    }

    // A'(vv*) + (vv*)A = 2 Re(lambda) vv*: the growth condition holds with
    // equality for the rank-one candidate, which is what makes phi valid.
    fn rank_one_identity_holds(a: &Mat, e: &EigenBoundEntry) {
        let at = to_complex(&a.transpose());
        let ac = to_complex(a);
        let vv = &e.v * e.v.adjoint();
        let diff = &at * &vv + &vv * &ac - &vv * Complex::new(2.0 * e.lambda.re, 0.0);
        assert!(
            diff.iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-8,
            "rank-one growth identity violated"
        );
    }

    #[test]
    fn grid_limit_delegates_to_scan_limit() {
        let additive = oscillator(1.5, 0.0, 0.0, 1.0);
        let lim = phi_grid_limit(&additive).unwrap();
        assert_abs_diff_eq!(lim.value, 1.5, epsilon = 1e-12);
        assert!(!lim.heuristic);

        // lambda_max(A + A') = 3 plus 4 + 4 from the state-noise channels.
        let multiplicative = oscillator(1.5, 2.0, 2.0, 1.0);
        let lim = phi_grid_limit(&multiplicative).unwrap();
        assert_abs_diff_eq!(lim.value, 11.0, epsilon = 1e-12);
        assert!(!lim.heuristic);
    }

    #[test]
    fn unstable_oscillator_matches_known_rate() {
        let model = oscillator(1.5, 0.0, 0.0, 1.0);
        let out = eigen_threshold(&model).unwrap();
        assert_abs_diff_eq!(out.u_star.finite().unwrap(), 0.75, epsilon = 1e-9);
        assert_eq!(out.entries.len(), 2);
        for e in &out.entries {
            assert!(e.in_set);
            assert_abs_diff_eq!(e.v.norm(), 1.0, epsilon = 1e-12);
            let at = to_complex(&model.a.transpose());
            let res = (&at * &e.v - &e.v * e.lambda).norm();
            assert!(res <= 1e-9 * (1.0 + model.a.norm()));
            rank_one_identity_holds(&model.a, e);
        }
        assert!(!out.eigenspace_refined);
    }

    #[test]
    fn real_spectrum_above_seam() {
        let model = oscillator(3.0, 0.0, 0.0, 1.0);
        let out = eigen_threshold(&model).unwrap();
        assert_abs_diff_eq!(out.u_star.finite().unwrap(), 2.0, epsilon = 1e-9);
        // Both real eigenvalues give the same budget 2 d^2 (a - 2).
        for e in &out.entries {
            assert!(e.in_set);
            assert_abs_diff_eq!(e.phi.finite().unwrap(), 2.0, epsilon = 1e-9);
            assert_abs_diff_eq!(e.lambda.im, 0.0, epsilon = 1e-9);
            rank_one_identity_holds(&model.a, e);
        }
    }

    #[test]
    fn stable_dynamics_have_no_divergent_mode() {
        let model = oscillator(-0.5, 0.0, 0.0, 1.0);
        assert!(matches!(
            eigen_threshold(&model),
            Err(EigenError::NoUnstableNoisyMode)
        ));
    }

    #[test]
    fn multiplicative_noise_is_rejected() {
        let model = oscillator(1.5, 1.0, 0.0, 1.0);
        assert!(matches!(
            eigen_threshold(&model),
            Err(EigenError::Precondition(_))
        ));
    }

    #[test]
    fn matches_closed_form_on_parameter_grid() {
        for &a in &[0.1, 0.5, 1.0, 1.5, 2.5, 3.0] {
            for &d in &[0.5, 1.0, 2.0] {
                let want = example1_analytic(a, d).unwrap();
                let got = eigen_threshold(&oscillator(a, 0.0, 0.0, d))
                    .unwrap()
                    .u_star
                    .finite()
                    .unwrap();
                assert!(
                    (got - want).abs() <= 1e-6,
                    "a={a} d={d}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn threshold_scales_exactly_with_noise_power() {
        let base = eigen_threshold(&oscillator(1.5, 0.0, 0.0, 1.0))
            .unwrap()
            .u_star
            .finite()
            .unwrap();
        let scaled = eigen_threshold(&oscillator(1.5, 0.0, 0.0, 2.0))
            .unwrap()
            .u_star
            .finite()
            .unwrap();
        assert_abs_diff_eq!(scaled, 4.0 * base, epsilon = 1e-12 * scaled.abs());
    }

    #[test]
    fn closed_form_examples_and_domain() {
        assert_abs_diff_eq!(example1_analytic(1.0, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(example1_analytic(1.5, 2.0).unwrap(), 3.0);
        assert_abs_diff_eq!(example1_analytic(2.0, 1.0).unwrap(), 0.0);
        // Branches meet continuously at the seam.
        let below = example1_analytic(2.0 - 1e-9, 1.0).unwrap();
        assert_abs_diff_eq!(below, 0.0, epsilon = 1e-8);
        assert!(matches!(
            example1_analytic(-0.1, 1.0),
            Err(EigenError::Domain(_))
        ));
        assert!(matches!(
            example1_analytic(f64::NAN, 1.0),
            Err(EigenError::Domain(_))
        ));
    }

    #[test]
    fn phase_and_scale_rescaling_is_canonicalized_away() {
        let model = oscillator(1.5, 0.0, 0.0, 1.0);
        let tols = Tolerances::for_model(&model);
        let out = eigen_threshold(&model).unwrap();
        let e = &out.entries[0];
        for scale in [
            Complex::new(2.0, 0.0),
            Complex::new(0.0, 1.0),
            Complex::new(0.15, -0.26),
        ] {
            let rescaled =
                entry_from_vector(&model, e.lambda, &e.v * scale, false, &tols).unwrap();
            let (a, b) = (
                e.phi.finite().unwrap(),
                rescaled.phi.finite().unwrap(),
            );
            assert_abs_diff_eq!(a, b, epsilon = 1e-9 * (1.0 + a.abs()));
            assert_abs_diff_eq!((&rescaled.v - &e.v).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn degenerate_eigenspace_is_maximized_not_sampled() {
        // lambda = 1 has a two-dimensional left eigenspace; the best mode
        // is interior to it, strictly better than either basis direction.
        let model = SystemModel::new(
            dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0; 0.0, 0.0, 2.0],
            dmatrix![1.0, 0.0; 0.0, 2.0; 0.0, 0.0],
            vec![],
            dmatrix![1.0; 1.0; 0.0],
        )
        .unwrap();
        let out = eigen_threshold(&model).unwrap();
        // max over the plane of 2 |c1 + c2|^2 / (|c1|^2 + 4 |c2|^2) = 2.5.
        assert_abs_diff_eq!(out.u_star.finite().unwrap(), 2.5, epsilon = 1e-9);
        assert!(out.eigenspace_refined);
        let refined: Vec<_> = out.entries.iter().filter(|e| e.refined).collect();
        assert_eq!(refined.len(), 1);
        assert!(refined[0].in_set);

        // Dense sweep of the same plane as an independent oracle.
        let mut grid_best = 0.0_f64;
        for k in 0..=1800 {
            let th = std::f64::consts::PI * (k as f64) / 1800.0;
            let (c1, c2) = (th.cos(), th.sin());
            let noise = (c1 + c2).powi(2);
            let beta = c1 * c1 + 4.0 * c2 * c2;
            grid_best = grid_best.max(2.0 * noise / beta);
        }
        assert!(out.u_star.finite().unwrap() >= grid_best - 1e-6);

        // Each basis entry is dominated by the maximizer.
        for e in out.entries.iter().filter(|e| !e.refined && e.in_set) {
            assert!(e.phi.finite().unwrap() <= 2.5 + 1e-9);
        }
        // The lambda = 2 mode sees no noise and stays out of the set.
        let quiet: Vec<_> = out
            .entries
            .iter()
            .filter(|e| (e.lambda.re - 2.0).abs() < 1e-6)
            .collect();
        assert_eq!(quiet.len(), 1);
        assert!(!quiet[0].in_set);
        assert!(quiet[0].noise_energy.abs() <= 1e-10);
    }

    #[test]
    fn eigenspace_null_direction_makes_budget_unbounded() {
        // Single input: the two-dimensional eigenspace contains a direction
        // the input cannot see but the noise does.
        let model = SystemModel::new(
            dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0; 0.0, 0.0, 2.0],
            dmatrix![1.0; 0.0; 0.0],
            vec![],
            dmatrix![1.0; 1.0; 0.0],
        )
        .unwrap();
        let out = eigen_threshold(&model).unwrap();
        assert!(out.u_star.is_unbounded());
        assert!(out
            .entries
            .iter()
            .any(|e| e.in_set && e.phi.is_unbounded()));
    }

    #[test]
    fn defective_eigenvalue_yields_true_eigenvectors_only() {
        // Jordan block: algebraic multiplicity 2, geometric 1. Only the
        // genuine left eigenvector (0, 1) appears; no eigenspace search.
        let model = SystemModel::new(
            dmatrix![1.0, 1.0; 0.0, 1.0],
            dmatrix![0.0; 1.0],
            vec![],
            dmatrix![0.0; 1.0],
        )
        .unwrap();
        let out = eigen_threshold(&model).unwrap();
        assert_abs_diff_eq!(out.u_star.finite().unwrap(), 2.0, epsilon = 1e-6);
        assert!(!out.eigenspace_refined);
        for e in out.entries.iter().filter(|e| e.in_set) {
            assert_abs_diff_eq!(e.phi.finite().unwrap(), 2.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn spectral_abscissa_reexport_matches() {
        let a = dmatrix![0.0, 1.0; -1.0, 1.5];
        assert_abs_diff_eq!(spectral_abscissa(&a), 0.75, epsilon = 1e-12);
    }
}
