//! Deterministic second-moment oracles.
//!
//! Under linear feedback u = Kx the covariance P(t) = E[x x'] obeys the
//! linear matrix ODE
//!
//!   dP/dt = (A+BK) P + P (A+BK)' + sum_i C_i P C_i' + D D',
//!
//! integrated here with an adaptive Dormand-Prince 5(4) scheme on the packed
//! upper triangle. The module also carries the reverse-Gronwall curve
//!
//!   h(t) = c0 e^{phi t} + (c1/phi)(e^{phi t} - 1),
//!
//! the floor that a verified certificate places under E[x'Rx] for every
//! admissible policy, not just linear ones. Moment propagation gives exact
//! trajectories for specific controllers; the envelope bounds all of them
//! from below, which is what makes divergence claims checkable.

use nalgebra::DVector;
use thiserror::Error;

use crate::lmi::{self, Certificate};
use crate::matrix::{Mat, NumericalError, PsdTolerance};
use crate::model::SystemModel;

/// Default ceiling on max|P| past which integration stops and reports the
/// trajectory so far as divergence evidence.
pub const DEFAULT_OVERFLOW_CAP: f64 = 1e30;

const RTOL: f64 = 1e-10;
const ATOL: f64 = 1e-12;
const MAX_STEPS: usize = 50_000_000;

#[derive(Debug, Error)]
pub enum MomentsError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("budget is not below the certified threshold: {0}")]
    Threshold(String),
    #[error("second moment exceeded the overflow cap at t = {at}")]
    Blowup {
        at: f64,
        /// Samples accumulated before the cap was hit.
        partial: MomentTrajectory,
    },
    #[error(transparent)]
    Numerical(#[from] NumericalError),
}

/// Sampled covariance trajectory, optionally with EV(t) = tr(R P(t)).
#[derive(Clone, Debug)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub p: Vec<Mat>,
    pub ev: Option<Vec<f64>>,
}

impl MomentTrajectory {
    /// CSV with header `t,P_11,...,P_nn[,EV]`, upper triangle in column
    /// order, one row per sample.
    pub fn to_csv(&self) -> String {
        let n = self.p.first().map_or(0, Mat::nrows);
        let mut out = String::from("t");
        for j in 0..n {
            for i in 0..=j {
                out.push_str(&format!(",P_{}{}", i + 1, j + 1));
            }
        }
        if self.ev.is_some() {
            out.push_str(",EV");
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for j in 0..n {
                for i in 0..=j {
                    out.push_str(&format!(",{}", self.p[k][(i, j)]));
                }
            }
            if let Some(ev) = &self.ev {
                out.push_str(&format!(",{}", ev[k]));
            }
            out.push('\n');
        }
        out
    }
}

/// Exponential lower-bound curve h(t) = c0 e^{phi t} + (c1/phi)(e^{phi t}-1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GronwallCurve {
    pub c0: f64,
    pub c1: f64,
    /// Growth rate; positive by construction.
    pub phi: f64,
}

/// Evaluates the curve; this is the exact solution of h' = c1 + phi h,
/// h(0) = c0, so an inequality h' >= c1 + phi h integrates to h(t) >= this.
pub fn gronwall_lower_bound(curve: GronwallCurve, t: f64) -> f64 {
    assert!(curve.phi > 0.0, "curve rate must be positive");
    assert!(t >= 0.0, "time must be nonnegative");
    let growth = (curve.phi * t).exp();
    curve.c0 * growth + curve.c1 / curve.phi * (growth - 1.0)
}

/// Integrates the covariance ODE from P(0) = x0 x0', sampling at multiples
/// of `dt_out` up to `t_end`. `gain` of None means zero input. Supplying
/// `r` adds EV(t) = tr(R P(t)) to the trajectory.
pub fn propagate_moments(
    model: &SystemModel,
    gain: Option<&Mat>,
    x0: &DVector<f64>,
    t_end: f64,
    dt_out: f64,
    r: Option<&Mat>,
) -> Result<MomentTrajectory, MomentsError> {
    propagate_moments_capped(model, gain, x0, t_end, dt_out, r, DEFAULT_OVERFLOW_CAP)
}

/// Same with an explicit overflow cap.
pub fn propagate_moments_capped(
    model: &SystemModel,
    gain: Option<&Mat>,
    x0: &DVector<f64>,
    t_end: f64,
    dt_out: f64,
    r: Option<&Mat>,
    cap: f64,
) -> Result<MomentTrajectory, MomentsError> {
    if let Some(first) = model.validate().into_iter().next() {
        return Err(MomentsError::Invalid(first));
    }
    let n = model.n();
    if x0.len() != n {
        return Err(MomentsError::Invalid(format!(
            "x0 has length {}, state dimension is {n}",
            x0.len()
        )));
    }
    if !(t_end > 0.0) || !t_end.is_finite() || !(dt_out > 0.0) || !dt_out.is_finite() {
        return Err(MomentsError::Invalid(format!(
            "t_end and dt_out must be positive, got {t_end} and {dt_out}"
        )));
    }
    if let Some(k) = gain {
        if k.nrows() != model.m() || k.ncols() != n {
            return Err(MomentsError::Invalid(format!(
                "gain is {} x {}, expected {} x {}",
                k.nrows(),
                k.ncols(),
                model.m(),
                n
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(MomentsError::Invalid("gain has non-finite entries".into()));
        }
    }
    if let Some(r) = r {
        if r.nrows() != n || r.ncols() != n {
            return Err(MomentsError::Invalid(format!(
                "R is {} x {}, expected {n} x {n}",
                r.nrows(),
                r.ncols()
            )));
        }
    }
    if !(cap > 0.0) {
        return Err(MomentsError::Invalid("overflow cap must be positive".into()));
    }

    let a_cl = match gain {
        Some(k) => &model.a + &model.b * k,
        None => model.a.clone(),
    };
    let drive = &model.d * model.d.transpose();
    let deriv = |p: &Mat| -> Mat {
        let mut f = &a_cl * p + p * a_cl.transpose() + &drive;
        for ci in &model.c {
            f += ci * p * ci.transpose();
        }
        // The exact flow is symmetric; averaging kills roundoff drift.
        let ft = f.transpose();
        (f + ft) * 0.5
    };

    let n_samples = (t_end / dt_out + 1e-9).floor() as usize;
    let mut times = Vec::with_capacity(n_samples + 1);
    let mut samples = Vec::with_capacity(n_samples + 1);
    let p0 = x0 * x0.transpose();
    times.push(0.0);
    samples.push(p0.clone());

    let dim = n * (n + 1) / 2;
    let mut y = pack(&p0);
    let mut t = 0.0_f64;
    let mut h = (dt_out / 10.0).min(t_end).max(1e-8);
    let mut k1 = pack(&deriv(&unpack(&y, n)));
    let mut steps = 0usize;

    for sample_idx in 1..=n_samples {
        let t_target = sample_idx as f64 * dt_out;
        while t < t_target {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(MomentsError::Numerical(NumericalError(
                    "step budget exhausted; the moment ODE is too stiff at this tolerance"
                        .into(),
                )));
            }
            let mut h_try = h.min(t_target - t);
            if h_try < 1e-14 * (1.0 + t) {
                h_try = 1e-14 * (1.0 + t);
            }
            let (y5, k7, err) = dopri_step(&deriv, &y, &k1, h_try, n);
            let mut scale_err = 0.0_f64;
            for j in 0..dim {
                let sc = ATOL + RTOL * y[j].abs().max(y5[j].abs());
                scale_err = scale_err.max((err[j] / sc).abs());
            }
            if scale_err <= 1.0 {
                t += h_try;
                y = y5;
                k1 = k7; // first-same-as-last: stage 7 is the next stage 1
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(MomentsError::Blowup {
                        at: t,
                        partial: finish(times, samples, r),
                    });
                }
                let reach = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if reach > cap {
                    return Err(MomentsError::Blowup {
                        at: t,
                        partial: finish(times, samples, r),
                    });
                }
            }
            let factor = if scale_err > 0.0 {
                (0.9 * scale_err.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            h = (h_try * factor).min(t_end);
        }
        times.push(t_target);
        samples.push(unpack(&y, n));
    }

    Ok(finish(times, samples, r))
}

/// Policy-independent lower-bound curve for EV(t) = E[x'Rx] at budget
/// `u_hat`, from a verified certificate with u_hat below its threshold.
///
/// With no input authority (beta_U = 0) the curve is exactly (x0'Rx0,
/// tr(D'RD), phi_L). Otherwise the explicit witness q = 2k/(u_hat+k) with
/// k = u_star is used, giving c1 = tr(D'RD) - (q/phi_L) beta_U u_hat > 0
/// and rate phi_L (1 - 1/q) > 0; the curve is valid but not the tightest
/// member of its family.
pub fn divergence_envelope(
    model: &SystemModel,
    cert: &Certificate,
    u_hat: f64,
    x0: &DVector<f64>,
) -> Result<GronwallCurve, MomentsError> {
    if !(u_hat >= 0.0) || !u_hat.is_finite() {
        return Err(MomentsError::Invalid(format!(
            "u_hat must be nonnegative and finite, got {u_hat}"
        )));
    }
    if x0.len() != model.n() {
        return Err(MomentsError::Invalid(format!(
            "x0 has length {}, state dimension is {}",
            x0.len(),
            model.n()
        )));
    }
    let check = lmi::verify_certificate(model, cert, PsdTolerance::default());
    if !check.passed() {
        return Err(MomentsError::Invalid(format!(
            "certificate failed verification: {}",
            check.failures.join("; ")
        )));
    }

    let c0 = (x0.transpose() * &cert.r * x0)[(0, 0)];
    let noise = cert.noise_trace;
    let phi_l = cert.phi_l;
    if cert.beta_u <= lmi::beta_zero_tolerance(model) {
        return Ok(GronwallCurve { c0, c1: noise, phi: phi_l });
    }
    let kappa = match cert.u_star.finite() {
        Some(k) => k,
        None => {
            // Unbounded threshold with positive authority cannot pass
            // verification; guard anyway.
            return Ok(GronwallCurve { c0, c1: noise, phi: phi_l });
        }
    };
    if u_hat >= kappa {
        return Err(MomentsError::Threshold(format!(
            "u_hat = {u_hat} is not below the certified threshold {kappa}"
        )));
    }
    let q = 2.0 * kappa / (u_hat + kappa);
    let c1 = noise - q / phi_l * cert.beta_u * u_hat;
    let phi = phi_l * (1.0 - 1.0 / q);
    if !(c1 > 0.0) || !(phi > 0.0) {
        return Err(MomentsError::Numerical(NumericalError(format!(
            "envelope degenerated: c1 = {c1}, phi = {phi}"
        ))));
    }
    Ok(GronwallCurve { c0, c1, phi })
}

fn finish(times: Vec<f64>, samples: Vec<Mat>, r: Option<&Mat>) -> MomentTrajectory {
    let ev = r.map(|r| samples.iter().map(|p| (r * p).trace()).collect());
    MomentTrajectory { times, p: samples, ev }
}

/// Upper triangle in column order, matching the CSV layout.
fn pack(p: &Mat) -> DVector<f64> {
    let n = p.nrows();
    let mut y = DVector::zeros(n * (n + 1) / 2);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            y[k] = p[(i, j)];
            k += 1;
        }
    }
    y
}

fn unpack(y: &DVector<f64>, n: usize) -> Mat {
    let mut p = Mat::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            p[(i, j)] = y[k];
            p[(j, i)] = y[k];
            k += 1;
        }
    }
    p
}

/// One Dormand-Prince 5(4) step: returns the 5th-order update, the last
/// stage (reusable as the next first stage), and the embedded error vector.
fn dopri_step<F: Fn(&Mat) -> Mat>(
    deriv: &F,
    y: &DVector<f64>,
    k1: &DVector<f64>,
    h: f64,
    n: usize,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    const A2: [f64; 1] = [1.0 / 5.0];
    const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
    const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
    const A5: [f64; 4] =
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
    const A6: [f64; 5] = [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ];
    const B5: [f64; 6] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let eval = |v: &DVector<f64>| pack(&deriv(&unpack(v, n)));
    let stage = |coef: &[f64], ks: &[&DVector<f64>]| {
        let mut s = y.clone();
        for (c, k) in coef.iter().zip(ks) {
            s += *k * (c * h);
        }
        s
    };

    let k2 = eval(&stage(&A2, &[k1]));
    let k3 = eval(&stage(&A3, &[k1, &k2]));
    let k4 = eval(&stage(&A4, &[k1, &k2, &k3]));
    let k5 = eval(&stage(&A5, &[k1, &k2, &k3, &k4]));
    let k6 = eval(&stage(&A6, &[k1, &k2, &k3, &k4, &k5]));
    let y5 = stage(&B5, &[k1, &k2, &k3, &k4, &k5, &k6]);
    let k7 = eval(&y5);

    let mut err = DVector::zeros(y.len());
    let ks = [k1, &k2, &k3, &k4, &k5, &k6, &k7];
    for (i, k) in ks.iter().enumerate() {
        let b5i = if i < 6 { B5[i] } else { 0.0 };
        err += *k * ((b5i - B4[i]) * h);
    }
    (y5, k7, err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::GridSettings;
    use crate::matrix;
    use crate::sdp::ClarabelBackend;
    use crate::threshold::Threshold;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    fn oscillator(a: f64, d: f64) -> SystemModel {
        SystemModel::new(
            dmatrix![0.0, 1.0; -1.0, a],
            dmatrix![0.0; 1.0],
            vec![],
            dmatrix![d; d],
        )
        .unwrap()
    }

    #[test]
    fn gronwall_boundary_examples() {
        let e = gronwall_lower_bound(GronwallCurve { c0: 1.0, c1: 0.0, phi: 1.0 }, 1.0);
        assert_abs_diff_eq!(e, std::f64::consts::E, epsilon = 1e-12);
        let zero = gronwall_lower_bound(GronwallCurve { c0: 0.0, c1: 2.0, phi: 1.0 }, 0.0);
        assert_abs_diff_eq!(zero, 0.0);
    }

    // Small deterministic generator so the draws are reproducible without
    // an RNG dependency.
    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    // h' = c1 + phi h integrated with classic RK4 at a fixed small step: an
    // independent oracle for the closed form, including its equality clause.
    fn rk4_oracle(c0: f64, c1: f64, phi: f64, t: f64, steps: usize) -> f64 {
        let h = t / steps as f64;
        let f = |v: f64| c1 + phi * v;
        let mut v = c0;
        for _ in 0..steps {
            let k1 = f(v);
            let k2 = f(v + 0.5 * h * k1);
            let k3 = f(v + 0.5 * h * k2);
            let k4 = f(v + h * k3);
            v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        v
    }

    #[test]
    fn closed_form_matches_independent_integration() {
        let cases = {
            let mut s = 0x5eed_u64;
            let mut v = vec![(1.0, 1.0, 0.5, 2.0)];
            for _ in 0..100 {
                v.push((
                    4.0 * splitmix(&mut s) - 2.0,
                    4.0 * splitmix(&mut s) - 2.0,
                    3.0 * splitmix(&mut s).max(1e-3),
                    10.0 * splitmix(&mut s),
                ));
            }
            v
        };
        for (c0, c1, phi, t) in cases {
            let closed = gronwall_lower_bound(GronwallCurve { c0, c1, phi }, t);
            let steps = ((t / 1e-3).ceil() as usize).max(10);
            let integrated = rk4_oracle(c0, c1, phi, t, steps);
            assert!(
                (closed - integrated).abs() <= 1e-8 * (1.0 + closed.abs()),
                "c0={c0} c1={c1} phi={phi} t={t}: {closed} vs {integrated}"
            );
        }
    }

    #[test]
    fn ou_variance_relaxes_to_stationary_level() {
        // P' = -2P + 2 from P(0)=0 has P(t) = 1 - e^{-2t}.
        let model = SystemModel::new(
            dmatrix![-1.0],
            dmatrix![0.0],
            vec![],
            dmatrix![2.0_f64.sqrt()],
        )
        .unwrap();
        let traj =
            propagate_moments(&model, None, &dvector![0.0], 2.0, 0.25, None).unwrap();
        for (t, p) in traj.times.iter().zip(&traj.p) {
            let want = 1.0 - (-2.0 * t).exp();
            assert_abs_diff_eq!(p[(0, 0)], want, epsilon = 1e-8);
        }
        let p1 = traj.p[4][(0, 0)];
        assert_abs_diff_eq!(p1, 0.864_664_716_763_387_3, epsilon = 1e-8);
    }

    #[test]
    fn stabilized_scalar_tracks_closed_form_and_its_bound() {
        let model =
            SystemModel::new(dmatrix![1.5], dmatrix![1.0], vec![], dmatrix![1.0]).unwrap();
        let gain = dmatrix![-3.0];
        let traj = propagate_moments(&model, Some(&gain), &dvector![0.0], 6.0, 0.05, None)
            .unwrap();
        let mut last = -1.0;
        for (t, p) in traj.times.iter().zip(&traj.p) {
            let want = (1.0 - (-3.0 * t).exp()) / 3.0;
            assert_abs_diff_eq!(p[(0, 0)], want, epsilon = 1e-8);
            assert!(p[(0, 0)] <= 1.0 / 3.0 + 1e-9, "bound exceeded at t={t}");
            assert!(p[(0, 0)] >= last - 1e-12, "moment must be nondecreasing");
            last = p[(0, 0)];
        }
        let tail = traj.p.last().unwrap()[(0, 0)];
        assert_abs_diff_eq!(tail, 1.0 / 3.0, epsilon = 1e-7);
    }

    #[test]
    fn no_noise_from_origin_stays_at_zero() {
        let model =
            SystemModel::new(dmatrix![1.0], dmatrix![1.0], vec![], dmatrix![0.0]).unwrap();
        let gain = dmatrix![-2.0];
        let traj = propagate_moments(&model, Some(&gain), &dvector![0.0], 3.0, 0.5, None)
            .unwrap();
        assert!(traj.p.iter().all(|p| p[(0, 0)] == 0.0));
    }

    #[test]
    fn sampled_covariances_stay_psd() {
        let model = SystemModel::new(
            dmatrix![0.0, 1.0; -1.0, 1.5],
            dmatrix![0.0; 1.0],
            vec![dmatrix![0.0, 0.0; 0.5, 0.0]],
            dmatrix![1.0; 1.0],
        )
        .unwrap();
        let traj =
            propagate_moments(&model, None, &dvector![1.0, -0.5], 4.0, 0.1, None).unwrap();
        assert_eq!(traj.times.len(), 41);
        for (k, p) in traj.p.iter().enumerate() {
            assert!(
                matrix::is_psd_real(p, PsdTolerance { eps_abs: 1e-8, eps_rel: 1e-8 })
                    .unwrap(),
                "sample {k} lost positive semidefiniteness"
            );
        }
        assert_abs_diff_eq!(
            traj.p[0],
            dmatrix![1.0, -0.5; -0.5, 0.25],
            epsilon = 1e-14
        );
    }

    #[test]
    fn envelope_formulas_from_a_unit_certificate() {
        // Scalar model with R = 1, phi_L = 3: threshold 3, beta_U = 1,
        // tr(D'RD) = 1.
        let model =
            SystemModel::new(dmatrix![1.5], dmatrix![1.0], vec![], dmatrix![1.0]).unwrap();
        let cert = lmi::certify_at(&model, &ClarabelBackend, Threshold::Finite(2.9), 3.0)
            .unwrap()
            .expect("unit certificate");

        // Zero budget: q = 2, rate phi_L/2, drive tr(D'RD).
        let curve = divergence_envelope(&model, &cert, 0.0, &dvector![2.0]).unwrap();
        assert_abs_diff_eq!(curve.c0, 4.0, epsilon = 1e-6);
        assert_abs_diff_eq!(curve.c1, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(curve.phi, 1.5, epsilon = 1e-6);

        // u_hat = 1: q = 3/2, c1 = 1 - (1/2)(1)(1) = 1/2, phi = 3(1/3) = 1.
        let curve = divergence_envelope(&model, &cert, 1.0, &dvector![0.0]).unwrap();
        assert_abs_diff_eq!(curve.c0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(curve.c1, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(curve.phi, 1.0, epsilon = 1e-6);

        // At or above the threshold there is no envelope.
        assert!(matches!(
            divergence_envelope(&model, &cert, cert.u_star.finite().unwrap(), &dvector![0.0]),
            Err(MomentsError::Threshold(_))
        ));
        assert!(matches!(
            divergence_envelope(&model, &cert, 5.0, &dvector![0.0]),
            Err(MomentsError::Threshold(_))
        ));
    }

    #[test]
    fn no_authority_gives_the_exact_growth_curve() {
        // B = 0: beta_U = 0, so the curve is (x0'Rx0, tr(D'RD), phi_L) and
        // any finite budget sits below the unbounded threshold.
        let model =
            SystemModel::new(dmatrix![1.5], dmatrix![0.0], vec![], dmatrix![1.0]).unwrap();
        let verdict = lmi::certify(
            &model,
            &ClarabelBackend,
            Threshold::Unbounded,
            &GridSettings::default(),
        )
        .unwrap();
        let cert = verdict.certificate.expect("zero-authority certificate");
        let curve = divergence_envelope(&model, &cert, 100.0, &dvector![1.0]).unwrap();
        assert_abs_diff_eq!(curve.c0, (&dvector![1.0].transpose() * &cert.r * &dvector![1.0])[(0, 0)], epsilon = 1e-12);
        assert_abs_diff_eq!(curve.c1, cert.noise_trace, epsilon = 1e-12);
        assert_abs_diff_eq!(curve.phi, cert.phi_l, epsilon = 1e-12);
    }

    #[test]
    fn uncontrolled_moment_dominates_the_envelope() {
        let model = oscillator(1.5, 1.0);
        let search =
            lmi::max_threshold(&model, &ClarabelBackend, &GridSettings::default()).unwrap();
        let cert = search.certificate.expect("oscillator certifies");
        let x0 = dvector![0.0, 0.0];
        let curve = divergence_envelope(&model, &cert, 0.0, &x0).unwrap();
        let traj =
            propagate_moments(&model, None, &x0, 5.0, 0.05, Some(&cert.r)).unwrap();
        let ev = traj.ev.as_ref().unwrap();
        for (t, v) in traj.times.iter().zip(ev) {
            let bound = gronwall_lower_bound(curve, *t);
            assert!(
                *v >= bound - 1e-6 * (1.0 + bound.abs()),
                "EV fell under the envelope at t={t}: {v} < {bound}"
            );
        }
    }

    #[test]
    fn runaway_moment_reports_partial_trajectory() {
        let model =
            SystemModel::new(dmatrix![5.0], dmatrix![0.0], vec![], dmatrix![1.0]).unwrap();
        let out = propagate_moments_capped(
            &model,
            None,
            &dvector![1e3],
            10.0,
            0.1,
            None,
            1e12,
        );
        match out {
            Err(MomentsError::Blowup { at, partial }) => {
                // P(t) = e^{10t}(1e6 + 0.1) - 0.1 crosses 1e12 near t = 1.38.
                assert!(at > 1.0 && at < 2.0, "blowup time {at}");
                assert!(!partial.times.is_empty());
                assert!(partial.times.last().unwrap() < &10.0);
                assert!(partial.times.windows(2).all(|w| w[0] < w[1]));
            }
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn csv_layout_lists_upper_triangle_by_column() {
        let traj = MomentTrajectory {
            times: vec![0.0, 1.0],
            p: vec![Mat::identity(2, 2), dmatrix![1.0, 2.0; 2.0, 4.0]],
            ev: Some(vec![2.0, 5.0]),
        };
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,P_11,P_12,P_22,EV");
        assert_eq!(lines.next().unwrap(), "0,1,0,1,2");
        assert_eq!(lines.next().unwrap(), "1,1,2,4,5");
        assert!(lines.next().is_none());

        let bare = MomentTrajectory {
            times: vec![0.0],
            p: vec![Mat::identity(1, 1)],
            ev: None,
        };
        assert_eq!(bare.to_csv(), "t,P_11\n0,1\n");
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let model = oscillator(1.5, 1.0);
        let x0 = dvector![0.0, 0.0];
        assert!(matches!(
            propagate_moments(&model, None, &dvector![0.0], 1.0, 0.1, None),
            Err(MomentsError::Invalid(_))
        ));
        assert!(matches!(
            propagate_moments(&model, None, &x0, 0.0, 0.1, None),
            Err(MomentsError::Invalid(_))
        ));
        let bad_gain = dmatrix![1.0, 0.0; 0.0, 1.0];
        assert!(matches!(
            propagate_moments(&model, Some(&bad_gain), &x0, 1.0, 0.1, None),
            Err(MomentsError::Invalid(_))
        ));
        let bad_r = dmatrix![1.0];
        assert!(matches!(
            propagate_moments(&model, None, &x0, 1.0, 0.1, Some(&bad_r)),
            Err(MomentsError::Invalid(_))
        ));
    }
}
