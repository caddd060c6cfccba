//! Exact classification of scalar systems dx = (Ax + Bu)dt + C1 x dW1 + D dW2.
//!
//! For n = m = 1 the mean-square story is complete in closed form. The
//! discriminant is z = 2A + C1^2, the open-loop growth rate of E[x^2]:
//!
//!   z > 0, B != 0, D != 0  every budget below z D^2 / B^2 diverges, and the
//!                          static gain K = -z/B stabilizes at exactly that
//!                          power, so the threshold is tight;
//!   z < 0                  E[x^2] stays bounded with no control at all;
//!   z = 0, B != 0          any gain with BK < 0 stabilizes, with input power
//!                          proportional to the gain, hence arbitrarily small;
//!   z = 0 or z > 0, B = 0  no input authority: divergent whenever noise (or
//!                          an unstable mode) is present.
//!
//! These closed forms are the ground truth the certificate search is checked
//! against on scalar inputs.

use serde::{Deserialize, Serialize};

use crate::model::SystemModel;

/// Default gain magnitude for the marginal z = 0 branch, where any nonzero
/// gain of the right sign works and smaller means less input power.
pub const DEFAULT_MARGINAL_GAIN: f64 = 1e-3;

/// Absolute tolerance of the exact-zero test on z = 2A + C1^2. The marginal
/// branch is measure-zero; only inputs zero to double precision take it.
const ZERO_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarRegime {
    /// Budgets below `u_threshold` diverge; `gain` stabilizes at the
    /// threshold power. The bound is tight.
    TightThreshold,
    /// E[x^2] stays bounded with no control.
    StableWithoutControl,
    /// Stabilizable with arbitrarily small average input power.
    MarginalSmallGain,
    /// No input authority over a divergent second moment.
    UncontrollableDivergent,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScalarVerdict {
    pub regime: ScalarRegime,
    /// Tight instabilizability threshold (TightThreshold only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_threshold: Option<f64>,
    /// Stabilizing static feedback u = K x, where one exists.
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    /// Guaranteed sup_t E[x^2] under the returned gain (under no control for
    /// StableWithoutControl), starting from x0 = 0.
    #[serde(rename = "bound_sup_Ex2", skip_serializing_if = "Option::is_none")]
    pub bound_sup_ex2: Option<f64>,
    /// Average input power the returned gain needs; equals the threshold in
    /// the tight regime (the constraint binds exactly) and shrinks with the
    /// gain in the marginal one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_power_bound: Option<f64>,
}

/// Classifies a scalar system; total on finite inputs.
pub fn scalar_analyze(a: f64, b: f64, c1: f64, d: f64) -> ScalarVerdict {
    scalar_analyze_with(a, b, c1, d, DEFAULT_MARGINAL_GAIN)
}

/// Same with an explicit gain magnitude for the marginal branch.
pub fn scalar_analyze_with(a: f64, b: f64, c1: f64, d: f64, k0: f64) -> ScalarVerdict {
    assert!(
        a.is_finite() && b.is_finite() && c1.is_finite() && d.is_finite(),
        "scalar_analyze requires finite inputs"
    );
    assert!(k0.is_finite() && k0 > 0.0, "marginal gain magnitude must be positive");
    let z = 2.0 * a + c1 * c1;
    let d2 = d * d;
    if z > ZERO_TOL {
        if b == 0.0 {
            return verdict(ScalarRegime::UncontrollableDivergent, None, None, None, None);
        }
        let u = z * d2 / (b * b);
        // Closed-loop drift 2(A + BK) + C1^2 = -z < 0; the stationary level
        // D^2/z then costs exactly K^2 D^2/z = u of input power.
        return verdict(
            ScalarRegime::TightThreshold,
            Some(u),
            Some(-z / b),
            Some(d2 / z),
            Some(u),
        );
    }
    if z < -ZERO_TOL {
        return verdict(
            ScalarRegime::StableWithoutControl,
            None,
            None,
            Some(d2 / -z),
            None,
        );
    }
    if b != 0.0 {
        let gain = -b.signum() * k0;
        return verdict(
            ScalarRegime::MarginalSmallGain,
            None,
            Some(gain),
            Some(-d2 / (2.0 * b * gain)),
            Some(-0.5 * d2 * gain / b),
        );
    }
    if d == 0.0 {
        // x stays at x0; from x0 = 0 the moment is identically zero.
        return verdict(ScalarRegime::StableWithoutControl, None, None, Some(0.0), None);
    }
    verdict(ScalarRegime::UncontrollableDivergent, None, None, None, None)
}

fn verdict(
    regime: ScalarRegime,
    u_threshold: Option<f64>,
    gain: Option<f64>,
    bound_sup_ex2: Option<f64>,
    input_power_bound: Option<f64>,
) -> ScalarVerdict {
    ScalarVerdict { regime, u_threshold, gain, bound_sup_ex2, input_power_bound }
}

/// The four scalars of a 1-by-1 model, when it is one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarParams {
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub d: f64,
}

/// Extracts scalar parameters from a model with n = m = 1 and at most one
/// state-noise channel. Several additive channels fold into one effective
/// level: only D D' = sum_j D_1j^2 enters any second-moment statement.
pub fn scalar_parameters(model: &SystemModel) -> Option<ScalarParams> {
    if !model.is_scalar() {
        return None;
    }
    Some(ScalarParams {
        a: model.a[(0, 0)],
        b: model.b[(0, 0)],
        c1: model.c.first().map_or(0.0, |m| m[(0, 0)]),
        d: model.d.row(0).norm(),
    })
}
