//! Analysis library for continuous-time linear stochastic systems
//!
//!   dx = (A x + B u) dt + [C_1 x, ..., C_l1 x, D] dW
//!
//! whose control input is budgeted in time-averaged power,
//! (1/t) integral_0^t E[||u||^2] <= u_hat. The central object is an
//! *instabilizability certificate*: a unit-trace PSD matrix R and a rate
//! phi_L > 0 such that
//!
//!   (growth)     A' R + R A + sum_i C_i' R C_i  >=  phi_L R,
//!   (noise)      tr(D' R D) > 0,
//!   (authority)  u_hat < phi_L tr(D' R D) / lambda_max(B' R B).
//!
//! When such a pair exists, E[x' R x] diverges exponentially under *every*
//! admissible policy meeting the power budget, so mean-square stabilization
//! is impossible. The crate provides:
//!
//! * [`lmi`] - semidefinite search for certificates and the maximal
//!   certified budget threshold;
//! * [`eigen`] - solver-free thresholds from the eigenstructure of `A`
//!   (additive noise only);
//! * [`scalar`] - exact threshold and stabilizing gain for scalar systems,
//!   where the bound is tight;
//! * [`noise`] - constructive synthesis of an additive-noise matrix that
//!   renders a given system instabilizable at a prescribed budget;
//! * [`moments`] - exact second-moment propagation and the exponential
//!   divergence envelope implied by a certificate;
//! * [`sim`] - reproducible Euler-Maruyama Monte Carlo with constraint
//!   auditing;
//! * [`model`], [`matrix`], [`sdp`] - system description and numerical
//!   infrastructure.

pub mod eigen;
pub mod lmi;
pub mod matrix;
pub mod model;
pub mod moments;
pub mod noise;
pub mod scalar;
pub mod sdp;
pub mod sim;

mod threshold;

pub use threshold::Threshold;
