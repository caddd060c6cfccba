//! Monte Carlo simulation of the controlled SDE under pluggable policies.
//!
//! Euler-Maruyama paths of dx = (Ax + Bu)dt + sum_i C_i x dW_i + D dW_add,
//! with empirical second moments, standard-error bands, and an audit of the
//! time-averaged input-power constraint. Simulation never proves anything:
//! it cross-validates the exact moment oracle for linear policies and
//! illustrates, for a handful of policies, the divergence that a
//! certificate guarantees for all of them.
//!
//! Determinism contract: the report is a pure function of (model,
//! controller, config). Every Gaussian increment comes from a counter hash
//! of (seed, path, step, channel), so thread count and path batching can
//! never change any path's draws; ensemble sums are reduced pairwise in a
//! fixed order.

use rayon::prelude::*;
use thiserror::Error;

use nalgebra::DVector;

use crate::matrix::Mat;
use crate::model::SystemModel;
use crate::moments::MomentTrajectory;

/// Paths whose state norm passes this level stop evolving and keep their
/// last value in the ensemble (dropping them would bias the moments down
/// exactly when divergence is the question).
pub const FREEZE_NORM: f64 = 1e15;

const CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    Config(String),
    #[error("constraint audit undefined: {0}")]
    Division(String),
    #[error("report and oracle do not align: {0}")]
    Mismatch(String),
}

/// Feedback policy applied pointwise in time.
#[derive(Clone, Debug)]
pub enum Controller {
    Zero,
    LinearFeedback(Mat),
    /// u = Kx rescaled onto the power ball: u <- u min(1, sqrt(cap)/|u|).
    /// Satisfies the budget constraint with u_hat = cap by construction.
    SaturatedFeedback { gain: Mat, power_cap: f64 },
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: DVector<f64>,
}

/// Ensemble statistics on the step grid t_k = k dt.
#[derive(Clone, Debug)]
pub struct SimReport {
    pub times: Vec<f64>,
    /// Empirical E[|x|^2] with across-path standard error.
    pub mean_x2: Vec<f64>,
    pub stderr_x2: Vec<f64>,
    /// Empirical E[x'Rx] when R was supplied.
    pub mean_v: Option<Vec<f64>>,
    pub stderr_v: Option<Vec<f64>>,
    /// Running (1/t) integral of E[|u|^2] (trapezoidal); at t = 0 the
    /// instantaneous E[|u(0)|^2], its t -> 0 limit.
    pub u_power_avg: Vec<f64>,
    /// Standard error of the running average (0 at t = 0: x0 is
    /// deterministic).
    pub stderr_u_power: Vec<f64>,
    /// Fraction of paths frozen at or before each time.
    pub frac_frozen: Vec<f64>,
    pub diverged: bool,
    pub n_paths: usize,
}

impl SimReport {
    /// CSV with header `t,mean_x2,stderr_x2,mean_V,u_power_avg,frac_frozen`;
    /// the mean_V cell is empty when no R was supplied.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_x2,stderr_x2,mean_V,u_power_avg,frac_frozen\n");
        for k in 0..self.times.len() {
            let v = match &self.mean_v {
                Some(v) => format!("{}", v[k]),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.times[k],
                self.mean_x2[k],
                self.stderr_x2[k],
                v,
                self.u_power_avg[k],
                self.frac_frozen[k]
            ));
        }
        out
    }
}

/// Runs `cfg.n_paths` independent paths and reduces them into a report.
/// Supplying `r` adds the Lyapunov statistic E[x'Rx].
pub fn simulate(
    model: &SystemModel,
    controller: &Controller,
    cfg: &SimConfig,
    r: Option<&Mat>,
) -> Result<SimReport, SimError> {
    validate(model, controller, cfg, r)?;
    let n = model.n();
    let n_steps = (cfg.t_end / cfg.dt + 1e-9).floor() as usize;
    let flat = Flat::build(model, controller, r);

    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let parts: Vec<ChunkSums> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * CHUNK;
            let hi = ((ci + 1) * CHUNK).min(cfg.n_paths);
            run_paths(&flat, cfg, n_steps, lo, hi)
        })
        .collect();
    let sums = pairwise_merge(parts);

    let np = cfg.n_paths as f64;
    let len = n_steps + 1;
    let mut times = Vec::with_capacity(len);
    let mut mean_x2 = Vec::with_capacity(len);
    let mut stderr_x2 = Vec::with_capacity(len);
    let mut u_power_avg = Vec::with_capacity(len);
    let mut stderr_u_power = Vec::with_capacity(len);
    let mut frac_frozen = Vec::with_capacity(len);
    let mut mean_v = flat.r.as_ref().map(|_| Vec::with_capacity(len));
    let mut stderr_v = flat.r.as_ref().map(|_| Vec::with_capacity(len));

    for k in 0..len {
        times.push(k as f64 * cfg.dt);
        mean_x2.push(sums.x2[k] / np);
        stderr_x2.push(stderr_of_sum(sums.x2[k], sums.x4[k], np));
        if let (Some(mv), Some(sv)) = (mean_v.as_mut(), stderr_v.as_mut()) {
            mv.push(sums.v[k] / np);
            sv.push(stderr_of_sum(sums.v[k], sums.v2[k], np));
        }
        if k == 0 {
            u_power_avg.push(sums.upow0 / np);
            stderr_u_power.push(0.0);
        } else {
            let t = k as f64 * cfg.dt;
            u_power_avg.push(sums.uint[k] / np / t);
            stderr_u_power.push(stderr_of_sum(sums.uint[k], sums.uint2[k], np) / t);
        }
        frac_frozen.push(sums.frozen[k] as f64 / np);
    }
    let diverged = sums.frozen[len - 1] > 0;
    let _ = n;

    Ok(SimReport {
        times,
        mean_x2,
        stderr_x2,
        mean_v,
        stderr_v,
        u_power_avg,
        stderr_u_power,
        frac_frozen,
        diverged,
        n_paths: cfg.n_paths,
    })
}

/// Checks the time-averaged power constraint. `worst_ratio` is the largest
/// u_power_avg(t)/u_hat over the horizon; satisfied means it stays within
/// three standard errors of 1.
pub fn audit_constraint(report: &SimReport, u_hat: f64) -> Result<(bool, f64), SimError> {
    if !(u_hat >= 0.0) || !u_hat.is_finite() {
        return Err(SimError::Division(format!(
            "u_hat must be nonnegative and finite, got {u_hat}"
        )));
    }
    if u_hat == 0.0 {
        if report.u_power_avg.iter().any(|&p| p > 0.0) {
            return Err(SimError::Division(
                "u_hat = 0 but the controller spent input power".into(),
            ));
        }
        return Ok((true, 0.0));
    }
    let mut worst = 0.0_f64;
    let mut worst_k = 0usize;
    for (k, &p) in report.u_power_avg.iter().enumerate() {
        let ratio = p / u_hat;
        if ratio > worst {
            worst = ratio;
            worst_k = k;
        }
    }
    let satisfied = worst <= 1.0 + 3.0 * report.stderr_u_power[worst_k] / u_hat;
    Ok((satisfied, worst))
}

/// Largest discrepancy between the empirical E[|x|^2] and the exact moment
/// oracle tr(P(t)), in standard-error units, over the oracle's sample
/// times. The oracle is exact only for the zero and linear policies, so
/// only reports produced under those are meaningful here.
pub fn compare_to_oracle(report: &SimReport, traj: &MomentTrajectory) -> Result<f64, SimError> {
    if traj.times.is_empty() {
        return Err(SimError::Mismatch("oracle trajectory is empty".into()));
    }
    let mut worst = 0.0_f64;
    for (j, &t) in traj.times.iter().enumerate() {
        let k = match lookup_time(&report.times, t) {
            Some(k) => k,
            None => {
                return Err(SimError::Mismatch(format!(
                    "oracle time {t} is not on the simulation grid"
                )));
            }
        };
        let diff = (report.mean_x2[k] - traj.p[j].trace()).abs();
        if diff == 0.0 {
            continue;
        }
        worst = worst.max(diff / report.stderr_x2[k].max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

fn lookup_time(times: &[f64], t: f64) -> Option<usize> {
    let k = times.partition_point(|&s| s < t - 1e-9);
    if k < times.len() && (times[k] - t).abs() <= 1e-9 { Some(k) } else { None }
}

fn stderr_of_sum(sum: f64, sum_sq: f64, np: f64) -> f64 {
    if np < 2.0 {
        return 0.0;
    }
    let var = ((sum_sq - sum * sum / np) / (np - 1.0)).max(0.0);
    (var / np).sqrt()
}

fn validate(
    model: &SystemModel,
    controller: &Controller,
    cfg: &SimConfig,
    r: Option<&Mat>,
) -> Result<(), SimError> {
    if let Some(first) = model.validate().into_iter().next() {
        return Err(SimError::Config(first));
    }
    let (n, m) = (model.n(), model.m());
    if !(cfg.dt > 0.0) || !cfg.dt.is_finite() || !(cfg.t_end > 0.0) || !cfg.t_end.is_finite()
    {
        return Err(SimError::Config(format!(
            "dt and t_end must be positive, got {} and {}",
            cfg.dt, cfg.t_end
        )));
    }
    if cfg.dt > cfg.t_end {
        return Err(SimError::Config(format!(
            "dt = {} exceeds t_end = {}",
            cfg.dt, cfg.t_end
        )));
    }
    if cfg.n_paths == 0 {
        return Err(SimError::Config("n_paths must be at least 1".into()));
    }
    if cfg.x0.len() != n {
        return Err(SimError::Config(format!(
            "x0 has length {}, state dimension is {n}",
            cfg.x0.len()
        )));
    }
    if cfg.x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Config("x0 has non-finite entries".into()));
    }
    let gain = match controller {
        Controller::Zero => None,
        Controller::LinearFeedback(k) => Some(k),
        Controller::SaturatedFeedback { gain, power_cap } => {
            if !(power_cap > &0.0) || !power_cap.is_finite() {
                return Err(SimError::Config(format!(
                    "power_cap must be positive, got {power_cap}"
                )));
            }
            Some(gain)
        }
    };
    if let Some(k) = gain {
        if k.nrows() != m || k.ncols() != n {
            return Err(SimError::Config(format!(
                "gain is {} x {}, expected {m} x {n}",
                k.nrows(),
                k.ncols()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Config("gain has non-finite entries".into()));
        }
    }
    if let Some(r) = r {
        if r.nrows() != n || r.ncols() != n {
            return Err(SimError::Config(format!(
                "R is {} x {}, expected {n} x {n}",
                r.nrows(),
                r.ncols()
            )));
        }
    }
    Ok(())
}

/// Row-major copies of the model for the tight per-step kernels; dynamic
/// nalgebra ops would allocate inside the innermost loop.
struct Flat {
    n: usize,
    m: usize,
    l1: usize,
    l2: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<Vec<f64>>,
    d: Vec<f64>,
    r: Option<Vec<f64>>,
    gain: Option<Vec<f64>>,
    power_cap: Option<f64>,
}

impl Flat {
    fn build(model: &SystemModel, controller: &Controller, r: Option<&Mat>) -> Flat {
        let row_major = |m: &Mat| -> Vec<f64> {
            let mut v = Vec::with_capacity(m.nrows() * m.ncols());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    v.push(m[(i, j)]);
                }
            }
            v
        };
        let (gain, power_cap) = match controller {
            Controller::Zero => (None, None),
            Controller::LinearFeedback(k) => (Some(row_major(k)), None),
            Controller::SaturatedFeedback { gain, power_cap } => {
                (Some(row_major(gain)), Some(*power_cap))
            }
        };
        Flat {
            n: model.n(),
            m: model.m(),
            l1: model.ell1(),
            l2: model.ell2(),
            a: row_major(&model.a),
            b: row_major(&model.b),
            c: model.c.iter().map(row_major).collect(),
            d: row_major(&model.d),
            r: r.map(row_major),
            gain,
            power_cap,
        }
    }
}

/// Per-chunk accumulators, indexed by step.
struct ChunkSums {
    x2: Vec<f64>,
    x4: Vec<f64>,
    v: Vec<f64>,
    v2: Vec<f64>,
    uint: Vec<f64>,
    uint2: Vec<f64>,
    upow0: f64,
    frozen: Vec<u64>,
}

impl ChunkSums {
    fn zeros(len: usize, with_v: bool) -> ChunkSums {
        ChunkSums {
            x2: vec![0.0; len],
            x4: vec![0.0; len],
            v: vec![0.0; if with_v { len } else { 0 }],
            v2: vec![0.0; if with_v { len } else { 0 }],
            uint: vec![0.0; len],
            uint2: vec![0.0; len],
            upow0: 0.0,
            frozen: vec![0; len],
        }
    }

    fn add(&mut self, o: &ChunkSums) {
        let acc = |a: &mut Vec<f64>, b: &Vec<f64>| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        };
        acc(&mut self.x2, &o.x2);
        acc(&mut self.x4, &o.x4);
        acc(&mut self.v, &o.v);
        acc(&mut self.v2, &o.v2);
        acc(&mut self.uint, &o.uint);
        acc(&mut self.uint2, &o.uint2);
        self.upow0 += o.upow0;
        for (x, y) in self.frozen.iter_mut().zip(&o.frozen) {
            *x += *y;
        }
    }
}

/// Fixed-shape pairwise reduction: the merge tree depends only on the chunk
/// count, never on scheduling.
fn pairwise_merge(mut parts: Vec<ChunkSums>) -> ChunkSums {
    assert!(!parts.is_empty());
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut iter = parts.into_iter();
        while let Some(mut a) = iter.next() {
            if let Some(b) = iter.next() {
                a.add(&b);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

fn run_paths(
    flat: &Flat,
    cfg: &SimConfig,
    n_steps: usize,
    lo: usize,
    hi: usize,
) -> ChunkSums {
    let (n, m) = (flat.n, flat.m);
    let sqrt_dt = cfg.dt.sqrt();
    let mut sums = ChunkSums::zeros(n_steps + 1, flat.r.is_some());
    let mut x = vec![0.0_f64; n];
    let mut xn = vec![0.0_f64; n];
    let mut u = vec![0.0_f64; m];
    let mut cx = vec![0.0_f64; n];

    for path in lo..hi {
        for i in 0..n {
            x[i] = cfg.x0[i];
        }
        let mut frozen = false;
        let mut uint = 0.0_f64;
        let mut prev_upow = 0.0_f64;

        for k in 0..=n_steps {
            // Control at the current state (frozen paths keep spending what
            // their last state demands; for capped policies that stays
            // within the cap).
            let mut upow = 0.0;
            if let Some(g) = &flat.gain {
                for i in 0..m {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += g[i * n + j] * x[j];
                    }
                    u[i] = s;
                    upow += s * s;
                }
                if let Some(cap) = flat.power_cap {
                    if upow > cap {
                        let scale = (cap / upow).sqrt();
                        for v in u.iter_mut() {
                            *v *= scale;
                        }
                        upow = cap;
                    }
                }
            }
            if k > 0 {
                uint += 0.5 * cfg.dt * (prev_upow + upow);
            }
            prev_upow = upow;

            let mut x2 = 0.0;
            for i in 0..n {
                x2 += x[i] * x[i];
            }
            sums.x2[k] += x2;
            sums.x4[k] += x2 * x2;
            if let Some(r) = &flat.r {
                let mut v = 0.0;
                for i in 0..n {
                    let mut ri = 0.0;
                    for j in 0..n {
                        ri += r[i * n + j] * x[j];
                    }
                    v += x[i] * ri;
                }
                sums.v[k] += v;
                sums.v2[k] += v * v;
            }
            sums.uint[k] += uint;
            sums.uint2[k] += uint * uint;
            if k == 0 {
                sums.upow0 += upow;
            }
            if frozen {
                sums.frozen[k] += 1;
            }
            if k == n_steps || frozen {
                continue;
            }

            // Euler-Maruyama advance.
            for i in 0..n {
                let mut drift = 0.0;
                for j in 0..n {
                    drift += flat.a[i * n + j] * x[j];
                }
                for j in 0..m {
                    drift += flat.b[i * m + j] * u[j];
                }
                xn[i] = x[i] + cfg.dt * drift;
            }
            for (ch, c) in flat.c.iter().enumerate() {
                let g = sqrt_dt * normal_draw(cfg.seed, path as u64, k as u64, ch as u64);
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += c[i * n + j] * x[j];
                    }
                    cx[i] = s;
                }
                for i in 0..n {
                    xn[i] += g * cx[i];
                }
            }
            for ch in 0..flat.l2 {
                let g = sqrt_dt
                    * normal_draw(cfg.seed, path as u64, k as u64, (flat.l1 + ch) as u64);
                for i in 0..n {
                    xn[i] += g * flat.d[i * flat.l2 + ch];
                }
            }
            let mut nn = 0.0;
            for v in xn.iter() {
                nn += v * v;
            }
            if !nn.is_finite() || nn > FREEZE_NORM * FREEZE_NORM {
                frozen = true; // state keeps its pre-step value
            } else {
                std::mem::swap(&mut x, &mut xn);
            }
        }
    }
    sums
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn counter_hash(seed: u64, path: u64, step: u64, channel: u64, sub: u64) -> u64 {
    const PHI: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut z = seed ^ 0x6a09_e667_f3bc_c908;
    z = mix(z.wrapping_add(PHI.wrapping_mul(path.wrapping_add(1))));
    z = mix(z.wrapping_add(PHI.wrapping_mul(step.wrapping_add(1))));
    z = mix(z.wrapping_add(PHI.wrapping_mul(channel.wrapping_add(1))));
    z = mix(z.wrapping_add(PHI.wrapping_mul(sub)));
    z
}

/// Standard normal from the counter (seed, path, step, channel): Box-Muller
/// cosine branch on two hashed uniforms, u1 in (0, 1] so the log is finite.
fn normal_draw(seed: u64, path: u64, step: u64, channel: u64) -> f64 {
    let h1 = counter_hash(seed, path, step, channel, 1);
    let h2 = counter_hash(seed, path, step, channel, 2);
    let u1 = 1.0 - (h1 >> 11) as f64 * 2.0_f64.powi(-53);
    let u2 = (h2 >> 11) as f64 * 2.0_f64.powi(-53);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
