//! Symmetric-cone programming layer: scaled-triangle vectorization, a
//! backend-neutral problem description, and the interior-point backend.
//!
//! Everything downstream states semidefinite programs against this module's
//! conventions and never touches solver types directly, so the backend can
//! be swapped without disturbing the formulations.
//!
//! Vectorization: an n x n symmetric matrix is stored as its upper triangle
//! in column-major order, off-diagonal entries scaled by sqrt(2). Under this
//! map `<svec(X), svec(Y)> = tr(XY)`, and it matches the triangle layout the
//! solver's PSD cone expects, so matrices pass through unconverted.
//!
//! Constraint convention: `s = b - A x`, `s` in the cone product. A zero cone
//! encodes equalities, the nonnegative cone inequalities, and a PSD triangle
//! cone of side n consumes n(n+1)/2 consecutive rows.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DVector;
use thiserror::Error;

use crate::matrix::Mat;

#[derive(Debug, Error)]
#[error("conic solver failure: {0}")]
pub struct BackendError(pub String);

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Scaled upper-triangle vectorization. The input is symmetrized first, so
/// slightly asymmetric inputs (roundoff) are averaged rather than aliased.
pub fn svec(m: &Mat) -> DVector<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "svec requires a square matrix");
    let mut out = DVector::zeros(svec_len(n));
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            out[k] = if i == j {
                m[(i, j)]
            } else {
                (m[(i, j)] + m[(j, i)]) * 0.5 * std::f64::consts::SQRT_2
            };
            k += 1;
        }
    }
    out
}

pub fn smat(v: &DVector<f64>, n: usize) -> Mat {
    assert_eq!(v.len(), svec_len(n), "svec length does not match side {n}");
    let mut m = Mat::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[k];
            } else {
                let w = v[k] / std::f64::consts::SQRT_2;
                m[(i, j)] = w;
                m[(j, i)] = w;
            }
            k += 1;
        }
    }
    m
}

/// Matrix of a linear operator on symmetric matrices, in svec coordinates:
/// column k is `svec(op(smat(e_k)))`. Input side `n_in`, output side `n_out`.
pub fn svec_operator(n_in: usize, n_out: usize, op: impl Fn(&Mat) -> Mat) -> Mat {
    let cols = svec_len(n_in);
    let mut out = Mat::zeros(svec_len(n_out), cols);
    let mut e = DVector::zeros(cols);
    for k in 0..cols {
        e[k] = 1.0;
        let img = op(&smat(&e, n_in));
        assert_eq!(img.nrows(), n_out, "operator image has wrong side");
        out.set_column(k, &svec(&img));
        e[k] = 0.0;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeSpec {
    /// Equality rows: s = 0.
    Zero(usize),
    /// Inequality rows: s >= 0 elementwise.
    Nonneg(usize),
    /// PSD constraint on a matrix of side n, given as svec rows.
    PsdTriangle(usize),
}

impl ConeSpec {
    pub fn rows(self) -> usize {
        match self {
            ConeSpec::Zero(k) | ConeSpec::Nonneg(k) => k,
            ConeSpec::PsdTriangle(n) => svec_len(n),
        }
    }
}

/// min cᵀx  s.t.  s = b - A x,  s in the product of `cones`.
pub struct ConicProblem {
    num_vars: usize,
    objective: Vec<f64>,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    cones: Vec<ConeSpec>,
}

impl ConicProblem {
    pub fn new(num_vars: usize) -> Self {
        ConicProblem {
            num_vars,
            objective: vec![0.0; num_vars],
            triplets: Vec::new(),
            rhs: Vec::new(),
            cones: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn set_objective(&mut self, c: &[f64]) {
        assert_eq!(c.len(), self.num_vars);
        self.objective = c.to_vec();
    }

    /// Appends one cone block. `a_rows[i]` lists the nonzero (column, value)
    /// pairs of constraint row i within the block; `b` is its offset.
    pub fn add_block(&mut self, cone: ConeSpec, a_rows: Vec<Vec<(usize, f64)>>, b: Vec<f64>) {
        assert_eq!(a_rows.len(), cone.rows(), "row count does not match cone");
        assert_eq!(b.len(), cone.rows(), "rhs length does not match cone");
        let base = self.rhs.len();
        for (i, row) in a_rows.into_iter().enumerate() {
            for (col, val) in row {
                assert!(col < self.num_vars, "column {col} out of range");
                if val != 0.0 {
                    self.triplets.push((base + i, col, val));
                }
            }
        }
        self.rhs.extend(b);
        self.cones.push(cone);
    }

    /// Dense convenience: block rows are `map` applied to the variable block
    /// starting at `var_offset` (s = b - map x_block).
    pub fn add_dense_block(&mut self, cone: ConeSpec, map: &Mat, var_offset: usize, b: Vec<f64>) {
        let rows = (0..map.nrows())
            .map(|i| {
                (0..map.ncols())
                    .map(|j| (var_offset + j, map[(i, j)]))
                    .collect()
            })
            .collect();
        self.add_block(cone, rows, b);
    }

    fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Sorted CSC with duplicate entries summed.
    fn csc(&self) -> CscMatrix<f64> {
        let mut tri = self.triplets.clone();
        tri.sort_by_key(|&(r, c, _)| (c, r));
        let mut colptr = vec![0usize; self.num_vars + 1];
        let mut rowval: Vec<usize> = Vec::with_capacity(tri.len());
        let mut nzval: Vec<f64> = Vec::with_capacity(tri.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in tri {
            if last == Some((c, r)) {
                *nzval.last_mut().unwrap() += v;
            } else {
                rowval.push(r);
                nzval.push(v);
                colptr[c + 1] += 1;
                last = Some((c, r));
            }
        }
        for c in 0..self.num_vars {
            colptr[c + 1] += colptr[c];
        }
        CscMatrix::new(self.num_rows(), self.num_vars, colptr, rowval, nzval)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    AlmostOptimal,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

pub trait SdpBackend {
    fn solve(&self, problem: &ConicProblem, tuning: SolverTuning)
        -> Result<Solution, BackendError>;
}

#[derive(Clone, Copy, Debug)]
pub struct SolverTuning {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for SolverTuning {
    fn default() -> Self {
        SolverTuning { tol: 1e-11, max_iter: 200 }
    }
}

impl SolverTuning {
    /// Fallback accuracy for problems that stall at the default target;
    /// loose enough to converge near feasibility boundaries, still two
    /// orders tighter than the certificate re-verification tolerance asks.
    pub fn relaxed() -> Self {
        SolverTuning { tol: 1e-9, max_iter: 400 }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ClarabelBackend;

impl SdpBackend for ClarabelBackend {
    fn solve(
        &self,
        problem: &ConicProblem,
        tuning: SolverTuning,
    ) -> Result<Solution, BackendError> {
        let nv = problem.num_vars;
        let p = CscMatrix::new(nv, nv, vec![0; nv + 1], vec![], vec![]);
        let a = problem.csc();
        let cones: Vec<SupportedConeT<f64>> = problem
            .cones
            .iter()
            .map(|c| match *c {
                ConeSpec::Zero(k) => SupportedConeT::ZeroConeT(k),
                ConeSpec::Nonneg(k) => SupportedConeT::NonnegativeConeT(k),
                ConeSpec::PsdTriangle(n) => SupportedConeT::PSDTriangleConeT(n),
            })
            .collect();
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(tuning.tol)
            .tol_gap_rel(tuning.tol)
            .tol_feas(tuning.tol)
            .max_iter(tuning.max_iter)
            .build()
            .map_err(|e| BackendError(format!("settings rejected: {e}")))?;
        let mut solver =
            DefaultSolver::new(&p, &problem.objective, &a, &problem.rhs, &cones, settings)
                .map_err(|e| BackendError(format!("problem rejected: {e:?}")))?;
        solver.solve();
        let status = match solver.solution.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::AlmostOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::PrimalInfeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::DualInfeasible
            }
            other => return Err(BackendError(format!("solver stopped without verdict: {other:?}"))),
        };
        Ok(Solution {
            status,
            x: solver.solution.x.clone(),
            objective: solver.solution.obj_val,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn svec_smat_round_trip_and_trace_inner_product() {
        let x = Mat::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.5, -1.0, 4.0]);
        let y = Mat::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, -1.0, 1.0, 2.0, 1.0, 0.0]);
        assert_abs_diff_eq!(smat(&svec(&x), 3), x, epsilon = 1e-15);
        let dot = svec(&x).dot(&svec(&y));
        assert_abs_diff_eq!(dot, (&x * &y).trace(), epsilon = 1e-12);
    }

    #[test]
    fn svec_operator_of_identity_is_identity() {
        let id = svec_operator(3, 3, |x| x.clone());
        assert_abs_diff_eq!(id, Mat::identity(6, 6), epsilon = 1e-15);
    }

    #[test]
    fn svec_operator_matches_direct_application() {
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 1.5]);
        let op = |x: &Mat| a.transpose() * x + x * &a;
        let m = svec_operator(2, 2, op);
        let x = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_abs_diff_eq!(&m * svec(&x), svec(&op(&x)), epsilon = 1e-13);
    }

    #[test]
    fn psd_block_reaches_boundary() {
        // min -t  s.t.  [[1, t], [t, 1]] >= 0  has optimum t = 1.
        let mut prob = ConicProblem::new(1);
        prob.set_objective(&[-1.0]);
        let coupling = svec(&Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        prob.add_block(
            ConeSpec::PsdTriangle(2),
            (0..3).map(|i| vec![(0, -coupling[i])]).collect(),
            svec(&Mat::identity(2, 2)).as_slice().to_vec(),
        );
        let sol = ClarabelBackend.solve(&prob, SolverTuning::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.objective, -1.0, epsilon = 1e-8);
    }

    #[test]
    fn equality_and_inequality_blocks_compose() {
        // min x2  s.t.  x1 + x2 = 1,  x2 >= 0  ->  (1, 0).
        let mut prob = ConicProblem::new(2);
        prob.set_objective(&[0.0, 1.0]);
        prob.add_block(ConeSpec::Zero(1), vec![vec![(0, 1.0), (1, 1.0)]], vec![1.0]);
        prob.add_block(ConeSpec::Nonneg(1), vec![vec![(1, -1.0)]], vec![0.0]);
        let sol = ClarabelBackend.solve(&prob, SolverTuning::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn contradictory_rows_report_primal_infeasible() {
        // x >= 1 and -x >= 0.
        let mut prob = ConicProblem::new(1);
        prob.add_block(ConeSpec::Nonneg(1), vec![vec![(0, -1.0)]], vec![-1.0]);
        prob.add_block(ConeSpec::Nonneg(1), vec![vec![(0, 1.0)]], vec![0.0]);
        let sol = ClarabelBackend.solve(&prob, SolverTuning::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    }

    #[test]
    fn unbounded_objective_reports_dual_infeasible() {
        // min -x  s.t.  x >= 0.
        let mut prob = ConicProblem::new(1);
        prob.set_objective(&[-1.0]);
        prob.add_block(ConeSpec::Nonneg(1), vec![vec![(0, -1.0)]], vec![0.0]);
        let sol = ClarabelBackend.solve(&prob, SolverTuning::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::DualInfeasible);
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        // Same constraint written with a split coefficient: x = 1 via 0.5x + 0.5x.
        let mut prob = ConicProblem::new(1);
        prob.set_objective(&[1.0]);
        prob.add_block(
            ConeSpec::Zero(1),
            vec![vec![(0, 0.5), (0, 0.5)]],
            vec![1.0],
        );
        let sol = ClarabelBackend.solve(&prob, SolverTuning::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn svec_preserves_frobenius_norm(entries in prop::collection::vec(-10.0..10.0f64, 16)) {
            let g = Mat::from_row_slice(4, 4, &entries);
            let s = Mat::from_fn(4, 4, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]));
            let v = svec(&s);
            prop_assert!((v.norm() - s.norm()).abs() <= 1e-12 * (1.0 + s.norm()));
            let back = smat(&v, 4);
            prop_assert!((back - &s).norm() <= 1e-13 * (1.0 + s.norm()));
        }
    }
}
