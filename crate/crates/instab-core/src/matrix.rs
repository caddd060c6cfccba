//! Hermitian eigen primitives with explicit tolerance semantics.
//!
//! Everything downstream that makes a mathematical claim (certificate
//! re-verification, noise synthesis, eigenvector thresholds) goes through
//! the three contracts here: [`hermitian_eig`], [`lambda_max`], [`is_psd`].
//!
//! nalgebra ships only a *real symmetric* eigensolver, so complex input is
//! handled by realification: H = X + iY maps to the real symmetric
//! T = [[X, -Y], [Y, X]], whose spectrum is that of H with every eigenvalue
//! doubled. Each real eigenvector (x; y) of T corresponds to the complex
//! eigenvector v = x + iy, and (-y; x) corresponds to i*v - the same complex
//! direction - so complex bases are recovered from the doubled eigenspaces
//! by greedy Hermitian Gram-Schmidt. The same trick turns complex null-space
//! extraction into a real SVD.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen, SVD};
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex<f64>>;
pub type CVec = DVector<Complex<f64>>;

#[derive(Debug, Clone, Error)]
#[error("numerical linear algebra failure: {0}")]
pub struct NumericalError(pub String);

const EIG_MAX_ITER: usize = 10_000;

/// PSD acceptance band: min eigenvalue >= -(eps_abs + eps_rel * max|eig|).
#[derive(Clone, Copy, Debug)]
pub struct PsdTolerance {
    pub eps_abs: f64,
    pub eps_rel: f64,
}

impl Default for PsdTolerance {
    /// Matches double-precision eigensolver accuracy at the problem sizes
    /// this crate targets (n up to ~50).
    fn default() -> Self {
        PsdTolerance { eps_abs: 1e-9, eps_rel: 1e-9 }
    }
}

/// Complex square matrix with conjugate symmetry enforced on construction,
/// so its eigenvalues are real. Real symmetric matrices are the special
/// case with exactly zero imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    m: CMat,
}

impl HermitianMatrix {
    /// Replaces the input by (M + M*)/2. Panics on non-square input.
    pub fn new(m: CMat) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "Hermitian matrix must be square");
        let h = (m.clone() + m.adjoint()).map(|z| z * 0.5);
        HermitianMatrix { m: h }
    }

    pub fn from_real(m: &Mat) -> Self {
        let c = CMat::from_fn(m.nrows(), m.ncols(), |i, j| {
            Complex::new((m[(i, j)] + m[(j, i)]) * 0.5, 0.0)
        });
        HermitianMatrix { m: c }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn entries(&self) -> &CMat {
        &self.m
    }

    pub fn real_part(&self) -> Mat {
        Mat::from_fn(self.m.nrows(), self.m.ncols(), |i, j| self.m[(i, j)].re)
    }

    pub fn is_real(&self) -> bool {
        self.m.iter().all(|z| z.im == 0.0)
    }

    /// Trace; real by conjugate symmetry.
    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.m[(i, i)].re).sum()
    }
}

/// Spectral decomposition H = vectors * diag(values) * vectors^*, eigenvalues
/// sorted descending, eigenvector columns orthonormal with the first
/// significant component of each rotated to the positive real axis.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> CMat {
        let n = self.vectors.nrows();
        let mut acc = CMat::zeros(n, n);
        for (k, &mu) in self.values.iter().enumerate() {
            let v = self.vectors.column(k);
            for i in 0..n {
                for j in 0..n {
                    acc[(i, j)] += v[i] * v[j].conj() * mu;
                }
            }
        }
        acc
    }
}

pub fn hermitian_eig(h: &HermitianMatrix) -> Result<HermitianEigen, NumericalError> {
    if h.is_real() {
        let re = h.real_part();
        let eig = SymmetricEigen::try_new(re, f64::EPSILON, EIG_MAX_ITER)
            .ok_or_else(|| NumericalError("symmetric eigensolver did not converge".into()))?;
        let n = h.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut vectors = CMat::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            let src = eig.eigenvectors.column(k);
            for i in 0..n {
                vectors[(i, col)] = Complex::new(src[i], 0.0);
            }
        }
        let mut out = HermitianEigen { values, vectors };
        fix_phases(&mut out.vectors);
        return Ok(out);
    }

    // Complex path: eigendecompose the realification and pair up the doubled
    // eigenvalues.
    let n = h.dim();
    let x = h.real_part();
    let y = Mat::from_fn(n, n, |i, j| h.m[(i, j)].im);
    let t = realify(&x, &y);
    let eig = SymmetricEigen::try_new(t, f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| NumericalError("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vmax = order
        .iter()
        .map(|&k| eig.eigenvalues[k].abs())
        .fold(0.0_f64, f64::max);
    let cluster_tol = 1e-11 * (1.0 + vmax);

    let mut values = Vec::with_capacity(n);
    let mut vectors = CMat::zeros(n, n);
    let mut col = 0usize;
    let mut pos = 0usize;
    while pos < 2 * n {
        // Grow a cluster of (numerically) equal eigenvalues of T.
        let mut end = pos + 1;
        while end < 2 * n
            && (eig.eigenvalues[order[end - 1]] - eig.eigenvalues[order[end]]).abs() <= cluster_tol
        {
            end += 1;
        }
        let size = end - pos;
        if size % 2 != 0 {
            return Err(NumericalError(format!(
                "realified eigenvalue cluster of odd size {size}; spectrum too ill-separated"
            )));
        }
        let want = size / 2;
        let mu = order[pos..end]
            .iter()
            .map(|&k| eig.eigenvalues[k])
            .sum::<f64>()
            / size as f64;
        let cands: Vec<CVec> = order[pos..end]
            .iter()
            .map(|&k| {
                let w = eig.eigenvectors.column(k);
                CVec::from_fn(n, |i, _| Complex::new(w[i], w[i + n]))
            })
            .collect();
        let picked = extract_complex_basis(&cands, want, 1e-6);
        if picked.len() != want {
            return Err(NumericalError(
                "failed to extract a complex basis from a realified eigenspace".into(),
            ));
        }
        for v in picked {
            values.push(mu);
            for i in 0..n {
                vectors[(i, col)] = v[i];
            }
            col += 1;
        }
        pos = end;
    }
    let mut out = HermitianEigen { values, vectors };
    fix_phases(&mut out.vectors);
    Ok(out)
}

/// Largest eigenvalue; by construction the first entry of [`hermitian_eig`].
pub fn lambda_max(h: &HermitianMatrix) -> Result<f64, NumericalError> {
    Ok(hermitian_eig(h)?.values[0])
}

/// True iff min eigenvalue >= -(eps_abs + eps_rel * max|eig|).
pub fn is_psd(h: &HermitianMatrix, tol: PsdTolerance) -> Result<bool, NumericalError> {
    let values = hermitian_eig(h)?.values;
    Ok(psd_from_values(&values, tol))
}

/// Eigenvalues of the symmetrized real matrix (M + M')/2, descending.
pub fn sym_eigenvalues(m: &Mat) -> Result<Vec<f64>, NumericalError> {
    assert_eq!(m.nrows(), m.ncols(), "matrix must be square");
    let s = Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)]) * 0.5);
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| NumericalError("symmetric eigensolver did not converge".into()))?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

pub fn is_psd_real(m: &Mat, tol: PsdTolerance) -> Result<bool, NumericalError> {
    Ok(psd_from_values(&sym_eigenvalues(m)?, tol))
}

/// Nearest (Frobenius) PSD matrix to (M + M')/2: clip negative eigenvalues
/// at zero. Solver output routinely carries eigenvalue dust at the -1e-11
/// scale; callers with an exact-PSD precondition go through here.
pub fn psd_projection(m: &Mat) -> Result<Mat, NumericalError> {
    assert_eq!(m.nrows(), m.ncols(), "matrix must be square");
    let s = Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)]) * 0.5);
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| NumericalError("symmetric eigensolver did not converge".into()))?;
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let p = &eig.eigenvectors * Mat::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    // Recompose is symmetric only up to rounding; enforce it exactly.
    Ok(Mat::from_fn(p.nrows(), p.ncols(), |i, j| (p[(i, j)] + p[(j, i)]) * 0.5))
}

fn psd_from_values(values: &[f64], tol: PsdTolerance) -> bool {
    if values.is_empty() {
        return true;
    }
    let max_abs = values
        .iter()
        .map(|v| v.abs())
        .fold(0.0_f64, f64::max);
    let min = values[values.len() - 1];
    min >= -(tol.eps_abs + tol.eps_rel * max_abs)
}

/// Largest real part over the (generally complex) spectrum of a real matrix.
pub fn spectral_abscissa(a: &Mat) -> f64 {
    assert_eq!(a.nrows(), a.ncols(), "matrix must be square");
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Max-absolute-entry norm; 0 for an empty matrix.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Real representation [[X, -Y], [Y, X]] of X + iY.
pub(crate) fn realify(x: &Mat, y: &Mat) -> Mat {
    let (r, c) = (x.nrows(), x.ncols());
    assert_eq!((r, c), (y.nrows(), y.ncols()));
    let mut t = Mat::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            t[(i, j)] = x[(i, j)];
            t[(i, j + c)] = -y[(i, j)];
            t[(i + r, j)] = y[(i, j)];
            t[(i + r, j + c)] = x[(i, j)];
        }
    }
    t
}

/// Orthonormal basis of the (complex) null space of `m`: directions whose
/// realified singular value is at most `tol`.
pub(crate) fn complex_nullspace(m: &CMat, tol: f64) -> Result<Vec<CVec>, NumericalError> {
    let (r, c) = (m.nrows(), m.ncols());
    let x = Mat::from_fn(r, c, |i, j| m[(i, j)].re);
    let y = Mat::from_fn(r, c, |i, j| m[(i, j)].im);
    let mut t = realify(&x, &y);
    // Pad with zero rows so the thin SVD still exposes the full row space
    // complement (right singular vectors for every column direction).
    if t.nrows() < t.ncols() {
        t = t.insert_rows(2 * r, 2 * c - 2 * r, 0.0);
    }
    let svd = SVD::try_new(t, false, true, f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| NumericalError("SVD did not converge".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| NumericalError("SVD produced no right singular vectors".into()))?;
    let mut cands = Vec::new();
    for k in 0..svd.singular_values.len() {
        if svd.singular_values[k] <= tol {
            let row = v_t.row(k);
            cands.push(CVec::from_fn(c, |i, _| Complex::new(row[i], row[i + c])));
        }
    }
    let want = cands.len() / 2;
    Ok(extract_complex_basis(&cands, want, 0.5))
}

/// Greedy Hermitian Gram-Schmidt over candidate vectors that realify a
/// complex subspace twice over (v and i*v both appear). Picks up to `want`
/// unit vectors, always taking the candidate with the largest residual, and
/// stops early when the best residual norm drops to `accept_tol`.
fn extract_complex_basis(cands: &[CVec], want: usize, accept_tol: f64) -> Vec<CVec> {
    let mut selected: Vec<CVec> = Vec::with_capacity(want);
    while selected.len() < want {
        let mut best: Option<(f64, CVec)> = None;
        for cand in cands {
            let mut resid = cand.clone();
            for s in &selected {
                let coeff = s.dotc(&resid);
                resid -= s.map(|z| z * coeff);
            }
            let norm = resid.norm();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, resid));
            }
        }
        match best {
            Some((norm, resid)) if norm > accept_tol => {
                selected.push(resid.map(|z| z / Complex::new(norm, 0.0)));
            }
            _ => break,
        }
    }
    selected
}

/// Rotates each column so its first component with magnitude above 1e-12
/// lands on the positive real axis (reproducible output convention).
fn fix_phases(vectors: &mut CMat) {
    let n = vectors.nrows();
    for j in 0..vectors.ncols() {
        let mut phase = None;
        for i in 0..n {
            let z = vectors[(i, j)];
            if z.norm() > 1e-12 {
                phase = Some(z.conj() / Complex::new(z.norm(), 0.0));
                break;
            }
        }
        if let Some(p) = phase {
            for i in 0..n {
                let z = vectors[(i, j)];
                vectors[(i, j)] = z * p;
            }
        }
    }
}
