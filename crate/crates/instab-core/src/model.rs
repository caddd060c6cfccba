//! System description, file format, validation, digests.
//!
//! A model is the tuple (A, B, C_1..C_l1, D, optional F): drift `A`,
//! budgeted input matrix `B`, state-proportional noise channels `C_i`,
//! state-independent noise columns `D`, and an optional unconstrained input
//! channel `F`. The file format is JSON with matrices as arrays of rows:
//!
//! ```json
//! {
//!   "label": "example",
//!   "A": [[0.0, 1.0], [-1.0, 1.5]],
//!   "B": [[0.0], [1.0]],
//!   "C": [[[0.0, 0.0], [2.0, 0.0]]],
//!   "D": [[1.0], [1.0]],
//!   "u_hat": 3.0
//! }
//! ```
//!
//! `F` is optional; `u_hat` is a number or `"unbounded"`. At least one
//! additive column is required (`D` nonempty): every verdict this crate can
//! produce rests on a nonzero additive noise trace, so a model without the
//! channel is a load-time error rather than a silent zero.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matrix::Mat;
use crate::Threshold;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub a: Mat,
    pub b: Mat,
    pub c: Vec<Mat>,
    pub d: Mat,
    pub f: Option<Mat>,
    pub u_hat: Option<Threshold>,
    pub label: Option<String>,
}

impl SystemModel {
    pub fn new(a: Mat, b: Mat, c: Vec<Mat>, d: Mat) -> Result<Self, ModelError> {
        let model = SystemModel { a, b, c, d, f: None, u_hat: None, label: None };
        match model.validate().into_iter().next() {
            None => Ok(model),
            Some(first) => Err(ModelError::Dimension(first)),
        }
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Budgeted input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Number of state-proportional noise channels.
    pub fn ell1(&self) -> usize {
        self.c.len()
    }

    /// Number of additive noise channels.
    pub fn ell2(&self) -> usize {
        self.d.ncols()
    }

    /// True when the state-proportional part vanishes identically, either
    /// because the C list is empty or every C_i is the zero matrix. The
    /// eigenvector threshold and the non-heuristic rate limit apply exactly
    /// in this case.
    pub fn is_additive_only(&self) -> bool {
        self.c.iter().all(|ci| ci.iter().all(|&v| v == 0.0))
    }

    /// Scalar analysis applies: one state, one input, at most one
    /// state-proportional channel.
    pub fn is_scalar(&self) -> bool {
        self.n() == 1 && self.m() == 1 && self.ell1() <= 1
    }

    /// Empty iff all structural invariants hold; otherwise human-readable
    /// violations.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.a.nrows();
        if n == 0 {
            out.push("A must be nonempty".into());
            return out;
        }
        if self.a.ncols() != n {
            out.push(format!("A must be square, got {}x{}", n, self.a.ncols()));
        }
        if self.b.nrows() != n {
            out.push(format!("B must have {} rows, got {}", n, self.b.nrows()));
        }
        if self.b.ncols() == 0 {
            out.push("B must have at least one column".into());
        }
        for (i, ci) in self.c.iter().enumerate() {
            if ci.nrows() != n || ci.ncols() != n {
                out.push(format!(
                    "C[{}] must be {n}x{n}, got {}x{}",
                    i,
                    ci.nrows(),
                    ci.ncols()
                ));
            }
        }
        if self.d.nrows() != n {
            out.push(format!("D must have {} rows, got {}", n, self.d.nrows()));
        }
        if self.d.ncols() == 0 {
            out.push("D must have at least one column (additive channel required)".into());
        }
        if let Some(f) = &self.f {
            if f.nrows() != n {
                out.push(format!("F must have {} rows, got {}", n, f.nrows()));
            }
            if f.ncols() == 0 {
                out.push("F, when present, must have at least one column".into());
            }
        }
        let mats: Vec<(&str, &Mat)> = [("A", &self.a), ("B", &self.b), ("D", &self.d)]
            .into_iter()
            .chain(self.c.iter().map(|ci| ("C", ci)))
            .chain(self.f.iter().map(|f| ("F", f)))
            .collect();
        for (name, m) in mats {
            if m.iter().any(|v| !v.is_finite()) {
                out.push(format!("{name} contains a non-finite entry"));
            }
        }
        if let Some(Threshold::Finite(u)) = self.u_hat {
            if !(u >= 0.0 && u.is_finite()) {
                out.push(format!("u_hat must be finite and nonnegative, got {u}"));
            }
        }
        out
    }

    /// SHA-256 of the canonical dynamics encoding (A, B, C, D, F; label and
    /// u_hat excluded - the digest identifies the system, not the analysis
    /// request). Certificates carry it so a later re-check can refuse a
    /// mismatched model file.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Canon {
            a: Vec<Vec<f64>>,
            b: Vec<Vec<f64>>,
            c: Vec<Vec<Vec<f64>>>,
            d: Vec<Vec<f64>>,
            f: Option<Vec<Vec<f64>>>,
        }
        let canon = Canon {
            a: rows(&self.a),
            b: rows(&self.b),
            c: self.c.iter().map(rows).collect(),
            d: rows(&self.d),
            f: self.f.as_ref().map(rows),
        };
        let bytes = serde_json::to_vec(&canon).expect("canonical encoding is infallible");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let doc: ModelDoc =
            serde_json::from_str(s).map_err(|e| ModelError::Parse(e.to_string()))?;
        let model = SystemModel {
            a: to_mat("A", doc.a)?,
            b: to_mat("B", doc.b)?,
            c: doc
                .c
                .unwrap_or_default()
                .into_iter()
                .enumerate()
                .map(|(i, m)| to_mat(&format!("C[{i}]"), m))
                .collect::<Result<_, _>>()?,
            d: to_mat("D", doc.d)?,
            f: doc.f.map(|m| to_mat("F", m)).transpose()?,
            u_hat: doc.u_hat,
            label: doc.label,
        };
        let diagnostics = model.validate();
        if !diagnostics.is_empty() {
            let msg = diagnostics.join("; ");
            return Err(if msg.contains("non-finite") || msg.contains("u_hat") {
                ModelError::Value(msg)
            } else {
                ModelError::Dimension(msg)
            });
        }
        Ok(model)
    }

    pub fn to_json_string(&self) -> String {
        let doc = ModelDoc {
            label: self.label.clone(),
            a: rows(&self.a),
            b: rows(&self.b),
            c: if self.c.is_empty() {
                None
            } else {
                Some(self.c.iter().map(rows).collect())
            },
            d: rows(&self.d),
            f: self.f.as_ref().map(rows),
            u_hat: self.u_hat,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("model serialization is infallible");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json_string()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn load_model(path: &Path) -> Result<SystemModel, ModelError> {
    SystemModel::load(path)
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    c: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
    #[serde(rename = "F", skip_serializing_if = "Option::is_none")]
    f: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    u_hat: Option<Threshold>,
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn to_mat(name: &str, rows: Vec<Vec<f64>>) -> Result<Mat, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::Dimension(format!("{name} has no rows")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(ModelError::Dimension(format!("{name} has empty rows")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelError::Dimension(format!("{name} has ragged rows")));
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EXAMPLE: &str = r#"{
        "A": [[0, 1], [-1, 1.5]],
        "B": [[0], [1]],
        "C": [[[0, 0], [2, 0]], [[0, 0], [0, 2]]],
        "D": [[1], [1]]
    }"#;

    #[test]
    fn loads_oscillator_family_member() {
        let m = SystemModel::from_json_str(EXAMPLE).unwrap();
        assert_eq!((m.n(), m.m(), m.ell1(), m.ell2()), (2, 1, 2, 1));
        assert!(m.validate().is_empty());
        assert!(!m.is_additive_only());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let bad = r#"{"A": [[0,1],[-1,1.5]], "B": [[0],[1],[2]], "D": [[1],[1]]}"#;
        assert!(matches!(
            SystemModel::from_json_str(bad),
            Err(ModelError::Dimension(_))
        ));
    }

    #[test]
    fn zero_noise_column_loads() {
        let z = r#"{"A": [[1]], "B": [[1]], "D": [[0]]}"#;
        let m = SystemModel::from_json_str(z).unwrap();
        assert_eq!(m.ell2(), 1);
        assert!(m.is_additive_only());
        assert!(m.is_scalar());
    }

    #[test]
    fn missing_additive_channel_is_rejected() {
        let bad = r#"{"A": [[1]], "B": [[1]], "D": []}"#;
        assert!(SystemModel::from_json_str(bad).is_err());
    }

    #[test]
    fn validate_flags_constructed_defects() {
        let mut m = SystemModel::from_json_str(EXAMPLE).unwrap();
        m.a[(0, 0)] = f64::NAN;
        assert!(m.validate().iter().any(|d| d.contains("non-finite")));
        m.a[(0, 0)] = 0.0;
        m.f = Some(Mat::zeros(3, 1));
        assert!(m.validate().iter().any(|d| d.contains("F must have 2 rows")));
    }

    #[test]
    fn digest_ignores_label_keeps_dynamics() {
        let mut m1 = SystemModel::from_json_str(EXAMPLE).unwrap();
        let mut m2 = m1.clone();
        m2.label = Some("renamed".into());
        m2.u_hat = Some(Threshold::Finite(2.0));
        assert_eq!(m1.digest(), m2.digest());
        m1.d[(0, 0)] = 2.0;
        assert_ne!(m1.digest(), m2.digest());
    }

    #[test]
    fn u_hat_unbounded_round_trips() {
        let s = r#"{"A": [[1]], "B": [[1]], "D": [[1]], "u_hat": "unbounded"}"#;
        let m = SystemModel::from_json_str(s).unwrap();
        assert_eq!(m.u_hat, Some(Threshold::Unbounded));
        let back = SystemModel::from_json_str(&m.to_json_string()).unwrap();
        assert_eq!(back, m);
    }

    fn arb_entries(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(
            prop_oneof![
                -1e3..1e3_f64,
                Just(0.0),
                -1e-30..1e-30_f64,
            ],
            len,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn save_load_round_trip(
            n in 1usize..4,
            m in 1usize..3,
            l1 in 0usize..3,
            l2 in 1usize..3,
            seed_entries in arb_entries(4 * 4 + 4 * 3 + 3 * 4 * 4 + 4 * 3),
        ) {
            let mut it = seed_entries.into_iter().cycle();
            let mut take = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| it.next().unwrap());
            let model = SystemModel {
                a: take(n, n),
                b: take(n, m),
                c: (0..l1).map(|_| take(n, n)).collect(),
                d: take(n, l2),
                f: None,
                u_hat: None,
                label: Some("round-trip".into()),
            };
            prop_assert!(model.validate().is_empty());
            let back = SystemModel::from_json_str(&model.to_json_string()).unwrap();
            prop_assert_eq!(back, model);
        }
    }
}
