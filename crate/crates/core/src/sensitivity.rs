//! Local and profile-based sensitivity coefficients.
//!
//! For parameter `i` with co-parameters `-i`, the profile-based sensitivity
//! vector is
//!
//! ```text
//! p_i = v_i - V_{-i} H^{-1} h,
//! H   = V_{-i}'V_{-i} - [e'][W_{-i,-i}],
//! h   = V_{-i}'v_i   - W_{-i,i}' e,
//! ```
//!
//! the total derivative of the fitted response along the conditional
//! least-squares path. With zero residuals it reduces to the residual of
//! regressing `v_i` on `V_{-i}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymmetricSolve};
use crate::model::{Dataset, ModelSpec, SecondDerivatives};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    Observed,
    Zero,
}

impl std::str::FromStr for ResidualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(Self::Observed),
            "zero" => Ok(Self::Zero),
            other => Err(Error::argument(format!("residual mode `{other}`: expected observed or zero"))),
        }
    }
}

/// `[e'][W]` restricted to `rows x cols`: entry `(a, b)` is
/// `sum_j e_j W[j, rows[a], cols[b]]`.
pub fn bracket_contract(e: &DVector<f64>, w: &SecondDerivatives, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
    if e.len() != w.n() {
        return Err(Error::Dimension {
            what: "residual vector",
            expected: w.n(),
            got: e.len(),
        });
    }
    let k = w.k();
    if let Some(&bad) = rows.iter().chain(cols).find(|&&a| a >= k) {
        return Err(Error::argument(format!("bracket index {bad} out of range for {k} parameters")));
    }
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    for (j, &ej) in e.iter().enumerate() {
        if ej == 0.0 {
            continue;
        }
        let slice = w.slice(j);
        for (a, &r) in rows.iter().enumerate() {
            for (b, &c) in cols.iter().enumerate() {
                out[(a, b)] += ej * slice[(r, c)];
            }
        }
    }
    Ok(out)
}

/// The pieces of one profile column: `H_{-i-i}`, `h_{-ii}` and the
/// coefficient `H^{-1} h`.
#[derive(Debug, Clone)]
pub struct ProfileParts {
    pub index: usize,
    pub others: Vec<usize>,
    pub big_h: DMatrix<f64>,
    pub small_h: DVector<f64>,
    pub coef: DVector<f64>,
    /// Condition number of `H_{-i-i}`.
    pub condition: f64,
}

fn check_shapes(i: usize, v: &DMatrix<f64>, w: &SecondDerivatives, e: &DVector<f64>) -> Result<()> {
    let (n, k) = v.shape();
    if i >= k {
        return Err(Error::argument(format!("parameter index {i} out of range for {k} parameters")));
    }
    if w.n() != n || (n > 0 && w.k() != k) {
        return Err(Error::Dimension {
            what: "second-derivative array",
            expected: n,
            got: w.n(),
        });
    }
    if e.len() != n {
        return Err(Error::Dimension {
            what: "residual vector",
            expected: n,
            got: e.len(),
        });
    }
    Ok(())
}

impl ProfileParts {
    pub fn new(i: usize, v: &DMatrix<f64>, w: &SecondDerivatives, e: &DVector<f64>) -> Result<Self> {
        check_shapes(i, v, w, e)?;
        let k = v.ncols();
        let others: Vec<usize> = (0..k).filter(|&a| a != i).collect();
        let v_rest = linalg::columns(v, &others);
        let v_i = v.column(i);
        let big_h = v_rest.transpose() * &v_rest - bracket_contract(e, w, &others, &others)?;
        let small_h = v_rest.transpose() * v_i - bracket_contract(e, w, &others, &[i])?.column(0);
        if others.is_empty() {
            return Ok(Self {
                index: i,
                others,
                big_h,
                small_h,
                coef: DVector::zeros(0),
                condition: 1.0,
            });
        }
        let solver = SymmetricSolve::new(&big_h);
        if solver.is_singular() {
            return Err(Error::Singular {
                what: format!("H for parameter {}", i + 1),
                condition: solver.condition(),
            });
        }
        let mut coef = solver.solve(&small_h);
        // one step of iterative refinement
        let resid = &small_h - &big_h * &coef;
        coef += solver.solve(&resid);
        Ok(Self {
            index: i,
            others,
            big_h,
            small_h,
            coef,
            condition: solver.condition(),
        })
    }

    /// `p_i` for the rows of `v`.
    pub fn profile_vector(&self, v: &DMatrix<f64>) -> DVector<f64> {
        let v_rest = linalg::columns(v, &self.others);
        v.column(self.index) - v_rest * &self.coef
    }
}

/// `p_i` from first and second derivatives and residuals.
pub fn profile_vector_full(i: usize, v: &DMatrix<f64>, w: &SecondDerivatives, e: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(ProfileParts::new(i, v, w, e)?.profile_vector(v))
}

/// Orthogonal split `v_i = P_{V_{-i}} v_i + p_i` by thin QR of `V_{-i}`.
/// Returns `(projection, residual)`.
pub fn projection_split(i: usize, v: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let k = v.ncols();
    if i >= k {
        return Err(Error::argument(format!("parameter index {i} out of range for {k} parameters")));
    }
    let v_i: DVector<f64> = v.column(i).into();
    if k == 1 {
        return Ok((DVector::zeros(v.nrows()), v_i));
    }
    let others: Vec<usize> = (0..k).filter(|&a| a != i).collect();
    let v_rest = linalg::columns(v, &others);
    if v_rest.nrows() < v_rest.ncols() {
        return Err(Error::Singular {
            what: format!("V without parameter {} has fewer rows than columns", i + 1),
            condition: f64::INFINITY,
        });
    }
    let sv = v_rest.clone().svd(false, false).singular_values;
    let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let condition = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
    if !(condition <= linalg::SINGULAR_CONDITION) {
        return Err(Error::Singular {
            what: format!("V without parameter {}", i + 1),
            condition,
        });
    }
    let q = v_rest.qr().q();
    let projection = &q * (q.transpose() * &v_i);
    let residual = &v_i - &projection;
    Ok((projection, residual))
}

/// Zero-residual `p_i = (I - P_{V_{-i}}) v_i`.
pub fn profile_vector_reduced(i: usize, v: &DMatrix<f64>) -> Result<DVector<f64>> {
    projection_split(i, v).map(|(_, r)| r)
}

/// Sensitivity matrices at one parameter value.
#[derive(Debug, Clone)]
pub struct SensitivityBundle {
    pub v: DMatrix<f64>,
    pub w: SecondDerivatives,
    pub e: DVector<f64>,
    pub p: DMatrix<f64>,
    pub residual_mode: ResidualMode,
    pub eval_point: Vec<f64>,
    /// Condition number of `H_{-i-i}` per column.
    pub conditions: Vec<f64>,
    pub warnings: Vec<String>,
}

impl SensitivityBundle {
    /// Assembles `P` column by column from precomputed `V`, `W`, `e`.
    pub fn from_parts(
        v: DMatrix<f64>,
        w: SecondDerivatives,
        e: DVector<f64>,
        residual_mode: ResidualMode,
        eval_point: Vec<f64>,
    ) -> Result<Self> {
        let (n, k) = v.shape();
        let mut p = DMatrix::zeros(n, k);
        let mut conditions = Vec::with_capacity(k);
        let mut warnings = Vec::new();
        for i in 0..k {
            let parts = ProfileParts::new(i, &v, &w, &e)?;
            p.set_column(i, &parts.profile_vector(&v));
            if parts.condition > linalg::WARN_CONDITION {
                warnings.push(format!(
                    "H for parameter {} is ill-conditioned (condition {:.3e})",
                    i + 1,
                    parts.condition
                ));
            }
            conditions.push(parts.condition);
        }
        Ok(Self {
            v,
            w,
            e,
            p,
            residual_mode,
            eval_point,
            conditions,
            warnings,
        })
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn k(&self) -> usize {
        self.v.ncols()
    }

    /// CSV with columns `row, v_1..v_k, p_1..p_k` (rows numbered from 1).
    pub fn to_csv(&self) -> String {
        let k = self.k();
        let mut header = vec!["row".to_string()];
        header.extend((1..=k).map(|a| format!("v_{a}")));
        header.extend((1..=k).map(|a| format!("p_{a}")));
        let rows = (0..self.n()).map(|j| {
            let mut row = vec![(j + 1).to_string()];
            row.extend(self.v.row(j).iter().chain(self.p.row(j).iter()).map(|&x| crate::io::fmt_f64(x)));
            row
        });
        crate::io::csv_text(&header, rows)
    }

    pub fn metadata(&self) -> SensitivityMeta {
        SensitivityMeta {
            residual_mode: self.residual_mode,
            eval_point: self.eval_point.clone(),
            conditions: self.conditions.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

/// JSON metadata accompanying the sensitivity CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityMeta {
    pub residual_mode: ResidualMode,
    pub eval_point: Vec<f64>,
    pub conditions: Vec<f64>,
    pub warnings: Vec<String>,
}

/// `V`, `W`, residuals and `P` for `data` at `theta`.
pub fn profile_matrix(model: &ModelSpec, data: &Dataset, theta: &[f64], mode: ResidualMode) -> Result<SensitivityBundle> {
    let v = model.jacobian(data, theta)?;
    let w = model.second_derivatives(data, theta)?;
    let e = match mode {
        ResidualMode::Observed => data.response_vector()? - model.predict(data, theta)?,
        ResidualMode::Zero => DVector::zeros(data.n()),
    };
    SensitivityBundle::from_parts(v, w, e, mode, theta.to_vec())
}
