//! Nonlinear regression models `y = f(x, theta) + eps`, datasets of
//! experimental settings, and derivative evaluation.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finite_diff;
use crate::region::DesignRegion;

type ResponseFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync;
type HessianFn = dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference,
}

/// A single-response nonlinear model with `k` parameters and `m` design
/// variables.
///
/// Analytic first and second derivatives are optional. When either is
/// missing, central finite differences of the response are used instead.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    k: usize,
    m: usize,
    response: Arc<ResponseFn>,
    gradient: Option<Arc<GradientFn>>,
    hessian: Option<Arc<HessianFn>>,
    bounds: Option<DesignRegion>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("k", &self.k)
            .field("m", &self.m)
            .field("derivative_source", &self.derivative_source())
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl ModelSpec {
    pub fn new<F>(name: impl Into<String>, k: usize, m: usize, response: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            k,
            m,
            response: Arc::new(response),
            gradient: None,
            hessian: None,
            bounds: None,
        }
    }

    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    pub fn with_bounds(mut self, bounds: DesignRegion) -> Self {
        self.bounds = Some(bounds);
        self
    }

    /// The same model with analytic derivatives dropped, so every derivative
    /// goes through the finite-difference engine.
    pub fn finite_difference(&self) -> Self {
        Self {
            gradient: None,
            hessian: None,
            name: format!("{} (finite-difference)", self.name),
            ..self.clone()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_params(&self) -> usize {
        self.k
    }

    pub fn n_vars(&self) -> usize {
        self.m
    }

    pub fn bounds(&self) -> Option<&DesignRegion> {
        self.bounds.as_ref()
    }

    pub fn derivative_source(&self) -> DerivativeSource {
        if self.gradient.is_some() && self.hessian.is_some() {
            DerivativeSource::Analytic
        } else {
            DerivativeSource::FiniteDifference
        }
    }

    fn check_dims(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        if x.len() != self.m {
            return Err(Error::Dimension {
                what: "design point",
                expected: self.m,
                got: x.len(),
            });
        }
        if theta.len() != self.k {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: self.k,
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn non_finite(&self, x: &[f64], theta: &[f64]) -> Error {
        Error::Evaluation {
            model: self.name.clone(),
            x: x.to_vec(),
            theta: theta.to_vec(),
        }
    }

    /// Predicted response `f(x, theta)`.
    pub fn eval(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_dims(x, theta)?;
        let v = (self.response)(x, theta);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.non_finite(x, theta))
        }
    }

    /// Row of local sensitivities `df/dtheta` at `(x, theta)`.
    pub fn jacobian_row(&self, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        self.check_dims(x, theta)?;
        let g = match &self.gradient {
            Some(g) => g(x, theta),
            None => finite_diff::gradient(|t| (self.response)(x, t), theta),
        };
        if g.len() != self.k {
            return Err(Error::Dimension {
                what: "gradient",
                expected: self.k,
                got: g.len(),
            });
        }
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(self.non_finite(x, theta))
        }
    }

    /// Symmetric matrix of second parameter derivatives at `(x, theta)`.
    pub fn hessian_point(&self, x: &[f64], theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dims(x, theta)?;
        let h = match &self.hessian {
            Some(h) => h(x, theta),
            None => finite_diff::hessian(|t| (self.response)(x, t), theta),
        };
        if h.shape() != (self.k, self.k) {
            return Err(Error::Dimension {
                what: "hessian",
                expected: self.k,
                got: h.nrows(),
            });
        }
        if h.iter().all(|v| v.is_finite()) {
            Ok(h)
        } else {
            Err(self.non_finite(x, theta))
        }
    }

    /// Predicted responses at every row of `data`.
    pub fn predict(&self, data: &Dataset, theta: &[f64]) -> Result<DVector<f64>> {
        self.check_dataset(data)?;
        let mut out = DVector::zeros(data.n());
        for (j, x) in data.rows().enumerate() {
            out[j] = self.eval(x, theta).map_err(|e| e.at_row(j))?;
        }
        Ok(out)
    }

    /// The n x k matrix `V` of local sensitivities, one row per dataset row.
    pub fn jacobian(&self, data: &Dataset, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dataset(data)?;
        let mut v = DMatrix::zeros(data.n(), self.k);
        for (j, x) in data.rows().enumerate() {
            let row = self.jacobian_row(x, theta).map_err(|e| e.at_row(j))?;
            v.set_row(j, &row.transpose());
        }
        Ok(v)
    }

    /// The n x k x k array of second derivatives, one symmetric slice per row.
    pub fn second_derivatives(&self, data: &Dataset, theta: &[f64]) -> Result<SecondDerivatives> {
        self.check_dataset(data)?;
        data.rows()
            .enumerate()
            .map(|(j, x)| self.hessian_point(x, theta).map_err(|e| e.at_row(j)))
            .collect::<Result<Vec<_>>>()
            .map(SecondDerivatives)
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.m() != self.m {
            return Err(Error::Dimension {
                what: "dataset columns",
                expected: self.m,
                got: data.m(),
            });
        }
        Ok(())
    }
}

/// Second-derivative array `W[j, a, b] = d2 f(x_j) / dtheta_a dtheta_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondDerivatives(pub Vec<DMatrix<f64>>);

impl SecondDerivatives {
    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn k(&self) -> usize {
        self.0.first().map_or(0, |s| s.nrows())
    }

    pub fn slice(&self, j: usize) -> &DMatrix<f64> {
        &self.0[j]
    }

    pub fn push(&mut self, slice: DMatrix<f64>) {
        self.0.push(slice);
    }
}

/// Experimental settings (n rows of m design variables) with optional
/// observed responses. Replicates are repeated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    m: usize,
    x: Vec<f64>,
    y: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, y: Option<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::argument("dataset must have at least one row"));
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(Error::argument("dataset rows need at least one design variable"));
        }
        let mut x = Vec::with_capacity(n * m);
        for (j, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension {
                    what: "dataset row",
                    expected: m,
                    got: row.len(),
                }
                .at_row(j));
            }
            x.extend(row);
        }
        Self::from_flat(m, x, y)
    }

    /// Builds from a row-major buffer of `n * m` settings.
    pub fn from_flat(m: usize, x: Vec<f64>, y: Option<Vec<f64>>) -> Result<Self> {
        if m == 0 || x.is_empty() || x.len() % m != 0 {
            return Err(Error::argument(format!(
                "settings buffer of length {} does not hold whole rows of {m} variables",
                x.len()
            )));
        }
        let n = x.len() / m;
        if let Some(y) = &y {
            if y.len() != n {
                return Err(Error::Dimension {
                    what: "response vector",
                    expected: n,
                    got: y.len(),
                });
            }
        }
        if x.iter().chain(y.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::argument("dataset contains non-finite values"));
        }
        Ok(Self { m, x, y })
    }

    /// Settings only, e.g. a candidate design.
    pub fn design(points: &[Vec<f64>]) -> Result<Self> {
        Self::new(points.to_vec(), None)
    }

    pub fn n(&self) -> usize {
        self.x.len() / self.m
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.x[j * self.m..(j + 1) * self.m]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.x.chunks_exact(self.m)
    }

    pub fn y(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn require_y(&self) -> Result<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::argument("dataset has no observed responses"))
    }

    pub fn response_vector(&self) -> Result<DVector<f64>> {
        self.require_y().map(DVector::from_column_slice)
    }

    /// This dataset with one more row appended.
    pub fn with_row(&self, x: &[f64], y: Option<f64>) -> Result<Self> {
        if x.len() != self.m {
            return Err(Error::Dimension {
                what: "appended row",
                expected: self.m,
                got: x.len(),
            });
        }
        let mut xs = self.x.clone();
        xs.extend_from_slice(x);
        let ys = match (&self.y, y) {
            (Some(old), Some(v)) => {
                let mut ys = old.clone();
                ys.push(v);
                Some(ys)
            }
            (None, None) => None,
            _ => return Err(Error::argument("appended row must match the dataset's response presence")),
        };
        Self::from_flat(self.m, xs, ys)
    }

    /// The same settings with a new response vector.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.m, self.x.clone(), Some(y))
    }

    /// Checks every row against a region.
    pub fn check_within(&self, region: &DesignRegion) -> Result<()> {
        for (j, row) in self.rows().enumerate() {
            if !region.contains(row) {
                return Err(Error::argument(format!("settings {row:?} outside region {region}")).at_row(j));
            }
        }
        Ok(())
    }

    /// Reads `x1,...,xm[,y]` CSV.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv_reader(file, path)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let names: Vec<&str> = headers.iter().collect();
        let has_y = names.last() == Some(&"y");
        let m = names.len() - usize::from(has_y);
        if m == 0 {
            return Err(parse_err(1, "header needs at least one x column".into()));
        }
        for (d, name) in names[..m].iter().enumerate() {
            if *name != format!("x{}", d + 1) {
                return Err(parse_err(1, format!("expected column `x{}`, found `{name}`", d + 1)));
            }
        }

        let mut x = Vec::new();
        let mut y = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let line = idx + 2;
            let record = record.map_err(|e| parse_err(line, e.to_string()))?;
            if record.len() != names.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} fields, found {}", names.len(), record.len()),
                ));
            }
            for (c, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(line, format!("`{field}` is not a number")))?;
                if c < m {
                    x.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        if x.is_empty() {
            return Err(parse_err(1, "no data rows".into()));
        }
        Self::from_flat(m, x, has_y.then_some(y))
            .map_err(|e| parse_err(1, e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.m).map(|d| format!("x{d}")).collect();
        out.push_str(&header.join(","));
        if self.y.is_some() {
            out.push_str(",y");
        }
        out.push('\n');
        for (j, row) in self.rows().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|v| crate::io::fmt_f64(*v)).collect();
            if let Some(y) = &self.y {
                fields.push(crate::io::fmt_f64(y[j]));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Split of the parameter vector into the parameter of interest
/// `theta_i` (0-based `index`) and the remaining `k - 1` parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamPartition {
    index: usize,
    k: usize,
}

impl ParamPartition {
    pub fn new(index: usize, k: usize) -> Result<Self> {
        if index >= k {
            return Err(Error::argument(format!(
                "parameter index {index} out of range for {k} parameters"
            )));
        }
        Ok(Self { index, k })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Indices of the remaining parameters, in order.
    pub fn others(&self) -> Vec<usize> {
        (0..self.k).filter(|&a| a != self.index).collect()
    }

    pub fn split(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let rest = theta
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != self.index)
            .map(|(_, v)| *v)
            .collect();
        (theta[self.index], rest)
    }

    pub fn merge(&self, theta_i: f64, rest: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rest.len() + 1, self.k);
        let mut out = Vec::with_capacity(self.k);
        out.extend_from_slice(&rest[..self.index]);
        out.push(theta_i);
        out.extend_from_slice(&rest[self.index..]);
        out
    }
}

/// Additive spherical normal observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma.is_finite() && sigma > 0.0 {
            Ok(Self { sigma })
        } else {
            Err(Error::argument(format!("noise sigma must be positive, got {sigma}")))
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}
