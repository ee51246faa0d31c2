//! Unconditional and conditional nonlinear least squares.
//!
//! The solver is Levenberg-Marquardt on the residual vector with Marquardt
//! diagonal scaling. Each damped step solves the stacked least-squares
//! problem `[J; sqrt(lambda) D] d = [r; 0]` by QR. Conditional fits reuse
//! the same solver on the reduced parameter vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, ModelSpec, ParamPartition};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged when `(S_old - S_new) <= rel_sse_tol * S_old`.
    pub rel_sse_tol: f64,
    /// Converged when `|step| <= step_tol * (1 + |theta|)`.
    pub step_tol: f64,
    /// Gate on the normal equations: `|V'e| <= gradient_tol * (1 + |y|)`.
    pub gradient_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_sse_tol: 1e-10,
            step_tol: 1e-8,
            gradient_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub sse: f64,
    pub lambda: f64,
    pub step_norm: f64,
}

/// Residuals `y - f` and Jacobian `df/dtheta` of a least-squares problem.
trait Residuals {
    fn n_params(&self) -> usize;
    fn eval(&self, theta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

struct FullProblem<'a> {
    model: &'a ModelSpec,
    data: &'a Dataset,
    y: DVector<f64>,
}

impl Residuals for FullProblem<'_> {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn eval(&self, theta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let r = &self.y - self.model.predict(self.data, theta)?;
        let j = self.model.jacobian(self.data, theta)?;
        Ok((r, j))
    }
}

struct ConditionalProblem<'a> {
    model: &'a ModelSpec,
    data: &'a Dataset,
    y: DVector<f64>,
    partition: ParamPartition,
    theta_i: f64,
}

impl Residuals for ConditionalProblem<'_> {
    fn n_params(&self) -> usize {
        self.model.n_params() - 1
    }

    fn eval(&self, rest: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let theta = self.partition.merge(self.theta_i, rest);
        let r = &self.y - self.model.predict(self.data, &theta)?;
        let v = self.model.jacobian(self.data, &theta)?;
        Ok((r, linalg::columns(&v, &self.partition.others())))
    }
}

struct Solution {
    theta: Vec<f64>,
    residuals: DVector<f64>,
    jacobian: DMatrix<f64>,
    sse: f64,
    iterations: usize,
    trace: Vec<TraceStep>,
}

fn damped_step(j: &DMatrix<f64>, r: &DVector<f64>, scale: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let (n, k) = j.shape();
    let mut a = DMatrix::zeros(n + k, k);
    a.view_mut((0, 0), (n, k)).copy_from(j);
    let root = lambda.sqrt();
    for c in 0..k {
        a[(n + c, c)] = root * scale[c];
    }
    let mut b = DVector::zeros(n + k);
    b.rows_mut(0, n).copy_from(r);
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let step = qr.r().solve_upper_triangular(&qtb)?;
    step.iter().all(|v| v.is_finite()).then_some(step)
}

fn levenberg_marquardt(problem: &dyn Residuals, start: &[f64], y_norm: f64, opts: &LmOptions) -> Result<Solution> {
    let k = problem.n_params();
    if start.len() != k {
        return Err(Error::Dimension {
            what: "starting values",
            expected: k,
            got: start.len(),
        });
    }
    let mut theta = DVector::from_column_slice(start);
    let (mut r, mut j) = problem.eval(theta.as_slice())?;
    let mut sse = r.norm_squared();
    let mut trace = vec![TraceStep {
        iteration: 0,
        sse,
        lambda: 0.0,
        step_norm: 0.0,
    }];
    let grad_limit = opts.gradient_tol * (1.0 + y_norm);
    let solution = |theta: DVector<f64>, r, j, sse, iterations, trace| Solution {
        theta: theta.as_slice().to_vec(),
        residuals: r,
        jacobian: j,
        sse,
        iterations,
        trace,
    };

    if k == 0 {
        return Ok(solution(theta, r, j, sse, 0, trace));
    }

    let mut lambda = 1e-3;
    for iteration in 1..=opts.max_iterations {
        // Marquardt scaling by column norms; unit scale for zero columns
        let scale = DVector::from_iterator(
            k,
            j.column_iter().map(|c| {
                let n = c.norm();
                if n > 0.0 { n } else { 1.0 }
            }),
        );

        let mut accepted = None;
        while lambda <= 1e16 {
            if let Some(step) = damped_step(&j, &r, &scale, lambda) {
                let candidate = &theta + &step;
                if let Ok((r_new, j_new)) = problem.eval(candidate.as_slice()) {
                    let sse_new = r_new.norm_squared();
                    // near the minimum S is flat to rounding while theta still
                    // contracts, so ties within a few ulps count as descent
                    if sse_new <= sse + 8.0 * f64::EPSILON * sse {
                        accepted = Some((candidate, step, r_new, j_new, sse_new));
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }

        let gradient_small = |j: &DMatrix<f64>, r: &DVector<f64>| (j.transpose() * r).norm() <= grad_limit;

        let Some((candidate, step, r_new, j_new, sse_new)) = accepted else {
            // no descent direction left: either at the minimum to rounding
            // precision or stuck
            if gradient_small(&j, &r) {
                return Ok(solution(theta, r, j, sse, iteration, trace));
            }
            break;
        };

        let step_norm = step.norm();
        let rel_change = if sse > 0.0 { (sse - sse_new) / sse } else { 0.0 };
        let small_step = step_norm <= opts.step_tol * (1.0 + candidate.norm());
        theta = candidate;
        r = r_new;
        j = j_new;
        sse = sse_new;
        trace.push(TraceStep {
            iteration,
            sse,
            lambda,
            step_norm,
        });
        lambda = (lambda / 10.0).max(1e-12);

        if (rel_change <= opts.rel_sse_tol || small_step || sse == 0.0) && gradient_small(&j, &r) {
            return Ok(solution(theta, r, j, sse, iteration, trace));
        }
    }

    Err(Error::NotConverged {
        iterations: trace.last().map_or(0, |t| t.iteration),
        sse,
        theta: theta.as_slice().to_vec(),
        trace,
    })
}

/// Linear-approximation precision `s^2 (V'V)^{-1}` and derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision {
    pub covariance: DMatrix<f64>,
    pub correlation: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    /// Condition number of `V'V`.
    pub condition: f64,
}

impl Precision {
    /// `None` when `V'V` is singular.
    pub fn from_jacobian(v: &DMatrix<f64>, s2: f64) -> Option<Self> {
        let (inv, condition) = linalg::gram_inverse(v)?;
        Some(Self::from_covariance(inv * s2, condition))
    }

    pub fn from_covariance(covariance: DMatrix<f64>, condition: f64) -> Self {
        let k = covariance.nrows();
        let std_errors: Vec<f64> = (0..k).map(|a| covariance[(a, a)].sqrt()).collect();
        let correlation = DMatrix::from_fn(k, k, |a, b| {
            if a == b {
                1.0
            } else {
                (covariance[(a, b)] / (std_errors[a] * std_errors[b])).clamp(-1.0, 1.0)
            }
        });
        Self {
            covariance,
            correlation,
            std_errors,
            condition,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    /// `e = y - eta(theta_hat)`.
    pub residuals: Vec<f64>,
    pub sse: f64,
    /// `sse / (n - k)`.
    pub s2: f64,
    pub dof: usize,
    /// `None` when `V'V` is singular at the solution.
    pub precision: Option<Precision>,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceStep>,
}

impl FitResult {
    pub fn s(&self) -> f64 {
        self.s2.sqrt()
    }

    pub fn std_errors(&self) -> Option<&[f64]> {
        self.precision.as_ref().map(|p| p.std_errors.as_slice())
    }

    pub fn correlation(&self, a: usize, b: usize) -> Option<f64> {
        self.precision.as_ref().map(|p| p.correlation[(a, b)])
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary::from(self)
    }
}

/// JSON form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub estimates: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    /// Lower triangle by rows, diagonal included.
    pub correlation: Option<Vec<Vec<f64>>>,
    pub sse: f64,
    pub s2: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl From<&FitResult> for FitSummary {
    fn from(fit: &FitResult) -> Self {
        Self {
            estimates: fit.theta_hat.clone(),
            std_errors: fit.precision.as_ref().map(|p| p.std_errors.clone()),
            correlation: fit.precision.as_ref().map(|p| {
                (0..p.correlation.nrows())
                    .map(|a| (0..=a).map(|b| p.correlation[(a, b)]).collect())
                    .collect()
            }),
            sse: fit.sse,
            s2: fit.s2,
            converged: fit.converged,
            iterations: fit.iterations,
        }
    }
}

/// `S(theta) = sum_j (y_j - f(x_j, theta))^2`.
pub fn sum_of_squares(model: &ModelSpec, data: &Dataset, theta: &[f64]) -> Result<f64> {
    let y = data.response_vector()?;
    Ok((y - model.predict(data, theta)?).norm_squared())
}

fn check_fit_inputs(model: &ModelSpec, data: &Dataset) -> Result<DVector<f64>> {
    let y = data.response_vector()?;
    if data.n() <= model.n_params() {
        return Err(Error::argument(format!(
            "need more observations ({}) than parameters ({})",
            data.n(),
            model.n_params()
        )));
    }
    Ok(y)
}

pub fn fit_ls(model: &ModelSpec, data: &Dataset, theta0: &[f64]) -> Result<FitResult> {
    fit_ls_with(model, data, theta0, &LmOptions::default())
}

pub fn fit_ls_with(model: &ModelSpec, data: &Dataset, theta0: &[f64], opts: &LmOptions) -> Result<FitResult> {
    let y = check_fit_inputs(model, data)?;
    let y_norm = y.norm();
    let problem = FullProblem { model, data, y };
    let sol = levenberg_marquardt(&problem, theta0, y_norm, opts)?;
    let dof = data.n() - model.n_params();
    let s2 = sol.sse / dof as f64;
    Ok(FitResult {
        precision: Precision::from_jacobian(&sol.jacobian, s2),
        theta_hat: sol.theta,
        residuals: sol.residuals.as_slice().to_vec(),
        sse: sol.sse,
        s2,
        dof,
        converged: true,
        iterations: sol.iterations,
        trace: sol.trace,
    })
}

/// Least-squares estimate of the remaining parameters with `theta_i` fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalFit {
    pub index: usize,
    pub theta_i: f64,
    pub theta_minus: Vec<f64>,
    pub sse: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ConditionalFit {
    pub fn full_theta(&self) -> Vec<f64> {
        let k = self.theta_minus.len() + 1;
        ParamPartition::new(self.index, k)
            .expect("index valid by construction")
            .merge(self.theta_i, &self.theta_minus)
    }
}

pub fn fit_conditional(
    model: &ModelSpec,
    data: &Dataset,
    index: usize,
    theta_i: f64,
    start: &[f64],
) -> Result<ConditionalFit> {
    let y = check_fit_inputs(model, data)?;
    let y_norm = y.norm();
    let partition = ParamPartition::new(index, model.n_params())?;
    let problem = ConditionalProblem {
        model,
        data,
        y,
        partition,
        theta_i,
    };
    let sol = levenberg_marquardt(&problem, start, y_norm, &LmOptions::default())?;
    Ok(ConditionalFit {
        index,
        theta_i,
        theta_minus: sol.theta,
        sse: sol.sse,
        converged: true,
        iterations: sol.iterations,
    })
}

/// Conditional fits along `grid`, each warm-started from the previous
/// solution. A failed point is recorded with `converged = false` and does not
/// stop the trace.
pub fn profile_trace(
    model: &ModelSpec,
    data: &Dataset,
    index: usize,
    grid: &[f64],
    start: &[f64],
) -> Result<Vec<ConditionalFit>> {
    check_fit_inputs(model, data)?;
    ParamPartition::new(index, model.n_params())?;
    let mut warm = start.to_vec();
    let mut out = Vec::with_capacity(grid.len());
    for &theta_i in grid {
        match fit_conditional(model, data, index, theta_i, &warm) {
            Ok(fit) => {
                warm.clone_from(&fit.theta_minus);
                out.push(fit);
            }
            Err(Error::NotConverged {
                iterations, sse, theta, ..
            }) => out.push(ConditionalFit {
                index,
                theta_i,
                theta_minus: theta,
                sse,
                converged: false,
                iterations,
            }),
            Err(e) if e.is_usage() => return Err(e),
            Err(_) => out.push(ConditionalFit {
                index,
                theta_i,
                theta_minus: warm.clone(),
                sse: f64::NAN,
                converged: false,
                iterations: 0,
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridMode {
    /// `S(theta1, theta2)` over the Cartesian grid.
    UnconditionalPairs,
    /// `S(theta1~(theta2), theta2~(theta1))` at each grid cell, where
    /// `theta1~(theta2)` is the conditional estimate of theta1 given theta2.
    ConditionalTrace,
}

#[derive(Debug, Clone)]
pub struct SseGrid {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    /// `sse[(a, b)]` belongs to `(theta1[a], theta2[b])`.
    pub sse: DMatrix<f64>,
    pub mode: GridMode,
}

impl SseGrid {
    /// CSV with header `theta1,theta2,sse`.
    pub fn to_csv(&self) -> String {
        let header = ["theta1", "theta2", "sse"].map(String::from);
        let rows = self.theta1.iter().enumerate().flat_map(|(a, &t1)| {
            self.theta2
                .iter()
                .enumerate()
                .map(move |(b, &t2)| vec![t1, t2, self.sse[(a, b)]])
        });
        crate::io::csv_table(&header, rows)
    }

    /// Grid cell with the smallest SSE.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for a in 0..self.sse.nrows() {
            for b in 0..self.sse.ncols() {
                if self.sse[(a, b)] < self.sse[best] {
                    best = (a, b);
                }
            }
        }
        best
    }
}

pub fn sse_grid(
    model: &ModelSpec,
    data: &Dataset,
    grid1: &[f64],
    grid2: &[f64],
    mode: GridMode,
    start: &[f64],
) -> Result<SseGrid> {
    if model.n_params() != 2 {
        return Err(Error::Unsupported(format!(
            "SSE grids need a 2-parameter model, `{}` has {}",
            model.name(),
            model.n_params()
        )));
    }
    if start.len() != 2 {
        return Err(Error::Dimension {
            what: "starting values",
            expected: 2,
            got: start.len(),
        });
    }
    let mut sse = DMatrix::zeros(grid1.len(), grid2.len());
    match mode {
        GridMode::UnconditionalPairs => {
            for (a, &t1) in grid1.iter().enumerate() {
                for (b, &t2) in grid2.iter().enumerate() {
                    sse[(a, b)] = sum_of_squares(model, data, &[t1, t2]).unwrap_or(f64::NAN);
                }
            }
        }
        GridMode::ConditionalTrace => {
            // theta1 given each theta2, and theta2 given each theta1
            let t1_given_t2 = profile_trace(model, data, 1, grid2, &start[..1])?;
            let t2_given_t1 = profile_trace(model, data, 0, grid1, &start[1..])?;
            for (a, c2) in t2_given_t1.iter().enumerate() {
                for (b, c1) in t1_given_t2.iter().enumerate() {
                    let theta = [c1.theta_minus[0], c2.theta_minus[0]];
                    sse[(a, b)] = sum_of_squares(model, data, &theta).unwrap_or(f64::NAN);
                }
            }
        }
    }
    Ok(SseGrid {
        theta1: grid1.to_vec(),
        theta2: grid2.to_vec(),
        sse,
        mode,
    })
}

fn f_quantile(level: f64, d1: usize, d2: usize) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::argument(format!("probability level must be in (0, 1), got {level}")));
    }
    if d2 == 0 {
        return Err(Error::argument("no residual degrees of freedom"));
    }
    let dist = FisherSnedecor::new(d1 as f64, d2 as f64)
        .map_err(|e| Error::argument(format!("F distribution: {e}")))?;
    Ok(dist.inverse_cdf(level))
}

/// SSE level of the joint likelihood region,
/// `S(theta_hat) * (1 + k/(n-k) * F_level(k, n-k))`.
pub fn likelihood_region_level(sse_hat: f64, n: usize, k: usize, level: f64) -> Result<f64> {
    if n <= k {
        return Err(Error::argument("need n > k for a likelihood region"));
    }
    let dof = n - k;
    Ok(sse_hat * (1.0 + k as f64 / dof as f64 * f_quantile(level, k, dof)?))
}

/// Linear-approximation confidence ellipsoid
/// `{theta : (theta - c)' C^{-1} (theta - c) <= radius_sq}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: Vec<f64>,
    /// Semi-axis lengths, ascending.
    pub semi_axes: Vec<f64>,
    /// Unit axis directions; `axes[i]` goes with `semi_axes[i]`.
    pub axes: Vec<Vec<f64>>,
    pub radius_sq: f64,
    pub level: f64,
}

impl Ellipse {
    /// `radius_sq = k * F_level(k, dof)`.
    pub fn from_covariance(center: &[f64], covariance: &DMatrix<f64>, dof: usize, level: f64) -> Result<Self> {
        let k = center.len();
        if covariance.shape() != (k, k) {
            return Err(Error::Dimension {
                what: "covariance",
                expected: k,
                got: covariance.nrows(),
            });
        }
        let radius_sq = k as f64 * f_quantile(level, k, dof)?;
        let eigen = covariance.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
        let max = eigen.eigenvalues.amax();
        if order.iter().any(|&i| eigen.eigenvalues[i] <= max * linalg::SINGULAR_CONDITION.recip()) {
            return Err(Error::Singular {
                what: "covariance matrix".into(),
                condition: f64::INFINITY,
            });
        }
        let semi_axes = order.iter().map(|&i| (radius_sq * eigen.eigenvalues[i]).sqrt()).collect();
        let axes = order
            .iter()
            .map(|&i| eigen.eigenvectors.column(i).iter().copied().collect())
            .collect();
        Ok(Self {
            center: center.to_vec(),
            semi_axes,
            axes,
            radius_sq,
            level,
        })
    }

    /// Area (k = 2) or volume of the ellipsoid.
    pub fn volume(&self) -> f64 {
        let k = self.semi_axes.len() as f64;
        let unit_ball = std::f64::consts::PI.powf(k / 2.0) / statrs::function::gamma::gamma(k / 2.0 + 1.0);
        unit_ball * self.semi_axes.iter().product::<f64>()
    }

    /// Angle of the major axis from the first coordinate axis, in radians
    /// within `(-pi/2, pi/2]` (k = 2 only).
    pub fn orientation(&self) -> Option<f64> {
        let major = self.axes.last()?;
        if major.len() != 2 {
            return None;
        }
        let mut angle = major[1].atan2(major[0]);
        if angle <= -std::f64::consts::FRAC_PI_2 {
            angle += std::f64::consts::PI;
        } else if angle > std::f64::consts::FRAC_PI_2 {
            angle -= std::f64::consts::PI;
        }
        Some(angle)
    }

    /// `points` samples of the boundary curve (k = 2 only).
    pub fn boundary(&self, points: usize) -> Option<Vec<[f64; 2]>> {
        if self.center.len() != 2 {
            return None;
        }
        Some(
            (0..points)
                .map(|s| {
                    let t = 2.0 * std::f64::consts::PI * s as f64 / points as f64;
                    let (a, b) = (self.semi_axes[0] * t.cos(), self.semi_axes[1] * t.sin());
                    [
                        self.center[0] + a * self.axes[0][0] + b * self.axes[1][0],
                        self.center[1] + a * self.axes[0][1] + b * self.axes[1][1],
                    ]
                })
                .collect(),
        )
    }
}

pub fn confidence_ellipse(fit: &FitResult, level: f64) -> Result<Ellipse> {
    let precision = fit.precision.as_ref().ok_or_else(|| Error::Singular {
        what: "V'V at the estimate".into(),
        condition: f64::INFINITY,
    })?;
    Ellipse::from_covariance(&fit.theta_hat, &precision.covariance, fit.dof, level)
}
