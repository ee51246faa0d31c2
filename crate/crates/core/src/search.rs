//! Design search: exhaustive grid, Nelder-Mead refinement of the best grid
//! point, and a shifted interior grid re-check.
//!
//! Objectives return a log-determinant (`-inf` for degenerate candidates)
//! and are maximized.

use std::cmp::Ordering;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{CriterionKind, CriterionValue};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, ModelSpec, SecondDerivatives};
use crate::nls::FitResult;
use crate::region::DesignRegion;
use crate::sensitivity::{self, ResidualMode, SensitivityBundle};

/// Upper bound on evaluations of one grid.
pub const MAX_GRID_EVALUATIONS: usize = 1_000_000;

/// Improvement an interior grid point needs before the optimizer restarts.
pub const RECHECK_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBest {
    pub point: Vec<f64>,
    #[serde(with = "crate::io::logdet_serde")]
    pub value: f64,
    pub evaluations: usize,
}

fn value_order(a: f64, b: f64) -> Ordering {
    let norm = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    norm(a).total_cmp(&norm(b))
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn axis(lo: f64, hi: f64, points: usize, shifted: bool) -> Vec<f64> {
    let width = hi - lo;
    if shifted {
        (0..points).map(|i| lo + width * (i as f64 + 0.5) / points as f64).collect()
    } else if points == 1 {
        vec![lo + 0.5 * width]
    } else {
        (0..points)
            .map(|i| if i + 1 == points { hi } else { lo + width * i as f64 / (points - 1) as f64 })
            .collect()
    }
}

fn region_axes(region: &DesignRegion, points: usize, shifted: bool) -> Vec<Vec<f64>> {
    (0..region.dim())
        .map(|d| axis(region.lower()[d], region.upper()[d], points, shifted))
        .collect()
}

fn search_axes<F>(objective: &F, axes: &[Vec<f64>]) -> Result<GridBest>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let total = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
        .filter(|&t| t <= MAX_GRID_EVALUATIONS)
        .ok_or_else(|| {
            Error::argument(format!(
                "grid of {} per dimension over {} dimensions exceeds {MAX_GRID_EVALUATIONS} evaluations",
                axes.first().map_or(0, Vec::len),
                axes.len()
            ))
        })?;
    if total == 0 {
        return Err(Error::argument("grid needs at least one point per dimension"));
    }
    let decode = |mut idx: usize| {
        let mut point = vec![0.0; axes.len()];
        for d in (0..axes.len()).rev() {
            point[d] = axes[d][idx % axes[d].len()];
            idx /= axes[d].len();
        }
        point
    };
    let values: Vec<f64> = (0..total).into_par_iter().map(|idx| objective(&decode(idx))).collect();
    // index order is lexicographic order; keep the first maximum
    let mut best = 0;
    for (idx, &v) in values.iter().enumerate() {
        if value_order(v, values[best]) == Ordering::Greater {
            best = idx;
        }
    }
    Ok(GridBest {
        point: decode(best),
        value: values[best],
        evaluations: total,
    })
}

/// Exhaustive search over `points_per_dim` evenly spaced values per
/// dimension, bounds included. Ties go to the lexicographically smallest
/// point.
pub fn grid_search<F>(objective: &F, region: &DesignRegion, points_per_dim: usize) -> Result<GridBest>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    search_axes(objective, &region_axes(region, points_per_dim, false))
}

/// Best of an explicit candidate list; ties go to the lexicographically
/// smallest candidate.
pub fn candidate_search<F>(objective: &F, candidates: &[Vec<f64>]) -> Result<GridBest>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if candidates.is_empty() {
        return Err(Error::argument("candidate list is empty"));
    }
    let values: Vec<f64> = candidates.par_iter().map(|c| objective(c)).collect();
    let mut best = 0;
    for i in 1..candidates.len() {
        match value_order(values[i], values[best]) {
            Ordering::Greater => best = i,
            Ordering::Equal if lexicographic(&candidates[i], &candidates[best]).is_lt() => best = i,
            _ => {}
        }
    }
    Ok(GridBest {
        point: candidates[best].clone(),
        value: values[best],
        evaluations: candidates.len(),
    })
}

/// The `2^m` corners of a region, lexicographically ordered.
pub fn corners(region: &DesignRegion) -> Vec<Vec<f64>> {
    let m = region.dim();
    (0..1usize << m)
        .map(|mask| {
            (0..m)
                .map(|d| {
                    if mask >> (m - 1 - d) & 1 == 1 {
                        region.upper()[d]
                    } else {
                        region.lower()[d]
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Converged when the simplex diameter is at most `tolerance * (1 + |x|)`.
    pub tolerance: f64,
    /// Weight of the squared out-of-box distance, in box-normalized units.
    pub penalty: f64,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-6,
            penalty: 1e4,
            initial_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub start: Vec<f64>,
    pub point: Vec<f64>,
    #[serde(with = "crate::io::logdet_serde")]
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Maximizes `objective` over `region` by Nelder-Mead descent on its
/// negative. The simplex lives in box-normalized coordinates; points are
/// clamped into the box before evaluation and pay a quadratic penalty on the
/// clamped distance.
pub fn optimize_design<F>(objective: &F, start: &[f64], region: &DesignRegion, opts: &NelderMeadOptions) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> f64,
{
    if !region.contains(start) {
        return Err(Error::argument(format!("start {start:?} outside region {region}")));
    }
    let dim = region.dim();
    let lo = region.lower();
    let width: Vec<f64> = (0..dim).map(|d| region.width(d)).collect();
    let to_x = |u: &DVector<f64>| -> Vec<f64> { (0..dim).map(|d| lo[d] + width[d] * u[d]).collect() };
    let mut evaluations = 0usize;
    let mut g = |u: &DVector<f64>| -> f64 {
        evaluations += 1;
        let clamped = u.map(|v| v.clamp(0.0, 1.0));
        let dist2 = (u - &clamped).norm_squared();
        let value = objective(&to_x(&clamped));
        if value.is_nan() || value == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            -value + opts.penalty * dist2
        }
    };

    let u0 = DVector::from_fn(dim, |d, _| (start[d] - lo[d]) / width[d]);
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = g(&u0);
    simplex.push((u0.clone(), f0));
    for d in 0..dim {
        let mut u = u0.clone();
        u[d] += if u0[d] + opts.initial_step <= 1.0 { opts.initial_step } else { -opts.initial_step };
        let f = g(&u);
        simplex.push((u, f));
    }

    let diameter_x = |s: &[(DVector<f64>, f64)]| -> (f64, f64) {
        let best = to_x(&s[0].0);
        let norm = best.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diam = s[1..]
            .iter()
            .map(|(u, _)| {
                to_x(u)
                    .iter()
                    .zip(&best)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        (diam, norm)
    };

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (diam, norm) = diameter_x(&simplex);
        if diam <= opts.tolerance * (1.0 + norm) {
            converged = true;
            break;
        }
        iterations += 1;

        let worst = simplex[dim].clone();
        let centroid = simplex[..dim]
            .iter()
            .fold(DVector::zeros(dim), |acc, (u, _)| acc + u)
            / dim as f64;
        let reflected = &centroid + (&centroid - &worst.0) * alpha;
        let fr = g(&reflected);

        if fr < simplex[0].1 {
            let expanded = &centroid + (&reflected - &centroid) * gamma;
            let fe = g(&expanded);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let (contracted, accept_at) = if fr < worst.1 {
            (&centroid + (&reflected - &centroid) * rho, fr)
        } else {
            (&centroid + (&worst.0 - &centroid) * rho, worst.1)
        };
        let fc = g(&contracted);
        if fc < accept_at || (fr < worst.1 && fc <= fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            vertex.0 = &best + (&vertex.0 - &best) * sigma;
            vertex.1 = g(&vertex.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut point = region.clamp(&to_x(&simplex[0].0));
    let mut value = objective(&point);
    evaluations += 1;
    // snap coordinates that stalled next to a bound onto it
    for d in 0..dim {
        for bound in [region.lower()[d], region.upper()[d]] {
            if point[d] != bound && (point[d] - bound).abs() <= 1e-4 * width[d] {
                let mut snapped = point.clone();
                snapped[d] = bound;
                let v = objective(&snapped);
                evaluations += 1;
                if value_order(v, value) != Ordering::Less {
                    point = snapped;
                    value = v;
                }
            }
        }
    }
    let start_value = objective(start);
    evaluations += 1;
    if value_order(value, start_value) == Ordering::Less {
        point = start.to_vec();
        value = start_value;
    }
    Ok(OptimizeResult {
        start: start.to_vec(),
        point,
        value,
        converged,
        iterations,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecheckResult {
    /// Best point of the shifted interior grid.
    pub grid_best: GridBest,
    /// Whether the grid beat the optimizer and the restart improved on it.
    pub improved: bool,
    pub result: OptimizeResult,
}

/// Re-grids the region at cell centres. A grid value exceeding the
/// optimizer's by more than [`RECHECK_THRESHOLD`] (relative) restarts the
/// optimizer from that point.
pub fn interior_recheck<F>(
    objective: &F,
    region: &DesignRegion,
    optimum: &OptimizeResult,
    points_per_dim: usize,
    opts: &NelderMeadOptions,
) -> Result<RecheckResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let grid_best = search_axes(objective, &region_axes(region, points_per_dim, true))?;
    let margin = RECHECK_THRESHOLD * optimum.value.abs().max(1.0);
    let beats = optimum.value == f64::NEG_INFINITY || grid_best.value - optimum.value > margin;
    if beats && grid_best.value.is_finite() {
        let restarted = optimize_design(objective, &grid_best.point, region, opts)?;
        if value_order(restarted.value, optimum.value) == Ordering::Greater {
            return Ok(RecheckResult {
                grid_best,
                improved: true,
                result: restarted,
            });
        }
    }
    Ok(RecheckResult {
        grid_best,
        improved: false,
        result: optimum.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub grid_points: usize,
    /// Replicates of each support point, reported separately.
    pub replicates: usize,
    pub recheck: bool,
    /// Start from the best of these points instead of the full grid.
    pub candidates: Option<Vec<Vec<f64>>>,
    pub nelder_mead: NelderMeadOptions,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            grid_points: 50,
            replicates: 1,
            recheck: true,
            candidates: None,
            nelder_mead: NelderMeadOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartMethod {
    Grid,
    Candidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub start_method: StartMethod,
    pub grid_points_per_dim: usize,
    pub start: GridBest,
    pub optimizer: OptimizeResult,
    pub recheck: Option<RecheckResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutcome {
    pub criterion_kind: CriterionKind,
    /// Initial designs: the support points. Sequential designs: the new point.
    pub support_points: Vec<Vec<f64>>,
    pub criterion: CriterionValue,
    pub replicates: usize,
    /// Criterion with every support point replicated `replicates` times.
    pub replicated_criterion: CriterionValue,
    pub eval_point: Vec<f64>,
    pub residual_mode: ResidualMode,
    pub search_trace: SearchTrace,
}

/// Grid (or candidate) start, simplex refinement, optional re-check.
pub fn run_search<F>(objective: &F, region: &DesignRegion, opts: &DesignOptions) -> Result<SearchTrace>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (start_method, start) = match &opts.candidates {
        Some(c) => (StartMethod::Candidates, candidate_search(objective, c)?),
        None => (StartMethod::Grid, grid_search(objective, region, opts.grid_points)?),
    };
    if !start.value.is_finite() {
        return Err(Error::Singular {
            what: "criterion at every starting candidate".into(),
            condition: f64::INFINITY,
        });
    }
    let optimizer = optimize_design(objective, &start.point, region, &opts.nelder_mead)?;
    let recheck = if opts.recheck {
        Some(interior_recheck(objective, region, &optimizer, opts.grid_points, &opts.nelder_mead)?)
    } else {
        None
    };
    Ok(SearchTrace {
        start_method,
        grid_points_per_dim: opts.grid_points,
        start,
        optimizer,
        recheck,
    })
}

impl SearchTrace {
    /// Final point and value after the optional re-check.
    pub fn best(&self) -> (&[f64], f64) {
        let r = self.recheck.as_ref().map_or(&self.optimizer, |r| &r.result);
        (&r.point, r.value)
    }
}

fn criterion_logdet(model: &ModelSpec, data: &Dataset, theta: &[f64], kind: CriterionKind) -> f64 {
    let value = match kind {
        CriterionKind::D => model.jacobian(data, theta).map(|v| linalg::log_det_gram(&v)),
        CriterionKind::Dp => sensitivity::profile_matrix(model, data, theta, ResidualMode::Zero)
            .map(|b| linalg::log_det_gram(&b.p)),
    };
    value.unwrap_or(f64::NEG_INFINITY)
}

/// Support points from a flat buffer, sorted lexicographically so that
/// permutations of the same design evaluate identically.
fn sorted_points(flat: &[f64], m: usize) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = flat.chunks(m).map(<[f64]>::to_vec).collect();
    pts.sort_by(|a, b| lexicographic(a, b));
    pts
}

/// Zero-residual criterion of an `n_support`-point design, as an objective
/// over the flattened points.
pub fn initial_objective<'a>(model: &'a ModelSpec, theta0: &'a [f64], kind: CriterionKind) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    let theta0 = theta0.to_vec();
    move |flat: &[f64]| {
        let m = model.n_vars();
        match Dataset::design(&sorted_points(flat, m)) {
            Ok(data) if data.n() >= model.n_params() => criterion_logdet(model, &data, &theta0, kind),
            _ => f64::NEG_INFINITY,
        }
    }
}

fn check_theta(model: &ModelSpec, theta: &[f64]) -> Result<()> {
    if theta.len() != model.n_params() {
        return Err(Error::Dimension {
            what: "parameter vector",
            expected: model.n_params(),
            got: theta.len(),
        });
    }
    Ok(())
}

fn check_region(model: &ModelSpec, region: &DesignRegion) -> Result<()> {
    if region.dim() != model.n_vars() {
        return Err(Error::Dimension {
            what: "region dimensions",
            expected: model.n_vars(),
            got: region.dim(),
        });
    }
    Ok(())
}

fn replicated(model: &ModelSpec, points: &[Vec<f64>], theta: &[f64], kind: CriterionKind, r: usize) -> Result<CriterionValue> {
    let rows: Vec<Vec<f64>> = points.iter().flat_map(|p| std::iter::repeat_n(p.clone(), r)).collect();
    let data = Dataset::design(&rows)?;
    Ok(CriterionValue::new(kind, model.n_params(), criterion_logdet(model, &data, theta, kind)))
}

/// Best `n_support`-point design at `theta0` with zero residuals.
pub fn design_initial(
    model: &ModelSpec,
    theta0: &[f64],
    n_support: usize,
    region: &DesignRegion,
    kind: CriterionKind,
    opts: &DesignOptions,
) -> Result<DesignOutcome> {
    check_theta(model, theta0)?;
    check_region(model, region)?;
    if n_support == 0 || opts.replicates == 0 {
        return Err(Error::argument("need at least one support point and one replicate"));
    }
    let objective = initial_objective(model, theta0, kind);
    let space = region.repeat(n_support);
    let trace = run_search(&objective, &space, opts)?;
    let (flat, value) = trace.best();
    let support_points = sorted_points(flat, model.n_vars());
    let replicated_criterion = replicated(model, &support_points, theta0, kind, opts.replicates)?;
    Ok(DesignOutcome {
        criterion_kind: kind,
        criterion: CriterionValue::new(kind, model.n_params(), value),
        support_points,
        replicates: opts.replicates,
        replicated_criterion,
        eval_point: theta0.to_vec(),
        residual_mode: ResidualMode::Zero,
        search_trace: trace,
    })
}

/// Existing-design sensitivities at the fitted estimate, ready for one
/// appended candidate row.
pub struct SequentialBase<'a> {
    model: &'a ModelSpec,
    theta: Vec<f64>,
    bundle: SensitivityBundle,
}

impl<'a> SequentialBase<'a> {
    pub fn new(model: &'a ModelSpec, fit: &FitResult, data: &Dataset) -> Result<Self> {
        if !fit.converged {
            return Err(Error::argument("sequential design needs a converged fit"));
        }
        check_theta(model, &fit.theta_hat)?;
        data.require_y()?;
        let v = model.jacobian(data, &fit.theta_hat)?;
        let w = model.second_derivatives(data, &fit.theta_hat)?;
        let e = data.response_vector()? - model.predict(data, &fit.theta_hat)?;
        let bundle = SensitivityBundle::from_parts(v, w, e, ResidualMode::Observed, fit.theta_hat.clone())?;
        Ok(Self {
            model,
            theta: fit.theta_hat.clone(),
            bundle,
        })
    }

    /// Criterion of the existing rows plus `x`; the candidate's residual is
    /// taken as zero.
    pub fn augmented(&self, x: &[f64], kind: CriterionKind) -> Result<f64> {
        let row = self.model.jacobian_row(x, &self.theta)?;
        let v = crate::criteria::augment(&self.bundle.v, &row)?;
        match kind {
            CriterionKind::D => Ok(linalg::log_det_gram(&v)),
            CriterionKind::Dp => {
                let mut w = SecondDerivatives(self.bundle.w.0.clone());
                w.push(self.model.hessian_point(x, &self.theta)?);
                let e = self.bundle.e.clone().insert_row(self.bundle.e.len(), 0.0);
                let b = SensitivityBundle::from_parts(v, w, e, ResidualMode::Observed, self.theta.clone())?;
                Ok(linalg::log_det_gram(&b.p))
            }
        }
    }

    /// Criterion of the existing rows alone.
    pub fn base_logdet(&self, kind: CriterionKind) -> f64 {
        match kind {
            CriterionKind::D => linalg::log_det_gram(&self.bundle.v),
            CriterionKind::Dp => linalg::log_det_gram(&self.bundle.p),
        }
    }

    pub fn objective(&self, kind: CriterionKind) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
        move |x: &[f64]| self.augmented(x, kind).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Best single point to add to `data`, with sensitivities at the fitted
/// estimate.
pub fn design_sequential(
    model: &ModelSpec,
    fit: &FitResult,
    data: &Dataset,
    region: &DesignRegion,
    kind: CriterionKind,
    opts: &DesignOptions,
) -> Result<DesignOutcome> {
    check_region(model, region)?;
    let base = SequentialBase::new(model, fit, data)?;
    let objective = base.objective(kind);
    let trace = run_search(&objective, region, opts)?;
    let (point, value) = trace.best();
    let point = point.to_vec();
    let criterion = CriterionValue::new(kind, model.n_params(), value);
    Ok(DesignOutcome {
        criterion_kind: kind,
        support_points: vec![point],
        criterion,
        replicates: 1,
        replicated_criterion: criterion,
        eval_point: fit.theta_hat.clone(),
        residual_mode: match kind {
            CriterionKind::D => ResidualMode::Zero,
            CriterionKind::Dp => ResidualMode::Observed,
        },
        search_trace: trace,
    })
}
