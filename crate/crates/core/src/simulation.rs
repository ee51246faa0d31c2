//! Monte-Carlo evaluation of a sequentially designed point: simulate its
//! response from the base fit plus normal noise, refit all runs, and record
//! the linear-approximation precision of each refit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, ModelSpec, NoiseModel};
use crate::nls::{self, FitResult};

/// Largest tolerated fraction of failed refits.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "theta")]
pub enum StartStrategy {
    /// Refit from the base estimate.
    BaseEstimate,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub model: ModelSpec,
    pub base_dataset: Dataset,
    pub base_fit: FitResult,
    pub new_point: Vec<f64>,
    pub n_sims: usize,
    /// Defaults to the base fit's residual standard deviation.
    pub noise: Option<NoiseModel>,
    pub seed: u64,
    pub start: StartStrategy,
}

impl SimulationPlan {
    pub fn sigma(&self) -> f64 {
        self.noise.map_or_else(|| self.base_fit.s(), |n| n.sigma())
    }
}

/// Generator for simulation `index`: one ChaCha stream per simulation, so
/// results do not depend on scheduling.
pub fn sim_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub index: usize,
    pub noise: f64,
    pub converged: bool,
    pub theta_hat: Option<Vec<f64>>,
    pub std_errors: Option<Vec<f64>>,
    /// Off-diagonal correlations in pair order (1,2), (1,3), ..., (k-1,k).
    pub correlations: Option<Vec<f64>>,
    /// `ln det(V'V)` of the augmented design at the refit estimate.
    #[serde(with = "crate::io::logdet_serde")]
    pub logdet: f64,
}

impl SimRecord {
    fn usable(&self) -> bool {
        self.converged && self.std_errors.is_some() && self.correlations.is_some()
    }
}

/// Parameter pairs `(a, b)` with `a < b`, 0-based, in row order.
pub fn pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile(&sorted, 0.5),
            q05: quantile(&sorted, 0.05),
            q25: quantile(&sorted, 0.25),
            q75: quantile(&sorted, 0.75),
            q95: quantile(&sorted, 0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    /// 1-based parameter indices.
    pub pair: (usize, usize),
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub model: String,
    pub new_point: Vec<f64>,
    pub n_sims: usize,
    pub seed: u64,
    pub sigma: f64,
    /// True when sigma came from the base fit rather than the plan.
    pub sigma_from_base_fit: bool,
    pub start: StartStrategy,
    pub base_estimate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub meta: SimulationMeta,
    pub k: usize,
    pub per_sim: Vec<SimRecord>,
    pub n_failed: usize,
    pub correlations: Vec<PairSummary>,
    pub std_errors: Vec<Option<Summary>>,
}

impl SimulationReport {
    fn summarize(meta: SimulationMeta, k: usize, per_sim: Vec<SimRecord>) -> Self {
        let usable: Vec<&SimRecord> = per_sim.iter().filter(|r| r.usable()).collect();
        let n_failed = per_sim.len() - usable.len();
        let correlations = pairs(k)
            .into_iter()
            .enumerate()
            .map(|(p, (a, b))| {
                let vals: Vec<f64> = usable.iter().map(|r| r.correlations.as_ref().unwrap()[p]).collect();
                PairSummary {
                    pair: (a + 1, b + 1),
                    summary: Summary::of(&vals),
                }
            })
            .collect();
        let std_errors = (0..k)
            .map(|a| {
                let vals: Vec<f64> = usable.iter().map(|r| r.std_errors.as_ref().unwrap()[a]).collect();
                Summary::of(&vals)
            })
            .collect();
        Self {
            meta,
            k,
            per_sim,
            n_failed,
            correlations,
            std_errors,
        }
    }

    /// Median correlation of a 0-based pair over usable sims.
    pub fn median_correlation(&self, a: usize, b: usize) -> Option<f64> {
        let idx = pairs(self.k).iter().position(|&p| p == (a.min(b), a.max(b)))?;
        self.correlations[idx].summary.as_ref().map(|s| s.median)
    }

    /// CSV `sim, corr_12, ..., se_1, ..., converged` (converged as 0/1).
    pub fn to_csv(&self) -> String {
        let mut header = vec!["sim".to_string()];
        header.extend(pairs(self.k).iter().map(|(a, b)| format!("corr_{}{}", a + 1, b + 1)));
        header.extend((1..=self.k).map(|a| format!("se_{a}")));
        header.push("converged".into());
        let n_pairs = pairs(self.k).len();
        let rows = self.per_sim.iter().map(|r| {
            let mut row = vec![r.index.to_string()];
            let mut push = |vals: Option<&Vec<f64>>, n: usize| match vals {
                Some(v) => row.extend(v.iter().map(|&x| crate::io::fmt_f64(x))),
                None => row.extend(std::iter::repeat_n(crate::io::fmt_f64(f64::NAN), n)),
            };
            push(r.correlations.as_ref(), n_pairs);
            push(r.std_errors.as_ref(), self.k);
            row.push(u8::from(r.converged).to_string());
            row
        });
        crate::io::csv_text(&header, rows)
    }
}

fn simulate_one(plan: &SimulationPlan, start: &[f64], mean: f64, sigma: f64, index: usize) -> SimRecord {
    let mut rng = sim_rng(plan.seed, index as u64);
    let z: f64 = StandardNormal.sample(&mut rng);
    let noise = sigma * z;
    let failed = SimRecord {
        index,
        noise,
        converged: false,
        theta_hat: None,
        std_errors: None,
        correlations: None,
        logdet: f64::NEG_INFINITY,
    };
    let Ok(data) = plan.base_dataset.with_row(&plan.new_point, Some(mean + noise)) else {
        return failed;
    };
    let Ok(fit) = nls::fit_ls(&plan.model, &data, start) else {
        return failed;
    };
    let logdet = plan
        .model
        .jacobian(&data, &fit.theta_hat)
        .map(|v| linalg::log_det_gram(&v))
        .unwrap_or(f64::NEG_INFINITY);
    let k = plan.model.n_params();
    SimRecord {
        index,
        noise,
        converged: fit.converged,
        std_errors: fit.precision.as_ref().map(|p| p.std_errors.clone()),
        correlations: fit
            .precision
            .as_ref()
            .map(|p| pairs(k).into_iter().map(|(a, b)| p.correlation[(a, b)]).collect()),
        theta_hat: Some(fit.theta_hat),
        logdet,
    }
}

pub fn run_simulation(plan: &SimulationPlan) -> Result<SimulationReport> {
    if plan.n_sims == 0 {
        return Err(Error::argument("n_sims must be at least 1"));
    }
    if !plan.base_fit.converged {
        return Err(Error::argument("simulation needs a converged base fit"));
    }
    if let Some(bounds) = plan.model.bounds() {
        if !bounds.contains(&plan.new_point) {
            return Err(Error::argument(format!(
                "new point {:?} outside region {bounds}",
                plan.new_point
            )));
        }
    }
    let sigma = plan.sigma();
    NoiseModel::new(sigma)?;
    let theta = &plan.base_fit.theta_hat;
    let mean = plan.model.eval(&plan.new_point, theta)?;
    let start = match &plan.start {
        StartStrategy::BaseEstimate => theta.clone(),
        StartStrategy::Fixed(t) => t.clone(),
    };
    let per_sim: Vec<SimRecord> = (0..plan.n_sims)
        .into_par_iter()
        .map(|s| simulate_one(plan, &start, mean, sigma, s))
        .collect();
    let failed = per_sim.iter().filter(|r| !r.usable()).count();
    let limit = MAX_FAILURE_FRACTION * plan.n_sims as f64;
    if failed as f64 > limit {
        return Err(Error::SimulationAborted {
            failed,
            total: plan.n_sims,
            limit: MAX_FAILURE_FRACTION,
        });
    }
    let meta = SimulationMeta {
        model: plan.model.name().to_string(),
        new_point: plan.new_point.clone(),
        n_sims: plan.n_sims,
        seed: plan.seed,
        sigma,
        sigma_from_base_fit: plan.noise.is_none(),
        start: plan.start.clone(),
        base_estimate: theta.clone(),
    };
    Ok(SimulationReport::summarize(meta, plan.model.n_params(), per_sim))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFraction {
    /// 1-based parameter indices.
    pub pair: (usize, usize),
    pub fraction: f64,
}

/// Paired comparison of two simulation reports, sim by sim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Sims where both runs are usable.
    pub n_pairs: usize,
    /// Per parameter, fraction of sims where `a` has the lower std error.
    pub se_a_lower: Vec<f64>,
    /// Per pair, fraction of sims where `a` has the lower `|corr|`.
    pub abs_corr_a_lower: Vec<PairFraction>,
    /// Mean of `exp((logdet_a - logdet_b) / k) * 100`.
    pub mean_d_efficiency: Option<f64>,
}

fn win(a: f64, b: f64) -> f64 {
    match a.partial_cmp(&b) {
        Some(std::cmp::Ordering::Less) => 1.0,
        Some(std::cmp::Ordering::Equal) => 0.5,
        _ => 0.0,
    }
}

pub fn compare_reports(a: &SimulationReport, b: &SimulationReport) -> Result<Comparison> {
    if a.k != b.k || a.per_sim.len() != b.per_sim.len() || a.meta.model != b.meta.model {
        return Err(Error::argument("reports come from mismatched plans"));
    }
    let k = a.k;
    let both: Vec<(&SimRecord, &SimRecord)> = a
        .per_sim
        .iter()
        .zip(&b.per_sim)
        .filter(|(x, y)| x.usable() && y.usable())
        .collect();
    let n = both.len();
    if n == 0 {
        return Err(Error::argument("no simulation usable in both reports"));
    }
    let frac = |f: &dyn Fn(&SimRecord, &SimRecord) -> f64| both.iter().map(|(x, y)| f(x, y)).sum::<f64>() / n as f64;
    let se_a_lower = (0..k)
        .map(|p| frac(&|x, y| win(x.std_errors.as_ref().unwrap()[p], y.std_errors.as_ref().unwrap()[p])))
        .collect();
    let abs_corr_a_lower = pairs(k)
        .into_iter()
        .enumerate()
        .map(|(idx, (p, q))| PairFraction {
            pair: (p + 1, q + 1),
            fraction: frac(&|x, y| {
                win(
                    x.correlations.as_ref().unwrap()[idx].abs(),
                    y.correlations.as_ref().unwrap()[idx].abs(),
                )
            }),
        })
        .collect();
    let effs: Vec<f64> = both
        .iter()
        .filter(|(x, y)| x.logdet.is_finite() && y.logdet.is_finite())
        .map(|(x, y)| ((x.logdet - y.logdet) / k as f64).exp() * 100.0)
        .collect();
    Ok(Comparison {
        n_pairs: n,
        se_a_lower,
        abs_corr_a_lower,
        mean_d_efficiency: (!effs.is_empty()).then(|| effs.iter().sum::<f64>() / effs.len() as f64),
    })
}

/// JSON plan file for the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub model: String,
    /// Base dataset CSV; defaults to the model's bundled fixture.
    #[serde(default)]
    pub data: Option<std::path::PathBuf>,
    pub new_point: Vec<f64>,
    #[serde(default)]
    pub n_sims: Option<usize>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Starting values of the base fit; defaults to the zoo's.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    /// Starting values of every refit; defaults to the base estimate.
    #[serde(default)]
    pub refit_start: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo;
    use rand::Rng;

    fn mm_plan(new_point: f64, n_sims: usize, seed: u64) -> SimulationPlan {
        let e = zoo::michaelis_menten();
        SimulationPlan {
            model: e.model,
            base_dataset: e.fixture.unwrap(),
            base_fit: e.fixture_fit.unwrap(),
            new_point: vec![new_point],
            n_sims,
            noise: None,
            seed,
            start: StartStrategy::BaseEstimate,
        }
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
        assert!((s.q25 - 1.75).abs() < 1e-15);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = run_simulation(&mm_plan(0.0747, 64, 42)).unwrap();
        let b = run_simulation(&mm_plan(0.0747, 64, 42)).unwrap();
        assert_eq!(crate::io::to_json_string(&a).unwrap(), crate::io::to_json_string(&b).unwrap());
        let c = run_simulation(&mm_plan(0.0747, 64, 43)).unwrap();
        assert_ne!(a.per_sim[0].noise, c.per_sim[0].noise);
    }

    #[test]
    fn tiny_noise_reproduces_deterministic_fit() {
        let mut plan = mm_plan(0.0747, 16, 1);
        plan.noise = Some(NoiseModel::new(1e-12).unwrap());
        let report = run_simulation(&plan).unwrap();
        let mean = plan.model.eval(&plan.new_point, &plan.base_fit.theta_hat).unwrap();
        let data = plan.base_dataset.with_row(&plan.new_point, Some(mean)).unwrap();
        let fit = nls::fit_ls(&plan.model, &data, &plan.base_fit.theta_hat).unwrap();
        let corr = fit.correlation(0, 1).unwrap();
        let s = report.correlations[0].summary.as_ref().unwrap();
        assert!((s.q95 - s.q05).abs() < 1e-8);
        assert!((s.median - corr).abs() < 1e-8);
    }

    #[test]
    fn noise_statistics() {
        let sigma = 2.5;
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut sim_rng(9, i as u64));
                sigma * z
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 3.0 * sigma / (n as f64).sqrt());
        assert!((var - sigma * sigma).abs() <= 0.05 * sigma * sigma);
    }

    #[test]
    fn streams_are_independent_of_order() {
        let forward: Vec<u64> = (0..8).map(|i| sim_rng(5, i).random()).collect();
        let backward: Vec<u64> = (0..8).rev().map(|i| sim_rng(5, i).random()).collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn summaries_recompute_from_records() {
        let r = run_simulation(&mm_plan(0.05116, 40, 3)).unwrap();
        let vals: Vec<f64> = r
            .per_sim
            .iter()
            .filter(|s| s.usable())
            .map(|s| s.std_errors.as_ref().unwrap()[1])
            .collect();
        assert_eq!(r.std_errors[1], Summary::of(&vals));
        assert_eq!(r.per_sim.len(), 40);
    }

    #[test]
    fn refits_satisfy_normal_equations() {
        let plan = mm_plan(0.05116, 20, 8);
        let r = run_simulation(&plan).unwrap();
        for rec in r.per_sim.iter().filter(|s| s.usable()) {
            let mean = plan.model.eval(&plan.new_point, &plan.base_fit.theta_hat).unwrap();
            let data = plan.base_dataset.with_row(&plan.new_point, Some(mean + rec.noise)).unwrap();
            let theta = rec.theta_hat.as_ref().unwrap();
            let v = plan.model.jacobian(&data, theta).unwrap();
            let y = data.response_vector().unwrap();
            let e = &y - plan.model.predict(&data, theta).unwrap();
            assert!((v.transpose() * e).norm() <= 1e-6 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn self_comparison_splits_ties() {
        let r = run_simulation(&mm_plan(0.0747, 30, 4)).unwrap();
        let c = compare_reports(&r, &r).unwrap();
        assert!(c.se_a_lower.iter().all(|&f| f == 0.5));
        assert!(c.abs_corr_a_lower.iter().all(|p| p.fraction == 0.5));
        assert_eq!(c.mean_d_efficiency, Some(100.0));

        let short = run_simulation(&mm_plan(0.0747, 10, 4)).unwrap();
        assert!(compare_reports(&r, &short).is_err());
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(run_simulation(&mm_plan(0.0747, 0, 1)).is_err());
        assert!(run_simulation(&mm_plan(2.0, 5, 1)).is_err());
    }

    #[test]
    fn csv_has_constant_columns() {
        let r = run_simulation(&mm_plan(0.0747, 5, 2)).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "sim,corr_12,se_1,se_2,converged");
        assert!(lines.all(|l| l.split(',').count() == 5));
    }

    #[test]
    fn plan_file_rejects_unknown_keys() {
        let ok = r#"{"model":"michaelis-menten","new_point":[0.05]}"#;
        assert!(serde_json::from_str::<PlanFile>(ok).is_ok());
        let bad = r#"{"model":"michaelis-menten","new_point":[0.05],"sims":3}"#;
        assert!(serde_json::from_str::<PlanFile>(bad).is_err());
    }
}
