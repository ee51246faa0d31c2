//! Built-in models with analytic derivatives and their reference datasets.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec};
use crate::nls::{self, FitResult};
use crate::region::DesignRegion;

pub const MICHAELIS_MENTEN: &str = "michaelis-menten";
pub const HOUGEN_WATSON: &str = "hougen-watson";

/// Environment variable overriding the fixture directory.
pub const FIXTURE_ENV: &str = "OPTIDESIGN_FIXTURES";

/// Published estimates a fixture fit must reproduce before the fixture is
/// used.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFit {
    pub estimates: Vec<f64>,
    /// Absolute tolerance per estimate.
    pub estimate_tol: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    /// Relative tolerance on standard errors.
    pub std_error_rel_tol: f64,
    /// Lower triangle by rows, without the unit diagonal.
    pub correlation: Option<Vec<Vec<f64>>>,
    pub correlation_tol: f64,
}

impl ReferenceFit {
    /// Lists every mismatch between `fit` and the reference.
    pub fn mismatches(&self, fit: &FitResult) -> Vec<String> {
        let mut out = Vec::new();
        for (a, ((got, want), tol)) in fit.theta_hat.iter().zip(&self.estimates).zip(&self.estimate_tol).enumerate() {
            if !((got - want).abs() <= *tol) {
                out.push(format!("theta{} = {got}, expected {want} +/- {tol}", a + 1));
            }
        }
        let Some(precision) = &fit.precision else {
            if self.std_errors.is_some() || self.correlation.is_some() {
                out.push("covariance unavailable".into());
            }
            return out;
        };
        if let Some(se) = &self.std_errors {
            for (a, (got, want)) in precision.std_errors.iter().zip(se).enumerate() {
                if !((got - want).abs() <= self.std_error_rel_tol * want.abs()) {
                    out.push(format!(
                        "se(theta{}) = {got}, expected {want} within {}%",
                        a + 1,
                        100.0 * self.std_error_rel_tol
                    ));
                }
            }
        }
        if let Some(corr) = &self.correlation {
            for (r, row) in corr.iter().enumerate() {
                for (c, want) in row.iter().enumerate() {
                    let got = precision.correlation[(r + 1, c)];
                    if !((got - want).abs() <= self.correlation_tol) {
                        out.push(format!(
                            "corr(theta{}, theta{}) = {got}, expected {want} +/- {}",
                            c + 1,
                            r + 2,
                            self.correlation_tol
                        ));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ZooEntry {
    pub model: ModelSpec,
    pub default_region: DesignRegion,
    pub fixture: Option<Dataset>,
    pub reference_fit: ReferenceFit,
    /// Starting values for the fixture fit.
    pub default_start: Vec<f64>,
    /// Fit of the fixture, validated against `reference_fit`.
    pub fixture_fit: Option<FitResult>,
}

impl ZooEntry {
    pub fn require_fixture(&self) -> Result<(&Dataset, &FitResult)> {
        match (&self.fixture, &self.fixture_fit) {
            (Some(d), Some(f)) => Ok((d, f)),
            _ => Err(Error::FixtureMissing {
                name: self.model.name().to_string(),
                path: fixture_dir(),
            }),
        }
    }
}

/// `f = theta1 x / (theta2 + x)`.
pub fn michaelis_menten_model() -> ModelSpec {
    ModelSpec::new(MICHAELIS_MENTEN, 2, 1, |x, t| t[0] * x[0] / (t[1] + x[0]))
        .with_gradient(|x, t| {
            let d = t[1] + x[0];
            DVector::from_vec(vec![x[0] / d, -t[0] * x[0] / (d * d)])
        })
        .with_hessian(|x, t| {
            let d = t[1] + x[0];
            let off = -x[0] / (d * d);
            DMatrix::from_row_slice(2, 2, &[0.0, off, off, 2.0 * t[0] * x[0] / (d * d * d)])
        })
        .with_bounds(mm_region())
}

fn mm_region() -> DesignRegion {
    DesignRegion::new(vec![0.0], vec![1.1]).expect("static region")
}

const PUROMYCIN_X: [f64; 12] = [0.02, 0.02, 0.06, 0.06, 0.11, 0.11, 0.22, 0.22, 0.56, 0.56, 1.10, 1.10];
const PUROMYCIN_Y: [f64; 12] = [76.0, 47.0, 97.0, 107.0, 123.0, 139.0, 159.0, 152.0, 191.0, 201.0, 207.0, 200.0];

/// The 12-run treated Puromycin data.
pub fn puromycin() -> Dataset {
    Dataset::from_flat(1, PUROMYCIN_X.to_vec(), Some(PUROMYCIN_Y.to_vec())).expect("static data")
}

pub fn michaelis_menten() -> ZooEntry {
    let model = michaelis_menten_model();
    let data = puromycin();
    let start = default_start(MICHAELIS_MENTEN).expect("zoo name");
    let fit = nls::fit_ls(&model, &data, &start).ok();
    ZooEntry {
        model,
        default_region: mm_region(),
        fixture: Some(data),
        reference_fit: ReferenceFit {
            estimates: vec![212.68, 0.064],
            estimate_tol: vec![0.5, 0.001],
            std_errors: None,
            std_error_rel_tol: 0.0,
            correlation: None,
            correlation_tol: 0.0,
        },
        default_start: start,
        fixture_fit: fit,
    }
}

/// Partial-pressure ratio in the Hougen-Watson numerator.
const HW_RATIO: f64 = 1.632;

/// `f = theta1 theta3 (x2 - x3/1.632) / (1 + theta2 x1 + theta3 x2 + theta4 x3)`.
pub fn hougen_watson_model() -> ModelSpec {
    // f = g / d with g = theta1 theta3 num and d linear in theta2..theta4
    fn parts(x: &[f64], t: &[f64]) -> (f64, f64, [f64; 4], [f64; 4]) {
        let num = x[1] - x[2] / HW_RATIO;
        let d = 1.0 + t[1] * x[0] + t[2] * x[1] + t[3] * x[2];
        let g = t[0] * t[2] * num;
        let dg = [t[2] * num, 0.0, t[0] * num, 0.0];
        let dd = [0.0, x[0], x[1], x[2]];
        (g, d, dg, dd)
    }
    ModelSpec::new(HOUGEN_WATSON, 4, 3, |x, t| {
        t[0] * t[2] * (x[1] - x[2] / HW_RATIO) / (1.0 + t[1] * x[0] + t[2] * x[1] + t[3] * x[2])
    })
    .with_gradient(|x, t| {
        let (g, d, dg, dd) = parts(x, t);
        DVector::from_fn(4, |a, _| dg[a] / d - g * dd[a] / (d * d))
    })
    .with_hessian(|x, t| {
        let (g, d, dg, dd) = parts(x, t);
        let num = x[1] - x[2] / HW_RATIO;
        DMatrix::from_fn(4, 4, |a, b| {
            let ddg = if (a, b) == (0, 2) || (a, b) == (2, 0) { num } else { 0.0 };
            ddg / d - (dg[a] * dd[b] + dg[b] * dd[a]) / (d * d) + 2.0 * g * dd[a] * dd[b] / (d * d * d)
        })
    })
    .with_bounds(hw_region())
}

fn hw_region() -> DesignRegion {
    DesignRegion::new(vec![100.0, 75.0, 30.0], vec![400.0, 350.0, 150.0]).expect("static region")
}

fn hw_reference() -> ReferenceFit {
    ReferenceFit {
        estimates: vec![35.92, 0.071, 0.038, 0.167],
        // one unit in the last printed digit
        estimate_tol: vec![0.01, 0.001, 0.001, 0.001],
        std_errors: Some(vec![8.21, 0.178, 0.099, 0.415]),
        std_error_rel_tol: 0.02,
        correlation: Some(vec![vec![-0.805], vec![-0.840, 0.998], vec![-0.790, 0.998, 0.995]]),
        correlation_tol: 0.005,
    }
}

/// Directory holding fixture CSVs.
pub fn fixture_dir() -> PathBuf {
    std::env::var_os(FIXTURE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"))
}

pub fn isomerization_path() -> PathBuf {
    fixture_dir().join("isomerization.csv")
}

/// Loads and validates the 24-run isomerization fixture. Fails with
/// [`Error::FixtureMissing`] when the file is absent and
/// [`Error::FixtureIntegrity`] when its fit disagrees with the reference.
pub fn hougen_watson() -> Result<ZooEntry> {
    let path = isomerization_path();
    if !path.is_file() {
        return Err(Error::FixtureMissing {
            name: HOUGEN_WATSON.into(),
            path,
        });
    }
    let data = Dataset::from_csv_path(&path)?;
    hougen_watson_with(data)
}

/// Validates a user-supplied isomerization dataset as the fixture.
pub fn hougen_watson_with(data: Dataset) -> Result<ZooEntry> {
    let model = hougen_watson_model();
    let integrity = |reason: String| Error::FixtureIntegrity {
        name: HOUGEN_WATSON.into(),
        reason,
    };
    if data.m() != 3 || data.y().is_none() {
        return Err(integrity("expected columns x1,x2,x3,y".into()));
    }
    let start = default_start(HOUGEN_WATSON).expect("zoo name");
    let fit = nls::fit_ls(&model, &data, &start).map_err(|e| integrity(format!("reference fit failed: {e}")))?;
    let reference = hw_reference();
    let bad = reference.mismatches(&fit);
    if !bad.is_empty() {
        return Err(integrity(bad.join("; ")));
    }
    Ok(ZooEntry {
        model,
        default_region: hw_region(),
        fixture: Some(data),
        reference_fit: reference,
        default_start: start,
        fixture_fit: Some(fit),
    })
}

pub fn names() -> [&'static str; 2] {
    [MICHAELIS_MENTEN, HOUGEN_WATSON]
}

/// Zoo entry by name.
pub fn lookup(name: &str) -> Result<ZooEntry> {
    match name {
        MICHAELIS_MENTEN => Ok(michaelis_menten()),
        HOUGEN_WATSON => hougen_watson(),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Starting values for fitting a zoo model.
pub fn default_start(name: &str) -> Result<Vec<f64>> {
    match name {
        MICHAELIS_MENTEN => Ok(vec![205.0, 0.08]),
        HOUGEN_WATSON => Ok(vec![35.0, 0.07, 0.04, 0.17]),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Model only, without fixture loading.
pub fn lookup_model(name: &str) -> Result<ModelSpec> {
    match name {
        MICHAELIS_MENTEN => Ok(michaelis_menten_model()),
        HOUGEN_WATSON => Ok(hougen_watson_model()),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol * a.amax().max(b.amax()).max(1e-300)
    }

    fn probe_derivatives(model: &ModelSpec, region: &DesignRegion, centre: &[f64], seed: u64) {
        let fd = model.finite_difference();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x: Vec<f64> = (0..region.dim())
                .map(|d| rng.random_range(region.lower()[d]..=region.upper()[d]))
                .collect();
            let theta: Vec<f64> = centre.iter().map(|c| c * rng.random_range(0.5..1.5)).collect();
            let ga = DMatrix::from_column_slice(theta.len(), 1, model.jacobian_row(&x, &theta).unwrap().as_slice());
            let gf = DMatrix::from_column_slice(theta.len(), 1, fd.jacobian_row(&x, &theta).unwrap().as_slice());
            assert!(rel_close(&ga, &gf, 1e-5), "gradient at x={x:?} theta={theta:?}");
            let ha = model.hessian_point(&x, &theta).unwrap();
            let hf = fd.hessian_point(&x, &theta).unwrap();
            assert!(rel_close(&ha, &hf, 1e-4), "hessian at x={x:?} theta={theta:?}\n{ha}\n{hf}");
            assert!((&ha - ha.transpose()).amax() <= 1e-12 * (1.0 + ha.amax()));
        }
    }

    #[test]
    fn mm_derivatives_match_finite_differences() {
        let e = michaelis_menten();
        let region = DesignRegion::new(vec![0.001], vec![1.1]).unwrap();
        probe_derivatives(&e.model, &region, &[212.68, 0.064], 1);
    }

    #[test]
    fn hw_derivatives_match_finite_differences() {
        probe_derivatives(&hougen_watson_model(), &hw_region(), &[35.92, 0.071, 0.038, 0.167], 2);
    }

    #[test]
    fn mm_entry_examples() {
        let e = michaelis_menten();
        let d = e.fixture.as_ref().unwrap();
        assert_eq!(d.row(0), &[0.02]);
        assert_eq!(d.y().unwrap()[0], 76.0);
        assert_eq!(d.n(), 12);
        let fit = e.fixture_fit.as_ref().unwrap();
        assert!(e.reference_fit.mismatches(fit).is_empty());
        for x in [0.0, 0.3, 1.1] {
            assert_eq!(e.model.hessian_point(&[x], &[3.0, 0.2]).unwrap()[(0, 0)], 0.0);
        }
    }

    #[test]
    fn bundled_puromycin_csv_matches_embedded_data() {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/puromycin.csv");
        assert_eq!(Dataset::from_csv_path(path).unwrap(), puromycin());
    }

    #[test]
    fn hw_numerator_zero_line() {
        let m = hougen_watson_model();
        for theta in [[35.92, 0.071, 0.038, 0.167], [1.0, 2.0, 3.0, 4.0]] {
            assert_eq!(m.eval(&[200.0, 50.0 / HW_RATIO, 50.0], &theta).unwrap(), 0.0);
        }
    }

    #[test]
    fn hw_integrity_gate_rejects_perturbed_data() {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/isomerization.csv");
        let data = Dataset::from_csv_path(path).unwrap();
        let mut y = data.y().unwrap().to_vec();
        y[0] += 1.0;
        let err = hougen_watson_with(data.with_y(y).unwrap()).unwrap_err();
        assert!(matches!(err, Error::FixtureIntegrity { .. }), "{err}");
    }

    #[test]
    fn lookup_names() {
        assert!(matches!(lookup("logistic"), Err(Error::UnknownModel(_))));
        assert_eq!(lookup(MICHAELIS_MENTEN).unwrap().model.n_params(), 2);
        assert_eq!(lookup_model(HOUGEN_WATSON).unwrap().n_vars(), 3);
    }
}
