//! D and D_P design criteria, element-wise `P'P` assembly, D-efficiency and
//! sequential augmentation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::SecondDerivatives;
use crate::sensitivity::ProfileParts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriterionKind {
    /// `det(V'V)`.
    #[serde(rename = "d")]
    D,
    /// `det(P'P)`.
    #[serde(rename = "dp")]
    Dp,
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::D => "d",
            Self::Dp => "dp",
        })
    }
}

impl FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d" | "D" => Ok(Self::D),
            "dp" | "DP" | "d_p" => Ok(Self::Dp),
            other => Err(Error::argument(format!("criterion `{other}`: expected d or dp"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub criterion: CriterionKind,
    pub k: usize,
    /// `-inf` (JSON `null`) when the information matrix is singular.
    #[serde(with = "crate::io::logdet_serde")]
    pub logdet: f64,
    /// `exp(logdet)`; may under- or overflow, `logdet` is authoritative.
    #[serde(with = "crate::io::nullable_f64")]
    pub det: f64,
}

impl CriterionValue {
    pub fn new(criterion: CriterionKind, k: usize, logdet: f64) -> Self {
        Self {
            criterion,
            k,
            logdet,
            det: logdet.exp(),
        }
    }

    pub fn is_singular(&self) -> bool {
        self.logdet == f64::NEG_INFINITY
    }
}

fn criterion(kind: CriterionKind, m: &DMatrix<f64>) -> Result<CriterionValue> {
    let (n, k) = m.shape();
    if n < k {
        return Err(Error::argument(format!("{n} rows cannot support {k} parameters")));
    }
    Ok(CriterionValue::new(kind, k, linalg::log_det_gram(m)))
}

/// `ln det(V'V)`.
pub fn d_criterion(v: &DMatrix<f64>) -> Result<CriterionValue> {
    criterion(CriterionKind::D, v)
}

/// `ln det(P'P)`.
pub fn dp_criterion(p: &DMatrix<f64>) -> Result<CriterionValue> {
    criterion(CriterionKind::Dp, p)
}

/// The four terms of `p_i'p_j`:
/// `v_i'v_j - v_i'V_{-j}c_j - c_i'V_{-i}'v_j + c_i'V_{-i}'V_{-j}c_j`
/// with `c = H^{-1} h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PtpTerms {
    pub local: f64,
    pub cross_j: f64,
    pub cross_i: f64,
    pub quadratic: f64,
}

impl PtpTerms {
    pub fn total(&self) -> f64 {
        self.local - self.cross_j - self.cross_i + self.quadratic
    }
}

fn terms_from_parts(v: &DMatrix<f64>, pi: &ProfileParts, pj: &ProfileParts) -> PtpTerms {
    let vi = v.column(pi.index);
    let vj = v.column(pj.index);
    let v_rest_i = linalg::columns(v, &pi.others);
    let v_rest_j = linalg::columns(v, &pj.others);
    let vj_c = &v_rest_j * &pj.coef;
    let vi_c = &v_rest_i * &pi.coef;
    PtpTerms {
        local: vi.dot(&vj),
        cross_j: vi.dot(&vj_c),
        cross_i: vi_c.dot(&vj),
        quadratic: vi_c.dot(&vj_c),
    }
}

pub fn ptp_terms(i: usize, j: usize, v: &DMatrix<f64>, w: &SecondDerivatives, e: &DVector<f64>) -> Result<PtpTerms> {
    let pi = ProfileParts::new(i, v, w, e)?;
    let pj = ProfileParts::new(j, v, w, e)?;
    Ok(terms_from_parts(v, &pi, &pj))
}

/// `p_i'p_j` by the four-term expansion.
pub fn ptp_element(i: usize, j: usize, v: &DMatrix<f64>, w: &SecondDerivatives, e: &DVector<f64>) -> Result<f64> {
    ptp_terms(i, j, v, w, e).map(|t| t.total())
}

/// `P'P` assembled element by element.
pub fn ptp_matrix(v: &DMatrix<f64>, w: &SecondDerivatives, e: &DVector<f64>) -> Result<DMatrix<f64>> {
    let k = v.ncols();
    let parts = (0..k).map(|i| ProfileParts::new(i, v, w, e)).collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(k, k, |a, b| terms_from_parts(v, &parts[a], &parts[b]).total()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EfficiencyMode {
    /// `det(V'V)` at the D design over `det(P'P)` at the D_P design.
    #[default]
    Literal,
    /// `det(V'V)` at both designs.
    SameMatrix,
}

impl FromStr for EfficiencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "same-matrix" => Ok(Self::SameMatrix),
            other => Err(Error::argument(format!("efficiency mode `{other}`: expected literal or same-matrix"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Percent.
    pub d_eff: f64,
    pub numerator_logdet: f64,
    pub denominator_logdet: f64,
    pub k: usize,
    pub interpretation_mode: EfficiencyMode,
}

/// `exp((numerator - denominator) / k) * 100`.
pub fn d_efficiency(numerator_logdet: f64, denominator_logdet: f64, k: usize, mode: EfficiencyMode) -> Result<EfficiencyReport> {
    if !numerator_logdet.is_finite() || !denominator_logdet.is_finite() {
        return Err(Error::argument(format!(
            "D-efficiency needs finite log-determinants, got {numerator_logdet} and {denominator_logdet}"
        )));
    }
    if k == 0 {
        return Err(Error::argument("D-efficiency needs k >= 1"));
    }
    let d_eff = if numerator_logdet == denominator_logdet {
        100.0
    } else {
        ((numerator_logdet - denominator_logdet) / k as f64).exp() * 100.0
    };
    Ok(EfficiencyReport {
        d_eff,
        numerator_logdet,
        denominator_logdet,
        k,
        interpretation_mode: mode,
    })
}

/// `m` with `row` appended.
pub fn augment(m: &DMatrix<f64>, row: &DVector<f64>) -> Result<DMatrix<f64>> {
    if row.len() != m.ncols() {
        return Err(Error::Dimension {
            what: "augmenting row",
            expected: m.ncols(),
            got: row.len(),
        });
    }
    let n = m.nrows();
    let mut out = m.clone().insert_row(n, 0.0);
    out.set_row(n, &row.transpose());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dataset;
    use crate::sensitivity::{profile_vector_full, profile_vector_reduced};
    use crate::zoo;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_instance(seed: u64, n: usize, k: usize) -> (DMatrix<f64>, SecondDerivatives, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let v = DMatrix::from_fn(n, k, |_, _| draw());
        let w = SecondDerivatives(
            (0..n)
                .map(|_| {
                    let a = DMatrix::from_fn(k, k, |_, _| draw());
                    (&a + a.transpose()) * 0.5
                })
                .collect(),
        );
        let e = DVector::from_fn(n, |_, _| 0.1 * draw());
        (v, w, e)
    }

    #[test]
    fn d_criterion_examples() {
        let c = d_criterion(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!((c.logdet, c.det), (0.0, 1.0));
        let dup = DMatrix::from_row_slice(2, 2, &[0.4, -2.0, 0.4, -2.0]);
        assert!(d_criterion(&dup).unwrap().is_singular());
        assert!(d_criterion(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn mm_two_point_design_matches_explicit_determinant() {
        let model = zoo::michaelis_menten_model();
        let theta = [1.0, 0.1];
        let design = Dataset::design(&[vec![1.1], vec![0.085]]).unwrap();
        let v = model.jacobian(&design, &theta).unwrap();
        let g = |x: f64| [x / (theta[1] + x), -theta[0] * x / (theta[1] + x).powi(2)];
        let (a, b) = (g(1.1), g(0.085));
        // det(V'V) = det(V)^2 for square V
        let det = (a[0] * b[1] - a[1] * b[0]).powi(2);
        let got = d_criterion(&v).unwrap();
        assert!((got.det - det).abs() <= 1e-12 * det);
    }

    #[test]
    fn dp_examples() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 0.5]);
        assert_eq!(dp_criterion(&v).unwrap().logdet, d_criterion(&v).unwrap().logdet);

        let orth = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let p = DMatrix::from_columns(&[
            profile_vector_reduced(0, &orth).unwrap(),
            profile_vector_reduced(1, &orth).unwrap(),
        ]);
        assert_eq!(dp_criterion(&p).unwrap().logdet, d_criterion(&orth).unwrap().logdet);
    }

    #[test]
    fn ptp_first_term_is_information_entry() {
        let (v, w, e) = random_instance(11, 6, 3);
        let m = v.transpose() * &v;
        for i in 0..3 {
            for j in 0..3 {
                let t = ptp_terms(i, j, &v, &w, &e).unwrap();
                assert!((t.local - m[(i, j)]).abs() <= 1e-12 * m.amax());
            }
        }
    }

    #[test]
    fn ptp_zero_residual_diagonal_is_reduced_norm() {
        let (v, w, _) = random_instance(12, 5, 2);
        let e = DVector::zeros(5);
        for i in 0..2 {
            let got = ptp_element(i, i, &v, &w, &e).unwrap();
            let p = profile_vector_reduced(i, &v).unwrap();
            assert!((got - p.norm_squared()).abs() <= 1e-10 * p.norm_squared());
        }
    }

    proptest! {
        #[test]
        fn ptp_matches_direct_inner_products(seed in 0u64..300, n in 5usize..9, k in 2usize..5) {
            let (v, w, e) = random_instance(seed, n, k);
            let p = DMatrix::from_columns(
                &(0..k).map(|i| profile_vector_full(i, &v, &w, &e).unwrap()).collect::<Vec<_>>(),
            );
            let direct = p.transpose() * &p;
            let assembled = ptp_matrix(&v, &w, &e).unwrap();
            let scale = direct.amax();
            prop_assert!((&assembled - &direct).amax() <= 1e-10 * scale);
            let ld_direct = dp_criterion(&p).unwrap().logdet;
            let ld_assembled = assembled.determinant().ln();
            prop_assert!((ld_direct - ld_assembled).abs() <= 1e-8 * (1.0 + ld_direct.abs()));
        }

        #[test]
        fn augment_obeys_determinant_lemma(seed in 0u64..300, n in 3usize..8, k in 1usize..4) {
            prop_assume!(n >= k);
            let (m, _, _) = random_instance(seed, n, k);
            let (row, _, _) = random_instance(seed + 10_000, k, 1);
            let r = row.column(0).into_owned();
            let info = m.transpose() * &m;
            let inv = info.clone().try_inverse().unwrap();
            let lemma = info.determinant() * (1.0 + (r.transpose() * &inv * &r)[0]);
            let aug = augment(&m, &r).unwrap();
            let got = (aug.transpose() * &aug).determinant();
            prop_assert!((got - lemma).abs() <= 1e-8 * lemma.abs());
        }
    }

    #[test]
    fn augment_examples() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, 0.2, 1.0, 0.7, 0.7]);
        let same = augment(&m, &DVector::zeros(2)).unwrap();
        assert_eq!(d_criterion(&same).unwrap().logdet, d_criterion(&m).unwrap().logdet);
        let dup = augment(&m, &m.row(1).transpose()).unwrap();
        assert!(d_criterion(&dup).unwrap().logdet > d_criterion(&m).unwrap().logdet);
        assert!(augment(&m, &DVector::zeros(3)).is_err());

        let model = zoo::michaelis_menten_model();
        let theta = [1.0, 0.1];
        let pts = [vec![1.1], vec![0.085]];
        let mut built = DMatrix::zeros(0, 2);
        for x in &pts {
            built = augment(&built, &model.jacobian_row(x, &theta).unwrap()).unwrap();
        }
        let direct = model.jacobian(&Dataset::design(&pts).unwrap(), &theta).unwrap();
        assert_eq!(built, direct);
    }

    #[test]
    fn efficiency_examples() {
        let r = d_efficiency(1.234, 1.234, 2, EfficiencyMode::Literal).unwrap();
        assert_eq!(r.d_eff, 100.0);
        let r = d_efficiency(2.0f64.ln() * 2.0, 0.0, 2, EfficiencyMode::SameMatrix).unwrap();
        assert!((r.d_eff - 200.0).abs() < 1e-12);
        assert!(d_efficiency(f64::NEG_INFINITY, 0.0, 2, EfficiencyMode::Literal).is_err());
    }

    #[test]
    fn criterion_value_json_maps_singular_to_null() {
        let v = CriterionValue::new(CriterionKind::Dp, 2, f64::NEG_INFINITY);
        let json = crate::io::to_json_string(&v).unwrap();
        assert!(json.contains("\"logdet\":null"), "{json}");
        let back: CriterionValue = serde_json::from_str(&json).unwrap();
        assert!(back.is_singular());
        assert_eq!("dp".parse::<CriterionKind>().unwrap(), CriterionKind::Dp);
    }
}
