//! Central-difference derivatives of a scalar function of the parameters.
//!
//! Step sizes follow the usual round-off/truncation balance: `sqrt(eps)` for
//! first derivatives and `eps^(1/4)` for second derivatives, both scaled by
//! `1 + |theta_a|`.

use nalgebra::{DMatrix, DVector};

fn gradient_step(t: f64) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + t.abs())
}

fn hessian_step(t: f64) -> f64 {
    f64::EPSILON.powf(0.25) * (1.0 + t.abs())
}

/// Central-difference gradient of `f` at `theta`.
pub fn gradient<F>(f: F, theta: &[f64]) -> DVector<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = theta.to_vec();
    DVector::from_iterator(
        theta.len(),
        (0..theta.len()).map(|a| {
            let h = gradient_step(theta[a]);
            work[a] = theta[a] + h;
            let up = f(&work);
            work[a] = theta[a] - h;
            let down = f(&work);
            work[a] = theta[a];
            (up - down) / (2.0 * h)
        }),
    )
}

/// Central-difference Hessian of `f` at `theta`. The result is exactly
/// symmetric: each off-diagonal entry is computed once and mirrored.
pub fn hessian<F>(f: F, theta: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let k = theta.len();
    let mut out = DMatrix::zeros(k, k);
    let mut work = theta.to_vec();
    let centre = f(theta);
    let steps: Vec<f64> = theta.iter().map(|&t| hessian_step(t)).collect();

    for a in 0..k {
        let ha = steps[a];
        work[a] = theta[a] + ha;
        let up = f(&work);
        work[a] = theta[a] - ha;
        let down = f(&work);
        work[a] = theta[a];
        out[(a, a)] = (up - 2.0 * centre + down) / (ha * ha);

        for b in 0..a {
            let hb = steps[b];
            let mut corner = |sa: f64, sb: f64| {
                work[a] = theta[a] + sa * ha;
                work[b] = theta[b] + sb * hb;
                let v = f(&work);
                work[a] = theta[a];
                work[b] = theta[b];
                v
            };
            let pp = corner(1.0, 1.0);
            let pm = corner(1.0, -1.0);
            let mp = corner(-1.0, 1.0);
            let mm = corner(-1.0, -1.0);
            let v = (pp - pm - mp + mm) / (4.0 * ha * hb);
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}
