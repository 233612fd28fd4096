//! Scores for predictive samples and the Gaussian-transform baseline.

use crate::error::{Error, Result};
use crate::model::EmpiricalPredictive;
use crate::numeric::{bessel_k, gamma_fn, log_norm_cdf, norm_quantile_log, norm_quantile_upper};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// `½ E|X - X'| - E|X - x|` for the empirical law of `draws` (larger is better).
pub fn crps(draws: &[f64], x: f64) -> f64 {
    let m = draws.len() as f64;
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    // Σ_i Σ_j |d_i - d_j| = 2 Σ_i (2i - M + 1) d_(i)
    let pair: f64 = s.iter().enumerate().map(|(i, d)| (2.0 * i as f64 - m + 1.0) * d).sum::<f64>() * 2.0;
    let abs: f64 = s.iter().map(|d| (d - x).abs()).sum();
    0.5 * pair / (m * m) - abs / m
}

/// CRPS and absolute median error of one predictive against the truth, both
/// on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateScore {
    pub crps: f64,
    pub abs_error: f64,
}

pub fn score_predictive(pred: &EmpiricalPredictive, truth: f64) -> ReplicateScore {
    let logs = pred.log_scale();
    let x = truth.ln();
    let median = crate::conditional::lower_quantile(&logs.draws, 0.5);
    ReplicateScore { crps: crps(&logs.draws, x), abs_error: (median - x).abs() }
}

/// `(CRPS_K, MAE_K)`.
pub fn mean_scores(scores: &[ReplicateScore]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::EmptySample);
    }
    let k = scores.len() as f64;
    Ok((scores.iter().map(|s| s.crps).sum::<f64>() / k, scores.iter().map(|s| s.abs_error).sum::<f64>() / k))
}

/// Standard Fréchet to standard normal: `Φ^{-1}(exp(-1/x))`.
pub fn psi(x: f64) -> f64 {
    let p = (-1.0 / x).exp();
    if p > 0.5 {
        norm_quantile_upper(-(-1.0 / x).exp_m1())
    } else {
        norm_quantile_log(-1.0 / x)
    }
}

/// Standard normal to standard Fréchet: `-1 / ln Φ(y)`.
pub fn psi_inv(y: f64) -> f64 {
    -1.0 / log_norm_cdf(y)
}

/// Whittle-Matérn correlation `(c h)^ν K_ν(c h) / (2^{ν-1} Γ(ν))`, 1 at `h = 0`.
pub fn whittle_matern_cov(h: f64, nu: f64, c: f64) -> f64 {
    let x = c * h.abs();
    if x == 0.0 {
        return 1.0;
    }
    if x > 700.0 {
        return 0.0;
    }
    let v = x.powf(nu) * bessel_k(nu, x) / (2f64.powf(nu - 1.0) * gamma_fn(nu));
    v.min(1.0)
}

/// Covariance matrix of a unit-variance Matérn field at `sites`.
pub fn matern_matrix(sites: &[f64], nu: f64, c: f64) -> DMatrix<f64> {
    let n = sites.len();
    DMatrix::from_fn(n, n, |i, j| whittle_matern_cov(sites[i] - sites[j], nu, c))
}

/// Kriging predictive for a zero-mean unit-variance Gaussian field after the
/// marginal transform, back-transformed to the Fréchet scale.
pub fn gt_conditional<R: Rng + ?Sized>(
    sites: &[f64],
    values: &[f64],
    t0: f64,
    cov: impl Fn(f64) -> f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<EmpiricalPredictive> {
    if n_draws == 0 {
        return Err(Error::InvalidCount(0));
    }
    if sites.len() != values.len() {
        return Err(Error::InvalidObservations("sites and values differ in length".into()));
    }
    if let Some(i) = sites.iter().position(|&t| t == t0) {
        return EmpiricalPredictive::new(t0, vec![values[i]; n_draws]);
    }
    let (mean, var) = if sites.is_empty() {
        (0.0, 1.0)
    } else {
        let n = sites.len();
        let sigma = DMatrix::from_fn(n, n, |i, j| cov(sites[i] - sites[j]));
        let k = DVector::from_fn(n, |i, _| cov(t0 - sites[i]));
        let y = DVector::from_iterator(n, values.iter().map(|&z| psi(z)));
        let chol = sigma.cholesky().ok_or(Error::SingularCovariance)?;
        let w = chol.solve(&k);
        (w.dot(&y), (1.0 - w.dot(&k)).clamp(0.0, 1.0))
    };
    let sd = var.sqrt();
    let draws = (0..n_draws).map(|_| psi_inv(mean + sd * rng.sample::<f64, _>(StandardNormal))).collect();
    EmpiricalPredictive::new(t0, draws)
}

/// Parameter grid of the maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaternGrid {
    pub nu: Vec<f64>,
    pub c: Vec<f64>,
}

impl Default for MaternGrid {
    fn default() -> Self {
        MaternGrid {
            nu: vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0],
            c: (0..25).map(|k| 0.1 * 1.2f64.powi(k)).collect(),
        }
    }
}

/// Gaussian log-likelihood of the rows of `ys` (each a field at `sites`)
/// up to an additive constant; `None` when the matrix is not positive definite.
pub fn matern_loglik(sites: &[f64], ys: &[Vec<f64>], nu: f64, c: f64) -> Option<f64> {
    let chol = matern_matrix(sites, nu, c).cholesky()?;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut quad = 0.0;
    for y in ys {
        let v = DVector::from_column_slice(y);
        quad += v.dot(&chol.solve(&v));
    }
    let ll = -0.5 * (ys.len() as f64 * logdet + quad);
    ll.is_finite().then_some(ll)
}

/// Grid-search ML fit of `(ν, c)` to Fréchet-scale fields observed at `sites`.
pub fn fit_covariance(sites: &[f64], fields: &[Vec<f64>], grid: &MaternGrid) -> Result<(f64, f64)> {
    if fields.is_empty() {
        return Err(Error::EmptySample);
    }
    let ys: Vec<Vec<f64>> = fields.iter().map(|f| f.iter().map(|&z| psi(z)).collect()).collect();
    let mut best: Option<(f64, f64, f64)> = None;
    for &nu in &grid.nu {
        for &c in &grid.c {
            if let Some(ll) = matern_loglik(sites, &ys, nu, c) {
                if best.is_none_or(|b| ll > b.0) {
                    best = Some((ll, nu, c));
                }
            }
        }
    }
    best.map(|b| (b.1, b.2)).ok_or(Error::SingularCovariance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncond::replicate_rng;
    use proptest::prelude::{prop_assert, prop_assume, proptest};

    #[test]
    fn crps_examples() {
        assert_eq!(crps(&[2.0, 2.0], 2.0), 0.0);
        assert!((crps(&[0.0, 1.0], 0.0) + 0.25).abs() < 1e-15);
        assert!((crps(&[3.0, 3.0, 3.0], 1.0) + 2.0).abs() < 1e-15);
        // Brute-force double sum.
        let d: [f64; 5] = [0.3, -1.2, 2.5, 0.0, 0.7];
        let m = d.len() as f64;
        let pair: f64 = d.iter().flat_map(|a| d.iter().map(move |b| (a - b).abs())).sum();
        let abs: f64 = d.iter().map(|a| (a - 0.4f64).abs()).sum();
        assert!((crps(&d, 0.4) - (0.5 * pair / (m * m) - abs / m)).abs() < 1e-14);
    }

    #[test]
    fn crps_prefers_the_right_distribution() {
        let mut rng = replicate_rng(1, 0);
        let mut right = 0.0;
        let mut shifted = 0.0;
        let reps = 10_000;
        for _ in 0..reps {
            let draws: Vec<f64> = (0..20).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let x: f64 = rng.sample(StandardNormal);
            right += crps(&draws, x);
            shifted += crps(&draws, x + 1.0);
        }
        assert!(right > shifted);
    }

    #[test]
    fn mean_scores_examples() {
        let s = vec![ReplicateScore { crps: -0.1, abs_error: 0.0 }; 4];
        assert_eq!(mean_scores(&s).unwrap(), (-0.1, 0.0));
        assert!(mean_scores(&[]).is_err());
    }

    #[test]
    fn psi_values() {
        assert!(psi(1.0 / std::f64::consts::LN_2).abs() < 1e-15);
        assert!((psi_inv(0.0) - 1.0 / std::f64::consts::LN_2).abs() < 1e-14);
        for k in 0..1000 {
            let x = 10f64.powf(-2.0 + 8.0 * k as f64 / 999.0);
            let back = psi_inv(psi(x));
            assert!((back - x).abs() <= 1e-10 * x, "{x} -> {back}");
        }
    }

    proptest! {
        #[test]
        fn psi_is_increasing(a in 0.01f64..1e5, b in 0.01f64..1e5) {
            prop_assume!(a < b * (1.0 - 1e-9));
            prop_assert!(psi(a) < psi(b));
        }
    }

    #[test]
    fn matern_special_cases() {
        for &h in &[0.1, 0.5, 1.0, 2.0, 5.0] {
            assert!((whittle_matern_cov(h, 0.5, 1.3) - (-1.3 * h).exp()).abs() < 1e-12);
            // ν = 3/2: (1 + x) e^{-x}
            let x = 0.7 * h;
            assert!((whittle_matern_cov(h, 1.5, 0.7) - (1.0 + x) * (-x).exp()).abs() < 1e-12);
        }
        assert_eq!(whittle_matern_cov(0.0, 2.0, 1.0), 1.0);
        assert!((whittle_matern_cov(1e-8, 2.0, 1.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gt_examples() {
        let mut rng = replicate_rng(2, 0);
        let cov = |h: f64| whittle_matern_cov(h, 1.0, 1.0);
        let p = gt_conditional(&[-1.0, 1.0], &[0.5, 3.0], 1.0, cov, 10, &mut rng).unwrap();
        assert!(p.draws.iter().all(|&v| v == 3.0));
        let p = gt_conditional(&[], &[], 0.0, cov, 10_000, &mut rng).unwrap();
        assert!(crate::uncond::frechet_ks(&p.draws).unwrap() < 0.02);
        let singular = |_: f64| 1.0;
        assert!(matches!(
            gt_conditional(&[0.0, 1.0], &[1.0, 1.0], 0.5, singular, 5, &mut rng),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn fit_recovers_grid_point() {
        let sites: Vec<f64> = (0..10).map(|k| 0.5 * k as f64).collect();
        let chol = matern_matrix(&sites, 1.0, 1.0).cholesky().unwrap();
        let grid = MaternGrid { nu: vec![0.25, 0.5, 1.0, 2.0, 4.0], c: vec![0.25, 0.5, 1.0, 2.0, 4.0] };
        let mut hits = 0;
        let trials = 20;
        for t in 0..trials {
            let mut rng = replicate_rng(30, t);
            let fields: Vec<Vec<f64>> = (0..500)
                .map(|_| {
                    let e = DVector::from_fn(sites.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                    (chol.l() * e).iter().map(|&y| psi_inv(y)).collect()
                })
                .collect();
            if fit_covariance(&sites, &fields, &grid).unwrap() == (1.0, 1.0) {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.9 * trials as f64, "{hits}/{trials}");
    }
}
