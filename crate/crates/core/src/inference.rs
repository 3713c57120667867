//! Sandwich variance, small-sample corrections, and coefficient summaries.
//!
//! The covariance of the stacked `(alpha, beta)` estimate is the usual
//! M-estimation sandwich: with `J = (1/n) sum_i dU_i` and
//! `M = (1/n) sum_i U_i U_i'`, the estimate is `J^-1 M J^-T / n`.
//!
//! Two small-sample corrections are available and on by default:
//!
//! - residual correction: each individual's residual vector is
//!   pre-multiplied by `(I - H_ii)^-1`, where the leverage is
//!   `H_ii = D_i (sum_j B_j' D_j)^-1 B_i'` with `U_i = B_i' eps_i` and
//!   `D_i` the derivative of the fitted mean vector; under working
//!   independence this is the classical leverage-adjusted meat;
//! - t critical values with `n - p - q` degrees of freedom for confidence
//!   intervals and p-values.
//!
//! `(I - H_ii)^-1 eps_i` is evaluated through the Woodbury identity, so no
//! `T x T` matrix is ever formed.

use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::estimator::{DesignView, FitDiagnostics, FitResult, Solved};
use crate::linalg::Mat;
use crate::scalar::Real;

/// Condition-number level above which the bread matrix is flagged.
pub const CONDITION_WARN: f64 = 1e10;

/// Floor reported instead of an exactly-zero p-value.
pub const P_VALUE_FLOOR: f64 = 1e-300;

/// Inference settings.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig<F> {
    /// Two-sided significance level (CI level is `1 - eta`).
    pub eta: F,
    /// Pre-multiply residuals by `(I - H_ii)^-1` when building the meat.
    pub residual_correction: bool,
    /// Use t critical values with `n - p - q` degrees of freedom.
    pub t_critical: bool,
    pub df_override: Option<usize>,
}

impl<F: Real> Default for InferenceConfig<F> {
    fn default() -> Self {
        InferenceConfig {
            eta: F::from_f64_lossy(0.05),
            residual_correction: true,
            t_critical: true,
            df_override: None,
        }
    }
}

impl<F: Real> InferenceConfig<F> {
    /// No small-sample corrections; normal reference.
    pub fn unadjusted() -> Self {
        InferenceConfig {
            eta: F::from_f64_lossy(0.05),
            residual_correction: false,
            t_critical: false,
            df_override: None,
        }
    }

    pub fn validate(&self, n: usize, dim: usize) -> Result<()> {
        let eta = self.eta.as_f64();
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::config("eta must lie in (0,1)"));
        }
        if self.t_critical && self.df(n, dim)? == 0 {
            return Err(Error::config(format!(
                "t critical values need n - p - q >= 1, got n = {n}, p + q = {dim}"
            )));
        }
        Ok(())
    }

    pub fn df(&self, n: usize, dim: usize) -> Result<usize> {
        match self.df_override {
            Some(df) => Ok(df),
            None => Ok(n.saturating_sub(dim)),
        }
    }
}

/// Sandwich covariance of the stacked estimate from per-individual
/// estimating-function values (one row per individual, not averaged) and
/// the averaged Jacobian. Returns the `Sigma / n` scaling, i.e. the
/// covariance of the estimate itself.
pub fn sandwich_vcov<F: Real>(per_individual_u: &Mat<F>, mean_jacobian: &Mat<F>) -> Result<Mat<F>> {
    let n = per_individual_u.nrows();
    let dim = per_individual_u.ncols();
    assert_eq!(mean_jacobian.nrows(), dim, "jacobian/U dimension mismatch");
    let n_f = F::from_f64_lossy(n as f64);
    let mut meat = Mat::zeros(dim, dim);
    for i in 0..n {
        let row = per_individual_u.row(i).to_vec();
        meat.add_outer(F::one() / n_f, &row, &row);
    }
    sandwich_from_meat(&meat, mean_jacobian, n)
}

fn sandwich_from_meat<F: Real>(meat: &Mat<F>, mean_jacobian: &Mat<F>, n: usize) -> Result<Mat<F>> {
    let bread_inv = mean_jacobian.inverse()?;
    let v = bread_inv
        .matmul(meat)
        .matmul(&bread_inv.transpose())
        .scale(F::one() / F::from_f64_lossy(n as f64));
    Ok(symmetrize(&v))
}

fn symmetrize<F: Real>(m: &Mat<F>) -> Mat<F> {
    let half = F::from_f64_lossy(0.5);
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] = (m[(i, j)] + m[(j, i)]) * half;
        }
    }
    out
}

/// Residual-corrected meat and covariance.
pub struct CorrectedSandwich<F> {
    pub vcov: Mat<F>,
    /// Individuals for which `I - H_ii` was numerically singular and the
    /// uncorrected residual was used instead.
    pub fallbacks: usize,
}

/// Apply the leverage correction: residuals become `(I - H_ii)^-1 eps_i`
/// with `H_ii = D_i (sum_j B_j' D_j)^-1 B_i'`, then the sandwich is
/// rebuilt with the corrected per-individual estimating functions.
///
/// `b` and `d` hold one matrix per individual (rows = used decision
/// points, columns = stacked dimension); `mean_jacobian` is the same bread
/// used for the uncorrected sandwich.
pub fn apply_small_sample_correction<F: Real>(
    b: &[Mat<F>],
    d: &[Mat<F>],
    residuals: &[Vec<F>],
    mean_jacobian: &Mat<F>,
) -> Result<CorrectedSandwich<F>> {
    let n = b.len();
    assert!(
        n == d.len() && n == residuals.len(),
        "ragged correction inputs"
    );
    let dim = mean_jacobian.nrows();
    // K^-1 = sum_j B_j' D_j
    let mut k_inv = Mat::zeros(dim, dim);
    for (bi, di) in b.iter().zip(d) {
        for r in 0..bi.nrows() {
            k_inv.add_outer(F::one(), bi.row(r), di.row(r));
        }
    }
    let n_f = F::from_f64_lossy(n as f64);
    let mut meat = Mat::zeros(dim, dim);
    let mut fallbacks = 0usize;
    for i in 0..n {
        let bi = &b[i];
        let di = &d[i];
        let eps = &residuals[i];
        let t_used = bi.nrows();
        // B_i' eps_i
        let mut b_eps = vec![F::zero(); dim];
        for r in 0..t_used {
            for (c, be) in b_eps.iter_mut().enumerate() {
                *be = *be + bi[(r, c)] * eps[r];
            }
        }
        // leave-one-out system (K^-1 - B_i' D_i) z = B_i' eps_i
        let mut loo = k_inv.clone();
        for r in 0..t_used {
            loo.add_outer(-F::one(), bi.row(r), di.row(r));
        }
        let u_i = match loo.solve(&b_eps) {
            Ok(z) => {
                // corrected residual: eps + D_i z, then U_i = B_i' eps~
                let mut u = b_eps.clone();
                for r in 0..t_used {
                    let dz: F = di.row(r).iter().zip(&z).map(|(&dv, &zv)| dv * zv).sum();
                    for (c, uc) in u.iter_mut().enumerate() {
                        *uc = *uc + bi[(r, c)] * dz;
                    }
                }
                u
            }
            Err(_) => {
                fallbacks += 1;
                b_eps
            }
        };
        meat.add_outer(F::one() / n_f, &u_i, &u_i);
    }
    let vcov = sandwich_from_meat(&meat, mean_jacobian, n)?;
    Ok(CorrectedSandwich { vcov, fallbacks })
}

/// Fill a [`FitResult`] from a solved estimating equation.
pub(crate) fn attach<F: Real>(
    view: &DesignView<'_, F>,
    solved: Solved<F>,
    config: &InferenceConfig<F>,
) -> Result<FitResult<F>> {
    let n = view.data.n();
    let q = view.q();
    let p = view.p();
    let dim = p + q;
    config.validate(n, dim)?;
    let bread = &solved.evaluation.jacobian;
    let ill_conditioned = match bread.condition_inf() {
        Ok(c) => c.as_f64() > CONDITION_WARN,
        Err(_) => true,
    };
    let vcov_unadj = sandwich_vcov(&solved.evaluation.u_rows, bread)?;
    let mut fallbacks = 0usize;
    let vcov_adj = if config.residual_correction {
        let decomp = crate::estimator::residual_decomposition(view, &solved.alpha, &solved.beta);
        let corrected =
            apply_small_sample_correction(&decomp.b, &decomp.d, &decomp.residuals, bread)?;
        fallbacks = corrected.fallbacks;
        Some(corrected.vcov)
    } else {
        None
    };
    let df = if config.t_critical {
        Some(config.df(n, dim)?)
    } else {
        None
    };

    let vcov = vcov_adj.clone().unwrap_or_else(|| vcov_unadj.clone());
    let crit = dist::critical_value(config.eta, df.map(|d| F::from_f64_lossy(d as f64)));
    let crit_unadj = dist::critical_value(config.eta, None);

    let beta = solved.beta.clone();
    let mut se_beta = Vec::with_capacity(p);
    let mut ci_beta = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    let mut se_un = Vec::with_capacity(p);
    let mut ci_un = Vec::with_capacity(p);
    let mut p_un = Vec::with_capacity(p);
    for j in 0..p {
        let est = beta[j];
        let se = vcov[(q + j, q + j)].max(F::zero()).sqrt();
        se_beta.push(se);
        ci_beta.push((est - crit * se, est + crit * se));
        p_values.push(p_value(est, se, df));
        let se0 = vcov_unadj[(q + j, q + j)].max(F::zero()).sqrt();
        se_un.push(se0);
        ci_un.push((est - crit_unadj * se0, est + crit_unadj * se0));
        p_un.push(p_value(est, se0, None));
    }

    let diagnostics = FitDiagnostics {
        df_used: df,
        leverage_fallbacks: fallbacks,
        ill_conditioned_bread: ill_conditioned,
        ..solved.diagnostics
    };
    Ok(FitResult {
        alpha: solved.alpha,
        beta,
        vcov,
        vcov_unadjusted: vcov_unadj,
        se_beta,
        ci_beta,
        p_values,
        se_beta_unadjusted: se_un,
        ci_beta_unadjusted: ci_un,
        p_values_unadjusted: p_un,
        diagnostics,
    })
}

/// Two-sided p-value against the configured reference distribution.
fn p_value<F: Real>(est: F, se: F, df: Option<usize>) -> F {
    if se == F::zero() {
        return if est == F::zero() {
            F::one()
        } else {
            F::from_f64_lossy(P_VALUE_FLOOR)
        };
    }
    let stat = (est / se).as_f64();
    let p = match df {
        Some(d) => dist::t_p_two_sided(stat, d as f64),
        None => dist::normal_p_two_sided(stat),
    };
    F::from_f64_lossy(p.max(P_VALUE_FLOOR))
}

/// One row of a coefficient summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow<F> {
    pub name: String,
    pub estimate: F,
    pub se: F,
    pub ci_lower: F,
    pub ci_upper: F,
    pub p_value: F,
    /// Set when the standard error is exactly zero.
    pub degenerate: bool,
}

/// Per-coefficient table (controls then moderators).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable<F> {
    pub rows: Vec<CoefficientRow<F>>,
    /// CI level `1 - eta`.
    pub level: F,
}

/// Summarize a fit into a coefficient table using the supplied inference
/// configuration for the reference distribution (the covariance inside the
/// fit is reused as-is).
pub fn summarize<F: Real>(fit: &FitResult<F>, config: &InferenceConfig<F>) -> CoefficientTable<F> {
    let q = fit.alpha.len();
    let p = fit.beta.len();
    let df = if config.t_critical {
        fit.diagnostics.df_used
    } else {
        None
    };
    let crit = dist::critical_value(config.eta, df.map(|d| F::from_f64_lossy(d as f64)));
    let mut rows = Vec::with_capacity(p + q);
    let mut push = |name: String, est: F, var: F| {
        let se = var.max(F::zero()).sqrt();
        rows.push(CoefficientRow {
            name,
            estimate: est,
            se,
            ci_lower: est - crit * se,
            ci_upper: est + crit * se,
            p_value: p_value(est, se, df),
            degenerate: se == F::zero(),
        });
    };
    for (j, &a) in fit.alpha.iter().enumerate() {
        push(format!("alpha_{j}"), a, fit.vcov[(j, j)]);
    }
    for (j, &b) in fit.beta.iter().enumerate() {
        push(format!("beta_{j}"), b, fit.vcov[(q + j, q + j)]);
    }
    CoefficientTable {
        rows,
        level: F::one() - config.eta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scores_give_zero_covariance() {
        let u = Mat::zeros(5, 2);
        let bread = Mat::from_rows(&[vec![-1.0, 0.2], vec![0.1, -0.8]]);
        let v = sandwich_vcov(&u, &bread).unwrap();
        assert_eq!(v.max_abs(), 0.0);
    }

    #[test]
    fn duplication_scales_covariance_by_one_over_k() {
        let rows = vec![vec![0.3, -0.1], vec![-0.2, 0.4], vec![0.1, 0.05]];
        let bread = Mat::from_rows(&[vec![-1.0, 0.1], vec![0.0, -0.9]]);
        let base = sandwich_vcov(&Mat::from_rows(&rows), &bread).unwrap();
        let mut dup = rows.clone();
        for _ in 0..2 {
            dup.extend(rows.iter().cloned());
        }
        let tripled = sandwich_vcov(&Mat::from_rows(&dup), &bread).unwrap();
        let rel = tripled.scale(3.0).sub(&base).max_abs() / base.max_abs();
        assert!(rel < 1e-12);
    }

    #[test]
    fn reordering_individuals_leaves_sandwich_unchanged() {
        let rows = vec![vec![0.3, -0.1], vec![-0.2, 0.4], vec![0.1, 0.05]];
        let bread = Mat::from_rows(&[vec![-1.0, 0.1], vec![0.0, -0.9]]);
        let a = sandwich_vcov(&Mat::from_rows(&rows), &bread).unwrap();
        let reordered = vec![rows[2].clone(), rows[0].clone(), rows[1].clone()];
        let b = sandwich_vcov(&Mat::from_rows(&reordered), &bread).unwrap();
        assert!(a.sub(&b).max_abs() < 1e-15);
    }

    #[test]
    fn woodbury_correction_matches_direct_inverse() {
        // two individuals, 3 used points each, dimension 2
        let b = vec![
            Mat::from_rows(&[vec![0.5, 0.1], vec![0.2, -0.3], vec![0.0, 0.4]]),
            Mat::from_rows(&[vec![0.3, 0.3], vec![-0.1, 0.2], vec![0.6, 0.0]]),
        ];
        let d = vec![
            Mat::from_rows(&[vec![0.4, 0.2], vec![0.1, -0.1], vec![0.2, 0.5]]),
            Mat::from_rows(&[vec![0.2, 0.4], vec![-0.2, 0.1], vec![0.5, 0.1]]),
        ];
        let residuals = vec![vec![0.7, -0.2, 0.1], vec![-0.4, 0.3, 0.2]];
        // bread: any invertible stand-in with the right dimension
        let bread = Mat::from_rows(&[vec![-1.1, 0.2], vec![0.1, -0.7]]);

        let corrected = apply_small_sample_correction(&b, &d, &residuals, &bread).unwrap();
        assert_eq!(corrected.fallbacks, 0);

        // direct route: form H_ii = D_i K B_i' explicitly and invert I - H
        let mut k_inv = Mat::zeros(2, 2);
        for (bi, di) in b.iter().zip(&d) {
            for r in 0..bi.nrows() {
                k_inv.add_outer(1.0, bi.row(r), di.row(r));
            }
        }
        let k = k_inv.inverse().unwrap();
        let n = 2.0;
        let mut meat = Mat::zeros(2, 2);
        for i in 0..2 {
            let h = d[i].matmul(&k).matmul(&b[i].transpose());
            let i_minus_h = Mat::identity(3).sub(&h);
            let eps_t = i_minus_h.inverse().unwrap().matvec(&residuals[i]);
            let mut u = vec![0.0; 2];
            for r in 0..3 {
                for (c, uc) in u.iter_mut().enumerate() {
                    *uc += b[i][(r, c)] * eps_t[r];
                }
            }
            meat.add_outer(1.0 / n, &u, &u);
        }
        let bread_inv = bread.inverse().unwrap();
        let direct = bread_inv
            .matmul(&meat)
            .matmul(&bread_inv.transpose())
            .scale(1.0 / n);
        assert!(corrected.vcov.sub(&direct).max_abs() < 1e-12);
    }

    #[test]
    fn summarize_reference_cases() {
        use crate::estimator::{FitDiagnostics, FitResult};
        let vcov = Mat::from_rows(&[vec![0.1, 0.0], vec![0.0, 0.027_f64.powi(2)]]);
        let fit = FitResult {
            alpha: vec![0.5],
            beta: vec![0.127],
            vcov: vcov.clone(),
            vcov_unadjusted: vcov,
            se_beta: vec![0.027],
            ci_beta: vec![(0.0, 0.0)],
            p_values: vec![0.0],
            se_beta_unadjusted: vec![0.027],
            ci_beta_unadjusted: vec![(0.0, 0.0)],
            p_values_unadjusted: vec![0.0],
            diagnostics: FitDiagnostics::default(),
        };
        let table = summarize(&fit, &InferenceConfig::<f64>::unadjusted());
        let beta_row = &table.rows[1];
        assert!((beta_row.ci_lower - 0.074).abs() < 5e-4);
        assert!((beta_row.ci_upper - 0.180).abs() < 5e-4);
        assert!(beta_row.p_value < 0.001);
    }

    #[test]
    fn p_value_edge_cases() {
        // zero estimate with positive SE: p = 1
        assert_eq!(p_value(0.0_f64, 1.0, None), 1.0);
        // zero SE with nonzero estimate: floored, flagged by summarize
        assert_eq!(p_value(0.5_f64, 0.0, None), P_VALUE_FLOOR);
    }
}
