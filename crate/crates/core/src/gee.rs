//! Log-link GEE comparators with independent and exchangeable working
//! correlation.
//!
//! The marginal mean model is `mu_t = exp(g_t'a + A_t S_t'b)` with the
//! binary variance `mu_t (1 - mu_t)`. The estimating equation stacks
//! `D_i' V_i^-1 (Y_i - mu_i)` over individuals, where `V_i` is the working
//! covariance; the exchangeable correlation is re-estimated between mean
//! updates by the moment method on Pearson residuals. These are comparator
//! estimators: their mean model conditions on the observed treatment path,
//! so they are generally biased for the excursion estimand.

use serde::{Deserialize, Serialize};

use crate::data::MrtDataset;
use crate::error::{Error, Result};
use crate::estimator::{FitDiagnostics, FitResult, SolverConfig};
use crate::inference::{
    apply_small_sample_correction, sandwich_vcov, InferenceConfig, CONDITION_WARN,
};
use crate::linalg::Mat;
use crate::outcomes::ProximalOutcomes;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkingCorrelation {
    Independent,
    Exchangeable,
}

/// GEE fit specification.
#[derive(Debug, Clone, PartialEq)]
pub struct GeeSpec<F> {
    pub correlation: WorkingCorrelation,
    /// Moderator columns entering the mean model as `A_t S_t`.
    pub moderator_cols: Vec<usize>,
    /// Control columns entering the mean model as `g_t`.
    pub control_cols: Vec<usize>,
    pub solver: SolverConfig<F>,
}

impl<F: Real> GeeSpec<F> {
    pub fn new(
        correlation: WorkingCorrelation,
        moderator_cols: Vec<usize>,
        control_cols: Vec<usize>,
    ) -> Self {
        GeeSpec {
            correlation,
            moderator_cols,
            control_cols,
            solver: SolverConfig::default(),
        }
    }

    pub fn label(&self) -> String {
        match self.correlation {
            WorkingCorrelation::Independent => "GEE.ind".into(),
            WorkingCorrelation::Exchangeable => "GEE.exch".into(),
        }
    }

    fn validate(&self, data: &MrtDataset<F>) -> Result<()> {
        if self.moderator_cols.is_empty() || !self.moderator_cols.contains(&0) {
            return Err(Error::config(
                "moderator columns must be nonempty and include the intercept column 0",
            ));
        }
        if self.control_cols.is_empty() {
            return Err(Error::config("at least one control column is required"));
        }
        if let Some(&c) = self
            .moderator_cols
            .iter()
            .find(|&&c| c >= data.n_moderators())
        {
            return Err(Error::config(format!("moderator column {c} out of range")));
        }
        if let Some(&c) = self.control_cols.iter().find(|&&c| c >= data.n_controls()) {
            return Err(Error::config(format!("control column {c} out of range")));
        }
        Ok(())
    }
}

const MU_CEILING: f64 = 1.0 - 1e-8;
const MU_FLOOR: f64 = 1e-12;

struct GeeEvaluation<F> {
    u_mean: Vec<F>,
    /// `(1/n) sum_i D_i' V_i^-1 D_i` (positive definite scaling matrix).
    scaling: Mat<F>,
    u_rows: Mat<F>,
    clamp_events: usize,
    /// Pearson residual cross-products for the moment update of rho.
    sum_sq: f64,
    sum_pair: f64,
    n_obs: usize,
    n_pairs: usize,
}

fn evaluate_gee<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    spec: &GeeSpec<F>,
    theta: &[F],
    rho: f64,
) -> Result<GeeEvaluation<F>> {
    let q = spec.control_cols.len();
    let p = spec.moderator_cols.len();
    let dim = p + q;
    let n = data.n();
    let rho_f = F::from_f64_lossy(rho);
    let mut u_mean = vec![F::zero(); dim];
    let mut scaling = Mat::zeros(dim, dim);
    let mut u_rows = Mat::zeros(n, dim);
    let mut clamp_events = 0usize;
    let mut sum_sq = 0.0f64;
    let mut sum_pair = 0.0f64;
    let mut n_obs = 0usize;
    let mut n_pairs = 0usize;
    for i in 0..n {
        let person = data.person(i);
        // rows over available decision points
        let mut g_rows: Vec<Vec<F>> = Vec::new(); // A^{-1/2} D rows
        let mut e: Vec<F> = Vec::new(); // Pearson residuals
        for t in 0..person.t_len() {
            if person.availability[t] == 0 {
                continue;
            }
            let mut x = Vec::with_capacity(dim);
            x.extend(spec.control_cols.iter().map(|&c| data.control_row(i, t)[c]));
            let a = F::from_f64_lossy(f64::from(person.treatment[t]));
            x.extend(
                spec.moderator_cols
                    .iter()
                    .map(|&c| a * data.moderator_row(i, t)[c]),
            );
            let eta: F = x.iter().zip(theta).map(|(&xv, &th)| xv * th).sum();
            let mut mu = eta.exp();
            if mu.as_f64() >= MU_CEILING || mu.as_f64().is_nan() {
                mu = F::from_f64_lossy(MU_CEILING);
                clamp_events += 1;
            }
            if mu.as_f64() < MU_FLOOR {
                mu = F::from_f64_lossy(MU_FLOOR);
                clamp_events += 1;
            }
            let y = F::from_f64_lossy(f64::from(outcomes.y(i, t)));
            let v = mu * (F::one() - mu);
            let sv = v.sqrt();
            e.push((y - mu) / sv);
            g_rows.push(x.iter().map(|&xv| mu * xv / sv).collect());
        }
        let m = e.len();
        if m == 0 {
            continue;
        }
        n_obs += m;
        n_pairs += m * (m - 1) / 2;
        let s1: f64 = e.iter().map(|&x| x.as_f64()).sum();
        let q1: f64 = e.iter().map(|&x| x.as_f64() * x.as_f64()).sum();
        sum_sq += q1;
        sum_pair += (s1 * s1 - q1) / 2.0;

        // R^-1 u = [u - rho/(1+(m-1)rho) * 1 * sum(u)] / (1-rho)
        let m_f = F::from_f64_lossy(m as f64);
        let denom = F::one() + (m_f - F::one()) * rho_f;
        let shrink = rho_f / denom;
        let one_minus = F::one() - rho_f;
        let apply_rinv_scalar = |u: &[F]| -> Vec<F> {
            let total: F = u.iter().copied().sum();
            u.iter()
                .map(|&uv| (uv - shrink * total) / one_minus)
                .collect()
        };
        let rinv_e = if rho == 0.0 {
            e.clone()
        } else {
            apply_rinv_scalar(&e)
        };
        // U_i = G' R^-1 e ; scaling_i = G' R^-1 G
        let mut u_i = vec![F::zero(); dim];
        for (r, grow) in g_rows.iter().enumerate() {
            for (c, &gv) in grow.iter().enumerate() {
                u_i[c] = u_i[c] + gv * rinv_e[r];
            }
        }
        let mut col_sums = vec![F::zero(); dim];
        for grow in &g_rows {
            for (c, &gv) in grow.iter().enumerate() {
                col_sums[c] = col_sums[c] + gv;
            }
        }
        for grow in &g_rows {
            // row of R^-1 G is (g_row - shrink * col_sums) / (1 - rho)
            let rinv_row: Vec<F> = if rho == 0.0 {
                grow.clone()
            } else {
                grow.iter()
                    .zip(&col_sums)
                    .map(|(&gv, &cs)| (gv - shrink * cs) / one_minus)
                    .collect()
            };
            scaling.add_outer(F::one(), grow, &rinv_row);
        }
        for (c, &uv) in u_i.iter().enumerate() {
            u_rows[(i, c)] = uv;
        }
        for (c, &uv) in u_i.iter().enumerate() {
            u_mean[c] = u_mean[c] + uv;
        }
    }
    let n_f = F::from_f64_lossy(n as f64);
    for u in &mut u_mean {
        *u = *u / n_f;
    }
    let scaling = scaling.scale(F::one() / n_f);
    Ok(GeeEvaluation {
        u_mean,
        scaling,
        u_rows,
        clamp_events,
        sum_sq,
        sum_pair,
        n_obs,
        n_pairs,
    })
}

/// Averaged GEE estimating function at `(theta, rho)`; exposed so the root
/// property can be re-checked independently of the solver.
pub fn gee_estimating_function<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    spec: &GeeSpec<F>,
    alpha: &[F],
    beta: &[F],
    rho: f64,
) -> Result<Vec<F>> {
    spec.validate(data)?;
    let theta: Vec<F> = alpha.iter().chain(beta.iter()).copied().collect();
    Ok(evaluate_gee(data, outcomes, spec, &theta, rho)?.u_mean)
}

/// GEE fit output: the shared [`FitResult`] plus the working correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct GeeFit<F> {
    pub fit: FitResult<F>,
    /// Estimated exchangeable correlation (0 under independence).
    pub rho: f64,
}

/// Fit a log-link GEE with default inference settings.
pub fn fit_gee<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    spec: &GeeSpec<F>,
) -> Result<GeeFit<F>> {
    fit_gee_with_inference(data, outcomes, spec, &InferenceConfig::default())
}

/// Fit a log-link GEE. Sandwich standard errors are used throughout (the
/// model-based alternative is anti-conservative under the misspecification
/// these comparators are exposed to).
pub fn fit_gee_with_inference<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    spec: &GeeSpec<F>,
    inf: &InferenceConfig<F>,
) -> Result<GeeFit<F>> {
    spec.validate(data)?;
    let q = spec.control_cols.len();
    let p = spec.moderator_cols.len();
    let dim = p + q;
    inf.validate(data.n(), dim)?;

    // initialize the control intercept at log(mean Y)
    let mut y_sum = 0.0f64;
    let mut y_count = 0.0f64;
    for i in 0..data.n() {
        let person = data.person(i);
        for t in 0..person.t_len() {
            if person.availability[t] == 1 {
                y_sum += f64::from(outcomes.y(i, t));
                y_count += 1.0;
            }
        }
    }
    if y_count == 0.0 {
        return Err(Error::validation("no available decision points"));
    }
    let y_bar = (y_sum / y_count).clamp(1e-6, 1.0 - 1e-6);
    let mut theta = vec![F::zero(); dim];
    theta[0] = F::from_f64_lossy(y_bar.ln());

    let mut rho = 0.0f64;
    let mut eval = evaluate_gee(data, outcomes, spec, &theta, rho)?;
    let mut residual = sup_norm(&eval.u_mean);
    let mut clamp_events = eval.clamp_events;
    let mut iterations = 0usize;
    while residual > spec.solver.tol && iterations < spec.solver.max_iter {
        iterations += 1;
        // moment update of the exchangeable correlation at the current mean
        if spec.correlation == WorkingCorrelation::Exchangeable {
            rho = moment_rho(&eval, dim);
            eval = evaluate_gee(data, outcomes, spec, &theta, rho)?;
            residual = sup_norm(&eval.u_mean);
            if residual <= spec.solver.tol {
                break;
            }
        }
        // Fisher scoring step with halving on non-decrease
        let direction = eval.scaling.solve(&eval.u_mean)?;
        let mut step = spec.solver.step_damping;
        let mut accepted = None;
        for _ in 0..=30 {
            let candidate: Vec<F> = theta
                .iter()
                .zip(&direction)
                .map(|(&th, &d)| th + step * d)
                .collect();
            let cand_eval = evaluate_gee(data, outcomes, spec, &candidate, rho)?;
            let cand_norm = sup_norm(&cand_eval.u_mean);
            if cand_norm < residual {
                accepted = Some((candidate, cand_eval, cand_norm));
                break;
            }
            step = step / F::from_f64_lossy(2.0);
        }
        match accepted {
            Some((cand, cand_eval, cand_norm)) => {
                theta = cand;
                clamp_events += cand_eval.clamp_events;
                eval = cand_eval;
                residual = cand_norm;
            }
            None => {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: residual.as_f64(),
                    last_iterate: theta.iter().map(|x| x.as_f64()).collect(),
                });
            }
        }
    }
    if residual > spec.solver.tol {
        return Err(Error::NonConvergence {
            iterations,
            residual: residual.as_f64(),
            last_iterate: theta.iter().map(|x| x.as_f64()).collect(),
        });
    }
    if eval.clamp_events > 0 {
        return Err(Error::Numeric(
            "fitted means remain outside (0,1) at the GEE root".into(),
        ));
    }

    // sandwich inference; the mean Jacobian is -(1/n) sum D'V^-1 D
    let bread = eval.scaling.scale(-F::one());
    let ill_conditioned = match bread.condition_inf() {
        Ok(c) => c.as_f64() > CONDITION_WARN,
        Err(_) => true,
    };
    let vcov_unadj = sandwich_vcov(&eval.u_rows, &bread)?;
    let mut fallbacks = 0usize;
    let vcov_adj = if inf.residual_correction {
        let (b, d, res) = gee_residual_decomposition(data, outcomes, spec, &theta, rho);
        let corrected = apply_small_sample_correction(&b, &d, &res, &bread)?;
        fallbacks = corrected.fallbacks;
        Some(corrected.vcov)
    } else {
        None
    };
    let df = if inf.t_critical {
        Some(inf.df(data.n(), dim)?)
    } else {
        None
    };
    let vcov = vcov_adj.clone().unwrap_or_else(|| vcov_unadj.clone());
    let crit = crate::dist::critical_value(inf.eta, df.map(|d| F::from_f64_lossy(d as f64)));
    let crit_unadj = crate::dist::critical_value(inf.eta, None);
    let alpha = theta[..q].to_vec();
    let beta = theta[q..].to_vec();
    let mut se_beta = Vec::with_capacity(p);
    let mut ci_beta = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    let mut se_un = Vec::with_capacity(p);
    let mut ci_un = Vec::with_capacity(p);
    let mut p_un = Vec::with_capacity(p);
    for j in 0..p {
        let est = beta[j];
        let se = vcov[(q + j, q + j)].max(F::zero()).sqrt();
        let se0 = vcov_unadj[(q + j, q + j)].max(F::zero()).sqrt();
        se_beta.push(se);
        ci_beta.push((est - crit * se, est + crit * se));
        p_values.push(two_sided(est, se, df));
        se_un.push(se0);
        ci_un.push((est - crit_unadj * se0, est + crit_unadj * se0));
        p_un.push(two_sided(est, se0, None));
    }
    let diagnostics = FitDiagnostics {
        iterations,
        final_residual_norm: residual.as_f64(),
        converged: true,
        df_used: df,
        clamp_events,
        leverage_fallbacks: fallbacks,
        ill_conditioned_bread: ill_conditioned,
    };
    Ok(GeeFit {
        fit: FitResult {
            alpha,
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
        },
        rho,
    })
}

fn two_sided<F: Real>(est: F, se: F, df: Option<usize>) -> F {
    if se == F::zero() {
        return if est == F::zero() {
            F::one()
        } else {
            F::from_f64_lossy(crate::inference::P_VALUE_FLOOR)
        };
    }
    let stat = (est / se).as_f64();
    let p = match df {
        Some(d) => crate::dist::t_p_two_sided(stat, d as f64),
        None => crate::dist::normal_p_two_sided(stat),
    };
    F::from_f64_lossy(p.max(crate::inference::P_VALUE_FLOOR))
}

/// Moment estimate of the exchangeable correlation from Pearson residuals,
/// with the dispersion estimated by the Pearson chi-square.
fn moment_rho<F: Real>(eval: &GeeEvaluation<F>, dim: usize) -> f64 {
    if eval.n_pairs <= dim {
        return 0.0;
    }
    let phi = eval.sum_sq / (eval.n_obs.saturating_sub(dim)) as f64;
    if phi <= 0.0 {
        return 0.0;
    }
    let rho = eval.sum_pair / phi / (eval.n_pairs - dim) as f64;
    rho.clamp(-0.95, 0.95)
}

type Decomposition<F> = (Vec<Mat<F>>, Vec<Mat<F>>, Vec<Vec<F>>);

/// `B_i = V_i^-1 D_i`, `D_i`, and raw residuals for the leverage
/// correction; reduces to the classical hat-matrix correction.
fn gee_residual_decomposition<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    spec: &GeeSpec<F>,
    theta: &[F],
    rho: f64,
) -> Decomposition<F> {
    let q = spec.control_cols.len();
    let dim = theta.len();
    let rho_f = F::from_f64_lossy(rho);
    let mut b_all = Vec::with_capacity(data.n());
    let mut d_all = Vec::with_capacity(data.n());
    let mut res_all = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let person = data.person(i);
        let mut d_rows: Vec<Vec<F>> = Vec::new();
        let mut v_diag: Vec<F> = Vec::new();
        let mut res: Vec<F> = Vec::new();
        for t in 0..person.t_len() {
            if person.availability[t] == 0 {
                continue;
            }
            let mut x = Vec::with_capacity(dim);
            x.extend(spec.control_cols.iter().map(|&c| data.control_row(i, t)[c]));
            let a = F::from_f64_lossy(f64::from(person.treatment[t]));
            x.extend(
                spec.moderator_cols
                    .iter()
                    .map(|&c| a * data.moderator_row(i, t)[c]),
            );
            let eta: F = x.iter().zip(theta).map(|(&xv, &th)| xv * th).sum();
            let mu = eta
                .exp()
                .min(F::from_f64_lossy(MU_CEILING))
                .max(F::from_f64_lossy(MU_FLOOR));
            let y = F::from_f64_lossy(f64::from(outcomes.y(i, t)));
            d_rows.push(x.iter().map(|&xv| mu * xv).collect());
            v_diag.push(mu * (F::one() - mu));
            res.push(y - mu);
        }
        let m = d_rows.len();
        let m_f = F::from_f64_lossy(m as f64);
        let denom = F::one() + (m_f - F::one()) * rho_f;
        let shrink = rho_f / denom;
        let one_minus = F::one() - rho_f;
        // B = A^{-1/2} R^-1 A^{-1/2} D
        let scaled: Vec<Vec<F>> = d_rows
            .iter()
            .zip(&v_diag)
            .map(|(row, &v)| row.iter().map(|&x| x / v.sqrt()).collect())
            .collect();
        let mut col_sums = vec![F::zero(); dim];
        for row in &scaled {
            for (c, &x) in row.iter().enumerate() {
                col_sums[c] = col_sums[c] + x;
            }
        }
        let mut b = Mat::zeros(m, dim);
        let mut d = Mat::zeros(m, dim);
        for (r, row) in scaled.iter().enumerate() {
            let v_sqrt = v_diag[r].sqrt();
            for c in 0..dim {
                let rinv = if rho == 0.0 {
                    row[c]
                } else {
                    (row[c] - shrink * col_sums[c]) / one_minus
                };
                b[(r, c)] = rinv / v_sqrt;
                d[(r, c)] = d_rows[r][c];
            }
        }
        b_all.push(b);
        d_all.push(d);
        res_all.push(res);
    }
    let _ = q;
    (b_all, d_all, res_all)
}

fn sup_norm<F: Real>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |m, &x| m.max(x.abs()))
}
