//! The weighted-and-centered estimating equation for excursion effects on
//! the log relative risk scale, and its damped-Newton solver.
//!
//! The estimating function for one individual is
//!
//! ```text
//! U_i(a, b) = sum_t I_t exp(-A_t S_t'b) { Y_t - exp(g_t'a + A_t S_t'b) }
//!             M_t W_t [ g_t ; (A_t - ptilde_t) S_t ]
//! ```
//!
//! where `W_t` is the window weight selected by the estimator kind:
//! per-decision (pd-EMEE), full product (EMEE), or a product truncated at
//! the reference-regime horizon `k`. The solver finds the root of the
//! averaged stacked equation in `(a, b)` jointly.

use serde::{Deserialize, Serialize};

use crate::data::MrtDataset;
use crate::error::{Error, Result};
use crate::inference::{self, CoefficientTable, InferenceConfig};
use crate::linalg::Mat;
use crate::outcomes::ProximalOutcomes;
use crate::scalar::Real;
use crate::weights::{compute_weights, NumeratorPolicy, WeightRule, WeightSet};

/// Which estimator to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Per-decision weighted estimator (pd-EMEE).
    PdEmee,
    /// Full-window-product estimator (EMEE).
    Emee,
    /// Per-decision estimator for the reference regime that pins `k`
    /// post-decision points to no treatment, then reverts to the policy.
    RefRegimeK(usize),
    /// Full-product counterpart of [`EstimatorKind::RefRegimeK`]; the
    /// comparator for the reference-regime efficiency sweeps.
    RefRegimeKEmee(usize),
}

impl EstimatorKind {
    pub fn weight_rule(self) -> WeightRule {
        match self {
            EstimatorKind::PdEmee => WeightRule::PerDecision,
            EstimatorKind::Emee => WeightRule::Full,
            EstimatorKind::RefRegimeK(k) => WeightRule::PerDecisionK(k),
            EstimatorKind::RefRegimeKEmee(k) => WeightRule::FullK(k),
        }
    }

    pub fn truncation(self) -> Option<usize> {
        match self {
            EstimatorKind::RefRegimeK(k) | EstimatorKind::RefRegimeKEmee(k) => Some(k),
            _ => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            EstimatorKind::PdEmee => "pd-EMEE".into(),
            EstimatorKind::Emee => "EMEE".into(),
            EstimatorKind::RefRegimeK(k) => format!("pd-EMEE(K={k})"),
            EstimatorKind::RefRegimeKEmee(k) => format!("EMEE(K={k})"),
        }
    }
}

/// Newton solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<F> {
    /// Convergence tolerance on the sup-norm of the estimating equation.
    pub tol: F,
    pub max_iter: usize,
    /// Initial step fraction; the step is halved while the residual norm
    /// fails to decrease.
    pub step_damping: F,
    pub jacobian: JacobianMode<F>,
    /// Starting point for the stacked `(alpha, beta)` iterate; zeros when
    /// absent. Used by restart-from-perturbed-init smoke tests.
    pub init: Option<Vec<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianMode<F> {
    Analytic,
    /// Central finite differences with the given step.
    FiniteDifference(F),
}

impl<F: Real> Default for SolverConfig<F> {
    fn default() -> Self {
        SolverConfig {
            tol: F::from_f64_lossy(1e-10),
            max_iter: 100,
            step_damping: F::one(),
            jacobian: JacobianMode::Analytic,
            init: None,
        }
    }
}

impl<F: Real> SolverConfig<F> {
    fn validate(&self) -> Result<()> {
        if self.tol.partial_cmp(&F::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::config("solver tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("solver max_iter must be at least 1"));
        }
        if !(self.step_damping > F::zero() && self.step_damping <= F::one()) {
            return Err(Error::config("step_damping must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Full specification of one estimator fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec<F> {
    pub kind: EstimatorKind,
    /// Columns of the dataset moderator tensor forming `S_t`; must be
    /// nonempty and contain column 0 (the intercept).
    pub moderator_cols: Vec<usize>,
    /// Columns of the dataset control tensor forming `g(H_t)`.
    pub control_cols: Vec<usize>,
    pub numerator: NumeratorPolicy<F>,
    pub solver: SolverConfig<F>,
}

impl<F: Real> EstimatorSpec<F> {
    /// Marginal-effect spec (`S_t = 1`) with the given controls.
    pub fn marginal(
        kind: EstimatorKind,
        control_cols: Vec<usize>,
        numerator: NumeratorPolicy<F>,
    ) -> Self {
        EstimatorSpec {
            kind,
            moderator_cols: vec![0],
            control_cols,
            numerator,
            solver: SolverConfig::default(),
        }
    }

    pub fn with_moderators(mut self, cols: Vec<usize>) -> Self {
        self.moderator_cols = cols;
        self
    }

    fn validate(&self, data: &MrtDataset<F>) -> Result<()> {
        self.solver.validate()?;
        if self.moderator_cols.is_empty() || !self.moderator_cols.contains(&0) {
            return Err(Error::config(
                "moderator columns must be nonempty and include the intercept column 0",
            ));
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
        if self.control_cols.is_empty() {
            return Err(Error::config("at least one control column is required"));
        }
        if let Some(k) = self.kind.truncation() {
            if k > data.delta() - 1 {
                return Err(Error::config(format!(
                    "reference-regime k = {k} must lie in 0..={}",
                    data.delta() - 1
                )));
            }
        }
        Ok(())
    }
}

/// Solver and numeric diagnostics for a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
    /// Degrees of freedom used by the t reference (`n - p - q`), when the
    /// small-sample critical value is enabled.
    pub df_used: Option<usize>,
    /// Linear predictors clamped during evaluation (overflow guard).
    pub clamp_events: usize,
    /// Individuals whose leverage correction fell back to the uncorrected
    /// residual because `I - H_ii` was singular.
    pub leverage_fallbacks: usize,
    /// Condition number of the bread matrix exceeded the warning level.
    pub ill_conditioned_bread: bool,
}

/// Point estimates, sandwich covariance, and per-coefficient inference.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<F> {
    pub alpha: Vec<F>,
    pub beta: Vec<F>,
    /// Covariance of the stacked `(alpha, beta)` estimate, after the
    /// configured small-sample correction.
    pub vcov: Mat<F>,
    /// Covariance without the residual correction.
    pub vcov_unadjusted: Mat<F>,
    pub se_beta: Vec<F>,
    pub ci_beta: Vec<(F, F)>,
    pub p_values: Vec<F>,
    /// Companion inference with no small-sample correction (normal
    /// reference), kept for coverage comparisons.
    pub se_beta_unadjusted: Vec<F>,
    pub ci_beta_unadjusted: Vec<(F, F)>,
    pub p_values_unadjusted: Vec<F>,
    pub diagnostics: FitDiagnostics,
}

impl<F: Real> FitResult<F> {
    pub fn n_controls(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_moderators(&self) -> usize {
        self.beta.len()
    }

    /// Stacked `(alpha, beta)` estimate.
    pub fn theta(&self) -> Vec<F> {
        let mut v = self.alpha.clone();
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn summarize(&self, config: &InferenceConfig<F>) -> CoefficientTable<F> {
        inference::summarize(self, config)
    }
}

/// Per-observation design view resolved from a spec: the selected
/// moderator/control rows, weights, outcomes.
pub(crate) struct DesignView<'a, F> {
    pub data: &'a MrtDataset<F>,
    pub outcomes: &'a ProximalOutcomes,
    pub weights: &'a WeightSet<F>,
    pub rule: WeightRule,
    pub moderator_cols: &'a [usize],
    pub control_cols: &'a [usize],
}

impl<F: Real> DesignView<'_, F> {
    pub fn q(&self) -> usize {
        self.control_cols.len()
    }

    pub fn p(&self) -> usize {
        self.moderator_cols.len()
    }

    pub fn dim(&self) -> usize {
        self.p() + self.q()
    }

    fn gather(&self, row: &[F], cols: &[usize], out: &mut Vec<F>) {
        out.clear();
        out.extend(cols.iter().map(|&c| row[c]));
    }
}

const LINPRED_BOUND: f64 = 30.0;

/// One evaluation of the averaged estimating function, its analytic
/// Jacobian, and the per-individual contributions.
pub(crate) struct Evaluation<F> {
    /// `(1/n) sum_i U_i`.
    pub u_mean: Vec<F>,
    /// Analytic Jacobian of `u_mean` in the stacked `(alpha, beta)`.
    pub jacobian: Mat<F>,
    /// Per-individual `U_i` (not averaged), one row each.
    pub u_rows: Mat<F>,
    pub clamp_events: usize,
}

/// Evaluate `U`, the Jacobian, and per-individual pieces at `(alpha, beta)`.
pub(crate) fn evaluate<F: Real>(
    view: &DesignView<'_, F>,
    alpha: &[F],
    beta: &[F],
    want_jacobian: bool,
) -> Result<Evaluation<F>> {
    let n = view.data.n();
    let q = view.q();
    let p = view.p();
    let dim = p + q;
    let bound = F::from_f64_lossy(LINPRED_BOUND);
    let mut u_mean = vec![F::zero(); dim];
    let mut jac = Mat::zeros(dim, dim);
    let mut u_rows = Mat::zeros(n, dim);
    let mut clamp_events = 0usize;
    let mut g_row: Vec<F> = Vec::with_capacity(q);
    let mut s_row: Vec<F> = Vec::with_capacity(p);
    let mut x_row: Vec<F> = vec![F::zero(); dim];
    for i in 0..n {
        let person = view.data.person(i);
        for t in 0..person.t_len() {
            if person.availability[t] == 0 {
                continue;
            }
            let w = view.weights.window(view.rule, i, t) * view.weights.m(i, t);
            if w == F::zero() {
                continue;
            }
            view.gather(view.data.control_row(i, t), view.control_cols, &mut g_row);
            view.gather(
                view.data.moderator_row(i, t),
                view.moderator_cols,
                &mut s_row,
            );
            let a = person.treatment[t];
            let a_f = F::from_f64_lossy(f64::from(a));
            let y = F::from_f64_lossy(f64::from(view.outcomes.y(i, t)));
            let mut eta_g: F = g_row.iter().zip(alpha).map(|(&g, &al)| g * al).sum();
            let mut eta_s: F = if a == 1 {
                s_row.iter().zip(beta).map(|(&s, &b)| s * b).sum()
            } else {
                F::zero()
            };
            if eta_g.abs() > bound {
                eta_g = eta_g.signum() * bound;
                clamp_events += 1;
            }
            if eta_s.abs() > bound {
                eta_s = eta_s.signum() * bound;
                clamp_events += 1;
            }
            // blip-down factor and residual; c * eps = c*y - exp(eta_g)
            let c = (-eta_s).exp();
            let exp_g = eta_g.exp();
            let c_eps = c * y - exp_g;
            let p_tilde = view.weights.p_tilde(i, t);
            let centered = a_f - p_tilde;
            for (k, &g) in g_row.iter().enumerate() {
                x_row[k] = g;
            }
            for (k, &s) in s_row.iter().enumerate() {
                x_row[q + k] = s * centered;
            }
            let scale = w * c_eps;
            if !scale.is_finite() {
                return Err(Error::NonFinite {
                    individual: i,
                    t,
                    context: "evaluating the estimating function".into(),
                });
            }
            for (uk, &xk) in u_mean.iter_mut().zip(&x_row) {
                *uk = *uk + scale * xk;
            }
            for (k, &xk) in x_row.iter().enumerate() {
                u_rows[(i, k)] = u_rows[(i, k)] + scale * xk;
            }
            if want_jacobian {
                // d(c*eps)/d alpha = -exp(eta_g) g'; d(c*eps)/d beta = -c A y S'
                let da = -(w * exp_g);
                for (r, &xr) in x_row.iter().enumerate() {
                    let lead = da * xr;
                    if lead != F::zero() {
                        for (kk, &g) in g_row.iter().enumerate() {
                            jac[(r, kk)] = jac[(r, kk)] + lead * g;
                        }
                    }
                }
                if a == 1 && y != F::zero() {
                    let db = -(w * c * y);
                    for (r, &xr) in x_row.iter().enumerate() {
                        let lead = db * xr;
                        if lead != F::zero() {
                            for (kk, &s) in s_row.iter().enumerate() {
                                jac[(r, q + kk)] = jac[(r, q + kk)] + lead * s;
                            }
                        }
                    }
                }
            }
        }
    }
    let n_f = F::from_f64_lossy(n as f64);
    for u in &mut u_mean {
        *u = *u / n_f;
    }
    let jacobian = jac.scale(F::one() / n_f);
    Ok(Evaluation {
        u_mean,
        jacobian,
        u_rows,
        clamp_events,
    })
}

/// Averaged estimating function at `(alpha, beta)`.
pub fn estimating_function<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    weights: &WeightSet<F>,
    spec: &EstimatorSpec<F>,
    alpha: &[F],
    beta: &[F],
) -> Result<Vec<F>> {
    spec.validate(data)?;
    check_dims(spec, alpha, beta)?;
    let view = make_view(data, outcomes, weights, spec);
    Ok(evaluate(&view, alpha, beta, false)?.u_mean)
}

/// Jacobian of the averaged estimating function, analytic or by central
/// finite differences depending on the solver configuration.
pub fn jacobian<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    weights: &WeightSet<F>,
    spec: &EstimatorSpec<F>,
    alpha: &[F],
    beta: &[F],
) -> Result<Mat<F>> {
    spec.validate(data)?;
    check_dims(spec, alpha, beta)?;
    let view = make_view(data, outcomes, weights, spec);
    match spec.solver.jacobian {
        JacobianMode::Analytic => Ok(evaluate(&view, alpha, beta, true)?.jacobian),
        JacobianMode::FiniteDifference(h) => finite_difference_jacobian(&view, alpha, beta, h),
    }
}

fn finite_difference_jacobian<F: Real>(
    view: &DesignView<'_, F>,
    alpha: &[F],
    beta: &[F],
    h: F,
) -> Result<Mat<F>> {
    let q = alpha.len();
    let dim = q + beta.len();
    let mut theta: Vec<F> = alpha.iter().chain(beta.iter()).copied().collect();
    let mut jac = Mat::zeros(dim, dim);
    for j in 0..dim {
        let orig = theta[j];
        theta[j] = orig + h;
        let up = evaluate(view, &theta[..q], &theta[q..], false)?.u_mean;
        theta[j] = orig - h;
        let down = evaluate(view, &theta[..q], &theta[q..], false)?.u_mean;
        theta[j] = orig;
        let two_h = h + h;
        for r in 0..dim {
            jac[(r, j)] = (up[r] - down[r]) / two_h;
        }
    }
    Ok(jac)
}

fn check_dims<F: Real>(spec: &EstimatorSpec<F>, alpha: &[F], beta: &[F]) -> Result<()> {
    if alpha.len() != spec.control_cols.len() || beta.len() != spec.moderator_cols.len() {
        return Err(Error::structure(
            "alpha/beta dimensions do not match the spec's column selections",
        ));
    }
    Ok(())
}

const MAX_HALVINGS: usize = 30;

/// Solve the estimating equation and attach sandwich inference with the
/// default configuration (residual correction and t critical values on).
pub fn fit<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    spec: &EstimatorSpec<F>,
) -> Result<FitResult<F>> {
    fit_with_inference(data, outcomes, spec, &InferenceConfig::default())
}

/// Solve the estimating equation and attach sandwich inference.
pub fn fit_with_inference<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    spec: &EstimatorSpec<F>,
    inf: &InferenceConfig<F>,
) -> Result<FitResult<F>> {
    spec.validate(data)?;
    check_both_arms(data)?;
    let k = spec.kind.truncation().unwrap_or(data.delta() - 1);
    let weights = compute_weights(data, outcomes, &spec.numerator, k)?;
    let view = make_view(data, outcomes, &weights, spec);
    let solved = solve(&view, &spec.solver)?;
    inference::attach(&view, solved, inf)
}

/// Point estimates only (no sandwich); used by the efficiency sweeps where
/// only the spread of the estimates matters.
pub fn fit_point_estimates<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    spec: &EstimatorSpec<F>,
) -> Result<(Vec<F>, Vec<F>)> {
    spec.validate(data)?;
    check_both_arms(data)?;
    let k = spec.kind.truncation().unwrap_or(data.delta() - 1);
    let weights = compute_weights(data, outcomes, &spec.numerator, k)?;
    let view = make_view(data, outcomes, &weights, spec);
    let solved = solve(&view, &spec.solver)?;
    Ok((solved.alpha, solved.beta))
}

fn check_both_arms<F: Real>(data: &MrtDataset<F>) -> Result<()> {
    let mut treated = false;
    let mut untreated = false;
    for person in data.persons() {
        for t in 0..person.t_len() {
            if person.availability[t] == 1 {
                if person.treatment[t] == 1 {
                    treated = true;
                } else {
                    untreated = true;
                }
            }
        }
        if treated && untreated {
            return Ok(());
        }
    }
    Err(Error::validation(
        "fitting needs at least one available decision point in each treatment arm",
    ))
}

/// Root of the estimating equation plus solver state, before inference.
pub(crate) struct Solved<F> {
    pub alpha: Vec<F>,
    pub beta: Vec<F>,
    pub evaluation: Evaluation<F>,
    pub diagnostics: FitDiagnostics,
}

pub(crate) fn solve<F: Real>(
    view: &DesignView<'_, F>,
    solver: &SolverConfig<F>,
) -> Result<Solved<F>> {
    let q = view.q();
    let dim = view.dim();
    let mut theta = match &solver.init {
        Some(init) => {
            if init.len() != dim {
                return Err(Error::config(format!(
                    "solver init has {} entries, expected {dim}",
                    init.len()
                )));
            }
            init.clone()
        }
        None => vec![F::zero(); dim],
    };
    let mut clamp_events = 0usize;
    let mut eval = evaluate(view, &theta[..q], &theta[q..], true)?;
    clamp_events += eval.clamp_events;
    let mut residual = sup_norm(&eval.u_mean);
    let mut iterations = 0usize;
    while residual > solver.tol && iterations < solver.max_iter {
        iterations += 1;
        let jac = match solver.jacobian {
            JacobianMode::Analytic => eval.jacobian.clone(),
            JacobianMode::FiniteDifference(h) => {
                finite_difference_jacobian(view, &theta[..q], &theta[q..], h)?
            }
        };
        let neg_u: Vec<F> = eval.u_mean.iter().map(|&u| -u).collect();
        let direction = jac.solve(&neg_u)?;
        let mut step = solver.step_damping;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<F> = theta
                .iter()
                .zip(&direction)
                .map(|(&th, &d)| th + step * d)
                .collect();
            let cand_eval = evaluate(view, &candidate[..q], &candidate[q..], true)?;
            let cand_norm = sup_norm(&cand_eval.u_mean);
            if cand_norm < residual {
                accepted = Some((candidate, cand_eval, cand_norm));
                break;
            }
            step = step / F::from_f64_lossy(2.0);
        }
        match accepted {
            Some((candidate, cand_eval, cand_norm)) => {
                theta = candidate;
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
    if residual > solver.tol {
        return Err(Error::NonConvergence {
            iterations,
            residual: residual.as_f64(),
            last_iterate: theta.iter().map(|x| x.as_f64()).collect(),
        });
    }
    let diagnostics = FitDiagnostics {
        iterations,
        final_residual_norm: residual.as_f64(),
        converged: true,
        df_used: None,
        clamp_events,
        leverage_fallbacks: 0,
        ill_conditioned_bread: false,
    };
    Ok(Solved {
        alpha: theta[..q].to_vec(),
        beta: theta[q..].to_vec(),
        evaluation: eval,
        diagnostics,
    })
}

pub(crate) fn sup_norm<F: Real>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |m, &x| m.max(x.abs()))
}

/// Multiplier rows `B_i` and model-derivative rows `D_i` for the
/// small-sample leverage correction: `U_i = B_i' eps_i`, and `D_i` stacks
/// the derivative of the fitted mean with respect to `(alpha, beta)`.
pub(crate) struct ResidualDecomposition<F> {
    /// Per individual: one row per available, positively weighted point.
    pub b: Vec<Mat<F>>,
    pub d: Vec<Mat<F>>,
    pub residuals: Vec<Vec<F>>,
}

pub(crate) fn residual_decomposition<F: Real>(
    view: &DesignView<'_, F>,
    alpha: &[F],
    beta: &[F],
) -> ResidualDecomposition<F> {
    let n = view.data.n();
    let q = view.q();
    let p = view.p();
    let dim = p + q;
    let bound = F::from_f64_lossy(LINPRED_BOUND);
    let mut b_all = Vec::with_capacity(n);
    let mut d_all = Vec::with_capacity(n);
    let mut res_all = Vec::with_capacity(n);
    let mut g_row: Vec<F> = Vec::with_capacity(q);
    let mut s_row: Vec<F> = Vec::with_capacity(p);
    for i in 0..n {
        let person = view.data.person(i);
        let mut rows: Vec<(Vec<F>, Vec<F>, F)> = Vec::new();
        for t in 0..person.t_len() {
            if person.availability[t] == 0 {
                continue;
            }
            let w = view.weights.window(view.rule, i, t) * view.weights.m(i, t);
            if w == F::zero() {
                continue;
            }
            view.gather(view.data.control_row(i, t), view.control_cols, &mut g_row);
            view.gather(
                view.data.moderator_row(i, t),
                view.moderator_cols,
                &mut s_row,
            );
            let a = person.treatment[t];
            let a_f = F::from_f64_lossy(f64::from(a));
            let y = F::from_f64_lossy(f64::from(view.outcomes.y(i, t)));
            let eta_g: F = g_row.iter().zip(alpha).map(|(&g, &al)| g * al).sum();
            let eta_s: F = if a == 1 {
                s_row.iter().zip(beta).map(|(&s, &b)| s * b).sum()
            } else {
                F::zero()
            };
            let eta_g = eta_g.max(-bound).min(bound);
            let eta_s = eta_s.max(-bound).min(bound);
            let c = (-eta_s).exp();
            let mu = (eta_g + eta_s).exp();
            let eps = y - mu;
            let centered = a_f - view.weights.p_tilde(i, t);
            let lead = w * c;
            let mut b_row = Vec::with_capacity(dim);
            b_row.extend(g_row.iter().map(|&g| lead * g));
            b_row.extend(s_row.iter().map(|&s| lead * centered * s));
            let mut d_row = Vec::with_capacity(dim);
            d_row.extend(g_row.iter().map(|&g| mu * g));
            d_row.extend(s_row.iter().map(|&s| mu * a_f * s));
            rows.push((b_row, d_row, eps));
        }
        let t_used = rows.len();
        let mut b = Mat::zeros(t_used, dim);
        let mut d = Mat::zeros(t_used, dim);
        let mut res = Vec::with_capacity(t_used);
        for (r, (b_row, d_row, eps)) in rows.into_iter().enumerate() {
            for c in 0..dim {
                b[(r, c)] = b_row[c];
                d[(r, c)] = d_row[c];
            }
            res.push(eps);
        }
        b_all.push(b);
        d_all.push(d);
        res_all.push(res);
    }
    ResidualDecomposition {
        b: b_all,
        d: d_all,
        residuals: res_all,
    }
}

pub(crate) fn make_view<'a, F: Real>(
    data: &'a MrtDataset<F>,
    outcomes: &'a ProximalOutcomes,
    weights: &'a WeightSet<F>,
    spec: &'a EstimatorSpec<F>,
) -> DesignView<'a, F> {
    DesignView {
        data,
        outcomes,
        weights,
        rule: spec.kind.weight_rule(),
        moderator_cols: &spec.moderator_cols,
        control_cols: &spec.control_cols,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::person_with_constant_prob;
    use crate::outcomes::build_for_dataset;

    fn one_point_dataset(a: u8, y: u8) -> MrtDataset<f64> {
        let person = person_with_constant_prob(vec![a], 0.5, vec![y, 0], &[], &[]);
        MrtDataset::new(vec![person], 1, 1, 1).unwrap()
    }

    fn spec(kind: EstimatorKind) -> EstimatorSpec<f64> {
        EstimatorSpec::marginal(kind, vec![0], NumeratorPolicy::Constant(0.5))
    }

    fn eval_u(
        data: &MrtDataset<f64>,
        spec: &EstimatorSpec<f64>,
        alpha: &[f64],
        beta: &[f64],
    ) -> Vec<f64> {
        let out = build_for_dataset(data).unwrap();
        let w = compute_weights(data, &out, &spec.numerator, data.delta() - 1).unwrap();
        estimating_function(data, &out, &w, spec, alpha, beta).unwrap()
    }

    #[test]
    fn zero_residual_gives_zero_estimating_function() {
        // A = 1, Y = 1, alpha = beta = 0: residual 1 - e^0 = 0
        let data = one_point_dataset(1, 1);
        let u = eval_u(&data, &spec(EstimatorKind::PdEmee), &[0.0], &[0.0]);
        assert_eq!(u, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_arithmetic_single_point() {
        // A = 1, Y = 0: eps = -1, M = W = 1, centered treatment 0.5
        let data = one_point_dataset(1, 0);
        let u = eval_u(&data, &spec(EstimatorKind::PdEmee), &[0.0], &[0.0]);
        assert!((u[0] - (-1.0)).abs() < 1e-15);
        assert!((u[1] - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn annihilated_point_contributes_nothing() {
        // window of length 2 with a treated in-window point and no prior
        // event: t = 0 gets weight 0 under both estimators
        let person = person_with_constant_prob(vec![0, 1], 0.5, vec![0, 1, 0, 0], &[], &[]);
        let data = MrtDataset::new(vec![person], 2, 1, 1).unwrap();
        let out = build_for_dataset(&data).unwrap();
        let w = compute_weights(&data, &out, &NumeratorPolicy::Constant(0.5), 1).unwrap();
        assert_eq!(w.w_pd(0, 0), 0.0);
        assert_eq!(w.w_full(0, 0), 0.0);
        let sp = spec(EstimatorKind::PdEmee);
        let u = estimating_function(&data, &out, &w, &sp, &[0.1], &[0.2]).unwrap();
        // hand evaluation for the single surviving point t = 1 (A = 1, Y = 1)
        let scale = (-0.2_f64).exp() - (0.1_f64).exp();
        assert!((u[0] - scale).abs() < 1e-14);
        assert!((u[1] - scale * 0.5).abs() < 1e-14);
    }

    #[test]
    fn analytic_jacobian_matches_hand_derivative() {
        // single point, A = 1, Y = 1, arbitrary (alpha, beta):
        // c*eps = e^{-b} - e^{a}, U = 0.5^{0/1}-scaled copies of it
        let data = one_point_dataset(1, 1);
        let sp = spec(EstimatorKind::PdEmee);
        let out = build_for_dataset(&data).unwrap();
        let w = compute_weights(&data, &out, &sp.numerator, 0).unwrap();
        let (al, be) = (0.3, -0.2);
        let jac = jacobian(&data, &out, &w, &sp, &[al], &[be]).unwrap();
        let e_a = al.exp();
        let e_mb = (-be).exp();
        assert!((jac[(0, 0)] - (-e_a)).abs() < 1e-14);
        assert!((jac[(0, 1)] - (-e_mb)).abs() < 1e-14);
        assert!((jac[(1, 0)] - (-0.5 * e_a)).abs() < 1e-14);
        assert!((jac[(1, 1)] - (-0.5 * e_mb)).abs() < 1e-14);
    }

    #[test]
    fn zero_outcomes_leave_beta_columns_empty() {
        let person = person_with_constant_prob(vec![1, 0, 1], 0.4, vec![0; 5], &[], &[]);
        let data = MrtDataset::new(vec![person], 2, 1, 1).unwrap();
        let mut sp = spec(EstimatorKind::Emee);
        sp.numerator = NumeratorPolicy::Constant(0.4);
        let out = build_for_dataset(&data).unwrap();
        let w = compute_weights(&data, &out, &sp.numerator, 1).unwrap();
        let jac = jacobian(&data, &out, &w, &sp, &[0.2], &[0.1]).unwrap();
        // with Y identically 0 the beta column of the Jacobian vanishes
        assert_eq!(jac[(0, 1)], 0.0);
        assert_eq!(jac[(1, 1)], 0.0);
    }

    #[test]
    fn fd_jacobian_mode_matches_analytic() {
        let person =
            person_with_constant_prob(vec![1, 0, 1, 0], 0.4, vec![0, 1, 0, 0, 1, 0], &[], &[]);
        let data = MrtDataset::new(vec![person], 2, 1, 1).unwrap();
        let mut sp = spec(EstimatorKind::PdEmee);
        sp.numerator = NumeratorPolicy::Constant(0.4);
        let out = build_for_dataset(&data).unwrap();
        let w = compute_weights(&data, &out, &sp.numerator, 1).unwrap();
        let analytic = jacobian(&data, &out, &w, &sp, &[0.1], &[-0.3]).unwrap();
        sp.solver.jacobian = JacobianMode::FiniteDifference(1e-6);
        let fd = jacobian(&data, &out, &w, &sp, &[0.1], &[-0.3]).unwrap();
        assert!(analytic.sub(&fd).max_abs() < 1e-8);
    }

    #[test]
    fn root_satisfies_equation_independently() {
        let persons: Vec<_> = (0..6)
            .map(|i| {
                person_with_constant_prob(
                    vec![u8::from(i % 2 == 0), 0, 1, 0],
                    0.35,
                    vec![0, u8::from(i % 3 == 0), 1, 0, 0, u8::from(i % 2 == 1)],
                    &[],
                    &[],
                )
            })
            .collect();
        let data = MrtDataset::new(persons, 2, 1, 1).unwrap();
        let mut sp = spec(EstimatorKind::PdEmee);
        sp.numerator = NumeratorPolicy::Constant(0.35);
        let out = build_for_dataset(&data).unwrap();
        let result = fit(&data, &out, &sp).unwrap();
        assert!(result.diagnostics.converged);
        // re-evaluate the estimating function at the returned root
        let w = compute_weights(&data, &out, &sp.numerator, 1).unwrap();
        let u = estimating_function(&data, &out, &w, &sp, &result.alpha, &result.beta).unwrap();
        assert!(sup_norm(&u) <= 1e-10);
    }
}
