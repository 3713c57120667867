//! Replication harness: bias/SD/RMSE/coverage tables, relative-efficiency
//! sweeps, and the closed-form asymptotic relative efficiency for the
//! simplified single-outcome setting.
//!
//! Replication `r` always draws from stream `r` of the seeded generator,
//! so reports are identical for any worker count. Relative efficiency is
//! computed as the ratio of across-replication variances of the point
//! estimates (not of averaged sandwich variances), with failed fits
//! dropped pairwise, and its Monte-Carlo standard error comes from a
//! delete-one jackknife over replications.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_point_estimates, fit_with_inference, EstimatorKind, EstimatorSpec};
use crate::gee::{fit_gee_with_inference, GeeSpec};
use crate::inference::InferenceConfig;
use crate::outcomes::build_for_dataset;
use crate::scalar::Real;
use crate::simgen::{generate_simplified_trial_stream, generate_trial_stream, GenerativeConfig};
use crate::weights::{compute_weights, NumeratorPolicy};

/// One estimator entry of a simulation study.
#[derive(Debug, Clone, PartialEq)]
pub enum AnySpec<F> {
    Excursion(EstimatorSpec<F>),
    Gee(GeeSpec<F>),
}

impl<F: Real> AnySpec<F> {
    pub fn label(&self) -> String {
        match self {
            AnySpec::Excursion(s) => s.kind.label(),
            AnySpec::Gee(s) => s.label(),
        }
    }

    fn n_betas(&self) -> usize {
        match self {
            AnySpec::Excursion(s) => s.moderator_cols.len(),
            AnySpec::Gee(s) => s.moderator_cols.len(),
        }
    }
}

/// Standard estimator specification for the generative model: controls
/// `g = (1, Z)` (deliberately misspecified) and moderators `S = 1` or
/// `S = (1, Z)`.
pub fn study_spec<F: Real>(kind: EstimatorKind, moderated: bool, p_a: F) -> EstimatorSpec<F> {
    let mut spec = EstimatorSpec::marginal(kind, vec![0, 1], NumeratorPolicy::Constant(p_a));
    if moderated {
        spec = spec.with_moderators(vec![0, 1]);
    }
    spec
}

/// Per-coefficient replication metrics. `sd`/`rmse` are population-formula
/// moments over the converged replications and are absent when fewer than
/// two replications converged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics<F> {
    pub bias: F,
    pub sd: Option<F>,
    pub rmse: Option<F>,
    /// Coverage of the uncorrected CI (normal critical value).
    pub cp_unadj: F,
    /// Coverage of the small-sample-corrected CI (t critical value).
    pub cp_adj: F,
    /// Median sandwich SE across replications, uncorrected.
    pub median_se_unadj: F,
    pub median_se_adj: F,
}

/// Metrics for one estimator across replications, plus the raw estimates
/// for downstream variance-ratio computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRecord<F> {
    pub label: String,
    pub params: Vec<ParamMetrics<F>>,
    pub n_converged: usize,
    pub n_failed: usize,
    /// Per replication: the fitted moderator coefficients, or `None` for a
    /// failed fit.
    pub raw_betas: Vec<Option<Vec<F>>>,
}

/// Full output of [`run_replications`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport<F> {
    pub estimators: Vec<EstimatorRecord<F>>,
    pub reps: usize,
    pub true_values: Vec<F>,
    /// Set when any estimator failed on more than 5% of replications.
    pub excess_failures: bool,
    pub wall_time_secs: f64,
}

impl<F: Real> SimulationReport<F> {
    pub fn estimator(&self, label: &str) -> Option<&EstimatorRecord<F>> {
        self.estimators.iter().find(|e| e.label == label)
    }

    /// Variance ratio `Var(numerator) / Var(denominator)` for one
    /// coefficient, pairwise over replications where both converged, with
    /// a jackknife standard error.
    pub fn relative_efficiency(
        &self,
        numerator_label: &str,
        denominator_label: &str,
        coef: usize,
    ) -> Option<RelativeEfficiency<F>> {
        let num = self.estimator(numerator_label)?;
        let den = self.estimator(denominator_label)?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (a, b) in num.raw_betas.iter().zip(&den.raw_betas) {
            if let (Some(a), Some(b)) = (a, b) {
                x.push(a[coef].as_f64());
                y.push(b[coef].as_f64());
            }
        }
        jackknife_variance_ratio(&x, &y).map(|(re, se)| RelativeEfficiency {
            rel_eff: F::from_f64_lossy(re),
            mc_se: F::from_f64_lossy(se),
            used_reps: x.len(),
        })
    }
}

/// A variance ratio with its jackknife Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeEfficiency<F> {
    pub rel_eff: F,
    pub mc_se: F,
    pub used_reps: usize,
}

/// Run `reps` replications of the generative model, fitting every spec on
/// every replication. `true_values` are the moderator-coefficient truths
/// shared by all specs (so all specs must use the same moderator set).
pub fn run_replications<F: Real>(
    gen: &GenerativeConfig<F>,
    specs: &[AnySpec<F>],
    reps: usize,
    true_values: &[F],
) -> Result<SimulationReport<F>> {
    if reps == 0 {
        return Err(Error::config("reps must be at least 1"));
    }
    if specs.is_empty() {
        return Err(Error::config("at least one estimator spec is required"));
    }
    for s in specs {
        if s.n_betas() != true_values.len() {
            return Err(Error::config(format!(
                "estimator {} has {} moderator coefficients but {} true values were supplied",
                s.label(),
                s.n_betas(),
                true_values.len()
            )));
        }
    }
    gen.validate()?;
    let started = Instant::now();
    let inf = InferenceConfig::<F>::default();

    struct RepFit<F> {
        beta: Vec<F>,
        se_unadj: Vec<F>,
        se_adj: Vec<F>,
        covered_unadj: Vec<bool>,
        covered_adj: Vec<bool>,
    }

    let per_rep: Vec<Vec<Option<RepFit<F>>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let data = match generate_trial_stream(gen, rep as u64) {
                Ok(d) => d,
                Err(_) => return vec![],
            };
            let outcomes = match build_for_dataset(&data) {
                Ok(o) => o,
                Err(_) => return vec![],
            };
            specs
                .iter()
                .map(|spec| {
                    let fit = match spec {
                        AnySpec::Excursion(s) => fit_with_inference(&data, &outcomes, s, &inf),
                        AnySpec::Gee(s) => {
                            fit_gee_with_inference(&data, &outcomes, s, &inf).map(|g| g.fit)
                        }
                    };
                    fit.ok().map(|f| RepFit {
                        covered_unadj: f
                            .ci_beta_unadjusted
                            .iter()
                            .zip(true_values)
                            .map(|(&(lo, hi), &tv)| lo <= tv && tv <= hi)
                            .collect(),
                        covered_adj: f
                            .ci_beta
                            .iter()
                            .zip(true_values)
                            .map(|(&(lo, hi), &tv)| lo <= tv && tv <= hi)
                            .collect(),
                        se_unadj: f.se_beta_unadjusted.clone(),
                        se_adj: f.se_beta.clone(),
                        beta: f.beta,
                    })
                })
                .collect()
        })
        .collect();

    let mut estimators = Vec::with_capacity(specs.len());
    let mut excess_failures = false;
    for (s_idx, spec) in specs.iter().enumerate() {
        let p = true_values.len();
        let fits: Vec<Option<&RepFit<F>>> = per_rep
            .iter()
            .map(|r| r.get(s_idx).and_then(Option::as_ref))
            .collect();
        let n_converged = fits.iter().flatten().count();
        let n_failed = reps - n_converged;
        if n_failed * 20 > reps {
            excess_failures = true;
        }
        let mut params = Vec::with_capacity(p);
        for (j, truth) in true_values.iter().map(|t| t.as_f64()).enumerate() {
            let estimates: Vec<f64> = fits.iter().flatten().map(|f| f.beta[j].as_f64()).collect();
            let m = estimates.len() as f64;
            let mean = estimates.iter().sum::<f64>() / m.max(1.0);
            let bias = mean - truth;
            let (sd, rmse) = if estimates.len() >= 2 {
                let var = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
                let mse = estimates.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / m;
                (Some(var.sqrt()), Some(mse.sqrt()))
            } else {
                (None, None)
            };
            let coverage = |pick: &dyn Fn(&RepFit<F>) -> bool| -> F {
                let covered = fits.iter().flatten().filter(|f| pick(f)).count();
                F::from_f64_lossy(covered as f64 / m.max(1.0))
            };
            let median_se = |pick: &dyn Fn(&RepFit<F>) -> F| -> F {
                let mut ses: Vec<f64> = fits.iter().flatten().map(|f| pick(f).as_f64()).collect();
                ses.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if ses.is_empty() {
                    F::zero()
                } else {
                    F::from_f64_lossy(ses[ses.len() / 2])
                }
            };
            params.push(ParamMetrics {
                bias: F::from_f64_lossy(bias),
                sd: sd.map(F::from_f64_lossy),
                rmse: rmse.map(F::from_f64_lossy),
                cp_unadj: coverage(&|f: &RepFit<F>| f.covered_unadj[j]),
                cp_adj: coverage(&|f: &RepFit<F>| f.covered_adj[j]),
                median_se_unadj: median_se(&|f: &RepFit<F>| f.se_unadj[j]),
                median_se_adj: median_se(&|f: &RepFit<F>| f.se_adj[j]),
            });
        }
        estimators.push(EstimatorRecord {
            label: spec.label(),
            params,
            n_converged,
            n_failed,
            raw_betas: fits.iter().map(|f| f.map(|f| f.beta.clone())).collect(),
        });
    }
    Ok(SimulationReport {
        estimators,
        reps,
        true_values: true_values.to_vec(),
        excess_failures,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Sweep axis for relative-efficiency curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepGrid<F> {
    /// Window length grid; randomization probability fixed by the base
    /// configuration.
    Delta(Vec<usize>),
    /// Randomization probability grid; window length fixed.
    RandProb(Vec<F>),
    /// Reference-regime truncation grid at the base window length,
    /// comparing the truncated per-decision and plain-product estimators.
    K(Vec<usize>),
}

impl<F: Real> SweepGrid<F> {
    pub fn axis_name(&self) -> &'static str {
        match self {
            SweepGrid::Delta(_) => "delta",
            SweepGrid::RandProb(_) => "rand_prob",
            SweepGrid::K(_) => "k",
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            SweepGrid::Delta(g) => g.is_empty(),
            SweepGrid::RandProb(g) => g.is_empty(),
            SweepGrid::K(g) => g.is_empty(),
        }
    }
}

/// One point of an efficiency curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint<F> {
    pub x: F,
    pub rel_eff: F,
    pub mc_se: F,
    pub used_reps: usize,
}

/// Relative-efficiency curve `Var(plain) / Var(per-decision)` for the
/// marginal effect along a sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCurve<F> {
    pub axis: String,
    pub points: Vec<CurvePoint<F>>,
}

/// Monte-Carlo relative efficiency along a grid. Replication `r` uses
/// stream `r` at every grid point (common random numbers), which tightens
/// step-to-step comparisons.
pub fn efficiency_sweep<F: Real>(
    grid: &SweepGrid<F>,
    base: &GenerativeConfig<F>,
    reps: usize,
) -> Result<EfficiencyCurve<F>> {
    if grid.is_empty() {
        return Err(Error::config("sweep grid must be nonempty"));
    }
    if reps < 2 {
        return Err(Error::config("sweeps need at least 2 replications"));
    }
    let mut points = Vec::new();
    match grid {
        SweepGrid::Delta(deltas) => {
            for &delta in deltas {
                let gen =
                    GenerativeConfig::with_horizon(base.n, base.t_len, delta, base.p_a, base.seed)?;
                let point = sweep_point(
                    &gen,
                    EstimatorKind::PdEmee,
                    EstimatorKind::Emee,
                    reps,
                    F::from_f64_lossy(delta as f64),
                )?;
                points.push(point);
            }
        }
        SweepGrid::RandProb(probs) => {
            for &p_a in probs {
                let gen =
                    GenerativeConfig::with_horizon(base.n, base.t_len, base.delta, p_a, base.seed)?;
                let point =
                    sweep_point(&gen, EstimatorKind::PdEmee, EstimatorKind::Emee, reps, p_a)?;
                points.push(point);
            }
        }
        SweepGrid::K(ks) => {
            for &k in ks {
                if k > base.delta - 1 {
                    return Err(Error::config(format!(
                        "k = {k} exceeds delta - 1 = {}",
                        base.delta - 1
                    )));
                }
                let point = sweep_point(
                    base,
                    EstimatorKind::RefRegimeK(k),
                    EstimatorKind::RefRegimeKEmee(k),
                    reps,
                    F::from_f64_lossy(k as f64),
                )?;
                points.push(point);
            }
        }
    }
    Ok(EfficiencyCurve {
        axis: grid.axis_name().into(),
        points,
    })
}

fn sweep_point<F: Real>(
    gen: &GenerativeConfig<F>,
    pd_kind: EstimatorKind,
    full_kind: EstimatorKind,
    reps: usize,
    x: F,
) -> Result<CurvePoint<F>> {
    let pd_spec = study_spec(pd_kind, false, gen.p_a);
    let full_spec = study_spec(full_kind, false, gen.p_a);
    let pairs: Vec<Option<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let data = generate_trial_stream(gen, rep as u64).ok()?;
            let outcomes = build_for_dataset(&data).ok()?;
            let (_, beta_pd) = fit_point_estimates(&data, &outcomes, &pd_spec).ok()?;
            let (_, beta_full) = fit_point_estimates(&data, &outcomes, &full_spec).ok()?;
            Some((beta_full[0].as_f64(), beta_pd[0].as_f64()))
        })
        .collect();
    let full: Vec<f64> = pairs.iter().flatten().map(|&(f, _)| f).collect();
    let pd: Vec<f64> = pairs.iter().flatten().map(|&(_, p)| p).collect();
    let (re, se) = jackknife_variance_ratio(&full, &pd).ok_or_else(|| {
        Error::Numeric("too few converged replications for a variance ratio".into())
    })?;
    Ok(CurvePoint {
        x,
        rel_eff: F::from_f64_lossy(re),
        mc_se: F::from_f64_lossy(se),
        used_reps: full.len(),
    })
}

/// Population variance helper used by the ratio computations.
fn pop_var(sum: f64, sum_sq: f64, m: f64) -> f64 {
    (sum_sq - sum * sum / m) / m
}

/// Variance ratio `var(x) / var(y)` with a delete-one jackknife SE over
/// the paired samples. Returns `None` with fewer than 3 pairs or a
/// degenerate denominator.
pub fn jackknife_variance_ratio(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let r = x.len();
    if r != y.len() || r < 3 {
        return None;
    }
    let m = r as f64;
    let (sx, sxx) = x.iter().fold((0.0, 0.0), |(s, q), &v| (s + v, q + v * v));
    let (sy, syy) = y.iter().fold((0.0, 0.0), |(s, q), &v| (s + v, q + v * v));
    let vy = pop_var(sy, syy, m);
    if vy <= 0.0 {
        return None;
    }
    let re = pop_var(sx, sxx, m) / vy;
    let mut loo = Vec::with_capacity(r);
    for i in 0..r {
        let vx_i = pop_var(sx - x[i], sxx - x[i] * x[i], m - 1.0);
        let vy_i = pop_var(sy - y[i], syy - y[i] * y[i], m - 1.0);
        if vy_i <= 0.0 {
            return None;
        }
        loo.push(vx_i / vy_i);
    }
    let loo_mean = loo.iter().sum::<f64>() / m;
    let se = ((m - 1.0) / m * loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>()).sqrt();
    Some((re, se))
}

/// Closed-form asymptotic relative efficiency of the per-decision
/// estimator over the full-product estimator in the simplified setting
/// (one analysis point, constant randomization `p`, i.i.d. Bernoulli(`q`)
/// sub-outcomes, no control variables):
///
/// ```text
/// RE = [1 - (1-q)^D] / [(1-p)^D - (1-q)^D] * (q-p)/q    if p != q
/// RE = [1 - (1-q)^D] / [q D (1-p)^(D-1)]                if p == q
/// ```
///
/// Equals 1 when `D = 1` and is continuous across `p = q`.
pub fn analytic_relative_efficiency<F: Real>(p: F, q: F, delta: usize) -> Result<F> {
    if !(p > F::zero() && p < F::one() && q > F::zero() && q < F::one()) {
        return Err(Error::config("p and q must lie in (0,1)"));
    }
    if delta == 0 {
        return Err(Error::config("delta must be at least 1"));
    }
    if delta == 1 {
        return Ok(F::one());
    }
    let d = delta as i32;
    let one = F::one();
    let comp_q = (one - q).powi(d);
    let numerator = one - comp_q;
    if p == q {
        let d_f = F::from_f64_lossy(delta as f64);
        Ok(numerator / (q * d_f * (one - p).powi(d - 1)))
    } else {
        let comp_p = (one - p).powi(d);
        Ok(numerator / (comp_p - comp_q) * ((q - p) / q))
    }
}

/// Monte-Carlo check of the closed form: solves the simplified
/// single-outcome estimating equations (no control variables) on
/// replications of the simplified trial and returns the variance ratio
/// with a jackknife SE.
pub fn simplified_mc_relative_efficiency<F: Real>(
    p: F,
    q: F,
    delta: usize,
    n_per_rep: usize,
    reps: usize,
    seed: u64,
) -> Result<RelativeEfficiency<F>> {
    let results: Vec<Option<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let data =
                generate_simplified_trial_stream(p, q, delta, n_per_rep, seed, rep as u64).ok()?;
            let outcomes = build_for_dataset(&data).ok()?;
            let weights =
                compute_weights(&data, &outcomes, &NumeratorPolicy::Constant(p), delta - 1).ok()?;
            // closed-form roots of the two scalar estimating equations:
            // exp(-b) (1-p) sum_{A=1} Y W = p sum_{A=0} Y W
            let mut s1_pd = 0.0f64;
            let mut s0_pd = 0.0f64;
            let mut s1_full = 0.0f64;
            let mut s0_full = 0.0f64;
            for i in 0..data.n() {
                let y = f64::from(outcomes.y(i, 0));
                if y == 0.0 {
                    continue;
                }
                let w_pd = weights.w_pd(i, 0).as_f64();
                let w_full = weights.w_full(i, 0).as_f64();
                if data.person(i).treatment[0] == 1 {
                    s1_pd += w_pd;
                    s1_full += w_full;
                } else {
                    s0_pd += w_pd;
                    s0_full += w_full;
                }
            }
            if s1_pd <= 0.0 || s0_pd <= 0.0 || s1_full <= 0.0 || s0_full <= 0.0 {
                return None;
            }
            let p_f = p.as_f64();
            let beta_pd = ((1.0 - p_f) * s1_pd / (p_f * s0_pd)).ln();
            let beta_full = ((1.0 - p_f) * s1_full / (p_f * s0_full)).ln();
            Some((beta_full, beta_pd))
        })
        .collect();
    let full: Vec<f64> = results.iter().flatten().map(|&(f, _)| f).collect();
    let pd: Vec<f64> = results.iter().flatten().map(|&(_, d)| d).collect();
    let (re, se) = jackknife_variance_ratio(&full, &pd).ok_or_else(|| {
        Error::Numeric("too few converged replications for a variance ratio".into())
    })?;
    Ok(RelativeEfficiency {
        rel_eff: F::from_f64_lossy(re),
        mc_se: F::from_f64_lossy(se),
        used_reps: full.len(),
    })
}
