//! Inverse-probability weights: the stabilized marginal weight, the full
//! window product, and the per-decision product that stops contributing
//! factors once the event has occurred.
//!
//! For decision point `t` and window length `delta`, the full weight takes
//! one factor `1(A_j = 0) / (1 - p_j)` for each in-window decision point
//! `j = t+1, ..., t+delta-1`. The per-decision weight includes the factor
//! for `j` only while no sub-outcome in `(t, j]` has fired, i.e. while
//! `j - t < first_hit`. Decision points with no randomization (unavailable,
//! or past the end of the trajectory) contribute a factor of 1.

use crate::data::MrtDataset;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::outcomes::ProximalOutcomes;
use crate::scalar::{Real, WeightScalar};

/// Which in-window factors a weight product takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightRule {
    /// Per-decision product over the full window (`delta - 1` offsets).
    PerDecision,
    /// Plain product over the full window.
    Full,
    /// Per-decision product truncated at offset `k`.
    PerDecisionK(usize),
    /// Plain product truncated at offset `k`.
    FullK(usize),
}

/// Positivity failure inside a weight kernel, reported by window offset.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPositivity {
    /// 1-based offset of the offending factor within the window.
    pub offset: usize,
}

/// Product of in-window inverse-probability factors.
///
/// The three slices describe decision points `t+1, t+2, ...` and may be
/// shorter than `horizon` when the window runs past the trajectory; missing
/// and unavailable decision points contribute 1. `first_hit` is the 1-based
/// offset of the first event after `t` (`None` when no event occurs), and
/// is only consulted when `per_decision` is set.
///
/// Generic over any field scalar, so exact rational evaluation is possible.
pub fn window_weight<T: WeightScalar>(
    treatment: &[u8],
    rand_prob: &[T],
    availability: &[u8],
    first_hit: Option<usize>,
    horizon: usize,
    per_decision: bool,
) -> std::result::Result<T, KernelPositivity> {
    let mut w = T::one();
    for d in 1..=horizon {
        if per_decision && first_hit.is_some_and(|fh| d >= fh) {
            // event already occurred before decision point t + d
            break;
        }
        let idx = d - 1;
        if idx >= treatment.len() || availability[idx] == 0 {
            continue;
        }
        let p = rand_prob[idx].clone();
        if !(p > T::zero() && p < T::one()) {
            return Err(KernelPositivity { offset: d });
        }
        if treatment[idx] == 1 {
            return Ok(T::zero());
        }
        w = w / (T::one() - p);
    }
    Ok(w)
}

/// Stabilized marginal weight `(p̃/p)^A ((1-p̃)/(1-p))^(1-A)`.
pub fn marginal_weight<T: WeightScalar>(a: u8, p: T, p_tilde: T) -> T {
    if a == 1 {
        p_tilde / p
    } else {
        (T::one() - p_tilde) / (T::one() - p)
    }
}

/// Numerator probability `p̃_t(S_t)` of the stabilized weight.
#[derive(Debug, Clone, PartialEq)]
pub enum NumeratorPolicy<F> {
    /// A fixed probability; with a constant-randomization design, choosing
    /// the design probability makes the marginal weight identically 1.
    Constant(F),
    /// Pooled mean of the treatment indicator over available points.
    EmpiricalMean,
    /// Prediction from a logistic regression of `A_t` on `S_t`, pooled over
    /// available person-decision points.
    LogisticOnS,
}

impl<F: Real> NumeratorPolicy<F> {
    /// Default choice: the design probability when randomization is
    /// constant, otherwise a logistic fit on the moderators.
    pub fn default_for(data: &MrtDataset<F>) -> Self {
        match data.constant_rand_prob() {
            Some(p) => NumeratorPolicy::Constant(p),
            None => NumeratorPolicy::LogisticOnS,
        }
    }

    /// Materialize `p̃` for every person-decision point (entries at
    /// unavailable points are never read; they are filled with 0.5).
    pub fn resolve(&self, data: &MrtDataset<F>) -> Result<Vec<Vec<F>>> {
        let half = F::from_f64_lossy(0.5);
        match self {
            NumeratorPolicy::Constant(c) => {
                if !(*c > F::zero() && *c < F::one()) {
                    return Err(Error::config(format!(
                        "numerator probability must lie in (0,1), got {c}"
                    )));
                }
                Ok(data.persons().iter().map(|p| vec![*c; p.t_len()]).collect())
            }
            NumeratorPolicy::EmpiricalMean => {
                let mut sum = 0.0;
                let mut count = 0.0;
                for p in data.persons() {
                    for t in 0..p.t_len() {
                        if p.availability[t] == 1 {
                            sum += f64::from(p.treatment[t]);
                            count += 1.0;
                        }
                    }
                }
                if count == 0.0 {
                    return Err(Error::validation("no available decision points"));
                }
                let mean = (sum / count).clamp(1e-12, 1.0 - 1e-12);
                let mean = F::from_f64_lossy(mean);
                Ok(data
                    .persons()
                    .iter()
                    .map(|p| vec![mean; p.t_len()])
                    .collect())
            }
            NumeratorPolicy::LogisticOnS => {
                let gamma = logistic_fit_on_moderators(data)?;
                Ok(data
                    .persons()
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        (0..p.t_len())
                            .map(|t| {
                                if p.availability[t] == 0 {
                                    return half;
                                }
                                let eta: F = data
                                    .moderator_row(i, t)
                                    .iter()
                                    .zip(&gamma)
                                    .map(|(&s, &g)| s * g)
                                    .sum();
                                logistic(eta)
                            })
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

fn logistic<F: Real>(eta: F) -> F {
    let bound = F::from_f64_lossy(30.0);
    let eta = eta.max(-bound).min(bound);
    F::one() / (F::one() + (-eta).exp())
}

/// Logistic regression of treatment on the moderator rows over available
/// points, by Newton iteration on the log-likelihood.
fn logistic_fit_on_moderators<F: Real>(data: &MrtDataset<F>) -> Result<Vec<F>> {
    let p_dim = data.n_moderators();
    let mut gamma = vec![F::zero(); p_dim];
    let tol = F::from_f64_lossy(1e-10);
    let floor = F::from_f64_lossy(1e-8);
    for _ in 0..50 {
        let mut grad = vec![F::zero(); p_dim];
        let mut hess = Mat::zeros(p_dim, p_dim);
        for (i, person) in data.persons().iter().enumerate() {
            for t in 0..person.t_len() {
                if person.availability[t] == 0 {
                    continue;
                }
                let s = data.moderator_row(i, t);
                let eta: F = s.iter().zip(&gamma).map(|(&x, &g)| x * g).sum();
                let pi = logistic(eta);
                let a = F::from_f64_lossy(f64::from(person.treatment[t]));
                let resid = a - pi;
                for (gk, &sk) in grad.iter_mut().zip(s) {
                    *gk = *gk + sk * resid;
                }
                let v = (pi * (F::one() - pi)).max(floor);
                hess.add_outer(v, s, s);
            }
        }
        let grad_norm = grad.iter().fold(F::zero(), |m, &g| m.max(g.abs()));
        if grad_norm <= tol {
            break;
        }
        let step = hess.solve(&grad).map_err(|_| {
            Error::Numeric("singular information matrix in numerator logistic fit".into())
        })?;
        for (g, s) in gamma.iter_mut().zip(&step) {
            *g = *g + *s;
        }
    }
    Ok(gamma)
}

/// All weight variants for one dataset: the stabilized marginal weight `m`,
/// the per-decision product `w_pd`, the full product `w_full`, and the
/// truncated products `w_k` (per-decision) and `w_k_full` (plain) used for
/// reference regimes that revert to the trial policy after `k` points.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<F> {
    k: usize,
    m: Vec<Vec<F>>,
    w_pd: Vec<Vec<F>>,
    w_full: Vec<Vec<F>>,
    w_k: Vec<Vec<F>>,
    w_k_full: Vec<Vec<F>>,
    p_tilde: Vec<Vec<F>>,
}

impl<F: Real> WeightSet<F> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self, i: usize, t: usize) -> F {
        self.m[i][t]
    }

    pub fn w_pd(&self, i: usize, t: usize) -> F {
        self.w_pd[i][t]
    }

    pub fn w_full(&self, i: usize, t: usize) -> F {
        self.w_full[i][t]
    }

    pub fn w_k(&self, i: usize, t: usize) -> F {
        self.w_k[i][t]
    }

    pub fn w_k_full(&self, i: usize, t: usize) -> F {
        self.w_k_full[i][t]
    }

    pub fn p_tilde(&self, i: usize, t: usize) -> F {
        self.p_tilde[i][t]
    }

    /// Window weight for a rule, times nothing else.
    pub fn window(&self, rule: WeightRule, i: usize, t: usize) -> F {
        match rule {
            WeightRule::PerDecision => self.w_pd[i][t],
            WeightRule::Full => self.w_full[i][t],
            WeightRule::PerDecisionK(_) => self.w_k[i][t],
            WeightRule::FullK(_) => self.w_k_full[i][t],
        }
    }
}

/// Compute every weight variant for a dataset.
///
/// `k` is the reference-regime truncation in `0..=delta-1`; the outcomes
/// must have been built from the same dataset.
pub fn compute_weights<F: Real>(
    data: &MrtDataset<F>,
    outcomes: &ProximalOutcomes,
    numerator: &NumeratorPolicy<F>,
    k: usize,
) -> Result<WeightSet<F>> {
    let delta = data.delta();
    if outcomes.delta() != delta || outcomes.n() != data.n() {
        return Err(Error::structure(
            "proximal outcomes were not built from this dataset",
        ));
    }
    if k > delta - 1 {
        return Err(Error::config(format!(
            "reference-regime k = {k} must lie in 0..={}",
            delta - 1
        )));
    }
    let p_tilde = numerator.resolve(data)?;
    let n = data.n();
    let mut m = Vec::with_capacity(n);
    let mut w_pd = Vec::with_capacity(n);
    let mut w_full = Vec::with_capacity(n);
    let mut w_k = Vec::with_capacity(n);
    let mut w_k_full = Vec::with_capacity(n);
    for (i, person) in data.persons().iter().enumerate() {
        let t_len = person.t_len();
        if outcomes.t_len(i) != t_len {
            return Err(Error::structure(
                "proximal outcomes were not built from this dataset",
            ));
        }
        let mut m_row = Vec::with_capacity(t_len);
        let mut pd_row = Vec::with_capacity(t_len);
        let mut full_row = Vec::with_capacity(t_len);
        let mut k_row = Vec::with_capacity(t_len);
        let mut k_full_row = Vec::with_capacity(t_len);
        for (t, &p_tilde_it) in p_tilde[i].iter().enumerate() {
            m_row.push(if person.availability[t] == 1 {
                marginal_weight(person.treatment[t], person.rand_prob[t], p_tilde_it)
            } else {
                F::one()
            });
            let end = (t + delta).min(t_len);
            let treat = &person.treatment[(t + 1).min(end)..end];
            let prob = &person.rand_prob[(t + 1).min(end)..end];
            let avail = &person.availability[(t + 1).min(end)..end];
            let fh = outcomes.first_hit(i, t);
            let eval = |horizon: usize, per_decision: bool| -> Result<F> {
                window_weight(treat, prob, avail, fh, horizon, per_decision).map_err(|e| {
                    Error::Positivity {
                        individual: i,
                        t: t + e.offset,
                        prob: person.rand_prob[t + e.offset].as_f64(),
                    }
                })
            };
            pd_row.push(eval(delta - 1, true)?);
            full_row.push(eval(delta - 1, false)?);
            k_row.push(eval(k, true)?);
            k_full_row.push(eval(k, false)?);
        }
        m.push(m_row);
        w_pd.push(pd_row);
        w_full.push(full_row);
        w_k.push(k_row);
        w_k_full.push(k_full_row);
    }
    Ok(WeightSet {
        k,
        m,
        w_pd,
        w_full,
        w_k,
        w_k_full,
        p_tilde,
    })
}
