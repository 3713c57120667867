//! Long-format MRT trajectories.
//!
//! A dataset holds, per individual, the availability/treatment/randomization
//! history, the sub-outcome series (which must extend `delta` slots past the
//! last decision point), and the moderator/control feature rows. Trajectory
//! lengths may vary across individuals.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// One individual's trajectory. All per-decision vectors have length
/// `t_len`, except `sub_outcome` which has length `t_len + delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Person<F> {
    /// Eligibility-to-be-randomized indicator per decision point.
    pub availability: Vec<u8>,
    /// Binary treatment assignment per decision point.
    pub treatment: Vec<u8>,
    /// Randomization probability per decision point; 0 where unavailable.
    pub rand_prob: Vec<F>,
    /// Binary sub-outcome per interval; entry `s` is the event indicator
    /// for the interval following decision point `s`.
    pub sub_outcome: Vec<u8>,
    /// Row-major `t_len x n_moderators`; first column identically 1.
    pub moderators: Vec<F>,
    /// Row-major `t_len x n_controls`.
    pub controls: Vec<F>,
}

impl<F: Real> Person<F> {
    pub fn t_len(&self) -> usize {
        self.availability.len()
    }
}

/// Validated long-format panel of `n` individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct MrtDataset<F> {
    delta: usize,
    n_moderators: usize,
    n_controls: usize,
    persons: Vec<Person<F>>,
}

impl<F: Real> MrtDataset<F> {
    /// Validate and assemble a dataset.
    ///
    /// Enforced invariants:
    /// - `availability`, `treatment`, `sub_outcome` are 0/1;
    /// - unavailable decision points have no treatment and `rand_prob = 0`;
    /// - available decision points have `rand_prob` strictly inside (0,1);
    /// - `sub_outcome` carries exactly `delta` follow-up slots;
    /// - the first moderator column is identically 1.
    pub fn new(
        persons: Vec<Person<F>>,
        delta: usize,
        n_moderators: usize,
        n_controls: usize,
    ) -> Result<Self> {
        if delta == 0 {
            return Err(Error::config("delta must be a positive integer"));
        }
        if persons.is_empty() {
            return Err(Error::structure(
                "dataset must contain at least one individual",
            ));
        }
        if n_moderators == 0 {
            return Err(Error::structure(
                "at least the intercept moderator column is required",
            ));
        }
        for (i, p) in persons.iter().enumerate() {
            let t_len = p.t_len();
            if t_len == 0 {
                return Err(Error::structure(format!(
                    "individual {i} has no decision points"
                )));
            }
            if p.treatment.len() != t_len || p.rand_prob.len() != t_len {
                return Err(Error::structure(format!(
                    "individual {i}: treatment/rand_prob length does not match availability"
                )));
            }
            if p.sub_outcome.len() != t_len + delta {
                return Err(Error::structure(format!(
                    "individual {i}: sub_outcome has {} entries, expected {} (= T + delta follow-up slots)",
                    p.sub_outcome.len(),
                    t_len + delta
                )));
            }
            if p.moderators.len() != t_len * n_moderators {
                return Err(Error::structure(format!(
                    "individual {i}: moderator tensor has {} entries, expected {}",
                    p.moderators.len(),
                    t_len * n_moderators
                )));
            }
            if p.controls.len() != t_len * n_controls {
                return Err(Error::structure(format!(
                    "individual {i}: control tensor has {} entries, expected {}",
                    p.controls.len(),
                    t_len * n_controls
                )));
            }
            for t in 0..t_len {
                let avail = p.availability[t];
                let a = p.treatment[t];
                let prob = p.rand_prob[t];
                if avail > 1 || a > 1 {
                    return Err(Error::validation(format!(
                        "individual {i}, decision point {t}: availability/treatment must be 0/1"
                    )));
                }
                if avail == 0 {
                    if a != 0 {
                        return Err(Error::validation(format!(
                            "individual {i}, decision point {t}: treated while unavailable"
                        )));
                    }
                    if prob != F::zero() {
                        return Err(Error::validation(format!(
                            "individual {i}, decision point {t}: rand_prob must be 0 when unavailable"
                        )));
                    }
                } else if !(prob > F::zero() && prob < F::one()) {
                    return Err(Error::Positivity {
                        individual: i,
                        t,
                        prob: prob.as_f64(),
                    });
                }
                if p.moderators[t * n_moderators] != F::one() {
                    return Err(Error::validation(format!(
                        "individual {i}, decision point {t}: first moderator column must be 1"
                    )));
                }
            }
            if p.sub_outcome.iter().any(|&r| r > 1) {
                return Err(Error::validation(format!(
                    "individual {i}: sub_outcome entries must be 0/1"
                )));
            }
        }
        Ok(MrtDataset {
            delta,
            n_moderators,
            n_controls,
            persons,
        })
    }

    pub fn n(&self) -> usize {
        self.persons.len()
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn n_moderators(&self) -> usize {
        self.n_moderators
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn person(&self, i: usize) -> &Person<F> {
        &self.persons[i]
    }

    pub fn persons(&self) -> &[Person<F>] {
        &self.persons
    }

    pub fn moderator_row(&self, i: usize, t: usize) -> &[F] {
        let p = &self.persons[i];
        &p.moderators[t * self.n_moderators..(t + 1) * self.n_moderators]
    }

    pub fn control_row(&self, i: usize, t: usize) -> &[F] {
        let p = &self.persons[i];
        &p.controls[t * self.n_controls..(t + 1) * self.n_controls]
    }

    /// True when `rand_prob` takes a single value over all available
    /// decision points (the usual constant-randomization MRT design).
    pub fn constant_rand_prob(&self) -> Option<F> {
        let mut value: Option<F> = None;
        for p in &self.persons {
            for t in 0..p.t_len() {
                if p.availability[t] == 0 {
                    continue;
                }
                match value {
                    None => value = Some(p.rand_prob[t]),
                    Some(v) if v == p.rand_prob[t] => {}
                    Some(_) => return None,
                }
            }
        }
        value
    }

    /// Reorder individuals (used by permutation-invariance tests).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.persons.len() {
            return Err(Error::structure("permutation length mismatch"));
        }
        let persons = order.iter().map(|&i| self.persons[i].clone()).collect();
        MrtDataset::new(persons, self.delta, self.n_moderators, self.n_controls)
    }
}

/// Convenience constructor for the common fully-available, constant-probability
/// design; moderator and control tensors both get an intercept column plus
/// the supplied extra columns.
pub fn person_with_constant_prob<F: Real>(
    treatment: Vec<u8>,
    prob: F,
    sub_outcome: Vec<u8>,
    extra_mod_cols: &[Vec<F>],
    extra_ctl_cols: &[Vec<F>],
) -> Person<F> {
    let t_len = treatment.len();
    let mut moderators = Vec::with_capacity(t_len * (1 + extra_mod_cols.len()));
    let mut controls = Vec::with_capacity(t_len * (1 + extra_ctl_cols.len()));
    for t in 0..t_len {
        moderators.push(F::one());
        for col in extra_mod_cols {
            moderators.push(col[t]);
        }
        controls.push(F::one());
        for col in extra_ctl_cols {
            controls.push(col[t]);
        }
    }
    Person {
        availability: vec![1; t_len],
        treatment,
        rand_prob: vec![prob; t_len],
        sub_outcome,
        moderators,
        controls,
    }
}
