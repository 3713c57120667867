//! Seeded generative model for simulation studies, with closed-form
//! oracles for the true effects.
//!
//! Everyone is always available and `T` defaults to 100. Each decision
//! point draws, in order, a covariate `Z_t` in {0,1,2}, a treatment
//! `A_t ~ Bernoulli(p_a)`, and a sub-outcome whose no-event probability is
//! `phi_0(Z_t)` untreated or `phi_1(Z_t)` treated:
//!
//! ```text
//! P(Z=0) = g^(-1/2D)/C,  P(Z=1) = 1/C,  P(Z=2) = g^(1/2D)/C,
//! C      = g^(-1/2D) + g^(1/2D) + 1,
//! phi_0(z) = g^((1.5 - 0.5 z)/D),
//! phi_1(z) = [1 - {1 - phi_0(z) (3/C g^(1/D))^(D-1)} e^(0.1+0.2z)]
//!            / (3/C g^(1/D))^(D-1),
//! ```
//!
//! with `g = 0.5` by default and `D` the window length. Sub-outcomes past
//! the trial horizon are zero. Under this model the conditional mean of
//! the proximal outcome for an excursion `(a, 0, ..., 0)` has the closed
//! form in [`true_conditional_mean`], the excursion effect on the log
//! relative risk scale is `0.1 + 0.2 z` for every window length, and the
//! marginal log relative risk is [`true_marginal_beta0`].
//!
//! Generation is deterministic given `(seed, stream)`: replication `r` of
//! a study uses stream `r` of a counter-based generator, so replications
//! can run in parallel in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::data::MrtDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Configuration of the generative model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerativeConfig<F> {
    pub n: usize,
    /// Decision points per individual.
    pub t_len: usize,
    /// Proximal outcome window length.
    pub delta: usize,
    /// Constant randomization probability.
    pub p_a: F,
    pub seed: u64,
    /// Base of the sub-outcome probabilities; 0.5 unless exploring
    /// alternative regimes.
    pub gamma: F,
}

impl<F: Real> GenerativeConfig<F> {
    /// Standard configuration: `T = 100`, `gamma = 0.5`; validates that
    /// every Bernoulli probability implied by the model lies in (0,1).
    pub fn new(n: usize, delta: usize, p_a: F, seed: u64) -> Result<Self> {
        Self::with_horizon(n, 100, delta, p_a, seed)
    }

    pub fn with_horizon(n: usize, t_len: usize, delta: usize, p_a: F, seed: u64) -> Result<Self> {
        let config = GenerativeConfig {
            n,
            t_len,
            delta,
            p_a,
            seed,
            gamma: F::from_f64_lossy(0.5),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_gamma(mut self, gamma: F) -> Result<Self> {
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t_len == 0 || self.delta == 0 {
            return Err(Error::config("n, T and delta must all be positive"));
        }
        if !(self.p_a > F::zero() && self.p_a < F::one()) {
            return Err(Error::config("p_a must lie in (0,1)"));
        }
        if !(self.gamma > F::zero() && self.gamma < F::one()) {
            return Err(Error::config("gamma must lie in (0,1)"));
        }
        for z in 0..3u8 {
            let phi0 = self.phi0(z);
            let phi1 = self.phi1(z);
            if !(phi0 > F::zero() && phi0 < F::one()) {
                return Err(Error::config(format!(
                    "no-event probability under no treatment leaves (0,1) at z = {z}: {phi0}"
                )));
            }
            if !(phi1 > F::zero() && phi1 < F::one()) {
                return Err(Error::config(format!(
                    "no-event probability under treatment leaves (0,1) at z = {z}: {phi1}"
                )));
            }
        }
        Ok(())
    }

    fn delta_f(&self) -> F {
        F::from_f64_lossy(self.delta as f64)
    }

    /// `C = g^(-1/2D) + g^(1/2D) + 1`.
    pub fn c_const(&self) -> F {
        let half = F::from_f64_lossy(0.5);
        let e = half / self.delta_f();
        self.gamma.powf(-e) + self.gamma.powf(e) + F::one()
    }

    /// Distribution of the covariate: `[P(Z=0), P(Z=1), P(Z=2)]`.
    pub fn z_probs(&self) -> [F; 3] {
        let half = F::from_f64_lossy(0.5);
        let e = half / self.delta_f();
        let c = self.c_const();
        [
            self.gamma.powf(-e) / c,
            F::one() / c,
            self.gamma.powf(e) / c,
        ]
    }

    /// `P(R = 0 | A = 0, Z = z)`.
    pub fn phi0(&self, z: u8) -> F {
        let z_f = F::from_f64_lossy(f64::from(z));
        let half = F::from_f64_lossy(0.5);
        let e = (F::one() + half - half * z_f) / self.delta_f();
        self.gamma.powf(e)
    }

    /// `P(R = 0 | A = 1, Z = z)`.
    pub fn phi1(&self, z: u8) -> F {
        let z_f = F::from_f64_lossy(f64::from(z));
        let pow = self.mean_phi0_pow();
        let cee = (F::from_f64_lossy(0.1) + F::from_f64_lossy(0.2) * z_f).exp();
        (F::one() - (F::one() - self.phi0(z) * pow) * cee) / pow
    }

    /// `(3/C g^(1/D))^(D-1)`: the no-event probability of one untreated
    /// window slot, averaged over the covariate, to the power `D - 1`.
    fn mean_phi0_pow(&self) -> F {
        let three = F::from_f64_lossy(3.0);
        let base = three / self.c_const() * self.gamma.powf(F::one() / self.delta_f());
        base.powf(self.delta_f() - F::one())
    }
}

/// Closed-form conditional mean of the proximal outcome for the excursion
/// `(a, 0, ..., 0)` given `Z_t = z`, away from the trial boundary:
/// `{1 - g^((D + 0.5 - 0.5 z)/D) (3/C)^(D-1)} e^(a (0.1 + 0.2 z))`.
pub fn true_conditional_mean<F: Real>(z: u8, a: u8, config: &GenerativeConfig<F>) -> F {
    assert!(z < 3, "z must be 0, 1 or 2");
    let z_f = F::from_f64_lossy(f64::from(z));
    let half = F::from_f64_lossy(0.5);
    let d = F::from_f64_lossy(config.delta as f64);
    let three = F::from_f64_lossy(3.0);
    let base = F::one()
        - config.gamma.powf((d + half - half * z_f) / d)
            * (three / config.c_const()).powf(d - F::one());
    if a == 1 {
        base * (F::from_f64_lossy(0.1) + F::from_f64_lossy(0.2) * z_f).exp()
    } else {
        base
    }
}

/// True marginal excursion effect on the log relative risk scale:
/// `log( E_Z[m(Z,1)] / E_Z[m(Z,0)] )` with `m` the closed-form
/// conditional mean.
pub fn true_marginal_beta0<F: Real>(config: &GenerativeConfig<F>) -> F {
    let probs = config.z_probs();
    let mut num = F::zero();
    let mut den = F::zero();
    for z in 0..3u8 {
        num = num + probs[z as usize] * true_conditional_mean(z, 1, config);
        den = den + probs[z as usize] * true_conditional_mean(z, 0, config);
    }
    (num / den).ln()
}

/// Generate one trial (stream 0).
pub fn generate_trial<F: Real>(config: &GenerativeConfig<F>) -> Result<MrtDataset<F>> {
    generate_trial_stream(config, 0)
}

/// Generate one trial on a given substream. Per individual and decision
/// point the draw order is `Z`, `A`, `R`; identical `(seed, stream)` give
/// bitwise-identical datasets.
pub fn generate_trial_stream<F: Real>(
    config: &GenerativeConfig<F>,
    stream: u64,
) -> Result<MrtDataset<F>> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let z_probs = config.z_probs();
    let p0 = z_probs[0].as_f64();
    let p01 = p0 + z_probs[1].as_f64();
    let p_a = config.p_a.as_f64();
    let phi0: Vec<f64> = (0..3u8).map(|z| config.phi0(z).as_f64()).collect();
    let phi1: Vec<f64> = (0..3u8).map(|z| config.phi1(z).as_f64()).collect();
    let t_len = config.t_len;
    let delta = config.delta;
    let mut persons = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let mut treatment = Vec::with_capacity(t_len);
        let mut sub_outcome = Vec::with_capacity(t_len + delta);
        let mut z_col = Vec::with_capacity(t_len);
        for _ in 0..t_len {
            let uz: f64 = rng.gen();
            let z: u8 = if uz < p0 {
                0
            } else if uz < p01 {
                1
            } else {
                2
            };
            let a = u8::from(rng.gen::<f64>() < p_a);
            let phi = if a == 1 {
                phi1[z as usize]
            } else {
                phi0[z as usize]
            };
            let r = u8::from(rng.gen::<f64>() >= phi);
            z_col.push(F::from_f64_lossy(f64::from(z)));
            treatment.push(a);
            sub_outcome.push(r);
        }
        sub_outcome.resize(t_len + delta, 0);
        persons.push(crate::data::person_with_constant_prob(
            treatment,
            config.p_a,
            sub_outcome,
            &[z_col.clone()],
            &[z_col],
        ));
    }
    MrtDataset::new(persons, delta, 2, 2)
}

/// Generate the stripped-down single-outcome setting: one analysis
/// decision point, `delta` treatment occasions with constant probability
/// `p`, and `delta` i.i.d. Bernoulli(`q`) sub-outcomes.
pub fn generate_simplified_trial<F: Real>(
    p: F,
    q: F,
    delta: usize,
    n: usize,
    seed: u64,
) -> Result<MrtDataset<F>> {
    generate_simplified_trial_stream(p, q, delta, n, seed, 0)
}

/// Substream variant of [`generate_simplified_trial`]; per individual the
/// draw order is the `delta` treatments then the `delta` sub-outcomes.
pub fn generate_simplified_trial_stream<F: Real>(
    p: F,
    q: F,
    delta: usize,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<MrtDataset<F>> {
    if !(p > F::zero() && p < F::one()) {
        return Err(Error::config("p must lie in (0,1)"));
    }
    let q_f = q.as_f64();
    if !(0.0..=1.0).contains(&q_f) {
        return Err(Error::config("q must lie in [0,1]"));
    }
    if delta == 0 || n == 0 {
        return Err(Error::config("n and delta must be positive"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let p_f = p.as_f64();
    let mut persons = Vec::with_capacity(n);
    for _ in 0..n {
        let treatment: Vec<u8> = (0..delta)
            .map(|_| u8::from(rng.gen::<f64>() < p_f))
            .collect();
        let mut sub_outcome: Vec<u8> = (0..delta)
            .map(|_| u8::from(rng.gen::<f64>() < q_f))
            .collect();
        sub_outcome.resize(2 * delta, 0);
        persons.push(crate::data::person_with_constant_prob(
            treatment,
            p,
            sub_outcome,
            &[],
            &[],
        ));
    }
    MrtDataset::new(persons, delta, 1, 1)
}
