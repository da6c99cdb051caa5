//! Coherent-state photon-number statistics and count-distribution moments.
//!
//! Only the mean photon number `mu = |alpha|^2` is ever carried around; the
//! field amplitude itself is not observable once detection efficiency is
//! folded in.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite_nonneg, check_unit_interval, Error, Result};

/// Tolerance on `sum(probs) + tail_mass == 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Tail mass targeted by [`default_n_max`].
pub const DEFAULT_TAIL_TARGET: f64 = 1e-12;

/// Probability vector over photon number `n = 0..=n_max`, plus the mass of
/// the distribution that lies beyond `n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberDistribution {
    probs: Vec<f64>,
    tail_mass: f64,
}

impl PhotonNumberDistribution {
    /// Builds a distribution from explicit probabilities. The missing mass
    /// `1 - sum(probs)` (if any) is recorded as tail mass.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::DimensionMismatch(
                "photon-number distribution needs at least one entry".into(),
            ));
        }
        for &p in &probs {
            check_unit_interval("probability", p)?;
        }
        let sum: f64 = probs.iter().sum();
        if sum > 1.0 + NORMALIZATION_TOLERANCE {
            return Err(Error::Domain {
                name: "probability sum",
                value: sum,
                expected: "<= 1",
            });
        }
        Ok(Self {
            probs,
            tail_mass: (1.0 - sum).max(0.0),
        })
    }

    /// Builds a distribution that must be complete (tail below tolerance).
    pub fn normalized(probs: Vec<f64>) -> Result<Self> {
        let dist = Self::new(probs)?;
        if dist.tail_mass > NORMALIZATION_TOLERANCE {
            return Err(Error::Truncation {
                tail: dist.tail_mass,
                tolerance: NORMALIZATION_TOLERANCE,
                n_max: dist.n_max(),
            });
        }
        Ok(dist)
    }

    /// Fock state `|n>`.
    pub fn fock(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        Self {
            probs,
            tail_mass: 0.0,
        }
    }

    pub fn vacuum() -> Self {
        Self::fock(0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// `P_0`, the probability of an empty pulse.
    pub fn p0(&self) -> f64 {
        self.probs[0]
    }

    /// `P_1 = 1 - P_0`, the probability that at least one photon is present.
    pub fn p_nonzero(&self) -> f64 {
        1.0 - self.probs[0]
    }

    /// Truncates (or zero-pads) to a new `n_max`. Removed mass is added to the
    /// tail; when `fold` is set it is added onto the last kept entry instead.
    pub fn truncated(&self, n_max: usize, fold: bool) -> Self {
        let mut probs = self.probs.clone();
        probs.resize(n_max + 1, 0.0);
        let removed: f64 = self.probs.iter().skip(n_max + 1).sum();
        let mut tail_mass = self.tail_mass + removed;
        if fold {
            probs[n_max] += tail_mass;
            tail_mass = 0.0;
        }
        Self { probs, tail_mass }
    }
}

impl CountDistribution for PhotonNumberDistribution {
    fn weights(&self) -> &[f64] {
        &self.probs
    }
}

/// Anything that is a (possibly unnormalized, possibly slightly negative)
/// weight vector over a count `0, 1, 2, ...`.
pub trait CountDistribution {
    fn weights(&self) -> &[f64];

    /// Mean count, normalizing by the represented mass.
    fn mean(&self) -> f64 {
        moments(self.weights()).0
    }

    fn variance(&self) -> f64 {
        moments(self.weights()).1
    }

    /// Mandel Q in the `variance / mean` convention: 1 for Poisson light.
    fn mandel_q(&self) -> Result<f64> {
        mandel_q(self.weights())
    }
}

impl CountDistribution for [f64] {
    fn weights(&self) -> &[f64] {
        self
    }
}

impl CountDistribution for Vec<f64> {
    fn weights(&self) -> &[f64] {
        self
    }
}

fn moments(weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return (0.0, 0.0);
    }
    let mean = weights
        .iter()
        .enumerate()
        .map(|(n, w)| n as f64 * w)
        .sum::<f64>()
        / total;
    let var = weights
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let d = n as f64 - mean;
            d * d * w
        })
        .sum::<f64>()
        / total;
    (mean, var)
}

/// `variance / mean` of a count distribution given as weights.
pub fn mandel_q(weights: &[f64]) -> Result<f64> {
    let (mean, var) = moments(weights);
    if !(mean.abs() > 0.0) {
        return Err(Error::UndefinedQ);
    }
    Ok(var / mean)
}

/// Poisson photon-number distribution of a coherent state with mean `mu`,
/// truncated at `n_max`. The truncated tail is reported, never hidden.
pub fn coherent_distribution(mu: f64, n_max: usize) -> Result<PhotonNumberDistribution> {
    check_finite_nonneg("mean photon number", mu)?;
    let mut probs = Vec::with_capacity(n_max + 1);
    let mut term = (-mu).exp();
    probs.push(term);
    for n in 0..n_max {
        term *= mu / (n + 1) as f64;
        probs.push(term);
    }
    let tail_mass = poisson_tail(mu, n_max, term);
    Ok(PhotonNumberDistribution { probs, tail_mass })
}

/// Like [`coherent_distribution`] but fails when the tail exceeds `max_tail`.
pub fn coherent_distribution_strict(
    mu: f64,
    n_max: usize,
    max_tail: f64,
) -> Result<PhotonNumberDistribution> {
    let dist = coherent_distribution(mu, n_max)?;
    if dist.tail_mass > max_tail {
        return Err(Error::Truncation {
            tail: dist.tail_mass,
            tolerance: max_tail,
            n_max,
        });
    }
    Ok(dist)
}

/// Coherent distribution with `n_max` from [`default_n_max`].
pub fn coherent_distribution_auto(mu: f64) -> Result<PhotonNumberDistribution> {
    check_finite_nonneg("mean photon number", mu)?;
    coherent_distribution_strict(mu, default_n_max(mu), DEFAULT_TAIL_TARGET)
}

/// Safe truncation point for a Poisson tail below 1e-12.
pub fn default_n_max(mu: f64) -> usize {
    (mu + 12.0 * mu.sqrt() + 20.0).ceil() as usize
}

// Sum of the terms beyond n_max, continuing the same recurrence.
fn poisson_tail(mu: f64, n_max: usize, last_term: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let mut term = last_term;
    let mut tail = 0.0;
    let mut n = n_max;
    loop {
        term *= mu / (n + 1) as f64;
        n += 1;
        tail += term;
        // past the mode the terms shrink geometrically
        if n as f64 > mu && term <= tail * 1e-17 {
            break;
        }
        if term == 0.0 && n as f64 > mu {
            break;
        }
    }
    tail
}

/// Mean photon number after a beam splitter of power transmission `t`.
pub fn attenuate_coherent(mu: f64, transmission: f64) -> Result<f64> {
    check_finite_nonneg("mean photon number", mu)?;
    check_unit_interval("transmission", transmission)?;
    Ok(transmission * mu)
}

/// `P_0 = exp(-mu)`.
pub fn vacuum_probability(mu: f64) -> Result<f64> {
    check_finite_nonneg("mean photon number", mu)?;
    Ok((-mu).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn factorial(n: u64) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    fn poisson_direct(mu: f64, n: u64) -> f64 {
        (-mu).exp() * mu.powi(n as i32) / factorial(n)
    }

    #[test]
    fn vacuum_input() {
        let d = coherent_distribution(0.0, 4).unwrap();
        assert_eq!(d.probs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.tail_mass(), 0.0);
    }

    #[test]
    fn single_entry_reports_tail() {
        let d = coherent_distribution(0.836, 0).unwrap();
        assert_relative_eq!(d.probs()[0], 0.4334408238165043, max_relative = 1e-12);
        assert_relative_eq!(
            d.tail_mass(),
            1.0 - 0.4334408238165043,
            max_relative = 1e-12
        );
        assert!(matches!(
            coherent_distribution_strict(0.836, 0, 1e-9),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn unit_mean_matches_direct_evaluation() {
        let d = coherent_distribution(1.0, 3).unwrap();
        for n in 0..=3 {
            assert_relative_eq!(
                d.probs()[n],
                poisson_direct(1.0, n as u64),
                max_relative = 1e-14
            );
        }
        assert_relative_eq!(d.probs()[0], 0.3679, epsilon = 1e-4);
        assert_relative_eq!(d.probs()[2], 0.1839, epsilon = 1e-4);
        assert_relative_eq!(d.probs()[3], 0.0613, epsilon = 1e-4);
        let tail: f64 = (4..60).map(|n| poisson_direct(1.0, n)).sum();
        assert_relative_eq!(d.tail_mass(), tail, max_relative = 1e-12);
    }

    #[test]
    fn recurrence_is_stable_at_large_n() {
        let d = coherent_distribution(150.0, 400).unwrap();
        let sum: f64 = d.probs().iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        assert!(d.probs().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn attenuation() {
        assert_eq!(attenuate_coherent(2.0, 1.0).unwrap(), 2.0);
        assert_eq!(attenuate_coherent(2.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(attenuate_coherent(0.836, 0.5).unwrap(), 0.418);
        assert!(attenuate_coherent(1.0, 1.5).is_err());
        assert!(attenuate_coherent(-1.0, 0.5).is_err());
    }

    #[test]
    fn vacuum_probabilities() {
        assert_eq!(vacuum_probability(0.0).unwrap(), 1.0);
        assert_relative_eq!(vacuum_probability(0.836).unwrap(), 0.4335, epsilon = 1e-4);
        assert_relative_eq!(vacuum_probability(2.232).unwrap(), 0.1073, epsilon = 1e-4);
        assert!(vacuum_probability(-0.1).is_err());
    }

    #[test]
    fn mandel_q_cases() {
        let d = coherent_distribution_auto(2.232).unwrap();
        assert!(d.tail_mass() < 1e-12);
        assert_relative_eq!(d.mandel_q().unwrap(), 1.0, epsilon = 1e-6);
        assert_eq!(PhotonNumberDistribution::fock(3).mandel_q().unwrap(), 0.0);
        assert_eq!(
            PhotonNumberDistribution::vacuum().mandel_q(),
            Err(Error::UndefinedQ)
        );
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(PhotonNumberDistribution::new(vec![]).is_err());
        assert!(PhotonNumberDistribution::new(vec![0.7, 0.7]).is_err());
        assert!(PhotonNumberDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(PhotonNumberDistribution::normalized(vec![0.5, 0.4]).is_err());
        assert!(PhotonNumberDistribution::normalized(vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn truncation_can_fold_tail() {
        let d = coherent_distribution_auto(3.0).unwrap().truncated(8, true);
        assert_eq!(d.n_max(), 8);
        assert_relative_eq!(d.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(d.tail_mass(), 0.0);
    }

    proptest! {
        #[test]
        fn coherent_mean_and_variance_equal_mu(mu in 0.0f64..10.0) {
            let d = coherent_distribution_auto(mu).unwrap();
            prop_assert!((d.probs().iter().sum::<f64>() + d.tail_mass() - 1.0).abs() < 1e-9);
            prop_assert!((d.mean() - mu).abs() < 1e-9);
            prop_assert!((d.variance() - mu).abs() < 1e-9);
            if mu > 0.0 {
                prop_assert!((d.mandel_q().unwrap() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn attenuation_composes(mu in 0.0f64..50.0, t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let twice = attenuate_coherent(attenuate_coherent(mu, t1).unwrap(), t2).unwrap();
            let once = attenuate_coherent(mu, t1 * t2).unwrap();
            prop_assert!((twice - once).abs() <= 1e-15 * mu.max(1.0));
        }

        #[test]
        fn vacuum_matches_distribution(mu in 0.0f64..20.0, n_max in 0usize..40) {
            let d = coherent_distribution(mu, n_max).unwrap();
            prop_assert_eq!(vacuum_probability(mu).unwrap(), d.probs()[0]);
        }
    }
}
