//! Closed-form count-rate predictions for a binary (click / no-click)
//! detector under pulsed illumination.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite_nonneg, check_positive, check_unit_interval, Error, Result};

/// Relative snap used when counting how many repetition periods fit inside
/// the dead time, so that exact multiples are not lost to rounding.
const SLOT_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Power quantum efficiency.
    pub eta_apd: f64,
    /// Dark count rate, counts/s.
    #[serde(rename = "dark_rate_hz")]
    pub dark_rate: f64,
    /// Dead time, s.
    #[serde(rename = "dead_time_s")]
    pub dead_time: f64,
}

impl DetectorParams {
    pub fn new(eta_apd: f64, dark_rate: f64, dead_time: f64) -> Result<Self> {
        let params = Self {
            eta_apd,
            dark_rate,
            dead_time,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit_interval("eta_apd", self.eta_apd)?;
        check_finite_nonneg("dark_rate", self.dark_rate)?;
        check_positive("dead_time", self.dead_time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePrediction {
    pub rate: f64,
    pub correction_applied: f64,
}

/// `f_rep * eta * (1 - P_0) + R_dark`.
pub fn expected_count_rate(f_rep: f64, params: &DetectorParams, p0: f64) -> Result<f64> {
    check_positive("f_rep", f_rep)?;
    params.validate()?;
    check_unit_interval("p0", p0)?;
    Ok(f_rep * params.eta_apd * (1.0 - p0) + params.dark_rate)
}

/// Count rate for coherent light with the quantum efficiency already
/// absorbed into `mu_eff`.
pub fn effective_count_rate_coherent(f_rep: f64, mu_eff: f64, dark_rate: f64) -> Result<f64> {
    check_positive("f_rep", f_rep)?;
    check_finite_nonneg("dark_rate", dark_rate)?;
    if !(mu_eff >= 0.0) {
        return Err(Error::Domain {
            name: "mu_eff",
            value: mu_eff,
            expected: ">= 0",
        });
    }
    Ok(f_rep * -(-mu_eff).exp_m1() + dark_rate)
}

/// `R_real / R_measured`.
pub fn correction_factor(r_real: f64, r_measured: f64) -> Result<f64> {
    if r_measured == 0.0 {
        return Err(Error::DivisionByZero("measured rate"));
    }
    check_positive("r_measured", r_measured)?;
    check_finite_nonneg("r_real", r_real)?;
    Ok(r_real / r_measured)
}

/// Number of repetition periods that fit inside the dead time, `n` with
/// `dead/n >= period > dead/(n+1)`; zero when the period exceeds the dead time.
pub fn blocked_slots(dead_time: f64, rep_period: f64) -> u64 {
    let ratio = dead_time / rep_period;
    (ratio * (1.0 + SLOT_SNAP)).floor() as u64
}

/// First-order pulsed dead-time correction `(1 - p_gamma)^n`.
pub fn pulsed_correction(p_gamma: f64, dead_time: f64, rep_period: f64) -> Result<f64> {
    check_unit_interval("p_gamma", p_gamma)?;
    check_positive("dead_time", dead_time)?;
    check_positive("rep_period", rep_period)?;
    let n = blocked_slots(dead_time, rep_period);
    Ok((1.0 - p_gamma).powf(n as f64))
}

/// [`expected_count_rate`] with the pulsed correction applied to the signal term. The
/// click probability used for the correction is the analytic
/// `eta * (1 - P_0)`.
pub fn corrected_pulsed_rate(
    f_rep: f64,
    params: &DetectorParams,
    p0: f64,
) -> Result<RatePrediction> {
    check_positive("f_rep", f_rep)?;
    params.validate()?;
    check_unit_interval("p0", p0)?;
    let p_gamma = params.eta_apd * (1.0 - p0);
    corrected_pulsed_rate_with(f_rep, params, p0, p_gamma)
}

/// Same as [`corrected_pulsed_rate`] with an externally supplied (e.g.
/// measured) click probability for the correction term.
pub fn corrected_pulsed_rate_with(
    f_rep: f64,
    params: &DetectorParams,
    p0: f64,
    p_gamma: f64,
) -> Result<RatePrediction> {
    check_positive("f_rep", f_rep)?;
    params.validate()?;
    check_unit_interval("p0", p0)?;
    let correction = pulsed_correction(p_gamma, params.dead_time, 1.0 / f_rep)?;
    let rate = f_rep * params.eta_apd * (1.0 - p0) * correction + params.dark_rate;
    Ok(RatePrediction {
        rate,
        correction_applied: correction,
    })
}
