//! Least-squares fits of the rate models to sweep data.
//!
//! Records are weighted by `1 / y_err^2` when an error is given and by
//! `1 / max(y, 1)` otherwise. Parameter errors come from the inverse normal
//! matrix; they are rescaled by the reduced chi-square unless every record
//! carries its own error.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};

pub const MAX_ITERATIONS: usize = 200;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
/// Largest relative gap between the saturation model and its tangent that
/// still counts as linear.
pub const LINEAR_WINDOW_DEVIATION: f64 = 0.01;

const ROUNDING_MARGIN: f64 = 64.0;
const START_FACTORS: [f64; 5] = [1.0, 0.5, 2.0, 0.1, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub y_err: Option<f64>,
    #[serde(default)]
    pub n_samples: Option<u64>,
}

impl SweepRecord {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            y_err: None,
            n_samples: None,
        }
    }

    pub fn with_error(x: f64, y: f64, y_err: f64) -> Self {
        Self {
            y_err: Some(y_err),
            ..Self::new(x, y)
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.x.is_finite() {
            return Err(Error::Domain {
                name: "x",
                value: self.x,
                expected: "finite",
            });
        }
        if !(self.y.is_finite() && self.y >= 0.0) {
            return Err(Error::Domain {
                name: "y",
                value: self.y,
                expected: "finite and >= 0",
            });
        }
        if let Some(e) = self.y_err {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::Domain {
                    name: "y_err",
                    value: e,
                    expected: "finite and >= 0",
                });
            }
        }
        Ok(())
    }

    // a zero error is treated as missing
    fn given_error(&self) -> Option<f64> {
        self.y_err.filter(|&e| e > 0.0)
    }

    fn weight(&self) -> f64 {
        match self.given_error() {
            Some(e) => 1.0 / (e * e),
            None => 1.0 / self.y.max(1.0),
        }
    }
}

/// Range of x covered by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl FitWindow {
    fn of(data: &[SweepRecord]) -> Self {
        let (x_min, x_max) = data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.x), hi.max(r.x))
            });
        Self {
            x_min,
            x_max,
            n_points: data.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub param_errs: BTreeMap<String, f64>,
    /// `sqrt(sum w r^2 / n)`.
    pub residual_norm: f64,
    pub chi_square: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Gauss-Newton decrement relative to the weighted data norm.
    pub gradient_norm: f64,
    pub window: FitWindow,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub fn err(&self, name: &str) -> Option<f64> {
        self.param_errs.get(name).copied()
    }

    fn require(&self, name: &str) -> Result<f64> {
        self.param(name).ok_or_else(|| {
            Error::InvalidConfig(format!("{} fit has no parameter {name}", self.model))
        })
    }
}

fn validate_data(data: &[SweepRecord], min_points: usize) -> Result<()> {
    if data.len() < min_points {
        return Err(Error::SingularFit(format!(
            "need at least {min_points} points, got {}",
            data.len()
        )));
    }
    data.iter().try_for_each(SweepRecord::validate)
}

fn all_errors_given(data: &[SweepRecord]) -> bool {
    data.iter().all(|r| r.given_error().is_some())
}

/// Weighted straight-line fit with closed-form errors.
pub fn fit_linear(data: &[SweepRecord]) -> Result<FitResult> {
    validate_data(data, 2)?;
    let (mut s, mut sx, mut sy, mut sxx) = (0.0, 0.0, 0.0, 0.0);
    for r in data {
        let w = r.weight();
        s += w;
        sx += w * r.x;
        sy += w * r.y;
        sxx += w * r.x * r.x;
    }
    // centred form keeps the determinant accurate for offset x
    let x_mean = sx / s;
    let sxx_c: f64 = data
        .iter()
        .map(|r| r.weight() * (r.x - x_mean).powi(2))
        .sum();
    if !(sxx_c > 1e-14 * sxx.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularFit("x values are degenerate".into()));
    }
    let sxy_c: f64 = data
        .iter()
        .map(|r| r.weight() * (r.x - x_mean) * (r.y - sy / s))
        .sum();
    let slope = sxy_c / sxx_c;
    let intercept = sy / s - slope * x_mean;

    let chi_square: f64 = data
        .iter()
        .map(|r| r.weight() * (r.y - slope * r.x - intercept).powi(2))
        .sum();
    let n = data.len();
    let scale = error_scale(data, chi_square, 2);
    let var_slope = scale / sxx_c;
    let var_intercept = scale * (1.0 / s + x_mean * x_mean / sxx_c);

    Ok(FitResult {
        model: "linear".into(),
        params: named(&["slope", "intercept"], [slope, intercept]),
        param_errs: named(
            &["slope", "intercept"],
            [var_slope.sqrt(), var_intercept.sqrt()],
        ),
        residual_norm: (chi_square / n as f64).sqrt(),
        chi_square,
        converged: true,
        iterations: 0,
        gradient_norm: 0.0,
        window: FitWindow::of(data),
    })
}

fn error_scale(data: &[SweepRecord], chi_square: f64, n_params: usize) -> f64 {
    if all_errors_given(data) || data.len() <= n_params {
        1.0
    } else {
        chi_square / (data.len() - n_params) as f64
    }
}

fn named(names: &[&str], values: [f64; 2]) -> BTreeMap<String, f64> {
    names.iter().map(|n| n.to_string()).zip(values).collect()
}

/// `amplitude * (1 - exp(-mu * x / scale)) + offset`.
///
/// Count rates use `amplitude = f_rep, scale = 1`; mean clicks of an
/// `N`-bin detector use `amplitude = scale = N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpSaturation {
    pub amplitude: f64,
    pub scale: f64,
}

impl ExpSaturation {
    pub fn value(&self, x: f64, mu: f64, offset: f64) -> f64 {
        self.amplitude * -(-mu * x / self.scale).exp_m1() + offset
    }

    /// Partial derivatives with respect to `(mu, offset)`.
    pub fn jacobian(&self, x: f64, mu: f64, _offset: f64) -> [f64; 2] {
        [
            self.amplitude * x / self.scale * (-mu * x / self.scale).exp(),
            1.0,
        ]
    }

    /// Slope at `x = 0`.
    pub fn initial_slope(&self, mu: f64) -> f64 {
        self.amplitude * mu / self.scale
    }

    fn mu_from_slope(&self, slope: f64) -> f64 {
        slope * self.scale / self.amplitude
    }
}

/// Fits `f_rep (1 - exp(-mu t)) + dark_rate` over `(mu_eff, dark_rate)`.
pub fn fit_saturation(data: &[SweepRecord], f_rep: f64) -> Result<FitResult> {
    check_positive("f_rep", f_rep)?;
    let model = ExpSaturation {
        amplitude: f_rep,
        scale: 1.0,
    };
    fit_exp_saturation(data, model, "saturation", ["mu_eff", "dark_rate"])
}

/// Fits `N (1 - exp(-mu t / N)) + dark_clicks` over `(mu_eff, dark_clicks)`.
pub fn fit_mean_clicks(data: &[SweepRecord], n_bins: usize) -> Result<FitResult> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("need at least one bin".into()));
    }
    let n = n_bins as f64;
    let model = ExpSaturation {
        amplitude: n,
        scale: n,
    };
    fit_exp_saturation(data, model, "mean_clicks", ["mu_eff", "dark_clicks"])
}

fn fit_exp_saturation(
    data: &[SweepRecord],
    model: ExpSaturation,
    label: &str,
    names: [&str; 2],
) -> Result<FitResult> {
    validate_data(data, 3)?;
    let init = initial_guess(data, &model)?;
    let candidates: Vec<Solution> = START_FACTORS
        .par_iter()
        .map(|&factor| levenberg_marquardt(data, &model, [init[0] * factor, init[1]]))
        .collect();
    let best = candidates
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.chi_square.total_cmp(&b.chi_square).then(ia.cmp(ib)))
        .map(|(_, s)| s)
        .expect("at least one start");

    let errs = match invert_2x2(&best.normal) {
        Some(inv) => {
            let scale = error_scale(data, best.chi_square, 2);
            [(inv[0][0] * scale).sqrt(), (inv[1][1] * scale).sqrt()]
        }
        None => [f64::INFINITY; 2],
    };
    Ok(FitResult {
        model: label.into(),
        params: named(&names, best.params),
        param_errs: named(&names, errs),
        residual_norm: (best.chi_square / data.len() as f64).sqrt(),
        chi_square: best.chi_square,
        converged: best.converged,
        iterations: best.iterations,
        gradient_norm: best.gradient_norm,
        window: FitWindow::of(data),
    })
}

// Straight line through the lowest-x third of the data.
fn initial_guess(data: &[SweepRecord], model: &ExpSaturation) -> Result<[f64; 2]> {
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let take = sorted.len().div_ceil(3).max(2);
    let line = fit_linear(&sorted[..take]).or_else(|_| fit_linear(&sorted))?;
    let slope = line.require("slope")?;
    let mut mu = model.mu_from_slope(slope);
    if !(mu.is_finite() && mu > 0.0) {
        let x_max = sorted
            .last()
            .map_or(1.0, |r| r.x.abs())
            .max(f64::MIN_POSITIVE);
        mu = model.scale / x_max;
    }
    Ok([mu, line.require("intercept")?])
}

struct Solution {
    params: [f64; 2],
    chi_square: f64,
    normal: [[f64; 2]; 2],
    gradient_norm: f64,
    iterations: usize,
    converged: bool,
}

struct Linearization {
    chi_square: f64,
    normal: [[f64; 2]; 2],
    gradient: [f64; 2],
}

fn chi_square(data: &[SweepRecord], model: &ExpSaturation, p: [f64; 2]) -> f64 {
    data.iter()
        .map(|r| r.weight() * (r.y - model.value(r.x, p[0], p[1])).powi(2))
        .sum()
}

fn linearize(data: &[SweepRecord], model: &ExpSaturation, p: [f64; 2]) -> Linearization {
    let mut lin = Linearization {
        chi_square: 0.0,
        normal: [[0.0; 2]; 2],
        gradient: [0.0; 2],
    };
    for r in data {
        let w = r.weight();
        let res = r.y - model.value(r.x, p[0], p[1]);
        let j = model.jacobian(r.x, p[0], p[1]);
        lin.chi_square += w * res * res;
        for a in 0..2 {
            lin.gradient[a] += w * j[a] * res;
            for b in 0..2 {
                lin.normal[a][b] += w * j[a] * j[b];
            }
        }
    }
    lin
}

fn invert_2x2(m: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.abs() > 1e-300) || !det.is_finite() {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

fn solve_2x2(m: &[[f64; 2]; 2], v: [f64; 2]) -> Option<[f64; 2]> {
    let inv = invert_2x2(m)?;
    Some([
        inv[0][0] * v[0] + inv[0][1] * v[1],
        inv[1][0] * v[0] + inv[1][1] * v[1],
    ])
}

// sqrt(g' H^-1 g) / sqrt(sum w y^2): how far a full Gauss-Newton step could
// still move the weighted residual, relative to the data.
fn gradient_norm(data: &[SweepRecord], lin: &Linearization) -> f64 {
    let data_norm: f64 = data
        .iter()
        .map(|r| r.weight() * r.y * r.y)
        .sum::<f64>()
        .sqrt();
    let decrement = match solve_2x2(&lin.normal, lin.gradient) {
        Some(step) => (step[0] * lin.gradient[0] + step[1] * lin.gradient[1]).max(0.0),
        None => f64::INFINITY,
    };
    decrement.sqrt() / data_norm.max(f64::MIN_POSITIVE)
}

fn levenberg_marquardt(data: &[SweepRecord], model: &ExpSaturation, start: [f64; 2]) -> Solution {
    let mut p = start;
    let mut lambda = 1e-3;
    let mut lin = linearize(data, model, p);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        if gradient_norm(data, &lin) <= GRADIENT_TOLERANCE || at_resolution(&lin) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = lin.normal;
            for (a, row) in damped.iter_mut().enumerate() {
                row[a] += lambda * lin.normal[a][a].max(f64::MIN_POSITIVE);
            }
            if let Some(step) = solve_2x2(&damped, lin.gradient) {
                let trial = [p[0] + step[0], p[1] + step[1]];
                let chi = chi_square(data, model, trial);
                if chi.is_finite() && chi < lin.chi_square {
                    p = trial;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
        lin = linearize(data, model, p);
    }
    let gradient_norm = gradient_norm(data, &lin);
    Solution {
        params: p,
        chi_square: lin.chi_square,
        normal: lin.normal,
        gradient_norm,
        iterations,
        converged: converged || gradient_norm <= GRADIENT_TOLERANCE || at_resolution(&lin),
    }
}

// The chi-square reduction a full Gauss-Newton step predicts is lost in the
// rounding of chi-square itself.
fn at_resolution(lin: &Linearization) -> bool {
    match solve_2x2(&lin.normal, lin.gradient) {
        Some(step) => {
            let predicted = step[0] * lin.gradient[0] + step[1] * lin.gradient[1];
            predicted <= ROUNDING_MARGIN * f64::EPSILON * lin.chi_square
        }
        None => false,
    }
}

/// Records from the low-x end where a saturation fit stays within 1 % of
/// its own tangent at the origin. Only the leading run counts.
pub fn select_linear_window(
    data: &[SweepRecord],
    saturation: &FitResult,
    f_rep: f64,
) -> Result<Vec<SweepRecord>> {
    let mu = saturation.require("mu_eff")?;
    let dark = saturation.require("dark_rate")?;
    let model = ExpSaturation {
        amplitude: f_rep,
        scale: 1.0,
    };
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let keep = sorted
        .iter()
        .take_while(|r| {
            let curve = model.value(r.x, mu, dark);
            let tangent = dark + model.initial_slope(mu) * r.x;
            curve == tangent || ((tangent - curve) / curve).abs() < LINEAR_WINDOW_DEVIATION
        })
        .count();
    sorted.truncate(keep);
    Ok(sorted)
}

/// Saturation fit, then a linear fit restricted to its linear window.
pub fn fit_linear_window(data: &[SweepRecord], f_rep: f64) -> Result<(FitResult, FitResult)> {
    let saturation = fit_saturation(data, f_rep)?;
    let window = select_linear_window(data, &saturation, f_rep)?;
    let linear = fit_linear(&window)?;
    Ok((linear, saturation))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrectionEntry {
    pub x: f64,
    pub measured_rate: f64,
    pub predicted_rate: f64,
    pub correction: f64,
}

/// Linear prediction over measurement for every record with `y > 0`.
pub fn correction_table(data: &[SweepRecord], linear: &FitResult) -> Result<Vec<CorrectionEntry>> {
    let slope = linear.require("slope")?;
    let intercept = linear.require("intercept")?;
    data.iter().try_for_each(SweepRecord::validate)?;
    Ok(data
        .iter()
        .filter(|r| {
            if r.y == 0.0 {
                log::warn!("skipping record at x = {} with zero measured rate", r.x);
            }
            r.y > 0.0
        })
        .map(|r| {
            let predicted = slope * r.x + intercept;
            CorrectionEntry {
                x: r.x,
                measured_rate: r.y,
                predicted_rate: predicted,
                correction: predicted / r.y,
            }
        })
        .collect())
}
