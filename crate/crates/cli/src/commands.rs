use std::path::Path;

use apdlab::apd_model::{corrected_pulsed_rate, DetectorParams};
use apdlab::calibrate::{
    correction_table, fit_linear, fit_linear_window, fit_mean_clicks, fit_saturation, FitResult,
    SweepRecord,
};
use apdlab::dead_time_sim::{
    default_cw_slot_width, simulate_cw_with, simulate_pulsed_with, PulseTrainConfig, SimOptions,
    SimResult, CSV_HEADER,
};
use apdlab::photon_stats::{coherent_distribution_auto, CountDistribution};
use apdlab::tmd::{
    convolution_matrix, deconvolve, expected_mean_clicks, forward_click_statistics, loss_matrix,
    with_dark_clicks, ClickStatistics, TransferMatrix,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, Mode};
use crate::error::{CliError, CliResult};
use crate::table::{Cell, Table};

/// Dead-time loss below which cw points count as linear by default.
pub const CW_LINEAR_LOSS: f64 = 0.002;

pub const CW_HEADER: [&str; 11] = [
    "x",
    "naive_rate_hz",
    "dead_time_s",
    "dark_rate_hz",
    "slot_width_s",
    "duration_s",
    "seed",
    "clicks",
    "rate_hz",
    "stderr_hz",
    "correction",
];

pub const TMD_HEADER: [&str; 7] = [
    "transmission",
    "mean_clicks_raw",
    "mean_clicks_deconvolved",
    "q_raw",
    "q_deconvolved",
    "mean_clicks_model",
    "negative_mass",
];

fn sim_options(config: &ExperimentConfig, shards: Option<usize>) -> SimOptions {
    match shards.or(config.sim.shards) {
        Some(n) => SimOptions::default().with_shards(n),
        None => SimOptions::default(),
    }
}

fn pulsed_header() -> Vec<String> {
    std::iter::once("x")
        .chain(CSV_HEADER.split(','))
        .chain(std::iter::once("model_rate_hz"))
        .map(str::to_string)
        .collect()
}

fn pulsed_row(x: f64, cfg: &PulseTrainConfig, sim: &SimResult) -> CliResult<Vec<Cell>> {
    // efficiency is already folded into mu_per_pulse
    let params = DetectorParams::new(1.0, cfg.dark_rate_hz, cfg.dead_time_s)?;
    let model = corrected_pulsed_rate(cfg.f_rep_hz, &params, (-cfg.mu_per_pulse).exp())?;
    Ok(vec![
        x.into(),
        cfg.f_rep_hz.into(),
        cfg.mu_per_pulse.into(),
        cfg.dead_time_s.into(),
        cfg.dark_rate_hz.into(),
        cfg.duration_s.into(),
        cfg.seed.into(),
        sim.clicks.into(),
        sim.count_rate.into(),
        sim.stderr_rate.into(),
        model.rate.into(),
    ])
}

/// One row per sweep point. Every point uses the configured seed.
pub fn simulate(config: &ExperimentConfig, shards: Option<usize>) -> CliResult<Table> {
    config.validate()?;
    let options = sim_options(config, shards);
    let xs = config.source.sweep.values()?;
    let det = &config.detector;
    let seed = config.sim.seed;
    match config.mode {
        Mode::Cw => {
            let slot = config
                .sim
                .slot_width_s
                .unwrap_or_else(|| default_cw_slot_width(det.dead_time));
            let mut table = Table::new(&CW_HEADER);
            for &rate in &xs {
                let naive = det.eta_apd * rate + det.dark_rate;
                let duration = match (config.sim.target_clicks, config.sim.duration_s) {
                    (Some(n), _) if naive > 0.0 => n / naive,
                    (_, Some(d)) => d,
                    _ => {
                        return Err(CliError::Config(format!(
                            "point at {rate} Hz has no light and no sim.duration_s"
                        )))
                    }
                };
                let sim = simulate_cw_with(rate, slot, det, duration, seed, &options)?;
                let correction = if sim.count_rate > 0.0 {
                    naive / sim.count_rate
                } else {
                    f64::NAN
                };
                table.push(vec![
                    rate.into(),
                    naive.into(),
                    det.dead_time.into(),
                    det.dark_rate.into(),
                    slot.into(),
                    duration.into(),
                    seed.into(),
                    sim.clicks.into(),
                    sim.count_rate.into(),
                    sim.stderr_rate.into(),
                    correction.into(),
                ]);
            }
            Ok(table)
        }
        Mode::PulsedConstantFrequency | Mode::PulsedConstantEnergy => {
            let mu_full = config.mu_at_full_transmission()?;
            let duration = config.sim.duration_s.expect("validated");
            let mut table = Table::new(&pulsed_header());
            for &x in &xs {
                let (f_rep, mu) = match config.mode {
                    Mode::PulsedConstantFrequency => {
                        (config.source.f_rep_hz.expect("validated"), mu_full * x)
                    }
                    _ => (x, mu_full),
                };
                let cfg = PulseTrainConfig {
                    f_rep_hz: f_rep,
                    mu_per_pulse: mu,
                    dead_time_s: det.dead_time,
                    dark_rate_hz: det.dark_rate,
                    duration_s: duration,
                    seed,
                };
                let sim = simulate_pulsed_with(&cfg, &options)?;
                table.push(pulsed_row(x, &cfg, &sim)?);
            }
            Ok(table)
        }
        Mode::Tmd => tmd(config, None),
    }
}

/// Click statistics per transmission, raw and deconvolved. Without `data`
/// the statistics are computed exactly for coherent light.
pub fn tmd(config: &ExperimentConfig, data: Option<&Path>) -> CliResult<Table> {
    config.validate()?;
    let tmd = config
        .tmd
        .as_ref()
        .ok_or_else(|| CliError::Config("tmd command requires a tmd section".into()))?;
    let network = tmd.network()?;
    let n_bins = network.n_bins();
    let f_rep = config.source.f_rep_hz.unwrap_or(1.0);
    let det = &config.detector;
    let dark_per_bin = det.dark_rate / f_rep / n_bins as f64;

    let measured: Vec<(f64, ClickStatistics)> = match data {
        Some(path) => read_click_histograms(path, n_bins)?,
        None => {
            let rho = coherent_distribution_auto(tmd.mu_eff)?;
            let n_max = rho.n_max();
            let wide = convolution_matrix(&network, n_max)?;
            config
                .source
                .sweep
                .values()?
                .into_iter()
                .map(|t| {
                    let p = forward_click_statistics(&rho, &wide, &loss_matrix(t, n_max)?)?;
                    Ok((t, with_dark_clicks(&p, dark_per_bin)?))
                })
                .collect::<CliResult<_>>()?
        }
    };

    let square = convolution_matrix(&network, n_bins)?;
    let mut table = Table::new(&TMD_HEADER);
    for (t, p) in measured {
        let loss = if tmd.deconvolve_loss {
            loss_matrix(t, n_bins)?
        } else {
            TransferMatrix::identity(n_bins + 1)
        };
        let (mean_dec, q_dec, negative) = match deconvolve(&p, &square, &loss) {
            Ok(rho) => (
                rho.mean(),
                rho.mandel_q().unwrap_or(f64::NAN),
                rho.negative_mass,
            ),
            Err(e) => {
                log::warn!("transmission {t}: {e}");
                (f64::NAN, f64::NAN, f64::NAN)
            }
        };
        let model = expected_mean_clicks(t * tmd.mu_eff, n_bins, det.dark_rate, f_rep)?;
        table.push(vec![
            t.into(),
            p.mean().into(),
            mean_dec.into(),
            p.mandel_q().unwrap_or(f64::NAN).into(),
            q_dec.into(),
            model.into(),
            negative.into(),
        ]);
    }
    Ok(table)
}

/// Reads rows of `transmission` (or `x`) plus click-count columns
/// `m0..mN`, holding counts or probabilities.
pub fn read_click_histograms(path: &Path, n_bins: usize) -> CliResult<Vec<(f64, ClickStatistics)>> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let t_col = find("transmission")
        .or_else(|| find("x"))
        .ok_or_else(|| CliError::Config("click data needs a transmission column".into()))?;
    let m_cols: Vec<usize> = (0..=n_bins)
        .map(|m| {
            find(&format!("m{m}"))
                .ok_or_else(|| CliError::Config(format!("click data lacks column m{m}")))
        })
        .collect::<CliResult<_>>()?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let t = parse_field(&record, t_col)?;
        let raw: Vec<f64> = m_cols
            .iter()
            .map(|&c| parse_field(&record, c))
            .collect::<CliResult<_>>()?;
        let total: f64 = raw.iter().sum();
        if total.is_nan() || total <= 0.0 || raw.iter().any(|&v| v < 0.0) {
            return Err(CliError::Config(format!(
                "click histogram at t = {t} must be non-negative and non-empty"
            )));
        }
        out.push((
            t,
            ClickStatistics::new(raw.iter().map(|v| v / total).collect())?,
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FitModel {
    Linear,
    Saturation,
    MeanClicks,
    /// Saturation fit, then a linear fit over its linear window.
    LinearWindow,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum FitReport {
    Single(FitResult),
    Windowed {
        linear: FitResult,
        saturation: FitResult,
    },
}

impl FitReport {
    pub fn fits(&self) -> Vec<&FitResult> {
        match self {
            FitReport::Single(f) => vec![f],
            FitReport::Windowed { linear, saturation } => vec![linear, saturation],
        }
    }

    /// One row per fitted parameter.
    pub fn to_table(&self) -> Table {
        let mut table = Table::new(&["model", "param", "value", "err", "converged"]);
        for fit in self.fits() {
            for (name, &value) in &fit.params {
                let err = fit.err(name).unwrap_or(f64::NAN);
                table.push(vec![
                    fit.model.as_str().into(),
                    name.as_str().into(),
                    value.into(),
                    err.into(),
                    u64::from(fit.converged).into(),
                ]);
            }
        }
        table
    }
}

pub fn fit(
    records: &[SweepRecord],
    model: FitModel,
    f_rep: Option<f64>,
    bins: Option<usize>,
) -> CliResult<FitReport> {
    let need_f = || f_rep.ok_or_else(|| CliError::Config("this model needs --f-rep".into()));
    Ok(match model {
        FitModel::Linear => FitReport::Single(fit_linear(records)?),
        FitModel::Saturation => FitReport::Single(fit_saturation(records, need_f()?)?),
        FitModel::MeanClicks => {
            let n = bins.ok_or_else(|| CliError::Config("mean-clicks needs --bins".into()))?;
            FitReport::Single(fit_mean_clicks(records, n)?)
        }
        FitModel::LinearWindow => {
            let (linear, saturation) = fit_linear_window(records, need_f()?)?;
            FitReport::Windowed { linear, saturation }
        }
    })
}

/// Column names used when reading sweep records.
#[derive(Debug, Clone)]
pub struct Columns {
    pub x: String,
    pub y: String,
    /// Used when present; an explicitly requested column must exist.
    pub y_err: Option<String>,
    pub n_samples: Option<String>,
}

impl Default for Columns {
    fn default() -> Self {
        Self {
            x: "x".into(),
            y: "y".into(),
            y_err: None,
            n_samples: None,
        }
    }
}

fn csv_reader(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    let file =
        std::fs::File::open(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_field(record: &csv::StringRecord, col: usize) -> CliResult<f64> {
    let raw = record
        .get(col)
        .ok_or_else(|| CliError::Config(format!("short CSV row: {record:?}")))?;
    raw.parse()
        .map_err(|_| CliError::Config(format!("not a number: {raw:?}")))
}

pub fn read_records(path: &Path, columns: &Columns) -> CliResult<Vec<SweepRecord>> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required =
        |name: &str| find(name).ok_or_else(|| CliError::Config(format!("missing column {name:?}")));
    let x = required(&columns.x)?;
    let y = required(&columns.y)?;
    let y_err = match &columns.y_err {
        Some(name) => Some(required(name)?),
        None => find("y_err"),
    };
    let n_samples = match &columns.n_samples {
        Some(name) => Some(required(name)?),
        None => find("n_samples"),
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut r = SweepRecord::new(parse_field(&record, x)?, parse_field(&record, y)?);
        if let Some(c) = y_err {
            r.y_err = Some(parse_field(&record, c)?);
        }
        if let Some(c) = n_samples {
            let v = parse_field(&record, c)?;
            if !(v >= 0.0 && v.fract() == 0.0) {
                return Err(CliError::Config(format!(
                    "n_samples must be a non-negative integer, got {v}"
                )));
            }
            r.n_samples = Some(v as u64);
        }
        out.push(r);
    }
    if out.is_empty() {
        return Err(CliError::Config(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    Ok(out)
}

/// How the linear reference for a correction table is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearReference {
    /// Records with `x <= max_x`.
    MaxX(f64),
    /// Linear window of a saturation fit at this repetition rate.
    Saturation { f_rep: f64 },
}

pub const CORRECTION_HEADER: [&str; 4] = ["x", "rate_hz", "predicted_hz", "correction"];

pub fn correction_from_records(
    records: &[SweepRecord],
    reference: LinearReference,
) -> CliResult<(Table, FitResult)> {
    let linear = match reference {
        LinearReference::MaxX(max_x) => {
            let window: Vec<_> = records.iter().copied().filter(|r| r.x <= max_x).collect();
            fit_linear(&window)?
        }
        LinearReference::Saturation { f_rep } => fit_linear_window(records, f_rep)?.0,
    };
    let mut table = Table::new(&CORRECTION_HEADER);
    for e in correction_table(records, &linear)? {
        table.push(vec![
            e.x.into(),
            e.measured_rate.into(),
            e.predicted_rate.into(),
            e.correction.into(),
        ]);
    }
    Ok((table, linear))
}

/// Simulates the configured sweep and tabulates its correction factors.
pub fn correction_from_config(
    config: &ExperimentConfig,
    shards: Option<usize>,
    max_x: Option<f64>,
) -> CliResult<(Table, FitResult)> {
    let sim = simulate(config, shards)?;
    let (x_name, reference) = match config.mode {
        Mode::Cw => (
            "naive_rate_hz",
            LinearReference::MaxX(max_x.unwrap_or(CW_LINEAR_LOSS / config.detector.dead_time)),
        ),
        Mode::PulsedConstantFrequency => (
            "x",
            match max_x {
                Some(m) => LinearReference::MaxX(m),
                None => LinearReference::Saturation {
                    f_rep: config.source.f_rep_hz.expect("validated"),
                },
            },
        ),
        Mode::PulsedConstantEnergy => (
            "x",
            LinearReference::MaxX(max_x.ok_or_else(|| {
                CliError::Config(
                    "pulsed-constant-energy correction tables need --linear-max-x".into(),
                )
            })?),
        ),
        Mode::Tmd => {
            return Err(CliError::Config(
                "correction tables are not defined for tmd mode".into(),
            ))
        }
    };
    let float_col = |name: &str| -> Vec<f64> {
        sim.column(name)
            .expect("known column")
            .iter()
            .map(|c| c.as_f64().expect("numeric column"))
            .collect()
    };
    let records: Vec<SweepRecord> = float_col(x_name)
        .into_iter()
        .zip(float_col("rate_hz"))
        .map(|(x, y)| SweepRecord::new(x, y))
        .collect();
    correction_from_records(&records, reference)
}
