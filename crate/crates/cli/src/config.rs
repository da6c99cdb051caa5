//! JSON experiment description.

use std::path::{Path, PathBuf};

use apdlab::apd_model::DetectorParams;
use apdlab::dead_time_sim::PulseTrainConfig;
use apdlab::tmd::SplittingNetwork;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Largest number of points a sweep may expand to.
pub const MAX_SWEEP_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Sweep of incident photon rate (Hz) under continuous illumination.
    Cw,
    /// Sweep of transmission at a fixed repetition rate.
    PulsedConstantFrequency,
    /// Sweep of repetition rate (Hz) at a fixed pulse energy.
    PulsedConstantEnergy,
    /// Sweep of transmission through a time-multiplexed detector.
    Tmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Sweep axis: an explicit list, a stepped range, or evenly spaced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sweep {
    Values {
        values: Vec<f64>,
    },
    Range {
        start: f64,
        stop: f64,
        step: f64,
    },
    Points {
        start: f64,
        stop: f64,
        points: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Sweep {
    pub fn values(&self) -> CliResult<Vec<f64>> {
        let out = match *self {
            Sweep::Values { ref values } => values.clone(),
            Sweep::Range { start, stop, step } => {
                if !(step > 0.0 && start.is_finite() && stop.is_finite()) {
                    return Err(CliError::Config(format!(
                        "sweep step must be positive and bounds finite (start {start}, stop {stop}, step {step})"
                    )));
                }
                let count = ((stop - start) / step + 1e-9).floor();
                if count < 0.0 {
                    return Err(CliError::Config(format!(
                        "empty sweep range {start}..{stop}"
                    )));
                }
                if count >= MAX_SWEEP_POINTS as f64 {
                    return Err(CliError::Config(format!(
                        "sweep has more than {MAX_SWEEP_POINTS} points"
                    )));
                }
                (0..=count as usize)
                    .map(|i| start + i as f64 * step)
                    .collect()
            }
            Sweep::Points {
                start,
                stop,
                points,
                log,
            } => {
                if points == 0 || points > MAX_SWEEP_POINTS {
                    return Err(CliError::Config(format!(
                        "sweep needs 1..={MAX_SWEEP_POINTS} points"
                    )));
                }
                if start > stop {
                    return Err(CliError::Config(format!(
                        "empty sweep range {start}..{stop}"
                    )));
                }
                if log && (start.is_nan() || start <= 0.0) {
                    return Err(CliError::Config("log sweep needs a positive start".into()));
                }
                let frac = |i: usize| {
                    if points == 1 {
                        0.0
                    } else {
                        i as f64 / (points - 1) as f64
                    }
                };
                (0..points)
                    .map(|i| {
                        if log {
                            start * (stop / start).powf(frac(i))
                        } else {
                            start + (stop - start) * frac(i)
                        }
                    })
                    .collect()
            }
        };
        if out.is_empty() {
            return Err(CliError::Config("sweep has no points".into()));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config("sweep values must be finite".into()));
        }
        if out.windows(2).any(|w| w[1] < w[0]) {
            return Err(CliError::Config("sweep values must be ascending".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub sweep: Sweep,
    #[serde(default)]
    pub f_rep_hz: Option<f64>,
    /// Mean photons per pulse at full transmission, before the detector
    /// efficiency.
    #[serde(default)]
    pub mu_per_pulse: Option<f64>,
    /// Per-pulse click probability at full transmission; replaces
    /// `mu_per_pulse` and already includes the detector efficiency.
    #[serde(default)]
    pub p_gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub duration_s: Option<f64>,
    /// cw only: simulate each point long enough for this many clicks.
    #[serde(default)]
    pub target_clicks: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub shards: Option<usize>,
    /// cw only: slot width of the simulation grid.
    #[serde(default)]
    pub slot_width_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmdConfig {
    pub stages: u32,
    /// Level-order splitter ratios; symmetric when omitted.
    #[serde(default)]
    pub ratios: Option<Vec<f64>>,
    #[serde(default)]
    pub base_delay_s: f64,
    /// Effective mean photon number at full transmission.
    pub mu_eff: f64,
    /// Also undo the loss matrix when deconvolving.
    #[serde(default)]
    pub deconvolve_loss: bool,
}

impl TmdConfig {
    pub fn network(&self) -> CliResult<SplittingNetwork> {
        let ratios = self
            .ratios
            .clone()
            .unwrap_or_else(|| vec![0.5; (1usize << self.stages.min(16)) - 1]);
        Ok(SplittingNetwork::new(
            self.stages,
            ratios,
            self.base_delay_s,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub detector: DetectorParams,
    pub source: SourceConfig,
    pub sim: SimConfig,
    #[serde(default)]
    pub tmd: Option<TmdConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.detector.validate()?;
        self.source.sweep.values()?;
        let need = |present: bool, what: &str| {
            if present {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "{:?} mode requires {what}",
                    self.mode
                )))
            }
        };
        match self.mode {
            Mode::Cw => {
                need(
                    self.sim.duration_s.is_some() || self.sim.target_clicks.is_some(),
                    "sim.duration_s or sim.target_clicks",
                )?;
            }
            Mode::PulsedConstantFrequency => {
                need(self.source.f_rep_hz.is_some(), "source.f_rep_hz")?;
                need(self.sim.duration_s.is_some(), "sim.duration_s")?;
                self.mu_at_full_transmission()?;
            }
            Mode::PulsedConstantEnergy => {
                need(self.sim.duration_s.is_some(), "sim.duration_s")?;
                self.mu_at_full_transmission()?;
            }
            Mode::Tmd => {
                let tmd = self
                    .tmd
                    .as_ref()
                    .ok_or_else(|| CliError::Config("tmd mode requires a tmd section".into()))?;
                tmd.network()?;
                if self.detector.dark_rate > 0.0 {
                    need(
                        self.source.f_rep_hz.is_some(),
                        "source.f_rep_hz when dark_rate_hz > 0",
                    )?;
                }
            }
        }
        if self.source.mu_per_pulse.is_some() && self.source.p_gamma.is_some() {
            return Err(CliError::Config(
                "give either source.mu_per_pulse or source.p_gamma".into(),
            ));
        }
        if self.sim.shards == Some(0) {
            return Err(CliError::Config("sim.shards must be at least 1".into()));
        }
        Ok(())
    }

    /// Effective mean photons per pulse at full transmission, with the
    /// detector efficiency folded in.
    pub fn mu_at_full_transmission(&self) -> CliResult<f64> {
        match (self.source.mu_per_pulse, self.source.p_gamma) {
            (Some(mu), None) if mu >= 0.0 && mu.is_finite() => Ok(self.detector.eta_apd * mu),
            (None, Some(p)) if (0.0..1.0).contains(&p) => Ok(PulseTrainConfig::mu_for_p_gamma(p)),
            (None, None) => Err(CliError::Config(format!(
                "{:?} mode requires source.mu_per_pulse or source.p_gamma",
                self.mode
            ))),
            _ => Err(CliError::Config(
                "source.mu_per_pulse must be >= 0 and source.p_gamma in [0, 1)".into(),
            )),
        }
    }
}
