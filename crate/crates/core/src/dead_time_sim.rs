//! Event-driven Monte-Carlo of a non-paralyzable binary detector.
//!
//! The pulse train is a grid of slots with period `1 / f_rep`. Each slot
//! carries a candidate click with probability `1 - exp(-mu_per_pulse)`; dark
//! events form a homogeneous Poisson process on top. A candidate is
//! registered only if the detector has recovered from the previous
//! registered click (arrivals during the dead time are dropped and do not
//! extend it). A cw source is the same grid with a very fine slot.
//!
//! # Random streams
//!
//! The pulse grid is cut into fixed blocks whose length depends only on the
//! configuration. Block `b` draws its candidate slots from a ChaCha8 stream
//! keyed by `seed` with stream id `2b` and its dark events from stream id
//! `2b + 1`. Candidate events therefore never depend on detector state or on
//! how blocks are grouped into shards.
//!
//! Shards are contiguous runs of blocks scanned in parallel, each assuming an
//! idle detector at its start. A sequential pass then replays the head of
//! each shard with the true incoming dead-time state until both scans
//! register the same event, after which they coincide. The merged result is
//! identical for every shard count.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apd_model::{blocked_slots, correction_factor, DetectorParams};
use crate::error::{check_finite_nonneg, check_positive, check_unit_interval, Error, Result};

/// Expected number of candidate events per block.
const EVENTS_PER_BLOCK: f64 = 4096.0;
const MIN_BLOCK_PULSES: u64 = 64;
/// Upper bound on expected candidate events for one run.
pub const MAX_EXPECTED_EVENTS: f64 = 2e10;
/// Upper bound on retained click timestamps.
pub const MAX_RETAINED_EVENTS: f64 = 2e8;
const MAX_PULSES: f64 = 4e18;
const MAX_HISTOGRAM_BINS: usize = 1 << 24;

/// Default cw slot width as a fraction of the dead time.
pub const CW_SLOT_FRACTION: f64 = 1e-3;
/// Coarsest cw slot width allowed, as a fraction of the dead time.
pub const CW_MAX_SLOT_FRACTION: f64 = 1e-2;

/// CSV header of [`write_csv_row`].
pub const CSV_HEADER: &str =
    "f_rep_hz,mu_per_pulse,dead_time_s,dark_rate_hz,duration_s,seed,clicks,rate_hz,stderr_hz";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTrainConfig {
    pub f_rep_hz: f64,
    /// Mean photons per pulse with all efficiencies folded in.
    pub mu_per_pulse: f64,
    pub dead_time_s: f64,
    pub dark_rate_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl PulseTrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("f_rep_hz", self.f_rep_hz)?;
        if !(self.mu_per_pulse >= 0.0) {
            return Err(Error::Domain {
                name: "mu_per_pulse",
                value: self.mu_per_pulse,
                expected: ">= 0",
            });
        }
        check_positive("dead_time_s", self.dead_time_s)?;
        check_finite_nonneg("dark_rate_hz", self.dark_rate_hz)?;
        check_finite_nonneg("duration_s", self.duration_s)
    }

    /// Per-pulse click probability before dead-time losses.
    pub fn p_gamma(&self) -> f64 {
        -(-self.mu_per_pulse).exp_m1()
    }

    pub fn rep_period(&self) -> f64 {
        1.0 / self.f_rep_hz
    }

    pub fn n_pulses(&self) -> u64 {
        (self.duration_s * self.f_rep_hz * (1.0 + 1e-12)).floor() as u64
    }

    /// `mu_per_pulse` giving click probability `p_gamma`.
    pub fn mu_for_p_gamma(p_gamma: f64) -> f64 {
        -(-p_gamma).ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Number of shards (parallel work units). Does not affect results.
    pub shards: usize,
    pub retain_events: bool,
    /// Probability that a registered click re-triggers the detector as soon
    /// as it recovers.
    pub afterpulse_probability: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            shards: rayon::current_num_threads(),
            retain_events: false,
            afterpulse_probability: 0.0,
        }
    }
}

impl SimOptions {
    pub fn with_shards(mut self, shards: usize) -> Self {
        self.shards = shards;
        self
    }

    pub fn retaining_events(mut self) -> Self {
        self.retain_events = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub clicks: u64,
    pub pulses: u64,
    pub duration_s: f64,
    pub count_rate: f64,
    pub stderr_rate: f64,
    /// Registered click times in seconds, ascending.
    pub event_times: Option<Vec<f64>>,
}

impl SimResult {
    fn empty(retain: bool) -> Self {
        Self {
            clicks: 0,
            pulses: 0,
            duration_s: 0.0,
            count_rate: 0.0,
            stderr_rate: 0.0,
            event_times: retain.then(Vec::new),
        }
    }

    fn from_counts(clicks: u64, pulses: u64, duration_s: f64, times: Option<Vec<f64>>) -> Self {
        let c = clicks as f64;
        // binomial when clicks are a sizable fraction of pulses, Poisson otherwise
        let frac = if pulses > 0 {
            (c / pulses as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let var = c * (1.0 - frac);
        Self {
            clicks,
            pulses,
            duration_s,
            count_rate: c / duration_s,
            stderr_rate: var.sqrt() / duration_s,
            event_times: times,
        }
    }
}

/// Geometry shared by every block of one run.
#[derive(Debug, Clone, Copy)]
struct Layout {
    seed: u64,
    period: f64,
    duration: f64,
    mu: f64,
    dark_rate: f64,
    n_pulses: u64,
    block_pulses: u64,
    n_blocks: u64,
}

impl Layout {
    fn new(config: &PulseTrainConfig) -> Result<Self> {
        let period = config.rep_period();
        let pulses_f = config.duration_s * config.f_rep_hz;
        if pulses_f > MAX_PULSES {
            return Err(Error::Capacity(format!(
                "{pulses_f:e} pulses exceed the supported grid size"
            )));
        }
        let n_pulses = config.n_pulses();
        let p = config.p_gamma();
        let expected = n_pulses as f64 * p + config.dark_rate_hz * config.duration_s;
        if expected > MAX_EXPECTED_EVENTS {
            return Err(Error::Capacity(format!(
                "{expected:e} expected events exceed the limit of {MAX_EXPECTED_EVENTS:e}"
            )));
        }
        let per_pulse = p + config.dark_rate_hz * period;
        let block_pulses = if n_pulses == 0 {
            1
        } else if per_pulse > 0.0 {
            let b = (EVENTS_PER_BLOCK / per_pulse).ceil();
            if b >= n_pulses as f64 {
                n_pulses
            } else {
                (b as u64).max(MIN_BLOCK_PULSES).min(n_pulses)
            }
        } else {
            n_pulses
        };
        let n_blocks = if n_pulses == 0 {
            1
        } else {
            n_pulses.div_ceil(block_pulses)
        };
        Ok(Self {
            seed: config.seed,
            period,
            duration: config.duration_s,
            mu: config.mu_per_pulse,
            dark_rate: config.dark_rate_hz,
            n_pulses,
            block_pulses,
            n_blocks,
        })
    }

    fn pulse_time(&self, idx: u64) -> f64 {
        idx as f64 * self.period
    }

    fn block_pulse_range(&self, block: u64) -> (u64, u64) {
        let start = block * self.block_pulses;
        (
            start.min(self.n_pulses),
            ((block + 1) * self.block_pulses).min(self.n_pulses),
        )
    }

    fn block_time_range(&self, block: u64) -> (f64, f64) {
        let start = if block == 0 {
            0.0
        } else {
            self.pulse_time(block * self.block_pulses)
        };
        let end = if block + 1 == self.n_blocks {
            self.duration
        } else {
            self.pulse_time((block + 1) * self.block_pulses)
        };
        (start, end)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Pulse(u64),
    Dark { block: u64, seq: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    source: Source,
}

/// Candidate events of one block in time order.
struct BlockEvents {
    layout: Layout,
    block: u64,
    pulse_rng: ChaCha8Rng,
    dark_rng: ChaCha8Rng,
    pulse_cursor: u64,
    pulse_end: u64,
    next_pulse: Option<u64>,
    dark_t: f64,
    dark_end: f64,
    dark_seq: u64,
    next_dark: Option<f64>,
}

impl BlockEvents {
    fn new(layout: Layout, block: u64) -> Self {
        let (pulse_cursor, pulse_end) = layout.block_pulse_range(block);
        let (dark_t, dark_end) = layout.block_time_range(block);
        let mut events = Self {
            layout,
            block,
            pulse_rng: stream_rng(layout.seed, 2 * block),
            dark_rng: stream_rng(layout.seed, 2 * block + 1),
            pulse_cursor,
            pulse_end,
            next_pulse: None,
            dark_t,
            dark_end,
            dark_seq: 0,
            next_dark: None,
        };
        events.next_pulse = events.draw_pulse();
        events.next_dark = events.draw_dark();
        events
    }

    // Geometric skip: with q = 1 - exp(-mu) the number of empty slots before
    // the next candidate is floor(E / mu), E ~ Exp(1).
    fn draw_pulse(&mut self) -> Option<u64> {
        if self.layout.mu <= 0.0 || self.pulse_cursor >= self.pulse_end {
            return None;
        }
        let e: f64 = self.pulse_rng.sample(Exp1);
        let skip = (e / self.layout.mu).floor();
        let remaining = (self.pulse_end - self.pulse_cursor) as f64;
        if skip >= remaining {
            self.pulse_cursor = self.pulse_end;
            return None;
        }
        let idx = self.pulse_cursor + skip as u64;
        self.pulse_cursor = idx + 1;
        Some(idx)
    }

    fn draw_dark(&mut self) -> Option<f64> {
        if self.layout.dark_rate <= 0.0 {
            return None;
        }
        let e: f64 = self.dark_rng.sample(Exp1);
        self.dark_t += e / self.layout.dark_rate;
        (self.dark_t < self.dark_end).then_some(self.dark_t)
    }
}

impl Iterator for BlockEvents {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        let pulse_time = self.next_pulse.map(|i| self.layout.pulse_time(i));
        match (pulse_time, self.next_dark) {
            (None, None) => None,
            (Some(tp), dark) if dark.is_none_or(|td| tp <= td) => {
                let idx = self.next_pulse.take().expect("pulse present");
                self.next_pulse = self.draw_pulse();
                Some(Event {
                    time: tp,
                    source: Source::Pulse(idx),
                })
            }
            (_, Some(td)) => {
                let seq = self.dark_seq;
                self.dark_seq += 1;
                self.next_dark = self.draw_dark();
                Some(Event {
                    time: td,
                    source: Source::Dark {
                        block: self.block,
                        seq,
                    },
                })
            }
            (Some(_), None) => unreachable!(),
        }
    }
}

fn shard_events(layout: Layout, blocks: std::ops::Range<u64>) -> impl Iterator<Item = Event> {
    blocks.flat_map(move |b| BlockEvents::new(layout, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum LastClick {
    Pulse { idx: u64, time: f64 },
    Other { time: f64 },
}

impl LastClick {
    fn time(&self) -> f64 {
        match *self {
            LastClick::Pulse { time, .. } | LastClick::Other { time } => time,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// Counter-based uniform in [0, 1) for the afterpulse decision of an event.
fn afterpulse_uniform(seed: u64, source: Source, chain: u64) -> f64 {
    let (tag, a, b) = match source {
        Source::Pulse(i) => (1u64, i, 0),
        Source::Dark { block, seq } => (2u64, block, seq),
    };
    let h = splitmix64(seed ^ splitmix64(tag ^ splitmix64(a ^ splitmix64(b ^ splitmix64(chain)))));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Dead-time bookkeeping over a time-ordered event stream.
#[derive(Debug, Clone)]
struct Scanner {
    dead_time: f64,
    blocked_slots: u64,
    afterpulse: f64,
    seed: u64,
    end: f64,
    last: Option<LastClick>,
    clicks: u64,
    times: Option<Vec<f64>>,
}

impl Scanner {
    fn new(config: &PulseTrainConfig, options: &SimOptions, last: Option<LastClick>) -> Self {
        Self {
            dead_time: config.dead_time_s,
            blocked_slots: blocked_slots(config.dead_time_s, config.rep_period()),
            afterpulse: options.afterpulse_probability,
            seed: config.seed,
            end: config.duration_s,
            last,
            clicks: 0,
            times: options.retain_events.then(Vec::new),
        }
    }

    fn is_live(&self, event: &Event) -> bool {
        match (self.last, event.source) {
            (None, _) => true,
            (Some(LastClick::Pulse { idx, .. }), Source::Pulse(i)) => i - idx > self.blocked_slots,
            (Some(last), _) => event.time - last.time() > self.dead_time,
        }
    }

    fn register(&mut self, time: f64, last: LastClick) {
        self.last = Some(last);
        self.clicks += 1;
        if let Some(times) = self.times.as_mut() {
            times.push(time);
        }
    }

    /// Returns whether the event was registered.
    fn offer(&mut self, event: &Event) -> bool {
        if !self.is_live(event) {
            return false;
        }
        let last = match event.source {
            Source::Pulse(idx) => LastClick::Pulse {
                idx,
                time: event.time,
            },
            Source::Dark { .. } => LastClick::Other { time: event.time },
        };
        self.register(event.time, last);
        if self.afterpulse > 0.0 {
            let mut chain = 0;
            let mut t = event.time;
            while afterpulse_uniform(self.seed, event.source, chain) < self.afterpulse {
                let prev = t;
                t += self.dead_time;
                while t - prev < self.dead_time {
                    t = t.next_up();
                }
                if t >= self.end {
                    break;
                }
                self.register(t, LastClick::Other { time: t });
                chain += 1;
            }
        }
        true
    }
}

struct ShardOutcome {
    blocks: std::ops::Range<u64>,
    clicks: u64,
    last: Option<LastClick>,
    times: Option<Vec<f64>>,
}

/// Simulates a pulse train with default options.
pub fn simulate_pulsed(config: &PulseTrainConfig) -> Result<SimResult> {
    simulate_pulsed_with(config, &SimOptions::default())
}

pub fn simulate_pulsed_with(config: &PulseTrainConfig, options: &SimOptions) -> Result<SimResult> {
    config.validate()?;
    check_unit_interval("afterpulse_probability", options.afterpulse_probability)?;
    if options.afterpulse_probability >= 1.0 {
        return Err(Error::Domain {
            name: "afterpulse_probability",
            value: options.afterpulse_probability,
            expected: "< 1",
        });
    }
    if config.duration_s == 0.0 {
        return Ok(SimResult::empty(options.retain_events));
    }
    let layout = Layout::new(config)?;
    if options.retain_events {
        let expected =
            layout.n_pulses as f64 * config.p_gamma() + config.dark_rate_hz * config.duration_s;
        if expected > MAX_RETAINED_EVENTS {
            return Err(Error::Capacity(format!(
                "retaining {expected:e} event times exceeds {MAX_RETAINED_EVENTS:e}"
            )));
        }
    }

    let shards = (options.shards.max(1) as u64).min(layout.n_blocks);
    let bounds: Vec<std::ops::Range<u64>> = (0..shards)
        .map(|s| (s * layout.n_blocks / shards)..((s + 1) * layout.n_blocks / shards))
        .collect();

    let outcomes: Vec<ShardOutcome> = bounds
        .into_par_iter()
        .map(|blocks| {
            let mut scanner = Scanner::new(config, options, None);
            for event in shard_events(layout, blocks.clone()) {
                scanner.offer(&event);
            }
            ShardOutcome {
                blocks,
                clicks: scanner.clicks,
                last: scanner.last,
                times: scanner.times,
            }
        })
        .collect();

    let mut clicks = 0u64;
    let mut state: Option<LastClick> = None;
    let mut times = options.retain_events.then(Vec::new);
    for outcome in outcomes {
        let Some(incoming) = state else {
            clicks += outcome.clicks;
            state = outcome.last.or(state);
            if let (Some(all), Some(t)) = (times.as_mut(), outcome.times) {
                all.extend(t);
            }
            continue;
        };
        // replay the shard head with both the idle and the true start state
        let mut idle = Scanner::new(config, options, None);
        let mut actual = Scanner::new(config, options, Some(incoming));
        let mut synced = false;
        for event in shard_events(layout, outcome.blocks.clone()) {
            let a = actual.offer(&event);
            let b = idle.offer(&event);
            if a && b {
                synced = true;
                break;
            }
        }
        if synced {
            clicks += actual.clicks + (outcome.clicks - idle.clicks);
            state = outcome.last;
            if let (Some(all), Some(head), Some(rest)) =
                (times.as_mut(), actual.times, outcome.times)
            {
                all.extend(head);
                all.extend_from_slice(&rest[idle.clicks as usize..]);
            }
        } else {
            clicks += actual.clicks;
            state = actual.last;
            if let (Some(all), Some(head)) = (times.as_mut(), actual.times) {
                all.extend(head);
            }
        }
    }

    Ok(SimResult::from_counts(
        clicks,
        layout.n_pulses,
        config.duration_s,
        times,
    ))
}

/// Slot width used for cw runs unless overridden.
pub fn default_cw_slot_width(dead_time: f64) -> f64 {
    dead_time * CW_SLOT_FRACTION
}

/// cw illumination as a pulse train with a very fine slot grid. The mean
/// photon number per slot is `eta * rate * slot`, which keeps the optical
/// power fixed while the slot shrinks.
pub fn simulate_cw(
    target_power_rate: f64,
    slot_width: f64,
    params: &DetectorParams,
    duration: f64,
    seed: u64,
) -> Result<SimResult> {
    simulate_cw_with(
        target_power_rate,
        slot_width,
        params,
        duration,
        seed,
        &SimOptions::default(),
    )
}

pub fn simulate_cw_with(
    target_power_rate: f64,
    slot_width: f64,
    params: &DetectorParams,
    duration: f64,
    seed: u64,
    options: &SimOptions,
) -> Result<SimResult> {
    params.validate()?;
    check_finite_nonneg("target_power_rate", target_power_rate)?;
    check_positive("slot_width", slot_width)?;
    if slot_width > params.dead_time * CW_MAX_SLOT_FRACTION * (1.0 + 1e-12) {
        return Err(Error::InvalidConfig(format!(
            "cw slot width {slot_width:e} s is coarser than dead_time/100 = {:e} s",
            params.dead_time * CW_MAX_SLOT_FRACTION
        )));
    }
    let config = cw_config(target_power_rate, slot_width, params, duration, seed);
    simulate_pulsed_with(&config, options)
}

/// Pulse-train configuration equivalent to a cw source.
pub fn cw_config(
    target_power_rate: f64,
    slot_width: f64,
    params: &DetectorParams,
    duration: f64,
    seed: u64,
) -> PulseTrainConfig {
    PulseTrainConfig {
        f_rep_hz: 1.0 / slot_width,
        mu_per_pulse: params.eta_apd * target_power_rate * slot_width,
        dead_time_s: params.dead_time,
        dark_rate_hz: params.dark_rate,
        duration_s: duration,
        seed,
    }
}

/// Histogram of gaps between consecutive registered clicks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapHistogram {
    pub bin_width: f64,
    /// `counts[k]` holds gaps in `[k * bin_width, (k + 1) * bin_width)`.
    pub counts: Vec<u64>,
    /// Gaps beyond the last representable bin.
    pub overflow: u64,
}

impl GapHistogram {
    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    pub fn first_occupied_bin(&self) -> Option<usize> {
        self.counts.iter().position(|&c| c > 0)
    }

    /// Left edge of the first occupied bin: a dead-time estimate.
    pub fn dead_time_estimate(&self) -> Option<f64> {
        self.first_occupied_bin().map(|k| k as f64 * self.bin_width)
    }

    /// Centre of the most populated bin.
    pub fn modal_gap(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let (k, _) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        Some((k as f64 + 0.5) * self.bin_width)
    }
}

pub fn interarrival_histogram(result: &SimResult, bin_width: f64) -> Result<GapHistogram> {
    check_positive("bin_width", bin_width)?;
    let times = result
        .event_times
        .as_ref()
        .ok_or(Error::EventsNotRetained)?;
    let mut counts: Vec<u64> = Vec::new();
    let mut overflow = 0;
    for pair in times.windows(2) {
        let k = ((pair[1] - pair[0]) / bin_width).floor();
        if k >= MAX_HISTOGRAM_BINS as f64 {
            overflow += 1;
            continue;
        }
        let k = k as usize;
        if k >= counts.len() {
            counts.resize(k + 1, 0);
        }
        counts[k] += 1;
    }
    Ok(GapHistogram {
        bin_width,
        counts,
        overflow,
    })
}

/// How long each point of a cw correction curve is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exposure {
    /// Same simulated duration, in seconds, for every point.
    Fixed(f64),
    /// Duration chosen per point so that the naive rate yields this many
    /// clicks, giving comparable relative precision across the curve.
    Clicks(f64),
}

impl Exposure {
    fn duration_for(&self, naive_rate: f64) -> Result<f64> {
        match *self {
            Exposure::Fixed(d) => {
                check_finite_nonneg("duration", d)?;
                Ok(d)
            }
            Exposure::Clicks(n) => {
                check_positive("target clicks", n)?;
                check_positive("naive rate", naive_rate)?;
                Ok(n / naive_rate)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CwCorrectionPoint {
    pub target_rate: f64,
    pub naive_rate: f64,
    pub measured_rate: f64,
    pub stderr_rate: f64,
    pub duration_s: f64,
    pub correction: f64,
}

/// Simulated cw correction factor `naive / measured` for each target rate,
/// where the naive rate is `eta * target + dark`.
pub fn correction_curve_cw(
    rates: &[f64],
    params: &DetectorParams,
    exposure: Exposure,
    seed: u64,
) -> Result<Vec<CwCorrectionPoint>> {
    correction_curve_cw_with(rates, params, exposure, seed, &SimOptions::default())
}

pub fn correction_curve_cw_with(
    rates: &[f64],
    params: &DetectorParams,
    exposure: Exposure,
    seed: u64,
    options: &SimOptions,
) -> Result<Vec<CwCorrectionPoint>> {
    if rates.is_empty() {
        return Err(Error::InvalidConfig("empty rate list".into()));
    }
    let slot = default_cw_slot_width(params.dead_time);
    rates
        .iter()
        .map(|&target| {
            let naive = params.eta_apd * target + params.dark_rate;
            let duration = exposure.duration_for(naive)?;
            let sim = simulate_cw_with(target, slot, params, duration, seed, options)?;
            let correction = correction_factor(naive, sim.count_rate)?;
            Ok(CwCorrectionPoint {
                target_rate: target,
                naive_rate: naive,
                measured_rate: sim.count_rate,
                stderr_rate: sim.stderr_rate,
                duration_s: duration,
                correction,
            })
        })
        .collect()
}

/// Writes one row under [`CSV_HEADER`].
pub fn write_csv_row<W: Write>(
    out: &mut W,
    config: &PulseTrainConfig,
    result: &SimResult,
) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        config.f_rep_hz,
        config.mu_per_pulse,
        config.dead_time_s,
        config.dark_rate_hz,
        config.duration_s,
        config.seed,
        result.clicks,
        result.count_rate,
        result.stderr_rate
    )
}
