//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use apdlab::apd_model::{effective_count_rate_coherent, expected_count_rate, DetectorParams};
use apdlab::calibrate::{fit_mean_clicks, fit_saturation, ExpSaturation, SweepRecord};
use apdlab::dead_time_sim::{correction_curve_cw, simulate_pulsed, Exposure, PulseTrainConfig};
use apdlab::photon_stats::{coherent_distribution, coherent_distribution_auto, CountDistribution};
use apdlab::tmd::{
    bin_probabilities, convolution_matrix, convolution_matrix_symmetric, deconvolve,
    forward_click_statistics, loss_matrix, splitting_ratio_sensitivity, SplittingNetwork,
    TransferMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DEAD: f64 = 53e-9;
/// Per-point runtime bound of the constant-frequency comparison.
const POINT_LIMIT_S: f64 = 10.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a, b, n)
        .into_iter()
        .map(|e| 10f64.powf(e))
        .collect()
}

/// Ordinary least squares; returns (slope, intercept, r_squared).
fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    (slope, intercept, 1.0 - ss_res / syy)
}

/// Enumerates all `N^n` assignments of photons to bins.
#[allow(clippy::needless_range_loop)]
fn brute_force(bins: &[f64], n_max: usize) -> TransferMatrix {
    let nb = bins.len();
    let mut rows = vec![vec![0.0; n_max + 1]; nb + 1];
    for n in 0..=n_max {
        for code in 0..nb.pow(n as u32) {
            let mut c = code;
            let mut prob = 1.0;
            let mut seen = 0u32;
            for _ in 0..n {
                prob *= bins[c % nb];
                seen |= 1 << (c % nb);
                c /= nb;
            }
            rows[seen.count_ones() as usize][n] += prob;
        }
    }
    TransferMatrix::from_rows(rows).unwrap()
}

fn saturation_fit_reproduction() -> Outcome {
    let (mu, dark, f_rep) = (0.836, 9.9e3, 1e6);
    let ts = logspace(-3.0, 0.0, 30);
    let clean: Vec<_> = ts
        .iter()
        .map(|&t| {
            SweepRecord::new(
                t,
                effective_count_rate_coherent(f_rep, mu * t, dark).unwrap(),
            )
        })
        .collect();
    let fit = fit_saturation(&clean, f_rep).unwrap();
    let rel_mu = (fit.param("mu_eff").unwrap() / mu - 1.0).abs();
    let rel_dark = (fit.param("dark_rate").unwrap() / dark - 1.0).abs();

    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<_> = ts
            .iter()
            .map(|&t| {
                let y = effective_count_rate_coherent(f_rep, mu * t, dark).unwrap();
                let z: f64 = rng.sample(StandardNormal);
                let noisy = y * (1.0 + 0.01 * z);
                SweepRecord::with_error(t, noisy, 0.01 * noisy)
            })
            .collect();
        let fit = fit_saturation(&data, f_rep).unwrap();
        worst = worst.max((fit.param("mu_eff").unwrap() - mu).abs());
    }
    outcome(
        rel_mu < 1e-6 && rel_dark < 1e-6 && worst <= 0.01,
        format!("noiseless rel err mu {rel_mu:.1e}, dark {rel_dark:.1e}; worst |dmu| over 100 seeds {worst:.4}"),
    )
}

fn constant_frequency_vs_analytic() -> Outcome {
    let params = DetectorParams::new(1.0, 0.0, DEAD).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [0.01, 0.1, 0.5] {
        let start = Instant::now();
        let cfg = PulseTrainConfig {
            f_rep_hz: 1e6,
            mu_per_pulse: PulseTrainConfig::mu_for_p_gamma(p),
            dead_time_s: DEAD,
            dark_rate_hz: 0.0,
            duration_s: 10.0,
            seed: 11,
        };
        let sim = simulate_pulsed(&cfg).unwrap();
        let expected = expected_count_rate(1e6, &params, 1.0 - p).unwrap();
        let z = (sim.count_rate - expected) / sim.stderr_rate;
        let secs = start.elapsed().as_secs_f64();
        pass &= sim.pulses == 10_000_000 && z.abs() <= 3.0 && secs < POINT_LIMIT_S;
        parts.push(format!(
            "p={p}: {:.1} vs {expected:.1} ({z:+.2} sigma, {secs:.2} s)",
            sim.count_rate
        ));
    }
    outcome(pass, parts.join("; "))
}

fn frequency_sweep_regimes() -> Outcome {
    let p = 0.05;
    let fs = linspace(0.5e6, 40e6, 80);
    let rates: Vec<f64> = fs
        .iter()
        .map(|&f| {
            let cfg = PulseTrainConfig {
                f_rep_hz: f,
                mu_per_pulse: PulseTrainConfig::mu_for_p_gamma(p),
                dead_time_s: DEAD,
                dark_rate_hz: 0.0,
                duration_s: 1.0,
                seed: 5,
            };
            simulate_pulsed(&cfg).unwrap().count_rate
        })
        .collect();
    let select = |lo: f64, hi: f64| -> (Vec<f64>, Vec<f64>) {
        fs.iter()
            .zip(&rates)
            .filter(|(&f, _)| f >= lo * (1.0 - 1e-12) && f <= hi * (1.0 + 1e-12))
            .map(|(&f, &r)| (f, r))
            .unzip()
    };
    let (x1, y1) = select(0.5e6, 15e6);
    let (x2, y2) = select(23e6, 36e6);
    let (s1, _, r1) = ols(&x1, &y1);
    let (s2, _, r2) = ols(&x2, &y2);
    let ratio = s2 / s1;
    let ratio_err = (ratio / (1.0 - p) - 1.0).abs();

    // the rate grows with f except where one more pulse fits in the dead time
    let drop_at = rates
        .windows(2)
        .position(|w| w[1] < w[0])
        .unwrap_or(rates.len() - 2);
    let break_f = 0.5 * (fs[drop_at] + fs[drop_at + 1]);
    let expected_break = 1.0 / DEAD;
    outcome(
        r1 > 0.9999 && r2 > 0.9999 && ratio_err <= 0.02 && (break_f - expected_break).abs() <= 0.5e6,
        format!(
            "R2 {r1:.6} / {r2:.6}; slope ratio {ratio:.4} ({:.2}% from 1-p); first break between {:.1} and {:.1} MHz (1/dead time {:.2} MHz)",
            100.0 * ratio_err,
            fs[drop_at] / 1e6,
            fs[drop_at + 1] / 1e6,
            expected_break / 1e6
        ),
    )
}

fn cw_correction_curve() -> Outcome {
    let params = DetectorParams::new(1.0, 0.0, DEAD).unwrap();
    let rates = [5e3, 25e3, 50e3, 100e3, 150e3, 200e3, 250e3, 300e3];
    let curve = correction_curve_cw(&rates, &params, Exposure::Clicks(4e6), 21).unwrap();
    let worst = curve
        .iter()
        .map(|pt| (pt.correction / (1.0 + pt.target_rate * DEAD) - 1.0).abs())
        .fold(0.0, f64::max);
    let monotone = curve.windows(2).all(|w| w[1].correction >= w[0].correction);
    let last = curve.last().unwrap();
    outcome(
        worst <= 2e-3 && monotone,
        format!(
            "worst relative deviation from 1 + R*T {worst:.1e}; monotone {monotone}; C({:.0} cnt/s measured) = {:.4}",
            last.measured_rate, last.correction
        ),
    )
}

fn convolution_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_dp: f64 = 0.0;
    for _ in 0..5 {
        let ratios: Vec<f64> = (0..7).map(|_| rng.random_range(0.05..0.95)).collect();
        let net = SplittingNetwork::new(3, ratios, 0.0).unwrap();
        let dp = convolution_matrix(&net, 6).unwrap();
        let bf = brute_force(&bin_probabilities(&net).unwrap(), 6);
        worst_dp = worst_dp.max(dp.max_abs_diff(&bf).unwrap());
    }
    let closed = convolution_matrix_symmetric(8, 8).unwrap();
    let bf_sym = brute_force(&[0.125; 8], 8);
    let dp_sym = convolution_matrix(&SplittingNetwork::symmetric(3), 8).unwrap();
    let worst_sym = closed
        .max_abs_diff(&bf_sym)
        .unwrap()
        .max(closed.max_abs_diff(&dp_sym).unwrap());
    outcome(
        worst_dp <= 1e-12 && worst_sym <= 1e-12,
        format!("DP vs enumeration {worst_dp:.1e} (5 random trees, n<=6); closed form vs enumeration and DP {worst_sym:.1e} (n<=8)"),
    )
}

fn deconvolution_round_trip() -> Outcome {
    let sym = SplittingNetwork::symmetric(3);
    let square = convolution_matrix(&sym, 8).unwrap();
    let identity = loss_matrix(1.0, 8).unwrap();
    let mut worst_trip: f64 = 0.0;
    let mut worst_q: f64 = 0.0;
    let mut raw_q = Vec::new();
    for mu in [0.1, 0.5, 1.0, 2.232, 3.0] {
        // representable part of the state, renormalized
        let truncated = coherent_distribution(mu, 8).unwrap();
        let total: f64 = truncated.probs().iter().sum();
        let rho = apdlab::photon_stats::PhotonNumberDistribution::new(
            truncated.probs().iter().map(|p| p / total).collect(),
        )
        .unwrap();
        for t in [1.0, 0.7] {
            let loss = loss_matrix(t, 8).unwrap();
            let p = forward_click_statistics(&rho, &square, &loss).unwrap();
            let back = deconvolve(&p, &square, &loss).unwrap();
            let err = back
                .probs
                .iter()
                .zip(rho.probs())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_trip = worst_trip.max(err);
        }

        let full = coherent_distribution_auto(mu).unwrap();
        let wide = convolution_matrix(&sym, full.n_max()).unwrap();
        let clicks =
            forward_click_statistics(&full, &wide, &loss_matrix(1.0, full.n_max()).unwrap())
                .unwrap();
        let restored = deconvolve(&clicks, &square, &identity).unwrap();
        worst_q = worst_q.max((restored.mandel_q().unwrap() - 1.0).abs());
        raw_q.push(clicks.mandel_q().unwrap());
    }
    let raw_ok = raw_q.iter().all(|&q| q < 1.0) && raw_q.windows(2).all(|w| w[1] < w[0]);
    outcome(
        worst_trip <= 1e-9 && worst_q <= 1e-3 && raw_ok,
        format!(
            "round trip {worst_trip:.1e}; worst |Q-1| deconvolved {worst_q:.1e}; raw Q {}",
            raw_q
                .iter()
                .map(|q| format!("{q:.4}"))
                .collect::<Vec<_>>()
                .join(" > ")
        ),
    )
}

fn mean_clicks_fit() -> Outcome {
    let (mu, n_bins) = (2.232, 8usize);
    let model = ExpSaturation {
        amplitude: n_bins as f64,
        scale: n_bins as f64,
    };
    let ts = linspace(0.05, 1.0, 20);
    let clean: Vec<_> = ts
        .iter()
        .map(|&t| SweepRecord::new(t, model.value(t, mu, 0.0)))
        .collect();
    let fit = fit_mean_clicks(&clean, n_bins).unwrap();
    let rel = (fit.param("mu_eff").unwrap() / mu - 1.0).abs();

    let rho = coherent_distribution_auto(mu).unwrap();
    let wide = convolution_matrix(&SplittingNetwork::symmetric(3), rho.n_max()).unwrap();
    let stats: Vec<Vec<f64>> = ts
        .iter()
        .map(|&t| {
            let p = forward_click_statistics(&rho, &wide, &loss_matrix(t, rho.n_max()).unwrap())
                .unwrap();
            let mut cdf = p.probs().to_vec();
            for i in 1..cdf.len() {
                cdf[i] += cdf[i - 1];
            }
            cdf
        })
        .collect();
    let pulses = 100_000;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let data: Vec<_> = ts
            .iter()
            .zip(&stats)
            .map(|(&t, cdf)| {
                let (mut sum, mut sum2) = (0.0, 0.0);
                for _ in 0..pulses {
                    let u: f64 = rng.random();
                    let m = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) as f64;
                    sum += m;
                    sum2 += m * m;
                }
                let mean = sum / pulses as f64;
                let var = sum2 / pulses as f64 - mean * mean;
                SweepRecord {
                    n_samples: Some(pulses as u64),
                    ..SweepRecord::with_error(t, mean, (var / pulses as f64).sqrt())
                }
            })
            .collect();
        let fit = fit_mean_clicks(&data, n_bins).unwrap();
        worst = worst.max((fit.param("mu_eff").unwrap() - mu).abs());
    }
    outcome(
        rel <= 1e-6 && worst <= 0.05,
        format!("noiseless rel err {rel:.1e}; worst |dmu| over 20 sampled sweeps of 1e5 pulses/point {worst:.4}"),
    )
}

fn splitting_ratio_robustness() -> Outcome {
    let d = splitting_ratio_sensitivity(&[0.5; 7], &[0.45; 7], 8).unwrap();
    outcome(d < 0.02, format!("max entry difference {d:.5}"))
}

fn run_simulate(bin: &str, config: &Path, out: &Path, shards: usize, threads: usize) -> Vec<u8> {
    let status = Command::new(bin)
        .args(["simulate", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--shards", &shards.to_string()])
        .env("APDLAB_THREADS", threads.to_string())
        .status()
        .expect("run apdlab");
    assert!(
        status.success(),
        "apdlab simulate failed for {}",
        config.display()
    );
    std::fs::read(out).unwrap()
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_apdlab");
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        (
            "cw",
            r#"{"mode": "cw", "detector": {"eta_apd": 0.6, "dark_rate_hz": 500, "dead_time_s": 53e-9},
                "source": {"sweep": {"values": [1e4, 1e5, 3e5]}}, "sim": {"duration_s": 0.2, "seed": 4}}"#,
        ),
        (
            "constant-frequency",
            r#"{"mode": "pulsed-constant-frequency", "detector": {"eta_apd": 1.0, "dark_rate_hz": 9900, "dead_time_s": 53e-9},
                "source": {"sweep": {"start": 0.01, "stop": 3, "points": 12, "log": true}, "f_rep_hz": 1e6, "mu_per_pulse": 0.836},
                "sim": {"duration_s": 0.5, "seed": 8}}"#,
        ),
        (
            "constant-energy",
            r#"{"mode": "pulsed-constant-energy", "detector": {"eta_apd": 1.0, "dark_rate_hz": 100, "dead_time_s": 53e-9},
                "source": {"sweep": {"start": 0.5e6, "stop": 40e6, "step": 2.5e6}, "p_gamma": 0.05},
                "sim": {"duration_s": 0.2, "seed": 3}}"#,
        ),
        (
            "tmd",
            r#"{"mode": "tmd", "detector": {"eta_apd": 1.0, "dark_rate_hz": 16e3, "dead_time_s": 53e-9},
                "source": {"sweep": {"start": 0, "stop": 1, "points": 6}, "f_rep_hz": 2e6},
                "sim": {"seed": 0}, "tmd": {"stages": 3, "mu_eff": 2.232}}"#,
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, json) in configs {
        let config = dir.path().join(format!("{name}.json"));
        std::fs::write(&config, json).unwrap();
        let runs = [
            run_simulate(
                bin,
                &config,
                &dir.path().join(format!("{name}_a.csv")),
                1,
                1,
            ),
            run_simulate(
                bin,
                &config,
                &dir.path().join(format!("{name}_b.csv")),
                1,
                1,
            ),
            run_simulate(
                bin,
                &config,
                &dir.path().join(format!("{name}_c.csv")),
                8,
                8,
            ),
        ];
        let same = runs.iter().all(|r| r == &runs[0]) && !runs[0].is_empty();
        pass &= same;
        parts.push(format!(
            "{name} {}",
            if same { "identical" } else { "DIFFERENT" }
        ));
    }
    outcome(pass, parts.join(", "))
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(u32, &str, Check, Duration); 9] = [
        (
            1,
            "saturation-fit reproduction",
            saturation_fit_reproduction,
            Duration::from_secs(1),
        ),
        (
            2,
            "Monte-Carlo vs analytic at constant frequency",
            constant_frequency_vs_analytic,
            Duration::from_secs(30),
        ),
        (
            3,
            "frequency-sweep regimes",
            frequency_sweep_regimes,
            Duration::from_secs(60),
        ),
        (
            4,
            "cw correction curve",
            cw_correction_curve,
            Duration::from_secs(30),
        ),
        (
            5,
            "convolution-matrix exactness",
            convolution_exactness,
            Duration::from_secs(5),
        ),
        (
            6,
            "deconvolution round trip and Q restoration",
            deconvolution_round_trip,
            Duration::from_secs(1),
        ),
        (
            7,
            "mean-clicks fit",
            mean_clicks_fit,
            Duration::from_secs(5),
        ),
        (
            8,
            "splitting-ratio robustness",
            splitting_ratio_robustness,
            Duration::from_secs(5),
        ),
        (
            9,
            "determinism across reruns and shard counts",
            cli_determinism,
            Duration::from_secs(120),
        ),
    ];
    let mut failures = 0;
    for (id, name, check, limit) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = result.pass && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {id} [{}] {name}: {} ({:.2} s, limit {} s{})",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", too slow" }
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
