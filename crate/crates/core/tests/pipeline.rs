use apdlab::apd_model::{
    corrected_pulsed_rate_with, effective_count_rate_coherent, DetectorParams,
};
use apdlab::calibrate::{correction_table, fit_linear, fit_saturation, SweepRecord};
use apdlab::dead_time_sim::{simulate_pulsed_with, PulseTrainConfig, SimOptions};
use apdlab::photon_stats::{coherent_distribution, CountDistribution, PhotonNumberDistribution};
use apdlab::tmd::{
    convolution_matrix, deconvolve, expected_mean_clicks, forward_click_statistics, loss_matrix,
    SplittingNetwork,
};

fn pulse_train(f_rep_hz: f64, mu_per_pulse: f64, seed: u64) -> PulseTrainConfig {
    PulseTrainConfig {
        f_rep_hz,
        mu_per_pulse,
        dead_time_s: 53e-9,
        dark_rate_hz: 0.0,
        duration_s: 0.5,
        seed,
    }
}

#[test]
fn simulated_sweep_fits_back_to_its_mu() {
    let mu = 0.836;
    let data: Vec<SweepRecord> = (0..24)
        .map(|i| {
            let t = 1e-3 * 10f64.powf(3.0 * i as f64 / 23.0);
            let run = simulate_pulsed_with(
                &pulse_train(1e6, mu * t, i),
                &SimOptions::default().with_shards(3),
            )
            .unwrap();
            SweepRecord::with_error(t, run.count_rate, run.stderr_rate)
        })
        .collect();
    let fit = fit_saturation(&data, 1e6).unwrap();
    assert!(fit.converged);
    let got = fit.param("mu_eff").unwrap();
    assert!((got - mu).abs() < 0.01, "mu_eff {got}");
    let chi2_per_dof = fit.chi_square / (data.len() - 2) as f64;
    assert!(chi2_per_dof < 3.0, "chi2/dof {chi2_per_dof}");
}

#[test]
fn pulsed_simulation_matches_corrected_rate() {
    let params = DetectorParams::new(1.0, 0.0, 53e-9).unwrap();
    for (f_rep, p_gamma) in [(4e6, 0.02), (10e6, 0.05), (30e6, 0.01)] {
        let mu = PulseTrainConfig::mu_for_p_gamma(p_gamma);
        let run = simulate_pulsed_with(&pulse_train(f_rep, mu, 7), &SimOptions::default()).unwrap();
        let predicted = corrected_pulsed_rate_with(f_rep, &params, (-mu).exp(), p_gamma)
            .unwrap()
            .rate;
        // first-order correction: relative error of order (n p)^2
        let rel = (run.count_rate - predicted).abs() / predicted;
        assert!(
            rel < 0.01,
            "f_rep {f_rep}: {} vs {predicted}",
            run.count_rate
        );
    }
}

#[test]
fn low_rate_points_sit_on_the_linear_reference() {
    let data: Vec<SweepRecord> = [0.001, 0.002, 0.003, 0.004]
        .iter()
        .map(|&t| SweepRecord::new(t, effective_count_rate_coherent(1e6, t, 0.0).unwrap()))
        .collect();
    let line = fit_linear(&data).unwrap();
    let table = correction_table(&data, &line).unwrap();
    assert!(
        table.iter().all(|e| (e.correction - 1.0).abs() < 2e-3),
        "{table:?}"
    );
}

#[test]
fn tmd_forward_and_back() {
    let network = SplittingNetwork::symmetric(3);
    let n_bins = network.n_bins();
    let c = convolution_matrix(&network, n_bins).unwrap();
    for &(mu, eta) in &[(0.5, 1.0), (2.232, 0.6), (4.0, 0.25)] {
        let rho: Vec<f64> = coherent_distribution(mu, n_bins).unwrap().probs().to_vec();
        let total: f64 = rho.iter().sum();
        // renormalize the truncated state so the forward model is exact
        let rho =
            PhotonNumberDistribution::normalized(rho.iter().map(|p| p / total).collect()).unwrap();
        let l = loss_matrix(eta, n_bins).unwrap();
        let p = forward_click_statistics(&rho, &c, &l).unwrap();
        let recovered = deconvolve(&p, &c, &l).unwrap();
        assert!(!recovered.has_negative());
        for (a, b) in recovered.probs.iter().zip(rho.probs()) {
            assert!((a - b).abs() < 1e-10, "mu {mu} eta {eta}: {a} vs {b}");
        }
        assert!(p.mandel_q().unwrap() < 1.0);
    }

    let wide = convolution_matrix(&network, 40).unwrap();
    let rho = coherent_distribution(2.232, 40).unwrap();
    let p = forward_click_statistics(&rho, &wide, &loss_matrix(1.0, 40).unwrap()).unwrap();
    let expected = expected_mean_clicks(2.232, n_bins, 0.0, 1.0).unwrap();
    assert!((p.mean() - expected).abs() < 1e-12);
}
