use spherefdn::acoustics::{box_delay_seconds, BoxSpec, SphereSpec};
use spherefdn::allpass::LoopDesign;
use spherefdn::analysis::{magnitude_spectrum, response_peaks, verify_fdn_against_theory, Peak};
use spherefdn::design::{design_sphere, DesignOptions};
use spherefdn::fdn::{
    attach_losses, box_triplets, build_box_fdn, build_sphere_fdn, harmonic_fallback_channel,
    impulse_response, render, FdnConfig, MatrixChoice,
};

const SR: f64 = 44_100.0;

fn sphere_network(radius: f64, max_order: u32, gain: f64) -> (SphereSpec, FdnConfig) {
    let spec = SphereSpec::new(radius, 23.0).unwrap().with_orders(max_order, 8).unwrap();
    let opts = DesignOptions {
        pole_pairs: Some(3),
        loop_gain: gain,
        ..DesignOptions::default()
    };
    let designs: Vec<LoopDesign> = design_sphere(&spec, &opts)
        .unwrap()
        .into_iter()
        .map(|c| c.design)
        .collect();
    let fdn = build_sphere_fdn(&designs, MatrixChoice::Diagonal, None, None, SR).unwrap();
    (spec, fdn)
}

fn nearest(peaks: &[Peak], f: f64) -> f64 {
    peaks
        .iter()
        .map(|p| p.frequency_hz)
        .min_by(|a, b| (a - f).abs().total_cmp(&(b - f).abs()))
        .unwrap()
}

fn band_energy(signal: &[f64], lo: f64, hi: f64) -> f64 {
    let spec = magnitude_spectrum(signal, SR, 1 << 16).unwrap();
    let bin = spec.bin_hz();
    spec.magnitude
        .iter()
        .enumerate()
        .filter(|(k, _)| (*k as f64 * bin) >= lo && (*k as f64 * bin) <= hi)
        .map(|(_, m)| m * m)
        .sum()
}

#[test]
fn delay_only_comb_has_one_peak_per_harmonic() {
    let fdn = build_sphere_fdn(
        &[LoopDesign {
            loop_gain: 0.999,
            ..LoopDesign::delay_only(100)
        }],
        MatrixChoice::Diagonal,
        None,
        None,
        SR,
    )
    .unwrap();
    let h = impulse_response(&fdn, 1 << 16).unwrap();
    let peaks = response_peaks(&h, SR, 4_000.0).unwrap();
    // 441, 882, ... 3969 Hz
    assert_eq!(peaks.len(), 9);
    for (k, p) in peaks.iter().enumerate() {
        assert!((p.frequency_hz - 441.0 * (k + 1) as f64).abs() < 0.5, "{p:?}");
    }
}

#[test]
fn fallback_channel_rings_at_harmonics() {
    let mut ch = harmonic_fallback_channel(441.0, SR).unwrap();
    ch.loop_gain = 0.999;
    let fdn = build_sphere_fdn(&[ch], MatrixChoice::Diagonal, None, None, SR).unwrap();
    let h = impulse_response(&fdn, 1 << 16).unwrap();
    let peaks = response_peaks(&h, SR, 2_000.0).unwrap();
    for k in 1..=4 {
        let f = 441.0 * k as f64;
        assert!((nearest(&peaks, f) - f).abs() < 0.5);
    }
}

#[test]
fn fallback_quantization_error_is_bounded() {
    for i in 0..2_000 {
        let f = 20.0 + i as f64 * 5.49;
        let realized = SR / harmonic_fallback_channel(f, SR).unwrap().delay_samples as f64;
        // Half a sample of period error, to first order f^2 / (2 sr).
        assert!((realized - f).abs() <= f * f / (2.0 * SR - f), "{f} Hz -> {realized}");
    }
    assert!(harmonic_fallback_channel(SR / 4.0, SR).is_err());
}

#[test]
fn box_peaks_sit_on_rounded_delay_harmonics() {
    let spec = BoxSpec::new(3.0, 4.0, 5.0, 20.0).unwrap();
    let fdn = build_box_fdn(&spec, 4, MatrixChoice::Diagonal, SR)
        .unwrap()
        .with_loop_gain(0.999)
        .unwrap();
    let h = impulse_response(&fdn, 1 << 17).unwrap();
    let peaks = response_peaks(&h, SR, 1_000.0).unwrap();
    let bin = SR / (1 << 17) as f64;
    for t in box_triplets(&spec, 4).unwrap() {
        let exact = box_delay_seconds(&spec, t).unwrap();
        let rounded = (exact * SR).round() / SR;
        for k in 1..=3 {
            let f = k as f64 / rounded;
            assert!((nearest(&peaks, f) - f).abs() <= bin, "triplet {t} k={k}");
        }
    }
}

#[test]
fn loss_filter_damps_highs_faster_than_lows() {
    let fdn = build_sphere_fdn(
        &[LoopDesign {
            loop_gain: 0.999,
            ..LoopDesign::delay_only(100)
        }],
        MatrixChoice::Diagonal,
        None,
        None,
        SR,
    )
    .unwrap();
    let lossy = attach_losses(&fdn, &[[0.95, 0.04]], None).unwrap();
    let n = 1 << 16;
    let dry = impulse_response(&fdn, n).unwrap();
    let wet = impulse_response(&lossy, n).unwrap();
    let low = band_energy(&wet, 400.0, 500.0) / band_energy(&dry, 400.0, 500.0);
    let high = band_energy(&wet, 3_900.0, 4_000.0) / band_energy(&dry, 3_900.0, 4_000.0);
    assert!(high < low, "low {low} high {high}");
}

#[test]
fn long_render_has_finite_energy() {
    let (_, fdn) = sphere_network(0.188, 4, 0.999);
    let h = impulse_response(&fdn, (10.0 * SR) as usize).unwrap();
    assert!(h.iter().all(|v| v.is_finite()));
    let tail: f64 = h[h.len() - 4_410..].iter().map(|v| v * v).sum();
    let head: f64 = h[..4_410].iter().map(|v| v * v).sum();
    assert!(tail < head);
}

#[test]
fn input_and_output_gains_do_not_move_peaks() {
    let (_, plain) = sphere_network(0.188, 2, 0.997);
    let designs = plain.channels.clone();
    let scaled = build_sphere_fdn(
        &designs,
        MatrixChoice::Diagonal,
        Some(&[0.5, 2.0, -1.0]),
        Some(&[1.5, 0.25, 0.75]),
        SR,
    )
    .unwrap();
    let n = 1 << 16;
    let a = response_peaks(&impulse_response(&plain, n).unwrap(), SR, 2_000.0).unwrap();
    let b = response_peaks(&impulse_response(&scaled, n).unwrap(), SR, 2_000.0).unwrap();
    for p in &a {
        assert!((nearest(&b, p.frequency_hz) - p.frequency_hz).abs() < 0.5);
    }
}

#[test]
fn designed_network_verifies_and_detuned_one_does_not() {
    let (spec, fdn) = sphere_network(0.188, 4, 0.997);
    assert!(verify_fdn_against_theory(&fdn, &spec, 3.0).unwrap().passed);

    let mut detuned = fdn.clone();
    for ch in &mut detuned.channels {
        if ch.has_allpass() {
            ch.first_pole_angle *= 1.1;
        }
    }
    assert!(!verify_fdn_against_theory(&detuned, &spec, 0.5).unwrap().passed);
}

#[test]
fn verification_is_monotone_in_tolerance() {
    let (_, fdn) = sphere_network(0.188, 4, 0.997);
    let wrong = SphereSpec::new(0.21, 23.0).unwrap().with_orders(4, 8).unwrap();
    let mut previous = false;
    for tol in [0.5, 1.0, 3.0, 10.0, 30.0, 100.0] {
        let passed = verify_fdn_against_theory(&fdn, &wrong, tol).unwrap().passed;
        assert!(passed || !previous, "passed below {tol}% but not at it");
        previous = passed;
    }
    assert!(previous);
    assert!(!verify_fdn_against_theory(&fdn, &wrong, 3.0).unwrap().passed);
}

#[test]
fn network_is_linear_and_time_invariant() {
    let (_, fdn) = sphere_network(0.188, 2, 0.997);
    let n = 4_000;
    let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
    let z: Vec<f64> = (0..n).map(|i| (i as f64 * 0.013).sin()).collect();
    let mix: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    let (yx, yz, ym) = (
        render(&fdn, &x).unwrap(),
        render(&fdn, &z).unwrap(),
        render(&fdn, &mix).unwrap(),
    );
    for i in 0..n {
        assert!((ym[i] - (2.0 * yx[i] - 0.5 * yz[i])).abs() < 1e-9);
    }

    let shift = 37;
    let mut delayed = vec![0.0; shift];
    delayed.extend_from_slice(&x[..n - shift]);
    let yd = render(&fdn, &delayed).unwrap();
    for i in shift..n {
        assert_eq!(yd[i], yx[i - shift]);
    }
}
