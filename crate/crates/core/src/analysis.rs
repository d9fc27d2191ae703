//! Spectral peaks of rendered responses and their comparison with mode lists.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::acoustics::{ModeLabel, ModeSeries, SphereSpec};
use crate::error::{Error, Result};
use crate::fdn::{impulse_response, FdnConfig};

pub const MIN_FFT_SIZE: usize = 4096;
/// Relative pairing window used when no other is given.
pub const DEFAULT_WINDOW_PERCENT: f64 = 6.0;
pub const DEFAULT_PROMINENCE_DB: f64 = 3.0;
pub const VERIFY_BAND_HZ: f64 = 4_000.0;
pub const VERIFY_MAX_S: usize = 4;
pub const VERIFY_SECONDS: f64 = 2.0;

const DB_FLOOR: f64 = -400.0;

/// Single-frame magnitude spectrum, bins `0..=fft_size/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub sample_rate: f64,
    pub fft_size: usize,
    pub magnitude: Vec<f64>,
}

impl Spectrum {
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate / self.fft_size as f64
    }

    pub fn db(&self) -> Vec<f64> {
        self.magnitude.iter().map(|&m| to_db(m)).collect()
    }
}

fn to_db(m: f64) -> f64 {
    if m > 0.0 {
        (20.0 * m.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// FFT of the first `fft_size` samples without windowing.
pub fn magnitude_spectrum(signal: &[f64], sample_rate: f64, fft_size: usize) -> Result<Spectrum> {
    if fft_size < MIN_FFT_SIZE || !fft_size.is_power_of_two() {
        return Err(Error::arg(format!(
            "FFT size {fft_size} must be a power of two of at least {MIN_FFT_SIZE}"
        )));
    }
    if signal.len() < fft_size {
        return Err(Error::arg(format!(
            "signal has {} samples, FFT size is {fft_size}",
            signal.len()
        )));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::arg("sample rate must be positive"));
    }
    let mut buf: Vec<Complex<f64>> = signal[..fft_size].iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(fft_size).process(&mut buf);
    Ok(Spectrum {
        sample_rate,
        fft_size,
        magnitude: buf[..=fft_size / 2].iter().map(|c| c.norm()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub frequency_hz: f64,
    pub magnitude_db: f64,
}

/// Local maxima of the dB spectrum whose topographic prominence reaches
/// `min_prominence_db`, refined by a parabola through the three top bins.
pub fn find_peaks(
    spectrum: &Spectrum,
    min_prominence_db: f64,
    min_freq: f64,
    max_freq: f64,
) -> Result<Vec<Peak>> {
    if !(min_prominence_db > 0.0) {
        return Err(Error::arg("peak prominence must be positive"));
    }
    let db = spectrum.db();
    let bin = spectrum.bin_hz();
    let mut peaks = Vec::new();
    let n = db.len();
    let mut i = 1;
    while i + 1 < n {
        if db[i] <= db[i - 1] {
            i += 1;
            continue;
        }
        // Flat tops count once, at their centre.
        let mut j = i;
        while j + 1 < n && db[j + 1] == db[i] {
            j += 1;
        }
        if j + 1 >= n || db[j + 1] > db[i] {
            i = j + 1;
            continue;
        }
        let top = (i + j) / 2;
        let f_top = top as f64 * bin;
        if f_top >= min_freq && f_top <= max_freq && prominence(&db, i, j) >= min_prominence_db {
            peaks.push(refine(&db, top, bin));
        }
        i = j + 1;
    }
    Ok(peaks)
}

/// Height above the higher of the two lowest saddles reached before
/// climbing past the peak on either side.
fn prominence(db: &[f64], left: usize, right: usize) -> f64 {
    let h = db[left];
    let mut base_left = h;
    for &v in db[..left].iter().rev() {
        if v > h {
            break;
        }
        base_left = base_left.min(v);
    }
    let mut base_right = h;
    for &v in &db[right + 1..] {
        if v > h {
            break;
        }
        base_right = base_right.min(v);
    }
    h - base_left.max(base_right)
}

fn refine(db: &[f64], i: usize, bin: f64) -> Peak {
    let (a, b, c) = (db[i - 1], db[i], db[i + 1]);
    let denom = a - 2.0 * b + c;
    let p = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Peak {
        frequency_hz: (i as f64 + p) * bin,
        magnitude_db: b - 0.25 * (a - c) * p,
    }
}

/// One theoretical resonance `f_s` of a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub frequency_hz: f64,
    pub label: ModeLabel,
    pub s: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub measured_hz: f64,
    pub reference: Reference,
    pub sharpness_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub peaks: Vec<Peak>,
    pub references: Vec<Reference>,
    pub matches: Vec<Match>,
    pub unmatched: Vec<Reference>,
    pub window_percent: f64,
}

impl SpectrumReport {
    pub fn all_matched(&self) -> bool {
        self.unmatched.is_empty()
    }
}

/// `100 (f_measured - f_theory) / f_theory`.
pub fn sharpness_percent(measured_hz: f64, theory_hz: f64) -> f64 {
    100.0 * (measured_hz - theory_hz) / theory_hz
}

pub fn match_and_score(peaks: &[Peak], references: &[ModeSeries]) -> SpectrumReport {
    match_within(peaks, references, DEFAULT_WINDOW_PERCENT)
}

/// Pairs every nonzero reference with its nearest peak when that peak lies
/// within `window_percent` of it. A peak may serve several references.
pub fn match_within(peaks: &[Peak], references: &[ModeSeries], window_percent: f64) -> SpectrumReport {
    let refs: Vec<Reference> = references
        .iter()
        .flat_map(|series| {
            series.indexed().map(move |(s, f)| Reference {
                frequency_hz: f,
                label: series.label,
                s,
            })
        })
        .filter(|r| r.frequency_hz > 0.0)
        .collect();

    let mut matches = Vec::new();
    let mut unmatched = Vec::new();
    for r in &refs {
        let nearest = peaks.iter().min_by(|a, b| {
            let da = (a.frequency_hz - r.frequency_hz).abs();
            let db = (b.frequency_hz - r.frequency_hz).abs();
            da.total_cmp(&db).then(a.frequency_hz.total_cmp(&b.frequency_hz))
        });
        match nearest {
            Some(p) if sharpness_percent(p.frequency_hz, r.frequency_hz).abs() <= window_percent => {
                matches.push(Match {
                    measured_hz: p.frequency_hz,
                    reference: *r,
                    sharpness_percent: sharpness_percent(p.frequency_hz, r.frequency_hz),
                })
            }
            _ => unmatched.push(*r),
        }
    }
    SpectrumReport {
        peaks: peaks.to_vec(),
        references: refs,
        matches,
        unmatched,
        window_percent,
    }
}

/// Largest power of two not above `len`, or `None` below the minimum FFT size.
pub fn fft_size_for(len: usize) -> Option<usize> {
    if len < MIN_FFT_SIZE {
        None
    } else {
        Some(1 << (usize::BITS - 1 - len.leading_zeros()))
    }
}

/// Peaks of an impulse response below `max_freq`.
pub fn response_peaks(response: &[f64], sample_rate: f64, max_freq: f64) -> Result<Vec<Peak>> {
    let size = fft_size_for(response.len())
        .ok_or_else(|| Error::arg(format!("response of {} samples is too short", response.len())))?;
    let spectrum = magnitude_spectrum(response, sample_rate, size)?;
    find_peaks(&spectrum, DEFAULT_PROMINENCE_DB, spectrum.bin_hz(), max_freq)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub passed: bool,
    pub report: SpectrumReport,
}

/// Theoretical sphere resonances used by [`verify_fdn_against_theory`]:
/// orders up to `min(max_order, channels - 1)`, `s <= 4`, below 4 kHz.
pub fn verification_references(spec: &SphereSpec, channels: usize) -> Result<Vec<ModeSeries>> {
    let top = (spec.max_order as usize).min(channels.saturating_sub(1));
    Ok(spec
        .mode_series()?
        .into_iter()
        .take(top + 1)
        .map(|s| ModeSeries {
            label: s.label,
            frequencies: s
                .frequencies
                .into_iter()
                .take(VERIFY_MAX_S)
                .filter(|&f| f < VERIFY_BAND_HZ)
                .collect(),
        })
        .collect())
}

/// Renders the network's impulse response and checks that every theoretical
/// resonance has a peak within `tolerance_percent`.
pub fn verify_fdn_against_theory(
    config: &FdnConfig,
    spec: &SphereSpec,
    tolerance_percent: f64,
) -> Result<Verification> {
    if !(tolerance_percent > 0.0) {
        return Err(Error::arg("tolerance must be positive"));
    }
    let len = (VERIFY_SECONDS * config.sample_rate).ceil() as usize;
    let response = impulse_response(config, len)?;
    if let Some(bad) = response.iter().position(|v| !v.is_finite() || v.abs() > 1e6) {
        return Err(Error::Stability(format!(
            "impulse response diverges at sample {bad}"
        )));
    }
    let peaks = response_peaks(&response, config.sample_rate, VERIFY_BAND_HZ)?;
    let references = verification_references(spec, config.len())?;
    let report = match_within(&peaks, &references, tolerance_percent);
    Ok(Verification {
        passed: report.all_matched(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spectrum_from_db(db: &[f64]) -> Spectrum {
        Spectrum {
            sample_rate: 1.0,
            fft_size: 2 * (db.len() - 1),
            magnitude: db.iter().map(|d| 10f64.powf(d / 20.0)).collect(),
        }
    }

    fn series(label: u32, f: &[f64]) -> ModeSeries {
        ModeSeries {
            label: ModeLabel::Order(label),
            frequencies: f.to_vec(),
        }
    }

    fn peak(f: f64) -> Peak {
        Peak {
            frequency_hz: f,
            magnitude_db: 0.0,
        }
    }

    #[test]
    fn sinusoid_at_bin_center() {
        let n = 4096;
        let k = 100;
        let x: Vec<f64> = (0..n).map(|t| (2.0 * PI * k as f64 * t as f64 / n as f64).sin()).collect();
        let s = magnitude_spectrum(&x, 44_100.0, n).unwrap();
        let db = s.db();
        let top = (0..db.len()).max_by(|&a, &b| db[a].total_cmp(&db[b])).unwrap();
        assert_eq!(top, k);
        assert!(db.iter().enumerate().all(|(i, &v)| i == k || v < db[k] - 100.0));
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = vec![0.0; 8192];
        x[0] = 1.0;
        let s = magnitude_spectrum(&x, 44_100.0, 8192).unwrap();
        assert!(s.db().iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn spectrum_preconditions() {
        assert!(magnitude_spectrum(&[0.0; 4000], 44_100.0, 4096).is_err());
        assert!(magnitude_spectrum(&[0.0; 8192], 44_100.0, 5000).is_err());
        assert!(magnitude_spectrum(&[0.0; 8192], 44_100.0, 2048).is_err());
    }

    #[test]
    fn parseval() {
        let n = 4096;
        let x: Vec<f64> = (0..n).map(|t| ((t * 7919 % 257) as f64 / 128.0 - 1.0) * 0.3).collect();
        let s = magnitude_spectrum(&x, 44_100.0, n).unwrap();
        let m = &s.magnitude;
        let half: f64 = m[1..n / 2].iter().map(|v| v * v).sum();
        let full = m[0] * m[0] + m[n / 2] * m[n / 2] + 2.0 * half;
        let time: f64 = x.iter().map(|v| v * v).sum();
        assert!((full / n as f64 - time).abs() / time < 1e-6);
    }

    #[test]
    fn flat_spectrum_has_no_peaks() {
        let s = spectrum_from_db(&[0.0; 300]);
        assert!(find_peaks(&s, 1.0, 0.0, 1.0).unwrap().is_empty());
        assert!(find_peaks(&s, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn lorentzian_peaks_recovered() {
        let bins = 1025;
        let centres = [200.3, 611.8];
        let db: Vec<f64> = (0..bins)
            .map(|i| {
                let lin: f64 = centres
                    .iter()
                    .map(|c| 1.0 / (1.0 + ((i as f64 - c) / 3.0).powi(2)))
                    .sum();
                20.0 * (lin + 1e-3).log10()
            })
            .collect();
        let s = spectrum_from_db(&db);
        let peaks = find_peaks(&s, 6.0, 0.0, 1.0).unwrap();
        assert_eq!(peaks.len(), 2);
        let bin = s.bin_hz();
        for (p, c) in peaks.iter().zip(centres) {
            assert!((p.frequency_hz / bin - c).abs() < 0.2, "{} vs {c}", p.frequency_hz / bin);
        }
    }

    #[test]
    fn prominence_ignores_ripples_on_shoulders() {
        let db = [0.0, 10.0, 9.0, 9.5, 5.0, 0.0, 0.0];
        let s = spectrum_from_db(&db);
        let p = find_peaks(&s, 2.0, 0.0, 1.0).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(find_peaks(&s, 0.4, 0.0, 1.0).unwrap().len(), 2);
    }

    #[test]
    fn ball_sharpness_values() {
        let r = match_and_score(&[peak(400.0)], &[series(1, &[340.0])]);
        assert!(r.matches.is_empty(), "17.6% is outside the pairing window");
        let r = match_within(&[peak(400.0)], &[series(1, &[340.0])], 20.0);
        assert!((r.matches[0].sharpness_percent - 17.647_058_823_529_413).abs() < 1e-12);
        let r = match_and_score(&[peak(1810.0)], &[series(9, &[1810.0])]);
        assert_eq!(r.matches[0].sharpness_percent, 0.0);
    }

    #[test]
    fn identical_lists_score_zero() {
        let f = [0.0, 340.0, 980.0, 1530.0];
        let peaks: Vec<Peak> = f[1..].iter().map(|&x| peak(x)).collect();
        let r = match_and_score(&peaks, &[series(1, &f)]);
        assert_eq!(r.references.len(), 3, "dc is excluded");
        assert!(r.all_matched());
        assert!(r.matches.iter().all(|m| m.sharpness_percent == 0.0));
        assert_eq!(r.matches[1].reference.s, 3);
    }

    #[test]
    fn empty_peaks_leave_everything_unmatched() {
        let r = match_and_score(&[], &[series(0, &[0.0, 1314.0])]);
        assert_eq!(r.unmatched.len(), 1);
        assert!(!r.all_matched());
    }

    #[test]
    fn fft_size_choice() {
        assert_eq!(fft_size_for(88_200), Some(65_536));
        assert_eq!(fft_size_for(4096), Some(4096));
        assert_eq!(fft_size_for(4095), None);
    }
}
