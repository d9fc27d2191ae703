//! Inharmonic comb loop design.
//!
//! A loop made of an integer delay followed by a cascade of second-order
//! allpass sections resonates wherever its unwrapped phase crosses a multiple
//! of `-2 pi`. Given a target series of resonances, the design searches the
//! delay length, the angle of the first pole pair and the spacing of the
//! remaining pole pairs so that the loop phase hits `-2 pi k` at the `k`-th
//! resonance. The pole radius stays fixed during the search.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::acoustics::ModeSeries;
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: f64 = 44_100.0;
pub const DEFAULT_POLE_RADIUS: f64 = 0.95;
pub const DEFAULT_POLE_PAIRS: usize = 3;
/// Resonances above this frequency are left out of the fit.
pub const FIT_BAND_HZ: f64 = 4_000.0;
/// Weighted squared phase error (rad^2) above which a fit is refused.
pub const FAILURE_THRESHOLD: f64 = 1.0;
/// Largest relative move of the fundamental that retuning accepts.
pub const MAX_RETUNE_FRACTION: f64 = 0.25;

const MAX_ITERATIONS: usize = 4000;
const STEP_FLOOR: f64 = 1e-11;
const IMPROVEMENT_TOLERANCE: f64 = 1e-8;
/// The first pole stays within this factor band around the first resonance.
const KNEE_BAND: (f64, f64) = (0.4, 1.3);
const GRID_KNEE: usize = 40;
const GRID_SEPARATION: usize = 60;
const SEEDS_REFINED: usize = 8;

/// Loop phase targets: `phases[k] = -2 pi k` at `omegas[k]` (rad/sample).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTarget {
    omegas: Vec<f64>,
    phases: Vec<f64>,
    dc_is_mode: bool,
}

impl PhaseTarget {
    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// False when the dc point was added only to anchor the count (order 1).
    pub fn dc_is_mode(&self) -> bool {
        self.dc_is_mode
    }

    fn nonzero_count(&self) -> usize {
        self.omegas.iter().filter(|&&w| w > 0.0).count()
    }
}

/// Maps a mode series to loop phase targets.
///
/// Every series is treated as having a dc resonance; when the series does not
/// start at 0 Hz a dc point is inserted so the `k`-th listed resonance maps to
/// `-2 pi k`.
pub fn build_phase_targets(series: &ModeSeries, sample_rate: f64) -> Result<PhaseTarget> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::arg(format!("sample rate {sample_rate} must be positive")));
    }
    if series.frequencies.is_empty() {
        return Err(Error::arg(format!("series {} is empty", series.label)));
    }
    let nyquist = sample_rate / 2.0;
    let mut previous = -1.0;
    for &f in &series.frequencies {
        if !(f >= 0.0) || f >= nyquist {
            return Err(Error::arg(format!(
                "frequency {f} Hz of series {} is not below Nyquist ({nyquist} Hz)",
                series.label
            )));
        }
        if f <= previous {
            return Err(Error::arg(format!("series {} is not ascending", series.label)));
        }
        previous = f;
    }

    let dc_is_mode = series.frequencies[0] == 0.0;
    let mut omegas = Vec::with_capacity(series.frequencies.len() + 1);
    if !dc_is_mode {
        omegas.push(0.0);
    }
    omegas.extend(series.frequencies.iter().map(|f| 2.0 * PI * f / sample_rate));
    let phases = (0..omegas.len()).map(|k| -2.0 * PI * k as f64).collect();
    Ok(PhaseTarget {
        omegas,
        phases,
        dc_is_mode,
    })
}

/// `w_k = 1/(1+k)^2`, four times heavier at the first resonance, zero at a
/// dc point that is not a mode.
pub fn default_weights(target: &PhaseTarget) -> Vec<f64> {
    (0..target.len())
        .map(|k| {
            let w = 1.0 / ((1 + k) as f64).powi(2);
            match k {
                0 if !target.dc_is_mode => 0.0,
                1 => 4.0 * w,
                _ => w,
            }
        })
        .collect()
}

/// Default allpass size: three pole pairs below 0.5 m, one more per extra 0.25 m.
pub fn pole_pairs_for_radius(radius_m: f64) -> usize {
    if radius_m < 0.5 {
        DEFAULT_POLE_PAIRS
    } else {
        DEFAULT_POLE_PAIRS + 1 + ((radius_m - 0.5) / 0.25).floor() as usize
    }
}

/// One second-order allpass section
/// `H(z) = (a2 + a1 z^-1 + z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllpassSection {
    pub a1: f64,
    pub a2: f64,
}

impl AllpassSection {
    /// Conjugate poles at `radius * exp(+-i angle)`.
    pub fn from_pole(radius: f64, angle: f64) -> Self {
        AllpassSection {
            a1: -2.0 * radius * angle.cos(),
            a2: radius * radius,
        }
    }
}

/// One inharmonic comb channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopDesign {
    pub delay_samples: usize,
    pub pole_radius: f64,
    pub first_pole_angle: f64,
    pub pole_separation: f64,
    pub n_pole_pairs: usize,
    pub loop_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_fir: Option<[f64; 2]>,
}

impl LoopDesign {
    /// Delay-only loop with unit gain.
    pub fn delay_only(delay_samples: usize) -> Self {
        LoopDesign {
            delay_samples,
            pole_radius: 0.0,
            first_pole_angle: 0.0,
            pole_separation: 0.0,
            n_pole_pairs: 0,
            loop_gain: 1.0,
            loss_fir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay_samples == 0 {
            return Err(Error::arg("loop delay must be at least one sample"));
        }
        if !(self.loop_gain > 0.0 && self.loop_gain <= 1.0) {
            return Err(Error::arg(format!("loop gain {} outside (0, 1]", self.loop_gain)));
        }
        if let Some([h0, h1]) = self.loss_fir {
            if !(h0.is_finite() && h1.is_finite()) {
                return Err(Error::arg("loss filter coefficients must be finite"));
            }
        }
        if self.n_pole_pairs == 0 {
            return Ok(());
        }
        if !(0.0..1.0).contains(&self.pole_radius) {
            return Err(Error::Stability(format!(
                "pole radius {} outside [0, 1)",
                self.pole_radius
            )));
        }
        if !(self.pole_separation >= 0.0) || !(self.first_pole_angle > 0.0) {
            return Err(Error::arg("pole angles must be positive and increasing"));
        }
        let last = self.first_pole_angle + (self.n_pole_pairs - 1) as f64 * self.pole_separation;
        if last >= PI {
            return Err(Error::arg(format!("pole angle {last} reaches pi")));
        }
        Ok(())
    }

    pub fn pole_angles(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_pole_pairs).map(move |k| self.first_pole_angle + k as f64 * self.pole_separation)
    }

    pub fn has_allpass(&self) -> bool {
        self.n_pole_pairs > 0
    }
}

/// Second-order sections realising the design's pole pairs.
pub fn sections(design: &LoopDesign) -> Vec<AllpassSection> {
    design
        .pole_angles()
        .map(|theta| AllpassSection::from_pole(design.pole_radius, theta))
        .collect()
}

/// Unwrapped phase of one section: `-2w - 2 arg(D(e^{iw}))`, where both
/// first-order factors of `D` have positive real part.
fn section_phase(radius: f64, angle: f64, omega: f64) -> f64 {
    let factor = |alpha: f64| (radius * alpha.sin()).atan2(1.0 - radius * alpha.cos());
    -2.0 * omega - 2.0 * (factor(omega - angle) + factor(omega + angle))
}

/// Unwrapped phase of the allpass cascade alone.
pub fn allpass_phase(design: &LoopDesign, omega: f64) -> f64 {
    design
        .pole_angles()
        .map(|theta| section_phase(design.pole_radius, theta, omega))
        .sum()
}

/// Unwrapped loop phase `-w D + phase_ap(w)`.
pub fn allpass_loop_phase(design: &LoopDesign, omega: f64) -> f64 {
    -omega * design.delay_samples as f64 + allpass_phase(design, omega)
}

/// Frequencies (Hz) where the loop phase crosses `-2 pi k`, `k >= 1`, up to `max_hz`.
pub fn realized_resonances(design: &LoopDesign, sample_rate: f64, max_hz: f64) -> Vec<f64> {
    let omega_max = (2.0 * PI * max_hz / sample_rate).min(PI);
    let phase_max = allpass_loop_phase(design, omega_max);
    let mut out = Vec::new();
    let mut k = 1;
    while -2.0 * PI * (k as f64) >= phase_max {
        let level = -2.0 * PI * k as f64;
        out.push(solve_phase_level(design, level, 0.0, omega_max) * sample_rate / (2.0 * PI));
        k += 1;
    }
    out
}

/// Bisection on the strictly decreasing loop phase.
fn solve_phase_level(design: &LoopDesign, level: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if allpass_loop_phase(design, mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// First nonzero resonance (Hz), if any lies below Nyquist.
pub fn fundamental(design: &LoopDesign, sample_rate: f64) -> Option<f64> {
    let top = PI * (1.0 - 1e-12);
    if allpass_loop_phase(design, top) > -2.0 * PI {
        return None;
    }
    Some(solve_phase_level(design, -2.0 * PI, 0.0, top) * sample_rate / (2.0 * PI))
}

/// Result of [`fit_loop`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoopFit {
    pub design: LoopDesign,
    /// Weighted squared phase error at the targets (rad^2).
    pub residual: f64,
    /// Largest unweighted phase error at any target (rad).
    pub max_phase_error: f64,
}

/// Per-target phase errors `phi(w_k) - target_k`.
pub fn phase_errors(design: &LoopDesign, target: &PhaseTarget) -> Vec<f64> {
    target
        .omegas
        .iter()
        .zip(&target.phases)
        .map(|(&w, &p)| allpass_loop_phase(design, w) - p)
        .collect()
}

#[derive(Clone, Copy)]
struct Objective<'a> {
    target: &'a PhaseTarget,
    weights: &'a [f64],
    radius: f64,
    pairs: usize,
    knee_lo: f64,
    knee_hi: f64,
}

impl Objective<'_> {
    fn in_bounds(&self, knee: f64, separation: f64) -> bool {
        if self.pairs == 0 {
            return true;
        }
        knee >= self.knee_lo
            && knee <= self.knee_hi
            && separation > 0.0
            && knee + (self.pairs - 1) as f64 * separation < PI
    }

    fn eval(&self, delay: usize, knee: f64, separation: f64) -> f64 {
        if delay == 0 || !self.in_bounds(knee, separation) {
            return f64::INFINITY;
        }
        let mut err = 0.0;
        for ((&w, &p), &wt) in self.target.omegas.iter().zip(&self.target.phases).zip(self.weights) {
            if wt == 0.0 {
                continue;
            }
            let mut phase = -w * delay as f64;
            for k in 0..self.pairs {
                phase += section_phase(self.radius, knee + k as f64 * separation, w);
            }
            err += wt * (phase - p).powi(2);
        }
        err
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    error: f64,
    delay: usize,
    knee: f64,
    separation: f64,
}

/// Fits delay, first pole angle and pole spacing to a phase target with the
/// pole radius held fixed.
///
/// The weighted squared phase error is minimised from several deterministic
/// starting points (the least-squares delay with the first pole at the first
/// resonance, plus the best grid point for every admissible delay), each
/// refined by cyclic coordinate descent with shrinking steps on the two
/// angles and an integer line search on the delay.
pub fn fit_loop(
    target: &PhaseTarget,
    n_pole_pairs: usize,
    pole_radius: f64,
    weights: &[f64],
) -> Result<LoopFit> {
    if target.nonzero_count() < 2 {
        return Err(Error::arg(format!(
            "fit needs at least 2 nonzero resonances, got {}",
            target.nonzero_count()
        )));
    }
    if weights.len() != target.len() {
        return Err(Error::arg(format!(
            "{} weights for {} targets",
            weights.len(),
            target.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || weights.iter().all(|&w| w == 0.0) {
        return Err(Error::arg("weights must be nonnegative, finite and not all zero"));
    }
    if !(0.0..1.0).contains(&pole_radius) {
        return Err(Error::Stability(format!("pole radius {pole_radius} outside [0, 1)")));
    }

    let omegas = &target.omegas;
    let first = omegas.iter().copied().find(|&w| w > 0.0).unwrap_or_default();
    let objective = Objective {
        target,
        weights,
        radius: pole_radius,
        pairs: n_pole_pairs,
        knee_lo: KNEE_BAND.0 * first,
        knee_hi: KNEE_BAND.1 * first,
    };

    // The allpass only ever lowers the phase, so the delay cannot exceed the
    // steepest average slope towards the last target.
    let last = omegas.len() - 1;
    let max_delay = ((-target.phases[last] / omegas[last]).ceil() as usize).max(1) + 1;

    let slope = {
        let num: f64 = omegas.iter().zip(&target.phases).map(|(w, p)| w * p).sum();
        let den: f64 = omegas.iter().map(|w| w * w).sum();
        -num / den
    };
    let spacing = omegas[last] - omegas[last - 1];
    let seeds = vec![Candidate {
        error: 0.0,
        delay: (slope.round() as usize).clamp(1, max_delay),
        knee: first,
        separation: spacing,
    }];

    if n_pole_pairs == 0 {
        let best = (1..=max_delay)
            .map(|d| (objective.eval(d, 0.0, 0.0), d))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("at least one delay");
        return finish(target, n_pole_pairs, pole_radius, best.1, 0.0, 0.0, best.0);
    }

    let best = search(&objective, seeds, max_delay);
    finish(
        target,
        n_pole_pairs,
        pole_radius,
        best.delay,
        best.knee,
        best.separation,
        best.error,
    )
}

/// Best grid point per delay over the objective's knee band, then
/// coordinate descent from the best few of those plus `seeds`.
fn search(objective: &Objective<'_>, mut seeds: Vec<Candidate>, max_delay: usize) -> Candidate {
    let pairs = objective.pairs;
    let sep_max = if pairs > 1 {
        (PI - objective.knee_lo) / (pairs - 1) as f64
    } else {
        objective.knee_hi - objective.knee_lo
    };
    let mut grid = Vec::with_capacity(max_delay);
    for delay in 1..=max_delay {
        let mut best = Candidate {
            error: f64::INFINITY,
            delay,
            knee: objective.knee_lo,
            separation: sep_max,
        };
        for i in 0..GRID_KNEE {
            let knee = objective.knee_lo
                + (objective.knee_hi - objective.knee_lo) * (i as f64 + 0.5) / GRID_KNEE as f64;
            for j in 0..GRID_SEPARATION {
                let separation = sep_max * (j as f64 + 0.5) / GRID_SEPARATION as f64;
                let e = objective.eval(delay, knee, separation);
                if e < best.error {
                    best = Candidate {
                        error: e,
                        delay,
                        knee,
                        separation,
                    };
                }
            }
        }
        grid.push(best);
    }
    grid.sort_by(|a, b| a.error.total_cmp(&b.error));
    seeds.extend(grid.into_iter().take(SEEDS_REFINED));

    seeds
        .into_iter()
        .map(|seed| refine(objective, seed, max_delay))
        .min_by(|a, b| a.error.total_cmp(&b.error))
        .expect("at least one seed")
}

fn refine(objective: &Objective<'_>, seed: Candidate, max_delay: usize) -> Candidate {
    let mut cur = seed;
    // Seeds outside the admissible region are pulled to its nearest corner.
    if !objective.in_bounds(cur.knee, cur.separation) {
        cur.knee = cur.knee.clamp(objective.knee_lo, objective.knee_hi);
        let room = (PI - cur.knee) / objective.pairs.max(1) as f64;
        cur.separation = cur.separation.clamp(1e-4, room);
    }
    cur.error = objective.eval(cur.delay, cur.knee, cur.separation);
    let mut steps = [0.05 * cur.knee.max(1e-3), 0.05 * cur.separation.max(1e-3)];

    for _ in 0..MAX_ITERATIONS {
        let before = cur.error;

        for delay in [cur.delay.saturating_sub(1), cur.delay + 1] {
            if (1..=max_delay).contains(&delay) {
                let e = objective.eval(delay, cur.knee, cur.separation);
                if e < cur.error {
                    cur.error = e;
                    cur.delay = delay;
                }
            }
        }

        // Expanding on success and shrinking on failure keeps the number of
        // evaluations per axis bounded.
        for (axis, step) in steps.iter_mut().enumerate() {
            let mut moved = false;
            for sign in [1.0, -1.0] {
                let (knee, separation) = match axis {
                    0 => (cur.knee + sign * *step, cur.separation),
                    _ => (cur.knee, cur.separation + sign * *step),
                };
                let e = objective.eval(cur.delay, knee, separation);
                if e < cur.error {
                    cur = Candidate {
                        error: e,
                        delay: cur.delay,
                        knee,
                        separation,
                    };
                    moved = true;
                    break;
                }
            }
            *step = if moved { (*step * 2.0).min(0.5) } else { *step * 0.5 };
        }

        let settled = steps[0].max(steps[1]) < STEP_FLOOR;
        if settled && before - cur.error <= IMPROVEMENT_TOLERANCE * before {
            break;
        }
    }
    cur
}

fn finish(
    target: &PhaseTarget,
    n_pole_pairs: usize,
    pole_radius: f64,
    delay: usize,
    knee: f64,
    separation: f64,
    residual: f64,
) -> Result<LoopFit> {
    let design = LoopDesign {
        delay_samples: delay,
        pole_radius: if n_pole_pairs == 0 { 0.0 } else { pole_radius },
        first_pole_angle: knee,
        pole_separation: separation,
        n_pole_pairs,
        loop_gain: 1.0,
        loss_fir: None,
    };
    if !is_phase_monotonic(&design, 4096) {
        return Err(Error::Numeric(
            "fitted loop phase is not strictly decreasing".to_string(),
        ));
    }
    let max_phase_error = phase_errors(&design, target)
        .into_iter()
        .fold(0.0_f64, |m, e| m.max(e.abs()));
    if !(residual <= FAILURE_THRESHOLD) {
        return Err(Error::DesignFailure {
            residual,
            threshold: FAILURE_THRESHOLD,
            design: Box::new(design),
        });
    }
    Ok(LoopFit {
        design,
        residual,
        max_phase_error,
    })
}

/// Checks that the loop phase strictly decreases on a uniform grid over `[0, pi)`.
pub fn is_phase_monotonic(design: &LoopDesign, points: usize) -> bool {
    let mut prev = allpass_loop_phase(design, 0.0);
    (1..points).all(|i| {
        let p = allpass_loop_phase(design, PI * i as f64 / points as f64);
        let ok = p < prev;
        prev = p;
        ok
    })
}

/// Moves the first pole (and with it the whole pole grid) so the loop's
/// fundamental lands on `measured_hz`. Delay, spacing and radius are kept.
pub fn retune_first_pole(
    design: &LoopDesign,
    measured_hz: f64,
    sample_rate: f64,
) -> Result<LoopDesign> {
    design.validate()?;
    if design.n_pole_pairs == 0 {
        return Err(Error::arg("a delay-only loop has no pole to retune"));
    }
    let current = fundamental(design, sample_rate)
        .ok_or_else(|| Error::Numeric("loop has no resonance below Nyquist".into()))?;
    if !(measured_hz > 0.0) || (measured_hz / current - 1.0).abs() > MAX_RETUNE_FRACTION {
        return Err(Error::arg(format!(
            "measured fundamental {measured_hz} Hz deviates more than {}% from {current:.2} Hz",
            MAX_RETUNE_FRACTION * 100.0
        )));
    }

    let with_knee = |knee: f64| LoopDesign {
        first_pole_angle: knee,
        ..design.clone()
    };
    let miss = |knee: f64| {
        fundamental(&with_knee(knee), sample_rate).map_or(f64::NAN, |f| f - measured_hz)
    };
    if miss(design.first_pole_angle).abs() < 1e-9 {
        return Ok(design.clone());
    }

    let lo = 1e-6;
    let hi = PI - (design.n_pole_pairs - 1) as f64 * design.pole_separation - 1e-6;
    const SCAN: usize = 512;
    let mut brackets = Vec::new();
    let mut prev = (lo, miss(lo));
    for i in 1..=SCAN {
        let knee = lo + (hi - lo) * i as f64 / SCAN as f64;
        let m = miss(knee);
        if prev.1.is_finite() && m.is_finite() && prev.1 * m <= 0.0 {
            brackets.push((prev.0, knee, prev.1));
        }
        prev = (knee, m);
    }
    let (mut a, mut b, mut fa) = brackets
        .into_iter()
        .min_by(|x, y| {
            let dx = (0.5 * (x.0 + x.1) - design.first_pole_angle).abs();
            let dy = (0.5 * (y.0 + y.1) - design.first_pole_angle).abs();
            dx.total_cmp(&dy)
        })
        .ok_or_else(|| {
            Error::Numeric(format!(
                "no first-pole angle moves the fundamental to {measured_hz} Hz"
            ))
        })?;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = miss(mid);
        if fm.abs() < 1e-6 || b - a < 1e-14 {
            a = mid;
            b = mid;
            break;
        }
        if fa * fm <= 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    Ok(with_knee(0.5 * (a + b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::{ModeLabel, SphereSpec};
    use num_complex::Complex64;

    fn series(freqs: &[f64]) -> ModeSeries {
        ModeSeries {
            label: ModeLabel::Order(0),
            frequencies: freqs.to_vec(),
        }
    }

    fn sphere_target(order: usize) -> PhaseTarget {
        let all = SphereSpec::new(0.188, 23.0).unwrap().mode_series().unwrap();
        build_phase_targets(&all[order].truncated(FIT_BAND_HZ), DEFAULT_SAMPLE_RATE).unwrap()
    }

    fn sample_design() -> LoopDesign {
        LoopDesign {
            delay_samples: 12,
            pole_radius: 0.95,
            first_pole_angle: 0.18,
            pole_separation: 0.15,
            n_pole_pairs: 3,
            loop_gain: 1.0,
            loss_fir: None,
        }
    }

    fn transfer(sections: &[AllpassSection], omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            acc * (s.a2 + s.a1 * z1 + z2) / (1.0 + s.a1 * z1 + s.a2 * z2)
        })
    }

    #[test]
    fn targets_from_order_zero_values() {
        let t = build_phase_targets(&series(&[0.0, 1314.0, 2260.0]), 44_100.0).unwrap();
        let want = [0.0, 2.0 * PI * 1314.0 / 44_100.0, 2.0 * PI * 2260.0 / 44_100.0];
        for (a, b) in t.omegas().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((t.omegas()[1] - 0.1872).abs() < 1e-4);
        assert!((t.omegas()[2] - 0.3220).abs() < 1e-4);
        assert_eq!(t.phases(), &[0.0, -2.0 * PI, -4.0 * PI]);
        assert!(t.dc_is_mode());
    }

    #[test]
    fn targets_insert_dc_for_order_one() {
        let t = build_phase_targets(&series(&[609.0, 1738.0]), 44_100.0).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.omegas()[0], 0.0);
        assert!(!t.dc_is_mode());
        assert_eq!(default_weights(&t)[0], 0.0);
    }

    #[test]
    fn target_errors() {
        assert!(build_phase_targets(&series(&[]), 44_100.0).is_err());
        let err = build_phase_targets(&series(&[100.0, 30_000.0]), 44_100.0).unwrap_err();
        assert!(err.to_string().contains("30000"));
        assert!(build_phase_targets(&series(&[200.0, 100.0]), 44_100.0).is_err());
    }

    #[test]
    fn harmonic_targets_are_collinear() {
        let t = build_phase_targets(&series(&[0.0, 441.0, 882.0, 1323.0]), 44_100.0).unwrap();
        for (w, p) in t.omegas().iter().zip(t.phases()) {
            assert!((p + w * 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_schedule() {
        let t = build_phase_targets(&series(&[0.0, 1.0, 2.0, 3.0]), 44_100.0).unwrap();
        let w = default_weights(&t);
        assert_eq!(w, vec![1.0, 1.0, 1.0 / 9.0, 1.0 / 16.0]);
    }

    #[test]
    fn pole_pair_schedule() {
        assert_eq!(pole_pairs_for_radius(0.188), 3);
        assert_eq!(pole_pairs_for_radius(0.49), 3);
        assert_eq!(pole_pairs_for_radius(0.5), 4);
        assert_eq!(pole_pairs_for_radius(0.8), 5);
    }

    #[test]
    fn delay_only_phase_is_linear() {
        let d = LoopDesign::delay_only(17);
        for i in 0..50 {
            let w = i as f64 * 0.06;
            assert_eq!(allpass_loop_phase(&d, w), -w * 17.0);
        }
    }

    #[test]
    fn phase_is_zero_at_dc() {
        assert_eq!(allpass_loop_phase(&sample_design(), 0.0), 0.0);
    }

    #[test]
    fn closed_form_phase_matches_unwrapped_transfer_function() {
        for design in [sample_design(), LoopDesign { pole_radius: 0.5, ..sample_design() }] {
            let secs = sections(&design);
            let n = 4096;
            let mut unwrapped = 0.0;
            let mut prev_wrapped = 0.0;
            for i in 0..n {
                let w = PI * i as f64 / n as f64;
                let wrapped = transfer(&secs, w).arg();
                if i > 0 {
                    let mut d = wrapped - prev_wrapped;
                    while d > PI {
                        d -= 2.0 * PI;
                    }
                    while d < -PI {
                        d += 2.0 * PI;
                    }
                    unwrapped += d;
                }
                prev_wrapped = wrapped;
                assert!((allpass_phase(&design, w) - unwrapped).abs() < 1e-6, "w = {w}");
            }
        }
    }

    #[test]
    fn sections_have_unit_magnitude() {
        let one = LoopDesign {
            delay_samples: 1,
            pole_radius: 0.9,
            first_pole_angle: PI / 2.0,
            pole_separation: 0.0,
            n_pole_pairs: 1,
            loop_gain: 1.0,
            loss_fir: None,
        };
        let s = sections(&one);
        assert_eq!(s.len(), 1);
        assert!(s[0].a1.abs() < 1e-15);
        assert!((s[0].a2 - 0.81).abs() < 1e-15);
        for i in 0..128 {
            let w = PI * i as f64 / 128.0;
            assert!((transfer(&s, w).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_radius_sections_are_pure_delays() {
        let d = LoopDesign { pole_radius: 0.0, ..sample_design() };
        for s in sections(&d) {
            assert_eq!(s.a2, 0.0);
            assert_eq!(s.a1, 0.0);
        }
    }

    #[test]
    fn cascade_phase_is_sum_of_sections() {
        let d = sample_design();
        let secs = sections(&d);
        for i in 1..64 {
            let w = PI * i as f64 / 64.0;
            let total: Complex64 = transfer(&secs, w);
            let parts: f64 = secs.iter().map(|s| transfer(&[*s], w).arg()).sum();
            let diff = (total.arg() - parts).rem_euclid(2.0 * PI);
            assert!(diff < 1e-9 || 2.0 * PI - diff < 1e-9);
        }
    }

    #[test]
    fn sections_reproduce_bitwise() {
        let d = sample_design();
        let copy = LoopDesign { loop_gain: 0.5, delay_samples: 99, ..d.clone() };
        assert_eq!(sections(&d), sections(&copy));
    }

    #[test]
    fn harmonic_target_needs_no_allpass() {
        let t = build_phase_targets(&series(&[0.0, 441.0, 882.0, 1323.0, 1764.0]), 44_100.0).unwrap();
        let w = default_weights(&t);
        let fit = fit_loop(&t, 0, 0.95, &w).unwrap();
        assert_eq!(fit.design.delay_samples, 100);
        assert!(fit.residual < 1e-6);
        // Degenerate sections are plain two-sample delays.
        let fit = fit_loop(&t, 3, 0.0, &w).unwrap();
        assert_eq!(fit.design.delay_samples, 94);
        assert!(fit.residual < 1e-6);
        // With a real pole radius the cascade cannot be exactly linear; a dense
        // scan over all angles bottoms out at 1.25e-5, and keeping the first
        // pole near the fundamental costs a little more.
        let fit = fit_loop(&t, 3, 0.95, &w).unwrap();
        assert!(fit.residual < 0.01, "{}", fit.residual);
    }

    #[test]
    fn sphere_order_zero_fit() {
        let t = sphere_target(0);
        let fit = fit_loop(&t, 3, DEFAULT_POLE_RADIUS, &default_weights(&t)).unwrap();
        for (k, e) in phase_errors(&fit.design, &t).iter().enumerate().take(5) {
            assert!(e.abs() < 0.15, "k = {k}: {e}");
        }
        assert!(is_phase_monotonic(&fit.design, 4096));
    }

    #[test]
    fn first_resonance_weighting_helps_the_fundamental() {
        for order in [0, 2, 3] {
            let t = sphere_target(order);
            let uniform = vec![1.0; t.len()];
            let mut focused = vec![0.05; t.len()];
            focused[1] = 1.0;
            let a = fit_loop(&t, 3, DEFAULT_POLE_RADIUS, &uniform).unwrap();
            let b = fit_loop(&t, 3, DEFAULT_POLE_RADIUS, &focused).unwrap();
            let ea = phase_errors(&a.design, &t)[1].abs();
            let eb = phase_errors(&b.design, &t)[1].abs();
            assert!(eb <= ea + 1e-12, "order {order}: focused {eb} vs uniform {ea}");
        }
    }

    #[test]
    fn fit_preconditions() {
        let t = build_phase_targets(&series(&[0.0, 1000.0]), 44_100.0).unwrap();
        assert!(matches!(fit_loop(&t, 3, 0.95, &[1.0, 1.0]), Err(Error::Argument(_))));
        let t = sphere_target(0);
        assert!(fit_loop(&t, 3, 0.95, &[1.0]).is_err());
        assert!(fit_loop(&t, 3, 1.0, &default_weights(&t)).is_err());
    }

    #[test]
    fn impossible_target_reports_failure() {
        // Widely spaced resonances after a dense start cannot be met by a
        // loop whose group delay only grows.
        let t = build_phase_targets(&series(&[0.0, 100.0, 200.0, 3000.0, 6000.0]), 44_100.0).unwrap();
        match fit_loop(&t, 1, 0.95, &vec![1.0; t.len()]) {
            Err(Error::DesignFailure { residual, design, .. }) => {
                assert!(residual > FAILURE_THRESHOLD);
                assert!(design.delay_samples > 0);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn realized_resonances_match_targets() {
        let t = sphere_target(2);
        let fit = fit_loop(&t, 3, DEFAULT_POLE_RADIUS, &default_weights(&t)).unwrap();
        let res = realized_resonances(&fit.design, DEFAULT_SAMPLE_RATE, FIT_BAND_HZ);
        let theory = SphereSpec::new(0.188, 23.0).unwrap().mode_series().unwrap()[2].truncated(FIT_BAND_HZ);
        for (r, f) in res.iter().zip(&theory.frequencies[1..]) {
            assert!((r - f).abs() / f < 0.03, "{r} vs {f}");
        }
    }

    #[test]
    fn retune_fixed_point() {
        let d = sample_design();
        let f = fundamental(&d, DEFAULT_SAMPLE_RATE).unwrap();
        let r = retune_first_pole(&d, f, DEFAULT_SAMPLE_RATE).unwrap();
        assert!((r.first_pole_angle - d.first_pole_angle).abs() < 1e-6);
    }

    #[test]
    fn retune_moves_fundamental() {
        let d = sample_design();
        let f = fundamental(&d, DEFAULT_SAMPLE_RATE).unwrap();
        let r = retune_first_pole(&d, f * 1.1, DEFAULT_SAMPLE_RATE).unwrap();
        let g = fundamental(&r, DEFAULT_SAMPLE_RATE).unwrap();
        assert!((g - f * 1.1).abs() < 1.0, "{g}");
        assert_eq!(r.delay_samples, d.delay_samples);
        assert_eq!(r.pole_separation, d.pole_separation);
        assert_eq!(r.pole_radius, d.pole_radius);
    }

    #[test]
    fn retune_guards() {
        let d = sample_design();
        let f = fundamental(&d, DEFAULT_SAMPLE_RATE).unwrap();
        assert!(matches!(retune_first_pole(&d, 2.0 * f, DEFAULT_SAMPLE_RATE), Err(Error::Argument(_))));
        assert!(retune_first_pole(&LoopDesign::delay_only(10), 4000.0, DEFAULT_SAMPLE_RATE).is_err());
    }

    #[test]
    fn validate_rejects_unstable() {
        let mut d = sample_design();
        d.pole_radius = 1.0;
        assert!(matches!(d.validate(), Err(Error::Stability(_))));
        let mut d = sample_design();
        d.pole_separation = 2.0;
        assert!(d.validate().is_err());
        assert!(LoopDesign::delay_only(0).validate().is_err());
    }
}
