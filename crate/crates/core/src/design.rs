//! Per-order channel design for a sphere: fit, fall back, retune.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::acoustics::SphereSpec;
use crate::allpass::{
    build_phase_targets, default_weights, fit_loop, pole_pairs_for_radius, retune_first_pole,
    LoopDesign, DEFAULT_POLE_RADIUS, DEFAULT_SAMPLE_RATE, FIT_BAND_HZ,
};
use crate::error::{Error, Result};
use crate::fdn::harmonic_fallback_channel;

pub const DEFAULT_LOOP_GAIN: f64 = 0.997;

/// Per-order replacements for the global allpass settings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OrderOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pole_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pole_pairs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    pub sample_rate: f64,
    /// `None` picks the radius-dependent default.
    pub pole_pairs: Option<usize>,
    pub pole_radius: f64,
    pub loop_gain: f64,
    pub overrides: BTreeMap<u32, OrderOverride>,
    /// Measured fundamentals `(n, Hz)` the first pole is retuned to.
    pub measured: Vec<(u32, f64)>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            sample_rate: DEFAULT_SAMPLE_RATE,
            pole_pairs: None,
            pole_radius: DEFAULT_POLE_RADIUS,
            loop_gain: DEFAULT_LOOP_GAIN,
            overrides: BTreeMap::new(),
            measured: Vec::new(),
        }
    }
}

/// Outcome for one Bessel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDesign {
    pub order: u32,
    pub design: LoopDesign,
    /// Weighted squared phase error of the fit; absent for fallback channels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_phase_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retuned_to_hz: Option<f64>,
    #[serde(default)]
    pub harmonic_fallback: bool,
}

/// Designs one channel per order `0..=spec.max_order`.
///
/// Orders with fewer than two resonances inside the fit band get a harmonic
/// comb on their fundamental.
pub fn design_sphere(spec: &SphereSpec, options: &DesignOptions) -> Result<Vec<ChannelDesign>> {
    spec.validate()?;
    if !(options.loop_gain > 0.0 && options.loop_gain <= 1.0) {
        return Err(Error::arg(format!("loop gain {} outside (0, 1]", options.loop_gain)));
    }
    let mut measured = BTreeMap::new();
    for &(n, f) in &options.measured {
        if n > spec.max_order {
            return Err(Error::arg(format!(
                "measured fundamental for order {n} but the design stops at order {}",
                spec.max_order
            )));
        }
        if measured.insert(n, f).is_some() {
            return Err(Error::arg(format!("order {n} has two measured fundamentals")));
        }
    }
    let default_pairs = options.pole_pairs.unwrap_or_else(|| pole_pairs_for_radius(spec.radius_m));

    spec.mode_series()?
        .into_iter()
        .enumerate()
        .map(|(n, series)| {
            let n = n as u32;
            let ov = options.overrides.get(&n).copied().unwrap_or_default();
            let band = series.truncated(FIT_BAND_HZ);
            let nonzero: Vec<f64> = band.frequencies.iter().copied().filter(|&f| f > 0.0).collect();

            let mut channel = if nonzero.len() < 2 {
                let first = series
                    .frequencies
                    .iter()
                    .copied()
                    .find(|&f| f > 0.0)
                    .ok_or_else(|| Error::arg(format!("order {n} has no nonzero resonance")))?;
                let fundamental = measured.get(&n).copied().unwrap_or(first);
                ChannelDesign {
                    order: n,
                    design: harmonic_fallback_channel(fundamental, options.sample_rate)?,
                    residual: None,
                    max_phase_error: None,
                    retuned_to_hz: measured.get(&n).copied(),
                    harmonic_fallback: true,
                }
            } else {
                let target = build_phase_targets(&band, options.sample_rate)?;
                let fit = fit_loop(
                    &target,
                    ov.pole_pairs.unwrap_or(default_pairs),
                    ov.pole_radius.unwrap_or(options.pole_radius),
                    &default_weights(&target),
                )?;
                let (design, retuned) = match measured.get(&n) {
                    Some(&f) => (retune_first_pole(&fit.design, f, options.sample_rate)?, Some(f)),
                    None => (fit.design, None),
                };
                ChannelDesign {
                    order: n,
                    design,
                    residual: Some(fit.residual),
                    max_phase_error: Some(fit.max_phase_error),
                    retuned_to_hz: retuned,
                    harmonic_fallback: false,
                }
            };
            channel.design.loop_gain = options.loop_gain;
            Ok(channel)
        })
        .collect()
}
