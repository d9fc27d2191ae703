//! Project configuration documents (TOML) and the network they describe.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acoustics::{box_mode_series, BoxSpec, ModeSeries, SphereSpec, Triplet};
use crate::allpass::{DEFAULT_POLE_RADIUS, DEFAULT_SAMPLE_RATE};
use crate::analysis::{verification_references, VERIFY_BAND_HZ};
use crate::bessel::{MAX_ROOT_COUNT, MAX_ROOT_ORDER};
use crate::design::{design_sphere, ChannelDesign, DesignOptions, OrderOverride, DEFAULT_LOOP_GAIN};
use crate::error::{Error, Result};
use crate::fdn::{
    attach_losses, box_triplets, build_box_fdn, build_sphere_fdn, FdnConfig, MatrixChoice,
};

const MAX_POLE_PAIRS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    pub temperature_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sphere: Option<SphereSection>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub box_room: Option<BoxSection>,
    #[serde(default)]
    pub allpass: AllpassSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub measured: Vec<MeasuredResonance>,
}

fn default_sample_rate() -> f64 {
    DEFAULT_SAMPLE_RATE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSection {
    pub radius_m: f64,
    #[serde(default = "default_max_order")]
    pub max_order: u32,
    #[serde(default = "default_roots_per_order")]
    pub roots_per_order: usize,
}

fn default_max_order() -> u32 {
    SphereSpec::DEFAULT_MAX_ORDER
}

fn default_roots_per_order() -> usize {
    SphereSpec::DEFAULT_ROOTS_PER_ORDER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSection {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
    pub channels: usize,
    /// Explicit `[l, m, n]` directions; enumerated when absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triplets: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllpassSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pole_pairs: Option<usize>,
    #[serde(default = "default_pole_radius")]
    pub pole_radius: f64,
    #[serde(default, rename = "order", skip_serializing_if = "Vec::is_empty")]
    pub orders: Vec<OrderSettings>,
}

impl Default for AllpassSection {
    fn default() -> Self {
        AllpassSection {
            pole_pairs: None,
            pole_radius: DEFAULT_POLE_RADIUS,
            orders: Vec::new(),
        }
    }
}

fn default_pole_radius() -> f64 {
    DEFAULT_POLE_RADIUS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderSettings {
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pole_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pole_pairs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Diagonal,
    Lambertian,
    Blend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_matrix")]
    pub matrix: MatrixKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_alpha: Option<f64>,
    #[serde(default = "default_loop_gain")]
    pub loop_gain: f64,
    #[serde(default)]
    pub direct_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_gains: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_gains: Option<Vec<f64>>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            matrix: MatrixKind::Diagonal,
            diffusion_alpha: None,
            loop_gain: DEFAULT_LOOP_GAIN,
            direct_gain: 0.0,
            input_gains: None,
            output_gains: None,
        }
    }
}

fn default_matrix() -> MatrixKind {
    MatrixKind::Diagonal
}

fn default_loop_gain() -> f64 {
    DEFAULT_LOOP_GAIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    /// Two-tap loss filter `[h0, h1]` used in every channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fir: Option<[f64; 2]>,
    /// One-pole coefficient of the output lowpass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowpass: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredResonance {
    pub n: u32,
    pub frequency_hz: f64,
}

/// Network plus the per-order design record for sphere projects.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPlan {
    pub fdn: FdnConfig,
    pub channels: Vec<ChannelDesign>,
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses and validates; errors carry the 1-based line they refer to.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ProjectConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            Error::config(line, e.message().to_string())
        })?;
        cfg.validate_against(Some(text))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_against(None)
    }

    fn validate_against(&self, text: Option<&str>) -> Result<()> {
        let fail = |table: &str, key: &str, msg: String| {
            Error::config(text.and_then(|t| find_key_line(t, table, key)), msg)
        };
        if !(self.sample_rate_hz >= 1000.0 && self.sample_rate_hz <= 384_000.0) {
            return Err(fail("", "sample_rate_hz", format!(
                "sample_rate_hz = {} must lie in [1000, 384000]",
                self.sample_rate_hz
            )));
        }
        if !(self.temperature_c > -40.0 && self.temperature_c < 60.0) {
            return Err(fail("", "temperature_c", format!(
                "temperature_c = {} must lie in (-40, 60)",
                self.temperature_c
            )));
        }
        let channels = match (&self.sphere, &self.box_room) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::config(None, "exactly one of [sphere] or [box] is required"));
            }
            (Some(s), None) => {
                if !(s.radius_m > 0.01 && s.radius_m < 10.0) {
                    return Err(fail("sphere", "radius_m", format!(
                        "radius_m = {} must lie in (0.01, 10)",
                        s.radius_m
                    )));
                }
                if s.max_order > MAX_ROOT_ORDER {
                    return Err(fail("sphere", "max_order", format!(
                        "max_order = {} exceeds {MAX_ROOT_ORDER}",
                        s.max_order
                    )));
                }
                if s.roots_per_order == 0 || s.roots_per_order > MAX_ROOT_COUNT {
                    return Err(fail("sphere", "roots_per_order", format!(
                        "roots_per_order = {} must lie in 1..={MAX_ROOT_COUNT}",
                        s.roots_per_order
                    )));
                }
                for m in &self.measured {
                    if m.n > s.max_order {
                        return Err(fail("measured", "n", format!(
                            "measured order {} exceeds max_order {}",
                            m.n, s.max_order
                        )));
                    }
                    if !(m.frequency_hz > 0.0 && m.frequency_hz < self.sample_rate_hz / 2.0) {
                        return Err(fail("measured", "frequency_hz", format!(
                            "measured frequency {} Hz outside (0, Nyquist)",
                            m.frequency_hz
                        )));
                    }
                }
                s.max_order as usize + 1
            }
            (None, Some(b)) => {
                for (key, v) in [("x_m", b.x_m), ("y_m", b.y_m), ("z_m", b.z_m)] {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(fail("box", key, format!("{key} = {v} must be positive")));
                    }
                }
                if b.channels == 0 {
                    return Err(fail("box", "channels", "channels must be at least 1".into()));
                }
                if !self.measured.is_empty() {
                    return Err(fail("measured", "n", "measured resonances apply to spheres only".into()));
                }
                if !b.triplets.is_empty() && b.triplets.len() < b.channels {
                    return Err(fail("box", "triplets", format!(
                        "{} triplets listed for {} channels",
                        b.triplets.len(),
                        b.channels
                    )));
                }
                for t in &b.triplets {
                    Triplet::new(t[0], t[1], t[2])
                        .validate()
                        .map_err(|e| fail("box", "triplets", e.to_string()))?;
                }
                b.channels
            }
        };

        let ap = &self.allpass;
        if !(0.0..1.0).contains(&ap.pole_radius) {
            return Err(fail("allpass", "pole_radius", format!(
                "pole_radius = {} must lie in [0, 1)",
                ap.pole_radius
            )));
        }
        if ap.pole_pairs.is_some_and(|p| p > MAX_POLE_PAIRS) {
            return Err(fail("allpass", "pole_pairs", format!(
                "pole_pairs exceeds {MAX_POLE_PAIRS}"
            )));
        }
        for o in &ap.orders {
            if o.pole_radius.is_some_and(|r| !(0.0..1.0).contains(&r)) {
                return Err(fail("allpass.order", "pole_radius", format!(
                    "order {} pole_radius must lie in [0, 1)",
                    o.n
                )));
            }
            if o.pole_pairs.is_some_and(|p| p > MAX_POLE_PAIRS) {
                return Err(fail("allpass.order", "pole_pairs", format!(
                    "order {} pole_pairs exceeds {MAX_POLE_PAIRS}",
                    o.n
                )));
            }
        }

        let net = &self.network;
        if !(net.loop_gain > 0.0 && net.loop_gain <= 1.0) {
            return Err(fail("network", "loop_gain", format!(
                "loop_gain = {} must lie in (0, 1]",
                net.loop_gain
            )));
        }
        if !net.direct_gain.is_finite() {
            return Err(fail("network", "direct_gain", "direct_gain must be finite".into()));
        }
        match net.matrix {
            MatrixKind::Lambertian | MatrixKind::Blend if !channels.is_power_of_two() => {
                return Err(fail("network", "matrix", format!(
                    "a diffusing matrix needs a power-of-two channel count, got {channels}"
                )));
            }
            MatrixKind::Blend if !net.diffusion_alpha.is_some_and(|a| (0.0..=1.0).contains(&a)) => {
                return Err(fail("network", "diffusion_alpha", "blend needs diffusion_alpha in [0, 1]".into()));
            }
            _ => {}
        }
        for (key, gains) in [("input_gains", &net.input_gains), ("output_gains", &net.output_gains)] {
            if let Some(g) = gains {
                if g.len() != channels || g.iter().any(|v| !v.is_finite()) {
                    return Err(fail("network", key, format!(
                        "{key} needs {channels} finite values, got {}",
                        g.len()
                    )));
                }
            }
        }

        if let Some(l) = &self.losses {
            if let Some([h0, h1]) = l.fir {
                let peak = net.loop_gain * (h0.abs() + h1.abs());
                if !(peak < 1.0) && [h0, h1] != [1.0, 0.0] {
                    return Err(fail("losses", "fir", format!(
                        "loss filter with loop gain peaks at {peak:.6}, must stay below 1"
                    )));
                }
            }
            if l.lowpass.is_some_and(|p| !(0.0..1.0).contains(&p)) {
                return Err(fail("losses", "lowpass", "lowpass must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn sphere_spec(&self) -> Option<Result<SphereSpec>> {
        self.sphere.as_ref().map(|s| {
            SphereSpec::new(s.radius_m, self.temperature_c)?.with_orders(s.max_order, s.roots_per_order)
        })
    }

    pub fn box_spec(&self) -> Option<Result<BoxSpec>> {
        self.box_room.as_ref().map(|b| {
            let mut spec = BoxSpec::new(b.x_m, b.y_m, b.z_m, self.temperature_c)?;
            spec.triplets = b.triplets.iter().map(|t| Triplet::new(t[0], t[1], t[2])).collect();
            spec.validate()?;
            Ok(spec)
        })
    }

    pub fn design_options(&self) -> DesignOptions {
        DesignOptions {
            sample_rate: self.sample_rate_hz,
            pole_pairs: self.allpass.pole_pairs,
            pole_radius: self.allpass.pole_radius,
            loop_gain: self.network.loop_gain,
            overrides: self
                .allpass
                .orders
                .iter()
                .map(|o| {
                    (o.n, OrderOverride {
                        pole_radius: o.pole_radius,
                        pole_pairs: o.pole_pairs,
                    })
                })
                .collect::<BTreeMap<_, _>>(),
            measured: self.measured.iter().map(|m| (m.n, m.frequency_hz)).collect(),
        }
    }

    fn matrix_choice(&self) -> MatrixChoice {
        match self.network.matrix {
            MatrixKind::Diagonal => MatrixChoice::Diagonal,
            MatrixKind::Lambertian => MatrixChoice::Lambertian,
            MatrixKind::Blend => MatrixChoice::Blend {
                alpha: self.network.diffusion_alpha.unwrap_or(0.0),
            },
        }
    }

    /// Designs every channel and assembles the network.
    pub fn build(&self) -> Result<NetworkPlan> {
        self.validate()?;
        let sr = self.sample_rate_hz;
        let (mut fdn, channels) = if let Some(spec) = self.sphere_spec() {
            let spec = spec?;
            let channels = design_sphere(&spec, &self.design_options())?;
            let designs: Vec<_> = channels.iter().map(|c| c.design.clone()).collect();
            let fdn = build_sphere_fdn(
                &designs,
                self.matrix_choice(),
                self.network.input_gains.as_deref(),
                self.network.output_gains.as_deref(),
                sr,
            )?;
            (fdn, channels)
        } else {
            let spec = self.box_spec().expect("validated")?;
            let n = self.box_room.as_ref().expect("validated").channels;
            let mut fdn = build_box_fdn(&spec, n, self.matrix_choice(), sr)?.with_loop_gain(self.network.loop_gain)?;
            if let Some(b) = &self.network.input_gains {
                fdn.input_gains = b.clone();
            }
            if let Some(c) = &self.network.output_gains {
                fdn.output_gains = c.clone();
            }
            (fdn, Vec::new())
        };
        fdn.direct_gain = self.network.direct_gain;
        if let Some(l) = &self.losses {
            fdn = attach_losses(&fdn, &[l.fir.unwrap_or([1.0, 0.0])], l.lowpass)?;
        }
        fdn.validate()?;
        Ok(NetworkPlan { fdn, channels })
    }

    /// Theoretical resonances the rendered network is compared with.
    pub fn reference_series(&self) -> Result<Vec<ModeSeries>> {
        if let Some(spec) = self.sphere_spec() {
            let spec = spec?;
            verification_references(&spec, spec.max_order as usize + 1)
        } else {
            let spec = self.box_spec().expect("validated")?;
            let n = self.box_room.as_ref().expect("validated").channels;
            box_triplets(&spec, n)?
                .into_iter()
                .map(|t| box_mode_series(&spec, t, VERIFY_BAND_HZ))
                .collect()
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[table]` (or `[[table]]`); `""` is the root table.
fn find_key_line(text: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut fallback = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[') {
            current = header.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == table && fallback.is_none() {
                fallback = Some(i + 1);
            }
            continue;
        }
        let found = line
            .split_once('=')
            .is_some_and(|(k, _)| k.trim() == key);
        if found && current == table {
            return Some(i + 1);
        }
    }
    fallback
}
