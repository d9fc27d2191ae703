//! Geometry and temperature to physical mode frequencies.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bessel::{self, RootTable};
use crate::error::{Error, Result};

const SPEED_AT_ZERO_C: f64 = 331.8;

/// Speed of sound in air (m/s) at `t` degrees Celsius, `331.8 sqrt((t+273)/273)`.
pub fn speed_of_sound(temperature_c: f64) -> Result<f64> {
    check_temperature(temperature_c)?;
    Ok(SPEED_AT_ZERO_C * ((temperature_c + 273.0) / 273.0).sqrt())
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > -40.0 && t < 60.0) {
        return Err(Error::arg(format!(
            "temperature {t} degC outside (-40, 60)"
        )));
    }
    Ok(())
}

/// Rigid spherical cavity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub radius_m: f64,
    pub temperature_c: f64,
    pub max_order: u32,
    pub roots_per_order: usize,
}

impl SphereSpec {
    pub const DEFAULT_MAX_ORDER: u32 = 6;
    pub const DEFAULT_ROOTS_PER_ORDER: usize = 8;

    pub fn new(radius_m: f64, temperature_c: f64) -> Result<Self> {
        let spec = SphereSpec {
            radius_m,
            temperature_c,
            max_order: Self::DEFAULT_MAX_ORDER,
            roots_per_order: Self::DEFAULT_ROOTS_PER_ORDER,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_orders(mut self, max_order: u32, roots_per_order: usize) -> Result<Self> {
        self.max_order = max_order;
        self.roots_per_order = roots_per_order;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m > 0.01 && self.radius_m < 10.0) {
            return Err(Error::arg(format!(
                "radius {} m outside (0.01, 10)",
                self.radius_m
            )));
        }
        check_temperature(self.temperature_c)?;
        if self.max_order > bessel::MAX_ROOT_ORDER {
            return Err(Error::arg(format!(
                "max order {} exceeds {}",
                self.max_order,
                bessel::MAX_ROOT_ORDER
            )));
        }
        if self.roots_per_order == 0 || self.roots_per_order > bessel::MAX_ROOT_COUNT {
            return Err(Error::arg(format!(
                "roots per order {} outside 1..={}",
                self.roots_per_order,
                bessel::MAX_ROOT_COUNT
            )));
        }
        Ok(())
    }

    pub fn speed_of_sound(&self) -> Result<f64> {
        speed_of_sound(self.temperature_c)
    }

    /// Computes root tables and the mode series for every order.
    pub fn mode_series(&self) -> Result<Vec<ModeSeries>> {
        let tables = bessel::root_tables(self.max_order, self.roots_per_order)?;
        sphere_mode_series(self, &tables)
    }
}

/// Index triplet `(l, m, n)` of a rectangular-room mode direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub l: u32,
    pub m: u32,
    pub n: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Axial,
    Tangential,
    Oblique,
}

impl Triplet {
    pub const fn new(l: u32, m: u32, n: u32) -> Self {
        Triplet { l, m, n }
    }

    /// Not all zero, and no common divisor above one.
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 && self.m == 0 && self.n == 0 {
            return Err(Error::arg("triplet (0,0,0) has no direction"));
        }
        let g = gcd(gcd(self.l, self.m), self.n);
        if g > 1 {
            return Err(Error::arg(format!(
                "triplet {self} shares the common divisor {g}"
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> ModeKind {
        match [self.l, self.m, self.n].iter().filter(|&&v| v == 0).count() {
            2 => ModeKind::Axial,
            1 => ModeKind::Tangential,
            _ => ModeKind::Oblique,
        }
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.l, self.m, self.n)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Axial, tangential or oblique by the number of zero indices.
pub fn classify_triplet(triplet: Triplet) -> Result<ModeKind> {
    triplet.validate()?;
    Ok(triplet.kind())
}

/// Rectangular room with a chosen set of propagation directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
    pub temperature_c: f64,
    pub triplets: Vec<Triplet>,
}

impl BoxSpec {
    pub fn new(x_m: f64, y_m: f64, z_m: f64, temperature_c: f64) -> Result<Self> {
        let spec = BoxSpec {
            x_m,
            y_m,
            z_m,
            temperature_c,
            triplets: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("X", self.x_m), ("Y", self.y_m), ("Z", self.z_m)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("box dimension {name} = {v} must be positive")));
            }
        }
        check_temperature(self.temperature_c)?;
        self.triplets.iter().try_for_each(Triplet::validate)
    }
}

/// What a [`ModeSeries`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeLabel {
    Order(u32),
    Triplet(Triplet),
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeLabel::Order(n) => write!(f, "{n}"),
            ModeLabel::Triplet(t) => write!(f, "{}-{}-{}", t.l, t.m, t.n),
        }
    }
}

/// Ascending resonance frequencies (Hz) of one family; entry `i` is `s = i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSeries {
    pub label: ModeLabel,
    pub frequencies: Vec<f64>,
}

impl ModeSeries {
    /// Bessel order, when the series comes from a sphere.
    pub fn order(&self) -> Option<u32> {
        match self.label {
            ModeLabel::Order(n) => Some(n),
            ModeLabel::Triplet(_) => None,
        }
    }

    /// `(s, frequency)` pairs with `s` starting at 1.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.frequencies.iter().enumerate().map(|(i, &f)| (i + 1, f))
    }

    /// Copy restricted to frequencies at or below `max_hz`.
    pub fn truncated(&self, max_hz: f64) -> ModeSeries {
        ModeSeries {
            label: self.label,
            frequencies: self
                .frequencies
                .iter()
                .copied()
                .take_while(|&f| f <= max_hz)
                .collect(),
        }
    }
}

/// `f_ns = c z_ns / (2 pi a)` for every order `0..=spec.max_order`.
pub fn sphere_mode_series(spec: &SphereSpec, tables: &[RootTable]) -> Result<Vec<ModeSeries>> {
    spec.validate()?;
    let c = speed_of_sound(spec.temperature_c)?;
    let scale = c / (2.0 * PI * spec.radius_m);
    (0..=spec.max_order)
        .map(|n| {
            let table = tables
                .iter()
                .find(|t| t.order() == n)
                .ok_or_else(|| Error::arg(format!("no root table for order {n}")))?;
            if table.len() < spec.roots_per_order {
                return Err(Error::arg(format!(
                    "root table for order {n} has {} roots, {} needed",
                    table.len(),
                    spec.roots_per_order
                )));
            }
            Ok(ModeSeries {
                label: ModeLabel::Order(n),
                frequencies: table.roots()[..spec.roots_per_order]
                    .iter()
                    .map(|z| z * scale)
                    .collect(),
            })
        })
        .collect()
}

/// Round-trip time of the plane wave travelling along `triplet`:
/// `d = 2 / (c sqrt((l/X)^2 + (m/Y)^2 + (n/Z)^2))`.
pub fn box_delay_seconds(spec: &BoxSpec, triplet: Triplet) -> Result<f64> {
    triplet.validate()?;
    let c = speed_of_sound(spec.temperature_c)?;
    let k = ((triplet.l as f64 / spec.x_m).powi(2)
        + (triplet.m as f64 / spec.y_m).powi(2)
        + (triplet.n as f64 / spec.z_m).powi(2))
    .sqrt();
    Ok(2.0 / (c * k))
}

/// Harmonic series `k / d` of one box direction, up to `max_hz`.
pub fn box_mode_series(spec: &BoxSpec, triplet: Triplet, max_hz: f64) -> Result<ModeSeries> {
    let fundamental = 1.0 / box_delay_seconds(spec, triplet)?;
    let count = (max_hz / fundamental).floor() as usize;
    Ok(ModeSeries {
        label: ModeLabel::Triplet(triplet),
        frequencies: (1..=count).map(|k| k as f64 * fundamental).collect(),
    })
}

/// All valid triplets with components up to `max_component`, lowest fundamental first.
pub fn enumerate_triplets(max_component: u32, spec: &BoxSpec) -> Result<Vec<Triplet>> {
    if !(1..=8).contains(&max_component) {
        return Err(Error::arg(format!(
            "max triplet component {max_component} outside 1..=8"
        )));
    }
    let mut keyed = Vec::new();
    for l in 0..=max_component {
        for m in 0..=max_component {
            for n in 0..=max_component {
                let t = Triplet::new(l, m, n);
                if t.validate().is_ok() {
                    keyed.push((box_delay_seconds(spec, t)?, t));
                }
            }
        }
    }
    // Longest delay is the lowest fundamental; ties broken on the indices.
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    Ok(keyed.into_iter().map(|(_, t)| t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speed_of_sound_footnote_values() {
        assert_eq!(speed_of_sound(0.0).unwrap(), 331.8);
        let want = 331.8 * (296.0_f64 / 273.0).sqrt();
        assert!((speed_of_sound(23.0).unwrap() - want).abs() < 1e-12);
        let want = 331.8 * (286.0_f64 / 273.0).sqrt();
        assert!((speed_of_sound(13.0).unwrap() - want).abs() < 1e-12);
        assert!(speed_of_sound(60.0).is_err());
        assert!(speed_of_sound(-40.0).is_err());
        assert!(speed_of_sound(f64::NAN).is_err());
    }

    #[test]
    fn sphere_spec_ranges() {
        assert!(SphereSpec::new(0.01, 20.0).is_err());
        assert!(SphereSpec::new(10.0, 20.0).is_err());
        assert!(SphereSpec::new(0.188, 70.0).is_err());
        assert!(SphereSpec::new(0.188, 23.0).unwrap().with_orders(13, 4).is_err());
    }

    #[test]
    fn sphere_frequencies_from_roots() {
        let spec = SphereSpec::new(0.188, 23.0).unwrap().with_orders(2, 3).unwrap();
        let series = spec.mode_series().unwrap();
        assert_eq!(series.len(), 3);
        assert!((series[0].frequencies[1] - 1314.0).abs() < 2.0);
        assert!((series[1].frequencies[0] - 609.0).abs() < 2.0);
        assert!((series[2].frequencies[1] - 977.0).abs() < 2.0);
        for s in &series {
            assert!(s.frequencies.windows(2).all(|w| w[1] > w[0]));
            assert!(s.frequencies.iter().all(|&f| f >= 0.0));
        }
    }

    #[test]
    fn missing_table_is_rejected() {
        let spec = SphereSpec::new(0.188, 23.0).unwrap().with_orders(2, 3).unwrap();
        let tables = bessel::root_tables(1, 3).unwrap();
        assert!(matches!(sphere_mode_series(&spec, &tables), Err(Error::Argument(_))));
        let short = bessel::root_tables(2, 2).unwrap();
        assert!(matches!(sphere_mode_series(&spec, &short), Err(Error::Argument(_))));
    }

    #[test]
    fn doubling_radius_halves_frequencies() {
        let a = SphereSpec::new(0.2, 23.0).unwrap().mode_series().unwrap();
        let b = SphereSpec::new(0.4, 23.0).unwrap().mode_series().unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            for (fa, fb) in sa.frequencies.iter().zip(&sb.frequencies) {
                assert!((fa - 2.0 * fb).abs() <= 1e-12 * fa.max(1.0));
            }
        }
    }

    #[test]
    fn axial_delay_is_twice_the_length() {
        let spec = BoxSpec::new(3.0, 4.0, 5.0, 0.0).unwrap();
        let d = box_delay_seconds(&spec, Triplet::new(1, 0, 0)).unwrap();
        assert!((d - 6.0 / 331.8).abs() < 1e-15);
        assert!((d * 331.8 - 6.0).abs() < 1e-12);
    }

    #[test]
    fn tangential_delay() {
        let spec = BoxSpec::new(3.0, 3.0, 5.0, 0.0).unwrap();
        let d = box_delay_seconds(&spec, Triplet::new(1, 1, 0)).unwrap();
        let want = 2.0 / (331.8 * 2.0_f64.sqrt() / 3.0);
        assert!((d - want).abs() < 1e-15);
    }

    #[test]
    fn invalid_triplets() {
        let spec = BoxSpec::new(3.0, 4.0, 5.0, 20.0).unwrap();
        assert!(box_delay_seconds(&spec, Triplet::new(2, 0, 0)).is_err());
        assert!(box_delay_seconds(&spec, Triplet::new(0, 0, 0)).is_err());
        assert!(classify_triplet(Triplet::new(2, 4, 6)).is_err());
    }

    #[test]
    fn classification() {
        assert_eq!(classify_triplet(Triplet::new(1, 0, 0)).unwrap(), ModeKind::Axial);
        assert_eq!(classify_triplet(Triplet::new(1, 1, 0)).unwrap(), ModeKind::Tangential);
        assert_eq!(classify_triplet(Triplet::new(1, 1, 1)).unwrap(), ModeKind::Oblique);
        assert_eq!(classify_triplet(Triplet::new(0, 2, 3)).unwrap(), ModeKind::Tangential);
    }

    #[test]
    fn enumerate_unit_triplets() {
        let spec = BoxSpec::new(5.0, 4.0, 3.0, 20.0).unwrap();
        let mut got = enumerate_triplets(1, &spec).unwrap();
        assert_eq!(got[0], Triplet::new(1, 0, 0));
        got.sort();
        let mut want = vec![
            Triplet::new(1, 0, 0),
            Triplet::new(0, 1, 0),
            Triplet::new(0, 0, 1),
            Triplet::new(1, 1, 0),
            Triplet::new(1, 0, 1),
            Triplet::new(0, 1, 1),
            Triplet::new(1, 1, 1),
        ];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn enumerate_matches_brute_force() {
        let spec = BoxSpec::new(3.0, 4.0, 5.0, 20.0).unwrap();
        for max in 1..=4u32 {
            let got = enumerate_triplets(max, &spec).unwrap();
            assert!(!got.contains(&Triplet::new(2, 2, 2)));
            let mut brute = 0;
            for l in 0..=max {
                for m in 0..=max {
                    for n in 0..=max {
                        let nonzero = [l, m, n].into_iter().filter(|&v| v > 0).collect::<Vec<_>>();
                        if nonzero.is_empty() {
                            continue;
                        }
                        let coprime = (2..=max).all(|d| !nonzero.iter().all(|v| v % d == 0));
                        if coprime {
                            brute += 1;
                        }
                    }
                }
            }
            assert_eq!(got.len(), brute, "max = {max}");
            let delays: Vec<f64> = got.iter().map(|&t| box_delay_seconds(&spec, t).unwrap()).collect();
            assert!(delays.windows(2).all(|w| w[0] >= w[1]));
        }
        assert!(enumerate_triplets(0, &spec).is_err());
        assert!(enumerate_triplets(9, &spec).is_err());
    }

    #[test]
    fn box_series_is_harmonic() {
        let spec = BoxSpec::new(3.0, 4.0, 5.0, 0.0).unwrap();
        let s = box_mode_series(&spec, Triplet::new(0, 0, 1), 400.0).unwrap();
        let f0 = 331.8 / 10.0;
        assert_eq!(s.frequencies.len(), (400.0 / f0) as usize);
        for (k, f) in s.frequencies.iter().enumerate() {
            assert!((f - (k + 1) as f64 * f0).abs() < 1e-9);
        }
    }
}
