//! Feedback delay network runtime and builders.
//!
//! Each channel is a delay line whose output passes through the channel's
//! allpass cascade, optional two-tap loss filter and loop gain. The channel
//! outputs are summed with weights `c` into the network output and mixed by
//! the feedback matrix into the next channel inputs:
//!
//! ```text
//! s_i[t] = g_i * loss_i(ap_i(u_i[t - D_i]))
//! u_i[t] = b_i x[t] + sum_j A_ij s_j[t]
//! y[t]   = d x[t] + sum_i c_i s_i[t]
//! ```
//!
//! An optional one-pole lowpass `y_lp[t] = (1 - p) y[t] + p y_lp[t - 1]` is
//! applied to the summed output.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::acoustics::{box_delay_seconds, enumerate_triplets, BoxSpec, Triplet};
use crate::allpass::{sections, AllpassSection, LoopDesign};
use crate::error::{Error, Result};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    size: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(size: usize) -> Self {
        Matrix {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Matrix::zeros(size);
        for i in 0..size {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::arg("matrix rows must all have the matrix order as length"));
        }
        Ok(Matrix {
            size,
            data: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.size + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.size).all(|i| (0..self.size).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scaled(&self, k: f64) -> Matrix {
        Matrix {
            size: self.size,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    /// Largest singular value, from the eigenvalues of `A^T A`.
    pub fn spectral_norm(&self) -> f64 {
        let n = self.size;
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] = (0..n).map(|k| self.get(k, i) * self.get(k, j)).sum();
            }
        }
        symmetric_eigenvalues(gram, n)
            .into_iter()
            .fold(0.0_f64, f64::max)
            .max(0.0)
            .sqrt()
    }

    fn validate(&self) -> Result<()> {
        if self.data.len() != self.size * self.size {
            return Err(Error::arg("matrix data does not match its order"));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("matrix entries must be finite"));
        }
        Ok(())
    }
}

/// Cyclic Jacobi rotations on a symmetric matrix.
fn symmetric_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Feedback matrix families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MatrixChoice {
    Diagonal,
    Lambertian,
    Blend { alpha: f64 },
}

impl MatrixChoice {
    pub fn build(self, size: usize) -> Result<Matrix> {
        match self {
            MatrixChoice::Diagonal => diagonal_matrix(&vec![1.0; size]),
            MatrixChoice::Lambertian => lambertian_matrix(size, 1.0),
            MatrixChoice::Blend { alpha } => diffusion_blend(
                alpha,
                &diagonal_matrix(&vec![1.0; size])?,
                &lambertian_matrix(size, 1.0)?,
            ),
        }
    }
}

/// Diagonal feedback: independent comb channels.
pub fn diagonal_matrix(gains: &[f64]) -> Result<Matrix> {
    let mut m = Matrix::zeros(gains.len());
    for (i, &g) in gains.iter().enumerate() {
        if !g.is_finite() || g.abs() > 1.0 {
            return Err(Error::Stability(format!("diagonal gain {g} has magnitude above 1")));
        }
        m.set(i, i, g);
    }
    Ok(m)
}

/// `gain` times the Sylvester sign pattern scaled by `1/sqrt(N)`.
pub fn lambertian_matrix(size: usize, gain: f64) -> Result<Matrix> {
    if size == 0 || !size.is_power_of_two() {
        return Err(Error::arg(format!(
            "equal-magnitude orthogonal matrix needs a power-of-two order, got {size}"
        )));
    }
    if !gain.is_finite() {
        return Err(Error::arg("matrix gain must be finite"));
    }
    let scale = gain / (size as f64).sqrt();
    let mut m = Matrix::zeros(size);
    for i in 0..size {
        for j in 0..size {
            let sign = if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            m.set(i, j, sign * scale);
        }
    }
    Ok(m)
}

/// `(1 - alpha) diag + alpha lamb`, rescaled so its spectral norm equals the
/// larger of the two inputs' norms.
pub fn diffusion_blend(alpha: f64, diag: &Matrix, lamb: &Matrix) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::arg(format!("diffusion alpha {alpha} outside [0, 1]")));
    }
    if diag.size() != lamb.size() {
        return Err(Error::arg(format!(
            "cannot blend a {}x{0} matrix with a {}x{1} matrix",
            diag.size(),
            lamb.size()
        )));
    }
    if alpha == 0.0 {
        return Ok(diag.clone());
    }
    if alpha == 1.0 {
        return Ok(lamb.clone());
    }
    let mut m = Matrix::zeros(diag.size());
    for (k, v) in m.data.iter_mut().enumerate() {
        *v = (1.0 - alpha) * diag.data[k] + alpha * lamb.data[k];
    }
    let norm = m.spectral_norm();
    let limit = diag.spectral_norm().max(lamb.spectral_norm());
    Ok(if norm > 0.0 { m.scaled(limit / norm) } else { m })
}

/// A complete network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdnConfig {
    pub sample_rate: f64,
    pub channels: Vec<LoopDesign>,
    pub matrix: Matrix,
    pub input_gains: Vec<f64>,
    pub output_gains: Vec<f64>,
    #[serde(default)]
    pub direct_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_lowpass: Option<f64>,
}

impl FdnConfig {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 {
            return Err(Error::arg("network has no channels"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::arg(format!("sample rate {} must be positive", self.sample_rate)));
        }
        self.matrix.validate()?;
        if self.matrix.size() != n || self.input_gains.len() != n || self.output_gains.len() != n {
            return Err(Error::arg(format!(
                "{n} channels need a {n}x{n} matrix and {n} input and output gains"
            )));
        }
        if self
            .input_gains
            .iter()
            .chain(&self.output_gains)
            .chain(std::iter::once(&self.direct_gain))
            .any(|v| !v.is_finite())
        {
            return Err(Error::arg("gains must be finite"));
        }
        if let Some(p) = self.global_lowpass {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Stability(format!("lowpass coefficient {p} outside [0, 1)")));
            }
        }
        for ch in &self.channels {
            ch.validate()?;
        }
        let bound = self.matrix.spectral_norm() * self.max_channel_gain();
        if bound > 1.0 + 1e-12 {
            return Err(Error::Stability(format!(
                "matrix norm times largest channel gain is {bound:.6}, above 1"
            )));
        }
        Ok(())
    }

    /// Largest loop magnitude contributed by a channel's gain and loss filter.
    pub fn max_channel_gain(&self) -> f64 {
        self.channels
            .iter()
            .map(channel_peak_gain)
            .fold(0.0, f64::max)
    }

    /// Copy with every channel's loop gain replaced.
    pub fn with_loop_gain(&self, gain: f64) -> Result<FdnConfig> {
        let mut out = self.clone();
        for ch in &mut out.channels {
            ch.loop_gain = gain;
        }
        out.validate()?;
        Ok(out)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.channels.len().hash(&mut h);
        for ch in &self.channels {
            ch.delay_samples.hash(&mut h);
            ch.n_pole_pairs.hash(&mut h);
            ch.loss_fir.is_some().hash(&mut h);
        }
        self.global_lowpass.is_some().hash(&mut h);
        h.finish()
    }
}

fn channel_peak_gain(ch: &LoopDesign) -> f64 {
    let fir = ch.loss_fir.map_or(1.0, |[h0, h1]| h0.abs() + h1.abs());
    ch.loop_gain * fir
}

fn default_network(channels: Vec<LoopDesign>, matrix: Matrix, sample_rate: f64) -> FdnConfig {
    let n = channels.len();
    FdnConfig {
        sample_rate,
        channels,
        matrix,
        input_gains: vec![1.0; n],
        output_gains: vec![1.0; n],
        direct_gain: 0.0,
        global_lowpass: None,
    }
}

/// One channel per design, unit input and output gains (pure summation)
/// unless `b` or `c` are given.
pub fn build_sphere_fdn(
    designs: &[LoopDesign],
    matrix: MatrixChoice,
    b: Option<&[f64]>,
    c: Option<&[f64]>,
    sample_rate: f64,
) -> Result<FdnConfig> {
    if designs.is_empty() {
        return Err(Error::arg("sphere network needs at least one channel"));
    }
    let mut cfg = default_network(designs.to_vec(), matrix.build(designs.len())?, sample_rate);
    if let Some(b) = b {
        cfg.input_gains = b.to_vec();
    }
    if let Some(c) = c {
        cfg.output_gains = c.to_vec();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Harmonic box network: the `n_channels` lowest-fundamental coprime triplets,
/// each realised by a plain delay of one round trip along the mode's direction.
pub fn build_box_fdn(
    spec: &BoxSpec,
    n_channels: usize,
    matrix: MatrixChoice,
    sample_rate: f64,
) -> Result<FdnConfig> {
    let triplets = box_triplets(spec, n_channels)?;
    let channels = triplets
        .iter()
        .map(|&t| {
            let delay = (box_delay_seconds(spec, t)? * sample_rate).round() as usize;
            if delay == 0 {
                return Err(Error::arg(format!("delay for triplet {t} rounds to zero samples")));
            }
            Ok(LoopDesign::delay_only(delay))
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = default_network(channels, matrix.build(n_channels)?, sample_rate);
    cfg.validate()?;
    Ok(cfg)
}

/// The triplets used by [`build_box_fdn`]: the explicit list when the spec has
/// one, otherwise the enumeration with the smallest component bound that
/// yields enough channels.
pub fn box_triplets(spec: &BoxSpec, n_channels: usize) -> Result<Vec<Triplet>> {
    if n_channels == 0 {
        return Err(Error::arg("box network needs at least one channel"));
    }
    let available = if spec.triplets.is_empty() {
        let mut found = Vec::new();
        for bound in 1..=8 {
            found = enumerate_triplets(bound, spec)?;
            if found.len() >= n_channels {
                break;
            }
        }
        found
    } else {
        spec.triplets.clone()
    };
    if available.len() < n_channels {
        return Err(Error::arg(format!(
            "{n_channels} channels requested but only {} triplets available",
            available.len()
        )));
    }
    Ok(available[..n_channels].to_vec())
}

/// Inserts per-channel two-tap loss filters and an optional output lowpass.
/// A unit filter `[1, 0]` leaves its channel untouched.
pub fn attach_losses(
    config: &FdnConfig,
    fir: &[[f64; 2]],
    global_onepole: Option<f64>,
) -> Result<FdnConfig> {
    if fir.len() != config.len() && fir.len() != 1 {
        return Err(Error::arg(format!(
            "{} loss filters for {} channels",
            fir.len(),
            config.len()
        )));
    }
    let mut out = config.clone();
    let norm = config.matrix.spectral_norm();
    for (i, ch) in out.channels.iter_mut().enumerate() {
        let taps = fir[if fir.len() == 1 { 0 } else { i }];
        if taps == [1.0, 0.0] {
            continue;
        }
        ch.loss_fir = Some(taps);
        let loop_peak = norm * channel_peak_gain(ch);
        if !(loop_peak < 1.0) {
            return Err(Error::Stability(format!(
                "channel {i} loop magnitude reaches {loop_peak:.6} with loss filter {taps:?}"
            )));
        }
    }
    if global_onepole.is_some() {
        out.global_lowpass = global_onepole;
    }
    out.validate()?;
    Ok(out)
}

/// Allpass-free channel whose delay is the nearest integer period of `fundamental_hz`.
pub fn harmonic_fallback_channel(fundamental_hz: f64, sample_rate: f64) -> Result<LoopDesign> {
    if !(fundamental_hz > 0.0 && fundamental_hz < sample_rate / 4.0) {
        return Err(Error::arg(format!(
            "fallback fundamental {fundamental_hz} Hz must lie in (0, {}) Hz",
            sample_rate / 4.0
        )));
    }
    Ok(LoopDesign::delay_only((sample_rate / fundamental_hz).round() as usize))
}

#[derive(Debug, Clone)]
struct ChannelState {
    line: Vec<f64>,
    pos: usize,
    sections: Vec<AllpassSection>,
    // Transposed direct form II states, two per section.
    ap: Vec<[f64; 2]>,
    fir_prev: f64,
}

/// Mutable runtime state for one [`FdnConfig`].
#[derive(Debug, Clone)]
pub struct FdnState {
    channels: Vec<ChannelState>,
    lowpass: f64,
    feedback: Vec<f64>,
    clock: u64,
    fingerprint: u64,
}

impl FdnState {
    pub fn new(config: &FdnConfig) -> Result<Self> {
        config.validate()?;
        Ok(FdnState {
            channels: config
                .channels
                .iter()
                .map(|ch| {
                    let secs = sections(ch);
                    ChannelState {
                        line: vec![0.0; ch.delay_samples],
                        pos: 0,
                        ap: vec![[0.0; 2]; secs.len()],
                        sections: secs,
                        fir_prev: 0.0,
                    }
                })
                .collect(),
            lowpass: 0.0,
            feedback: vec![0.0; config.len()],
            clock: 0,
            fingerprint: config.fingerprint(),
        })
    }

    pub fn reset(&mut self) {
        for ch in &mut self.channels {
            ch.line.iter_mut().for_each(|v| *v = 0.0);
            ch.pos = 0;
            ch.ap.iter_mut().for_each(|s| *s = [0.0; 2]);
            ch.fir_prev = 0.0;
        }
        self.lowpass = 0.0;
        self.feedback.iter_mut().for_each(|v| *v = 0.0);
        self.clock = 0;
    }

    /// Samples processed since creation or the last reset.
    pub fn clock(&self) -> u64 {
        self.clock
    }
}

/// Processes one block. Any partition of a signal into blocks gives the same
/// output as processing it whole.
pub fn process(
    config: &FdnConfig,
    state: &mut FdnState,
    input: &[f64],
    output: &mut [f64],
) -> Result<()> {
    if state.fingerprint != config.fingerprint() || state.channels.len() != config.len() {
        return Err(Error::arg("state was created for a different network"));
    }
    if output.len() != input.len() {
        return Err(Error::arg(format!(
            "output block holds {} samples for {} inputs",
            output.len(),
            input.len()
        )));
    }
    let diagonal = config.matrix.is_diagonal();
    let n = config.len();
    let s = &mut state.feedback;

    for (x, y) in input.iter().zip(output.iter_mut()) {
        for (i, (ch, design)) in state.channels.iter_mut().zip(&config.channels).enumerate() {
            let mut v = ch.line[ch.pos];
            for (sec, st) in ch.sections.iter().zip(ch.ap.iter_mut()) {
                let out = sec.a2 * v + st[0];
                st[0] = sec.a1 * v - sec.a1 * out + st[1];
                st[1] = v - sec.a2 * out;
                v = out;
            }
            if let Some([h0, h1]) = design.loss_fir {
                let out = h0 * v + h1 * ch.fir_prev;
                ch.fir_prev = v;
                v = out;
            }
            s[i] = design.loop_gain * v;
        }

        let mut acc = config.direct_gain * x;
        for (c, si) in config.output_gains.iter().zip(s.iter()) {
            acc += c * si;
        }
        if let Some(p) = config.global_lowpass {
            state.lowpass = (1.0 - p) * acc + p * state.lowpass;
            acc = state.lowpass;
        }
        *y = acc;

        for i in 0..n {
            let mix = if diagonal {
                config.matrix.get(i, i) * s[i]
            } else {
                config.matrix.row(i).iter().zip(s.iter()).map(|(a, b)| a * b).sum()
            };
            let ch = &mut state.channels[i];
            ch.line[ch.pos] = config.input_gains[i] * x + mix;
            ch.pos = (ch.pos + 1) % ch.line.len();
        }
        state.clock += 1;
    }
    Ok(())
}

/// Runs `input` through a fresh state.
pub fn render(config: &FdnConfig, input: &[f64]) -> Result<Vec<f64>> {
    let mut state = FdnState::new(config)?;
    let mut out = vec![0.0; input.len()];
    process(config, &mut state, input, &mut out)?;
    Ok(out)
}

pub fn impulse_response(config: &FdnConfig, length: usize) -> Result<Vec<f64>> {
    let mut input = vec![0.0; length];
    if let Some(first) = input.first_mut() {
        *first = 1.0;
    }
    render(config, &input)
}
