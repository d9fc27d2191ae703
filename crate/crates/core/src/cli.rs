//! Command-line front end: roots, freqs, design, render, analyze.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::acoustics::ModeLabel;
use crate::allpass::{allpass_loop_phase, build_phase_targets, FIT_BAND_HZ};
use crate::analysis::{match_within, response_peaks, VERIFY_BAND_HZ};
use crate::bessel::{find_roots, MAX_ROOT_COUNT, MAX_ROOT_ORDER};
use crate::config::ProjectConfig;
use crate::design::ChannelDesign;
use crate::error::{Error, Result};
use crate::fdn::{render, FdnConfig};
use crate::wav::{integer_rate, read_mono, write_mono_f32};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "spherefdn", version, about = "Sphere and box resonators as feedback delay networks")]
pub struct Cli {
    /// Project configuration (TOML), or a design document for `render`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; standard output when omitted (required for `render`).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Overrides the configured sample rate.
    #[arg(long, global = true)]
    pub sample_rate: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roots of the derivative of the spherical Bessel functions as CSV.
    Roots(RootsArgs),
    /// Theoretical resonance frequencies of the configured room as CSV.
    Freqs,
    /// Fits every channel and writes a design document.
    Design(DesignArgs),
    /// Renders the network's response to a WAVE file or an impulse.
    Render(RenderArgs),
    /// Compares spectral peaks of a WAVE file with the configured resonances.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct RootsArgs {
    #[arg(long)]
    pub n_max: u32,
    #[arg(long)]
    pub s_max: usize,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Where to write per-target loop phase errors as CSV.
    #[arg(long)]
    pub phase_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Input WAVE file.
    #[arg(conflicts_with = "impulse", required_unless_present = "impulse")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub impulse: bool,
    /// Impulse response length.
    #[arg(long, default_value_t = 2.0, requires = "impulse")]
    pub seconds: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub input: PathBuf,
    /// Largest accepted deviation from theory, in percent.
    #[arg(long, default_value_t = 3.0)]
    pub tolerance: f64,
}

/// A fitted network together with the per-order fit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDocument {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub orders: Vec<ChannelDesign>,
    pub fdn: FdnConfig,
}

impl DesignDocument {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Numeric(format!("cannot serialise design: {e}")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: DesignDocument =
            toml::from_str(text).map_err(|e| Error::config(None, e.message().to_string()))?;
        doc.fdn.validate()?;
        Ok(doc)
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) | Error::DesignFailure { .. } | Error::Stability(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Roots(a) => emit(cli, &roots_csv(a.n_max, a.s_max)?).map(|_| EXIT_OK),
        Command::Freqs => emit(cli, &freqs_csv(&load_config(cli)?)?).map(|_| EXIT_OK),
        Command::Design(a) => {
            let cfg = load_config(cli)?;
            let doc = design_document(&cfg)?;
            for ch in &doc.orders {
                eprintln!("{}", describe_channel(ch));
            }
            if let Some(path) = &a.phase_csv {
                std::fs::write(path, phase_csv(&cfg, &doc)?)?;
            }
            emit(cli, &doc.to_toml()?).map(|_| EXIT_OK)
        }
        Command::Render(a) => {
            let out = cli
                .output
                .as_deref()
                .ok_or_else(|| Error::arg("render needs --output"))?;
            let fdn = load_network(cli)?;
            let input = match &a.input {
                Some(path) => {
                    let (x, rate) = read_mono(path)?;
                    if rate as f64 != fdn.sample_rate {
                        return Err(Error::arg(format!(
                            "input is sampled at {rate} Hz, the network at {} Hz",
                            fdn.sample_rate
                        )));
                    }
                    x
                }
                None => impulse(a.seconds, fdn.sample_rate)?,
            };
            let y = render(&fdn, &input)?;
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::Stability(format!("output diverges at sample {i}")));
            }
            write_mono_f32(out, &y, integer_rate(fdn.sample_rate)?)?;
            Ok(EXIT_OK)
        }
        Command::Analyze(a) => {
            let cfg = load_config(cli)?;
            let (csv, unmatched) = analyze_csv(&cfg, &a.input, a.tolerance)?;
            emit(cli, &csv)?;
            if unmatched.is_empty() {
                Ok(EXIT_OK)
            } else {
                eprintln!("unmatched within {}%: {}", a.tolerance, unmatched.join(", "));
                Ok(EXIT_VERIFY_FAILED)
            }
        }
    }
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn config_path(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::arg("this command needs --config"))
}

pub fn load_config(cli: &Cli) -> Result<ProjectConfig> {
    let mut cfg = ProjectConfig::load(config_path(cli)?)?;
    if let Some(sr) = cli.sample_rate {
        cfg.sample_rate_hz = sr;
        cfg.validate()?;
    }
    Ok(cfg)
}

/// Network from either a project configuration or a design document.
fn load_network(cli: &Cli) -> Result<FdnConfig> {
    let path = config_path(cli)?;
    let text = std::fs::read_to_string(path)?;
    let is_design = text
        .parse::<toml::Table>()
        .map(|t| t.contains_key("fdn"))
        .unwrap_or(false);
    if is_design {
        let fdn = DesignDocument::parse(&text)?.fdn;
        if let Some(sr) = cli.sample_rate {
            if sr != fdn.sample_rate {
                return Err(Error::arg(
                    "a design document is fixed to its sample rate; redesign from the project config",
                ));
            }
        }
        return Ok(fdn);
    }
    let mut cfg = ProjectConfig::parse(&text)?;
    if let Some(sr) = cli.sample_rate {
        cfg.sample_rate_hz = sr;
    }
    Ok(cfg.build()?.fdn)
}

fn impulse(seconds: f64, sample_rate: f64) -> Result<Vec<f64>> {
    if !(seconds > 0.0 && seconds <= 600.0) {
        return Err(Error::arg(format!("--seconds {seconds} must lie in (0, 600]")));
    }
    let mut x = vec![0.0; (seconds * sample_rate).round() as usize];
    if let Some(first) = x.first_mut() {
        *first = 1.0;
    }
    Ok(x)
}

pub fn roots_csv(n_max: u32, s_max: usize) -> Result<String> {
    if n_max > MAX_ROOT_ORDER || s_max == 0 || s_max > MAX_ROOT_COUNT {
        return Err(Error::arg(format!(
            "need n-max <= {MAX_ROOT_ORDER} and 1 <= s-max <= {MAX_ROOT_COUNT}"
        )));
    }
    let mut out = String::from("n,s,z\n");
    for n in 0..=n_max {
        let table = find_roots(n, s_max)?;
        for (i, z) in table.roots().iter().enumerate() {
            writeln!(out, "{n},{},{}", i + 1, significant(*z, 9)).expect("string write");
        }
    }
    Ok(out)
}

/// Fixed-point rendering of `x` with `digits` significant digits.
fn significant(x: f64, digits: i32) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let decimals = (digits - 1 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

fn label_cell(label: &ModeLabel) -> String {
    label.to_string()
}

pub fn freqs_csv(cfg: &ProjectConfig) -> Result<String> {
    let series = if let Some(spec) = cfg.sphere_spec() {
        spec?.mode_series()?
    } else {
        cfg.reference_series()?
    };
    let mut out = String::from("label,s,frequency_hz\n");
    for s in &series {
        for (i, f) in s.indexed() {
            writeln!(out, "{},{i},{f:.6}", label_cell(&s.label)).expect("string write");
        }
    }
    Ok(out)
}

pub fn design_document(cfg: &ProjectConfig) -> Result<DesignDocument> {
    let plan = cfg.build()?;
    Ok(DesignDocument {
        orders: plan.channels,
        fdn: plan.fdn,
    })
}

fn describe_channel(ch: &ChannelDesign) -> String {
    let mut s = format!("order {}: delay {} samples", ch.order, ch.design.delay_samples);
    match (ch.residual, ch.max_phase_error) {
        (Some(r), Some(m)) => {
            write!(s, ", residual {r:.3e} rad^2, max phase error {m:.4} rad").expect("string write")
        }
        _ => s.push_str(", harmonic comb"),
    }
    if let Some(f) = ch.retuned_to_hz {
        write!(s, ", retuned to {f} Hz").expect("string write");
    }
    s
}

/// Target and realised loop phase at each fitted resonance.
pub fn phase_csv(cfg: &ProjectConfig, doc: &DesignDocument) -> Result<String> {
    let mut out = String::from("n,k,omega,target_phase,loop_phase,error_rad\n");
    let Some(spec) = cfg.sphere_spec() else {
        return Ok(out);
    };
    let series = spec?.mode_series()?;
    for ch in &doc.orders {
        let band = series[ch.order as usize].truncated(FIT_BAND_HZ);
        if band.frequencies.is_empty() {
            continue;
        }
        let target = build_phase_targets(&band, doc.fdn.sample_rate)?;
        for (k, (&w, &p)) in target.omegas().iter().zip(target.phases()).enumerate() {
            let phi = allpass_loop_phase(&ch.design, w);
            writeln!(out, "{},{k},{w:.9},{p:.9},{phi:.9},{:.9}", ch.order, phi - p).expect("string write");
        }
    }
    Ok(out)
}

/// Report CSV and the labels of unmatched references.
pub fn analyze_csv(cfg: &ProjectConfig, input: &Path, tolerance: f64) -> Result<(String, Vec<String>)> {
    if !(tolerance > 0.0) {
        return Err(Error::arg("--tolerance must be positive"));
    }
    let (x, rate) = read_mono(input)?;
    let peaks = response_peaks(&x, rate as f64, VERIFY_BAND_HZ)?;
    let references = cfg.reference_series()?;
    let report = match_within(&peaks, &references, tolerance);
    let mut out = String::from("f_measured,f_theory,n,s,sharpness_percent\n");
    for r in &report.references {
        let label = label_cell(&r.label);
        match report.matches.iter().find(|m| m.reference == *r) {
            Some(m) => writeln!(
                out,
                "{:.2},{:.2},{label},{},{:.1}",
                m.measured_hz, r.frequency_hz, r.s, m.sharpness_percent
            ),
            None => writeln!(out, ",{:.2},{label},{},", r.frequency_hz, r.s),
        }
        .expect("string write");
    }
    let unmatched = report
        .unmatched
        .iter()
        .map(|r| format!("({}, {}) {:.1} Hz", label_cell(&r.label), r.s, r.frequency_hz))
        .collect();
    Ok((out, unmatched))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_root_row() {
        assert_eq!(roots_csv(0, 1).unwrap(), "n,s,z\n0,1,0\n");
    }

    #[test]
    fn roots_limits() {
        assert!(roots_csv(13, 2).is_err());
        assert_eq!(significant(4.493409457909, 9), "4.49340946");
        assert_eq!(significant(15.244513824, 9), "15.2445138");
        assert!(roots_csv(2, 0).is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["spherefdn", "roots", "--n-max", "-1", "--s-max", "2"]), EXIT_USAGE);
        assert_eq!(run(["spherefdn", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["spherefdn", "freqs"]), EXIT_USAGE);
    }

    #[test]
    fn error_classes() {
        assert_eq!(exit_code(&Error::Numeric(String::new())), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::Stability(String::new())), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::config(Some(3), "x")), EXIT_USAGE);
    }
}
