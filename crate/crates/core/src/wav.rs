//! Mono RIFF WAVE input (16-bit integer or 32-bit float) and 32-bit float output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Samples as `f64` in `[-1, 1)` plus the file's sample rate.
pub fn read_mono(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::arg(format!(
            "{} has {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32_768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (format, bits) => {
            return Err(Error::arg(format!(
                "{}: {bits}-bit {format:?} samples are not supported",
                path.display()
            )))
        }
    };
    Ok((samples, spec.sample_rate))
}

pub fn write_mono_f32(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Sample rate as an integer, refusing fractional rates.
pub fn integer_rate(sample_rate: f64) -> Result<u32> {
    if sample_rate.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&sample_rate) {
        return Err(Error::arg(format!(
            "sample rate {sample_rate} is not a whole number of hertz"
        )));
    }
    Ok(sample_rate as u32)
}
