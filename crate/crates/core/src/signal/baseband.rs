use std::f64::consts::PI;

use num_complex::Complex64;

use super::{ComplexBaseband, RealWaveform, SimConfig};
use crate::error::{Error, Result};

/// Blackman-windowed sinc low-pass with unit DC gain. Odd length, symmetric
/// (linear phase). `cutoff` is in cycles/sample.
pub fn lowpass_kernel(cutoff: f64, taps: usize) -> Vec<f64> {
    assert!(taps % 2 == 1, "kernel length must be odd");
    let half = (taps / 2) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|k| {
            let x = k as f64 - half;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * x).sin() / (PI * x)
            };
            let w = 0.42 - 0.5 * (2.0 * PI * k as f64 / (taps - 1) as f64).cos()
                + 0.08 * (4.0 * PI * k as f64 / (taps - 1) as f64).cos();
            sinc * w
        })
        .collect();
    for k in 0..taps / 2 {
        h[taps - 1 - k] = h[k];
    }
    let gain: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= gain);
    h
}

/// Kernel length for a given configuration: about 3.3 carrier periods on each
/// side, which keeps the 2x-carrier image below -70 dB.
fn kernel_taps(config: &SimConfig) -> usize {
    2 * (3.3 * config.sample_rate / config.carrier_freq).round() as usize + 1
}

/// Quadrature demodulation at the carrier, zero-phase low-pass at half the
/// carrier frequency, then decimation.
///
/// A unit-amplitude tone at the carrier maps to magnitude 0.5.
pub fn to_baseband(wave: &RealWaveform, config: &SimConfig) -> Result<ComplexBaseband> {
    config.validate()?;
    if (wave.sample_rate - config.sample_rate).abs() > 1e-9 * config.sample_rate {
        return Err(Error::RateMismatch {
            file_hz: wave.sample_rate,
            expected_hz: config.sample_rate,
        });
    }
    if wave.data.len() != wave.channels * wave.samples_per_channel {
        return Err(Error::ShapeMismatch("waveform data length".into()));
    }
    let fs = config.sample_rate;
    let dec = config.decimation_factor;
    let kernel = lowpass_kernel(0.5 * config.carrier_freq / fs, kernel_taps(config));
    let half = kernel.len() / 2;
    let n = wave.samples_per_channel;
    let out_n = n / dec;
    let omega = 2.0 * PI * config.carrier_freq / fs;
    let mixer: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(1.0, -omega * i as f64))
        .collect();

    let mut data = Vec::with_capacity(wave.channels * out_n);
    let mut mixed = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..wave.channels {
        for ((d, &x), &lo) in mixed.iter_mut().zip(wave.channel(m)).zip(&mixer) {
            *d = lo * x;
        }
        for j in 0..out_n {
            let centre = j * dec;
            let lo = centre.saturating_sub(half);
            let hi = (centre + half + 1).min(n);
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, z) in mixed[lo..hi].iter().enumerate() {
                acc += z * kernel[lo + i + half - centre];
            }
            data.push(acc);
        }
    }
    Ok(ComplexBaseband {
        channels: wave.channels,
        samples_per_channel: out_n,
        data,
        sample_rate: fs / dec as f64,
    })
}
