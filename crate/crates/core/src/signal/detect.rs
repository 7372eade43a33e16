use serde::{Deserialize, Serialize};

use num_complex::Complex64;

use super::ComplexBaseband;
use crate::error::{Error, Result};

/// Which above-threshold interval is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    /// The first crossing.
    #[default]
    First,
    /// The interval containing the envelope maximum.
    Peak,
}

/// Threshold detector on the baseband magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EchoDetector {
    /// Multiple of the median noise magnitude that marks an echo (> 1).
    pub threshold_factor: f64,
    /// Length of a centered moving average over the complex samples before
    /// taking the magnitude (1 = none). The echo has a constant baseband
    /// phase, so this behaves like a matched filter for pulses of similar
    /// length.
    pub smoothing: usize,
    /// Leading fraction of the record assumed to contain noise only.
    pub noise_fraction: f64,
    /// Threshold floor relative to the peak magnitude; governs noiseless input.
    pub peak_floor: f64,
    pub anchor: Anchor,
}

impl Default for EchoDetector {
    fn default() -> Self {
        EchoDetector {
            threshold_factor: 5.0,
            smoothing: 1,
            noise_fraction: 0.25,
            peak_floor: 1e-2,
            anchor: Anchor::First,
        }
    }
}

impl EchoDetector {
    /// Settings used by the direction estimators: coherent smoothing over
    /// roughly the pulse length, peak anchoring, and a threshold giving
    /// about one false alarm per thousand noise-only records.
    pub fn for_estimators() -> Self {
        EchoDetector {
            threshold_factor: 3.5,
            smoothing: 24,
            noise_fraction: 0.25,
            peak_floor: 1e-2,
            anchor: Anchor::Peak,
        }
    }
}

/// Detected echo interval `[start, end)` in baseband samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoWindow {
    pub start: usize,
    pub end: usize,
    pub time_of_flight: f64,
}

impl EchoWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn centre(&self) -> usize {
        (self.start + self.end) / 2
    }
}

/// Per-sample threshold detection with the default detector settings.
pub fn detect_echo_window(base: &ComplexBaseband, threshold_factor: f64) -> Result<EchoWindow> {
    EchoDetector {
        threshold_factor,
        ..EchoDetector::default()
    }
    .detect(base)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl EchoDetector {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_factor > 1.0) {
            return Err(Error::InvalidConfig("threshold_factor must exceed 1".into()));
        }
        if self.smoothing == 0 {
            return Err(Error::InvalidConfig("smoothing must be >= 1".into()));
        }
        if !(self.noise_fraction > 0.0 && self.noise_fraction < 1.0) {
            return Err(Error::InvalidConfig("noise_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Per-sample magnitude of the reference channel, or with smoothing the
    /// root-sum-square over channels of each channel's moving average.
    fn envelope(&self, base: &ComplexBaseband) -> Vec<f64> {
        if self.smoothing <= 1 {
            return base.channel(0).iter().map(|v| v.norm()).collect();
        }
        let n = base.samples_per_channel;
        let back = self.smoothing / 2;
        let fwd = self.smoothing - back;
        let mut power = vec![0.0; n];
        let mut prefix = Vec::with_capacity(n + 1);
        for m in 0..base.channels {
            prefix.clear();
            prefix.push(Complex64::new(0.0, 0.0));
            for &v in base.channel(m) {
                prefix.push(prefix.last().unwrap() + v);
            }
            for (i, p) in power.iter_mut().enumerate() {
                let lo = i.saturating_sub(back);
                let hi = (i + fwd).min(n);
                *p += ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).norm_sqr();
            }
        }
        power.into_iter().map(f64::sqrt).collect()
    }

    pub fn detect(&self, base: &ComplexBaseband) -> Result<EchoWindow> {
        self.validate()?;
        base.check()?;
        let env = self.envelope(base);
        let n = env.len();
        let lead = ((n as f64 * self.noise_fraction) as usize).clamp(1, n.max(1));
        let mut noise: Vec<f64> = env[..lead.min(n)].to_vec();
        let noise_level = median(&mut noise);
        let peak = env.iter().cloned().fold(0.0, f64::max);
        let threshold = (self.threshold_factor * noise_level).max(self.peak_floor * peak);

        let seed = match self.anchor {
            Anchor::First => env.iter().position(|&v| v > threshold),
            Anchor::Peak => env
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > threshold)
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i),
        }
        .ok_or(Error::NoEchoFound)?;
        let start = env[..seed].iter().rposition(|&v| v <= threshold).map_or(0, |k| k + 1);
        let end = env[seed..]
            .iter()
            .position(|&v| v <= threshold)
            .map_or(n, |k| seed + k);
        Ok(EchoWindow {
            start,
            end,
            time_of_flight: start as f64 / base.sample_rate,
        })
    }
}
