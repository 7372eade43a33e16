use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitude envelope family of the simulated echo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeKind {
    /// Raised cosine over the whole echo duration (narrow obstacles).
    #[default]
    Hann,
    /// Flat top with raised-cosine ramps (wall-like, long echoes).
    Tukey,
}

/// Simulation constants.
///
/// Loadable from a plain-text `key = value` file whose keys are the field
/// names (see [`SimConfig::from_file`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Hz.
    pub carrier_freq: f64,
    /// m/s.
    pub sound_speed: f64,
    /// samples/s.
    pub sample_rate: f64,
    /// Seconds.
    pub echo_duration: f64,
    /// Seconds.
    pub listen_window: f64,
    pub decimation_factor: usize,
    pub rng_seed: u64,
    pub envelope: EnvelopeKind,
    /// Fraction of the echo spent in each ramp of a Tukey envelope.
    pub envelope_taper: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            carrier_freq: 51_200.0,
            sound_speed: 340.0,
            sample_rate: 1_000_000.0,
            echo_duration: 300e-6,
            listen_window: 8e-3,
            decimation_factor: 8,
            rng_seed: 0,
            envelope: EnvelopeKind::Hann,
            envelope_taper: 0.25,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq", self.carrier_freq),
            ("sound_speed", self.sound_speed),
            ("sample_rate", self.sample_rate),
            ("echo_duration", self.echo_duration),
            ("listen_window", self.listen_window),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        if self.sample_rate <= 2.0 * self.carrier_freq {
            return Err(Error::InvalidConfig(format!(
                "sample_rate {} must exceed twice carrier_freq {}",
                self.sample_rate, self.carrier_freq
            )));
        }
        if self.echo_duration >= self.listen_window {
            return Err(Error::InvalidConfig(
                "echo_duration must be shorter than listen_window".into(),
            ));
        }
        if self.decimation_factor == 0 {
            return Err(Error::InvalidConfig("decimation_factor must be >= 1".into()));
        }
        if self.listen_samples() % self.decimation_factor != 0 {
            return Err(Error::InvalidConfig(format!(
                "decimation_factor {} does not divide the {} listen-window samples",
                self.decimation_factor,
                self.listen_samples()
            )));
        }
        if !(self.envelope_taper > 0.0 && self.envelope_taper <= 0.5) {
            return Err(Error::InvalidConfig(
                "envelope_taper must lie in (0, 0.5]".into(),
            ));
        }
        Ok(())
    }

    /// Number of raw samples in one listen window.
    pub fn listen_samples(&self) -> usize {
        (self.listen_window * self.sample_rate).round() as usize
    }

    pub fn baseband_rate(&self) -> f64 {
        self.sample_rate / self.decimation_factor as f64
    }

    pub fn baseband_samples(&self) -> usize {
        self.listen_samples() / self.decimation_factor
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("SimConfig serializes")
    }
}

/// Wavelength `sound_speed / carrier_freq` in meters.
pub fn wavelength(config: &SimConfig) -> f64 {
    config.sound_speed / config.carrier_freq
}
