//! Echo synthesis for a linear ultrasonic array, noise calibration,
//! quadrature demodulation and echo-window detection.

mod baseband;
mod config;
mod detect;

pub use baseband::{lowpass_kernel, to_baseband};
pub use config::{wavelength, EnvelopeKind, SimConfig};
pub use detect::{detect_echo_window, Anchor, EchoDetector, EchoWindow};

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element positions along the array baseline, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    element_x: Vec<f64>,
}

impl ArrayGeometry {
    pub fn new(element_x: Vec<f64>) -> Result<Self> {
        if element_x.len() < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 elements, got {}",
                element_x.len()
            )));
        }
        if element_x.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite element position".into()));
        }
        if element_x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGeometry(
                "element positions must be strictly increasing".into(),
            ));
        }
        Ok(ArrayGeometry { element_x })
    }

    /// Two elements at `0` and `spacing_m`.
    pub fn pair(spacing_m: f64) -> Result<Self> {
        Self::new(vec![0.0, spacing_m])
    }

    /// Two elements separated by `spacing` wavelengths.
    pub fn pair_in_wavelengths(spacing: f64, wavelength: f64) -> Result<Self> {
        Self::pair(spacing * wavelength)
    }

    pub fn element_x(&self) -> &[f64] {
        &self.element_x
    }

    pub fn len(&self) -> usize {
        self.element_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.element_x.is_empty()
    }

    /// Inter-element spacings divided by `wavelength`.
    pub fn spacing_wavelengths(&self, wavelength: f64) -> Vec<f64> {
        self.element_x
            .windows(2)
            .map(|w| (w[1] - w[0]) / wavelength)
            .collect()
    }

    /// Positions relative to element 0.
    pub(crate) fn relative_x(&self) -> impl Iterator<Item = f64> + '_ {
        let x0 = self.element_x[0];
        self.element_x.iter().map(move |x| x - x0)
    }
}

/// Signal-to-noise ratio of a scenario. `Noiseless` is stored as `+inf` dB
/// in files and tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Snr {
    Noiseless,
    Db(f64),
}

impl Snr {
    pub fn from_db(db: f64) -> Self {
        if db == f64::INFINITY {
            Snr::Noiseless
        } else {
            Snr::Db(db)
        }
    }

    pub fn as_db(self) -> f64 {
        match self {
            Snr::Noiseless => f64::INFINITY,
            Snr::Db(db) => db,
        }
    }
}

impl std::fmt::Display for Snr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Snr::Noiseless => write!(f, "noiseless"),
            Snr::Db(db) => write!(f, "{db} dB"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScenario {
    /// Degrees from the array normal.
    pub doa_deg: f64,
    pub range_m: f64,
    pub snr: Snr,
    pub id: u64,
}

impl SourceScenario {
    pub fn new(doa_deg: f64, range_m: f64, snr: Snr) -> Self {
        SourceScenario {
            doa_deg,
            range_m,
            snr,
            id: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.doa_deg.is_finite() && self.doa_deg.abs() <= 90.0) {
            return Err(Error::InvalidScenario(format!(
                "doa {} deg outside [-90, 90]",
                self.doa_deg
            )));
        }
        if !(self.range_m.is_finite() && self.range_m > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "range {} m must be > 0",
                self.range_m
            )));
        }
        if let Snr::Db(db) = self.snr {
            if !db.is_finite() {
                return Err(Error::InvalidScenario("snr must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Real sensor output, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealWaveform {
    pub channels: usize,
    pub samples_per_channel: usize,
    pub data: Vec<f64>,
    pub sample_rate: f64,
    /// Mean power of the clean echo over its active samples, when known.
    pub clean_power: Option<f64>,
}

impl RealWaveform {
    pub fn channel(&self, m: usize) -> &[f64] {
        let n = self.samples_per_channel;
        &self.data[m * n..(m + 1) * n]
    }

    pub fn channel_mut(&mut self, m: usize) -> &mut [f64] {
        let n = self.samples_per_channel;
        &mut self.data[m * n..(m + 1) * n]
    }
}

/// Demodulated, decimated complex samples, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBaseband {
    pub channels: usize,
    pub samples_per_channel: usize,
    pub data: Vec<Complex64>,
    pub sample_rate: f64,
}

impl ComplexBaseband {
    pub fn zeros(channels: usize, samples_per_channel: usize, sample_rate: f64) -> Self {
        ComplexBaseband {
            channels,
            samples_per_channel,
            data: vec![Complex64::new(0.0, 0.0); channels * samples_per_channel],
            sample_rate,
        }
    }

    pub fn channel(&self, m: usize) -> &[Complex64] {
        let n = self.samples_per_channel;
        &self.data[m * n..(m + 1) * n]
    }

    pub fn check(&self) -> Result<()> {
        if self.data.len() != self.channels * self.samples_per_channel {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} x {} baseband",
                self.data.len(),
                self.channels,
                self.samples_per_channel
            )));
        }
        if self.data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::ShapeMismatch("non-finite baseband sample".into()));
        }
        Ok(())
    }
}

/// Unit-modulus plane-wave response, phase-referenced to element 0:
/// `a[m] = exp(-i 2 pi (x[m] - x[0]) sin(theta) / lambda)`.
pub fn steering_vector(geometry: &ArrayGeometry, doa_deg: f64, wavelength: f64) -> Vec<Complex64> {
    let s = doa_deg.to_radians().sin();
    geometry
        .relative_x()
        .map(|x| Complex64::from_polar(1.0, -2.0 * PI * x * s / wavelength))
        .collect()
}

/// Envelope value at normalized time `u` in `[0, 1)`.
fn envelope(kind: EnvelopeKind, taper: f64, u: f64) -> f64 {
    match kind {
        EnvelopeKind::Hann => {
            let s = (PI * u).sin();
            s * s
        }
        EnvelopeKind::Tukey => {
            if u < taper {
                0.5 * (1.0 - (PI * u / taper).cos())
            } else if u > 1.0 - taper {
                0.5 * (1.0 - (PI * (1.0 - u) / taper).cos())
            } else {
                1.0
            }
        }
    }
}

/// Per-channel echo onset times `2 r / c + (x[m] - x[0]) sin(theta) / c`.
pub fn channel_delays(scenario: &SourceScenario, geometry: &ArrayGeometry, config: &SimConfig) -> Vec<f64> {
    let t0 = 2.0 * scenario.range_m / config.sound_speed;
    let s = scenario.doa_deg.to_radians().sin();
    geometry
        .relative_x()
        .map(|x| t0 + x * s / config.sound_speed)
        .collect()
}

/// Noiseless multi-channel echo: a unit-peak carrier burst shaped by the
/// configured envelope, delayed per element under the far-field model.
pub fn synthesize_echo(
    scenario: &SourceScenario,
    geometry: &ArrayGeometry,
    config: &SimConfig,
) -> Result<RealWaveform> {
    config.validate()?;
    scenario.validate()?;
    let delays = channel_delays(scenario, geometry, config);
    let first = delays.iter().cloned().fold(f64::INFINITY, f64::min);
    let last = delays.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let end = last + config.echo_duration;
    if first < 0.0 || end > config.listen_window {
        return Err(Error::ScenarioOutOfWindow {
            end_s: end,
            window_s: config.listen_window,
        });
    }

    let n = config.listen_samples();
    let fs = config.sample_rate;
    let omega = 2.0 * PI * config.carrier_freq;
    let mut data = vec![0.0; geometry.len() * n];
    let mut energy = 0.0;
    let mut active = 0usize;
    for (m, &tau) in delays.iter().enumerate() {
        let out = &mut data[m * n..(m + 1) * n];
        let start = (tau * fs).floor().max(0.0) as usize;
        let stop = (((tau + config.echo_duration) * fs).ceil() as usize + 1).min(n);
        for (i, v) in out.iter_mut().enumerate().take(stop).skip(start) {
            let t = i as f64 / fs - tau;
            if t < 0.0 || t >= config.echo_duration {
                continue;
            }
            let u = t / config.echo_duration;
            let x = envelope(config.envelope, config.envelope_taper, u) * (omega * t).cos();
            *v = x;
            energy += x * x;
            active += 1;
        }
    }
    let clean_power = if active > 0 { energy / active as f64 } else { 0.0 };
    Ok(RealWaveform {
        channels: geometry.len(),
        samples_per_channel: n,
        data,
        sample_rate: fs,
        clean_power: Some(clean_power),
    })
}

/// Noise variance for a given clean power and SNR.
pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    signal_power * 10f64.powf(-snr_db / 10.0)
}

/// Adds white Gaussian noise calibrated against the clean echo power.
///
/// Noise for channel `m` comes from a ChaCha stream keyed by `(seed, m)` and
/// indexed by sample position, so channels can be generated independently.
pub fn add_awgn(wave: &RealWaveform, snr: Snr, seed: u64) -> Result<RealWaveform> {
    let snr_db = match snr {
        Snr::Noiseless => return Ok(wave.clone()),
        Snr::Db(db) => db,
    };
    let power = wave.clean_power.ok_or(Error::MissingSignalPower)?;
    add_awgn_with_power(wave, power, snr_db, seed)
}

pub fn add_awgn_with_power(
    wave: &RealWaveform,
    signal_power: f64,
    snr_db: f64,
    seed: u64,
) -> Result<RealWaveform> {
    if !(signal_power.is_finite() && signal_power > 0.0) {
        return Err(Error::MissingSignalPower);
    }
    let sigma = noise_variance(signal_power, snr_db).sqrt();
    let mut out = wave.clone();
    for m in 0..out.channels {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(m as u64);
        for v in out.channel_mut(m) {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * g;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    fn lambda() -> f64 {
        wavelength(&cfg())
    }

    #[test]
    fn steering_examples() {
        let half = ArrayGeometry::pair_in_wavelengths(0.5, lambda()).unwrap();
        let a = steering_vector(&half, 0.0, lambda());
        assert_eq!(a, vec![Complex64::new(1.0, 0.0); 2]);

        let a = steering_vector(&half, 30.0, lambda());
        assert!((a[1] - Complex64::new(0.0, -1.0)).norm() < 1e-12);

        let wide = ArrayGeometry::pair_in_wavelengths(1.5, lambda()).unwrap();
        let a = steering_vector(&wide, 30.0, lambda());
        assert!((a[1] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn geometry_validation() {
        assert!(ArrayGeometry::new(vec![0.0]).is_err());
        assert!(ArrayGeometry::new(vec![0.0, 0.0]).is_err());
        assert!(ArrayGeometry::new(vec![0.01, 0.0]).is_err());
        let g = ArrayGeometry::pair_in_wavelengths(1.5, lambda()).unwrap();
        assert!((g.spacing_wavelengths(lambda())[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn broadside_channels_identical() {
        let g = ArrayGeometry::pair_in_wavelengths(0.5, lambda()).unwrap();
        let w = synthesize_echo(&SourceScenario::new(0.0, 0.9, Snr::Noiseless), &g, &cfg()).unwrap();
        assert_eq!(w.channel(0), w.channel(1));
        assert!(w.channel(0).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn onset_at_round_trip_time() {
        let g = ArrayGeometry::pair_in_wavelengths(0.5, lambda()).unwrap();
        let w = synthesize_echo(&SourceScenario::new(0.0, 0.68, Snr::Noiseless), &g, &cfg()).unwrap();
        let first = w.channel(0).iter().position(|&x| x != 0.0).unwrap();
        // 4.0 ms at 1 MSPS; the Hann envelope is exactly zero at its start.
        assert!((4000..=4001).contains(&first), "first nonzero at {first}");
    }

    #[test]
    fn inter_element_lag_is_quarter_carrier_period() {
        // (lambda / 2) sin 30 / c = lambda / (4 c): a quarter period, pi/2 of phase.
        let g = ArrayGeometry::pair_in_wavelengths(0.5, lambda()).unwrap();
        let s = SourceScenario::new(30.0, 0.68, Snr::Noiseless);
        let d = channel_delays(&s, &g, &cfg());
        let lag = d[1] - d[0];
        assert!((lag - 0.25 / 51_200.0).abs() < 1e-15);
        assert!((lag - 4.8828125e-6).abs() < 1e-15);
    }

    #[test]
    fn out_of_window_rejected() {
        let g = ArrayGeometry::pair_in_wavelengths(0.5, lambda()).unwrap();
        let err = synthesize_echo(&SourceScenario::new(0.0, 1.5, Snr::Noiseless), &g, &cfg());
        assert!(matches!(err, Err(Error::ScenarioOutOfWindow { .. })));
        assert!(synthesize_echo(&SourceScenario::new(95.0, 1.0, Snr::Noiseless), &g, &cfg()).is_err());
    }

    #[test]
    fn awgn_variance_from_snr() {
        assert!((noise_variance(1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((noise_variance(1.0, -10.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn awgn_noiseless_and_missing_power() {
        let g = ArrayGeometry::pair_in_wavelengths(0.5, lambda()).unwrap();
        let w = synthesize_echo(&SourceScenario::new(10.0, 0.9, Snr::Noiseless), &g, &cfg()).unwrap();
        assert_eq!(add_awgn(&w, Snr::Noiseless, 3).unwrap(), w);
        let mut bare = w.clone();
        bare.clean_power = None;
        assert!(matches!(add_awgn(&bare, Snr::Db(0.0), 3), Err(Error::MissingSignalPower)));
    }

    #[test]
    fn awgn_deterministic_and_zero_db_variance() {
        let wave = RealWaveform {
            channels: 2,
            samples_per_channel: 200_000,
            data: vec![0.0; 400_000],
            sample_rate: 1e6,
            clean_power: Some(1.0),
        };
        let a = add_awgn(&wave, Snr::Db(0.0), 11).unwrap();
        let b = add_awgn(&wave, Snr::Db(0.0), 11).unwrap();
        assert_eq!(a, b);
        let var = a.data.iter().map(|x| x * x).sum::<f64>() / a.data.len() as f64;
        assert!((var - 1.0).abs() < 0.01, "var {var}");
        assert_ne!(a.channel(0), a.channel(1));
    }
}
