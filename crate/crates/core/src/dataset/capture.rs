use std::path::Path;

use super::DatasetRecord;
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::signal::{to_baseband, ArrayGeometry, EchoDetector, RealWaveform, SimConfig, Snr};

const MAGIC: &[u8; 4] = b"EDCF";
const VERSION: u32 = 1;

/// Raw multi-channel capture.
///
/// File layout, little-endian: magic `EDCF`, version `u32`, sample rate
/// `f64`, channel count `u32`, element count `u32` and positions `f64`,
/// annotation as length-prefixed UTF-8, frame count `u64`, then frames of
/// one `f64` per channel. The annotation is `key=value` pairs separated by
/// `;`; the keys `doa_deg`, `snr_db` and `range_m` become labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub sample_rate: f64,
    pub channels: usize,
    pub geometry: ArrayGeometry,
    pub annotation: String,
    /// Frame-major samples.
    pub frames: Vec<f64>,
}

impl Capture {
    pub fn frame_count(&self) -> usize {
        self.frames.len() / self.channels.max(1)
    }

    /// Builds a capture by concatenating shots in time.
    pub fn from_shots(shots: &[RealWaveform], geometry: ArrayGeometry, annotation: &str) -> Result<Self> {
        let first = shots.first().ok_or(Error::EmptyDataset)?;
        let channels = first.channels;
        let mut frames = Vec::new();
        for s in shots {
            if s.channels != channels || s.sample_rate != first.sample_rate {
                return Err(Error::ShapeMismatch("shots differ in channels or rate".into()));
            }
            for i in 0..s.samples_per_channel {
                frames.extend((0..channels).map(|m| s.data[m * s.samples_per_channel + i]));
            }
        }
        Ok(Capture {
            sample_rate: first.sample_rate,
            channels,
            geometry,
            annotation: annotation.to_string(),
            frames,
        })
    }

    fn label(&self, key: &str) -> Option<f64> {
        self.annotation
            .split(';')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .and_then(|(_, v)| v.trim().parse().ok())
    }
}

pub fn write_capture(c: &Capture, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.f64(c.sample_rate);
    w.u32(c.channels as u32);
    w.u32(c.geometry.len() as u32);
    for &x in c.geometry.element_x() {
        w.f64(x);
    }
    w.blob(c.annotation.as_bytes());
    w.u64(c.frame_count() as u64);
    for &v in &c.frames {
        w.f64(v);
    }
    std::fs::write(path, w.into_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_capture(path: impl AsRef<Path>) -> Result<Capture> {
    let bytes = read_file(path.as_ref())?;
    let mut r = ByteReader::open_unchecked(&bytes, MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let sample_rate = r.f64()?;
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::InvalidConfig(format!("capture sample rate {sample_rate} must be > 0")));
    }
    let channels = r.u32()? as usize;
    let n_el = r.u32()? as usize;
    let xs = (0..n_el).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let geometry = ArrayGeometry::new(xs)?;
    let annotation = r.string()?;
    let count = r.u64()? as usize;
    let need = count.saturating_mul(channels).saturating_mul(8);
    if r.remaining() != need {
        return Err(Error::Truncated(format!(
            "{count} frames need {need} bytes, found {}",
            r.remaining()
        )));
    }
    let frames = r
        .take(need)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Capture {
        sample_rate,
        channels,
        geometry,
        annotation,
        frames,
    })
}

/// Reads a capture, cuts it into listen-window shots and demodulates each.
///
/// Trailing frames shorter than a full listen window are dropped. Without an
/// annotation, `doa_deg` is NaN and the SNR is reported as NaN dB.
pub fn ingest_capture(path: impl AsRef<Path>, geometry: &ArrayGeometry, config: &SimConfig) -> Result<Vec<DatasetRecord>> {
    config.validate()?;
    let cap = read_capture(path)?;
    if (cap.sample_rate - config.sample_rate).abs() > 1e-9 * config.sample_rate {
        return Err(Error::RateMismatch {
            file_hz: cap.sample_rate,
            expected_hz: config.sample_rate,
        });
    }
    if cap.channels != geometry.len() || cap.geometry.len() != geometry.len() {
        return Err(Error::InvalidGeometry(format!(
            "capture has {} channels, geometry has {} elements",
            cap.channels,
            geometry.len()
        )));
    }
    let shot = config.listen_samples();
    let shots = cap.frame_count() / shot;
    if cap.frame_count() % shot != 0 {
        log::warn!("dropping {} trailing frames", cap.frame_count() % shot);
    }
    let doa = cap.label("doa_deg").unwrap_or(f64::NAN);
    let snr = cap.label("snr_db").map_or(Snr::Db(f64::NAN), Snr::from_db);
    let range = cap.label("range_m").unwrap_or(f64::NAN);
    let detector = EchoDetector::default();
    (0..shots)
        .map(|s| {
            let mut data = vec![0.0; cap.channels * shot];
            for i in 0..shot {
                for m in 0..cap.channels {
                    data[m * shot + i] = cap.frames[(s * shot + i) * cap.channels + m];
                }
            }
            let wave = RealWaveform {
                channels: cap.channels,
                samples_per_channel: shot,
                data,
                sample_rate: cap.sample_rate,
                clean_power: None,
            };
            let base = to_baseband(&wave, config)?;
            Ok(DatasetRecord {
                doa_deg: doa,
                snr,
                range_m: range,
                seed: s as u64,
                time_of_flight: detector.detect(&base).ok().map(|w| w.time_of_flight),
                base,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{add_awgn, synthesize_echo, wavelength, SourceScenario};

    fn shots(cfg: &SimConfig, g: &ArrayGeometry) -> Vec<RealWaveform> {
        (0..3)
            .map(|k| {
                let sc = SourceScenario::new(25.0, 0.7 + 0.1 * k as f64, Snr::Db(10.0));
                add_awgn(&synthesize_echo(&sc, g, cfg).unwrap(), sc.snr, k).unwrap()
            })
            .collect()
    }

    #[test]
    fn roundtrip_matches_direct_path() {
        let cfg = SimConfig::default();
        let g = ArrayGeometry::pair_in_wavelengths(0.5, wavelength(&cfg)).unwrap();
        let waves = shots(&cfg, &g);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cap.edcf");
        let cap = Capture::from_shots(&waves, g.clone(), "doa_deg=25;snr_db=10").unwrap();
        write_capture(&cap, &path).unwrap();
        assert_eq!(read_capture(&path).unwrap(), cap);
        let recs = ingest_capture(&path, &g, &cfg).unwrap();
        assert_eq!(recs.len(), 3);
        for (r, w) in recs.iter().zip(&waves) {
            let direct = to_baseband(w, &cfg).unwrap();
            assert_eq!(r.base.sample_rate, 125e3);
            assert_eq!(r.doa_deg, 25.0);
            assert_eq!(r.snr, Snr::Db(10.0));
            assert!(r.base.data.iter().zip(&direct.data).all(|(a, b)| (a - b).norm() < 1e-9));
        }
    }

    #[test]
    fn rejects_bad_files() {
        let cfg = SimConfig::default();
        let g = ArrayGeometry::pair_in_wavelengths(0.5, wavelength(&cfg)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cap.edcf");

        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(ingest_capture(&path, &g, &cfg), Err(Error::BadMagic { .. })));

        let mut cap = Capture::from_shots(&shots(&cfg, &g), g.clone(), "").unwrap();
        cap.sample_rate = 2e6;
        write_capture(&cap, &path).unwrap();
        assert!(matches!(ingest_capture(&path, &g, &cfg), Err(Error::RateMismatch { .. })));

        cap.sample_rate = 1e6;
        write_capture(&cap, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(ingest_capture(&path, &g, &cfg), Err(Error::Truncated(_))));

        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(ingest_capture(&path, &g, &cfg), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn unannotated_capture_is_unlabelled() {
        let cfg = SimConfig::default();
        let g = ArrayGeometry::pair_in_wavelengths(0.5, wavelength(&cfg)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cap.edcf");
        write_capture(&Capture::from_shots(&shots(&cfg, &g)[..1], g.clone(), "").unwrap(), &path).unwrap();
        let recs = ingest_capture(&path, &g, &cfg).unwrap();
        assert!(recs[0].doa_deg.is_nan());
        assert!(recs[0].time_of_flight.is_some());
    }
}
