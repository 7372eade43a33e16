use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::Network;
use super::real::Real;
use super::spec::NetworkSpec;
use super::train::{degrees_from_output, Preprocess};
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::music::{DoaEstimate, DoaStatus};
use crate::signal::ComplexBaseband;

const MAGIC: &[u8; 4] = b"EDCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub final_heldout_loss: f64,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Element spacing of the training data in wavelengths (NaN if unknown).
    pub spacing_wavelengths: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    preprocess: Preprocess,
    meta: TrainMeta,
}

/// Trained weights with everything needed to run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub preprocess: Preprocess,
    /// Flat parameters in [`super::ParamLayout`] order.
    pub params: Vec<f64>,
    pub meta: TrainMeta,
}

impl Checkpoint {
    /// Binary container: magic `EDCK`, version `u32`, length-prefixed TOML
    /// header (spec, preprocessing rule, training metadata), parameter count
    /// `u64`, little-endian `f64` parameters, CRC-32 trailer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            spec: self.spec.clone(),
            preprocess: self.preprocess.clone(),
            meta: self.meta.clone(),
        };
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.blob(toml::to_string(&header).expect("header serializes").as_bytes());
        w.u64(self.params.len() as u64);
        for &p in &self.params {
            w.f64(p);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let text = std::str::from_utf8(r.blob()?).map_err(|e| Error::Parse(e.to_string()))?;
        let header: Header = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let n = r.u64()? as usize;
        if r.remaining() != n.saturating_mul(8) {
            return Err(Error::Truncated(format!("{n} parameters declared, {} bytes left", r.remaining())));
        }
        let params = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let expected = header.spec.param_count()?;
        if n != expected {
            return Err(Error::IncompatibleCheckpoint(format!(
                "spec needs {expected} parameters, file has {n}"
            )));
        }
        Ok(Checkpoint {
            spec: header.spec,
            preprocess: header.preprocess,
            params,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }

    /// Plain-text dump for inspection: the header as JSON on one `#` line
    /// (non-finite numbers appear as `null`), then
    /// per parameter block a `## name shape` line followed by one value per
    /// line in shortest round-trip form.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        let layout = self.spec.layout()?;
        let header = Header {
            spec: self.spec.clone(),
            preprocess: self.preprocess.clone(),
            meta: self.meta.clone(),
        };
        let io = |e| Error::io("<text export>", e);
        writeln!(w, "# {}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
        for b in &layout.blocks {
            let shape: Vec<String> = b.shape.iter().map(|d| d.to_string()).collect();
            writeln!(w, "## {} {}", b.name, shape.join("x")).map_err(io)?;
            for v in &self.params[b.range()] {
                writeln!(w, "{v:?}").map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn network<R: Real>(&self) -> Result<Network<R>> {
        Network::new(self.spec.clone(), self.params.iter().map(|&p| R::of(p)).collect())
    }

    /// Checks that records with `channels` channels of `samples` samples can
    /// be fed to this network.
    pub fn check_compatible(&self, channels: usize, samples: usize) -> Result<()> {
        if self.spec.input_rows != 2 * channels {
            return Err(Error::IncompatibleCheckpoint(format!(
                "network takes {} rows, records have {channels} channels",
                self.spec.input_rows
            )));
        }
        if self.preprocess.input_len != self.spec.input_len {
            return Err(Error::IncompatibleCheckpoint("preprocessing length differs from network input".into()));
        }
        if samples < self.spec.input_len {
            return Err(Error::IncompatibleCheckpoint(format!(
                "records have {samples} samples, network needs {}",
                self.spec.input_len
            )));
        }
        Ok(())
    }
}

/// Inference wrapper that converts the checkpoint once.
#[derive(Debug, Clone)]
pub struct Predictor {
    net: Network<f32>,
    preprocess: Preprocess,
}

impl Predictor {
    pub fn new(ck: &Checkpoint) -> Result<Self> {
        Ok(Predictor {
            net: ck.network()?,
            preprocess: ck.preprocess.clone(),
        })
    }

    /// Raw network output in `(-1, 1)` for a prepared input.
    pub fn output(&self, input: &[f64]) -> Result<f64> {
        let x: Vec<f32> = input.iter().map(|&v| v as f32).collect();
        Ok(self.net.forward(&x)?.as_f64())
    }

    pub fn predict(&self, base: &ComplexBaseband) -> Result<DoaEstimate> {
        if self.net.spec().input_rows != 2 * base.channels {
            return Err(Error::IncompatibleCheckpoint(format!(
                "network takes {} rows, baseband has {} channels",
                self.net.spec().input_rows,
                base.channels
            )));
        }
        let Some(input) = self.preprocess.prepare(base)? else {
            return Ok(DoaEstimate::fallback());
        };
        Ok(estimate_from_output(self.output(&input)?))
    }
}

/// Converged estimate for a raw network output. The network has no peak
/// structure, so `prominence` is reported as 0.
pub fn estimate_from_output(y: f64) -> DoaEstimate {
    let angle = degrees_from_output(y);
    DoaEstimate {
        angle_deg: angle,
        status: DoaStatus::Converged,
        ambiguity: vec![angle],
        prominence: 0.0,
    }
}

/// Detect, crop, normalise, run the network and scale to degrees. Falls back
/// to 0 degrees when no echo is detected.
pub fn predict_doa(ck: &Checkpoint, base: &ComplexBaseband) -> Result<DoaEstimate> {
    Predictor::new(ck)?.predict(base)
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::signal::EchoDetector;

    fn checkpoint(seed: u64) -> Checkpoint {
        let spec = NetworkSpec::reduced();
        let net = Network::<f64>::init(spec.clone(), seed).unwrap();
        Checkpoint {
            preprocess: Preprocess::for_spec(&spec),
            spec,
            params: net.params,
            meta: TrainMeta {
                seed,
                epochs_run: 3,
                best_epoch: 1,
                final_train_loss: 0.1 / 3.0,
                final_heldout_loss: f64::NAN,
                train_fraction: 0.8,
                split_seed: 9,
                spacing_wavelengths: 0.5,
            },
        }
    }

    #[test]
    fn bytes_roundtrip_is_exact() {
        let ck = checkpoint(4);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>(), ck.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>());
        assert_eq!(back.spec, ck.spec);
        assert_eq!(back.preprocess, ck.preprocess);
        assert_eq!(back.meta.final_train_loss.to_bits(), ck.meta.final_train_loss.to_bits());
        assert!(back.meta.final_heldout_loss.is_nan());
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn damaged_files_rejected() {
        let bytes = checkpoint(1).to_bytes();
        let mut flipped = bytes.clone();
        let k = bytes.len() - 100;
        flipped[k] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::ChecksumMismatch { .. })));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn unknown_version_rejected() {
        let mut ck = checkpoint(1).to_bytes();
        ck[4..8].copy_from_slice(&7u32.to_le_bytes());
        let n = ck.len();
        let crc = crc32fast::hash(&ck[..n - 4]);
        ck[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&ck), Err(Error::UnsupportedVersion(7))));
    }

    #[test]
    fn parameter_count_must_match_spec() {
        let mut ck = checkpoint(2);
        ck.params.pop();
        assert!(matches!(Checkpoint::from_bytes(&ck.to_bytes()), Err(Error::IncompatibleCheckpoint(_))));
    }

    #[test]
    fn text_export_lists_every_parameter() {
        let ck = checkpoint(3);
        let mut buf = Vec::new();
        ck.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let layout = ck.spec.layout().unwrap();
        assert_eq!(text.lines().count(), 1 + layout.blocks.len() + ck.params.len());
        let values: Vec<f64> = text.lines().filter(|l| !l.starts_with('#')).map(|l| l.parse().unwrap()).collect();
        assert_eq!(values, ck.params);
    }

    #[test]
    fn output_scaling() {
        assert_eq!(estimate_from_output(0.5).angle_deg, 45.0);
        assert_eq!(estimate_from_output(0.0).angle_deg, 0.0);
        let e = estimate_from_output(-0.25);
        assert_eq!((e.angle_deg, e.status, e.prominence), (-22.5, DoaStatus::Converged, 0.0));
    }

    #[test]
    fn constant_network_predicts_its_bias() {
        let mut ck = checkpoint(0);
        ck.params.iter_mut().for_each(|p| *p = 0.0);
        let last = ck.params.len() - 1;
        ck.params[last] = 0.5f64.atanh();
        let pred = Predictor::new(&ck).unwrap();
        let x = vec![0.3; ck.spec.input_rows * ck.spec.input_len];
        assert!((pred.output(&x).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn undetectable_noise_falls_back() {
        let ck = checkpoint(5);
        let det = EchoDetector::for_estimators();
        let normal = StandardNormal;
        let base = (0..50u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data = (0..2000).map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))).collect();
                ComplexBaseband {
                    channels: 2,
                    samples_per_channel: 1000,
                    data,
                    sample_rate: 125_000.0,
                }
            })
            .find(|b| det.detect(b).is_err())
            .expect("some noise record without a detection");
        let est = predict_doa(&ck, &base).unwrap();
        assert_eq!(est, DoaEstimate::fallback());
    }

    #[test]
    fn compatibility_checks() {
        let ck = checkpoint(0);
        ck.check_compatible(2, 1000).unwrap();
        assert!(ck.check_compatible(3, 1000).is_err());
        assert!(ck.check_compatible(2, ck.spec.input_len - 1).is_err());
        let mono = ComplexBaseband::zeros(1, 1000, 125_000.0);
        assert!(matches!(predict_doa(&ck, &mono), Err(Error::IncompatibleCheckpoint(_))));
    }
}
