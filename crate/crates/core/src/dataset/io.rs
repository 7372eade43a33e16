use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use super::{Dataset, DatasetRecord};
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::signal::{ArrayGeometry, ComplexBaseband, SimConfig, Snr};

const MAGIC: &[u8; 4] = b"EDDS";
const VERSION: u32 = 1;

/// Serialises a dataset.
///
/// Layout, little-endian: magic `EDDS`, version `u32`, simulation config as
/// length-prefixed TOML, element count `u32` and positions `f64`, channels
/// `u32`, samples per channel `u32`, baseband rate `f64`, record count `u64`,
/// then fixed-stride records and a CRC-32 of everything before it.
///
/// A record is: angle, SNR (`inf` = noiseless), range, seed (`u64`),
/// time of flight (NaN = none), then `channels x samples` complex values as
/// (re, im) pairs, channel-major.
pub fn dataset_bytes(d: &Dataset) -> Vec<u8> {
    let (channels, samples) = d.payload_shape();
    let rate = d
        .records
        .first()
        .map_or(d.sim.baseband_rate(), |r| r.base.sample_rate);
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.blob(d.sim.to_text().as_bytes());
    w.u32(d.geometry.len() as u32);
    for &x in d.geometry.element_x() {
        w.f64(x);
    }
    w.u32(channels as u32);
    w.u32(samples as u32);
    w.f64(rate);
    w.u64(d.records.len() as u64);
    for r in &d.records {
        w.f64(r.doa_deg);
        w.f64(r.snr.as_db());
        w.f64(r.range_m);
        w.u64(r.seed);
        w.f64(r.time_of_flight.unwrap_or(f64::NAN));
        for z in &r.base.data {
            w.f64(z.re);
            w.f64(z.im);
        }
    }
    w.finish()
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_bytes(d)).map_err(|e| Error::io(path, e))
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::open(bytes, MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let sim = SimConfig::parse(&r.string()?)?;
    let n_el = r.u32()? as usize;
    let xs = (0..n_el).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let geometry = ArrayGeometry::new(xs)?;
    let channels = r.u32()? as usize;
    let samples = r.u32()? as usize;
    let rate = r.f64()?;
    let count = r.u64()? as usize;
    let stride = 40 + channels * samples * 16;
    if r.remaining() != count.saturating_mul(stride) {
        return Err(Error::Truncated(format!(
            "{count} records of {stride} bytes need {} bytes, found {}",
            count.saturating_mul(stride),
            r.remaining()
        )));
    }
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let doa_deg = r.f64()?;
        let snr = Snr::from_db(r.f64()?);
        let range_m = r.f64()?;
        let seed = r.u64()?;
        let tof = r.f64()?;
        let raw = r.take(channels * samples * 16)?;
        let data = raw
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        records.push(DatasetRecord {
            doa_deg,
            snr,
            range_m,
            seed,
            time_of_flight: (!tof.is_nan()).then_some(tof),
            base: ComplexBaseband {
                channels,
                samples_per_channel: samples,
                data,
                sample_rate: rate,
            },
        });
    }
    Dataset::new(sim, geometry, records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_bytes(&read_file(path.as_ref())?)
}

/// Plain-text per-record label listing for auditing.
pub fn write_index(d: &Dataset, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "index,doa_deg,snr_db,range_m,seed,time_of_flight_s")?;
    for (i, r) in d.records.iter().enumerate() {
        let tof = r.time_of_flight.map_or(String::new(), |t| format!("{t:.9e}"));
        writeln!(w, "{i},{},{},{:.6},{},{tof}", r.doa_deg, r.snr.as_db(), r.range_m, r.seed)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_dataset;
    use crate::dataset::tests::small_spec;
    use crate::Execution;

    #[test]
    fn roundtrip_is_bit_exact() {
        let d = generate_dataset(&small_spec(), Execution::Sequential).unwrap();
        let bytes = dataset_bytes(&d);
        let back = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(dataset_bytes(&back), bytes);
    }

    #[test]
    fn corruption_and_truncation() {
        let d = generate_dataset(&small_spec(), Execution::Sequential).unwrap();
        let mut bytes = dataset_bytes(&d);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(dataset_from_bytes(&bytes), Err(Error::ChecksumMismatch { .. })));
        bytes[mid] ^= 0x40;
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(dataset_from_bytes(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn version_checked() {
        let d = Dataset::new(SimConfig::default(), ArrayGeometry::pair(0.003).unwrap(), vec![]).unwrap();
        let bytes = dataset_bytes(&d);
        // Rewrite the version and re-seal the checksum.
        let mut body = bytes[..bytes.len() - 4].to_vec();
        body[4..8].copy_from_slice(&7u32.to_le_bytes());
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(dataset_from_bytes(&body), Err(Error::UnsupportedVersion(7))));
    }

    #[test]
    fn empty_dataset_roundtrip() {
        let d = Dataset::new(SimConfig::default(), ArrayGeometry::pair(0.003).unwrap(), vec![]).unwrap();
        let back = dataset_from_bytes(&dataset_bytes(&d)).unwrap();
        assert!(back.is_empty());
        assert_eq!(back, d);
    }

    #[test]
    fn index_lists_every_record() {
        let d = generate_dataset(&small_spec(), Execution::Sequential).unwrap();
        let mut out = Vec::new();
        write_index(&d, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.lines().nth(4).unwrap().starts_with("3,-20,inf,"));
    }
}
