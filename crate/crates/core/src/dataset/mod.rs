//! Labelled simulated datasets over angle and SNR grids, their binary
//! container, stratified splitting and ingestion of captured waveforms.

mod capture;
mod io;

pub use capture::{ingest_capture, read_capture, write_capture, Capture};
pub use io::{dataset_bytes, dataset_from_bytes, load_dataset, save_dataset, write_index};

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::signal::{
    add_awgn, synthesize_echo, to_baseband, wavelength, ArrayGeometry, ComplexBaseband, EchoDetector, SimConfig, Snr,
    SourceScenario,
};

/// Grid of scenarios to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub angles_deg: Vec<f64>,
    /// SNR levels in dB; `inf` means noiseless.
    pub snr_db: Vec<f64>,
    pub records_per_cell: usize,
    /// Element spacing of the two-element array, in wavelengths.
    pub spacing_wavelengths: f64,
    /// Ranges are drawn uniformly from `[min, max]` meters per record.
    pub range_m: [f64; 2],
    /// Largest admissible `|angle|`.
    pub aperture_deg: f64,
    pub seed: u64,
    pub sim: SimConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            angles_deg: grid(-60.0, 60.0, 10.0),
            snr_db: grid(-30.0, 20.0, 5.0),
            records_per_cell: 40,
            spacing_wavelengths: 0.5,
            range_m: [0.5, 1.25],
            aperture_deg: 90.0,
            seed: 0,
            sim: SimConfig::default(),
        }
    }
}

/// `min, min + step, ...` up to and including `max` (within rounding).
pub fn grid(min: f64, max: f64, step: f64) -> Vec<f64> {
    let n = ((max - min) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| min + i as f64 * step).collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-record seed derived from the master seed and the cell coordinates.
pub fn record_seed(master: u64, angle_idx: usize, snr_idx: usize, rep: usize) -> u64 {
    let mut s = splitmix(master);
    for v in [angle_idx, snr_idx, rep] {
        s = splitmix(s ^ v as u64);
    }
    s
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let s: SweepSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::pair_in_wavelengths(self.spacing_wavelengths, wavelength(&self.sim))
    }

    pub fn len(&self) -> usize {
        self.angles_deg.len() * self.snr_db.len() * self.records_per_cell
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.angles_deg.is_empty() || self.snr_db.is_empty() {
            return Err(Error::InvalidConfig("angle and SNR grids must be non-empty".into()));
        }
        if self.records_per_cell == 0 {
            return Err(Error::InvalidConfig("records_per_cell must be >= 1".into()));
        }
        if !(self.aperture_deg > 0.0 && self.aperture_deg <= 90.0) {
            return Err(Error::InvalidConfig("aperture_deg must lie in (0, 90]".into()));
        }
        for &a in &self.angles_deg {
            if !a.is_finite() || a.abs() > self.aperture_deg || a.abs() >= 90.0 {
                return Err(Error::ApertureViolation {
                    angle_deg: a,
                    aperture_deg: self.aperture_deg,
                });
            }
        }
        if self.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::InvalidConfig("SNR levels must be finite dB or inf".into()));
        }
        let [lo, hi] = self.range_m;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig("range_m must satisfy 0 < min <= max".into()));
        }
        // The farthest echo must end inside the listen window.
        let g = self.geometry()?;
        let aperture = g.element_x().last().unwrap() - g.element_x()[0];
        let end = 2.0 * hi / self.sim.sound_speed + aperture / self.sim.sound_speed + self.sim.echo_duration;
        if end > self.sim.listen_window {
            return Err(Error::ScenarioOutOfWindow {
                end_s: end,
                window_s: self.sim.listen_window,
            });
        }
        Ok(())
    }

    /// Scenario and noise seed of one record.
    pub fn scenario(&self, angle_idx: usize, snr_idx: usize, rep: usize) -> (SourceScenario, u64) {
        let seed = record_seed(self.seed, angle_idx, snr_idx, rep);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let [lo, hi] = self.range_m;
        let range = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let mut sc = SourceScenario::new(
            self.angles_deg[angle_idx],
            range,
            Snr::from_db(self.snr_db[snr_idx]),
        );
        sc.id = seed;
        (sc, seed)
    }
}

/// One labelled record.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// Truth angle in degrees; NaN for unlabelled captures.
    pub doa_deg: f64,
    pub snr: Snr,
    pub range_m: f64,
    pub seed: u64,
    pub time_of_flight: Option<f64>,
    pub base: ComplexBaseband,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sim: SimConfig,
    pub geometry: ArrayGeometry,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn new(sim: SimConfig, geometry: ArrayGeometry, records: Vec<DatasetRecord>) -> Result<Self> {
        let d = Dataset { sim, geometry, records };
        d.check()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Channels and samples per channel of every payload.
    pub fn payload_shape(&self) -> (usize, usize) {
        match self.records.first() {
            Some(r) => (r.base.channels, r.base.samples_per_channel),
            None => (self.geometry.len(), self.sim.baseband_samples()),
        }
    }

    fn check(&self) -> Result<()> {
        let shape = self.payload_shape();
        for r in &self.records {
            r.base.check()?;
            if (r.base.channels, r.base.samples_per_channel) != shape {
                return Err(Error::ShapeMismatch("payload shapes differ across records".into()));
            }
        }
        if shape.0 != self.geometry.len() {
            return Err(Error::ShapeMismatch("payload channels differ from geometry".into()));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            sim: self.sim.clone(),
            geometry: self.geometry.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// Simulates every `(angle, SNR, repetition)` record of the sweep.
///
/// Records come out angle-major, then SNR, then repetition. Each record's
/// range and noise derive from its own seed, so output is identical for
/// any worker count.
pub fn generate_dataset(spec: &SweepSpec, exec: Execution) -> Result<Dataset> {
    spec.validate()?;
    let geometry = spec.geometry()?;
    let (na, ns, nr) = (spec.angles_deg.len(), spec.snr_db.len(), spec.records_per_cell);
    let tof_detector = EchoDetector::default();
    let records = exec.map_range(na * ns * nr, |k| -> Result<DatasetRecord> {
        let (ai, si, rep) = (k / (ns * nr), (k / nr) % ns, k % nr);
        let (sc, seed) = spec.scenario(ai, si, rep);
        let clean = synthesize_echo(&sc, &geometry, &spec.sim)?;
        let noisy = add_awgn(&clean, sc.snr, seed)?;
        let base = to_baseband(&noisy, &spec.sim)?;
        let time_of_flight = tof_detector.detect(&base).ok().map(|w| w.time_of_flight);
        Ok(DatasetRecord {
            doa_deg: sc.doa_deg,
            snr: sc.snr,
            range_m: sc.range_m,
            seed,
            time_of_flight,
            base,
        })
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    Dataset::new(spec.sim.clone(), geometry, records)
}

/// Index lists of a train/test partition, each ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn cell_key(r: &DatasetRecord) -> (u64, u64) {
    (r.doa_deg.to_bits(), r.snr.as_db().to_bits())
}

/// Stratified shuffle split.
///
/// The train side receives `ceil(n * fraction)` records. Quotas per
/// `(angle, SNR)` cell follow the largest-remainder rule, with every cell of
/// two or more records keeping at least one record on each side.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig("train_fraction must lie in (0, 1)".into()));
    }
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut lookup: HashMap<(u64, u64), usize> = HashMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        let c = *lookup.entry(cell_key(r)).or_insert_with(|| {
            cells.push(Vec::new());
            cells.len() - 1
        });
        cells[c].push(i);
    }

    let target = ((n as f64 * train_fraction).ceil() as usize).min(n);
    let bounds: Vec<(usize, usize)> = cells
        .iter()
        .map(|c| if c.len() >= 2 { (1, c.len() - 1) } else { (0, c.len()) })
        .collect();
    let ideal: Vec<f64> = cells.iter().map(|c| c.len() as f64 * train_fraction).collect();
    let mut quota: Vec<usize> = ideal
        .iter()
        .zip(&bounds)
        .map(|(&x, &(lo, hi))| (x.floor() as usize).clamp(lo, hi))
        .collect();
    let mut assigned: usize = quota.iter().sum();
    // Remainders relative to the current quota; ties go to earlier cells.
    let mut order: Vec<usize> = (0..cells.len()).collect();
    // The second pass relaxes the both-sides bound when the size rule cannot
    // otherwise be met.
    for strict in [true, false] {
        let bound = |c: usize| if strict { bounds[c] } else { (0, cells[c].len()) };
        while assigned < target {
            order.sort_by(|&a, &b| (ideal[b] - quota[b] as f64).total_cmp(&(ideal[a] - quota[a] as f64)).then(a.cmp(&b)));
            let Some(&c) = order.iter().find(|&&c| quota[c] < bound(c).1) else { break };
            quota[c] += 1;
            assigned += 1;
        }
        while assigned > target {
            order.sort_by(|&a, &b| (ideal[a] - quota[a] as f64).total_cmp(&(ideal[b] - quota[b] as f64)).then(a.cmp(&b)));
            let Some(&c) = order.iter().find(|&&c| quota[c] > bound(c).0) else { break };
            quota[c] -= 1;
            assigned -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::with_capacity(target), Vec::with_capacity(n - target));
    for (cell, &q) in cells.iter_mut().zip(&quota) {
        cell.shuffle(&mut rng);
        train.extend_from_slice(&cell[..q]);
        test.extend_from_slice(&cell[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_spec() -> SweepSpec {
        SweepSpec {
            angles_deg: vec![-20.0, 10.0],
            snr_db: vec![0.0, f64::INFINITY],
            records_per_cell: 3,
            ..SweepSpec::default()
        }
    }

    #[test]
    fn default_grid_sizes() {
        let s = SweepSpec::default();
        assert_eq!(s.angles_deg.len(), 13);
        assert_eq!(s.snr_db.len(), 11);
        assert_eq!(s.len(), 5720);
        s.validate().unwrap();
        assert_eq!(grid(-30.0, 20.0, 5.0).last(), Some(&20.0));
    }

    #[test]
    fn cardinality_and_order() {
        let d = generate_dataset(&small_spec(), Execution::Sequential).unwrap();
        assert_eq!(d.len(), 12);
        assert_eq!(d.records[0].doa_deg, -20.0);
        assert_eq!(d.records[3].snr, Snr::Noiseless);
        assert_eq!(d.records[6].doa_deg, 10.0);
        assert_eq!(d.payload_shape(), (2, 1000));
        assert!(d.records.iter().all(|r| (0.5..=1.25).contains(&r.range_m)));
        assert!(d.records[3].time_of_flight.is_some());
    }

    #[test]
    fn parallel_generation_matches_sequential() {
        let a = generate_dataset(&small_spec(), Execution::Sequential).unwrap();
        let b = crate::exec::with_workers(3, || generate_dataset(&small_spec(), Execution::Parallel)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aperture_and_window_violations() {
        let s = SweepSpec {
            angles_deg: vec![0.0, 95.0],
            ..small_spec()
        };
        assert!(matches!(s.validate(), Err(Error::ApertureViolation { .. })));
        let s = SweepSpec {
            angles_deg: vec![50.0],
            aperture_deg: 45.0,
            ..small_spec()
        };
        assert!(matches!(s.validate(), Err(Error::ApertureViolation { .. })));
        let s = SweepSpec {
            range_m: [0.5, 3.0],
            ..small_spec()
        };
        assert!(matches!(s.validate(), Err(Error::ScenarioOutOfWindow { .. })));
    }

    #[test]
    fn parse_sweep_text() {
        let s = SweepSpec::parse("angles_deg = [0.0, 30.0]\nsnr_db = [10.0, inf]\nrecords_per_cell = 2\nseed = 9\n").unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s.snr_db[1], f64::INFINITY);
        assert!(SweepSpec::parse("bogus = 1").is_err());
    }

    fn labelled(n_cells: usize, per_cell: usize) -> Dataset {
        let base = ComplexBaseband::zeros(2, 4, 125e3);
        let records = (0..n_cells * per_cell)
            .map(|i| DatasetRecord {
                doa_deg: (i / per_cell) as f64,
                snr: Snr::Db(0.0),
                range_m: 1.0,
                seed: i as u64,
                time_of_flight: None,
                base: base.clone(),
            })
            .collect();
        Dataset::new(SimConfig::default(), ArrayGeometry::pair(0.003).unwrap(), records).unwrap()
    }

    #[test]
    fn split_sizes() {
        let s = split(&labelled(1, 100), 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        let s = split(&labelled(1, 5), 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (4, 1));
        // Both-sides stratification would cap train at 14; the size rule wins.
        let s = split(&labelled(7, 3), 0.8, 1).unwrap();
        assert_eq!(s.train.len(), 17);
        assert_eq!(split(&labelled(7, 3), 0.8, 1).unwrap(), s);
        assert_ne!(split(&labelled(7, 3), 0.8, 2).unwrap(), s);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split(&labelled(0, 0), 0.8, 1), Err(Error::EmptyDataset)));
        assert!(split(&labelled(1, 4), 1.0, 1).is_err());
    }
}
