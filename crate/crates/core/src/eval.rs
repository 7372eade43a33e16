//! Head-to-head evaluation of direction estimators over SNR sweeps.
//!
//! Every record contributes its absolute error, including fallback records,
//! whose 0 degree answer is scored against the truth like any other.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::music::{estimate_doa_music, DoaEstimate, MusicOptions};
use crate::nn::{Checkpoint, Predictor};

/// Angular subset of the records a row summarises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Full,
    /// `|theta| <= 30`.
    Inside30,
    /// `|theta| > 30`.
    Outside30,
}

impl Domain {
    pub fn contains(self, doa_deg: f64) -> bool {
        match self {
            Domain::Full => true,
            Domain::Inside30 => doa_deg.abs() <= 30.0,
            Domain::Outside30 => doa_deg.abs() > 30.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Full => "full",
            Domain::Inside30 => "inside30",
            Domain::Outside30 => "outside30",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Domain::Full),
            "inside30" => Ok(Domain::Inside30),
            "outside30" => Ok(Domain::Outside30),
            _ => Err(Error::Parse(format!("unknown domain {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Estimator {
    Music { id: String, options: MusicOptions },
    Network { id: String, checkpoint: Box<Checkpoint> },
}

impl Estimator {
    pub fn music(options: MusicOptions) -> Self {
        Estimator::Music {
            id: "music".into(),
            options,
        }
    }

    pub fn network(checkpoint: Checkpoint) -> Self {
        Estimator::Network {
            id: "cnn".into(),
            checkpoint: Box::new(checkpoint),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Estimator::Music { id, .. } | Estimator::Network { id, .. } => id,
        }
    }

    pub fn with_id(mut self, new_id: impl Into<String>) -> Self {
        match &mut self {
            Estimator::Music { id, .. } | Estimator::Network { id, .. } => *id = new_id.into(),
        }
        self
    }

    fn describe(&self) -> String {
        match self {
            Estimator::Music { options, .. } => {
                format!("music {}", serde_json::to_string(options).expect("options serialize"))
            }
            Estimator::Network { checkpoint, .. } => format!("checkpoint {}", checkpoint_id(checkpoint)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub snr_db: f64,
    pub estimator: String,
    pub domain: Domain,
    pub mae_deg: f64,
    pub median_deg: f64,
    pub fallback_rate: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    /// `(estimator id, description)` pairs in evaluation order.
    pub estimators: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub provenance: Provenance,
    pub rows: Vec<MetricsRow>,
}

/// CRC-32 over the labels and payload bits of every record.
pub fn dataset_id(dataset: &Dataset) -> String {
    let mut h = crc32fast::Hasher::new();
    for r in &dataset.records {
        for v in [r.doa_deg, r.snr.as_db(), r.range_m] {
            h.update(&v.to_le_bytes());
        }
        h.update(&r.seed.to_le_bytes());
        for z in &r.base.data {
            h.update(&z.re.to_le_bytes());
            h.update(&z.im.to_le_bytes());
        }
    }
    format!("{:08x}", h.finalize())
}

pub fn checkpoint_id(ck: &Checkpoint) -> String {
    format!("{:08x}", crc32fast::hash(&ck.to_bytes()))
}

enum Prepared<'a> {
    Music(&'a MusicOptions),
    Network(Predictor),
}

/// Runs every estimator on every record. `out[e][i]` is estimator `e` on
/// record `i`.
pub fn estimate_all(dataset: &Dataset, estimators: &[Estimator], exec: Execution) -> Result<Vec<Vec<DoaEstimate>>> {
    let (channels, samples) = dataset.payload_shape();
    let prepared = estimators
        .iter()
        .map(|e| match e {
            Estimator::Music { options, .. } => Ok(Prepared::Music(options)),
            Estimator::Network { checkpoint, .. } => {
                checkpoint.check_compatible(channels, samples)?;
                Ok(Prepared::Network(Predictor::new(checkpoint)?))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    prepared
        .iter()
        .map(|p| {
            exec.map(&dataset.records, |r| match p {
                Prepared::Music(o) => estimate_doa_music(&r.base, &dataset.geometry, &dataset.sim, o),
                Prepared::Network(pred) => pred.predict(&r.base),
            })
            .into_iter()
            .collect()
        })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-(SNR, estimator, domain) error summary. Rows are ordered by ascending
/// SNR (noiseless last), then estimator order, then domain order; groups
/// without records are omitted.
pub fn evaluate(dataset: &Dataset, estimators: &[Estimator], domains: &[Domain], exec: Execution) -> Result<MetricsTable> {
    if let Some(r) = dataset.records.iter().find(|r| !r.doa_deg.is_finite()) {
        return Err(Error::InvalidConfig(format!("record with seed {} has no angle label", r.seed)));
    }
    let mut ids: Vec<&str> = Vec::new();
    for e in estimators {
        if ids.contains(&e.id()) {
            return Err(Error::InvalidConfig(format!("duplicate estimator id {:?}", e.id())));
        }
        ids.push(e.id());
    }
    let estimates = estimate_all(dataset, estimators, exec)?;
    let mut snrs: Vec<f64> = dataset.records.iter().map(|r| r.snr.as_db()).collect();
    snrs.sort_by(|a, b| a.total_cmp(b));
    snrs.dedup();

    let mut rows = Vec::new();
    for &snr in &snrs {
        for (e, est) in estimators.iter().zip(&estimates) {
            for &domain in domains {
                let mut errors = Vec::new();
                let mut fallbacks = 0usize;
                for (r, d) in dataset.records.iter().zip(est) {
                    if r.snr.as_db() != snr || !domain.contains(r.doa_deg) {
                        continue;
                    }
                    errors.push((d.angle_deg - r.doa_deg).abs());
                    fallbacks += d.is_fallback() as usize;
                }
                if errors.is_empty() {
                    continue;
                }
                let n = errors.len();
                rows.push(MetricsRow {
                    snr_db: snr,
                    estimator: e.id().to_string(),
                    domain,
                    mae_deg: errors.iter().sum::<f64>() / n as f64,
                    median_deg: median(&mut errors),
                    fallback_rate: fallbacks as f64 / n as f64,
                    n,
                });
            }
        }
    }
    Ok(MetricsTable {
        provenance: Provenance {
            dataset: dataset_id(dataset),
            estimators: estimators.iter().map(|e| (e.id().to_string(), e.describe())).collect(),
        },
        rows,
    })
}

pub const CSV_HEADER: [&str; 7] = ["snr_db", "estimator", "domain", "mae_deg", "median_deg", "fallback_rate", "n"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultFormat {
    /// Comma-separated rows, no provenance.
    Csv,
    /// TOML with the provenance block.
    Toml,
}

impl ResultFormat {
    /// `.toml` selects TOML, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => ResultFormat::Toml,
            _ => ResultFormat::Csv,
        }
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl MetricsTable {
    pub fn row(&self, snr_db: f64, estimator: &str, domain: Domain) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.snr_db == snr_db && r.estimator == estimator && r.domain == domain)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let io = |e: csv::Error| Error::Parse(e.to_string());
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            out.write_record([
                fmt_f64(r.snr_db),
                r.estimator.clone(),
                r.domain.as_str().to_string(),
                fmt_f64(r.mae_deg),
                fmt_f64(r.median_deg),
                fmt_f64(r.fallback_rate),
                r.n.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| Error::io("<csv output>", e))
    }

    /// Parses rows written by [`MetricsTable::write_csv`]. Provenance is not
    /// part of the delimited format and comes back empty.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?;
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Parse(format!("unexpected header {header:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != CSV_HEADER.len() {
                return Err(Error::Parse(format!("row has {} fields", rec.len())));
            }
            rows.push(MetricsRow {
                snr_db: num(&rec[0])?,
                estimator: rec[1].to_string(),
                domain: Domain::parse(&rec[2])?,
                mae_deg: num(&rec[3])?,
                median_deg: num(&rec[4])?,
                fallback_rate: num(&rec[5])?,
                n: rec[6].parse().map_err(|e| Error::Parse(format!("{:?}: {e}", &rec[6])))?,
            });
        }
        Ok(MetricsTable {
            provenance: Provenance::default(),
            rows,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metrics serialize")
    }

    pub fn parse_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>, format: ResultFormat) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        match format {
            ResultFormat::Csv => self.write_csv(&mut buf)?,
            ResultFormat::Toml => buf = self.to_toml().into_bytes(),
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, format: ResultFormat) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match format {
            ResultFormat::Csv => Self::parse_csv(&text),
            ResultFormat::Toml => Self::parse_toml(&text),
        }
    }

    /// Finite-SNR `(snr, mae)` points of one estimator in one domain,
    /// ascending in SNR.
    pub fn curve(&self, estimator: &str, domain: Domain) -> Vec<(f64, f64)> {
        let pts: BTreeMap<u64, (f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.estimator == estimator && r.domain == domain && r.snr_db.is_finite())
            .map(|r| (ordered_key(r.snr_db), (r.snr_db, r.mae_deg)))
            .collect();
        pts.into_values().collect()
    }
}

/// Monotone key for finite floats so a `BTreeMap` sorts by value.
fn ordered_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// Pool-adjacent-violators fit of a non-increasing sequence.
fn isotonic_decreasing(y: &[f64]) -> Vec<f64> {
    // Blocks of (sum, count).
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 >= s1 / c1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0 + s1, c0 + c1);
        }
    }
    blocks.iter().flat_map(|&(s, c)| std::iter::repeat_n(s / c as f64, c)).collect()
}

/// SNR where the non-increasing piecewise-linear curve `(x, y)` reaches
/// `level`, choosing the point nearest `near` when the curve is flat at that
/// level. `None` outside the curve's range.
fn inverse_at(x: &[f64], y: &[f64], level: f64, near: f64) -> Option<f64> {
    let (lo, hi) = (y[y.len() - 1], y[0]);
    if !(lo..=hi).contains(&level) {
        return None;
    }
    let flat: Vec<usize> = (0..y.len()).filter(|&i| y[i] == level).collect();
    if let (Some(&a), Some(&b)) = (flat.first(), flat.last()) {
        return Some(near.clamp(x[a], x[b]));
    }
    (0..x.len() - 1).find_map(|i| {
        let (y0, y1) = (y[i], y[i + 1]);
        (y0 > level && level > y1).then(|| x[i] + (y0 - level) / (y0 - y1) * (x[i + 1] - x[i]))
    })
}

/// Median horizontal SNR shift between the MAE curves of `a` and `b`.
///
/// For every SNR level `s` shared by both estimators, the SNR at which `b`'s
/// curve (made non-increasing by isotonic regression, linearly interpolated)
/// reaches `a`'s MAE at `s` gives one shift `s_b - s`. Positive values mean
/// `b` needs more SNR for the same error as `a`.
pub fn snr_crossover(table: &MetricsTable, a: &str, b: &str, domain: Domain) -> Result<f64> {
    let ca = table.curve(a, domain);
    let cb = table.curve(b, domain);
    if ca.is_empty() {
        return Err(Error::MissingEstimator(a.to_string()));
    }
    if cb.is_empty() {
        return Err(Error::MissingEstimator(b.to_string()));
    }
    let common: Vec<(f64, f64)> = ca.iter().copied().filter(|(s, _)| cb.iter().any(|(t, _)| t == s)).collect();
    if common.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "{} common SNR levels, at least 4 needed",
            common.len()
        )));
    }
    let xb: Vec<f64> = cb.iter().map(|p| p.0).collect();
    let yb = isotonic_decreasing(&cb.iter().map(|p| p.1).collect::<Vec<_>>());
    let mut shifts: Vec<f64> = common
        .iter()
        .filter_map(|&(s, mae)| inverse_at(&xb, &yb, mae, s).map(|sb| sb - s))
        .collect();
    if shifts.is_empty() {
        return Err(Error::NonOverlappingCurves);
    }
    Ok(median(&mut shifts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(curves: &[(&str, &dyn Fn(f64) -> f64)]) -> MetricsTable {
        let mut rows = Vec::new();
        for s in (-30..=20).step_by(5) {
            for (id, f) in curves {
                rows.push(MetricsRow {
                    snr_db: s as f64,
                    estimator: id.to_string(),
                    domain: Domain::Full,
                    mae_deg: f(s as f64),
                    median_deg: f(s as f64) / 2.0,
                    fallback_rate: 0.1,
                    n: 20,
                });
            }
        }
        MetricsTable {
            provenance: Provenance::default(),
            rows,
        }
    }

    #[test]
    fn identical_curves_have_zero_shift() {
        let f = |s: f64| 30.0 * (-(s + 30.0) / 15.0).exp() + 1.0;
        let t = table(&[("a", &f), ("b", &f)]);
        assert_eq!(snr_crossover(&t, "a", "b", Domain::Full).unwrap(), 0.0);
    }

    #[test]
    fn shifted_curve_recovers_offset() {
        let t = table(&[("a", &|s| 50.0 - s), ("b", &|s| 60.0 - s)]);
        let shift = snr_crossover(&t, "a", "b", Domain::Full).unwrap();
        assert!((shift - 10.0).abs() < 1e-12, "{shift}");
        let back = snr_crossover(&t, "b", "a", Domain::Full).unwrap();
        assert!((back + 10.0).abs() < 1e-12, "{back}");
    }

    #[test]
    fn crossover_errors() {
        let t = table(&[("a", &|_| 1.0), ("b", &|s| 60.0 - s)]);
        assert!(matches!(snr_crossover(&t, "a", "b", Domain::Full), Err(Error::NonOverlappingCurves)));
        assert!(matches!(snr_crossover(&t, "a", "zz", Domain::Full), Err(Error::MissingEstimator(_))));
        let mut few = t.clone();
        few.rows.retain(|r| r.snr_db < -15.0);
        assert!(matches!(snr_crossover(&few, "a", "b", Domain::Full), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn isotonic_fit_pools_violations() {
        assert_eq!(isotonic_decreasing(&[3.0, 1.0, 2.0, 0.0]), vec![3.0, 1.5, 1.5, 0.0]);
        assert_eq!(isotonic_decreasing(&[1.0, 2.0, 3.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let t = table(&[("music", &|s| 1.0 / 3.0 + s.abs().sqrt()), ("cnn", &|s| std::f64::consts::PI - s / 7.0)]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 23);
        assert_eq!(text.lines().next().unwrap(), "snr_db,estimator,domain,mae_deg,median_deg,fallback_rate,n");
        let back = MetricsTable::parse_csv(&text).unwrap();
        assert_eq!(back.rows, t.rows);
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        MetricsTable::default().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(MetricsTable::parse_csv(&text).unwrap().rows.is_empty());
    }

    #[test]
    fn toml_roundtrip_keeps_provenance_and_noiseless_rows() {
        let mut t = table(&[("music", &|s| 0.1 + (s / 9.0).powi(2))]);
        t.rows.push(MetricsRow {
            snr_db: f64::INFINITY,
            estimator: "music".into(),
            domain: Domain::Outside30,
            mae_deg: 0.0,
            median_deg: 0.0,
            fallback_rate: 0.0,
            n: 1,
        });
        t.provenance = Provenance {
            dataset: "0badf00d".into(),
            estimators: vec![("music".into(), "music {}".into())],
        };
        assert_eq!(MetricsTable::parse_toml(&t.to_toml()).unwrap(), t);
    }

    #[test]
    fn bad_csv_rejected() {
        assert!(MetricsTable::parse_csv("a,b\n1,2\n").is_err());
        let row = "snr_db,estimator,domain,mae_deg,median_deg,fallback_rate,n\n0,x,sideways,1,1,0,1\n";
        assert!(MetricsTable::parse_csv(row).is_err());
    }

    #[test]
    fn domain_membership() {
        assert!(Domain::Inside30.contains(30.0) && !Domain::Outside30.contains(-30.0));
        assert!(Domain::Outside30.contains(-30.5) && Domain::Full.contains(89.0));
        for d in [Domain::Full, Domain::Inside30, Domain::Outside30] {
            assert_eq!(Domain::parse(d.as_str()).unwrap(), d);
        }
    }
}
