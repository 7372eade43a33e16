//! MUSIC direction-of-arrival estimation and grating-lobe enumeration.
//!
//! For the two-element array the noise subspace is a single vector obtained
//! from the closed-form 2x2 Hermitian eigendecomposition; larger arrays fall
//! back to a general Hermitian eigensolver.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{steering_vector, wavelength, ArrayGeometry, ComplexBaseband, EchoDetector, SimConfig};

/// `M` channels by `K` snapshots, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub channels: usize,
    pub snapshots: usize,
    pub data: Vec<Complex64>,
}

impl SnapshotMatrix {
    pub fn new(channels: usize, snapshots: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != channels * snapshots {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {channels} x {snapshots} snapshots",
                data.len()
            )));
        }
        Ok(SnapshotMatrix {
            channels,
            snapshots,
            data,
        })
    }

    /// Samples `[start, end)` of every channel.
    pub fn from_window(base: &ComplexBaseband, start: usize, end: usize) -> Result<Self> {
        if start > end || end > base.samples_per_channel {
            return Err(Error::ShapeMismatch(format!(
                "window {start}..{end} outside {} samples",
                base.samples_per_channel
            )));
        }
        let data = (0..base.channels)
            .flat_map(|m| base.channel(m)[start..end].iter().copied())
            .collect();
        Self::new(base.channels, end - start, data)
    }

    pub fn channel(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.snapshots..(m + 1) * self.snapshots]
    }
}

/// Row-major `M x M` Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub size: usize,
    pub data: Vec<Complex64>,
}

impl CovarianceMatrix {
    pub fn new(size: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::ShapeMismatch("covariance must be square".into()));
        }
        Ok(CovarianceMatrix { size, data })
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.size + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.size).map(|i| self.get(i, i).re).sum()
    }
}

/// Orthonormal noise-subspace basis, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSubspace {
    pub size: usize,
    pub columns: Vec<Vec<Complex64>>,
    /// All eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// `lambda_min / lambda_max`; 1 means a fully degenerate spectrum.
    pub gap_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub angle_deg: f64,
    pub value: f64,
    pub prominence: f64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pseudospectrum {
    pub angles_deg: Vec<f64>,
    pub power: Vec<f64>,
    /// Sorted by descending prominence.
    pub peaks: Vec<Peak>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoaStatus {
    Converged,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub angle_deg: f64,
    pub status: DoaStatus,
    /// Angles indistinguishable from `angle_deg` by phase alone, ascending.
    pub ambiguity: Vec<f64>,
    pub prominence: f64,
}

impl DoaEstimate {
    /// The 0 degree answer returned whenever estimation fails.
    pub fn fallback() -> Self {
        DoaEstimate {
            angle_deg: 0.0,
            status: DoaStatus::Fallback,
            ambiguity: vec![0.0],
            prominence: 0.0,
        }
    }

    pub fn is_fallback(&self) -> bool {
        self.status == DoaStatus::Fallback
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MusicOptions {
    pub grid_step_deg: f64,
    pub domain_deg: (f64, f64),
    /// A peak must reach this multiple of the pseudospectrum median.
    pub prominence_factor: f64,
    pub min_snapshots: usize,
    /// Eigenvalue gap ratio above which the spectrum counts as degenerate.
    pub degeneracy_ratio: f64,
    pub detector: EchoDetector,
}

impl Default for MusicOptions {
    fn default() -> Self {
        MusicOptions {
            grid_step_deg: 0.25,
            domain_deg: (-90.0, 90.0),
            prominence_factor: 3.0,
            min_snapshots: 16,
            degeneracy_ratio: 1.0 - 1e-9,
            detector: EchoDetector::for_estimators(),
        }
    }
}

/// Sample covariance `(1/K) sum_k y_k y_k^H`, Hermitian by construction.
pub fn covariance(snapshots: &SnapshotMatrix) -> Result<CovarianceMatrix> {
    let m = snapshots.channels;
    let k = snapshots.snapshots;
    if k < m {
        return Err(Error::TooFewSnapshots {
            snapshots: k,
            channels: m,
        });
    }
    let mut data = vec![Complex64::new(0.0, 0.0); m * m];
    let scale = 1.0 / k as f64;
    for i in 0..m {
        let yi = snapshots.channel(i);
        let diag: f64 = yi.iter().map(|z| z.norm_sqr()).sum();
        data[i * m + i] = Complex64::new(diag * scale, 0.0);
        for j in i + 1..m {
            let yj = snapshots.channel(j);
            let acc: Complex64 = yi.iter().zip(yj).map(|(a, b)| a * b.conj()).sum();
            data[i * m + j] = acc * scale;
            data[j * m + i] = (acc * scale).conj();
        }
    }
    CovarianceMatrix::new(m, data)
}

/// Rotates `v` so its first non-negligible component is real positive.
fn canonical_phase(v: &mut [Complex64]) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    if let Some(lead) = v.iter().find(|z| z.norm() > 1e-12 * norm).copied() {
        let rot = lead.conj() / (lead.norm() * norm);
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

fn gap_ratio(min: f64, max: f64) -> f64 {
    if max <= 0.0 {
        1.0
    } else {
        (min / max).abs()
    }
}

fn eigen_2x2(r: &CovarianceMatrix) -> NoiseSubspace {
    let a = r.get(0, 0).re;
    let c = r.get(1, 1).re;
    let b = r.get(0, 1);
    let mean = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b.norm_sqr()).sqrt();
    let (lmin, lmax) = (mean - disc, mean + disc);

    let mut v = if b.norm() == 0.0 {
        if a < c {
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
        } else {
            vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]
        }
    } else {
        // Both forms solve (R - lmin I) v = 0; keep the better-conditioned one.
        let v1 = [b, Complex64::new(lmin - a, 0.0)];
        let v2 = [Complex64::new(lmin - c, 0.0), b.conj()];
        let n1 = v1[0].norm_sqr() + v1[1].norm_sqr();
        let n2 = v2[0].norm_sqr() + v2[1].norm_sqr();
        if n1 >= n2 { v1.to_vec() } else { v2.to_vec() }
    };
    canonical_phase(&mut v);
    NoiseSubspace {
        size: 2,
        columns: vec![v],
        eigenvalues: vec![lmin, lmax],
        gap_ratio: gap_ratio(lmin, lmax),
    }
}

fn eigen_general(r: &CovarianceMatrix, sources: usize) -> NoiseSubspace {
    let m = r.size;
    let mat = DMatrix::from_fn(m, m, |i, j| r.get(i, j));
    let eig = mat.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let columns = order[..m - sources]
        .iter()
        .map(|&i| {
            let mut v: Vec<Complex64> = eig.eigenvectors.column(i).iter().copied().collect();
            canonical_phase(&mut v);
            v
        })
        .collect();
    NoiseSubspace {
        size: m,
        columns,
        gap_ratio: gap_ratio(eigenvalues[0], eigenvalues[m - 1]),
        eigenvalues,
    }
}

/// Eigenvectors of the `M - sources` smallest eigenvalues.
pub fn noise_subspace(r: &CovarianceMatrix, sources: usize) -> Result<NoiseSubspace> {
    if sources == 0 || sources >= r.size {
        return Err(Error::InvalidConfig(format!(
            "source count {sources} must lie in [1, {})",
            r.size
        )));
    }
    if r.size == 2 {
        Ok(eigen_2x2(r))
    } else {
        Ok(eigen_general(r, sources))
    }
}

fn grid(step: f64, domain: (f64, f64)) -> Result<Vec<f64>> {
    let (lo, hi) = domain;
    if !(step > 0.0) || !(lo < hi) || lo < -90.0 || hi > 90.0 {
        return Err(Error::InvalidConfig(format!(
            "bad grid: step {step}, domain {lo}..{hi}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

/// Strict local maxima (endpoints compare against their one neighbour) with
/// topographic prominence.
fn find_peaks(angles: &[f64], p: &[f64]) -> Vec<Peak> {
    let n = p.len();
    let mut peaks = Vec::new();
    for i in 0..n {
        let left_ok = i == 0 || p[i] > p[i - 1];
        let right_ok = i + 1 == n || p[i] > p[i + 1];
        if n < 2 || !(left_ok && right_ok) {
            continue;
        }
        let mut left_min = p[i];
        for j in (0..i).rev() {
            if p[j] > p[i] {
                break;
            }
            left_min = left_min.min(p[j]);
        }
        let mut right_min = p[i];
        for &v in &p[i + 1..] {
            if v > p[i] {
                break;
            }
            right_min = right_min.min(v);
        }
        peaks.push(Peak {
            angle_deg: angles[i],
            value: p[i],
            prominence: p[i] - left_min.max(right_min),
            index: i,
        });
    }
    peaks.sort_by(|a, b| b.prominence.total_cmp(&a.prominence).then(a.index.cmp(&b.index)));
    peaks
}

/// `P(theta) = a^H a / (a^H Vn Vn^H a)` on a uniform grid.
pub fn pseudospectrum(
    noise: &NoiseSubspace,
    geometry: &ArrayGeometry,
    wavelength: f64,
    grid_step_deg: f64,
    domain_deg: (f64, f64),
) -> Result<Pseudospectrum> {
    if geometry.len() != noise.size {
        return Err(Error::ShapeMismatch(format!(
            "geometry has {} elements, subspace {}",
            geometry.len(),
            noise.size
        )));
    }
    let angles = grid(grid_step_deg, domain_deg)?;
    let power: Vec<f64> = angles
        .iter()
        .map(|&theta| {
            let a = steering_vector(geometry, theta, wavelength);
            let num: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            let den: f64 = noise
                .columns
                .iter()
                .map(|v| v.iter().zip(&a).map(|(vi, ai)| vi.conj() * ai).sum::<Complex64>().norm_sqr())
                .sum();
            num / den.max(1e-12 * num)
        })
        .collect();
    let peaks = find_peaks(&angles, &power);
    Ok(Pseudospectrum {
        angles_deg: angles,
        power,
        peaks,
    })
}

impl Pseudospectrum {
    pub fn median(&self) -> f64 {
        let mut v = self.power.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        if n == 0 {
            0.0
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Two-column `angle_deg power` table.
    pub fn write_table(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# angle_deg power")?;
        for (a, p) in self.angles_deg.iter().zip(&self.power) {
            writeln!(w, "{a:.6} {p:.16e}")?;
        }
        Ok(())
    }
}

/// All `theta'` in [-90, 90] with `sin theta' = sin theta + k lambda / d`.
///
/// Uses the spacing of the first element pair.
pub fn grating_lobe_set(doa_deg: f64, geometry: &ArrayGeometry, wavelength: f64) -> Vec<f64> {
    let x = geometry.element_x();
    let d = x[1] - x[0];
    let step = wavelength / d;
    let s = doa_deg.to_radians().sin();
    let k_lo = ((-1.0 - s) / step).floor() as i64;
    let k_hi = ((1.0 - s) / step).ceil() as i64;
    let mut out: Vec<f64> = (k_lo..=k_hi)
        .filter_map(|k| {
            let v = s + k as f64 * step;
            if k == 0 {
                return Some(doa_deg);
            }
            if v.abs() <= 1.0 + 1e-12 {
                Some(v.clamp(-1.0, 1.0).asin().to_degrees())
            } else {
                None
            }
        })
        .collect();
    out.sort_by(|a, b| a.total_cmp(b));
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    out
}

/// Detection, covariance, noise subspace, pseudospectrum and peak pick.
///
/// Estimation failures (no echo, degenerate spectrum, no prominent peak)
/// yield a fallback estimate at 0 degrees; only malformed input errors.
pub fn estimate_doa_music(
    base: &ComplexBaseband,
    geometry: &ArrayGeometry,
    config: &SimConfig,
    opts: &MusicOptions,
) -> Result<DoaEstimate> {
    Ok(music_with_spectrum(base, geometry, config, opts)?.0)
}

/// As [`estimate_doa_music`], also returning the pseudospectrum when one was
/// computed.
pub fn music_with_spectrum(
    base: &ComplexBaseband,
    geometry: &ArrayGeometry,
    config: &SimConfig,
    opts: &MusicOptions,
) -> Result<(DoaEstimate, Option<Pseudospectrum>)> {
    if base.channels != geometry.len() {
        return Err(Error::ShapeMismatch(format!(
            "baseband has {} channels, geometry {}",
            base.channels,
            geometry.len()
        )));
    }
    base.check()?;
    let window = match opts.detector.detect(base) {
        Ok(w) => w,
        Err(Error::NoEchoFound) => return Ok((DoaEstimate::fallback(), None)),
        Err(e) => return Err(e),
    };
    let n = base.samples_per_channel;
    let want = opts.min_snapshots.max(geometry.len()).min(n);
    let (mut start, mut end) = (window.start, window.end);
    if end - start < want {
        let centre = window.centre();
        start = centre.saturating_sub(want / 2).min(n - want);
        end = start + want;
    }
    let snaps = SnapshotMatrix::from_window(base, start, end)?;
    let r = covariance(&snaps)?;
    let vn = noise_subspace(&r, 1)?;
    if vn.gap_ratio > opts.degeneracy_ratio {
        return Ok((DoaEstimate::fallback(), None));
    }
    let lambda = wavelength(config);
    let spec = pseudospectrum(&vn, geometry, lambda, opts.grid_step_deg, opts.domain_deg)?;
    let floor = opts.prominence_factor * spec.median();
    let estimate = match spec.peaks.first() {
        Some(peak) if peak.prominence >= floor && peak.prominence > 0.0 => DoaEstimate {
            angle_deg: peak.angle_deg,
            status: DoaStatus::Converged,
            ambiguity: grating_lobe_set(peak.angle_deg, geometry, lambda),
            prominence: peak.prominence,
        },
        _ => DoaEstimate::fallback(),
    };
    Ok((estimate, Some(spec)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LAMBDA: f64 = 340.0 / 51_200.0;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rank_one(geometry: &ArrayGeometry, theta: f64, k: usize) -> SnapshotMatrix {
        let a = steering_vector(geometry, theta, LAMBDA);
        let m = a.len();
        let mut data = Vec::with_capacity(m * k);
        for ai in &a {
            for t in 0..k {
                data.push(ai * Complex64::from_polar(1.0, 0.37 * t as f64));
            }
        }
        SnapshotMatrix::new(m, k, data).unwrap()
    }

    #[test]
    fn covariance_of_repeated_snapshot() {
        let s = SnapshotMatrix::new(2, 3, vec![c(1.0, 0.0); 3].into_iter().chain(vec![c(0.0, -1.0); 3]).collect()).unwrap();
        let r = covariance(&s).unwrap();
        let expected = [c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)];
        for (a, b) in r.data.iter().zip(expected) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn covariance_zero_and_too_few() {
        let s = SnapshotMatrix::new(2, 4, vec![c(0.0, 0.0); 8]).unwrap();
        assert!(covariance(&s).unwrap().data.iter().all(|z| z.norm() == 0.0));
        let s = SnapshotMatrix::new(2, 1, vec![c(1.0, 0.0); 2]).unwrap();
        assert!(matches!(covariance(&s), Err(Error::TooFewSnapshots { .. })));
    }

    #[test]
    fn noise_subspace_examples() {
        let r = CovarianceMatrix::new(2, vec![c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)]).unwrap();
        let v = noise_subspace(&r, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v.columns[0][0] - c(h, 0.0)).norm() < 1e-12);
        assert!((v.columns[0][1] - c(0.0, h)).norm() < 1e-12);
        assert!(v.gap_ratio < 1e-12);

        let r = CovarianceMatrix::new(2, vec![c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(noise_subspace(&r, 1).unwrap().columns[0], vec![c(0.0, 0.0), c(1.0, 0.0)]);

        let r = CovarianceMatrix::new(2, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        let v = noise_subspace(&r, 1).unwrap();
        assert_eq!(v.gap_ratio, 1.0);
        assert_eq!(v.columns[0], vec![c(0.0, 0.0), c(1.0, 0.0)]);
    }

    #[test]
    fn general_solver_matches_closed_form() {
        let g = ArrayGeometry::pair_in_wavelengths(0.5, LAMBDA).unwrap();
        let r = covariance(&rank_one(&g, 17.0, 32)).unwrap();
        let a = eigen_2x2(&r);
        let b = eigen_general(&r, 1);
        for (x, y) in a.columns[0].iter().zip(&b.columns[0]) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn three_element_array_finds_source() {
        let g = ArrayGeometry::new(vec![0.0, 0.5 * LAMBDA, LAMBDA]).unwrap();
        let r = covariance(&rank_one(&g, -23.0, 40)).unwrap();
        let vn = noise_subspace(&r, 1).unwrap();
        assert_eq!(vn.columns.len(), 2);
        let p = pseudospectrum(&vn, &g, LAMBDA, 0.25, (-90.0, 90.0)).unwrap();
        assert!((p.peaks[0].angle_deg + 23.0).abs() <= 0.25);
    }

    #[test]
    fn pseudospectrum_peak_at_thirty() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let vn = NoiseSubspace {
            size: 2,
            columns: vec![vec![c(h, 0.0), c(0.0, h)]],
            eigenvalues: vec![0.0, 2.0],
            gap_ratio: 0.0,
        };
        let g = ArrayGeometry::pair_in_wavelengths(0.5, LAMBDA).unwrap();
        let p = pseudospectrum(&vn, &g, LAMBDA, 0.25, (-90.0, 90.0)).unwrap();
        let imax = (0..p.power.len()).max_by(|&i, &j| p.power[i].total_cmp(&p.power[j])).unwrap();
        assert!((p.angles_deg[imax] - 30.0).abs() <= 0.25);
        // a(-90) = [1, -1]: |v^H a|^2 = |h - i h|^2 ... = 1, so P = 2.
        assert!((p.power[0] - 2.0).abs() < 1e-9);
        assert!(p.power[0] < 1e-6 * p.power[imax]);
    }

    #[test]
    fn grating_lobe_examples() {
        let half = ArrayGeometry::pair_in_wavelengths(0.5, LAMBDA).unwrap();
        assert_eq!(grating_lobe_set(30.0, &half, LAMBDA), vec![30.0]);
        let wide = ArrayGeometry::pair_in_wavelengths(1.5, LAMBDA).unwrap();
        let set = grating_lobe_set(30.0, &wide, LAMBDA);
        let expected = [(0.5f64 - 4.0 / 3.0).asin(), (0.5f64 - 2.0 / 3.0).asin()].map(f64::to_degrees);
        assert_eq!(set.len(), 3);
        assert!((set[0] - expected[0]).abs() < 1e-9 && (set[0] + 56.443).abs() < 1e-3);
        assert!((set[1] - expected[1]).abs() < 1e-9 && (set[1] + 9.594).abs() < 1e-3);
        assert_eq!(set[2], 30.0);
        let set = grating_lobe_set(0.0, &wide, LAMBDA);
        assert_eq!(set.len(), 3);
        assert!((set[0] + 41.810).abs() < 1e-3 && set[1] == 0.0 && (set[2] - 41.810).abs() < 1e-3);
    }

    #[test]
    fn peaks_have_prominence() {
        let angles: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let p = [0.0, 3.0, 1.0, 5.0, 2.0, 2.5, 0.0];
        let peaks = find_peaks(&angles, &p);
        assert_eq!(peaks[0].index, 3);
        assert_eq!(peaks[0].prominence, 5.0);
        let second = peaks.iter().find(|k| k.index == 1).unwrap();
        assert_eq!(second.prominence, 2.0);
        let third = peaks.iter().find(|k| k.index == 5).unwrap();
        assert_eq!(third.prominence, 0.5);
    }
}
