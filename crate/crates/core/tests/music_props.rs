use echodoa::music::{
    covariance, estimate_doa_music, grating_lobe_set, noise_subspace, pseudospectrum, MusicOptions, SnapshotMatrix,
};
use echodoa::signal::{
    add_awgn, steering_vector, synthesize_echo, to_baseband, wavelength, ArrayGeometry, SimConfig, Snr,
    SourceScenario,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn lambda() -> f64 {
    wavelength(&SimConfig::default())
}

fn pair(spacing: f64) -> ArrayGeometry {
    ArrayGeometry::pair_in_wavelengths(spacing, lambda()).unwrap()
}

/// Snapshots `s_k a(theta)` for a single noiseless source.
fn rank_one(g: &ArrayGeometry, theta: f64, amps: &[(f64, f64)]) -> SnapshotMatrix {
    let a = steering_vector(g, theta, lambda());
    let k = amps.len();
    let mut data = vec![Complex64::new(0.0, 0.0); g.len() * k];
    for (m, am) in a.iter().enumerate() {
        for (i, &(re, im)) in amps.iter().enumerate() {
            data[m * k + i] = am * Complex64::new(re, im);
        }
    }
    SnapshotMatrix::new(g.len(), k, data).unwrap()
}

fn amplitudes() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4..40)
        .prop_filter("non-zero source", |v| v.iter().map(|(a, b)| a * a + b * b).sum::<f64>() > 1e-3)
}

proptest! {
    #[test]
    fn covariance_is_hermitian_psd(
        m in 2usize..5,
        extra in 0usize..30,
        seed in prop::collection::vec(-10.0f64..10.0, 300),
    ) {
        let k = m + extra;
        let data: Vec<Complex64> = (0..m * k).map(|i| Complex64::new(seed[(2 * i) % 300], seed[(2 * i + 1) % 300])).collect();
        let r = covariance(&SnapshotMatrix::new(m, k, data).unwrap()).unwrap();
        let scale = r.trace().max(f64::MIN_POSITIVE);
        for i in 0..m {
            for j in 0..m {
                prop_assert!((r.get(i, j) - r.get(j, i).conj()).norm() <= 1e-12 * scale);
            }
        }
        let ns = noise_subspace(&r, 1).unwrap();
        prop_assert!(ns.eigenvalues.iter().all(|&l| l >= -1e-12 * scale));
        for (a, col_a) in ns.columns.iter().enumerate() {
            for (b, col_b) in ns.columns.iter().enumerate() {
                let dot: Complex64 = col_a.iter().zip(col_b).map(|(x, y)| x.conj() * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn noiseless_source_is_orthogonal_to_noise_subspace(
        theta in -85.0f64..85.0,
        spacing in 0.1f64..0.5,
        amps in amplitudes(),
    ) {
        let g = pair(spacing);
        let r = covariance(&rank_one(&g, theta, &amps)).unwrap();
        let ns = noise_subspace(&r, 1).unwrap();
        prop_assert!(ns.gap_ratio < 1e-10);
        let a = steering_vector(&g, theta, lambda());
        for col in &ns.columns {
            let p: Complex64 = a.iter().zip(col).map(|(x, y)| x.conj() * y).sum();
            prop_assert!(p.norm() < 1e-6);
        }
    }

    #[test]
    fn noiseless_peak_within_one_grid_step(
        theta in -85.0f64..85.0,
        spacing in 0.1f64..=0.5,
        amps in amplitudes(),
    ) {
        let g = pair(spacing);
        let ns = noise_subspace(&covariance(&rank_one(&g, theta, &amps)).unwrap(), 1).unwrap();
        let ps = pseudospectrum(&ns, &g, lambda(), 0.25, (-90.0, 90.0)).unwrap();
        prop_assert!((ps.peaks[0].angle_deg - theta).abs() <= 0.25, "peak {} for {theta}", ps.peaks[0].angle_deg);
    }

    #[test]
    fn mirrored_source_mirrors_pseudospectrum(
        theta in -80.0f64..80.0,
        spacing in 0.1f64..1.6,
        amps in amplitudes(),
    ) {
        let g = pair(spacing);
        let s = rank_one(&g, theta, &amps);
        let mirrored = SnapshotMatrix::new(s.channels, s.snapshots, s.data.iter().map(|v| v.conj()).collect()).unwrap();
        let spectrum = |s: &SnapshotMatrix| {
            let ns = noise_subspace(&covariance(s).unwrap(), 1).unwrap();
            pseudospectrum(&ns, &g, lambda(), 0.25, (-90.0, 90.0)).unwrap()
        };
        let (p, q) = (spectrum(&s), spectrum(&mirrored));
        let n = p.power.len();
        for i in 0..n {
            prop_assert_eq!(p.angles_deg[i], -q.angles_deg[n - 1 - i]);
            let (x, y) = (p.power[i], q.power[n - 1 - i]);
            prop_assert!((x - y).abs() <= 1e-9 * x.max(y), "{x} vs {y} at {}", p.angles_deg[i]);
        }
    }

    #[test]
    fn grating_lobe_members_share_their_set(theta in -89.0f64..89.0, spacing in 0.1f64..3.0) {
        let g = pair(spacing);
        let set = grating_lobe_set(theta, &g, lambda());
        prop_assert!(set.iter().any(|&v| (v - theta).abs() < 1e-9));
        prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
        if spacing <= 0.5 {
            prop_assert_eq!(set.len(), 1);
        }
        for &member in &set {
            let again = grating_lobe_set(member, &g, lambda());
            prop_assert_eq!(again.len(), set.len(), "{:?} vs {:?}", again, set);
            for (a, b) in again.iter().zip(&set) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimates_respect_status_invariants(
        theta in -60.0f64..60.0,
        snr in -30.0f64..20.0,
        range in 0.5f64..1.25,
        spacing in prop::sample::select(vec![0.5, 1.5]),
        seed in any::<u64>(),
    ) {
        let cfg = SimConfig::default();
        let g = pair(spacing);
        let clean = synthesize_echo(&SourceScenario::new(theta, range, Snr::Db(snr)), &g, &cfg).unwrap();
        let base = to_baseband(&add_awgn(&clean, Snr::Db(snr), seed).unwrap(), &cfg).unwrap();
        let e = estimate_doa_music(&base, &g, &cfg, &MusicOptions::default()).unwrap();
        if e.is_fallback() {
            prop_assert_eq!(e.angle_deg, 0.0);
        }
        prop_assert!(e.ambiguity.contains(&e.angle_deg));
        prop_assert!(e.angle_deg.abs() <= 90.0);
    }
}

/// Every integer angle in the open domain, for spacings up to half a
/// wavelength.
#[test]
fn noiseless_sweep_over_the_domain() {
    let amps: Vec<(f64, f64)> = (0..32).map(|k| ((k as f64 * 0.7).cos(), (k as f64 * 1.3).sin())).collect();
    for spacing in [0.25, 0.4, 0.5] {
        let g = pair(spacing);
        for theta in -89..=89 {
            let theta = theta as f64;
            let ns = noise_subspace(&covariance(&rank_one(&g, theta, &amps)).unwrap(), 1).unwrap();
            let ps = pseudospectrum(&ns, &g, lambda(), 0.25, (-90.0, 90.0)).unwrap();
            assert!((ps.peaks[0].angle_deg - theta).abs() <= 0.25, "spacing {spacing}: {theta} -> {}", ps.peaks[0].angle_deg);
        }
    }
}
