//! Integration checks for the lattice builders and the spectral pipeline:
//! flux quantization, magnetic translation covariance, translation and
//! gauge-center stability of the integer pairing, cache round trips, and
//! the strip/torus relation.

use ndarray::Array2;
use num_complex::Complex64;

use ncchern::geometry::Boundary;
use ncchern::invariants::fredholm_index;
use ncchern::lattice::{
    build_bulk_hamiltonian, build_edge_hamiltonian, hermiticity_defect, magnetic_translation,
    sample_disorder, translate_sample, ModelConfig, PotentialKind,
};
use ncchern::spectral::{diagonalize, diagonalize_matrix, fermi_projection};
use ncchern::CMat;

fn config(d: usize, n: f64, theta: f64, boundary: Boundary) -> ModelConfig {
    ModelConfig {
        d,
        box_length: n,
        box_lengths: None,
        spacing: 1.0,
        theta_12: theta,
        theta_13: 0.0,
        theta_23: 0.0,
        potential: PotentialKind::None,
        potential_amplitude: None,
        potential_period: None,
        disorder_amplitude: None,
        disorder_bump: None,
        disorder_density: None,
        disorder_seed: None,
        boundary,
        internal_dofs: 1,
    }
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn conj_t(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

#[test]
fn torus_requires_quantized_flux() {
    let good = config(2, 8.0, std::f64::consts::FRAC_PI_4, Boundary::MagneticPeriodic);
    good.validate().expect("theta L^2 / 2pi = 8 is an integer");

    let bad = config(2, 8.0, 0.3, Boundary::MagneticPeriodic);
    assert!(bad.validate().is_err(), "0.3 * 64 / 2pi is not an integer");

    let open = config(2, 8.0, 0.3, Boundary::DirichletAll);
    open.validate().expect("open boxes accept any flux density");
}

#[test]
fn magnetic_translations_commute_with_torus_hamiltonian() {
    let theta = 2.0 * std::f64::consts::PI * 2.0 / 64.0;
    let c = config(2, 8.0, theta, Boundary::MagneticPeriodic);
    let s = sample_disorder(&c, 0).unwrap();
    let h = build_bulk_hamiltonian(&c, &s).unwrap();
    let scale = max_abs(&h.matrix);

    // Two flux quanta through an 8-site torus: translations exist on the
    // four-site sublattice where N_phi * b / n is an integer.
    assert!(magnetic_translation(&c, &[0, 3]).is_err());
    let t1 = magnetic_translation(&c, &[4, 0]).unwrap();
    let t2 = magnetic_translation(&c, &[0, 4]).unwrap();

    let eye: CMat = Array2::eye(t1.nrows()).mapv(|x: f64| Complex64::new(x, 0.0));
    assert!(max_abs(&(conj_t(&t1).dot(&t1) - &eye)) < 1e-12);
    assert!(max_abs(&(conj_t(&t2).dot(&t2) - &eye)) < 1e-12);

    let commut1 = t1.dot(&h.matrix).dot(&conj_t(&t1)) - &h.matrix;
    let commut2 = t2.dot(&h.matrix).dot(&conj_t(&t2)) - &h.matrix;
    assert!(max_abs(&commut1) < 1e-12 * scale, "defect {}", max_abs(&commut1));
    assert!(max_abs(&commut2) < 1e-12 * scale, "defect {}", max_abs(&commut2));

    // Weyl algebra: translations along different axes commute up to the
    // enclosed-flux phase exp(i theta b1 x b2).
    let lhs = t1.dot(&t2);
    let rhs = t2.dot(&t1);
    let (imax, _) = lhs
        .indexed_iter()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .unwrap();
    let ratio = lhs[imax] / rhs[imax];
    assert!((ratio.norm() - 1.0).abs() < 1e-12);
    let twisted = rhs.mapv(|z| z * ratio);
    assert!(max_abs(&(lhs - twisted)) < 1e-12, "entrywise phase is not uniform");
    let expected = theta * 4.0 * 4.0;
    let dev = [expected, -expected]
        .iter()
        .map(|e| {
            let mut diff = (ratio.arg() - e) % (2.0 * std::f64::consts::PI);
            if diff > std::f64::consts::PI {
                diff -= 2.0 * std::f64::consts::PI;
            }
            if diff < -std::f64::consts::PI {
                diff += 2.0 * std::f64::consts::PI;
            }
            diff.abs()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(dev < 1e-12, "Weyl phase off by {dev}");
}

#[test]
fn hamiltonian_is_covariant_under_disorder_translation() {
    let theta = 2.0 * std::f64::consts::PI * 2.0 / 64.0;
    let mut c = config(2, 8.0, theta, Boundary::MagneticPeriodic);
    c.potential = PotentialKind::Random;
    c.disorder_amplitude = Some(1.5);
    let b = [4i64, 4];

    let s = sample_disorder(&c, 7).unwrap();
    let s_shifted = translate_sample(&c, &s, &b).unwrap();
    let h = build_bulk_hamiltonian(&c, &s).unwrap();
    let h_shifted = build_bulk_hamiltonian(&c, &s_shifted).unwrap();

    let t = magnetic_translation(&c, &b).unwrap();
    let conjugated = t.dot(&h.matrix).dot(&conj_t(&t));
    let scale = max_abs(&h.matrix);
    let fwd = max_abs(&(&conjugated - &h_shifted.matrix));
    let bwd = max_abs(&(conj_t(&t).dot(&h.matrix).dot(&t) - &h_shifted.matrix));
    assert!(
        fwd.min(bwd) < 1e-12 * scale,
        "covariance defect {} (forward) / {} (backward)",
        fwd,
        bwd
    );
}

#[test]
fn fredholm_index_survives_center_shift_and_disorder_translation() {
    // Fermi level from the periodic twin of the same box.
    let torus = config(2, 16.0, std::f64::consts::FRAC_PI_4, Boundary::MagneticPeriodic);
    let hs = build_bulk_hamiltonian(&torus, &sample_disorder(&torus, 0).unwrap()).unwrap();
    let sd = diagonalize_matrix(&hs.matrix, None).unwrap();
    let mut max_spacing = 0.0f64;
    for i in 0..sd.eigenvalues.len() - 1 {
        max_spacing = max_spacing.max(sd.eigenvalues[i + 1] - sd.eigenvalues[i]);
    }
    let (gap_lo, gap_hi) = (0..sd.eigenvalues.len() - 1)
        .map(|i| (sd.eigenvalues[i], sd.eigenvalues[i + 1]))
        .find(|(lo, hi)| hi - lo >= 0.25 * max_spacing)
        .expect("first magnetic gap");
    let mu = 0.5 * (gap_lo + gap_hi);

    let mut c = config(2, 16.0, std::f64::consts::FRAC_PI_4, Boundary::DirichletAll);
    c.potential = PotentialKind::Random;
    c.disorder_amplitude = Some(0.25 * (gap_hi - gap_lo));
    let geom = c.geometry().unwrap();

    let s = sample_disorder(&c, 5).unwrap();
    let h = build_bulk_hamiltonian(&c, &s).unwrap();
    let p = fermi_projection(&diagonalize_matrix(&h.matrix, None).unwrap(), mu);
    let at_origin = fredholm_index(&p, &geom, &[0.0, 0.0]).unwrap();
    let off_center = fredholm_index(&p, &geom, &[0.9, -1.4]).unwrap();
    assert_eq!(at_origin, off_center, "index moved with the phase center");
    assert_eq!(at_origin.abs(), 1);

    let s2 = translate_sample(&c, &s, &[4, -3]).unwrap();
    let h2 = build_bulk_hamiltonian(&c, &s2).unwrap();
    let p2 = fermi_projection(&diagonalize_matrix(&h2.matrix, None).unwrap(), mu);
    let translated = fredholm_index(&p2, &geom, &[0.0, 0.0]).unwrap();
    assert_eq!(at_origin, translated, "index moved with the disorder realization");
}

#[test]
fn spectral_cache_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(2, 8.0, std::f64::consts::FRAC_PI_4, Boundary::MagneticPeriodic);
    let h = build_bulk_hamiltonian(&c, &sample_disorder(&c, 0).unwrap()).unwrap();

    let first = diagonalize(&h, Some(dir.path())).unwrap();
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1, "one cache file per operator digest");

    let second = diagonalize(&h, Some(dir.path())).unwrap();
    assert_eq!(first.source_hash, second.source_hash);
    assert_eq!(first.eigenvalues, second.eigenvalues);
    assert_eq!(first.eigenvectors, second.eigenvectors);

    let fresh = diagonalize(&h, None).unwrap();
    assert_eq!(first.eigenvalues, fresh.eigenvalues);
}

#[test]
fn disorder_sampling_is_deterministic_and_seed_sensitive() {
    let mut c = config(2, 10.0, 0.0, Boundary::DirichletAll);
    c.potential = PotentialKind::Random;
    c.disorder_amplitude = Some(2.0);

    let a = sample_disorder(&c, 42).unwrap();
    let b = sample_disorder(&c, 42).unwrap();
    assert_eq!(a.potential_values, b.potential_values);
    assert_eq!(a.omega_id, 42);

    let other = sample_disorder(&c, 43).unwrap();
    assert_ne!(a.potential_values, other.potential_values);

    let w = c.disorder_amplitude.unwrap();
    assert!(a.potential_values.iter().all(|v| v.abs() <= w));
    assert!(a.potential_values.iter().any(|v| v.abs() > 0.0));

    let clean = config(2, 10.0, 0.0, Boundary::DirichletAll);
    let zeros = sample_disorder(&clean, 42).unwrap();
    assert!(zeros.potential_values.iter().all(|&v| v == 0.0));
}

#[test]
fn strip_is_torus_without_last_axis_wraparound() {
    let theta = 2.0 * std::f64::consts::PI * 2.0 / 64.0;
    let torus_cfg = config(2, 8.0, theta, Boundary::MagneticPeriodic);
    let strip_cfg = config(2, 8.0, theta, Boundary::DirichletLastAxis);
    let s = sample_disorder(&torus_cfg, 0).unwrap();

    let torus = build_bulk_hamiltonian(&torus_cfg, &s).unwrap();
    let strip = build_edge_hamiltonian(&strip_cfg, &s).unwrap();
    assert!(hermiticity_defect(&strip.matrix) < 1e-12);

    let mut removed = 0usize;
    for ((i, j), t) in torus.matrix.indexed_iter() {
        let e = strip.matrix[(i, j)];
        if (t - e).norm() > 0.0 {
            assert_eq!(e, Complex64::new(0.0, 0.0), "strip may only delete links");
            removed += 1;
        }
    }
    // Eight wraparound links along the open axis, two matrix entries each.
    assert_eq!(removed, 16);
}

#[test]
fn clean_box_diagonal_is_hopping_self_energy() {
    let c = config(2, 6.0, std::f64::consts::FRAC_PI_4, Boundary::DirichletAll);
    let h = build_bulk_hamiltonian(&c, &sample_disorder(&c, 0).unwrap()).unwrap();
    assert_eq!(h.gauge_center, vec![0.0, 0.0]);
    for i in 0..h.matrix.nrows() {
        let d = h.matrix[(i, i)];
        assert!((d.re - 4.0).abs() < 1e-12 && d.im.abs() < 1e-15);
    }
    assert!(hermiticity_defect(&h.matrix) < 1e-12);
}
