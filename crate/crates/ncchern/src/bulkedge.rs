//! Edge spectral flow on strip geometries and its comparison with the bulk
//! invariant: the gap-filling exponential unitary, its winding per unit
//! edge length on one boundary, a chirally conjugated edge projection, and
//! a delocalization probe for in-gap states.
//!
//! Strips are periodic along axis 0 and open along the last axis; the
//! winding localizes on one open face by restricting the trace to the
//! corresponding half of the strip.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::invariants::{InvariantResult, InvariantValue, Method, TraceWindow};
use crate::lattice::DisorderSample;
use crate::spectral::{SpectralData, SwitchFunction, SwitchKind};
use crate::{C64, CMat};

/// Exponentiated switch of a strip Hamiltonian, `U_e = exp(2πi f(H))`.
/// Away from the switch interval the unitary is the identity, so all
/// winding comes from states crossing the bulk gap.
#[derive(Debug, Clone)]
pub struct EdgeUnitary {
    pub matrix: CMat,
    pub switch: SwitchFunction,
}

pub fn edge_unitary(sd: &SpectralData, switch: &SwitchFunction) -> Result<EdgeUnitary> {
    if switch.kind != SwitchKind::Exp {
        return Err(Error::Config(
            "edge unitary needs the increasing 0→1 switch profile".into(),
        ));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let matrix = sd.matrix_function(|lam| {
        let f = switch.eval(lam);
        C64::new(0.0, two_pi * f).exp()
    });
    Ok(EdgeUnitary { matrix, switch: *switch })
}

/// Which open face of the strip the winding trace probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSide {
    Min,
    Max,
}

fn require_strip(geom: &Geometry) -> Result<()> {
    if geom.d != 2 {
        return Err(Error::Geometry(format!("edge formulas need d = 2, got d = {}", geom.d)));
    }
    if !geom.is_periodic(0) || geom.is_periodic(1) {
        return Err(Error::Geometry(
            "edge formulas need a strip: periodic along axis 0, open along axis 1".into(),
        ));
    }
    Ok(())
}

/// Winding of the edge unitary per unit edge length on one open face:
/// the diagonal of `U*[X₀, U]` summed over the chosen half of the strip and
/// a central window along the periodic axis, divided by the window length.
pub fn edge_winding(
    u: &EdgeUnitary,
    geom: &Geometry,
    w: &TraceWindow,
    side: EdgeSide,
) -> Result<InvariantResult> {
    require_strip(geom)?;
    let n = u.matrix.nrows();
    if n != geom.dim() {
        return Err(Error::Geometry("unitary does not match geometry".into()));
    }
    if !(0.0 < w.core_fraction && w.core_fraction <= 1.0) {
        return Err(Error::Geometry(format!(
            "core fraction {} outside (0, 1]",
            w.core_fraction
        )));
    }
    let half_len = 0.5 * w.core_fraction * geom.length(0);
    let q = geom.q;
    let n1 = geom.n[1];
    let c0_of: Vec<usize> = (0..n).map(|i| geom.site_coords(i / q)[0]).collect();
    // Count distinct periodic-axis columns inside the window.
    let mut n_window = 0usize;
    for c0 in 0..geom.n[0] {
        if geom.position_of(0, c0).abs() <= half_len + 1e-12 {
            n_window += 1;
        }
    }
    if n_window == 0 {
        return Err(Error::Geometry("edge window contains no sites".into()));
    }
    let in_half = |c1: usize| match side {
        EdgeSide::Min => c1 < n1 / 2,
        EdgeSide::Max => c1 >= n1 - n1 / 2,
    };
    let mut total = 0.0f64;
    for site in 0..geom.sites() {
        let coords = geom.site_coords(site);
        if !in_half(coords[1]) || geom.position_of(0, coords[0]).abs() > half_len + 1e-12 {
            continue;
        }
        for sub in 0..q {
            let i = site * q + sub;
            // (U*[X₀,U])_{ii} = Σ_y |U_{yi}|² (x₀(y) − x₀(i)).
            let mut acc = 0.0f64;
            for y in 0..n {
                let w2 = u.matrix[(y, i)].norm_sqr();
                if w2 > 0.0 {
                    acc += w2 * geom.displacement(0, c0_of[y], c0_of[i]);
                }
            }
            total += acc;
        }
    }
    let value = total / (n_window as f64 * geom.a);
    let mut res = InvariantResult::single(Method::EdgeWinding, InvariantValue::Real(value), *w);
    res.extras
        .insert("switch_lo".into(), u.switch.lo);
    res.extras
        .insert("switch_hi".into(), u.switch.hi);
    res.extras
        .insert("edge_window_sites".into(), n_window as f64);
    Ok(res)
}

/// Conjugate the chiral projection by the half-rotation generated by the
/// odd switch: `exp(iA) Π exp(−iA)` with `A = (π/2) f_ind(H)` and
/// `Π = (1 + R_c)/2`. With the switch supported inside a clean gap the
/// result is again a projection interpolating between the chiral sectors.
pub fn chiral_edge_projection(
    sd: &SpectralData,
    r_c: &CMat,
    switch: &SwitchFunction,
) -> Result<CMat> {
    if switch.kind != SwitchKind::Ind {
        return Err(Error::Config(
            "chiral conjugation needs the odd −1→1 switch profile".into(),
        ));
    }
    let n = sd.dim();
    if r_c.nrows() != n || r_c.ncols() != n {
        return Err(Error::Geometry("involution does not match spectral data".into()));
    }
    let half_pi = 0.5 * std::f64::consts::PI;
    let rot = sd.matrix_function(|lam| C64::new(0.0, half_pi * switch.eval(lam)).exp());
    let mut pi_half = r_c.mapv(|z| 0.5 * z);
    for i in 0..n {
        pi_half[(i, i)] += C64::new(0.5, 0.0);
    }
    let rot_h = rot.t().mapv(|z| z.conj());
    Ok(rot.dot(&pi_half).dot(&rot_h))
}

/// Side-by-side bulk and edge values with their mismatch under the sign
/// convention pinned by the clean magnetic strip: the winding on the `Max`
/// face cancels the bulk invariant, `bulk + edge ≈ 0`.
#[derive(Debug, Clone, Serialize)]
pub struct BulkEdgeReport {
    pub bulk: f64,
    pub edge: f64,
    pub side: EdgeSide,
    pub switch_lo: f64,
    pub switch_hi: f64,
    pub discrepancy: f64,
}

pub fn bulk_edge_check(bulk: f64, edge: &InvariantResult, side: EdgeSide) -> BulkEdgeReport {
    let edge_value = edge.value.as_real();
    BulkEdgeReport {
        bulk,
        edge: edge_value,
        side,
        switch_lo: edge.extras.get("switch_lo").copied().unwrap_or(f64::NAN),
        switch_hi: edge.extras.get("switch_hi").copied().unwrap_or(f64::NAN),
        discrepancy: (bulk + edge_value).abs(),
    }
}

/// Restrict a disorder realization to a boundary layer: the potential is
/// kept on sites within `layer` rows of the probed face and zeroed
/// elsewhere, so any induced in-gap states are attached to that edge.
pub fn boundary_layer_sample(
    sample: &DisorderSample,
    geom: &Geometry,
    side: EdgeSide,
    layer: usize,
) -> Result<DisorderSample> {
    require_strip(geom)?;
    if sample.potential_values.len() != geom.sites() {
        return Err(Error::Geometry("sample does not match geometry".into()));
    }
    let n1 = geom.n[1];
    let keep = |c1: usize| match side {
        EdgeSide::Min => c1 < layer,
        EdgeSide::Max => c1 + layer >= n1,
    };
    let mut values = sample.potential_values.clone();
    for (site, v) in values.iter_mut().enumerate() {
        if !keep(geom.site_coords(site)[1]) {
            *v = 0.0;
        }
    }
    Ok(DisorderSample { omega_id: sample.omega_id, potential_values: values })
}

/// Extension statistics of in-gap strip states along the edge.
#[derive(Debug, Clone, Serialize)]
pub struct EdgeProbeReport {
    pub n_in_gap: usize,
    /// Participation ratio of the periodic-axis marginal, as a fraction of
    /// the edge length; O(1) for states extended along the edge, O(1/n₀)
    /// for localized ones.
    pub mean_pr_fraction: f64,
    pub min_pr_fraction: f64,
    /// Mean probability mass within `layer` rows of the probed face.
    pub mean_edge_mass: f64,
    pub side: EdgeSide,
    pub layer: usize,
}

/// Measure how extended the in-gap eigenstates are along the periodic axis
/// and how strongly they attach to the probed face.
pub fn edge_delocalization_probe(
    sd: &SpectralData,
    geom: &Geometry,
    gap: (f64, f64),
    side: EdgeSide,
    layer: usize,
) -> Result<EdgeProbeReport> {
    require_strip(geom)?;
    if sd.dim() != geom.dim() {
        return Err(Error::Geometry("spectral data does not match geometry".into()));
    }
    if !(gap.0 < gap.1) {
        return Err(Error::Config(format!("empty gap window [{}, {}]", gap.0, gap.1)));
    }
    let n0 = geom.n[0];
    let n1 = geom.n[1];
    let q = geom.q;
    let near_edge = |c1: usize| match side {
        EdgeSide::Min => c1 < layer,
        EdgeSide::Max => c1 + layer >= n1,
    };
    let mut n_in_gap = 0usize;
    let mut pr_sum = 0.0f64;
    let mut pr_min = f64::INFINITY;
    let mut mass_sum = 0.0f64;
    for (k, &lam) in sd.eigenvalues.iter().enumerate() {
        if !(gap.0 < lam && lam < gap.1) {
            continue;
        }
        n_in_gap += 1;
        let mut marginal = vec![0.0f64; n0];
        let mut edge_mass = 0.0f64;
        for site in 0..geom.sites() {
            let coords = geom.site_coords(site);
            let mut w = 0.0;
            for sub in 0..q {
                w += sd.eigenvectors[(site * q + sub, k)].norm_sqr();
            }
            marginal[coords[0]] += w;
            if near_edge(coords[1]) {
                edge_mass += w;
            }
        }
        let norm: f64 = marginal.iter().sum();
        let sq: f64 = marginal.iter().map(|v| v * v).sum();
        let pr = if sq > 0.0 { norm * norm / sq } else { 0.0 };
        let frac = pr / n0 as f64;
        pr_sum += frac;
        pr_min = pr_min.min(frac);
        mass_sum += edge_mass / norm.max(1e-300);
    }
    if n_in_gap == 0 {
        return Ok(EdgeProbeReport {
            n_in_gap: 0,
            mean_pr_fraction: 0.0,
            min_pr_fraction: 0.0,
            mean_edge_mass: 0.0,
            side,
            layer,
        });
    }
    Ok(EdgeProbeReport {
        n_in_gap,
        mean_pr_fraction: pr_sum / n_in_gap as f64,
        min_pr_fraction: pr_min,
        mean_edge_mass: mass_sum / n_in_gap as f64,
        side,
        layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Boundary;
    use crate::spectral::diagonalize_matrix;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use num_complex::Complex64;

    fn strip(n0: usize, n1: usize) -> Geometry {
        Geometry::new(2, vec![n0, n1], 1.0, 1, Boundary::DirichletLastAxis).unwrap()
    }

    #[test]
    fn edge_unitary_is_identity_off_the_switch() {
        let g = strip(6, 4);
        let mut h: CMat = Array2::zeros((g.dim(), g.dim()));
        for i in 0..g.dim() {
            // Spectrum far below and far above the switch interval.
            let v = if i % 2 == 0 { -3.0 } else { 5.0 };
            h[(i, i)] = Complex64::new(v, 0.0);
        }
        let sd = diagonalize_matrix(&h, None).unwrap();
        let sw = SwitchFunction::new(SwitchKind::Exp, -1.0, 1.0).unwrap();
        let u = edge_unitary(&sd, &sw).unwrap();
        for i in 0..g.dim() {
            for j in 0..g.dim() {
                let expect = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                assert!((u.matrix[(i, j)] - expect).norm() < 1e-10);
            }
        }
        let w = TraceWindow { core_fraction: 1.0, margin: 0 };
        let res = edge_winding(&u, &g, &w, EdgeSide::Max).unwrap();
        assert_abs_diff_eq!(res.value.as_real(), 0.0, epsilon = 1e-10);
        let res = edge_winding(&u, &g, &w, EdgeSide::Min).unwrap();
        assert_abs_diff_eq!(res.value.as_real(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn edge_unitary_rejects_wrong_switch_kind() {
        let sd = diagonalize_matrix(&Array2::zeros((4, 4)), None).unwrap();
        let sw = SwitchFunction::new(SwitchKind::Ind, -1.0, 1.0).unwrap();
        assert!(edge_unitary(&sd, &sw).is_err());
        let sw = SwitchFunction::new(SwitchKind::Exp, -1.0, 1.0).unwrap();
        let r_c: CMat = Array2::eye(4).mapv(|x: f64| Complex64::new(x, 0.0));
        assert!(chiral_edge_projection(&sd, &r_c, &sw).is_err());
    }

    #[test]
    fn winding_requires_strip_geometry() {
        let torus = Geometry::new(2, vec![6, 4], 1.0, 1, Boundary::MagneticPeriodic).unwrap();
        let sd = diagonalize_matrix(&Array2::zeros((24, 24)), None).unwrap();
        let sw = SwitchFunction::new(SwitchKind::Exp, -1.0, 1.0).unwrap();
        let u = edge_unitary(&sd, &sw).unwrap();
        let w = TraceWindow { core_fraction: 1.0, margin: 0 };
        assert!(edge_winding(&u, &torus, &w, EdgeSide::Max).is_err());
    }

    /// A hand-built winding-one unitary: shift along the periodic axis on
    /// the top row of the strip, identity elsewhere.
    #[test]
    fn shift_on_one_face_winds_there_and_nowhere_else() {
        let n0 = 8usize;
        let n1 = 4usize;
        let g = strip(n0, n1);
        let mut m: CMat = Array2::zeros((g.dim(), g.dim()));
        for site in 0..g.sites() {
            let coords = g.site_coords(site);
            if coords[1] == n1 - 1 {
                let target = g.site_index(&[(coords[0] + 1) % n0, coords[1]]);
                m[(target, site)] = Complex64::new(1.0, 0.0);
            } else {
                m[(site, site)] = Complex64::new(1.0, 0.0);
            }
        }
        let sw = SwitchFunction::new(SwitchKind::Exp, -1.0, 1.0).unwrap();
        let u = EdgeUnitary { matrix: m, switch: sw };
        let w = TraceWindow { core_fraction: 1.0, margin: 0 };
        let top = edge_winding(&u, &g, &w, EdgeSide::Max).unwrap();
        assert_abs_diff_eq!(top.value.as_real(), 1.0, epsilon = 1e-12);
        let bottom = edge_winding(&u, &g, &w, EdgeSide::Min).unwrap();
        assert_abs_diff_eq!(bottom.value.as_real(), 0.0, epsilon = 1e-12);
        // Halving the window along the edge leaves the winding untouched.
        let w2 = TraceWindow { core_fraction: 0.5, margin: 0 };
        let half = edge_winding(&u, &g, &w2, EdgeSide::Max).unwrap();
        assert_abs_diff_eq!(half.value.as_real(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chiral_conjugation_preserves_projections() {
        // Chiral block Hamiltonian with a clean gap at zero.
        let m = 6usize;
        let n = 2 * m;
        let mut h: CMat = Array2::zeros((n, n));
        for i in 0..m {
            h[(i, m + i)] = Complex64::new(1.5, 0.3);
            h[(m + i, i)] = Complex64::new(1.5, -0.3);
        }
        let mut r: CMat = Array2::zeros((n, n));
        for i in 0..m {
            r[(i, i)] = Complex64::new(1.0, 0.0);
            r[(m + i, m + i)] = Complex64::new(-1.0, 0.0);
        }
        let sd = diagonalize_matrix(&h, None).unwrap();
        let sw = SwitchFunction::new(SwitchKind::Ind, -0.5, 0.5).unwrap();
        let q = chiral_edge_projection(&sd, &r, &sw).unwrap();
        let q2 = q.dot(&q);
        let mut idem = 0.0f64;
        let mut herm = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                idem = idem.max((q2[(i, j)] - q[(i, j)]).norm());
                herm = herm.max((q[(i, j)] - q[(j, i)].conj()).norm());
            }
        }
        assert!(idem < 1e-10, "not idempotent: {idem}");
        assert!(herm < 1e-10, "not hermitian: {herm}");
    }

    #[test]
    fn boundary_layer_restriction() {
        let g = strip(4, 6);
        let sample = DisorderSample {
            omega_id: 7,
            potential_values: (0..g.sites()).map(|s| s as f64 + 1.0).collect(),
        };
        let top = boundary_layer_sample(&sample, &g, EdgeSide::Max, 2).unwrap();
        let bottom = boundary_layer_sample(&sample, &g, EdgeSide::Min, 2).unwrap();
        for site in 0..g.sites() {
            let c1 = g.site_coords(site)[1];
            if c1 >= 4 {
                assert_eq!(top.potential_values[site], sample.potential_values[site]);
                assert_eq!(bottom.potential_values[site], 0.0);
            } else if c1 < 2 {
                assert_eq!(top.potential_values[site], 0.0);
                assert_eq!(bottom.potential_values[site], sample.potential_values[site]);
            } else {
                assert_eq!(top.potential_values[site], 0.0);
                assert_eq!(bottom.potential_values[site], 0.0);
            }
        }
    }

    #[test]
    fn probe_distinguishes_extended_and_localized_gap_states() {
        let n0 = 10usize;
        let n1 = 4usize;
        let g = strip(n0, n1);
        let dim = g.dim();
        // Diagonal background at 10 with two in-gap states: a uniform state
        // along the top row at 0.3 (rank-one correction) and a single-site
        // state at 0.5 on the bottom row.
        let mut psi: Vec<C64> = vec![Complex64::new(0.0, 0.0); dim];
        for c0 in 0..n0 {
            let site = g.site_index(&[c0, n1 - 1]);
            psi[site] = Complex64::new(1.0 / (n0 as f64).sqrt(), 0.0);
        }
        let mut h: CMat = Array2::zeros((dim, dim));
        for i in 0..dim {
            h[(i, i)] = Complex64::new(10.0, 0.0);
        }
        for i in 0..dim {
            for j in 0..dim {
                h[(i, j)] += Complex64::new(-9.7, 0.0) * psi[i] * psi[j].conj();
            }
        }
        // Localized in-gap state on a single bottom-row site.
        let loc = g.site_index(&[0, 0]);
        h[(loc, loc)] = Complex64::new(0.5, 0.0);
        let sd = diagonalize_matrix(&h, None).unwrap();
        let rep = edge_delocalization_probe(&sd, &g, (0.0, 1.0), EdgeSide::Max, 1).unwrap();
        assert_eq!(rep.n_in_gap, 2);
        // One state has PR fraction 1, the other 1/n0.
        assert!(rep.min_pr_fraction < 0.2, "min {}", rep.min_pr_fraction);
        assert!(rep.mean_pr_fraction > 0.5, "mean {}", rep.mean_pr_fraction);
        let empty = edge_delocalization_probe(&sd, &g, (5.0, 6.0), EdgeSide::Max, 1).unwrap();
        assert_eq!(empty.n_in_gap, 0);
    }
}
