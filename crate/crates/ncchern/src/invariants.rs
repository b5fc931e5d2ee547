//! Index pairings of projections and unitaries with position operators:
//! trace per unit volume, cyclic even/odd Chern formulas, the Fredholm-index
//! and triple-region integer oracles, the mod-2 pairing for time-reversal
//! symmetric models, and the residue / Hilbert-Schmidt trace identities.
//!
//! All pairings act on an open centered box: there the commutator with the
//! position operator is exactly the displacement-weighted kernel,
//! `[X_j, A](x, y) = (x_j − y_j) A(x, y)`, and the infinite-volume trace is
//! approximated by a window trace over the core of the box. Periodic
//! geometries substitute the minimal-image displacement, which keeps the
//! formulas exactly translation covariant at the price of a surrogate
//! commutator; the acceptance pipeline uses the open box.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use ndarray_linalg::SVD;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::lattice::OperatorKernel;
use crate::spectral::{ChiralUnitary, Projection};
use crate::{C64, CMat};

/// Central trace window: the per-axis fraction of the box kept, plus extra
/// sites excluded next to open faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceWindow {
    pub core_fraction: f64,
    pub margin: usize,
}

impl Default for TraceWindow {
    fn default() -> Self {
        TraceWindow { core_fraction: 0.5, margin: 1 }
    }
}

/// How an invariant was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CyclicEven,
    CyclicOdd,
    FredholmKernel,
    KitaevTriple,
    Mod2,
    EdgeWinding,
}

/// Value of an invariant in its natural codomain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum InvariantValue {
    Integer(i64),
    Bit(u8),
    Real(f64),
    Complex { re: f64, im: f64 },
}

impl InvariantValue {
    /// Real representative (complex values report their real part).
    pub fn as_real(&self) -> f64 {
        match *self {
            InvariantValue::Integer(v) => v as f64,
            InvariantValue::Bit(b) => b as f64,
            InvariantValue::Real(v) => v,
            InvariantValue::Complex { re, .. } => re,
        }
    }
}

/// One invariant evaluation with its window and ensemble statistics.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantResult {
    pub method: Method,
    pub value: InvariantValue,
    pub window: TraceWindow,
    pub stderr: Option<f64>,
    pub samples: usize,
    /// Sorted diagnostic scalars (imaginary magnitudes, condition ratios, …).
    pub extras: BTreeMap<String, f64>,
}

impl InvariantResult {
    pub fn single(method: Method, value: InvariantValue, window: TraceWindow) -> Self {
        InvariantResult { method, value, window, stderr: None, samples: 1, extras: BTreeMap::new() }
    }
}

/// Window trace per unit volume of a dense operator:
/// `Σ_{x ∈ core} tr_q A(x, x) / (#core sites · a^d)`.
pub fn trace_per_unit_volume(a: &OperatorKernel, w: &TraceWindow) -> Result<C64> {
    trace_per_unit_volume_matrix(&a.matrix, &a.geom, w)
}

/// As [`trace_per_unit_volume`] for a bare matrix over a known geometry.
pub fn trace_per_unit_volume_matrix(m: &CMat, geom: &Geometry, w: &TraceWindow) -> Result<C64> {
    if m.nrows() != geom.dim() {
        return Err(Error::Geometry(format!(
            "operator dimension {} does not match geometry {}",
            m.nrows(),
            geom.dim()
        )));
    }
    let site_mask = geom.core_site_mask(w.core_fraction, w.margin)?;
    let n_core = site_mask.iter().filter(|&&b| b).count();
    let mut total = Complex64::new(0.0, 0.0);
    for (site, &inside) in site_mask.iter().enumerate() {
        if !inside {
            continue;
        }
        for sub in 0..geom.q {
            let i = site * geom.q + sub;
            total += m[(i, i)];
        }
    }
    Ok(total / (n_core as f64 * geom.a.powi(geom.d as i32)))
}

/// Trace of `P·G` over the core window, per unit volume, without forming the
/// full product.
fn windowed_product_trace(p: &CMat, g: &CMat, geom: &Geometry, w: &TraceWindow) -> Result<C64> {
    let mask = geom.core_dof_mask(w.core_fraction, w.margin)?;
    let n_core = geom
        .core_site_mask(w.core_fraction, w.margin)?
        .iter()
        .filter(|&&b| b)
        .count();
    let n = p.nrows();
    let mut total = Complex64::new(0.0, 0.0);
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let mut diag = Complex64::new(0.0, 0.0);
        for k in 0..n {
            diag += p[(i, k)] * g[(k, i)];
        }
        total += diag;
    }
    Ok(total / (n_core as f64 * geom.a.powi(geom.d as i32)))
}

/// All permutations of `0..d` with their signs.
fn signed_permutations(d: usize) -> Vec<(Vec<usize>, f64)> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, sign: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        let d = used.len();
        if prefix.len() == d {
            out.push((prefix.clone(), sign));
            return;
        }
        // Selecting index `v` skips the unused values below it; each skip is
        // one inversion.
        let mut skipped = 0;
        for v in 0..d {
            if used[v] {
                continue;
            }
            used[v] = true;
            prefix.push(v);
            let flip = if skipped % 2 == 0 { sign } else { -sign };
            go(prefix, used, flip, out);
            prefix.pop();
            used[v] = false;
            skipped += 1;
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; d], 1.0, &mut out);
    out
}

fn antisymmetrized_chain(factors: &[CMat]) -> CMat {
    let d = factors.len();
    let n = factors[0].nrows();
    let mut acc: CMat = Array2::zeros((n, n));
    for (perm, sign) in signed_permutations(d) {
        let mut prod = factors[perm[0]].clone();
        for &j in &perm[1..] {
            prod = prod.dot(&factors[j]);
        }
        if sign > 0.0 {
            acc += &prod;
        } else {
            acc -= &prod;
        }
    }
    acc
}

fn displacement_weighted(geom: &Geometry, axis: usize, m: &CMat) -> CMat {
    let d = geom.displacement_matrix(axis);
    let mut out = m.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v *= d[(i, j)];
    }
    out
}

/// Even cyclic pairing
/// `((−2πi)^{d/2}/(d/2)!) Σ_σ (−1)^σ Tvol(P ∏_j [X_{σ(j)}, P])`
/// over the core window. Defined for even `d`; production accuracy targets
/// d = 2.
pub fn even_chern(p: &Projection, geom: &Geometry, w: &TraceWindow) -> Result<InvariantResult> {
    let d = geom.d;
    if d % 2 != 0 {
        return Err(Error::Config(format!("even pairing needs even dimension, got d = {d}")));
    }
    if p.matrix.nrows() != geom.dim() {
        return Err(Error::Geometry("projection does not match geometry".into()));
    }
    let factors: Vec<CMat> = (0..d).map(|j| displacement_weighted(geom, j, &p.matrix)).collect();
    let g = antisymmetrized_chain(&factors);
    let t = windowed_product_trace(&p.matrix, &g, geom, w)?;
    let half = d / 2;
    let mut prefactor = Complex64::new(1.0, 0.0);
    for _ in 0..half {
        prefactor *= Complex64::new(0.0, -2.0 * std::f64::consts::PI);
    }
    let mut half_fact = 1.0;
    for k in 2..=half {
        half_fact *= k as f64;
    }
    let value = prefactor / half_fact * t;
    let mut res = InvariantResult::single(
        Method::CyclicEven,
        InvariantValue::Complex { re: value.re, im: value.im },
        *w,
    );
    res.extras.insert("imag_magnitude".into(), value.im.abs());
    Ok(res)
}

/// Odd cyclic pairing
/// `C_d Σ_σ (−1)^σ Tvol(∏_j U*[X_{σ(j)}, U])` with
/// `C_{2n+1} = 2(2πi)^n n!/(2n+1)!`; for d = 1 this is `2·Tvol(U*[X, U])`.
pub fn odd_chern(u: &ChiralUnitary, geom: &Geometry, w: &TraceWindow) -> Result<InvariantResult> {
    let d = geom.d;
    if d % 2 != 1 {
        return Err(Error::Config(format!("odd pairing needs odd dimension, got d = {d}")));
    }
    if u.matrix.nrows() != geom.dim() {
        return Err(Error::Geometry("unitary does not match geometry".into()));
    }
    let defect = u.unitarity_defect();
    if defect > 1e-6 {
        return Err(Error::Spectral(format!("input not unitary: defect {defect:.3e}")));
    }
    let uh = u.matrix.t().mapv(|z| z.conj());
    let factors: Vec<CMat> = (0..d)
        .map(|j| uh.dot(&displacement_weighted(geom, j, &u.matrix)))
        .collect();
    let g = antisymmetrized_chain(&factors);
    let mask = geom.core_dof_mask(w.core_fraction, w.margin)?;
    let n_core = geom
        .core_site_mask(w.core_fraction, w.margin)?
        .iter()
        .filter(|&&b| b)
        .count();
    let mut t = Complex64::new(0.0, 0.0);
    for (i, &inside) in mask.iter().enumerate() {
        if inside {
            t += g[(i, i)];
        }
    }
    t /= n_core as f64 * geom.a.powi(d as i32);
    let n_half = (d - 1) / 2;
    let mut c_d = Complex64::new(2.0, 0.0);
    for _ in 0..n_half {
        c_d *= Complex64::new(0.0, 2.0 * std::f64::consts::PI);
    }
    let mut num = 1.0;
    for k in 2..=n_half {
        num *= k as f64;
    }
    let mut den = 1.0;
    for k in 2..=d {
        den *= k as f64;
    }
    let value = c_d * num / den * t;
    let mut res = InvariantResult::single(
        Method::CyclicOdd,
        InvariantValue::Complex { re: value.re, im: value.im },
        *w,
    );
    res.extras.insert("imag_magnitude".into(), value.im.abs());
    res.extras.insert("unitarity_defect".into(), defect);
    Ok(res)
}

/// Phase function `(x₁ + i x₂ − c)/|x₁ + i x₂ − c|` per degree of freedom.
/// The center is nudged off the grid when it falls on (or nearly on) a
/// lattice point, where the phase would be undefined.
fn position_phase(geom: &Geometry, center: &[f64]) -> Result<Array1<C64>> {
    if geom.d != 2 {
        return Err(Error::Config(format!(
            "point-flux phase needs d = 2, got d = {}",
            geom.d
        )));
    }
    if center.len() != 2 {
        return Err(Error::Config("center must have two components".into()));
    }
    let xs = geom.dof_positions(0);
    let ys = geom.dof_positions(1);
    let mut c = Complex64::new(center[0], center[1]);
    let min_dist = xs
        .iter()
        .zip(ys.iter())
        .map(|(&x, &y)| (Complex64::new(x, y) - c).norm())
        .fold(f64::INFINITY, f64::min);
    if min_dist < 0.25 * geom.a {
        c += Complex64::new(0.5 * geom.a, 0.5 * geom.a);
    }
    let dim = geom.dim();
    let mut out = Array1::zeros(dim);
    for i in 0..dim {
        let z = Complex64::new(xs[i], ys[i]) - c;
        out[i] = z / z.norm();
    }
    Ok(out)
}

/// Count near-kernel vectors of the compression: singular vectors kept by
/// the gap-threshold rule, filtered by core localization of their lifts.
/// `vectors` holds candidate kernel vectors as columns aligned with
/// ascending singular values; `basis` lifts compression coordinates back to
/// the lattice.
fn filtered_kernel_count(
    sigma_asc: &[f64],
    vectors: &CMat,
    basis: &CMat,
    mask: &[bool],
) -> Result<usize> {
    let below = sigma_asc.iter().filter(|&&s| s < 0.5).count();
    if below == 0 {
        return Ok(0);
    }
    if below == sigma_asc.len() {
        return Err(Error::IllConditioned(
            "every singular value of the compression is below 0.5".into(),
        ));
    }
    // Candidate cut after position c (kernel dimension c): score by the jump
    // σ_c/σ_{c−1}, including the jump across the 0.5 line.
    let mut best_cut = 0usize;
    let mut best_ratio = 0.0f64;
    for c in 1..=below {
        let lo = sigma_asc[c - 1].max(1e-300);
        let ratio = sigma_asc[c] / lo;
        if ratio > best_ratio {
            best_ratio = ratio;
            best_cut = c;
        }
    }
    if best_ratio < 10.0 {
        return Err(Error::IllConditioned(format!(
            "no clear kernel threshold: best singular-value gap ratio {best_ratio:.2} (need ≥ 10)"
        )));
    }
    let mut localized = 0usize;
    for k in 0..best_cut {
        let v = vectors.column(k);
        let lifted = basis.dot(&v.to_owned());
        let mass: f64 = lifted
            .iter()
            .enumerate()
            .filter(|(i, _)| mask[*i])
            .map(|(_, z)| z.norm_sqr())
            .sum();
        if mass >= 0.5 {
            localized += 1;
        }
    }
    Ok(localized)
}

struct CompressionSvd {
    sigma_asc: Vec<f64>,
    /// Right singular vectors (kernel side), columns in ascending σ order.
    right: CMat,
    /// Left singular vectors (cokernel side), columns in ascending σ order.
    left: CMat,
}

fn compress_and_split(p: &Projection, phase: &Array1<C64>) -> Result<CompressionSvd> {
    let basis = p
        .basis
        .as_ref()
        .ok_or_else(|| Error::Spectral("projection carries no eigenbasis".into()))?;
    let rank = p.rank;
    let n = basis.nrows();
    // M = B* diag(f) B on ran P.
    let mut fb = basis.clone();
    for i in 0..n {
        for j in 0..rank {
            fb[(i, j)] *= phase[i];
        }
    }
    let bh = basis.t().mapv(|z| z.conj());
    let m = bh.dot(&fb);
    let (u_opt, s, vt_opt) = m.svd(true, true)?;
    let u = u_opt.ok_or_else(|| Error::Linalg("svd returned no left vectors".into()))?;
    let vt = vt_opt.ok_or_else(|| Error::Linalg("svd returned no right vectors".into()))?;
    // LAPACK orders descending; re-index ascending.
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let sigma_asc: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let mut right: CMat = Array2::zeros((rank, s.len()));
    let mut left: CMat = Array2::zeros((rank, s.len()));
    for (col, &i) in order.iter().enumerate() {
        for r in 0..rank {
            right[(r, col)] = vt[(i, r)].conj();
            left[(r, col)] = u[(r, i)];
        }
    }
    Ok(CompressionSvd { sigma_asc, right, left })
}

/// Integer index of the compression `P F P` on ran P, where F multiplies by
/// the unit phase around `center`: (numerically localized kernel dimension)
/// minus (same for the adjoint).
pub fn fredholm_index(p: &Projection, geom: &Geometry, center: &[f64]) -> Result<i64> {
    if geom.d != 2 {
        return Err(Error::Config("Fredholm phase pairing is a d = 2 construction".into()));
    }
    if p.rank == 0 {
        return Ok(0);
    }
    let phase = position_phase(geom, center)?;
    let svd = compress_and_split(p, &phase)?;
    let basis = p.basis.as_ref().expect("checked in compress_and_split");
    let mask = geom.core_dof_mask(0.5, 1)?;
    let ker = filtered_kernel_count(&svd.sigma_asc, &svd.right, basis, &mask)?;
    let coker = filtered_kernel_count(&svd.sigma_asc, &svd.left, basis, &mask)?;
    Ok(ker as i64 - coker as i64)
}

/// Three disjoint position-space regions (degree-of-freedom masks) for the
/// triple-product pairing.
#[derive(Debug, Clone)]
pub struct TripleRegions {
    pub masks: [Vec<bool>; 3],
}

impl TripleRegions {
    /// Angular thirds of the core window around the box center, ordered so
    /// the triple product carries the same sign as the Fredholm pairing:
    /// region A covers angles [0, 2π/3), B the lower half plane, C the rest.
    pub fn angular(geom: &Geometry, w: &TraceWindow) -> Result<Self> {
        if geom.d != 2 {
            return Err(Error::Config("triple regions need d = 2".into()));
        }
        let core = geom.core_dof_mask(w.core_fraction, w.margin)?;
        let xs = geom.dof_positions(0);
        let ys = geom.dof_positions(1);
        let third = 2.0 * std::f64::consts::PI / 3.0;
        let mut masks = [vec![false; geom.dim()], vec![false; geom.dim()], vec![false; geom.dim()]];
        for i in 0..geom.dim() {
            if !core[i] {
                continue;
            }
            let ang = ys[i].atan2(xs[i]);
            if ang < 0.0 {
                masks[1][i] = true;
            } else if ang < third {
                masks[0][i] = true;
            } else {
                masks[2][i] = true;
            }
        }
        Ok(TripleRegions { masks })
    }
}

fn gather(p: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    let mut out: CMat = Array2::zeros((rows.len(), cols.len()));
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            out[(r, c)] = p[(i, j)];
        }
    }
    out
}

/// Triple-region pairing
/// `12πi Σ_{j∈A,k∈B,l∈C} (P_{jk}P_{kl}P_{lj} − P_{jl}P_{lk}P_{kj})`,
/// near-integer for exponentially localized projections.
pub fn kitaev_triple(p: &Projection, geom: &Geometry, regions: &TripleRegions) -> Result<f64> {
    if p.matrix.nrows() != geom.dim() {
        return Err(Error::Geometry("projection does not match geometry".into()));
    }
    for i in 0..geom.dim() {
        let hits = regions.masks.iter().filter(|m| m[i]).count();
        if hits > 1 {
            return Err(Error::Geometry(format!("triple regions overlap at index {i}")));
        }
    }
    let idx = |mask: &Vec<bool>| -> Vec<usize> {
        mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    };
    let ia = idx(&regions.masks[0]);
    let ib = idx(&regions.masks[1]);
    let ic = idx(&regions.masks[2]);
    let p_ab = gather(&p.matrix, &ia, &ib);
    let p_bc = gather(&p.matrix, &ib, &ic);
    let p_ca = gather(&p.matrix, &ic, &ia);
    let prod = p_ab.dot(&p_bc).dot(&p_ca);
    let mut t = Complex64::new(0.0, 0.0);
    for i in 0..prod.nrows() {
        t += prod[(i, i)];
    }
    // 12πi(t − t̄) = −24π·Im t.
    Ok(-24.0 * std::f64::consts::PI * t.im)
}

fn check_time_reversal(p: &Projection, r_t: &CMat) -> Result<()> {
    let n = r_t.nrows();
    let r_conj = r_t.mapv(|z| z.conj());
    let square = r_t.dot(&r_conj);
    let mut defect = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j { Complex64::new(-1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            defect = defect.max((square[(i, j)] - expect).norm());
        }
    }
    if defect > 1e-6 {
        return Err(Error::Spectral(format!(
            "time-reversal matrix does not square to −1: defect {defect:.3e}"
        )));
    }
    let p_conj = p.matrix.mapv(|z| z.conj());
    let rh = r_t.t().mapv(|z| z.conj());
    let transported = r_t.dot(&p_conj).dot(&rh);
    let mut tdefect = 0.0f64;
    for (a, b) in transported.iter().zip(p.matrix.iter()) {
        tdefect = tdefect.max((a - b).norm());
    }
    if tdefect > 1e-6 {
        return Err(Error::Spectral(format!(
            "projection is not time-reversal invariant: defect {tdefect:.3e}"
        )));
    }
    Ok(())
}

/// Mod-2 pairing: the localized complex kernel dimension of the compression
/// `P F P`, reduced mod 2, for a time-reversal invariant projection
/// (`R_T` antiunitary with square −1, acting as `ψ ↦ R·ψ̄`).
pub fn mod2_index(p: &Projection, geom: &Geometry, r_t: &CMat, center: &[f64]) -> Result<u8> {
    if geom.d != 2 {
        return Err(Error::Config("mod-2 phase pairing is a d = 2 construction".into()));
    }
    check_time_reversal(p, r_t)?;
    if p.rank == 0 {
        return Ok(0);
    }
    let phase = position_phase(geom, center)?;
    let svd = compress_and_split(p, &phase)?;
    let basis = p.basis.as_ref().expect("checked in compress_and_split");
    let mask = geom.core_dof_mask(0.5, 1)?;
    let ker = filtered_kernel_count(&svd.sigma_asc, &svd.right, basis, &mask)?;
    Ok((ker % 2) as u8)
}

/// Mod-2 pairing with a conserved spin splitting P = P⁺ ⊕ P⁻: computes the
/// direct kernel count and the per-spin integer indices, and demands the two
/// reductions agree.
#[allow(clippy::too_many_arguments)]
pub fn mod2_index_with_split(
    p: &Projection,
    geom: &Geometry,
    r_t: &CMat,
    center: &[f64],
    p_up: &Projection,
    p_down: &Projection,
    spin_geom: &Geometry,
) -> Result<u8> {
    let direct = mod2_index(p, geom, r_t, center)?;
    let idx_up = fredholm_index(p_up, spin_geom, center)?;
    let idx_down = fredholm_index(p_down, spin_geom, center)?;
    let up_bit = (idx_up.rem_euclid(2)) as u8;
    let down_bit = (idx_down.rem_euclid(2)) as u8;
    if up_bit != direct || down_bit != direct {
        return Err(Error::Spectral(format!(
            "spin-split reduction disagrees with direct kernel count: direct {direct}, per-spin indices {idx_up}/{idx_down}"
        )));
    }
    Ok(direct)
}

/// Surface area of the unit sphere S^{d−1}.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => {
            2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidueRow {
    pub s: f64,
    pub zeta: f64,
    pub closed_form: f64,
    pub rel_dev: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidueReport {
    pub d: usize,
    pub rows: Vec<ResidueRow>,
    /// Extrapolated limit of (s − d)·ζ(s) as s → d.
    pub residue: f64,
    /// Analytic target Vol(S^{d−1})·T(f).
    pub residue_target: f64,
    pub residue_rel_dev: f64,
}

/// Generalized binomial coefficient (α choose k).
fn binom_general(alpha: f64, k: usize) -> f64 {
    let mut num = 1.0;
    for i in 0..k {
        num *= alpha - i as f64;
    }
    let mut den = 1.0;
    for i in 2..=k {
        den *= i as f64;
    }
    num / den
}

/// Continuum tail ∫_{|x|>x0} (1+|x|²)^{−s/2} dx.
fn zeta_tail(d: usize, s: f64, x0: f64) -> f64 {
    match d {
        2 => 2.0 * std::f64::consts::PI * (1.0 + x0 * x0).powf(1.0 - s / 2.0) / (s - 2.0),
        1 | 3 => {
            // Expand (1+r²)^{−s/2} = Σ_k binom(−s/2, k) r^{−s−2k} and
            // integrate r^{d−1}·(term) from x0; eight terms leave a
            // remainder far below the comparison tolerances at x0 ≈ 30.
            let area = sphere_area(d);
            let mut total = 0.0;
            for k in 0..8 {
                let power = d as f64 - s - 2.0 * k as f64;
                total += binom_general(-s / 2.0, k) * x0.powf(power) / -power;
            }
            area * total
        }
        _ => 0.0,
    }
}

/// Lattice sum Σ_{x ∈ (aZ)^d, |x| ≤ r_max} a^d (1+|x|²)^{−s/2} plus the
/// analytic tail beyond the ball.
fn zeta_lattice_sum(d: usize, s: f64) -> f64 {
    let a: f64 = 0.5;
    let r_max: f64 = 30.0;
    let k_max = (r_max / a).ceil() as i64;
    let mut total = 0.0;
    let mut idx = vec![-k_max; d];
    'outer: loop {
        let mut r2 = 0.0;
        for &k in &idx {
            let x = a * k as f64;
            r2 += x * x;
        }
        if r2 <= r_max * r_max {
            total += (1.0 + r2).powf(-s / 2.0);
        }
        for axis in (0..d).rev() {
            if idx[axis] < k_max {
                idx[axis] += 1;
                for later in idx.iter_mut().skip(axis + 1) {
                    *later = -k_max;
                }
                continue 'outer;
            }
            if axis == 0 {
                break 'outer;
            }
        }
    }
    total * a.powi(d as i32) + zeta_tail(d, s, r_max + a / 2.0)
}

/// Compare the lattice zeta function `ζ(s) = T(f)·Σ a^d (1+|x|²)^{−s/2}`
/// against its closed Γ-function form at each `s`, and extrapolate the
/// simple-pole residue at s = d against `Vol(S^{d−1})·T(f)`.
pub fn residue_check(d: usize, s_list: &[f64], f_weight: f64) -> Result<ResidueReport> {
    if d == 0 || d > 3 {
        return Err(Error::Config(format!("residue check supports d in 1..=3, got {d}")));
    }
    for &s in s_list {
        if s <= d as f64 {
            return Err(Error::Config(format!("zeta exponent s = {s} must exceed d = {d}")));
        }
    }
    let area = sphere_area(d);
    let mut rows = Vec::with_capacity(s_list.len());
    for &s in s_list {
        let zeta = f_weight * zeta_lattice_sum(d, s);
        let closed = f_weight * area * gamma(d as f64 / 2.0) * gamma((s - d as f64) / 2.0)
            / (2.0 * gamma(s / 2.0));
        let denom = closed.abs().max(1e-300);
        rows.push(ResidueRow { s, zeta, closed_form: closed, rel_dev: (zeta - closed).abs() / denom });
    }
    // Richardson step on v(δ) = δ·ζ(d+δ): the simple pole makes v linear in
    // δ near zero, so 2v(δ) − v(2δ) cancels the first-order term.
    let v = |delta: f64| delta * f_weight * zeta_lattice_sum(d, d as f64 + delta);
    let residue = 2.0 * v(0.125) - v(0.25);
    let target = area * f_weight;
    let denom = target.abs().max(1e-300);
    Ok(ResidueReport {
        d,
        rows,
        residue,
        residue_target: target,
        residue_rel_dev: (residue - target).abs() / denom,
    })
}

/// Finitely supported translation-invariant test kernel: entry at
/// displacement `a·offset` has the given amplitude.
#[derive(Debug, Clone)]
pub struct TestKernel {
    pub d: usize,
    pub terms: Vec<(Vec<i64>, C64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HsReport {
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_dev: f64,
}

/// Verify the Hilbert-Schmidt weight identity
/// `‖π(f)(1+X²)^{−s/4}‖² = C_s Σ_u a^d tr(f(u)*f(u))`,
/// `C_s = Σ_v a^d (1+|v|²)^{−s/2}`, by direct summation on the box. The
/// kernel is applied without wraparound so the position weight is exact;
/// boundary truncation is the only discrepancy and must stay small.
pub fn hs_norm_check(kernel: &TestKernel, geom: &Geometry, s: f64) -> Result<HsReport> {
    if kernel.d != geom.d {
        return Err(Error::Config("kernel dimension does not match geometry".into()));
    }
    if s <= geom.d as f64 {
        return Err(Error::Config(format!(
            "weight exponent s = {s} must exceed d = {}",
            geom.d
        )));
    }
    if geom.q != 1 {
        return Err(Error::Config("test kernels are scalar; use internal_dofs = 1".into()));
    }
    // Merge duplicate offsets so Σ|amp|² is well defined.
    let mut merged: BTreeMap<Vec<i64>, C64> = BTreeMap::new();
    for (off, amp) in &kernel.terms {
        if off.len() != geom.d {
            return Err(Error::Config("kernel offset dimension mismatch".into()));
        }
        *merged.entry(off.clone()).or_insert(Complex64::new(0.0, 0.0)) += amp;
    }
    for off in merged.keys() {
        for (axis, &o) in off.iter().enumerate() {
            if o.unsigned_abs() as usize >= geom.n[axis] / 4 {
                return Err(Error::Config(format!(
                    "kernel support reaches the box boundary (offset {o} on axis {axis})"
                )));
            }
        }
    }
    let sites = geom.sites();
    // Position weight per site.
    let mut weight = vec![0.0f64; sites];
    for (site, w) in weight.iter_mut().enumerate() {
        let coords = geom.site_coords(site);
        let r2: f64 = (0..geom.d)
            .map(|axis| {
                let x = geom.position_of(axis, coords[axis]);
                x * x
            })
            .sum();
        *w = (1.0 + r2).powf(-s / 2.0);
    }
    let c_s: f64 = weight.iter().sum();
    let mut lhs_sum = 0.0;
    for site in 0..sites {
        let coords = geom.site_coords(site);
        for (off, amp) in &merged {
            let mut target = vec![0usize; geom.d];
            let mut inside = true;
            for axis in 0..geom.d {
                let c = coords[axis] as i64 + off[axis];
                if c < 0 || c >= geom.n[axis] as i64 {
                    inside = false;
                    break;
                }
                target[axis] = c as usize;
            }
            if inside {
                lhs_sum += amp.norm_sqr() * weight[site];
            }
        }
    }
    let kernel_sum: f64 = merged.values().map(|z| z.norm_sqr()).sum();
    let scale = geom.a.powi(2 * geom.d as i32);
    let lhs = scale * lhs_sum;
    let rhs = scale * c_s * kernel_sum;
    let denom = rhs.abs().max(1e-300);
    Ok(HsReport { s, lhs, rhs, rel_dev: (lhs - rhs).abs() / denom })
}
