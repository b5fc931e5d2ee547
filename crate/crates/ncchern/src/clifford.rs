//! Exact complex Clifford representations, gradings, spinor traces, and the
//! mod-8 classification of analytic indices.
//!
//! Every matrix produced here has entries in `{0, ±1, ±i}`, so all algebraic
//! identities hold in exact floating-point arithmetic; tests compare with
//! `==`, not with tolerances. Two representation kinds are provided: the
//! irreducible spinor representation on `C^ν` with `ν = 2^⌈(d−1)/2⌉`, and the
//! exterior-algebra representation on the `2^d`-dimensional subset basis,
//! which additionally carries the anti-self-adjoint generators `ρ^j`
//! anticommuting with every `γ^k`.

use ndarray::{linalg::kron, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::{C64, CMat};

/// Which representation of the algebra is materialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliffordKind {
    Spinor,
    Exterior,
}

/// A concrete matrix representation of the rank-`d` complex Clifford algebra.
#[derive(Debug, Clone)]
pub struct CliffordRep {
    pub d: usize,
    pub kind: CliffordKind,
    /// Self-adjoint involutions `γ^1..γ^d`, mutually anticommuting.
    pub gammas: Vec<CMat>,
    /// Exterior kind only: anti-self-adjoint `ρ^j` with `(ρ^j)² = −I`,
    /// anticommuting with every `γ^k`. Empty for the spinor kind.
    pub rhos: Vec<CMat>,
    /// Even `d` only: the grading `γ = (−i)^{d/2} γ^1 ⋯ γ^d`.
    pub grading: Option<CMat>,
}

fn c(re: f64, im: f64) -> C64 {
    Complex64::new(re, im)
}

fn mat2(a: C64, b: C64, d: C64, e: C64) -> CMat {
    Array2::from_shape_vec((2, 2), vec![a, b, d, e]).unwrap()
}

fn pauli(k: usize) -> CMat {
    let o = c(0.0, 0.0);
    match k {
        1 => mat2(o, c(1.0, 0.0), c(1.0, 0.0), o),
        2 => mat2(o, c(0.0, -1.0), c(0.0, 1.0), o),
        3 => mat2(c(1.0, 0.0), o, o, c(-1.0, 0.0)),
        _ => unreachable!(),
    }
}

fn eye(n: usize) -> CMat {
    Array2::eye(n)
}

fn product(mats: &[&CMat]) -> CMat {
    let mut acc = mats[0].clone();
    for m in &mats[1..] {
        acc = acc.dot(*m);
    }
    acc
}

/// Grading `(−i)^{d/2} γ^1 ⋯ γ^d` for even `d`.
fn grading_of(d: usize, gammas: &[CMat]) -> CMat {
    let refs: Vec<&CMat> = gammas.iter().collect();
    let prod = product(&refs);
    let phase = c(0.0, -1.0).powu((d / 2) as u32);
    prod.mapv(|z| z * phase)
}

fn spinor_generators(d: usize) -> Vec<CMat> {
    match d {
        1 => vec![Array2::from_shape_vec((1, 1), vec![c(-1.0, 0.0)]).unwrap()],
        _ if d % 2 == 0 => {
            let lower = spinor_generators(d - 1);
            let nu = lower[0].nrows();
            let mut gammas: Vec<CMat> =
                lower.iter().map(|g| kron(&pauli(1), g)).collect();
            gammas.push(kron(&pauli(2), &eye(nu)));
            gammas
        }
        _ => {
            // Odd d >= 3 extends the (d−1)-representation on the same space;
            // the sign of the last generator selects the irreducible branch
            // with spinor trace (−1)^{n+1} i^{−n} 2^n.
            let lower = spinor_generators(d - 1);
            let grading = grading_of(d - 1, &lower);
            let mut gammas = lower;
            gammas.push(grading.mapv(|z| -z));
            gammas
        }
    }
}

fn exterior_generators(d: usize) -> (Vec<CMat>, Vec<CMat>) {
    let dim = 1usize << d;
    let mut gammas = Vec::with_capacity(d);
    let mut rhos = Vec::with_capacity(d);
    for j in 0..d {
        let bit = 1usize << j;
        let mut gamma = Array2::zeros((dim, dim));
        let mut rho = Array2::zeros((dim, dim));
        for m in 0..dim {
            // Sign from commuting e_j past the generators below it.
            let lower = (m & (bit - 1)).count_ones();
            let sign = if lower % 2 == 0 { 1.0 } else { -1.0 };
            if m & bit == 0 {
                // Exterior multiplication e_j ∧ adds the factor.
                gamma[(m | bit, m)] = c(sign, 0.0);
                rho[(m | bit, m)] = c(sign, 0.0);
            } else {
                // Contraction ι(e_j) removes it.
                gamma[(m & !bit, m)] = c(sign, 0.0);
                rho[(m & !bit, m)] = c(-sign, 0.0);
            }
        }
        gammas.push(gamma);
        rhos.push(rho);
    }
    (gammas, rhos)
}

/// Build the rank-`d` Clifford representation, `1 ≤ d ≤ 4`.
pub fn make_clifford(d: usize, kind: CliffordKind) -> Result<CliffordRep> {
    if d == 0 || d > 4 {
        return Err(Error::Config(format!(
            "clifford rank {d} unsupported (need 1..=4)"
        )));
    }
    let (gammas, rhos) = match kind {
        CliffordKind::Spinor => (spinor_generators(d), Vec::new()),
        CliffordKind::Exterior => exterior_generators(d),
    };
    let grading = if d % 2 == 0 {
        Some(grading_of(d, &gammas))
    } else {
        None
    };
    Ok(CliffordRep { d, kind, gammas, rhos, grading })
}

/// Value group of the analytic index at a given symmetry degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbsIndexGroup {
    Z,
    Z2,
    Trivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AbsIndexValue {
    pub group: AbsIndexGroup,
    pub value: i64,
}

/// Classify kernel data of `T_+` into the index group determined by
/// `(n − d) mod 8` and evaluate it.
///
/// `dim_ker` / `dim_coker` are complex kernel dimensions of `T_+` and
/// `T_+^*`, except in the `(n−d) ≡ 1` case where `dim_ker` is read as a real
/// dimension. The quaternionic case `(n−d) ≡ 4` demands even complex
/// dimensions and halves the difference.
pub fn abs_index(n: i64, d: i64, dim_ker: u64, dim_coker: u64) -> Result<AbsIndexValue> {
    match (n - d).rem_euclid(8) {
        0 => Ok(AbsIndexValue {
            group: AbsIndexGroup::Z,
            value: dim_ker as i64 - dim_coker as i64,
        }),
        1 => Ok(AbsIndexValue {
            group: AbsIndexGroup::Z2,
            value: (dim_ker % 2) as i64,
        }),
        2 => Ok(AbsIndexValue {
            group: AbsIndexGroup::Z2,
            value: (dim_ker % 2) as i64,
        }),
        4 => {
            if dim_ker % 2 != 0 || dim_coker % 2 != 0 {
                return Err(Error::IllConditioned(format!(
                    "quaternionic index needs even complex kernel dimensions, got ({dim_ker}, {dim_coker})"
                )));
            }
            Ok(AbsIndexValue {
                group: AbsIndexGroup::Z,
                value: (dim_ker as i64 - dim_coker as i64) / 2,
            })
        }
        _ => Ok(AbsIndexValue { group: AbsIndexGroup::Trivial, value: 0 }),
    }
}

/// Exact spinor trace of `γ^1 ⋯ γ^d` for odd `d = 2n+1`:
/// `(−1)^{n+1} i^{−n} 2^n`.
pub fn odd_trace_value(d: usize) -> C64 {
    assert!(d % 2 == 1);
    let n = (d - 1) / 2;
    let sign = if (n + 1) % 2 == 0 { 1.0 } else { -1.0 };
    let i_pow = c(0.0, -1.0).powu(n as u32 % 4);
    i_pow * c(sign * (1u64 << n) as f64, 0.0)
}

/// Exact trace of `γ · γ^1 ⋯ γ^d` for even `d`: `i^{d/2} 2^{d/2}`.
pub fn even_trace_value(d: usize) -> C64 {
    assert!(d % 2 == 0);
    let h = d / 2;
    c(0.0, 1.0).powu(h as u32 % 4) * c((1u64 << h) as f64, 0.0)
}

/// Run every exact relation check for both kinds at `d ≤ 4`, returning a
/// human-readable report line per check. Any violated relation is an error.
pub fn selftest() -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for d in 1..=4 {
        for kind in [CliffordKind::Spinor, CliffordKind::Exterior] {
            let rep = make_clifford(d, kind)?;
            verify_rep(&rep)?;
            lines.push(format!(
                "ok d={d} kind={:?} dim={} relations exact",
                kind,
                rep.gammas[0].nrows()
            ));
        }
        if d % 2 == 1 {
            let rep = make_clifford(d, CliffordKind::Spinor)?;
            let refs: Vec<&CMat> = rep.gammas.iter().collect();
            let tr = trace(&product(&refs));
            let expect = odd_trace_value(d);
            if tr != expect {
                return Err(Error::Config(format!(
                    "odd spinor trace at d={d}: got {tr}, expected {expect}"
                )));
            }
            lines.push(format!("ok d={d} spinor trace {tr} matches {expect}"));
        }
    }
    Ok(lines)
}

pub(crate) fn trace(m: &CMat) -> C64 {
    m.diag().sum()
}

fn is_zero(m: &CMat) -> bool {
    m.iter().all(|z| z.re == 0.0 && z.im == 0.0)
}

fn adjoint(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

/// Check every type invariant of a representation exactly; error on the
/// first violation.
pub fn verify_rep(rep: &CliffordRep) -> Result<()> {
    let dim = rep.gammas[0].nrows();
    let id = eye(dim);
    let fail = |what: &str| Err(Error::Config(format!("clifford relation violated: {what}")));
    for (j, g) in rep.gammas.iter().enumerate() {
        if g.dot(g) != id {
            return fail(&format!("(γ^{})² ≠ I", j + 1));
        }
        if adjoint(g) != *g {
            return fail(&format!("γ^{} not self-adjoint", j + 1));
        }
        for k in 0..j {
            let anti = rep.gammas[k].dot(g) + g.dot(&rep.gammas[k]);
            if !is_zero(&anti) {
                return fail(&format!("γ^{} γ^{} do not anticommute", k + 1, j + 1));
            }
        }
    }
    for (j, r) in rep.rhos.iter().enumerate() {
        if r.dot(r) != id.mapv(|z| -z) {
            return fail(&format!("(ρ^{})² ≠ −I", j + 1));
        }
        if adjoint(r) != r.mapv(|z| -z) {
            return fail(&format!("ρ^{} not anti-self-adjoint", j + 1));
        }
        for (k, g) in rep.gammas.iter().enumerate() {
            let anti = r.dot(g) + g.dot(r);
            if !is_zero(&anti) {
                return fail(&format!("ρ^{} γ^{} do not anticommute", j + 1, k + 1));
            }
        }
    }
    if let Some(grading) = &rep.grading {
        if grading.dot(grading) != id {
            return fail("γ² ≠ I for the grading");
        }
        if adjoint(grading) != *grading {
            return fail("grading not self-adjoint");
        }
        for (j, g) in rep.gammas.iter().enumerate() {
            let anti = grading.dot(g) + g.dot(grading);
            if !is_zero(&anti) {
                return fail(&format!("grading does not anticommute with γ^{}", j + 1));
            }
        }
    }
    // Products of 0 < k < d distinct generators are traceless.
    let d = rep.d;
    for subset in 1usize..(1 << d) {
        let k = subset.count_ones() as usize;
        if k == 0 || k == d {
            continue;
        }
        let mats: Vec<&CMat> = (0..d)
            .filter(|j| subset & (1 << j) != 0)
            .map(|j| &rep.gammas[j])
            .collect();
        let tr = trace(&product(&mats));
        if tr != c(0.0, 0.0) {
            return fail(&format!("nonzero trace on generator subset {subset:#b}"));
        }
    }
    Ok(())
}
