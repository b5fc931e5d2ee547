//! Dense Hermitian eigendecomposition with an on-disk cache, plus the
//! spectral-function toolkit built on it: Fermi projections, Fermi unitaries
//! of chiral Hamiltonians, and smooth switch functions.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::{hermiticity_defect, OperatorKernel};
use crate::{C64, CMat, RVec};

/// Digest of a matrix (shape plus raw entry bytes), used as the cache key.
pub fn source_hash(m: &CMat) -> String {
    let mut hasher = Sha256::new();
    hasher.update((m.nrows() as u64).to_le_bytes());
    hasher.update((m.ncols() as u64).to_le_bytes());
    for z in m.iter() {
        hasher.update(z.re.to_le_bytes());
        hasher.update(z.im.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(32);
    for byte in digest.iter().take(16) {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Full eigendecomposition of one Hamiltonian sample.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Ascending eigenvalues.
    pub eigenvalues: RVec,
    /// Unitary whose columns are the matching eigenvectors.
    pub eigenvectors: CMat,
    /// Digest of the input matrix.
    pub source_hash: String,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Total spectral width, floored at machine scale so tolerances stay
    /// meaningful for H = 0.
    pub fn spectral_width(&self) -> f64 {
        let n = self.eigenvalues.len();
        if n == 0 {
            return 1.0;
        }
        (self.eigenvalues[n - 1] - self.eigenvalues[0]).max(1e-300)
    }

    /// Apply a scalar function through the eigenbasis: Q f(Λ) Q*.
    pub fn matrix_function(&self, f: impl Fn(f64) -> C64) -> CMat {
        let n = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for j in 0..n {
            let fj = f(self.eigenvalues[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        let vh = self.eigenvectors.t().mapv(|z| z.conj());
        scaled.dot(&vh)
    }
}

const CACHE_MAGIC: &[u8; 6] = b"NCEIGH";
const CACHE_VERSION: u16 = 1;

fn cache_path(dir: &Path, hash: &str) -> std::path::PathBuf {
    dir.join(format!("{hash}.eig"))
}

fn payload_checksum(bytes: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

fn write_cache(dir: &Path, hash: &str, data: &SpectralData) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n = data.dim();
    let mut payload = Vec::with_capacity(8 * n * (1 + 2 * n));
    for v in data.eigenvalues.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    for z in data.eigenvectors.iter() {
        payload.extend_from_slice(&z.re.to_le_bytes());
        payload.extend_from_slice(&z.im.to_le_bytes());
    }
    let tmp = dir.join(format!("{hash}.eig.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&CACHE_VERSION.to_le_bytes())?;
        f.write_all(&(n as u64).to_le_bytes())?;
        let hash_bytes = hash.as_bytes();
        if hash_bytes.len() != 32 {
            return Err(Error::Cache("source hash must be 32 hex characters".into()));
        }
        f.write_all(hash_bytes)?;
        f.write_all(&payload)?;
        f.write_all(&payload_checksum(&payload))?;
        f.flush()?;
    }
    fs::rename(&tmp, cache_path(dir, hash))?;
    Ok(())
}

fn read_cache(dir: &Path, hash: &str, n_expected: usize) -> Option<SpectralData> {
    let bytes = fs::read(cache_path(dir, hash)).ok()?;
    let header_len = 6 + 2 + 8 + 32;
    if bytes.len() < header_len + 8 || &bytes[..6] != CACHE_MAGIC {
        return None;
    }
    let version = u16::from_le_bytes(bytes[6..8].try_into().ok()?);
    if version != CACHE_VERSION {
        return None;
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().ok()?) as usize;
    if n != n_expected || &bytes[16..48] != hash.as_bytes() {
        return None;
    }
    let payload_len = 8 * n + 16 * n * n;
    if bytes.len() != header_len + payload_len + 8 {
        return None;
    }
    let payload = &bytes[header_len..header_len + payload_len];
    if payload_checksum(payload) != bytes[header_len + payload_len..] {
        return None;
    }
    let mut evals = Vec::with_capacity(n);
    for k in 0..n {
        evals.push(f64::from_le_bytes(payload[8 * k..8 * k + 8].try_into().ok()?));
    }
    let mut evecs = Vec::with_capacity(n * n);
    let voff = 8 * n;
    for k in 0..n * n {
        let re = f64::from_le_bytes(payload[voff + 16 * k..voff + 16 * k + 8].try_into().ok()?);
        let im = f64::from_le_bytes(payload[voff + 16 * k + 8..voff + 16 * k + 16].try_into().ok()?);
        evecs.push(Complex64::new(re, im));
    }
    if !evals.windows(2).all(|w| w[0] <= w[1]) {
        return None;
    }
    Some(SpectralData {
        eigenvalues: Array1::from_vec(evals),
        eigenvectors: Array2::from_shape_vec((n, n), evecs).ok()?,
        source_hash: hash.to_string(),
    })
}

/// Diagonalize a Hermitian operator, consulting (and populating) the binary
/// eigendecomposition cache when a directory is given. Corrupt or
/// mismatched cache files are ignored and recomputed.
pub fn diagonalize(h: &OperatorKernel, cache_dir: Option<&Path>) -> Result<SpectralData> {
    diagonalize_matrix(&h.matrix, cache_dir)
}

/// As [`diagonalize`] but on a bare matrix (used for synthetic operators the
/// lattice builders do not produce).
pub fn diagonalize_matrix(m: &CMat, cache_dir: Option<&Path>) -> Result<SpectralData> {
    let scale = m.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if hermiticity_defect(m) > 1e-9 * (1.0 + scale) {
        return Err(Error::Spectral("matrix is not Hermitian".into()));
    }
    let hash = source_hash(m);
    if let Some(dir) = cache_dir {
        if let Some(data) = read_cache(dir, &hash, m.nrows()) {
            return Ok(data);
        }
    }
    let (eigenvalues, raw_vectors) = m.eigh(UPLO::Lower)?;
    // The LAPACK binding reads the row-major buffer in column-major order
    // and therefore diagonalizes the transpose, which for Hermitian input
    // is the complex conjugate; conjugating the vectors maps them back.
    let eigenvectors = raw_vectors.mapv(|z| z.conj());
    let data = SpectralData { eigenvalues, eigenvectors, source_hash: hash.clone() };
    if let Some(dir) = cache_dir {
        write_cache(dir, &hash, &data)?;
    }
    Ok(data)
}

/// Spectral (Fermi) projection onto energies at or below `mu`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub matrix: CMat,
    pub mu: f64,
    pub rank: usize,
    /// Distance from `mu` to the nearest eigenvalue; tiny values mean the
    /// finite-volume projection is ambiguous at this Fermi energy.
    pub mu_distance: f64,
    /// Occupied eigenvectors as columns (dim × rank), kept for compressions.
    pub basis: Option<CMat>,
}

/// P = Σ_{λ ≤ μ} |v⟩⟨v|. Near-degenerate `mu` is reported through
/// `mu_distance` rather than an error: mobility-gap runs place `mu` inside
/// dense point spectrum on purpose.
pub fn fermi_projection(sd: &SpectralData, mu: f64) -> Projection {
    let n = sd.dim();
    let rank = sd.eigenvalues.iter().filter(|&&l| l <= mu).count();
    let mu_distance = sd
        .eigenvalues
        .iter()
        .map(|l| (l - mu).abs())
        .fold(f64::INFINITY, f64::min);
    let basis = sd.eigenvectors.slice(ndarray::s![.., ..rank]).to_owned();
    let matrix = if rank == 0 {
        Array2::zeros((n, n))
    } else {
        let bh = basis.t().mapv(|z| z.conj());
        basis.dot(&bh)
    };
    Projection { matrix, mu, rank, mu_distance, basis: Some(basis) }
}

/// Off-diagonal block of sgn(H) for a chirally symmetric Hamiltonian.
#[derive(Debug, Clone)]
pub struct ChiralUnitary {
    pub matrix: CMat,
    pub mu: f64,
}

impl ChiralUnitary {
    /// Wrap an explicitly constructed unitary (winding examples and tests).
    pub fn from_matrix(matrix: CMat) -> Self {
        ChiralUnitary { matrix, mu: 0.0 }
    }

    /// ‖U*U − I‖ (max entry deviation).
    pub fn unitarity_defect(&self) -> f64 {
        let uh = self.matrix.t().mapv(|z| z.conj());
        let g = uh.dot(&self.matrix);
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let expect = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                worst = worst.max((g[(i, j)] - expect).norm());
            }
        }
        worst
    }
}

/// Split the eigenbasis of a self-adjoint involution into its −1 and +1
/// sectors. Exactly diagonal involutions keep the coordinate basis (so
/// position labels survive); anything else goes through a dense eigensolve.
fn involution_sectors(r_c: &CMat) -> Result<(CMat, CMat)> {
    let n = r_c.nrows();
    let diagonal = r_c
        .indexed_iter()
        .all(|((i, j), z)| i == j || z.norm() == 0.0);
    if diagonal {
        let mut minus = Vec::new();
        let mut plus = Vec::new();
        for i in 0..n {
            let v = r_c[(i, i)];
            if (v - Complex64::new(1.0, 0.0)).norm() < 1e-12 {
                plus.push(i);
            } else if (v + Complex64::new(1.0, 0.0)).norm() < 1e-12 {
                minus.push(i);
            } else {
                return Err(Error::Spectral(format!(
                    "involution diagonal entry {v} is not ±1"
                )));
            }
        }
        let mut qm: CMat = Array2::zeros((n, minus.len()));
        for (col, &i) in minus.iter().enumerate() {
            qm[(i, col)] = Complex64::new(1.0, 0.0);
        }
        let mut qp: CMat = Array2::zeros((n, plus.len()));
        for (col, &i) in plus.iter().enumerate() {
            qp[(i, col)] = Complex64::new(1.0, 0.0);
        }
        return Ok((qm, qp));
    }
    let (vals, raw_vecs) = r_c.eigh(UPLO::Lower)?;
    // Same transpose correction as in the main eigensolver wrapper.
    let vecs = raw_vecs.mapv(|z| z.conj());
    let m_minus = vals.iter().filter(|&&v| v < 0.0).count();
    for &v in vals.iter() {
        if (v.abs() - 1.0).abs() > 1e-8 {
            return Err(Error::Spectral(format!("involution eigenvalue {v} is not ±1")));
        }
    }
    let qm = vecs.slice(ndarray::s![.., ..m_minus]).to_owned();
    let qp = vecs.slice(ndarray::s![.., m_minus..]).to_owned();
    Ok((qm, qp))
}

/// Fermi unitary of a chiral Hamiltonian: the off-diagonal block
/// `½(1−R_c)·sgn(H)·½(1+R_c)` expressed on the R_c eigensectors.
///
/// `allow_gapless` admits Hamiltonians whose spectrum touches zero
/// (mobility-gap runs); otherwise a vanishing gap is an error.
pub fn fermi_unitary(sd: &SpectralData, r_c: &CMat, allow_gapless: bool) -> Result<ChiralUnitary> {
    let n = sd.dim();
    if r_c.nrows() != n || r_c.ncols() != n {
        return Err(Error::Spectral("involution dimension mismatch".into()));
    }
    if n % 2 != 0 {
        return Err(Error::Spectral("chiral grading needs even dimension".into()));
    }
    let width = sd.spectral_width();
    // Chiral symmetry R_c H R_c = −H, checked on the reconstructed H.
    let h = sd.matrix_function(|l| Complex64::new(l, 0.0));
    let rhr = r_c.dot(&h).dot(r_c);
    let mut defect = 0.0f64;
    for (a, b) in rhr.iter().zip(h.iter()) {
        defect = defect.max((a + b).norm());
    }
    if defect > 1e-8 * width {
        return Err(Error::Spectral(format!(
            "Hamiltonian is not chiral: ‖R H R + H‖ = {defect:.3e}"
        )));
    }
    let min_abs = sd.eigenvalues.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min);
    if !allow_gapless && min_abs <= 1e-8 * width {
        return Err(Error::Spectral(format!(
            "no spectral gap at zero (closest eigenvalue {min_abs:.3e}); pass the gapless flag for mobility-gap runs"
        )));
    }
    let (qm, qp) = involution_sectors(r_c)?;
    if qm.ncols() != qp.ncols() {
        return Err(Error::Spectral(format!(
            "unbalanced chiral grading: {} vs {} states",
            qm.ncols(),
            qp.ncols()
        )));
    }
    let p0 = fermi_projection(sd, 0.0);
    let mut sgn = p0.matrix.mapv(|z| -2.0 * z);
    for i in 0..n {
        sgn[(i, i)] += Complex64::new(1.0, 0.0);
    }
    let qmh = qm.t().mapv(|z| z.conj());
    let u = qmh.dot(&sgn).dot(&qp);
    let cu = ChiralUnitary { matrix: u, mu: 0.0 };
    let du = cu.unitarity_defect();
    if du > 1e-8 {
        return Err(Error::Spectral(format!(
            "Fermi unitary failed unitarity: defect {du:.3e}"
        )));
    }
    Ok(cu)
}

/// Switch-function flavor: `Exp` runs 0 → 1 across the gap, `Ind` is the odd
/// −1 → +1 version.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchKind {
    Exp,
    Ind,
}

/// Smooth non-decreasing switch: constant outside `[lo, hi]` with a quintic
/// smoothstep (C² at the junctions) across the interior.
#[derive(Debug, Clone, Copy)]
pub struct SwitchFunction {
    pub kind: SwitchKind,
    pub lo: f64,
    pub hi: f64,
}

impl SwitchFunction {
    pub fn new(kind: SwitchKind, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config(format!("empty switch interval [{lo}, {hi}]")));
        }
        Ok(SwitchFunction { kind, lo, hi })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let step = if t <= self.lo {
            0.0
        } else if t >= self.hi {
            1.0
        } else {
            let u = (t - self.lo) / (self.hi - self.lo);
            u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
        };
        match self.kind {
            SwitchKind::Exp => step,
            SwitchKind::Ind => 2.0 * step - 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Boundary;
    use crate::lattice::{build_bulk_hamiltonian, sample_disorder, ModelConfig, PotentialKind};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn laplacian_config(n: usize) -> ModelConfig {
        ModelConfig {
            d: 1,
            box_length: n as f64,
            box_lengths: None,
            spacing: 1.0,
            theta_12: 0.0,
            theta_13: 0.0,
            theta_23: 0.0,
            potential: PotentialKind::None,
            potential_amplitude: None,
            potential_period: None,
            disorder_amplitude: None,
            disorder_bump: None,
            disorder_density: None,
            disorder_seed: None,
            boundary: Boundary::MagneticPeriodic,
            internal_dofs: 1,
        }
    }

    fn diag_matrix(values: &[f64]) -> CMat {
        let n = values.len();
        let mut m: CMat = Array2::zeros((n, n));
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    #[test]
    fn diagonal_matrix_sorted() {
        let sd = diagonalize_matrix(&diag_matrix(&[3.0, 1.0, 2.0]), None).unwrap();
        assert_abs_diff_eq!(sd.eigenvalues[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sd.eigenvalues[1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sd.eigenvalues[2], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_matrix() {
        let sd = diagonalize_matrix(&Array2::zeros((4, 4)), None).unwrap();
        assert!(sd.eigenvalues.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn ring_laplacian_matches_closed_form() {
        let n = 8;
        let cfg = laplacian_config(n);
        let s = sample_disorder(&cfg, 0).unwrap();
        let h = build_bulk_hamiltonian(&cfg, &s).unwrap();
        let sd = diagonalize(&h, None).unwrap();
        let mut expect: Vec<f64> = (0..n)
            .map(|k| 2.0 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()))
            .collect();
        expect.sort_by(f64::total_cmp);
        for (got, want) in sd.eigenvalues.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn reconstruction_and_commutation() {
        let n = 12;
        let mut cfg = laplacian_config(n);
        cfg.potential = PotentialKind::Random;
        cfg.disorder_amplitude = Some(1.0);
        let s = sample_disorder(&cfg, 5).unwrap();
        let h = build_bulk_hamiltonian(&cfg, &s).unwrap();
        let sd = diagonalize(&h, None).unwrap();
        let rebuilt = sd.matrix_function(|l| Complex64::new(l, 0.0));
        let scale = h.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let defect = rebuilt
            .iter()
            .zip(h.matrix.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(defect <= 1e-10 * scale.max(1.0), "reconstruction defect {defect}");

        let p = fermi_projection(&sd, 2.0);
        let comm = p.matrix.dot(&h.matrix) - h.matrix.dot(&p.matrix);
        let cnorm = comm.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(cnorm <= 1e-8 * scale, "commutator {cnorm}");
    }

    #[test]
    fn projection_limits_and_idempotence() {
        let sd = diagonalize_matrix(&diag_matrix(&[0.5, 1.5, 2.5, 3.5]), None).unwrap();
        let p_lo = fermi_projection(&sd, 0.0);
        assert_eq!(p_lo.rank, 0);
        assert!(p_lo.matrix.iter().all(|z| z.norm() == 0.0));
        let p_hi = fermi_projection(&sd, 10.0);
        assert_eq!(p_hi.rank, 4);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(p_hi.matrix[(i, j)].re, expect, epsilon = 1e-12);
            }
        }
        let p = fermi_projection(&sd, 2.0);
        assert_eq!(p.rank, 2);
        assert_abs_diff_eq!(p.mu_distance, 0.5, epsilon = 1e-14);
        let pp = p.matrix.dot(&p.matrix);
        let defect = pp
            .iter()
            .zip(p.matrix.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(defect <= 1e-10);
    }

    #[test]
    fn projection_monotone_in_mu() {
        let n = 10;
        let mut cfg = laplacian_config(n);
        cfg.potential = PotentialKind::Random;
        cfg.disorder_amplitude = Some(2.0);
        let s = sample_disorder(&cfg, 11).unwrap();
        let h = build_bulk_hamiltonian(&cfg, &s).unwrap();
        let sd = diagonalize(&h, None).unwrap();
        let p1 = fermi_projection(&sd, 1.0);
        let p2 = fermi_projection(&sd, 3.0);
        assert!(p1.rank <= p2.rank);
        // Range nesting: P₁ = P₂P₁.
        let prod = p2.matrix.dot(&p1.matrix);
        let defect = prod
            .iter()
            .zip(p1.matrix.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(defect <= 1e-8, "nesting defect {defect}");
    }

    fn two_block(h: CMat) -> (CMat, CMat) {
        // H = [[0, h*],[h, 0]] on C^{2m}, R_c = diag(I, −I).
        let m = h.nrows();
        let mut full: CMat = Array2::zeros((2 * m, 2 * m));
        for i in 0..m {
            for j in 0..m {
                full[(i, m + j)] = h[(j, i)].conj();
                full[(m + i, j)] = h[(i, j)];
            }
        }
        let mut r: CMat = Array2::zeros((2 * m, 2 * m));
        for i in 0..m {
            r[(i, i)] = Complex64::new(1.0, 0.0);
            r[(m + i, m + i)] = Complex64::new(-1.0, 0.0);
        }
        (full, r)
    }

    #[test]
    fn fermi_unitary_identity_block() {
        let m = 3;
        let h = Array2::from_diag(&Array1::from_elem(m, Complex64::new(1.0, 0.0)));
        let (full, r) = two_block(h);
        let sd = diagonalize_matrix(&full, None).unwrap();
        let u = fermi_unitary(&sd, &r, false).unwrap();
        for i in 0..m {
            for j in 0..m {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(u.matrix[(i, j)].re, expect, epsilon = 1e-10);
                assert_abs_diff_eq!(u.matrix[(i, j)].im, 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn fermi_unitary_is_polar_phase() {
        // Invertible non-normal h: U must equal h(h*h)^{−1/2}.
        let h: CMat = array![
            [Complex64::new(1.0, 0.3), Complex64::new(0.2, -0.1)],
            [Complex64::new(-0.4, 0.2), Complex64::new(0.8, 0.5)],
        ];
        let (full, r) = two_block(h.clone());
        let sd = diagonalize_matrix(&full, None).unwrap();
        let u = fermi_unitary(&sd, &r, false).unwrap();
        // Polar factor via (h*h)^{−1/2} through the Gram eigenbasis.
        let hh = h.t().mapv(|z| z.conj()).dot(&h);
        let gd = diagonalize_matrix(&hh, None).unwrap();
        let inv_sqrt = gd.matrix_function(|l| Complex64::new(1.0 / l.sqrt(), 0.0));
        let polar = h.dot(&inv_sqrt);
        // The sector convention fixes U up to the block layout; compare to
        // the minus-sector restriction of sgn(H), which for this layout is
        // the polar phase itself.
        let defect = u
            .matrix
            .iter()
            .zip(polar.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(defect <= 1e-8, "polar defect {defect}");
        assert!(u.unitarity_defect() <= 1e-8);
    }

    #[test]
    fn fermi_unitary_odd_in_h() {
        let h: CMat = array![
            [Complex64::new(0.9, 0.1), Complex64::new(0.3, 0.4)],
            [Complex64::new(0.1, -0.2), Complex64::new(1.2, -0.3)],
        ];
        let (full, r) = two_block(h);
        let sd_plus = diagonalize_matrix(&full, None).unwrap();
        let neg = full.mapv(|z| -z);
        let sd_minus = diagonalize_matrix(&neg, None).unwrap();
        let u_plus = fermi_unitary(&sd_plus, &r, false).unwrap();
        let u_minus = fermi_unitary(&sd_minus, &r, false).unwrap();
        // Flipping H negates sgn(H) and with it the off-diagonal block.
        let defect = u_minus
            .matrix
            .iter()
            .zip(u_plus.matrix.iter())
            .map(|(a, b)| (a + b).norm())
            .fold(0.0, f64::max);
        assert!(defect <= 1e-8, "sign-flip defect {defect}");
    }

    #[test]
    fn fermi_unitary_rejects_gapless_and_nonchiral() {
        let mut h: CMat = Array2::zeros((2, 2));
        h[(0, 1)] = Complex64::new(0.0, 0.0);
        let mut r: CMat = Array2::zeros((2, 2));
        r[(0, 0)] = Complex64::new(1.0, 0.0);
        r[(1, 1)] = Complex64::new(-1.0, 0.0);
        let sd = diagonalize_matrix(&h, None).unwrap();
        assert!(fermi_unitary(&sd, &r, false).is_err());

        let nonchiral = diag_matrix(&[1.0, 2.0]);
        let sd2 = diagonalize_matrix(&nonchiral, None).unwrap();
        assert!(fermi_unitary(&sd2, &r, false).is_err());
    }

    #[test]
    fn switch_function_profile() {
        let f = SwitchFunction::new(SwitchKind::Exp, -1.0, 1.0).unwrap();
        assert_eq!(f.eval(-2.0), 0.0);
        assert_eq!(f.eval(2.0), 1.0);
        assert_abs_diff_eq!(f.eval(0.0), 0.5, epsilon = 1e-14);
        // Monotone on a sample grid.
        let mut prev = -1.0;
        for k in 0..=100 {
            let t = -1.5 + 3.0 * k as f64 / 100.0;
            let v = f.eval(t);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
        let g = SwitchFunction::new(SwitchKind::Ind, -0.5, 0.5).unwrap();
        for k in 0..=20 {
            let t = -0.7 + 1.4 * k as f64 / 20.0;
            assert_abs_diff_eq!(g.eval(-t), -g.eval(t), epsilon = 1e-14);
        }
        assert!(SwitchFunction::new(SwitchKind::Exp, 1.0, 1.0).is_err());
    }

    #[test]
    fn switch_unitary_trivial_off_gap() {
        let sd = diagonalize_matrix(&diag_matrix(&[-2.0, -1.5, 1.5, 2.0]), None).unwrap();
        let f = SwitchFunction::new(SwitchKind::Exp, -1.0, 1.0).unwrap();
        let tau = std::f64::consts::TAU;
        let u = sd.matrix_function(|l| Complex64::new(0.0, tau * f.eval(l)).exp());
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(u[(i, j)].re, expect, epsilon = 1e-12);
                assert_abs_diff_eq!(u[(i, j)].im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cache_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let n = 16;
        let mut cfg = laplacian_config(n);
        cfg.potential = PotentialKind::Random;
        cfg.disorder_amplitude = Some(1.0);
        let s = sample_disorder(&cfg, 9).unwrap();
        let h = build_bulk_hamiltonian(&cfg, &s).unwrap();
        let first = diagonalize(&h, Some(dir.path())).unwrap();
        let hash = first.source_hash.clone();
        let path = dir.path().join(format!("{hash}.eig"));
        assert!(path.exists());
        let second = diagonalize(&h, Some(dir.path())).unwrap();
        assert_eq!(first.eigenvalues, second.eigenvalues);
        assert_eq!(first.eigenvectors, second.eigenvectors);
        // Corrupt one payload byte: the checksum must reject the file and the
        // recompute must still succeed.
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        let third = diagonalize(&h, Some(dir.path())).unwrap();
        for (a, b) in first.eigenvalues.iter().zip(third.eigenvalues.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m: CMat = Array2::zeros((3, 3));
        m[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(diagonalize_matrix(&m, None).is_err());
    }
}
