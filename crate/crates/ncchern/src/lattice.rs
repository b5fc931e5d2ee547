//! Finite-volume magnetic Schrödinger operators on a lattice: model
//! configuration, reproducible disorder ensembles, and Hamiltonian assembly
//! for box, torus, and strip geometries.
//!
//! The kinetic term is the (2d+1)-point magnetic finite-difference Laplacian:
//! diagonal `2d/a²` plus nearest-neighbor hops `−e^{iχ}/a²`, where the link
//! phase is the line integral `χ = −∫A·dl` of the symmetric-gauge vector
//! potential `A_j(x) = −½ Σ_k θ_{jk} x_k` through the link midpoint. On the
//! torus the continuum gauge does not survive periodization, so links carry
//! the standard uniform-flux assignment instead: every plaquette in the
//! `(j,k)` plane encloses the same phase `−θ_{jk} a²` as in the open box, and
//! flux quantization `θ_{jk} L_j L_k ∈ 2πZ` closes the seam. The strip is the
//! torus with the last-axis wraparound links removed and nothing else
//! changed.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Boundary, Geometry};
use crate::{C64, CMat};

/// Deterministic background potential selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    /// Zero potential; requires zero disorder amplitude.
    None,
    /// Periodic modulation `amplitude · cos(2π Σ_j c_j / period)` over the
    /// integer site coordinates (a checkerboard at period 2).
    Periodic,
    /// Pure disorder potential drawn from the bump ensemble.
    Random,
}

/// Full physical description of one lattice model.
///
/// Serialized as a flat key/value table; see the README for the schema.
/// Physics fields have no silent defaults: absent required keys fail
/// validation loudly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Spatial dimension, 1 to 3.
    pub d: usize,
    /// Box side length (length units). `box_length / spacing` must be an
    /// integer number of sites, at least 4.
    pub box_length: f64,
    /// Optional per-axis side lengths for anisotropic boxes (strips). When
    /// present it must have `d` entries and overrides `box_length`.
    #[serde(default)]
    pub box_lengths: Option<Vec<f64>>,
    /// Lattice spacing (length units).
    pub spacing: f64,
    /// Flux-density matrix entries θ_{jk} (1/length²); the antisymmetric
    /// matrix is reconstructed from the upper triangle.
    #[serde(default)]
    pub theta_12: f64,
    #[serde(default)]
    pub theta_13: f64,
    #[serde(default)]
    pub theta_23: f64,
    pub potential: PotentialKind,
    /// Periodic potential parameters (required when `potential = periodic`).
    #[serde(default)]
    pub potential_amplitude: Option<f64>,
    #[serde(default)]
    pub potential_period: Option<usize>,
    /// Disorder amplitude W ≥ 0 (required when `potential = random`).
    #[serde(default)]
    pub disorder_amplitude: Option<f64>,
    /// Bump profile name; only "poly" (the compactly supported polynomial
    /// bump `(1−r²)²` of radius one) is implemented.
    #[serde(default)]
    pub disorder_bump: Option<String>,
    /// Expected bumps per unit cell, in (0, 1].
    #[serde(default)]
    pub disorder_density: Option<f64>,
    /// Base seed for the disorder stream.
    #[serde(default)]
    pub disorder_seed: Option<u64>,
    pub boundary: Boundary,
    /// Internal fiber dimension per site.
    pub internal_dofs: usize,
}

impl ModelConfig {
    /// Upper-triangle flux entry θ_{jk} for 0-based axes `j < k`.
    pub fn theta(&self, j: usize, k: usize) -> f64 {
        debug_assert!(j < k);
        match (j, k) {
            (0, 1) => self.theta_12,
            (0, 2) => self.theta_13,
            (1, 2) => self.theta_23,
            _ => 0.0,
        }
    }

    /// Signed flux entry for any axis pair (antisymmetric completion).
    pub fn theta_signed(&self, j: usize, k: usize) -> f64 {
        if j == k {
            0.0
        } else if j < k {
            self.theta(j, k)
        } else {
            -self.theta(k, j)
        }
    }

    /// Sites per axis.
    pub fn sites_per_axis(&self) -> Result<Vec<usize>> {
        let lengths = self.axis_lengths();
        let mut n = Vec::with_capacity(self.d);
        for (axis, &len) in lengths.iter().enumerate() {
            let ratio = len / self.spacing;
            let rounded = ratio.round();
            if (ratio - rounded).abs() > 1e-9 || rounded < 1.0 {
                return Err(Error::Config(format!(
                    "axis {axis}: box length {len} is not an integer multiple of spacing {}",
                    self.spacing
                )));
            }
            n.push(rounded as usize);
        }
        Ok(n)
    }

    pub fn axis_lengths(&self) -> Vec<f64> {
        match &self.box_lengths {
            Some(ls) => ls.clone(),
            None => vec![self.box_length; self.d],
        }
    }

    /// Validate every config invariant; called by all builders.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > 3 {
            return Err(Error::Config(format!("d = {} out of range 1..=3", self.d)));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::Config(format!("spacing {} must be positive", self.spacing)));
        }
        if let Some(ls) = &self.box_lengths {
            if ls.len() != self.d {
                return Err(Error::Config(format!(
                    "box_lengths has {} entries for d = {}",
                    ls.len(),
                    self.d
                )));
            }
        }
        let n = self.sites_per_axis()?;
        if n.iter().any(|&nj| nj < 4) {
            return Err(Error::Config(format!(
                "grid {n:?} has an axis below the minimum of 4 sites"
            )));
        }
        if self.internal_dofs == 0 {
            return Err(Error::Config("internal_dofs must be at least 1".into()));
        }
        for axis in 0..self.d {
            for other in 0..axis {
                // Reconstructed matrix is antisymmetric by construction; the
                // stored entries only need to be finite.
                let th = self.theta(other, axis);
                if !th.is_finite() {
                    return Err(Error::Config(format!("theta_{}{} not finite", other + 1, axis + 1)));
                }
            }
        }
        if self.d < 2 && self.theta_12 != 0.0
            || self.d < 3 && (self.theta_13 != 0.0 || self.theta_23 != 0.0)
        {
            return Err(Error::Config(
                "flux entries reference axes beyond the configured dimension".into(),
            ));
        }
        if self.boundary == Boundary::MagneticPeriodic {
            let lengths = self.axis_lengths();
            for j in 0..self.d {
                for k in (j + 1)..self.d {
                    let quanta = self.theta(j, k) * lengths[j] * lengths[k]
                        / (2.0 * std::f64::consts::PI);
                    if (quanta - quanta.round()).abs() > 1e-9 {
                        return Err(Error::Config(format!(
                            "flux not quantized under magnetic_periodic: theta_{}{} L_{} L_{} / 2π = {quanta}",
                            j + 1,
                            k + 1,
                            j + 1,
                            k + 1
                        )));
                    }
                }
            }
        }
        match self.potential {
            PotentialKind::None => {
                if self.disorder_amplitude.unwrap_or(0.0) != 0.0 {
                    return Err(Error::Config(
                        "potential = none admits no disorder amplitude; use potential = random".into(),
                    ));
                }
            }
            PotentialKind::Periodic => {
                if self.potential_amplitude.is_none() {
                    return Err(Error::Config(
                        "potential = periodic requires potential_amplitude".into(),
                    ));
                }
                let period = self
                    .potential_period
                    .ok_or_else(|| Error::Config("potential = periodic requires potential_period".into()))?;
                if period < 2 {
                    return Err(Error::Config(format!("potential_period {period} must be >= 2")));
                }
            }
            PotentialKind::Random => {
                let w = self.disorder_amplitude.ok_or_else(|| {
                    Error::Config("potential = random requires disorder_amplitude".into())
                })?;
                if w < 0.0 {
                    return Err(Error::Config(format!("disorder_amplitude {w} must be >= 0")));
                }
                let density = self.disorder_density.unwrap_or(1.0);
                if !(density > 0.0 && density <= 1.0) {
                    return Err(Error::Config(format!(
                        "disorder_density {density} outside (0, 1]"
                    )));
                }
                let bump = self.disorder_bump.as_deref().unwrap_or("poly");
                if bump != "poly" {
                    return Err(Error::Config(format!(
                        "disorder_bump '{bump}' unknown; implemented profile: poly"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        self.validate()?;
        Geometry::new(
            self.d,
            self.sites_per_axis()?,
            self.spacing,
            self.internal_dofs,
            self.boundary,
        )
    }

    /// Disorder amplitude with the zero default for non-random potentials.
    pub fn amplitude_w(&self) -> f64 {
        match self.potential {
            PotentialKind::Random => self.disorder_amplitude.unwrap_or(0.0),
            _ => 0.0,
        }
    }
}

/// One realization of the disorder potential, reproducible from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderSample {
    /// Seed that generated this realization.
    pub omega_id: u64,
    /// Potential value at every lattice site (energy units).
    pub potential_values: Vec<f64>,
}

impl DisorderSample {
    pub fn zero(geom: &Geometry, seed: u64) -> Self {
        DisorderSample { omega_id: seed, potential_values: vec![0.0; geom.sites()] }
    }
}

/// Compactly supported polynomial bump `(1−r²)²` on `r < 1`.
fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        let t = 1.0 - r2;
        t * t
    }
}

/// Draw one disorder realization: `V(x) = Σ_b λ_b u(x − x_b)` with bump
/// centers on the unit-length grid, `λ_b` i.i.d. uniform on `[−W, W]`, and a
/// Bernoulli thinning at the configured density. Deterministic in `seed`.
pub fn sample_disorder(config: &ModelConfig, seed: u64) -> Result<DisorderSample> {
    config.validate()?;
    let geom = config.geometry()?;
    let sites = geom.sites();
    let mut values = vec![0.0f64; sites];
    let w = config.amplitude_w();
    if config.potential != PotentialKind::Random || w == 0.0 {
        return Ok(DisorderSample { omega_id: seed, potential_values: values });
    }
    let density = config.disorder_density.unwrap_or(1.0);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Bump grid: unit spacing, centered like the site grid.
    let lengths = config.axis_lengths();
    let m: Vec<usize> = lengths
        .iter()
        .map(|&len| len.round().max(1.0) as usize)
        .collect();
    let n_bumps: usize = m.iter().product();
    let mut centers = vec![0usize; config.d];
    for flat in 0..n_bumps {
        let mut rem = flat;
        for axis in (0..config.d).rev() {
            centers[axis] = rem % m[axis];
            rem /= m[axis];
        }
        // Fixed two draws per bump keep the stream aligned across densities.
        let keep: f64 = rng.gen();
        let lambda = w * (2.0 * rng.gen::<f64>() - 1.0);
        if keep > density {
            continue;
        }
        let center: Vec<f64> = (0..config.d)
            .map(|axis| centers[axis] as f64 - (m[axis] as f64 - 1.0) / 2.0)
            .collect();
        // Only sites within unit radius of the center feel this bump.
        add_bump(&geom, &mut values, &center, lambda);
    }
    Ok(DisorderSample { omega_id: seed, potential_values: values })
}

fn add_bump(geom: &Geometry, values: &mut [f64], center: &[f64], lambda: f64) {
    let d = geom.d;
    // Integer coordinate window covering |x - center| < 1 per axis.
    let mut lo = vec![0usize; d];
    let mut hi = vec![0usize; d];
    for axis in 0..d {
        let c0 = (center[axis] - 1.0 - geom.position_of(axis, 0)) / geom.a;
        let c1 = (center[axis] + 1.0 - geom.position_of(axis, 0)) / geom.a;
        let lo_i = c0.ceil().max(0.0) as isize;
        let hi_i = (c1.floor() as isize).min(geom.n[axis] as isize - 1);
        if hi_i < lo_i {
            return;
        }
        lo[axis] = lo_i as usize;
        hi[axis] = hi_i as usize;
    }
    let mut coords = lo.clone();
    loop {
        let mut r2 = 0.0;
        for axis in 0..d {
            let dx = geom.position_of(axis, coords[axis]) - center[axis];
            r2 += dx * dx;
        }
        if r2 < 1.0 {
            values[geom.site_index(&coords)] += lambda * bump(r2);
        }
        // Odometer increment over the window.
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if coords[axis] < hi[axis] {
                coords[axis] += 1;
                for (a2, c) in coords.iter_mut().enumerate().skip(axis + 1) {
                    *c = lo[a2];
                }
                break;
            }
        }
    }
}

/// Hull translation of a realization by an integer number of sites per axis
/// (cyclic on the sample grid): `V'(x) = V(x − shift·a)`.
pub fn translate_sample(
    config: &ModelConfig,
    sample: &DisorderSample,
    shift_sites: &[i64],
) -> Result<DisorderSample> {
    let geom = config.geometry()?;
    if shift_sites.len() != config.d {
        return Err(Error::Config(format!(
            "shift has {} entries for d = {}",
            shift_sites.len(),
            config.d
        )));
    }
    let sites = geom.sites();
    let mut values = vec![0.0f64; sites];
    for (site, value) in values.iter_mut().enumerate() {
        let coords = geom.site_coords(site);
        let mut src = vec![0usize; config.d];
        for axis in 0..config.d {
            let nj = geom.n[axis] as i64;
            src[axis] = (coords[axis] as i64 - shift_sites[axis]).rem_euclid(nj) as usize;
        }
        *value = sample.potential_values[geom.site_index(&src)];
    }
    Ok(DisorderSample { omega_id: sample.omega_id, potential_values: values })
}

/// Dense operator on the lattice together with its grid bookkeeping.
#[derive(Debug, Clone)]
pub struct OperatorKernel {
    pub matrix: CMat,
    pub geom: Geometry,
    /// Center of the symmetric gauge (the box midpoint, in centered
    /// coordinates always the origin).
    pub gauge_center: Vec<f64>,
}

fn c64(re: f64, im: f64) -> C64 {
    Complex64::new(re, im)
}

/// Link phase χ for the hop `coords → coords + e_axis` (before wrapping),
/// such that the hop amplitude is `−e^{iχ}/a²`.
fn link_phase(config: &ModelConfig, geom: &Geometry, coords: &[usize], axis: usize, wrap: bool) -> f64 {
    let a = geom.a;
    match geom.boundary {
        Boundary::DirichletAll => {
            // χ = −∫A·dl with A_j = −½ Σ_k θ_{jk} x_k through the midpoint.
            let mut chi = 0.0;
            for k in 0..geom.d {
                if k == axis {
                    continue;
                }
                let mid = geom.position_of(k, coords[k]);
                chi += 0.5 * a * config.theta_signed(axis, k) * mid;
            }
            chi
        }
        Boundary::MagneticPeriodic | Boundary::DirichletLastAxis => {
            // Uniform-flux torus assignment for d ≤ 2: first-axis links carry
            // +φ·c₂ with φ = θ₁₂ a²; the last-axis seam row carries −φ·n₂·c₁ so
            // every plaquette (the wrapped corner included, via flux
            // quantization) encloses −φ. The strip inherits the same
            // assignment with the seam links absent.
            if geom.d < 2 {
                return 0.0;
            }
            let phi = config.theta_12 * a * a;
            if axis == 0 {
                phi * coords[1] as f64
            } else if axis == 1 && wrap {
                -phi * geom.n[1] as f64 * coords[0] as f64
            } else {
                0.0
            }
        }
    }
}

fn background_potential(config: &ModelConfig, coords: &[usize]) -> f64 {
    match config.potential {
        PotentialKind::Periodic => {
            let amp = config.potential_amplitude.unwrap_or(0.0);
            let period = config.potential_period.unwrap_or(2) as f64;
            let s: usize = coords.iter().sum();
            amp * (2.0 * std::f64::consts::PI * s as f64 / period).cos()
        }
        _ => 0.0,
    }
}

fn assemble(config: &ModelConfig, sample: &DisorderSample, geom: Geometry) -> Result<OperatorKernel> {
    if sample.potential_values.len() != geom.sites() {
        return Err(Error::Config(format!(
            "disorder sample has {} sites, geometry has {}",
            sample.potential_values.len(),
            geom.sites()
        )));
    }
    if geom.boundary != Boundary::DirichletAll && geom.d == 3 && (config.theta_12 != 0.0 || config.theta_13 != 0.0 || config.theta_23 != 0.0)
    {
        return Err(Error::Config(
            "uniform-flux periodic link assignment is implemented for d <= 2; use dirichlet_all for flux in d = 3".into(),
        ));
    }
    let q = geom.q;
    let dim = geom.dim();
    let a2 = geom.a * geom.a;
    let mut h: CMat = Array2::zeros((dim, dim));
    let diag_kinetic = 2.0 * geom.d as f64 / a2;
    let sites = geom.sites();
    for site in 0..sites {
        let coords = geom.site_coords(site);
        let v = diag_kinetic + background_potential(config, &coords) + sample.potential_values[site];
        for m in 0..q {
            h[(site * q + m, site * q + m)] = c64(v, 0.0);
        }
        for axis in 0..geom.d {
            let at_edge = coords[axis] + 1 == geom.n[axis];
            if at_edge && !geom.is_periodic(axis) {
                continue;
            }
            let mut to = coords.clone();
            to[axis] = if at_edge { 0 } else { coords[axis] + 1 };
            let chi = link_phase(config, &geom, &coords, axis, at_edge);
            let amp = c64(0.0, chi).exp() * c64(-1.0 / a2, 0.0);
            let t = geom.site_index(&to);
            for m in 0..q {
                h[(t * q + m, site * q + m)] += amp;
                h[(site * q + m, t * q + m)] += amp.conj();
            }
        }
    }
    Ok(OperatorKernel { matrix: h, geom, gauge_center: vec![0.0; config.d] })
}

/// Build the bulk Hamiltonian (open box or magnetic torus per the config).
pub fn build_bulk_hamiltonian(config: &ModelConfig, sample: &DisorderSample) -> Result<OperatorKernel> {
    config.validate()?;
    if config.boundary == Boundary::DirichletLastAxis {
        return Err(Error::Config(
            "bulk builder expects magnetic_periodic or dirichlet_all; use build_edge_hamiltonian for strips".into(),
        ));
    }
    assemble(config, sample, config.geometry()?)
}

/// Build the half-space (strip) Hamiltonian: identical to the periodic bulk
/// operator except that every hopping entry wrapping around the last axis is
/// removed.
pub fn build_edge_hamiltonian(config: &ModelConfig, sample: &DisorderSample) -> Result<OperatorKernel> {
    config.validate()?;
    if config.boundary != Boundary::DirichletLastAxis {
        return Err(Error::Config(
            "edge builder requires boundary = dirichlet_last_axis".into(),
        ));
    }
    assemble(config, sample, config.geometry()?)
}

/// Discrete magnetic translation by `shift_sites` on the torus: plain cyclic
/// shift composed with the gauge phase that restores the uniform-flux link
/// assignment. Exists only when `N_φ · shift_j / n` is an integer per axis.
pub fn magnetic_translation(config: &ModelConfig, shift_sites: &[i64]) -> Result<CMat> {
    config.validate()?;
    let geom = config.geometry()?;
    if geom.boundary != Boundary::MagneticPeriodic {
        return Err(Error::Config("magnetic translation lives on the torus".into()));
    }
    if shift_sites.len() != geom.d {
        return Err(Error::Config("shift dimension mismatch".into()));
    }
    if geom.d > 2 {
        return Err(Error::Config("magnetic translation implemented for d <= 2".into()));
    }
    let phi = if geom.d == 2 { config.theta_12 * geom.a * geom.a } else { 0.0 };
    if geom.d == 2 {
        // The phase pattern is n-periodic only when the flux through the
        // shifted rows is itself quantized.
        let n_phi = phi * (geom.n[0] * geom.n[1]) as f64 / (2.0 * std::f64::consts::PI);
        for (axis, &b) in shift_sites.iter().enumerate() {
            let frac = n_phi * b as f64 / geom.n[axis] as f64;
            if (frac - frac.round()).abs() > 1e-9 {
                return Err(Error::Geometry(format!(
                    "magnetic translation by {shift_sites:?} does not exist: N_φ·b/n = {frac} along axis {}",
                    axis + 1
                )));
            }
        }
    }
    let q = geom.q;
    let dim = geom.dim();
    let mut u: CMat = Array2::zeros((dim, dim));
    let sites = geom.sites();
    for site in 0..sites {
        let coords = geom.site_coords(site);
        let mut to = vec![0usize; geom.d];
        for axis in 0..geom.d {
            let nj = geom.n[axis] as i64;
            to[axis] = (coords[axis] as i64 + shift_sites[axis]).rem_euclid(nj) as usize;
        }
        let chi = if geom.d == 2 {
            let n1 = geom.n[1] as i64;
            let b2 = shift_sites[1].rem_euclid(n1);
            let wrapped = if (coords[1] as i64) >= n1 - b2 { n1 } else { 0 };
            phi * coords[0] as f64 * (b2 - wrapped) as f64
        } else {
            0.0
        };
        let t = geom.site_index(&to);
        let amp = c64(0.0, chi).exp();
        for m in 0..q {
            u[(t * q + m, site * q + m)] = amp;
        }
    }
    Ok(u)
}

/// Hermiticity defect `max |H − H†|`, used by builders' consumers as a
/// precondition check.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}
