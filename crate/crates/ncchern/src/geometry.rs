//! Finite-box lattice geometry: site indexing, centered positions,
//! boundary-aware displacements, and trace-window masks.
//!
//! Sites live on a regular grid with `n[j]` sites along axis `j` and lattice
//! spacing `a`. Site coordinates are integers `c[j] ∈ 0..n[j]`; the physical
//! position is centered so the box midpoint sits at the origin. Every matrix
//! in this crate is indexed by a flattened degree-of-freedom index
//! `site * q + m` where `m` runs over the internal fiber.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition of the discretized box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// All axes periodic with a uniform-flux link assignment.
    MagneticPeriodic,
    /// Open box: hopping stops at every face.
    DirichletAll,
    /// Strip: last axis open, all other axes periodic.
    DirichletLastAxis,
}

/// Grid bookkeeping shared by every operator kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Spatial dimension, 1 to 3.
    pub d: usize,
    /// Sites per axis.
    pub n: Vec<usize>,
    /// Lattice spacing (length units).
    pub a: f64,
    /// Internal fiber dimension per site.
    pub q: usize,
    pub boundary: Boundary,
}

impl Geometry {
    pub fn new(d: usize, n: Vec<usize>, a: f64, q: usize, boundary: Boundary) -> Result<Self> {
        if d == 0 || d > 3 {
            return Err(Error::Geometry(format!("dimension {d} unsupported (need 1..=3)")));
        }
        if n.len() != d {
            return Err(Error::Geometry(format!(
                "{} axis sizes given for dimension {d}",
                n.len()
            )));
        }
        if n.iter().any(|&nj| nj < 4) {
            return Err(Error::Geometry(format!("axis sizes {n:?} below the minimum of 4")));
        }
        if !(a > 0.0) {
            return Err(Error::Geometry(format!("spacing {a} must be positive")));
        }
        if q == 0 {
            return Err(Error::Geometry("internal fiber must have dimension >= 1".into()));
        }
        Ok(Geometry { d, n, a, q, boundary })
    }

    /// Number of lattice sites.
    pub fn sites(&self) -> usize {
        self.n.iter().product()
    }

    /// Total matrix dimension `sites * q`.
    pub fn dim(&self) -> usize {
        self.sites() * self.q
    }

    /// Box length along `axis`.
    pub fn length(&self, axis: usize) -> f64 {
        self.n[axis] as f64 * self.a
    }

    /// Volume of the full box.
    pub fn volume(&self) -> f64 {
        self.n.iter().map(|&nj| nj as f64 * self.a).product()
    }

    /// Whether hopping wraps around along `axis`.
    pub fn is_periodic(&self, axis: usize) -> bool {
        match self.boundary {
            Boundary::MagneticPeriodic => true,
            Boundary::DirichletAll => false,
            Boundary::DirichletLastAxis => axis + 1 < self.d,
        }
    }

    /// Flattened site index of integer coordinates (row-major, last axis fastest).
    pub fn site_index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for (axis, &c) in coords.iter().enumerate() {
            debug_assert!(c < self.n[axis]);
            idx = idx * self.n[axis] + c;
        }
        idx
    }

    /// Integer coordinates of a flattened site index.
    pub fn site_coords(&self, site: usize) -> Vec<usize> {
        let mut rem = site;
        let mut coords = vec![0usize; self.d];
        for axis in (0..self.d).rev() {
            coords[axis] = rem % self.n[axis];
            rem /= self.n[axis];
        }
        coords
    }

    /// Centered physical position of integer coordinate `c` on `axis`.
    pub fn position_of(&self, axis: usize, c: usize) -> f64 {
        self.a * (c as f64 - (self.n[axis] as f64 - 1.0) / 2.0)
    }

    /// Positions along `axis` for every degree of freedom (length `dim()`).
    pub fn dof_positions(&self, axis: usize) -> Array1<f64> {
        let sites = self.sites();
        let mut out = Array1::zeros(self.dim());
        for site in 0..sites {
            let x = self.position_of(axis, self.site_coords(site)[axis]);
            for m in 0..self.q {
                out[site * self.q + m] = x;
            }
        }
        out
    }

    /// Displacement `x_row - x_col` along `axis` between two integer
    /// coordinates, using the minimal image on periodic axes. Half-period
    /// ties resolve to the positive representative.
    pub fn displacement(&self, axis: usize, c_row: usize, c_col: usize) -> f64 {
        let nj = self.n[axis] as i64;
        let mut di = c_row as i64 - c_col as i64;
        if self.is_periodic(axis) {
            di = di.rem_euclid(nj);
            if 2 * di > nj {
                di -= nj;
            }
        }
        di as f64 * self.a
    }

    /// Dense matrix of displacements along `axis` at the degree-of-freedom
    /// level: entry `(r, c)` is `x_axis(r) - x_axis(c)` in the convention of
    /// [`Geometry::displacement`].
    pub fn displacement_matrix(&self, axis: usize) -> Array2<f64> {
        let sites = self.sites();
        let q = self.q;
        let nj = self.n[axis] as i64;
        let periodic = self.is_periodic(axis);
        // Per-pair displacement only depends on the two coordinates along
        // `axis`; precompute that small table first.
        let mut table = Array2::zeros((self.n[axis], self.n[axis]));
        for cr in 0..self.n[axis] {
            for cc in 0..self.n[axis] {
                let mut di = cr as i64 - cc as i64;
                if periodic {
                    di = di.rem_euclid(nj);
                    if 2 * di > nj {
                        di -= nj;
                    }
                }
                table[(cr, cc)] = di as f64 * self.a;
            }
        }
        let coord: Vec<usize> = (0..sites).map(|s| self.site_coords(s)[axis]).collect();
        let dim = self.dim();
        let mut out = Array2::zeros((dim, dim));
        for sr in 0..sites {
            for sc in 0..sites {
                let v = table[(coord[sr], coord[sc])];
                if v != 0.0 {
                    for mr in 0..q {
                        for mc in 0..q {
                            out[(sr * q + mr, sc * q + mc)] = v;
                        }
                    }
                }
            }
        }
        out
    }

    /// Euclidean distance between two sites with the displacement convention
    /// of [`Geometry::displacement`] applied per axis.
    pub fn site_distance(&self, s_row: usize, s_col: usize) -> f64 {
        let cr = self.site_coords(s_row);
        let cc = self.site_coords(s_col);
        (0..self.d)
            .map(|j| {
                let dx = self.displacement(j, cr[j], cc[j]);
                dx * dx
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Site mask of the central trace window: positions within
    /// `core_fraction` of the half-box per axis, with `margin` sites
    /// additionally excluded next to every open (non-periodic) face.
    pub fn core_site_mask(&self, core_fraction: f64, margin: usize) -> Result<Vec<bool>> {
        if !(core_fraction > 0.0 && core_fraction <= 1.0) {
            return Err(Error::Geometry(format!(
                "core_fraction {core_fraction} outside (0, 1]"
            )));
        }
        let sites = self.sites();
        let mut mask = vec![false; sites];
        let mut count = 0usize;
        for (site, slot) in mask.iter_mut().enumerate() {
            let coords = self.site_coords(site);
            let mut inside = true;
            for axis in 0..self.d {
                let x = self.position_of(axis, coords[axis]);
                let half = core_fraction * self.length(axis) / 2.0;
                if x.abs() > half + 1e-12 {
                    inside = false;
                    break;
                }
                if !self.is_periodic(axis) {
                    let c = coords[axis];
                    if c < margin || c + margin >= self.n[axis] {
                        inside = false;
                        break;
                    }
                }
            }
            if inside {
                *slot = true;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Geometry(format!(
                "trace window core_fraction={core_fraction} margin={margin} selects no sites"
            )));
        }
        Ok(mask)
    }

    /// Degree-of-freedom mask corresponding to [`Geometry::core_site_mask`].
    pub fn core_dof_mask(&self, core_fraction: f64, margin: usize) -> Result<Vec<bool>> {
        let site_mask = self.core_site_mask(core_fraction, margin)?;
        let mut mask = vec![false; self.dim()];
        for (site, &inside) in site_mask.iter().enumerate() {
            if inside {
                for m in 0..self.q {
                    mask[site * self.q + m] = true;
                }
            }
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom2(n: usize) -> Geometry {
        Geometry::new(2, vec![n, n], 1.0, 1, Boundary::DirichletAll).unwrap()
    }

    #[test]
    fn index_roundtrip() {
        let g = Geometry::new(3, vec![4, 5, 6], 0.5, 2, Boundary::MagneticPeriodic).unwrap();
        for site in 0..g.sites() {
            assert_eq!(g.site_index(&g.site_coords(site)), site);
        }
        assert_eq!(g.dim(), 4 * 5 * 6 * 2);
    }

    #[test]
    fn positions_are_centered() {
        let g = geom2(8);
        let xs = g.dof_positions(0);
        let sum: f64 = xs.iter().sum();
        assert!(sum.abs() < 1e-12);
        assert_eq!(g.position_of(0, 0), -3.5);
        assert_eq!(g.position_of(0, 7), 3.5);
    }

    #[test]
    fn minimal_image_ties_go_positive() {
        let g = Geometry::new(1, vec![8], 1.0, 1, Boundary::MagneticPeriodic).unwrap();
        assert_eq!(g.displacement(0, 4, 0), 4.0);
        assert_eq!(g.displacement(0, 0, 4), 4.0);
        assert_eq!(g.displacement(0, 5, 0), -3.0);
        assert_eq!(g.displacement(0, 0, 5), 3.0);
    }

    #[test]
    fn dirichlet_displacement_is_honest() {
        let g = geom2(8);
        assert_eq!(g.displacement(0, 7, 0), 7.0);
        assert_eq!(g.displacement(0, 0, 7), -7.0);
    }

    #[test]
    fn core_mask_counts() {
        let g = geom2(8);
        // core_fraction 0.5 keeps |x| <= 2 which is 4 coordinates per axis.
        let mask = g.core_site_mask(0.5, 0).unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 16);
        // margin 1 shaves the outermost ring of the open box.
        let mask = g.core_site_mask(1.0, 1).unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 36);
        assert!(g.core_site_mask(0.01, 0).is_err());
    }

    #[test]
    fn strip_periodicity() {
        let g = Geometry::new(2, vec![8, 4], 1.0, 1, Boundary::DirichletLastAxis).unwrap();
        assert!(g.is_periodic(0));
        assert!(!g.is_periodic(1));
    }
}
