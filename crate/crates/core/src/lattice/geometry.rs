use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Boundary treatment for operators acting on a finite box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Off-box neighbours carry the value zero.
    ZeroDirichlet,
    /// Opposite faces are identified (discrete torus).
    Periodic,
}

/// The box `center + [-R, R]^d` in `Z^d`.
///
/// Sites are indexed row-major with axis 0 the slowest-varying coordinate:
/// `index = sum_i (x_i - c_i + R) * (2R+1)^(d-1-i)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeBox {
    dim: usize,
    radius: usize,
    center: Vec<i64>,
    boundary: BoundaryMode,
}

impl LatticeBox {
    /// Zero-Dirichlet box of radius `radius` centred at the origin.
    pub fn new(dim: usize, radius: usize) -> Result<Self> {
        Self::with_center(dim, radius, vec![0; dim], BoundaryMode::ZeroDirichlet)
    }

    /// Periodic box (torus of side `2R+1`) centred at the origin.
    pub fn torus(dim: usize, radius: usize) -> Result<Self> {
        Self::with_center(dim, radius, vec![0; dim], BoundaryMode::Periodic)
    }

    pub fn with_center(dim: usize, radius: usize, center: Vec<i64>, boundary: BoundaryMode) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        if center.len() != dim {
            return Err(invalid("center", "center must have d coordinates"));
        }
        let side = 2 * radius + 1;
        if (side as f64).powi(dim as i32) > 1e9 {
            return Err(invalid("R", "box has more than 1e9 sites"));
        }
        Ok(Self { dim, radius, center, boundary })
    }

    pub fn with_boundary(mut self, boundary: BoundaryMode) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn center(&self) -> &[i64] {
        &self.center
    }

    pub fn boundary(&self) -> BoundaryMode {
        self.boundary
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Number of sites, `(2R+1)^d`.
    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Offsets from the center (each in `[-R, R]`) of site `index`.
    pub fn offsets(&self, index: usize) -> Vec<i64> {
        let side = self.side();
        let mut out = vec![0i64; self.dim];
        let mut rem = index;
        for axis in (0..self.dim).rev() {
            out[axis] = (rem % side) as i64 - self.radius as i64;
            rem /= side;
        }
        out
    }

    /// Absolute lattice point of site `index`.
    pub fn point(&self, index: usize) -> Vec<i64> {
        let mut p = self.offsets(index);
        for (x, c) in p.iter_mut().zip(&self.center) {
            *x += c;
        }
        p
    }

    /// Site index of the offset vector (relative to the center). Periodic boxes
    /// wrap; Dirichlet boxes return `None` off the box.
    pub fn index_of_offset(&self, offset: &[i64]) -> Option<usize> {
        debug_assert_eq!(offset.len(), self.dim);
        let side = self.side() as i64;
        let r = self.radius as i64;
        let mut idx = 0usize;
        for &o in offset {
            let mut k = o + r;
            match self.boundary {
                BoundaryMode::ZeroDirichlet => {
                    if k < 0 || k >= side {
                        return None;
                    }
                }
                BoundaryMode::Periodic => k = k.rem_euclid(side),
            }
            idx = idx * side as usize + k as usize;
        }
        Some(idx)
    }

    /// Site index of an absolute lattice point.
    pub fn index_of(&self, point: &[i64]) -> Option<usize> {
        let offset: Vec<i64> = point.iter().zip(&self.center).map(|(x, c)| x - c).collect();
        self.index_of_offset(&offset)
    }

    pub fn center_index(&self) -> usize {
        (self.len() - 1) / 2
    }

    /// Whether the absolute point lies inside `center + [-R, R]^d` (no wrapping).
    pub fn contains(&self, point: &[i64]) -> bool {
        point.iter().zip(&self.center).all(|(x, c)| (x - c).abs() <= self.radius as i64)
    }

    /// The `2d` nearest neighbours of `index`, ordered axis by axis (`-e_i`,
    /// then `+e_i`). `None` marks an off-box neighbour under zero-Dirichlet.
    pub fn neighbors(&self, index: usize) -> [Option<usize>; 2 * MAX_DIM] {
        let mut out = [None; 2 * MAX_DIM];
        let side = self.side();
        let mut stride = 1usize;
        for axis in (0..self.dim).rev() {
            let k = (index / stride) % side;
            let minus = if k > 0 {
                Some(index - stride)
            } else if self.boundary == BoundaryMode::Periodic {
                Some(index + (side - 1) * stride)
            } else {
                None
            };
            let plus = if k + 1 < side {
                Some(index + stride)
            } else if self.boundary == BoundaryMode::Periodic {
                Some(index - (side - 1) * stride)
            } else {
                None
            };
            out[2 * axis] = minus;
            out[2 * axis + 1] = plus;
            stride *= side;
        }
        out
    }

    /// Sup-norm distance between two sites (torus distance for periodic boxes).
    pub fn distance(&self, a: usize, b: usize) -> i64 {
        let (pa, pb) = (self.offsets(a), self.offsets(b));
        let side = self.side() as i64;
        pa.iter()
            .zip(&pb)
            .map(|(x, y)| {
                let d = (x - y).abs();
                match self.boundary {
                    BoundaryMode::ZeroDirichlet => d,
                    BoundaryMode::Periodic => d.min(side - d),
                }
            })
            .max()
            .unwrap_or(0)
    }
}

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 8;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_count_and_bijection() {
        let b = LatticeBox::with_center(3, 2, vec![1, -1, 4], BoundaryMode::ZeroDirichlet).unwrap();
        assert_eq!(b.len(), 125);
        for i in 0..b.len() {
            let p = b.point(i);
            assert!(b.contains(&p));
            assert_eq!(b.index_of(&p), Some(i));
        }
        assert_eq!(b.point(b.center_index()), vec![1, -1, 4]);
    }

    #[test]
    fn row_major_axis_order() {
        let b = LatticeBox::new(2, 1).unwrap();
        assert_eq!(b.offsets(0), vec![-1, -1]);
        assert_eq!(b.offsets(1), vec![-1, 0]);
        assert_eq!(b.offsets(3), vec![0, -1]);
    }

    #[test]
    fn neighbors_respect_boundary() {
        let d = LatticeBox::new(1, 1).unwrap();
        assert_eq!(&d.neighbors(0)[..2], &[None, Some(1)]);
        let p = d.clone().with_boundary(BoundaryMode::Periodic);
        assert_eq!(&p.neighbors(0)[..2], &[Some(2), Some(1)]);
        let b2 = LatticeBox::torus(2, 1).unwrap();
        let n = b2.neighbors(0);
        assert_eq!(&n[..4], &[Some(6), Some(3), Some(2), Some(1)]);
    }

    #[test]
    fn torus_distance_wraps() {
        let b = LatticeBox::torus(1, 3).unwrap();
        assert_eq!(b.distance(0, 6), 1);
        assert_eq!(b.distance(0, 3), 3);
    }
}
