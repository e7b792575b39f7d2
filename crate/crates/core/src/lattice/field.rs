use serde::{Deserialize, Serialize};

use super::geometry::LatticeBox;
use crate::error::{invalid, PamError, Result};

/// Extended-real function on a box. `-inf` is allowed, `+inf` and NaN are not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    lattice: LatticeBox,
    values: Vec<f64>,
}

impl Field {
    pub fn new(lattice: LatticeBox, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(PamError::SizeMismatch { expected: lattice.len(), found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(invalid("values", format!("site {:?} holds {}", lattice.point(i), values[i])));
        }
        Ok(Self { lattice, values })
    }

    pub fn constant(lattice: LatticeBox, c: f64) -> Self {
        let n = lattice.len();
        Self { lattice, values: vec![c; n] }
    }

    /// Indicator of the box center.
    pub fn delta(lattice: LatticeBox) -> Self {
        let mut f = Self::constant(lattice, 0.0);
        let c = f.lattice.center_index();
        f.values[c] = 1.0;
        f
    }

    /// Builds a field from a function of the offset (relative to the center).
    pub fn from_fn(lattice: LatticeBox, mut f: impl FnMut(&[i64]) -> f64) -> Result<Self> {
        let values = (0..lattice.len()).map(|i| f(&lattice.offsets(i))).collect();
        Self::new(lattice, values)
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Value at an offset from the center, `None` if off the box.
    pub fn at_offset(&self, offset: &[i64]) -> Option<f64> {
        self.lattice.index_of_offset(offset).map(|i| self.values[i])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.lattice.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// `Δf(x) = Σ_{|y-x|=1} [f(y) - f(x)]`, off-box neighbours contributing zero
    /// under zero-Dirichlet and wrapping under periodic boundaries.
    pub fn apply_laplacian(&self) -> Result<Self> {
        if let Some(i) = self.values.iter().position(|v| *v == f64::NEG_INFINITY) {
            return Err(PamError::SingularSite { site: self.lattice.point(i) });
        }
        let d = self.lattice.dim();
        let out = (0..self.len())
            .map(|i| {
                let fx = self.values[i];
                let nb: f64 = self.lattice.neighbors(i)[..2 * d].iter().map(|n| n.map_or(0.0, |j| self.values[j])).sum();
                nb - 2.0 * d as f64 * fx
            })
            .collect();
        Ok(Self { lattice: self.lattice.clone(), values: out })
    }

    /// Euclidean inner product over the box.
    pub fn dot(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BoundaryMode;

    #[test]
    fn constant_is_harmonic_on_torus() {
        let b = LatticeBox::torus(2, 3).unwrap();
        let lap = Field::constant(b, 2.5).apply_laplacian().unwrap();
        assert!(lap.values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn delta_stencil_dirichlet() {
        let b = LatticeBox::new(1, 1).unwrap();
        let lap = Field::delta(b).apply_laplacian().unwrap();
        assert_eq!(lap.values(), &[1.0, -2.0, 1.0]);
    }

    #[test]
    fn dirichlet_diagonal_is_minus_2d() {
        let b = LatticeBox::new(3, 2).unwrap();
        let lap = Field::delta(b).apply_laplacian().unwrap();
        assert_eq!(lap.get(lap.lattice().center_index()), -6.0);
        let ones = Field::constant(LatticeBox::torus(3, 2).unwrap(), 1.0);
        assert!(ones.apply_laplacian().unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn singular_site_is_named() {
        let b = LatticeBox::new(1, 2).unwrap();
        let f = Field::from_fn(b, |x| if x[0] == 1 { f64::NEG_INFINITY } else { 0.0 }).unwrap();
        match f.apply_laplacian() {
            Err(PamError::SingularSite { site }) => assert_eq!(site, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_plus_infinity() {
        let b = LatticeBox::new(1, 0).unwrap();
        assert!(Field::new(b.clone(), vec![f64::INFINITY]).is_err());
        assert!(Field::new(b.with_boundary(BoundaryMode::Periodic), vec![1.0, 2.0]).is_err());
    }
}
