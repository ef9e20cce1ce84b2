use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Grid;

/// Structural flag carried by rank-2 fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetry {
    General,
    Symmetric,
    Skew,
}

/// Scalar (rank 0), vector (rank 1) or matrix (rank 2) samples on a grid.
///
/// Values are stored component-major: component `c` occupies one contiguous
/// block of `num_nodes` values in the grid's row-major node order. Matrix
/// component `(i, j)` is `c = i d + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    rank: usize,
    symmetry: Symmetry,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: impl Into<Grid>, rank: usize) -> Self {
        let grid = grid.into();
        assert!(rank <= 2, "rank must be 0, 1 or 2");
        let ncomp = grid.d().pow(rank as u32);
        Field {
            data: vec![0.0; ncomp * grid.num_nodes()],
            grid,
            rank,
            symmetry: Symmetry::General,
        }
    }

    /// Build from per-component node arrays.
    pub fn from_components(grid: impl Into<Grid>, rank: usize, comps: Vec<Vec<f64>>) -> Result<Self> {
        let grid = grid.into();
        if rank > 2 {
            return Err(Error::RankMismatch(format!("rank {rank} is not supported")));
        }
        let ncomp = grid.d().pow(rank as u32);
        if comps.len() != ncomp {
            return Err(Error::RankMismatch(format!(
                "rank {rank} in dimension {} needs {ncomp} components, got {}",
                grid.d(),
                comps.len()
            )));
        }
        let nn = grid.num_nodes();
        if let Some(bad) = comps.iter().find(|c| c.len() != nn) {
            return Err(Error::GridMismatch(format!(
                "component has {} values but the grid has {nn} nodes",
                bad.len()
            )));
        }
        let field = Field {
            grid,
            rank,
            symmetry: Symmetry::General,
            data: comps.concat(),
        };
        field.check_finite()?;
        Ok(field)
    }

    pub fn scalar(grid: impl Into<Grid>, values: Vec<f64>) -> Result<Self> {
        Self::from_components(grid, 0, vec![values])
    }

    pub fn scalar_fn(grid: impl Into<Grid>, f: impl Fn(&[f64; 3]) -> f64) -> Self {
        let grid = grid.into();
        let data = (0..grid.num_nodes()).map(|k| f(&grid.point(k))).collect();
        Field {
            grid,
            rank: 0,
            symmetry: Symmetry::General,
            data,
        }
    }

    pub fn vector_fn(grid: impl Into<Grid>, f: impl Fn(&[f64; 3]) -> [f64; 3]) -> Self {
        let grid = grid.into();
        let d = grid.d();
        let nn = grid.num_nodes();
        let mut data = vec![0.0; d * nn];
        for k in 0..nn {
            let v = f(&grid.point(k));
            for i in 0..d {
                data[i * nn + k] = v[i];
            }
        }
        Field {
            grid,
            rank: 1,
            symmetry: Symmetry::General,
            data,
        }
    }

    pub fn matrix_fn(grid: impl Into<Grid>, f: impl Fn(&[f64; 3]) -> [[f64; 3]; 3]) -> Self {
        let grid = grid.into();
        let d = grid.d();
        let nn = grid.num_nodes();
        let mut data = vec![0.0; d * d * nn];
        for k in 0..nn {
            let m = f(&grid.point(k));
            for i in 0..d {
                for j in 0..d {
                    data[(i * d + j) * nn + k] = m[i][j];
                }
            }
        }
        Field {
            grid,
            rank: 2,
            symmetry: Symmetry::General,
            data,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn d(&self) -> usize {
        self.grid.d()
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn num_components(&self) -> usize {
        self.d().pow(self.rank as u32)
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let nn = self.num_nodes();
        &self.data[c * nn..(c + 1) * nn]
    }

    /// Mutable access to one component. Clears the symmetry flag, since a
    /// single-component edit can break it.
    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        self.symmetry = Symmetry::General;
        let nn = self.num_nodes();
        &mut self.data[c * nn..(c + 1) * nn]
    }

    /// Matrix entry `(i, j)` as a node array.
    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        debug_assert_eq!(self.rank, 2);
        self.component(i * self.d() + j)
    }

    pub fn components(&self) -> Vec<Vec<f64>> {
        (0..self.num_components()).map(|c| self.component(c).to_vec()).collect()
    }

    /// Value of a scalar field at a node.
    pub fn at(&self, node: usize) -> f64 {
        self.data[node]
    }

    /// Frobenius magnitude of the value at a node.
    pub fn magnitude(&self, node: usize) -> f64 {
        let nn = self.num_nodes();
        (0..self.num_components())
            .map(|c| self.data[c * nn + node].powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(p) => Err(Error::NumericFault(format!(
                "non-finite value at flat position {p}"
            ))),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            rank: self.rank,
            symmetry: self.symmetry,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    fn check_same(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
        if self.rank != other.rank {
            return Err(Error::RankMismatch(format!(
                "rank {} vs rank {}",
                self.rank, other.rank
            )));
        }
        Ok(())
    }

    fn zip(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check_same(other)?;
        let symmetry = if self.symmetry == other.symmetry {
            self.symmetry
        } else {
            Symmetry::General
        };
        Ok(Field {
            grid: self.grid,
            rank: self.rank,
            symmetry,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip(other, |a, b| a - b)
    }

    /// Multiply every component by a scalar field on the same grid.
    pub fn mul_scalar_field(&self, s: &Field) -> Result<Field> {
        if s.rank != 0 || s.grid != self.grid {
            return Err(Error::RankMismatch("multiplier must be a scalar field on the same grid".into()));
        }
        let nn = self.num_nodes();
        let mut out = self.clone();
        for c in 0..self.num_components() {
            for k in 0..nn {
                out.data[c * nn + k] *= s.data[k];
            }
        }
        Ok(out)
    }

    /// Replace a rank-2 field by `(M + Mᵀ)/2` and flag it symmetric.
    pub fn symmetrize(&mut self) -> Result<()> {
        self.mirror(1.0)?;
        self.symmetry = Symmetry::Symmetric;
        Ok(())
    }

    /// Replace a rank-2 field by `(M - Mᵀ)/2` and flag it skew.
    pub fn antisymmetrize(&mut self) -> Result<()> {
        self.mirror(-1.0)?;
        self.symmetry = Symmetry::Skew;
        Ok(())
    }

    fn mirror(&mut self, sign: f64) -> Result<()> {
        if self.rank != 2 {
            return Err(Error::RankMismatch("only rank-2 fields carry symmetry".into()));
        }
        let d = self.d();
        let nn = self.num_nodes();
        for i in 0..d {
            for j in i..d {
                for k in 0..nn {
                    let a = self.data[(i * d + j) * nn + k];
                    let b = self.data[(j * d + i) * nn + k];
                    let upper = 0.5 * (a + sign * b);
                    self.data[(i * d + j) * nn + k] = upper;
                    self.data[(j * d + i) * nn + k] = sign * upper;
                }
            }
        }
        Ok(())
    }

    /// Set a symmetry flag after checking it holds exactly.
    pub fn set_symmetry(&mut self, symmetry: Symmetry) -> Result<()> {
        if symmetry != Symmetry::General {
            if self.rank != 2 {
                return Err(Error::RankMismatch("only rank-2 fields carry symmetry".into()));
            }
            let sign = if symmetry == Symmetry::Symmetric { 1.0 } else { -1.0 };
            let d = self.d();
            let nn = self.num_nodes();
            for i in 0..d {
                for j in i..d {
                    for k in 0..nn {
                        if self.data[(i * d + j) * nn + k] != sign * self.data[(j * d + i) * nn + k] {
                            return Err(Error::InvalidParameter(format!(
                                "entry ({i},{j}) violates the requested symmetry"
                            )));
                        }
                    }
                }
            }
        }
        self.symmetry = symmetry;
        Ok(())
    }

    pub(crate) fn from_raw(grid: Grid, rank: usize, symmetry: Symmetry, data: Vec<f64>) -> Field {
        debug_assert_eq!(data.len(), grid.d().pow(rank as u32) * grid.num_nodes());
        Field {
            grid,
            rank,
            symmetry,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::TorusGrid;

    fn grid() -> TorusGrid {
        TorusGrid::new(2, 8).unwrap()
    }

    #[test]
    fn component_layout() {
        let f = Field::vector_fn(grid(), |x| [x[0], 10.0 + x[1], 0.0]);
        assert_eq!(f.num_components(), 2);
        // node (1, 2) has flat index 10
        assert_eq!(f.component(0)[10], 0.125);
        assert_eq!(f.component(1)[10], 10.25);
    }

    #[test]
    fn symmetrize_and_skew_flags() {
        let mut m = Field::matrix_fn(grid(), |x| [[1.0, x[0], 0.0], [0.0, 2.0, 0.0], [0.0; 3]]);
        let mut s = m.clone();
        s.symmetrize().unwrap();
        assert_eq!(s.symmetry(), Symmetry::Symmetric);
        assert_eq!(s.entry(0, 1), s.entry(1, 0));
        m.antisymmetrize().unwrap();
        assert!(m.entry(0, 0).iter().all(|&v| v == 0.0));
        for (a, b) in m.entry(0, 1).iter().zip(m.entry(1, 0)) {
            assert_eq!(*a, -*b);
        }
        let mut g = Field::matrix_fn(grid(), |_| [[0.0, 1.0, 0.0], [0.0; 3], [0.0; 3]]);
        assert!(g.set_symmetry(Symmetry::Symmetric).is_err());
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        let g = grid();
        assert!(Field::scalar(g, vec![f64::NAN; 64]).is_err());
        assert!(Field::scalar(g, vec![0.0; 63]).is_err());
        assert!(Field::from_components(g, 1, vec![vec![0.0; 64]]).is_err());
    }

    #[test]
    fn frobenius_magnitude() {
        let f = Field::vector_fn(grid(), |_| [3.0, 4.0, 0.0]);
        assert_eq!(f.magnitude(5), 5.0);
    }
}
