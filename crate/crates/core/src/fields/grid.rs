use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform node grid on the unit cell `[0, 1)^d` with periodic wrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    d: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidGrid(format!("dimension must be 1, 2 or 3, got {d}")));
        }
        if n < 8 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "torus needs an even number of points per axis, at least 8; got {n}"
            )));
        }
        if (1.0 / n as f64) * n as f64 != 1.0 {
            return Err(Error::InvalidGrid(format!("spacing 1/{n} is not exact")));
        }
        Ok(TorusGrid { d, n })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }
}

/// Uniform node grid on `[lo, hi]^d` with `n` intervals per axis, so `n + 1`
/// nodes per axis including both boundary faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    d: usize,
    n: usize,
    lo: f64,
    hi: f64,
}

impl BoxGrid {
    /// Symmetric box `[-L, L]^d`. `L` must be a whole number of periods and `n`
    /// must be even (so the origin is a node) and divisible by `2L` (so every
    /// period holds the same number of nodes).
    pub fn centered(d: usize, half_width: f64, n: usize) -> Result<Self> {
        if half_width < 1.0 || half_width.fract() != 0.0 {
            return Err(Error::InvalidGrid(format!(
                "box half-width must be a whole number of periods >= 1, got {half_width}"
            )));
        }
        if !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "box needs an even number of intervals so the origin is a node, got {n}"
            )));
        }
        let periods = 2 * half_width as usize;
        if !n.is_multiple_of(periods) {
            return Err(Error::InvalidGrid(format!(
                "{n} intervals do not split evenly over {periods} periods"
            )));
        }
        Self::domain(d, -half_width, half_width, n)
    }

    /// Box `[lo, hi]^d`, used for bounded domains of the multiscale problems.
    pub fn domain(d: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidGrid(format!("dimension must be 1, 2 or 3, got {d}")));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidGrid(format!("empty box [{lo}, {hi}]")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("box needs at least 2 intervals, got {n}")));
        }
        Ok(BoxGrid { d, n, lo, hi })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of intervals per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Half-width `L` of a centered box.
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    /// Nodes per unit length; for centered boxes, nodes per period.
    pub fn nodes_per_unit(&self) -> f64 {
        1.0 / self.h()
    }

    pub fn is_centered(&self) -> bool {
        self.lo == -self.hi
    }
}

/// Either grid kind; fields carry one of these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Grid {
    Torus(TorusGrid),
    Box(BoxGrid),
}

impl From<TorusGrid> for Grid {
    fn from(g: TorusGrid) -> Self {
        Grid::Torus(g)
    }
}

impl From<BoxGrid> for Grid {
    fn from(g: BoxGrid) -> Self {
        Grid::Box(g)
    }
}

impl Grid {
    pub fn d(&self) -> usize {
        match self {
            Grid::Torus(g) => g.d,
            Grid::Box(g) => g.d,
        }
    }

    /// Nodes per axis.
    pub fn axis_len(&self) -> usize {
        match self {
            Grid::Torus(g) => g.n,
            Grid::Box(g) => g.n + 1,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.axis_len(); self.d()]
    }

    pub fn num_nodes(&self) -> usize {
        self.axis_len().pow(self.d() as u32)
    }

    pub fn h(&self) -> f64 {
        match self {
            Grid::Torus(g) => g.h(),
            Grid::Box(g) => g.h(),
        }
    }

    /// Volume weight `h^d` of one node.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d() as i32)
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Grid::Torus(_))
    }

    pub fn as_box(&self) -> Option<&BoxGrid> {
        match self {
            Grid::Box(b) => Some(b),
            Grid::Torus(_) => None,
        }
    }

    pub fn as_torus(&self) -> Option<&TorusGrid> {
        match self {
            Grid::Torus(t) => Some(t),
            Grid::Box(_) => None,
        }
    }

    /// Coordinate of node index `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        match self {
            Grid::Torus(g) => i as f64 * g.h(),
            Grid::Box(g) => g.lo + i as f64 * g.h(),
        }
    }

    /// Multi-index of a flat node position (last axis fastest), padded with
    /// zeros to length 3.
    pub fn index(&self, flat: usize) -> [usize; 3] {
        let n = self.axis_len();
        let mut idx = [0usize; 3];
        let mut rem = flat;
        for axis in (0..self.d()).rev() {
            idx[axis] = rem % n;
            rem /= n;
        }
        idx
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        let n = self.axis_len();
        idx[..self.d()].iter().fold(0, |acc, &i| acc * n + i)
    }

    /// Physical position of a node, padded with zeros to length 3.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let idx = self.index(flat);
        let mut x = [0.0; 3];
        for axis in 0..self.d() {
            x[axis] = self.coord(idx[axis]);
        }
        x
    }

    /// All node positions in flat order.
    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.num_nodes()).map(|k| self.point(k)).collect()
    }

    /// True for nodes on the outer boundary of a box grid; never on a torus.
    pub fn is_boundary(&self, flat: usize) -> bool {
        match self {
            Grid::Torus(_) => false,
            Grid::Box(g) => {
                let idx = self.index(flat);
                idx[..g.d].iter().any(|&i| i == 0 || i == g.n)
            }
        }
    }

    /// Flat positions of interior nodes (all nodes on a torus).
    pub fn interior(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&k| !self.is_boundary(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_invariants() {
        assert!(TorusGrid::new(2, 6).is_err());
        assert!(TorusGrid::new(2, 9).is_err());
        assert!(TorusGrid::new(4, 16).is_err());
        let g = TorusGrid::new(3, 16).unwrap();
        assert_eq!(g.h() * g.n() as f64, 1.0);
    }

    #[test]
    fn centered_box_contains_origin_and_whole_periods() {
        assert!(BoxGrid::centered(1, 0.5, 16).is_err());
        assert!(BoxGrid::centered(1, 2.5, 20).is_err());
        assert!(BoxGrid::centered(1, 2.0, 18).is_err());
        let b = BoxGrid::centered(2, 4.0, 64).unwrap();
        let g = Grid::from(b);
        let mid = g.flat(&[32, 32]);
        assert_eq!(g.point(mid), [0.0, 0.0, 0.0]);
        assert_eq!(b.nodes_per_unit(), 8.0);
    }

    #[test]
    fn index_roundtrip_and_boundary() {
        let g = Grid::from(BoxGrid::centered(3, 1.0, 4).unwrap());
        assert_eq!(g.num_nodes(), 125);
        for k in 0..g.num_nodes() {
            assert_eq!(g.flat(&g.index(k)), k);
        }
        assert_eq!(g.interior().len(), 27);
        assert!(g.is_boundary(0));
    }
}
