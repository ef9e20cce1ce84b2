use crate::error::{Error, Result};
use crate::fields::{Field, Grid, Symmetry};
use crate::numerics::spectral::SpectralOps;
use crate::numerics::stencil::AxisStencils;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivKind {
    Grad,
    Hess,
    Div,
}

/// Derivative along one axis on either grid kind.
pub(crate) enum AxisDerivs {
    Spectral(SpectralOps),
    Stencil { st: AxisStencils, shape: Vec<usize> },
}

impl AxisDerivs {
    pub(crate) fn new(grid: &Grid, order: usize) -> Self {
        match grid {
            Grid::Torus(t) => AxisDerivs::Spectral(SpectralOps::new(t.d(), t.n())),
            Grid::Box(b) => AxisDerivs::Stencil {
                st: AxisStencils::dirichlet(b.n(), b.h(), order),
                shape: grid.shape(),
            },
        }
    }

    pub(crate) fn d1(&self, u: &[f64], axis: usize) -> Vec<f64> {
        match self {
            AxisDerivs::Spectral(s) => s.d1(u, axis),
            AxisDerivs::Stencil { st, shape } => st.d1.apply(u, shape, axis),
        }
    }

    pub(crate) fn d2(&self, u: &[f64], axis: usize) -> Vec<f64> {
        match self {
            AxisDerivs::Spectral(s) => s.d2(u, axis),
            AxisDerivs::Stencil { st, shape } => st.d2.apply(u, shape, axis),
        }
    }
}

/// Discrete gradient, Hessian or divergence.
///
/// Spectral on a torus. On a box: second-order centered differences in the
/// interior and second-order one-sided differences on the boundary faces.
/// For a rank-2 field the divergence is `(div M)_j = Σ_i ∂_i M_ij`. Hessians
/// come back symmetrized and flagged symmetric.
pub fn differentiate(f: &Field, kind: DerivKind) -> Result<Field> {
    differentiate_with_order(f, kind, 2)
}

/// As [`differentiate`], with a chosen even stencil order on box grids
/// (ignored on tori).
pub fn differentiate_with_order(f: &Field, kind: DerivKind, order: usize) -> Result<Field> {
    if order < 2 || !order.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("stencil order must be even and >= 2, got {order}")));
    }
    let grid = *f.grid();
    let d = grid.d();
    let ops = AxisDerivs::new(&grid, order);
    let out = match kind {
        DerivKind::Grad => {
            require_rank(f, &[0], "gradient")?;
            let u = f.component(0);
            let comps = (0..d).map(|i| ops.d1(u, i)).collect();
            Field::from_raw(grid, 1, Symmetry::General, concat(comps))
        }
        DerivKind::Hess => {
            require_rank(f, &[0], "Hessian")?;
            let u = f.component(0);
            let du: Vec<Vec<f64>> = (0..d).map(|i| ops.d1(u, i)).collect();
            let nn = grid.num_nodes();
            let mut data = vec![0.0; d * d * nn];
            for i in 0..d {
                let dii = ops.d2(u, i);
                data[(i * d + i) * nn..(i * d + i + 1) * nn].copy_from_slice(&dii);
                for j in i + 1..d {
                    let a = ops.d1(&du[j], i);
                    let b = ops.d1(&du[i], j);
                    for k in 0..nn {
                        let v = 0.5 * (a[k] + b[k]);
                        data[(i * d + j) * nn + k] = v;
                        data[(j * d + i) * nn + k] = v;
                    }
                }
            }
            Field::from_raw(grid, 2, Symmetry::Symmetric, data)
        }
        DerivKind::Div => {
            require_rank(f, &[1, 2], "divergence")?;
            let nn = grid.num_nodes();
            if f.rank() == 1 {
                let mut acc = vec![0.0; nn];
                for i in 0..d {
                    add_into(&mut acc, &ops.d1(f.component(i), i));
                }
                Field::from_raw(grid, 0, Symmetry::General, acc)
            } else {
                let mut comps = Vec::with_capacity(d);
                for j in 0..d {
                    let mut acc = vec![0.0; nn];
                    for i in 0..d {
                        add_into(&mut acc, &ops.d1(f.entry(i, j), i));
                    }
                    comps.push(acc);
                }
                Field::from_raw(grid, 1, Symmetry::General, concat(comps))
            }
        }
    };
    out.check_finite()?;
    Ok(out)
}

/// Discrete cell average `h^d Σ f` of each component of a torus field.
pub fn mean(f: &Field) -> Result<Vec<f64>> {
    if !f.grid().is_torus() {
        return Err(Error::InvalidGrid("cell averages are defined on torus grids only".into()));
    }
    f.check_finite()?;
    let w = f.grid().cell_volume();
    Ok((0..f.num_components())
        .map(|c| f.component(c).iter().sum::<f64>() * w)
        .collect())
}

fn require_rank(f: &Field, allowed: &[usize], what: &str) -> Result<()> {
    if allowed.contains(&f.rank()) {
        Ok(())
    } else {
        Err(Error::RankMismatch(format!(
            "{what} is not defined for a rank-{} field",
            f.rank()
        )))
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn concat(comps: Vec<Vec<f64>>) -> Vec<f64> {
    comps.concat()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{BoxGrid, TorusGrid};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn gradient_of_constant_vanishes() {
        let f = Field::scalar_fn(TorusGrid::new(2, 16).unwrap(), |_| 3.5);
        let g = differentiate(&f, DerivKind::Grad).unwrap();
        assert!(g.max_abs() < 1e-12);
        let b = Field::scalar_fn(BoxGrid::centered(2, 1.0, 8).unwrap(), |_| 3.5);
        assert!(differentiate(&b, DerivKind::Grad).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn spectral_gradient_of_sine() {
        let g = TorusGrid::new(2, 64).unwrap();
        let f = Field::scalar_fn(g, |x| (2.0 * PI * x[0]).sin());
        let df = differentiate(&f, DerivKind::Grad).unwrap();
        let nn = df.num_nodes();
        let grid = *df.grid();
        for k in 0..nn {
            let x = grid.point(k);
            assert!((df.component(0)[k] - 2.0 * PI * (2.0 * PI * x[0]).cos()).abs() <= 1e-10);
            assert!(df.component(1)[k].abs() <= 1e-10);
        }
    }

    #[test]
    fn box_hessian_exact_on_quadratic() {
        let g = BoxGrid::centered(1, 2.0, 64).unwrap();
        let f = Field::scalar_fn(g, |x| x[0] * x[0]);
        let h = differentiate(&f, DerivKind::Hess).unwrap();
        assert_eq!(h.symmetry(), Symmetry::Symmetric);
        let grid = *h.grid();
        for k in grid.interior() {
            assert!((h.component(0)[k] - 2.0).abs() <= 1e-10);
        }
        // one-sided boundary rows are second order, still exact on quadratics
        assert!((h.component(0)[0] - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn rank_errors() {
        let g = TorusGrid::new(1, 8).unwrap();
        let v = Field::zeros(g, 1);
        assert!(matches!(differentiate(&v, DerivKind::Grad), Err(Error::RankMismatch(_))));
        let s = Field::zeros(g, 0);
        assert!(matches!(differentiate(&s, DerivKind::Div), Err(Error::RankMismatch(_))));
    }

    #[test]
    fn overflow_is_a_numeric_fault() {
        let g = BoxGrid::centered(1, 1.0, 8).unwrap();
        let f = Field::scalar_fn(g, |x| if x[0] > 0.0 { 1e308 } else { -1e308 });
        assert!(matches!(differentiate(&f, DerivKind::Hess), Err(Error::NumericFault(_))));
    }

    #[test]
    fn means() {
        let g = TorusGrid::new(1, 64).unwrap();
        assert!((mean(&Field::scalar_fn(g, |_| 1.0)).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(mean(&Field::scalar_fn(g, |x| (2.0 * PI * x[0]).sin())).unwrap()[0].abs() < 1e-14);
        let s2 = mean(&Field::scalar_fn(g, |x| (2.0 * PI * x[0]).sin().powi(2))).unwrap()[0];
        // oracle: Gauss-Legendre quadrature of sin²(2πx)
        let q = crate::numerics::quadrature::Composite::default();
        let exact = q.integrate(&|x: f64| (2.0 * PI * x).sin().powi(2), 0.0, 1.0, 8);
        assert!((s2 - exact).abs() < 1e-12);
        assert!(mean(&Field::zeros(BoxGrid::centered(1, 1.0, 8).unwrap(), 0)).is_err());
    }

    #[test]
    fn box_divergence_of_matrix_uses_columns() {
        let g = BoxGrid::centered(2, 1.0, 16).unwrap();
        // M = [[x, y], [0, x y]] -> (div M)_0 = 1, (div M)_1 = x
        let m = Field::matrix_fn(g, |x| [[x[0], x[1], 0.0], [0.0, x[0] * x[1], 0.0], [0.0; 3]]);
        let dv = differentiate(&m, DerivKind::Div).unwrap();
        let grid = *dv.grid();
        for k in 0..grid.num_nodes() {
            let x = grid.point(k);
            assert!((dv.component(0)[k] - 1.0).abs() < 1e-10);
            assert!((dv.component(1)[k] - x[0]).abs() < 1e-10);
        }
    }

    fn trig_poly(c: &[f64; 6]) -> impl Fn(&[f64; 3]) -> f64 + '_ {
        move |x: &[f64; 3]| {
            let (a, b) = (2.0 * PI * x[0], 2.0 * PI * x[1]);
            c[0] * a.sin() + c[1] * (2.0 * b).cos() + c[2] * (a + b).sin() + c[3] * (3.0 * a - b).cos()
                + c[4] * (a).cos() * (b).sin() + c[5]
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn grad_then_div_is_laplacian(c in prop::array::uniform6(-2.0f64..2.0)) {
            let g = TorusGrid::new(2, 32).unwrap();
            let f = Field::scalar_fn(g, trig_poly(&c));
            let lap1 = differentiate(&differentiate(&f, DerivKind::Grad).unwrap(), DerivKind::Div).unwrap();
            let h = differentiate(&f, DerivKind::Hess).unwrap();
            let nn = f.num_nodes();
            for k in 0..nn {
                let lap2 = h.entry(0, 0)[k] + h.entry(1, 1)[k];
                prop_assert!((lap1.component(0)[k] - lap2).abs() <= 1e-10 * (1.0 + lap2.abs()));
            }
        }

        #[test]
        fn mean_of_gradient_vanishes(vals in prop::collection::vec(-5.0f64..5.0, 256)) {
            let g = TorusGrid::new(2, 16).unwrap();
            let f = Field::scalar(g, vals).unwrap();
            let m = mean(&differentiate(&f, DerivKind::Grad).unwrap()).unwrap();
            for v in m {
                prop_assert!(v.abs() <= 1e-12);
            }
        }

        #[test]
        fn hessian_flag_is_exact(vals in prop::collection::vec(-5.0f64..5.0, 81)) {
            let g = BoxGrid::centered(2, 2.0, 8).unwrap();
            let h = differentiate(&Field::scalar(g, vals).unwrap(), DerivKind::Hess).unwrap();
            prop_assert_eq!(h.entry(0, 1), h.entry(1, 0));
        }
    }
}
