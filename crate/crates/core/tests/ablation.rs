//! The periodic-only two-scale expansion near a defect, in the H¹ norm.

use defecthom::cell::{solve_cell, CellOptions};
use defecthom::coefficients::build_family;
use defecthom::defect::{matched_cell, solve_defect, BoxProblem, DefectOptions};
use defecthom::fields::{BoxGrid, TorusGrid};
use defecthom::multiscale::{converge, rate_fit, Correctors, EpsProblem};
use serde_json::json;

/// A fitted H¹ rate at or below this counts as no decrease.
const STALL_RATE: f64 = 0.25;

#[test]
#[ignore = "the missing defect term lives on a set of measure O(eps), so the ablated H1 error still decays like eps^(1/2); see README"]
fn periodic_only_h1_error_does_not_decrease() {
    let cs = build_family("sin-drift-1d", &json!({"defect": 0.8, "defect_width": 0.5, "defect_offset": 1.5})).unwrap();
    let cell = solve_cell(&cs, &TorusGrid::new(1, 64).unwrap(), &CellOptions::default()).unwrap();
    let g = BoxGrid::domain(1, -1.0, 2.0, 6144).unwrap();
    let ep = EpsProblem::with_constant_rhs(g, vec![0.25, 0.125, 0.0625, 0.03125], 1.0).unwrap().with_order(4);
    let opts = DefectOptions { order: 6, ..Default::default() };
    let bg = BoxGrid::centered(1, 64.0, 128 * 128).unwrap();
    let bp = BoxProblem::new(&cs, &matched_cell(&cs, &bg, &opts).unwrap(), &bg, &opts).unwrap();
    let ds = solve_defect(&bp, &cs).unwrap();
    let rep = converge(&ep, &cs, &cell.a_star, &Correctors::with_defect(&cell, &ds).unwrap(), 2.0).unwrap();
    let (eps, h1): (Vec<f64>, Vec<f64>) =
        rep.rows.iter().filter_map(|r| r.h1_periodic_only.map(|v| (r.eps, v))).unzip();
    let rate = rate_fit(&eps, &h1).unwrap().slope;
    assert!(rate <= STALL_RATE, "periodic-only H1 errors {h1:?} decrease at rate {rate}");
}
