//! End-to-end checks through the public API, each against an oracle that does
//! not share code with the route under test.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use effham::domain::{MomentumGrid, PeriodicFn, PresetCatalog, TorusGrid};
use effham::hj::{solve_laxoleinik, solve_variational, VariationalParams};
use effham::homog::{homogenize, Backend, HomogParams};
use effham::weakkam::{AlphaParams, Levelset, LEVELSET_PANELS};
use proptest::prelude::*;

fn pendulum(a: f64, n_q: usize) -> effham::domain::HamiltonianField {
    let params = BTreeMap::from([("a".to_string(), a)]);
    PresetCatalog::field("pendulum", &params, TorusGrid::new(n_q).unwrap(), MomentumGrid::new(-3.0, 3.0, 61).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// `max(p²/2 − a/2, 0) <= h̄(p) <= p²/2`: the upper bound from the zero corrector,
    /// the lower ones from averaging in q and from `max_q min_p H = 0`.
    #[test]
    fn levelset_respects_elementary_bounds(a in 0.2f64..2.0, p in -3.0f64..3.0) {
        let ls = Levelset::new(&pendulum(a, 64), LEVELSET_PANELS).unwrap();
        let v = ls.value(p);
        let tol = 1e-8;
        prop_assert!(v <= 0.5 * p * p + tol, "{v} above p^2/2");
        prop_assert!(v >= (0.5 * p * p - 0.5 * a).max(0.0) - tol, "{v} below the averaged bound");
        prop_assert_eq!(v, ls.value(-p));
    }
}

#[test]
fn shear_conjugation_leaves_the_effective_hamiltonian_unchanged() {
    let h = pendulum(1.0, 128);
    let sheared = PresetCatalog::sheared(&h, 0.2).unwrap();
    let pgrid = MomentumGrid::new(-1.5, 1.5, 5).unwrap();
    let params = HomogParams {
        pgrid: Some(pgrid),
        alpha: AlphaParams { horizon: 20.0, tau: 0.02, n_q: 128, ..AlphaParams::default() },
        ..HomogParams::default()
    };
    assert!(matches!(homogenize(&sheared, Backend::Levelset, &params), Err(effham::Error::BackendInvalid { .. })));
    let exact = homogenize(&h, Backend::Levelset, &params).unwrap();
    let averaged = homogenize(&sheared, Backend::Weakkam, &params).unwrap();
    let d = averaged.sup_distance(&exact);
    assert!(d <= 1e-2, "sup distance {d}");
}

/// With `f = 0` and `L(q, v) = v²/2 + a sin²(πq) >= 0`, the value function obeys
/// `0 <= u(t, q) <= t a sin²(πq)` (the upper bound from staying put) and grows in `t`.
#[test]
fn both_solvers_respect_the_resting_path_bounds() {
    let a = 0.8;
    let h = pendulum(a, 32);
    let qgrid = TorusGrid::new(32).unwrap();
    let zero = PeriodicFn::zero();
    let t = 0.5;
    let lo = solve_laxoleinik(&h, &zero, qgrid, t, 0.0625, 1).unwrap();
    let var = solve_variational(&h, &zero, qgrid, t, 4, &VariationalParams::default()).unwrap();
    for sol in [&lo, &var] {
        for (ti, slice) in sol.times.iter().zip(&sol.slices) {
            for (i, &u) in slice.iter().enumerate() {
                let rest = ti * a * (PI * qgrid.node(i)).sin().powi(2);
                assert!(u >= -1e-12, "{:?}: u = {u} < 0 at t = {ti}", sol.solver);
                assert!(u <= rest + 1e-9, "{:?}: u = {u} above resting cost {rest} at t = {ti}", sol.solver);
            }
        }
        for w in sol.slices.windows(2) {
            assert!(w[0].iter().zip(&w[1]).all(|(x, y)| y >= &(x - 1e-12)), "{:?}: not monotone in t", sol.solver);
        }
    }
}

#[test]
fn solution_csv_has_one_row_per_node_and_slice() {
    let h = pendulum(1.0, 16);
    let qgrid = TorusGrid::new(16).unwrap();
    let sol = solve_laxoleinik(&h, &PeriodicFn::cosine_mode(0.1, 1, 0.0), qgrid, 0.25, 0.0625, 2).unwrap();
    let mut buf = Vec::new();
    sol.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("t,q,u"));
    assert_eq!(text.lines().count(), 1 + sol.slices.len() * 16);
    assert_eq!(sol.times, vec![0.0, 0.125, 0.25]);
}
