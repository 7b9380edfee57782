use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use trefftz_dg::geometry::{build_structured_mesh, build_time_partition};
use trefftz_dg::quadrature::gauss_1d;
use trefftz_dg::slab_solver::CoercivityCheck;
use trefftz_dg::trefftz::{relative_maxwell_residual, BasisSet, LocalBasis};
use trefftz_dg::verification::{cavity_fields, space_time_l2_error, AnalyticSolution};
use trefftz_dg::{run, BoundarySpec, MaterialParams, Mesh, Rect, RunOptions, Side, Variant};

fn two_material_mesh(n: usize, eps: f64, mu: f64) -> Mesh<f64> {
    build_structured_mesh(n, n, Rect::new(0.0, 1.0, 0.0, 1.0), |x, _| {
        if x < 0.5 {
            MaterialParams::vacuum()
        } else {
            MaterialParams::new(eps, mu)
        }
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gauss_exact_to_degree_2n_minus_1(n in 1usize..=20) {
        let rule = gauss_1d::<f64>(n).unwrap();
        for k in 0..2 * n {
            let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            let got = rule.integrate(|x| x.powi(k as i32));
            prop_assert!((got - exact).abs() <= 1e-13, "n={} k={} got={}", n, k, got);
        }
    }

    #[test]
    fn basis_solves_maxwell(
        p in 0usize..=3,
        hx in 0.05f64..2.0,
        hy in 0.05f64..2.0,
        dt in 0.005f64..2.0,
        eps in 0.5f64..6.0,
        mu in 0.5f64..3.0,
    ) {
        let mat = MaterialParams::new(eps, mu);
        let b = LocalBasis::build(p, Variant::DivFreeTM2D, [hx / 2.0, hy / 2.0, 0.5], dt / 2.0, mat, true).unwrap();
        prop_assert_eq!(b.len(), (p + 1) * (p + 3));
        for f in b.functions() {
            prop_assert!(relative_maxwell_residual(f, &mat) <= 1e-12);
        }
    }

    #[test]
    fn coercivity_equality_random_setup(
        n in 2usize..=4,
        p in 0usize..=2,
        eps in 1.0f64..4.0,
        mu in 1.0f64..2.0,
        dt in 0.05f64..1.0,
        absorbing in any::<bool>(),
        x in proptest::collection::vec(-1.0f64..1.0, 16 * 15),
    ) {
        let mut mesh = two_material_mesh(n, eps, mu);
        if absorbing {
            mesh.set_boundary(Side::XHi, BoundarySpec::Absorbing).unwrap();
            mesh.set_boundary(Side::YLo, BoundarySpec::Impedance { beta: 0.7, g: None }).unwrap();
        }
        let bases = BasisSet::build(&mesh, dt, p, Variant::DivFreeTM2D, true).unwrap();
        let check = CoercivityCheck::new(&mesh, &bases).unwrap();
        let dim = check.b.dim();
        let (bx, norm) = check.gap(&x[..dim]);
        prop_assert!((bx - 0.5 * norm).abs() <= 1e-10 * norm);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn energy_identity_holds(
        p in 1usize..=2,
        steps in 1usize..=4,
        eps in 1.0f64..4.0,
        amp in 0.1f64..2.0,
    ) {
        let mut mesh = two_material_mesh(3, eps, 1.0);
        mesh.set_boundary(Side::XLo, BoundarySpec::Absorbing).unwrap();
        let part = build_time_partition(0.5, steps).unwrap();
        let init = move |x: f64, y: f64| {
            let s = amp * (PI * x).sin() * (PI * y).cos();
            [0.0, 0.0, s, 0.5 * s, 0.0, 0.0]
        };
        let res = run(Arc::new(mesh), &part, RunOptions::new(p), &init).unwrap();
        prop_assert!(res.ledger.max_relative_identity_residual() <= 1e-9);
        prop_assert!(res.ledger.is_monotone(1e-12));
    }
}

#[test]
fn f32_cavity_run() {
    let mesh = build_structured_mesh(4, 4, Rect::new(0.0f32, PI as f32, 0.0, PI as f32), |_, _| MaterialParams::vacuum()).unwrap();
    let part = build_time_partition(1.0f32, 5).unwrap();
    let exact = AnalyticSolution::<f32>::cavity(1, 1);
    let res = run(Arc::new(mesh), &part, RunOptions::new(2), &|x, y| cavity_fields(1, 1, x, y, 0.0f32)).unwrap();
    let err = space_time_l2_error(&res.states, &exact);
    assert!(err.relative < 5e-2, "{}", err.relative);
    assert!(res.ledger.max_relative_identity_residual() < 1e-4);
}
