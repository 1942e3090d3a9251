use std::f64::consts::PI;

use glchains::energy::{self, minimize, SolverOptions};
use glchains::fields::{make_boundary_datum, DatumSpec};
use glchains::manifolds::qtensor;
use glchains::{GroupElement, ManifoldKind, TargetManifold};
use nalgebra::Matrix3;
use proptest::prelude::*;

fn targets() -> [TargetManifold; 3] {
    [
        TargetManifold::circle(),
        TargetManifold::torus(),
        TargetManifold::projective_plane(),
    ]
}

proptest! {
    #[test]
    fn jacobi_eigen_matches_nalgebra(e in prop::array::uniform6(-2.0f64..2.0)) {
        let m = [[e[0], e[1], e[2]], [e[1], e[3], e[4]], [e[2], e[4], e[5]]];
        let (vals, vecs) = qtensor::sym_eigen(&m);
        let na = Matrix3::from_fn(|i, j| m[i][j]).symmetric_eigen();
        let mut expected: Vec<f64> = na.eigenvalues.iter().copied().collect();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for i in 0..3 {
            prop_assert!((vals[i] - expected[i]).abs() < 1e-10);
            // M v = λ v
            let v = vecs[i];
            for r in 0..3 {
                let mv = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2];
                prop_assert!((mv - vals[i] * v[r]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn q_tensor_coordinates_are_frobenius(q in prop::array::uniform5(-1.0f64..1.0)) {
        let m = qtensor::to_matrix(&q);
        let fro: f64 = m.iter().flatten().map(|x| x * x).sum();
        prop_assert!((fro - qtensor::norm_sq(&q)).abs() < 1e-12);
        prop_assert!((m[0][0] + m[1][1] + m[2][2]).abs() < 1e-12);
        let back = qtensor::from_matrix(&m);
        for i in 0..5 {
            prop_assert!((back[i] - q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn retraction_lands_on_the_manifold_and_fixes_it(
        which in 0usize..3,
        z in prop::array::uniform5(-1.5f64..1.5),
        dir in prop::array::uniform5(-1.0f64..1.0),
        frac in 0.0f64..0.9,
    ) {
        let tm = targets()[which];
        let m = tm.ambient_dim();
        let dn: f64 = dir[..m].iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        let y: Vec<f64> = dir[..m].iter().map(|x| x / dn * frac * tm.delta_star).collect();
        let shifted: Vec<f64> = (0..m).map(|i| z[i] - y[i]).collect();
        prop_assume!(tm.dist_to_complex(&shifted) > 0.05);
        let r = tm.retraction(&z[..m], &y).unwrap();
        // the Q-tensor distance is a square root of a difference, so round-off shows at 1e-8
        prop_assert!(tm.dist_to_manifold(&r) < 1e-7);
        // points of N are fixed
        let p = tm.rho(&z[..m]).unwrap_or_else(|_| tm.base_point());
        let ps: Vec<f64> = (0..m).map(|i| p[i] - y[i]).collect();
        prop_assume!(tm.dist_to_complex(&ps) > 0.05);
        let rp = tm.retraction(&p, &y).unwrap();
        for i in 0..m {
            prop_assert!((rp[i] - p[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn potential_gradient_matches_differences(which in 0usize..3, y in prop::array::uniform5(-1.2f64..1.2)) {
        let tm = targets()[which];
        let m = tm.ambient_dim();
        let g = tm.potential_grad(&y[..m]);
        let h = 1e-6;
        for i in 0..m {
            let mut a = y[..m].to_vec();
            let mut b = y[..m].to_vec();
            a[i] += h;
            b[i] -= h;
            let fd = (tm.potential(&a) - tm.potential(&b)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()));
        }
    }

    #[test]
    fn potential_is_coercive_near_the_manifold(which in 0usize..3, y in prop::array::uniform5(-1.2f64..1.2)) {
        let tm = targets()[which];
        let m = tm.ambient_dim();
        let d = tm.dist_to_manifold(&y[..m]);
        prop_assume!(d < tm.theta0);
        prop_assert!(tm.potential(&y[..m]) >= tm.lambda0 * d * d - 1e-12);
    }

    #[test]
    fn winding_loops_have_their_degree(d in -4i64..=4, n in 64usize..200, start in 0.0f64..6.3) {
        let tm = TargetManifold::circle();
        let samples: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let t = start + 2.0 * PI * i as f64 / n as f64;
                [(d as f64 * t).cos(), (d as f64 * t).sin()]
            })
            .collect();
        prop_assert_eq!(tm.loop_class(&samples, true).unwrap(), GroupElement::Int(d));
        // reversal negates, rotation of the starting sample does nothing
        let mut rev = samples.clone();
        rev.reverse();
        prop_assert_eq!(tm.loop_class(&rev, true).unwrap(), GroupElement::Int(-d));
        let mut rot = samples.clone();
        rot.rotate_left(n / 3);
        prop_assert_eq!(tm.loop_class(&rot, true).unwrap(), GroupElement::Int(d));
    }

    #[test]
    fn torus_loops_wind_per_factor(a in -3i64..=3, b in -3i64..=3) {
        let tm = TargetManifold::torus();
        let n = 240;
        let samples: Vec<[f64; 4]> = (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                let (p, q) = (a as f64 * t, b as f64 * t);
                [p.cos(), p.sin(), q.cos(), q.sin()]
            })
            .collect();
        prop_assert_eq!(tm.loop_class(&samples, true).unwrap(), GroupElement::IntPair(a, b));
    }

    #[test]
    fn director_loops_count_half_turns(k in 0u8..=4) {
        let tm = TargetManifold::projective_plane();
        let n = 200;
        let samples: Vec<[f64; 5]> = (0..n)
            .map(|i| {
                let t = k as f64 * PI * i as f64 / n as f64;
                qtensor::embed_director(&[t.cos(), t.sin(), 0.0])
            })
            .collect();
        prop_assert_eq!(tm.loop_class(&samples, true).unwrap(), GroupElement::Bit(k % 2));
    }
}

fn check_gradient(spec: DatumSpec, target: TargetManifold, eps: f64) {
    let mut u = make_boundary_datum(&spec, target).unwrap();
    u.perturb(3, 0.05);
    let g = energy::energy_grad(&u, eps);
    let free: Vec<usize> = (0..u.num_nodes())
        .filter(|&i| !u.dirichlet[i] && u.mask.inside[i])
        .collect();
    assert!(!free.is_empty());
    let h = 1e-6;
    for &node in free.iter().step_by(free.len() / 7 + 1) {
        for k in 0..u.m() {
            let idx = node * u.m() + k;
            let mut a = u.clone();
            let mut b = u.clone();
            a.values[idx] += h;
            b.values[idx] -= h;
            let fd = (energy::energy(&a, eps).total - energy::energy(&b, eps).total) / (2.0 * h);
            assert!(
                (fd - g[idx]).abs() < 1e-5 * (1.0 + g[idx].abs()),
                "node {node} comp {k}: {fd} vs {}",
                g[idx]
            );
        }
    }
}

#[test]
fn energy_gradient_matches_differences_on_disk() {
    check_gradient(
        DatumSpec::Disk {
            class: vec![1],
            radius: 1.0,
            nodes: 12,
        },
        TargetManifold::circle(),
        0.3,
    );
    check_gradient(
        DatumSpec::Disk {
            class: vec![1, -1],
            radius: 1.0,
            nodes: 10,
        },
        TargetManifold::torus(),
        0.3,
    );
}

#[test]
fn energy_gradient_matches_differences_in_solid_torus() {
    check_gradient(
        DatumSpec::SolidTorus { nodes: 10 },
        TargetManifold::circle(),
        0.5,
    );
}

#[test]
fn minimizer_decreases_energy_monotonically() {
    let mut u = make_boundary_datum(
        &DatumSpec::Disk {
            class: vec![1],
            radius: 1.0,
            nodes: 24,
        },
        TargetManifold::circle(),
    )
    .unwrap();
    u.perturb(1, 0.01);
    let opts = SolverOptions {
        max_iters: 300,
        grad_tol: 1e-6,
        record_every: 1,
        ..Default::default()
    };
    let out = minimize(&u, 0.2, &opts).unwrap();
    for w in out.trace.windows(2) {
        assert!(w[1].energy <= w[0].energy + 1e-12);
    }
    // Dirichlet values are untouched
    for i in 0..u.num_nodes() {
        if u.dirichlet[i] {
            assert_eq!(u.value(i), out.field.value(i));
        }
    }
}

#[test]
fn manifold_kinds_round_trip_codes() {
    for k in [
        ManifoldKind::Circle,
        ManifoldKind::Torus,
        ManifoldKind::ProjectivePlane,
    ] {
        assert_eq!(ManifoldKind::from_code(k.code()), Some(k));
    }
}
