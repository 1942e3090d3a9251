use glchains::energy;
use glchains::fields::{DomainKind, Field};
use glchains::lowerbound::{
    ball_construction, essential_components, lambda_eps, log_defect, BallParams, Lambda_eps,
    LOG_DEFECT,
};
use glchains::singular::{self, SingularGrid};
use glchains::{Error, GroupElement, TargetManifold};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Product of unit vortices on `[-1, 1]²` with modulus `min(|x - a|/ε, 1)`.
fn vortex_field(n: usize, vortices: &[([f64; 2], i64)], eps: f64) -> Field {
    let mut f = Field::new(
        2,
        [n, n, 1],
        [-1.0, -1.0, 0.0],
        2.0 / (n - 1) as f64,
        TargetManifold::circle(),
        DomainKind::Box,
    )
    .unwrap();
    for i in 0..f.num_nodes() {
        let p = f.position(i);
        let (mut phase, mut modulus) = (0.0, 1.0f64);
        for &(a, d) in vortices {
            let (dx, dy) = (p[0] - a[0], p[1] - a[1]);
            phase += d as f64 * dy.atan2(dx);
            modulus = modulus.min(dx.hypot(dy) / eps);
        }
        f.set_value(i, &[modulus * phase.cos(), modulus * phase.sin()]);
    }
    f
}

fn lambda_oracle(rho: f64, eps: f64, p: &BallParams) -> f64 {
    let n = 100_000;
    (0..=n)
        .map(|i| {
            let mu = i as f64 / n as f64;
            mu * mu / rho + p.c0 / eps * (1.0 - mu).powf(p.n_exp)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn lambda_matches_grid_scan() {
    let p = BallParams::default();
    for &eps in &[0.1, 0.01] {
        for k in 0..40 {
            let rho = eps * 10f64.powf(-1.0 + 5.0 * k as f64 / 39.0);
            let got = lambda_eps(rho, eps, &p);
            let oracle = lambda_oracle(rho, eps, &p);
            assert!(
                (got - oracle).abs() <= 1e-6 * oracle.max(1.0),
                "ρ = {rho}: {got} vs {oracle}"
            );
            assert!(got <= oracle + 1e-12);
        }
    }
}

#[test]
fn lambda_with_other_exponents() {
    let p = BallParams::with_c0(0.5, 4.0);
    for &rho in &[0.003, 0.05, 0.7] {
        let oracle = lambda_oracle(rho, 0.05, &p);
        assert!((lambda_eps(rho, 0.05, &p) - oracle).abs() <= 1e-6 * oracle.max(1.0));
    }
}

#[test]
fn integrated_profile_is_monotone_with_bounded_log_defect() {
    let p = BallParams::default();
    let ratios: Vec<f64> = (0..=300)
        .map(|i| 10f64.powf(1.0 + 3.0 * i as f64 / 300.0))
        .collect();
    for &eps in &[0.1, 0.01] {
        assert_eq!(Lambda_eps(0.0, eps, &p), 0.0);
        let vals: Vec<f64> = ratios
            .iter()
            .map(|&q| Lambda_eps(q * eps, eps, &p))
            .collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        let defect = log_defect(eps, &ratios, &p);
        assert!(defect <= LOG_DEFECT, "defect {defect} at ε = {eps}");
        // the frozen constant is not loose by more than a few percent
        assert!(defect > LOG_DEFECT - 0.1);
    }
}

#[test]
fn integrated_profile_matches_trapezoid_sum() {
    let p = BallParams::default();
    let eps = 0.05;
    let cap = p.c1 / eps;
    let rho = 30.0 * eps;
    let n = 200_000;
    // geometric nodes from a tiny scale, plus the linear head below it
    let s0 = eps * 1e-8;
    let mut total = cap.min(lambda_eps(s0, eps, &p)) * s0;
    let r = (rho / s0).powf(1.0 / n as f64);
    let mut s = s0;
    let mut fs = lambda_eps(s, eps, &p).min(cap);
    for _ in 0..n {
        let t = s * r;
        let ft = lambda_eps(t, eps, &p).min(cap);
        total += 0.5 * (fs + ft) * (t - s);
        s = t;
        fs = ft;
    }
    let got = Lambda_eps(rho, eps, &p);
    assert!((got - total).abs() < 1e-4 * total, "{got} vs {total}");
}

proptest! {
    #[test]
    fn lambda_decreases_in_radius(a in 1e-3f64..10.0, b in 1e-3f64..10.0) {
        let p = BallParams::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(lambda_eps(hi, 0.1, &p) <= lambda_eps(lo, 0.1, &p) + 1e-12);
    }
}

#[test]
fn essential_components_of_simple_fields() {
    let p = BallParams::default();
    let eps = 0.05;
    let mut flat = vortex_field(65, &[], eps);
    for i in 0..flat.num_nodes() {
        flat.set_value(i, &[0.6, 0.8]);
    }
    assert!(essential_components(&flat, &p).unwrap().is_empty());

    let one = essential_components(&vortex_field(65, &[([0.1, -0.05], 1)], eps), &p).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].class, GroupElement::Int(1));
    assert!(one[0].essential);

    let pair = essential_components(
        &vortex_field(65, &[([-0.4, 0.0], 1), ([0.4, 0.0], -1)], eps),
        &p,
    )
    .unwrap();
    let mut classes: Vec<i64> = pair.iter().map(|c| c.class.coord(0)).collect();
    classes.sort();
    assert_eq!(classes, vec![-1, 1]);

    let near_edge = vortex_field(65, &[([0.97, 0.0], 1)], eps);
    assert!(matches!(
        essential_components(&near_edge, &p),
        Err(Error::BoundaryTouch)
    ));
}

#[test]
fn certificates_are_sound_on_random_vortex_fields() {
    let p = BallParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut certified = 0;
    for _ in 0..50 {
        let eps = rng.gen_range(0.03..0.08);
        let k = rng.gen_range(1..=3);
        let vs: Vec<([f64; 2], i64)> = (0..k)
            .map(|_| {
                (
                    [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
                    if rng.gen_bool(0.5) { 1 } else { -1 },
                )
            })
            .collect();
        let u = vortex_field(97, &vs, eps);
        let energy = energy::energy(&u, eps).total;
        match ball_construction(&u, eps, &p) {
            Ok(cert) => {
                certified += 1;
                assert!(cert.certified_bound <= cert.measured_energy);
                assert!((cert.measured_energy - energy).abs() < 1e-9 * energy);
                for b in &cert.balls {
                    assert!(b.bound >= 0.0);
                }
            }
            // touching vortices or a collar too thin for the scale are refused
            Err(Error::NotAdmissible(_)) | Err(Error::BoundaryTouch) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
    assert!(certified >= 40, "only {certified} certificates");
}

#[test]
fn single_vortex_certificate_is_positive() {
    let eps = 0.05;
    let u = vortex_field(129, &[([0.0, 0.0], 1)], eps);
    let cert = ball_construction(&u, eps, &BallParams::default()).unwrap();
    assert_eq!(cert.total_class, GroupElement::Int(1));
    assert!(cert.certified_bound > 0.0);
    assert!(cert.certified_bound <= cert.measured_energy);
}

#[test]
fn user_scale_violating_the_collar_is_refused() {
    let eps = 0.05;
    let u = vortex_field(129, &[([0.0, 0.0], 1)], eps);
    let p = BallParams {
        tau: Some(10.0),
        ..Default::default()
    };
    assert!(matches!(
        ball_construction(&u, eps, &p),
        Err(Error::NotAdmissible(_))
    ));
}

#[test]
fn shifts_do_not_change_plaquette_classes() {
    let eps = 0.05;
    let u = vortex_field(
        97,
        &[([0.13, -0.21], 1), ([-0.3, 0.35], -1), ([0.4, 0.3], 1)],
        eps,
    );
    // a grid passing the skeleton check keeps |u| ≥ 1/4 on the edges, clear of |y|
    let g = singular::choose_grid(&u, 0.1, 16, eps, 1, singular::SKELETON_PENALTY).unwrap();
    let d = u.target.delta_star;
    let y = [d / 2.0, 0.0];
    let zero = [0.0, 0.0];
    let mut checked = 0;
    for k in &g.plaquettes() {
        let a = singular::plaquette_class(&u, &g, k, &zero).unwrap();
        let b = singular::plaquette_class(&u, &g, k, &y).unwrap();
        assert_eq!(a, b);
        checked += 1;
    }
    assert!(checked >= 50);
    let c0 = singular::extract_chain(&u, &g, &zero).unwrap();
    let c1 = singular::extract_chain(&u, &g, &y).unwrap();
    assert!(c0.same_as(&c1));
    assert_eq!(c0.total_class(), GroupElement::Int(1));
    assert_eq!(c0.cells.len(), 3);
}

#[test]
fn grid_choice_passes_the_skeleton_check() {
    let eps = 0.05;
    let u = vortex_field(97, &[([0.13, -0.21], 1), ([-0.3, 0.35], -1)], eps);
    let h = singular::default_grid_size(&u, eps);
    let g = singular::choose_grid(&u, h, 16, eps, 3, singular::SKELETON_PENALTY).unwrap();
    assert!(singular::skeleton_check(&u, &g) <= singular::skeleton_threshold(&u));
    assert!(singular::extract_chain(&u, &g, &[0.0, 0.0]).is_ok());
}

#[test]
fn mass_sampling_is_reproducible_and_finite() {
    let eps = 0.05;
    let u = vortex_field(97, &[([0.13, -0.21], 1)], eps);
    let g = SingularGrid::new(&u, 0.1, [0.01, 0.02, 0.0]).unwrap();
    let a = singular::sample_mass_bound(&u, &g, 20, 4).unwrap();
    let b = singular::sample_mass_bound(&u, &g, 20, 4).unwrap();
    assert_eq!(a, b);
    assert!(a.0 > 0.0 && a.2.is_finite() && a.2 > 0.0);
}
