//! Energy lower bounds for planar fields by the ball construction: the
//! essential set `{s ≤ 1/2}` is covered by balls that grow synchronously and
//! merge on contact, and each growth step banks the annulus bound
//! `|σ|* (Λ_ε(ρ₂/|σ|*) - Λ_ε(ρ₁/|σ|*))`.
//!
//! The resulting bound is compared against the measured discrete energy, per
//! ball and in total, before a certificate is returned.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy;
use crate::error::{Error, Result};
use crate::fields::{DomainKind, Field, TORUS_MAJOR, TORUS_MINOR};
use crate::groups::{CoefficientGroup, GroupElement};
use crate::manifolds::{ClassAccumulator, TargetManifold};
use crate::singular::segment_increment;

/// Multiplicative growth step of the ball radii.
pub const GROWTH: f64 = 1.05;
/// `Λ_ε(ρ) ≥ log(ρ/ε) - LOG_DEFECT` for the default parameters and all `ρ ≥ 0`.
pub const LOG_DEFECT: f64 = 1.3;

const QUAD_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BallParams {
    pub c0: f64,
    pub c1: f64,
    pub n_exp: f64,
    /// Final scale; `None` uses `r / (8 |σ|*)` with `r` the collar width.
    pub tau: Option<f64>,
    pub s_threshold: f64,
    /// Admissibility limit on `ε |log ε| |σ|*`.
    pub eps0: f64,
}

impl Default for BallParams {
    fn default() -> Self {
        BallParams::with_c0(1.0, 3.0)
    }
}

impl BallParams {
    /// Parameters with `C1 = ε λ_ε(ε)`, so the cap `C1/ε` meets `λ_ε` at `ρ = ε`.
    pub fn with_c0(c0: f64, n_exp: f64) -> BallParams {
        let mut p = BallParams {
            c0,
            c1: 1.0,
            n_exp,
            tau: None,
            s_threshold: 0.5,
            eps0: 2.0,
        };
        p.c1 = lambda_eps(1.0, 1.0, &p);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c0 > 0.0
            && self.c1 > 0.0
            && self.n_exp > 1.0
            && self.tau.is_none_or(|t| t > 0.0)
            && self.s_threshold > 0.0
            && self.s_threshold < 1.0
            && self.eps0 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "ball parameters must be positive with N > 1".into(),
            ))
        }
    }
}

/// `min_{0≤μ≤1} μ²/ρ + (C0/ε)(1-μ)^N`, from the root of the stationarity
/// equation (the objective is convex in μ).
pub fn lambda_eps(rho: f64, eps: f64, p: &BallParams) -> f64 {
    let a = p.c0 / eps;
    let obj = |mu: f64| mu * mu / rho + a * (1.0 - mu).powf(p.n_exp);
    let slope = |mu: f64| 2.0 * mu / rho - a * p.n_exp * (1.0 - mu).powf(p.n_exp - 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    obj(0.5 * (lo + hi)).min(obj(0.0)).min(obj(1.0))
}

/// Scale where `λ_ε` drops to the cap `C1/ε` (`λ_ε` is decreasing in ρ).
fn cap_crossing(eps: f64, p: &BallParams) -> f64 {
    let cap = p.c1 / eps;
    if lambda_eps(1e-300_f64.max(eps * 1e-12), eps, p) <= cap {
        return 0.0;
    }
    let (mut lo, mut hi) = (eps * 1e-12, eps);
    while lambda_eps(hi, eps, p) > cap {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lambda_eps(mid, eps, p) > cap {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

fn simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫_0^ρ min(λ_ε(s), C1/ε) ds`. Beyond the cap crossing the integral is
/// taken in `log s`, where the integrand is close to 1.
#[allow(non_snake_case)]
pub fn Lambda_eps(rho: f64, eps: f64, p: &BallParams) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    let cap = p.c1 / eps;
    let x0 = cap_crossing(eps, p);
    if rho <= x0 {
        return cap * rho;
    }
    let head = cap * x0;
    let t0 = x0.max(eps * 1e-12).ln();
    let t1 = rho.ln();
    let g = |t: f64| {
        let s = t.exp();
        lambda_eps(s, eps, p).min(cap) * s
    };
    // unit-length pieces in log scale keep the recursion shallow
    let pieces = ((t1 - t0).ceil() as usize).max(1);
    let dt = (t1 - t0) / pieces as f64;
    let tail: f64 = (0..pieces)
        .map(|i| adaptive(&g, t0 + i as f64 * dt, t0 + (i + 1) as f64 * dt, QUAD_TOL))
        .sum();
    head + tail
}

/// Largest `log(ρ/ε) - Λ_ε(ρ)` over the given ratios `ρ/ε`.
pub fn log_defect(eps: f64, ratios: &[f64], p: &BallParams) -> f64 {
    ratios
        .iter()
        .map(|&q| q.ln() - Lambda_eps(q * eps, eps, p))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// A connected component of `{s ≤ s_threshold}` in the field's cell grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub cells: Vec<[usize; 2]>,
    pub class: GroupElement,
    pub essential: bool,
}

/// `s = clamp(1 - dist(u, N)/θ₀, 0, 1)` at every node.
pub fn cone_parameter(u: &Field) -> Vec<f64> {
    let t = u.target;
    (0..u.num_nodes())
        .into_par_iter()
        .map(|i| (1.0 - t.dist_to_manifold(u.value(i)) / t.theta0).clamp(0.0, 1.0))
        .collect()
}

fn require_planar(u: &Field) -> Result<()> {
    if u.dims != 2 {
        return Err(Error::Dimension(
            "lower bounds are certified on planar fields".into(),
        ));
    }
    Ok(())
}

/// Components of cells having a corner with `s ≤ s_threshold`, joined across
/// shared edges, each labelled by the class read along its outer contour.
pub fn essential_components(u: &Field, p: &BallParams) -> Result<Vec<Component>> {
    require_planar(u)?;
    let s = cone_parameter(u);
    let (nx, ny) = (u.shape[0] - 1, u.shape[1] - 1);
    let corners = |i: usize, j: usize| {
        [
            u.index(i, j, 0),
            u.index(i + 1, j, 0),
            u.index(i + 1, j + 1, 0),
            u.index(i, j + 1, 0),
        ]
    };
    let marked: Vec<bool> = (0..nx * ny)
        .map(|c| {
            corners(c % nx, c / nx)
                .iter()
                .any(|&n| s[n] <= p.s_threshold)
        })
        .collect();
    let mut label = vec![usize::MAX; nx * ny];
    let mut out = Vec::new();
    for start in 0..nx * ny {
        if !marked[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![start];
        label[start] = id;
        let mut cells = Vec::new();
        let mut touches = false;
        while let Some(c) = stack.pop() {
            let (i, j) = (c % nx, c / nx);
            cells.push([i, j]);
            if i == 0
                || j == 0
                || i + 1 == nx
                || j + 1 == ny
                || corners(i, j).iter().any(|&n| !u.mask.inside[n])
            {
                touches = true;
            }
            let mut visit = |ii: usize, jj: usize| {
                let cc = ii + nx * jj;
                if marked[cc] && label[cc] == usize::MAX {
                    label[cc] = id;
                    stack.push(cc);
                }
            };
            if i > 0 {
                visit(i - 1, j);
            }
            if i + 1 < nx {
                visit(i + 1, j);
            }
            if j > 0 {
                visit(i, j - 1);
            }
            if j + 1 < ny {
                visit(i, j + 1);
            }
        }
        if touches {
            return Err(Error::BoundaryTouch);
        }
        cells.sort();
        out.push((cells, id));
    }
    let y = vec![0.0; u.m()];
    out.into_iter()
        .map(|(cells, id)| {
            let mut acc = ClassAccumulator::default();
            for &[i, j] in &cells {
                // counter-clockwise cell edges: (dx, dy) of the neighbour across each edge
                let loop_nodes = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
                let across: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];
                for e in 0..4 {
                    let ni = i as isize + across[e].0;
                    let nj = j as isize + across[e].1;
                    if label[ni as usize + nx * nj as usize] == id {
                        continue;
                    }
                    let a = loop_nodes[e];
                    let b = loop_nodes[(e + 1) % 4];
                    let pa = u.position(u.index(a.0, a.1, 0));
                    let pb = u.position(u.index(b.0, b.1, 0));
                    acc.add(segment_increment(u, &pa, &pb, &y)?);
                }
            }
            let class = acc.finish(u.target.kind);
            let essential = !class.is_zero();
            Ok(Component {
                cells,
                class,
                essential,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertBall {
    pub center: [f64; 2],
    pub radius: f64,
    pub class: GroupElement,
    /// Lower bound banked for the energy inside this ball.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCertificate {
    pub balls: Vec<CertBall>,
    pub certified_bound: f64,
    pub measured_energy: f64,
    pub total_class: GroupElement,
    pub epsilon: f64,
    /// Distance from the essential set to the domain boundary.
    pub collar: f64,
    pub tau: f64,
    /// Scale reached by the growth (`min r_i/|σ_i|*` over balls of nonzero class).
    pub final_scale: f64,
    /// Growth stopped early because a ball reached the domain boundary.
    pub hit_boundary: bool,
}

impl LowerBoundCertificate {
    fn empty(u: &Field, eps: f64, measured: f64) -> Self {
        LowerBoundCertificate {
            balls: Vec::new(),
            certified_bound: 0.0,
            measured_energy: measured,
            total_class: u.target.group().zero(),
            epsilon: eps,
            collar: 0.0,
            tau: 0.0,
            final_scale: 0.0,
            hit_boundary: false,
        }
    }
}

fn dist_to_domain_boundary(u: &Field, x: [f64; 2]) -> f64 {
    let box_dist = {
        let e = u.extent();
        (x[0] - u.origin[0])
            .min(e[0] - x[0])
            .min(x[1] - u.origin[1])
            .min(e[1] - x[1])
    };
    match u.domain {
        DomainKind::Ball { radius } => (radius - x[0].hypot(x[1])).min(box_dist),
        _ => box_dist,
    }
}

struct Growing {
    center: [f64; 2],
    radius: f64,
    class: GroupElement,
    norm: f64,
    bound: f64,
}

fn radius_at(b: &Growing, t: f64) -> f64 {
    if b.norm > 0.0 {
        b.radius.max(t * b.norm)
    } else {
        b.radius
    }
}

fn enclosing(a: &Growing, b: &Growing, group: &CoefficientGroup) -> Growing {
    let d = (b.center[0] - a.center[0]).hypot(b.center[1] - a.center[1]);
    let class = a.class.add(b.class);
    let norm = group.norm(class).expect("classes of one group");
    let bound = a.bound + b.bound;
    let (center, radius) = if d + b.radius <= a.radius {
        (a.center, a.radius)
    } else if d + a.radius <= b.radius {
        (b.center, b.radius)
    } else {
        let r = 0.5 * (d + a.radius + b.radius);
        let k = (r - a.radius) / d;
        (
            [
                a.center[0] + k * (b.center[0] - a.center[0]),
                a.center[1] + k * (b.center[1] - a.center[1]),
            ],
            r,
        )
    };
    Growing {
        center,
        radius,
        class,
        norm,
        bound,
    }
}

fn merge_overlaps(balls: &mut Vec<Growing>, group: &CoefficientGroup) {
    'again: loop {
        for i in 0..balls.len() {
            for j in i + 1..balls.len() {
                let d = (balls[i].center[0] - balls[j].center[0])
                    .hypot(balls[i].center[1] - balls[j].center[1]);
                if d <= (balls[i].radius + balls[j].radius) * (1.0 + 1e-12) {
                    let b = balls.swap_remove(j);
                    let a = balls.swap_remove(i);
                    balls.push(enclosing(&a, &b, group));
                    continue 'again;
                }
            }
        }
        return;
    }
}

/// Whether growing to scale `t` makes two balls touch, and whether a growing
/// ball leaves the domain.
fn growth_events(u: &Field, balls: &[Growing], t: f64) -> (bool, bool) {
    let mut touch = false;
    let mut out = false;
    for (i, a) in balls.iter().enumerate() {
        let ra = radius_at(a, t);
        if ra > a.radius && ra > dist_to_domain_boundary(u, a.center) {
            out = true;
        }
        for b in &balls[i + 1..] {
            let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
            if ra + radius_at(b, t) >= d {
                touch = true;
            }
        }
    }
    (touch, out)
}

/// Energy of the cells lying entirely inside the disk.
fn energy_in_ball(u: &Field, density: &[f64], center: [f64; 2], radius: f64) -> f64 {
    let (nx, ny) = (u.shape[0] - 1, u.shape[1] - 1);
    let area = u.spacing * u.spacing;
    let mut e = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let inside = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]
                .iter()
                .all(|&(a, b)| {
                    let p = u.position(u.index(a, b, 0));
                    (p[0] - center[0]).hypot(p[1] - center[1]) <= radius
                });
            if inside {
                e += density[i + nx * j] * area;
            }
        }
    }
    e
}

/// Covers the essential set by balls, grows them to the final scale and
/// returns the banked bound after checking it against the measured energy.
pub fn ball_construction(u: &Field, eps: f64, p: &BallParams) -> Result<LowerBoundCertificate> {
    require_planar(u)?;
    p.validate()?;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::NotAdmissible(format!("ε = {eps} outside (0, 1/2)")));
    }
    let report = energy::energy(u, eps);
    let measured = report.total;
    let group = CoefficientGroup::get(u.target.group().kind);
    let comps: Vec<Component> = essential_components(u, p)?
        .into_iter()
        .filter(|c| c.essential)
        .collect();
    if comps.is_empty() {
        return Ok(LowerBoundCertificate::empty(u, eps, measured));
    }

    let mut total_class = group.zero();
    let mut collar = f64::INFINITY;
    let mut balls = Vec::new();
    for c in &comps {
        total_class = total_class.add(c.class);
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut pts = Vec::new();
        for &[i, j] in &c.cells {
            for (a, b) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                let q = u.position(u.index(a, b, 0));
                for k in 0..2 {
                    lo[k] = lo[k].min(q[k]);
                    hi[k] = hi[k].max(q[k]);
                }
                collar = collar.min(dist_to_domain_boundary(u, [q[0], q[1]]));
                pts.push(q);
            }
        }
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let cover = pts
            .iter()
            .map(|q| (q[0] - center[0]).hypot(q[1] - center[1]))
            .fold(0.0, f64::max);
        let radius = cover.max(eps);
        let norm = group.norm(c.class)?;
        balls.push(Growing {
            center,
            radius,
            class: c.class,
            norm,
            bound: norm * Lambda_eps(radius / norm, eps, p),
        });
    }
    let total_norm = group.norm(total_class)?;
    if eps * eps.ln().abs() * total_norm > p.eps0 {
        return Err(Error::NotAdmissible(format!(
            "ε|log ε||σ|* = {} exceeds {}",
            eps * eps.ln().abs() * total_norm,
            p.eps0
        )));
    }
    let scale_norm = if total_norm > 0.0 {
        total_norm
    } else {
        group.min_nonzero_norm()
    };
    let tau = match p.tau {
        Some(t) => {
            if 4.0 * t * scale_norm >= collar {
                return Err(Error::NotAdmissible(format!(
                    "4τ|σ|* = {} is not below the collar {collar}",
                    4.0 * t * scale_norm
                )));
            }
            t
        }
        None => collar / (8.0 * scale_norm),
    };

    merge_overlaps(&mut balls, group);
    let mut hit_boundary = false;
    loop {
        let s = balls
            .iter()
            .filter(|b| b.norm > 0.0)
            .map(|b| b.radius / b.norm)
            .fold(f64::INFINITY, f64::min);
        if !s.is_finite() || s >= tau {
            break;
        }
        let target = (s * GROWTH).min(tau);
        let mut t = target;
        let mut stop = false;
        if growth_events(u, &balls, target) != (false, false) {
            let (mut lo, mut hi) = (s, target);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if growth_events(u, &balls, mid) != (false, false) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            // stop just short of the domain boundary, or grow into contact
            if growth_events(u, &balls, hi).1 {
                t = lo;
                stop = true;
            } else {
                t = hi;
            }
        }
        for b in balls.iter_mut() {
            let r = radius_at(b, t);
            if r > b.radius {
                b.bound += b.norm
                    * (Lambda_eps(r / b.norm, eps, p) - Lambda_eps(b.radius / b.norm, eps, p));
                b.radius = r;
            }
        }
        if stop {
            hit_boundary = true;
            break;
        }
        merge_overlaps(&mut balls, group);
    }
    let final_scale = balls
        .iter()
        .filter(|b| b.norm > 0.0)
        .map(|b| b.radius / b.norm)
        .fold(f64::INFINITY, f64::min);

    let certified_bound: f64 = balls.iter().map(|b| b.bound).sum();
    for b in &balls {
        let e = energy_in_ball(u, &report.per_cell_density, b.center, b.radius);
        if b.bound > e {
            return Err(Error::Unsound {
                bound: b.bound,
                energy: e,
            });
        }
    }
    if certified_bound > measured {
        return Err(Error::Unsound {
            bound: certified_bound,
            energy: measured,
        });
    }
    Ok(LowerBoundCertificate {
        balls: balls
            .into_iter()
            .map(|b| CertBall {
                center: b.center,
                radius: b.radius,
                class: b.class,
                bound: b.bound,
            })
            .collect(),
        certified_bound,
        measured_energy: measured,
        total_class,
        epsilon: eps,
        collar,
        tau,
        final_scale: if final_scale.is_finite() {
            final_scale
        } else {
            0.0
        },
        hit_boundary,
    })
}

/// Lower bound for a field on the solid torus from planar certificates on
/// `n_slices` half-planes through the symmetry axis. Each slice is resampled
/// in coordinates `(ρ - major, z)` on the disk of radius `minor`; since
/// `ρ ≥ major - minor` there, the volume energy is at least
/// `(major - minor) Σ Δθ · bound(slice)`.
pub fn sliced_bound(
    u: &Field,
    eps: f64,
    p: &BallParams,
    n_slices: usize,
) -> Result<(f64, Vec<LowerBoundCertificate>)> {
    let (major, minor) = match u.domain {
        DomainKind::SolidTorus { major, minor } => (major, minor),
        _ => return Err(Error::Dimension("slicing needs a solid-torus field".into())),
    };
    let n_slices = n_slices.max(1);
    let h = u.spacing;
    let half = minor + 3.0 * h;
    let n = (2.0 * half / h).ceil() as usize + 1;
    let certs = (0..n_slices)
        .into_par_iter()
        .map(|j| {
            let th = 2.0 * std::f64::consts::PI * j as f64 / n_slices as f64;
            let (c, s) = (th.cos(), th.sin());
            let target = TargetManifold::with_params(
                u.target.kind,
                Some(u.target.theta0),
                Some(u.target.delta_star),
            )?;
            let mut f = Field::new(
                2,
                [n, n, 1],
                [-half, -half, 0.0],
                h,
                target,
                DomainKind::Ball { radius: minor },
            )?;
            let mut val = vec![0.0; u.m()];
            for i in 0..f.num_nodes() {
                let q = f.position(i);
                let x = [(major + q[0]) * c, (major + q[0]) * s, q[1]];
                u.interpolate(&x, &mut val);
                f.set_value(i, &val);
            }
            ball_construction(&f, eps, p)
        })
        .collect::<Result<Vec<_>>>()?;
    let dtheta = 2.0 * std::f64::consts::PI / n_slices as f64;
    let bound = (major - minor) * dtheta * certs.iter().map(|c| c.certified_bound).sum::<f64>();
    let measured = energy::energy(u, eps).total;
    if bound > measured {
        return Err(Error::Unsound {
            bound,
            energy: measured,
        });
    }
    Ok((bound, certs))
}

/// Default slice count for [`sliced_bound`] on the solid torus.
pub fn default_slices() -> usize {
    (2.0 * std::f64::consts::PI * (TORUS_MAJOR - TORUS_MINOR) / 0.25).round() as usize
}
