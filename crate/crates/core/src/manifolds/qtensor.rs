//! Symmetric traceless 3x3 matrices ("Q-tensors") identified with R^5.
//!
//! The coordinates are taken with respect to a Frobenius-orthonormal basis, so
//! Euclidean geometry in R^5 is the Frobenius geometry of the matrices. The
//! projective plane sits inside as the unit-norm uniaxial tensors
//! `sqrt(3/2) (n n^T - I/3)`.

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn sqrt6() -> f64 {
    6f64.sqrt()
}

/// Symmetric matrix for the coordinate vector `q`.
pub fn to_matrix(q: &[f64]) -> Mat3 {
    let s2 = 1.0 / SQRT2;
    let s6 = 1.0 / sqrt6();
    let d0 = q[0] * s2 + q[1] * s6;
    let d1 = -q[0] * s2 + q[1] * s6;
    let d2 = -2.0 * q[1] * s6;
    [
        [d0, q[2] * s2, q[3] * s2],
        [q[2] * s2, d1, q[4] * s2],
        [q[3] * s2, q[4] * s2, d2],
    ]
}

/// Coordinates of the traceless symmetric part of `m`.
pub fn from_matrix(m: &Mat3) -> [f64; 5] {
    let s2 = 1.0 / SQRT2;
    let s6 = 1.0 / sqrt6();
    [
        (m[0][0] - m[1][1]) * s2,
        (m[0][0] + m[1][1] - 2.0 * m[2][2]) * s6,
        (m[0][1] + m[1][0]) * s2,
        (m[0][2] + m[2][0]) * s2,
        (m[1][2] + m[2][1]) * s2,
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn trace(a: &Mat3) -> f64 {
    a[0][0] + a[1][1] + a[2][2]
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
///
/// Eigenvalues are returned in descending order; `vectors[i]` is the unit
/// eigenvector for `values[i]`.
pub fn sym_eigen(m: &Mat3) -> ([f64; 3], [Vec3; 3]) {
    let mut a = *m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..50 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let scale = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2] + off;
        if off <= 1e-32 * scale.max(1e-300) {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // a <- J^T a J with J the rotation in the (p, q) plane
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = [
        a[order[0]][order[0]],
        a[order[1]][order[1]],
        a[order[2]][order[2]],
    ];
    let mut vectors = [[0.0; 3]; 3];
    for (slot, &col) in order.iter().enumerate() {
        vectors[slot] = [v[0][col], v[1][col], v[2][col]];
    }
    (values, vectors)
}

/// Unit uniaxial tensor with director `n` (need not be normalised).
pub fn embed_director(n: &Vec3) -> [f64; 5] {
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let u = [n[0] / len, n[1] / len, n[2] / len];
    let k = (1.5f64).sqrt();
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = k * (u[i] * u[j] - if i == j { 1.0 / 3.0 } else { 0.0 });
        }
    }
    from_matrix(&m)
}

/// Leading eigenpair together with the gap to the second eigenvalue.
pub struct Leading {
    pub value: f64,
    pub vector: Vec3,
    pub gap: f64,
}

pub fn leading(q: &[f64]) -> Leading {
    let (values, vectors) = sym_eigen(&to_matrix(q));
    Leading {
        value: values[0],
        vector: vectors[0],
        gap: values[0] - values[1],
    }
}

pub fn norm_sq(q: &[f64]) -> f64 {
    q.iter().map(|x| x * x).sum()
}

/// Distance from `q` to the embedded projective plane.
pub fn dist_to_rp2(q: &[f64]) -> f64 {
    let lead = leading(q);
    // |Q - sqrt(3/2)(nn^T - I/3)|^2 = |Q|^2 + 1 - sqrt(6) lambda_max for traceless Q
    (norm_sq(q) + 1.0 - sqrt6() * lead.value).max(0.0).sqrt()
}

/// Distance from `q` to the set where the two leading eigenvalues coincide.
pub fn dist_to_degenerate(q: &[f64]) -> f64 {
    leading(q).gap / SQRT2
}

/// Nearest point on the projective plane; ill-defined when the leading
/// eigenvalue is degenerate.
pub fn project_rp2(q: &[f64]) -> [f64; 5] {
    embed_director(&leading(q).vector)
}

pub fn trace_cube(q: &[f64]) -> f64 {
    let m = to_matrix(q);
    trace(&mat_mul(&mat_mul(&m, &m), &m))
}

/// Quartic bulk potential `-|Q|^2/2 - (sqrt6/3) tr Q^3 + |Q|^4/2 + 1/3`,
/// which vanishes exactly on the unit uniaxial tensors.
pub fn potential(q: &[f64]) -> f64 {
    let r2 = norm_sq(q);
    -0.5 * r2 - sqrt6() / 3.0 * trace_cube(q) + 0.5 * r2 * r2 + 1.0 / 3.0
}

pub fn potential_grad(q: &[f64]) -> [f64; 5] {
    let r2 = norm_sq(q);
    let m = to_matrix(q);
    let m2 = mat_mul(&m, &m);
    // d tr(Q^3) = 3 <Q^2, dQ>; from_matrix drops the trace part
    let cube_grad = from_matrix(&m2);
    let mut g = [0.0; 5];
    for i in 0..5 {
        g[i] = -q[i] - sqrt6() * cube_grad[i] + 2.0 * r2 * q[i];
    }
    g
}

/// Energy `(1/2) int |gamma'|^2` of the shortest non-contractible loop on the
/// embedded projective plane, parametrised over a unit circle, computed by
/// discrete curve shortening with `segments` chords.
///
/// The loop is relaxed by Gauss-Seidel sweeps `Q_i <- proj((Q_{i-1}+Q_{i+1})/2)`
/// on a coarse polygon and refined by midpoint insertion until the target
/// resolution is reached.
pub fn shortest_loop_energy(segments: usize) -> f64 {
    let mut m = 10usize;
    let mut pts: Vec<[f64; 5]> = (0..m)
        .map(|i| {
            let phi = std::f64::consts::PI * i as f64 / m as f64;
            embed_director(&[
                phi.cos(),
                phi.sin(),
                0.5 * (3.0 * phi).sin() + 0.3 * phi.cos(),
            ])
        })
        .collect();
    // the lift n(0) -> n(pi) = -n(0) closes up in RP^2, so the loop is non-contractible
    loop {
        relax_loop(&mut pts, 200_000, 1e-13);
        if m * 2 > segments {
            break;
        }
        pts = (0..2 * m)
            .map(|i| {
                if i % 2 == 0 {
                    pts[i / 2]
                } else {
                    let a = pts[i / 2];
                    let b = pts[(i / 2 + 1) % m];
                    let mid: Vec<f64> = (0..5).map(|k| 0.5 * (a[k] + b[k])).collect();
                    project_rp2(&mid)
                }
            })
            .collect();
        m *= 2;
    }
    if m != segments {
        pts = (0..segments)
            .map(|i| {
                let t = i as f64 * m as f64 / segments as f64;
                let j = t.floor() as usize;
                let frac = t - j as f64;
                let a = pts[j % m];
                let b = pts[(j + 1) % m];
                let p: Vec<f64> = (0..5).map(|k| (1.0 - frac) * a[k] + frac * b[k]).collect();
                project_rp2(&p)
            })
            .collect();
        relax_loop(&mut pts, 20_000, 1e-13);
    }
    loop_energy(&pts)
}

fn loop_energy(pts: &[[f64; 5]]) -> f64 {
    let m = pts.len();
    let sum: f64 = (0..m)
        .map(|i| {
            let a = pts[i];
            let b = pts[(i + 1) % m];
            (0..5).map(|k| (b[k] - a[k]).powi(2)).sum::<f64>()
        })
        .sum();
    // (1/2) sum |dQ/dt|^2 dt with dt = 2 pi / m
    m as f64 / (4.0 * std::f64::consts::PI) * sum
}

fn relax_loop(pts: &mut [[f64; 5]], max_sweeps: usize, rel_tol: f64) {
    let m = pts.len();
    let mut prev = loop_energy(pts);
    for _ in 0..max_sweeps {
        for i in 0..m {
            let a = pts[(i + m - 1) % m];
            let b = pts[(i + 1) % m];
            let mid: Vec<f64> = (0..5).map(|k| 0.5 * (a[k] + b[k])).collect();
            pts[i] = project_rp2(&mid);
        }
        let e = loop_energy(pts);
        if (prev - e).abs() <= rel_tol * e {
            break;
        }
        prev = e;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_director_is_unit_and_on_manifold() {
        let q = embed_director(&[0.3, -0.4, 0.8]);
        assert!((norm_sq(&q) - 1.0).abs() < 1e-14);
        assert!(dist_to_rp2(&q) < 1e-7);
        assert!(potential(&q).abs() < 1e-14);
    }

    #[test]
    fn matrix_roundtrip_is_traceless() {
        let q = [0.1, -0.7, 0.3, 0.25, -0.05];
        let m = to_matrix(&q);
        assert!(trace(&m).abs() < 1e-15);
        let back = from_matrix(&m);
        for i in 0..5 {
            assert!((back[i] - q[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_set_distance_for_manifold_points() {
        let q = embed_director(&[0.0, 0.0, 1.0]);
        // eigenvalues sqrt6 (2,-1,-1)/6: gap sqrt6/2, distance sqrt3/2
        assert!((dist_to_degenerate(&q) - 3f64.sqrt() / 2.0).abs() < 1e-12);
    }
}
