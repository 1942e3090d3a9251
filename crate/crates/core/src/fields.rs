//! Sampled maps `u: Ω → R^m` on uniform grids, boundary data, dipole
//! insertion, and the two constructions that turn N-valued maps with
//! singularities into finite-energy fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use crate::chains::{Point, PolyChain};
use crate::error::{Error, Result};
use crate::groups::GroupElement;
use crate::manifolds::{qtensor, ManifoldKind, TargetManifold};

/// Radii of the solid torus of revolution `{(ρ - MAJOR)^2 + z^2 < MINOR^2}`.
pub const TORUS_MAJOR: f64 = 2.0;
pub const TORUS_MINOR: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    /// The whole grid box.
    Box,
    /// Disk (2D) or ball (3D) of the given radius around the origin.
    Ball { radius: f64 },
    /// Solid torus of revolution about the z-axis.
    SolidTorus { major: f64, minor: f64 },
}

impl DomainKind {
    pub fn contains(&self, p: &Point, dims: usize) -> bool {
        match *self {
            DomainKind::Box => true,
            DomainKind::Ball { radius } => {
                let r2: f64 = (0..dims).map(|i| p[i] * p[i]).sum();
                r2 < radius * radius
            }
            DomainKind::SolidTorus { major, minor } => {
                let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
                (rho - major).powi(2) + p[2] * p[2] < minor * minor
            }
        }
    }

    fn code(&self) -> u32 {
        match self {
            DomainKind::Box => 0,
            DomainKind::Ball { .. } => 1,
            DomainKind::SolidTorus { .. } => 2,
        }
    }
}

/// Inside flags and the band of outside nodes within one spacing of the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainMask {
    pub inside: Vec<bool>,
    pub boundary_band: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Field {
    /// Spatial dimension, 2 or 3.
    pub dims: usize,
    /// Node counts per axis; the third entry is 1 for planar fields.
    pub shape: [usize; 3],
    pub origin: Point,
    pub spacing: f64,
    pub target: TargetManifold,
    pub domain: DomainKind,
    /// Node-major ambient vectors: node `i` occupies `values[i*m..(i+1)*m]`.
    pub values: Vec<f64>,
    pub dirichlet: Vec<bool>,
    pub mask: DomainMask,
}

/// Boundary-datum descriptors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatumSpec {
    /// Planar disk of radius `radius` with boundary values of class `class`
    /// (`e^{idθ}` for the circle), sampled on `nodes x nodes` over the
    /// bounding square.
    Disk {
        class: Vec<i64>,
        radius: f64,
        nodes: usize,
    },
    /// Ball in R^3 whose boundary sphere carries point singularities.
    SpherePoints {
        radius: f64,
        nodes: usize,
        points: Vec<SpherePoint>,
    },
    /// The solid torus with `u(Ψ(x, θ)) = x`; `nodes` is the budget `nodes^3`
    /// of grid points spent on the bounding box.
    SolidTorus { nodes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    /// Direction of the singularity on the boundary sphere.
    pub at: Point,
    pub class: Vec<i64>,
}

/// Oriented flat simplex carrying a dipole: a segment in the plane or a planar
/// polygon in space (vertex order fixes the orientation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    pub vertices: Vec<Point>,
}

impl Field {
    pub fn new(
        dims: usize,
        shape: [usize; 3],
        origin: Point,
        spacing: f64,
        target: TargetManifold,
        domain: DomainKind,
    ) -> Result<Self> {
        if dims != 2 && dims != 3 {
            return Err(Error::Dimension(format!(
                "fields live in 2 or 3 dimensions, not {dims}"
            )));
        }
        if !(spacing > 0.0) || shape.iter().take(dims).any(|&n| n < 2) {
            return Err(Error::Dimension(
                "grid needs spacing > 0 and two nodes per axis".into(),
            ));
        }
        let mut shape = shape;
        if dims == 2 {
            shape[2] = 1;
        }
        let n = shape[0] * shape[1] * shape[2];
        let m = target.ambient_dim();
        let mut f = Field {
            dims,
            shape,
            origin,
            spacing,
            target,
            domain,
            values: vec![0.0; n * m],
            dirichlet: vec![false; n],
            mask: DomainMask {
                inside: vec![true; n],
                boundary_band: Vec::new(),
            },
        };
        f.rebuild_mask();
        Ok(f)
    }

    /// Recomputes the inside flags from the domain; outside nodes become Dirichlet.
    pub fn rebuild_mask(&mut self) {
        let n = self.num_nodes();
        let inside: Vec<bool> = (0..n)
            .map(|i| self.domain.contains(&self.position(i), self.dims))
            .collect();
        let mut band = Vec::new();
        for i in 0..n {
            if !inside[i] && self.neighbours(i).into_iter().any(|j| inside[j]) {
                band.push(i);
            }
        }
        for i in 0..n {
            if !inside[i] {
                self.dirichlet[i] = true;
            }
        }
        if self.domain == DomainKind::Box {
            // the box has no outside nodes; its boundary layer carries the data
            for i in 0..n {
                let c = self.coords(i);
                let on_face = (0..self.dims).any(|a| c[a] == 0 || c[a] + 1 == self.shape[a]);
                if on_face {
                    self.dirichlet[i] = true;
                    band.push(i);
                }
            }
        }
        self.mask = DomainMask {
            inside,
            boundary_band: band,
        };
    }

    pub fn m(&self) -> usize {
        self.target.ambient_dim()
    }

    pub fn num_nodes(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.shape[0] * (j + self.shape[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.shape[0];
        let j = (idx / self.shape[0]) % self.shape[1];
        let k = idx / (self.shape[0] * self.shape[1]);
        [i, j, k]
    }

    pub fn position(&self, idx: usize) -> Point {
        let c = self.coords(idx);
        let mut p = [0.0; 3];
        for a in 0..self.dims {
            p[a] = self.origin[a] + self.spacing * c[a] as f64;
        }
        p
    }

    /// Upper corner of the grid box.
    pub fn extent(&self) -> Point {
        let mut p = self.origin;
        for a in 0..self.dims {
            p[a] += self.spacing * (self.shape[a] - 1) as f64;
        }
        p
    }

    pub fn neighbours(&self, idx: usize) -> Vec<usize> {
        let c = self.coords(idx);
        let mut out = Vec::with_capacity(6);
        for a in 0..self.dims {
            if c[a] > 0 {
                let mut d = c;
                d[a] -= 1;
                out.push(self.index(d[0], d[1], d[2]));
            }
            if c[a] + 1 < self.shape[a] {
                let mut d = c;
                d[a] += 1;
                out.push(self.index(d[0], d[1], d[2]));
            }
        }
        out
    }

    pub fn value(&self, idx: usize) -> &[f64] {
        let m = self.m();
        &self.values[idx * m..(idx + 1) * m]
    }

    pub fn set_value(&mut self, idx: usize, v: &[f64]) {
        let m = self.m();
        self.values[idx * m..(idx + 1) * m].copy_from_slice(&v[..m]);
    }

    /// Multilinear interpolation of the field at `p` (clamped to the grid box).
    pub fn interpolate(&self, p: &Point, out: &mut [f64]) {
        let m = self.m();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..self.dims {
            let t = ((p[a] - self.origin[a]) / self.spacing).clamp(0.0, (self.shape[a] - 1) as f64);
            let i = (t.floor() as usize).min(self.shape[a] - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        out[..m].iter_mut().for_each(|v| *v = 0.0);
        let corners = 1usize << self.dims;
        for c in 0..corners {
            let mut w = 1.0;
            let mut at = base;
            for a in 0..self.dims {
                if c >> a & 1 == 1 {
                    w *= frac[a];
                    at[a] += 1;
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let v = self.value(self.index(at[0], at[1], at[2]));
            for k in 0..m {
                out[k] += w * v[k];
            }
        }
    }

    /// Adds independent uniform noise of the given amplitude to free nodes.
    pub fn perturb(&mut self, seed: u64, amplitude: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.m();
        for i in 0..self.num_nodes() {
            for k in 0..m {
                let r: f64 = rng.gen_range(-1.0..1.0);
                if !self.dirichlet[i] {
                    self.values[i * m + k] += amplitude * r;
                }
            }
        }
    }

    /// Largest distance to N over all nodes (or over inside nodes only).
    pub fn max_dist_to_manifold(&self, inside_only: bool) -> f64 {
        (0..self.num_nodes())
            .filter(|&i| !inside_only || self.mask.inside[i])
            .map(|i| self.target.dist_to_manifold(self.value(i)))
            .fold(0.0, f64::max)
    }

    fn map_nodes(&self, f: impl Fn(usize, &[f64], &mut [f64]) + Sync) -> Field {
        let m = self.m();
        let mut out = self.clone();
        out.values
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, dst)| {
                f(i, &self.values[i * m..(i + 1) * m], dst);
            });
        out
    }

    /// Adds `σ ∂⟦T⟧` to the singular set by twisting the field with the
    /// multivalued phase of `T` (the angle subtended by a segment in the plane,
    /// half the solid angle of a polygon in space).
    pub fn insert_dipole(&self, t: &Simplex, sigma: GroupElement) -> Result<Field> {
        self.target.group().check(sigma)?;
        if sigma.is_zero() {
            return Ok(self.clone());
        }
        let need = if self.dims == 2 { 2 } else { 3 };
        if t.vertices.len() < need || (self.dims == 2 && t.vertices.len() != 2) {
            return Err(Error::Dimension(
                "dipole simplex has the wrong number of vertices".into(),
            ));
        }
        for v in &t.vertices {
            if !self.domain.contains(v, self.dims)
                || !strictly_inside_box(v, &self.origin, &self.extent(), self.dims)
            {
                return Err(Error::SimplexTouchesBoundary);
            }
        }
        if self.domain != DomainKind::Box && !simplex_inside(&self.domain, t, self.dims) {
            return Err(Error::SimplexTouchesBoundary);
        }
        let kind = self.target.kind;
        // rotation axis for director fields: perpendicular to the director at the centroid
        let axis = if kind == ManifoldKind::ProjectivePlane {
            let c = centroid(&t.vertices);
            let mut q = vec![0.0; 5];
            self.interpolate(&c, &mut q);
            let n = qtensor::leading(&q).vector;
            Some(perpendicular(&n))
        } else {
            None
        };
        let dims = self.dims;
        Ok(self.map_nodes(|i, src, dst| {
            let x = self.position(i);
            let phase = dipole_phase(t, &x, dims);
            match sigma {
                GroupElement::Int(d) => rotate_pair(src, dst, d as f64 * phase),
                GroupElement::IntPair(d1, d2) => {
                    rotate_pair(&src[..2], &mut dst[..2], d1 as f64 * phase);
                    rotate_pair(&src[2..4], &mut dst[2..4], d2 as f64 * phase);
                }
                GroupElement::Bit(_) => {
                    let r = rotation(&axis.unwrap(), phase / 2.0);
                    let q = qtensor::to_matrix(src);
                    let rq = mat_mul(&mat_mul(&r, &q), &transpose(&r));
                    dst.copy_from_slice(&qtensor::from_matrix(&rq));
                }
            }
        }))
    }

    /// Scales every node by `min(dist(x, spt S)/ε, 1)`.
    pub fn regularize(&self, s: &PolyChain, eps: f64) -> Field {
        if s.is_empty() {
            return self.clone();
        }
        self.map_nodes(|i, src, dst| {
            let d = s.distance_to_support(&self.position(i));
            let f = (d / eps).min(1.0);
            for k in 0..src.len() {
                dst[k] = f * src[k];
            }
        })
    }

    /// `ξ_ε(ψ(u - y)) ϱ_y(u)` per node with `ξ_ε(t) = min(t/ε, 1)`.
    pub fn project_near_manifold(&self, y: &[f64], eps: f64) -> Result<Field> {
        let tm = self.target;
        let yn = crate::manifolds::norm(y);
        if !(yn < tm.delta_star) {
            return Err(Error::Config(format!(
                "shift norm {yn} must be below {}",
                tm.delta_star
            )));
        }
        Ok(self.map_nodes(|_, src, dst| {
            let shifted: Vec<f64> = src.iter().zip(y).map(|(a, b)| a - b).collect();
            let scale = (tm.cutoff_psi(&shifted) / eps).min(1.0);
            match tm.retraction(src, y) {
                Ok(p) if scale > 0.0 => {
                    for k in 0..dst.len() {
                        dst[k] = scale * p[k];
                    }
                }
                _ => dst.iter_mut().for_each(|v| *v = 0.0),
            }
        }))
    }

    pub fn write_glf(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::with_capacity(128 + self.values.len() * 8 + self.num_nodes());
        buf.extend_from_slice(GLF_MAGIC);
        put_u32(&mut buf, GLF_VERSION);
        put_u32(&mut buf, self.m() as u32);
        put_u32(&mut buf, (self.dims - 2) as u32);
        for a in 0..3 {
            put_u32(&mut buf, self.shape[a] as u32);
        }
        put_f64(&mut buf, self.spacing);
        put_u32(&mut buf, self.domain.code());
        // extension block: origin, domain parameters, target parameters
        for a in 0..3 {
            put_f64(&mut buf, self.origin[a]);
        }
        let (p0, p1) = match self.domain {
            DomainKind::Box => (0.0, 0.0),
            DomainKind::Ball { radius } => (radius, 0.0),
            DomainKind::SolidTorus { major, minor } => (major, minor),
        };
        put_f64(&mut buf, p0);
        put_f64(&mut buf, p1);
        put_u32(&mut buf, self.target.kind.code());
        put_f64(&mut buf, self.target.theta0);
        put_f64(&mut buf, self.target.delta_star);
        put_f64(&mut buf, self.target.lambda0);
        for i in 0..self.num_nodes() {
            buf.push(self.mask.inside[i] as u8 | (self.dirichlet[i] as u8) << 1);
        }
        for v in &self.values {
            put_f64(&mut buf, *v);
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn read_glf(path: &Path) -> Result<Field> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader {
            bytes: &bytes,
            at: 0,
        };
        if r.take(4)? != GLF_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != GLF_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let m = r.u32()? as usize;
        let dims = r.u32()? as usize + 2;
        let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let spacing = r.f64()?;
        let domain_code = r.u32()?;
        let origin = [r.f64()?, r.f64()?, r.f64()?];
        let (p0, p1) = (r.f64()?, r.f64()?);
        let domain = match domain_code {
            0 => DomainKind::Box,
            1 => DomainKind::Ball { radius: p0 },
            2 => DomainKind::SolidTorus {
                major: p0,
                minor: p1,
            },
            c => return Err(Error::Format(format!("unknown domain code {c}"))),
        };
        let kind = ManifoldKind::from_code(r.u32()?)
            .ok_or_else(|| Error::Format("unknown target".into()))?;
        let mut target = TargetManifold::new(kind);
        target.theta0 = r.f64()?;
        target.delta_star = r.f64()?;
        target.lambda0 = r.f64()?;
        if target.ambient_dim() != m {
            return Err(Error::Format(format!(
                "target dimension {} does not match m = {m}",
                target.ambient_dim()
            )));
        }
        let mut f = Field::new(dims, shape, origin, spacing, target, domain)?;
        let n = f.num_nodes();
        let flags = r.take(n)?.to_vec();
        for i in 0..n {
            f.mask.inside[i] = flags[i] & 1 == 1;
            f.dirichlet[i] = flags[i] & 2 == 2;
        }
        for v in f.values.iter_mut() {
            *v = r.f64()?;
        }
        if r.at != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite value".into()));
        }
        Ok(f)
    }
}

const GLF_MAGIC: &[u8; 4] = b"GLCH";
const GLF_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn strictly_inside_box(p: &Point, lo: &Point, hi: &Point, dims: usize) -> bool {
    (0..dims).all(|a| p[a] > lo[a] && p[a] < hi[a])
}

fn simplex_inside(domain: &DomainKind, t: &Simplex, dims: usize) -> bool {
    // sample edges and, in space, the fan triangles
    let n = t.vertices.len();
    let steps = 32;
    for i in 0..n {
        let a = t.vertices[i];
        let b = t.vertices[(i + 1) % n];
        for s in 0..=steps {
            let u = s as f64 / steps as f64;
            let p = [
                a[0] + u * (b[0] - a[0]),
                a[1] + u * (b[1] - a[1]),
                a[2] + u * (b[2] - a[2]),
            ];
            if !domain.contains(&p, dims) {
                return false;
            }
        }
    }
    if dims == 3 {
        let c = centroid(&t.vertices);
        for v in &t.vertices {
            for s in 0..=steps {
                let u = s as f64 / steps as f64;
                let p = [
                    c[0] + u * (v[0] - c[0]),
                    c[1] + u * (v[1] - c[1]),
                    c[2] + u * (v[2] - c[2]),
                ];
                if !domain.contains(&p, dims) {
                    return false;
                }
            }
        }
    }
    true
}

fn centroid(v: &[Point]) -> Point {
    let n = v.len() as f64;
    let mut c = [0.0; 3];
    for p in v {
        for a in 0..3 {
            c[a] += p[a] / n;
        }
    }
    c
}

fn perpendicular(n: &[f64; 3]) -> [f64; 3] {
    let axis = (0..3)
        .min_by(|&i, &j| n[i].abs().total_cmp(&n[j].abs()))
        .unwrap();
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let c = [
        n[1] * e[2] - n[2] * e[1],
        n[2] * e[0] - n[0] * e[2],
        n[0] * e[1] - n[1] * e[0],
    ];
    let l = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    [c[0] / l, c[1] / l, c[2] / l]
}

type Mat3 = qtensor::Mat3;

fn rotation(axis: &[f64; 3], angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = *axis;
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
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

fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

fn rotate_pair(src: &[f64], dst: &mut [f64], angle: f64) {
    let (s, c) = angle.sin_cos();
    dst[0] = c * src[0] - s * src[1];
    dst[1] = s * src[0] + c * src[1];
}

/// Multivalued phase of the dipole carried by `t`, seen from `x`; it jumps by
/// `2π` across `t`.
///
/// In the plane this is the signed angle from `a - x` to `b - x`, whose
/// winding is `+1` around `b` and `-1` around `a`. In space it is minus half
/// the signed solid angle of the polygon (Van Oosterom-Strackee per fan
/// triangle).
pub fn dipole_phase(t: &Simplex, x: &Point, dims: usize) -> f64 {
    if dims == 2 {
        let a = t.vertices[0];
        let b = t.vertices[1];
        let (ax, ay) = (a[0] - x[0], a[1] - x[1]);
        let (bx, by) = (b[0] - x[0], b[1] - x[1]);
        (ax * by - ay * bx).atan2(ax * bx + ay * by)
    } else {
        -0.5 * solid_angle(&t.vertices, x)
    }
}

/// Signed solid angle of a planar polygon seen from `x`, positive when the
/// vertices run counter-clockwise as seen from `x`.
pub fn solid_angle(vertices: &[Point], x: &Point) -> f64 {
    let r = |p: &Point| [p[0] - x[0], p[1] - x[1], p[2] - x[2]];
    let len = |v: &[f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let r0 = r(&vertices[0]);
    let l0 = len(&r0);
    let mut total = 0.0;
    for i in 1..vertices.len() - 1 {
        let r1 = r(&vertices[i]);
        let r2 = r(&vertices[i + 1]);
        let (l1, l2) = (len(&r1), len(&r2));
        let triple = r0[0] * (r1[1] * r2[2] - r1[2] * r2[1])
            - r0[1] * (r1[0] * r2[2] - r1[2] * r2[0])
            + r0[2] * (r1[0] * r2[1] - r1[1] * r2[0]);
        let den = l0 * l1 * l2 + dot(&r0, &r1) * l2 + dot(&r0, &r2) * l1 + dot(&r1, &r2) * l0;
        total += 2.0 * triple.atan2(den);
    }
    // the triple product is negative for vertices counter-clockwise seen from x
    -total
}

/// Builds the field described by `spec` with its Dirichlet data and seeded interior.
pub fn make_boundary_datum(spec: &DatumSpec, target: TargetManifold) -> Result<Field> {
    let group = target.group();
    match spec {
        DatumSpec::Disk {
            class,
            radius,
            nodes,
        } => {
            let sigma = GroupElement::from_ints(group.kind, class)
                .map_err(|e| Error::InvalidDescriptor(e.to_string()))?;
            if !(*radius > 0.0) || *nodes < 8 {
                return Err(Error::InvalidDescriptor(
                    "disk needs radius > 0 and at least 8 nodes".into(),
                ));
            }
            let spacing = 2.0 * radius / (*nodes - 1) as f64;
            let mut f = Field::new(
                2,
                [*nodes, *nodes, 1],
                [-radius, -radius, 0.0],
                spacing,
                target,
                DomainKind::Ball { radius: *radius },
            )?;
            let r_max = *radius;
            let vals: Vec<(usize, Vec<f64>)> = (0..f.num_nodes())
                .map(|i| {
                    let p = f.position(i);
                    let theta = p[1].atan2(p[0]);
                    let on_n = loop_value(&target, sigma, theta);
                    let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                    let scale = if f.mask.inside[i] {
                        (r / r_max).min(1.0)
                    } else {
                        1.0
                    };
                    (i, on_n.iter().map(|v| scale * v).collect())
                })
                .collect();
            for (i, v) in vals {
                f.set_value(i, &v);
            }
            Ok(f)
        }
        DatumSpec::SpherePoints {
            radius,
            nodes,
            points,
        } => {
            if points.is_empty() {
                return Err(Error::InvalidDescriptor("no boundary singularities".into()));
            }
            let mut total = group.zero();
            let mut charges = Vec::new();
            for sp in points {
                let s = GroupElement::from_ints(group.kind, &sp.class)
                    .map_err(|e| Error::InvalidDescriptor(e.to_string()))?;
                total = total.add(s);
                let l = (sp.at[0].powi(2) + sp.at[1].powi(2) + sp.at[2].powi(2)).sqrt();
                if l == 0.0 {
                    return Err(Error::InvalidDescriptor(
                        "singularity direction is zero".into(),
                    ));
                }
                charges.push(([sp.at[0] / l, sp.at[1] / l, sp.at[2] / l], s));
            }
            if !total.is_zero() {
                return Err(Error::InvalidDescriptor(format!(
                    "boundary classes sum to {total}, not zero"
                )));
            }
            let pole = stereographic_pole(&charges.iter().map(|c| c.0).collect::<Vec<_>>());
            let spacing = 2.0 * radius / (*nodes - 1) as f64;
            let mut f = Field::new(
                3,
                [*nodes, *nodes, *nodes],
                [-radius, -radius, -radius],
                spacing,
                target,
                DomainKind::Ball { radius: *radius },
            )?;
            let planar: Vec<([f64; 2], GroupElement)> = charges
                .iter()
                .map(|(p, s)| (stereographic(p, &pole), *s))
                .collect();
            for i in 0..f.num_nodes() {
                let p = f.position(i);
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                let dir = if r > 0.0 {
                    [p[0] / r, p[1] / r, p[2] / r]
                } else {
                    [pole[0], pole[1], pole[2]]
                };
                let z = stereographic(&dir, &pole);
                let v = sphere_value(&target, &planar, &z);
                let scale = if f.mask.inside[i] {
                    (r / radius).min(1.0)
                } else {
                    1.0
                };
                let v: Vec<f64> = v.iter().map(|x| scale * x).collect();
                f.set_value(i, &v);
            }
            Ok(f)
        }
        DatumSpec::SolidTorus { nodes } => {
            if target.kind != ManifoldKind::Circle {
                return Err(Error::InvalidDescriptor(
                    "the solid-torus datum takes values in the circle".into(),
                ));
            }
            let (major, minor) = (TORUS_MAJOR, TORUS_MINOR);
            let half_xy = major + minor;
            let half_z = minor;
            // same node budget as a nodes^3 cube, spent on the bounding box
            let budget = (*nodes as f64).powi(3);
            let margin_frac = 0.04;
            let lx = 2.0 * half_xy * (1.0 + margin_frac);
            let lz = 2.0 * half_z * (1.0 + 3.0 * margin_frac);
            let spacing = (lx * lx * lz / budget).cbrt();
            let nx = (lx / spacing).ceil() as usize + 1;
            let nz = (lz / spacing).ceil() as usize + 1;
            let origin = [
                -spacing * (nx - 1) as f64 / 2.0,
                -spacing * (nx - 1) as f64 / 2.0,
                -spacing * (nz - 1) as f64 / 2.0,
            ];
            let mut f = Field::new(
                3,
                [nx, nx, nz],
                origin,
                spacing,
                target,
                DomainKind::SolidTorus { major, minor },
            )?;
            for i in 0..f.num_nodes() {
                let p = f.position(i);
                let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
                let x = [rho - major, p[2]];
                let v = if f.mask.inside[i] {
                    x
                } else {
                    let l = (x[0] * x[0] + x[1] * x[1]).sqrt();
                    if l > 0.0 {
                        [x[0] / l, x[1] / l]
                    } else {
                        [1.0, 0.0]
                    }
                };
                f.set_value(i, &v);
            }
            Ok(f)
        }
    }
}

/// The closed loop `θ ↦ v(θ)` of class `σ` used for disk data.
pub fn loop_value(target: &TargetManifold, sigma: GroupElement, theta: f64) -> Vec<f64> {
    match sigma {
        GroupElement::Int(d) => vec![(d as f64 * theta).cos(), (d as f64 * theta).sin()],
        GroupElement::IntPair(a, b) => vec![
            (a as f64 * theta).cos(),
            (a as f64 * theta).sin(),
            (b as f64 * theta).cos(),
            (b as f64 * theta).sin(),
        ],
        GroupElement::Bit(b) => {
            debug_assert_eq!(target.kind, ManifoldKind::ProjectivePlane);
            let a = b as f64 * theta / 2.0;
            qtensor::embed_director(&[a.cos(), a.sin(), 0.0]).to_vec()
        }
    }
}

fn sphere_value(
    target: &TargetManifold,
    charges: &[([f64; 2], GroupElement)],
    z: &[f64; 2],
) -> Vec<f64> {
    let angle = |c: &[f64; 2]| (z[1] - c[1]).atan2(z[0] - c[0]);
    match target.kind {
        ManifoldKind::Circle => {
            let ph: f64 = charges
                .iter()
                .map(|(c, s)| s.coord(0) as f64 * angle(c))
                .sum();
            vec![ph.cos(), ph.sin()]
        }
        ManifoldKind::Torus => {
            let p1: f64 = charges
                .iter()
                .map(|(c, s)| s.coord(0) as f64 * angle(c))
                .sum();
            let p2: f64 = charges
                .iter()
                .map(|(c, s)| s.coord(1) as f64 * angle(c))
                .sum();
            vec![p1.cos(), p1.sin(), p2.cos(), p2.sin()]
        }
        ManifoldKind::ProjectivePlane => {
            let a: f64 = charges
                .iter()
                .map(|(c, s)| s.coord(0) as f64 * angle(c) / 2.0)
                .sum();
            qtensor::embed_director(&[a.cos(), a.sin(), 0.0]).to_vec()
        }
    }
}

/// A unit vector far from all `pts`, used as the projection pole.
fn stereographic_pole(pts: &[Point]) -> Point {
    let mut best = [0.0, 0.0, 1.0];
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..200 {
        // Fibonacci sphere candidates
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / 200.0;
        let r = (1.0 - z * z).sqrt();
        let phi = i as f64 * PI * (3.0 - 5f64.sqrt());
        let c = [r * phi.cos(), r * phi.sin(), z];
        let score = pts
            .iter()
            .map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2))
            .fold(f64::INFINITY, f64::min);
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    best
}

/// Stereographic projection from `pole` onto the plane through the origin
/// orthogonal to it, in a fixed orthonormal frame of that plane.
fn stereographic(p: &Point, pole: &Point) -> [f64; 2] {
    let e1 = perpendicular(pole);
    let e2 = [
        pole[1] * e1[2] - pole[2] * e1[1],
        pole[2] * e1[0] - pole[0] * e1[2],
        pole[0] * e1[1] - pole[1] * e1[0],
    ];
    let h = p[0] * pole[0] + p[1] * pole[1] + p[2] * pole[2];
    let s = 1.0 / (1.0 - h).max(1e-12);
    let u = p[0] * e1[0] + p[1] * e1[1] + p[2] * e1[2];
    let v = p[0] * e2[0] + p[1] * e2[1] + p[2] * e2[2];
    [s * u, s * v]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_datum_boundary_values() {
        let f = make_boundary_datum(
            &DatumSpec::Disk {
                class: vec![1],
                radius: 1.0,
                nodes: 33,
            },
            TargetManifold::circle(),
        )
        .unwrap();
        for i in 0..f.num_nodes() {
            if f.dirichlet[i] {
                let p = f.position(i);
                let th = p[1].atan2(p[0]);
                let v = f.value(i);
                assert!((v[0] - th.cos()).abs() < 1e-12 && (v[1] - th.sin()).abs() < 1e-12);
            } else {
                assert!(crate::manifolds::norm(f.value(i)) <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn solid_torus_datum_is_the_meridian_coordinate() {
        let f = make_boundary_datum(
            &DatumSpec::SolidTorus { nodes: 16 },
            TargetManifold::circle(),
        )
        .unwrap();
        let mut checked = 0;
        for i in 0..f.num_nodes() {
            if f.mask.inside[i] {
                let p = f.position(i);
                let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
                assert!((f.value(i)[0] - (rho - 2.0)).abs() < 1e-12);
                assert!((f.value(i)[1] - p[2]).abs() < 1e-12);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn sphere_datum_needs_balanced_classes() {
        let spec = DatumSpec::SpherePoints {
            radius: 1.0,
            nodes: 9,
            points: vec![SpherePoint {
                at: [0.0, 0.0, 1.0],
                class: vec![1],
            }],
        };
        assert!(matches!(
            make_boundary_datum(&spec, TargetManifold::circle()),
            Err(Error::InvalidDescriptor(_))
        ));
    }

    #[test]
    fn regularize_ramp() {
        let mut f = Field::new(
            2,
            [5, 5, 1],
            [0.0; 3],
            0.25,
            TargetManifold::circle(),
            DomainKind::Box,
        )
        .unwrap();
        for i in 0..f.num_nodes() {
            f.set_value(i, &[1.0, 0.0]);
        }
        let s = PolyChain::new(
            0,
            2,
            crate::groups::GroupKind::Circle,
            vec![crate::chains::ChainCell::point(
                [0.0; 3],
                GroupElement::Int(1),
            )],
        )
        .unwrap();
        let g = f.regularize(&s, 0.5);
        assert_eq!(g.value(0), &[0.0, 0.0]);
        assert_eq!(g.value(1), &[0.5, 0.0]);
        assert_eq!(g.value(f.index(4, 4, 0)), &[1.0, 0.0]);
    }

    #[test]
    fn solid_angle_of_a_hemisphere_view() {
        // a large square seen from just above its centre subtends nearly 2π
        let sq = vec![
            [-1e3, -1e3, 0.0],
            [1e3, -1e3, 0.0],
            [1e3, 1e3, 0.0],
            [-1e3, 1e3, 0.0],
        ];
        let up = solid_angle(&sq, &[0.0, 0.0, 1.0]);
        let down = solid_angle(&sq, &[0.0, 0.0, -1.0]);
        assert!((up.abs() - 2.0 * PI).abs() < 1e-2);
        assert!((up - down).abs() > 4.0 * PI - 5e-2);
        // counter-clockwise as seen from above
        assert!(up > 0.0);
    }
}
