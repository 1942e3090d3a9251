//! The discrete singular set of a field: a cubical grid of size `h`, the
//! homotopy class of the field on the boundary of each 2-cell ("plaquette"),
//! and the dual chain that carries those classes.
//!
//! Classes are read from `ϱ(u - y)` sampled along grid edges. Each edge is
//! sampled once and shared by all plaquettes containing it, so the class sum
//! over the faces of any grid cube vanishes exactly and the 1-chains built in
//! space have no boundary inside the grid.
//!
//! Orientation in space: the plaquette orthogonal to `e_a` carries the dual
//! edge pointing along `+e_a`, and its class is read on the boundary loop
//! traversed clockwise as seen from `+e_a`. In the plane the loop is
//! counter-clockwise and the dual cell is the plaquette centre.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::{ChainCell, Point, PolyChain};
use crate::energy;
use crate::error::{Error, Result};
use crate::fields::Field;
use crate::groups::GroupElement;
use crate::manifolds::{ClassAccumulator, ClassIncrement, ManifoldKind, COMPLEX_TOL};

/// Initial samples per grid edge; refined by doubling up to [`MAX_EDGE_SAMPLES`].
pub const EDGE_SAMPLES: usize = 8;
pub const MAX_EDGE_SAMPLES: usize = 64;
/// Weight of the skeleton distance in the grid-selection score.
pub const SKELETON_PENALTY: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularGrid {
    /// Offset `a ∈ [0, h)^d` relative to the field origin.
    pub offset: Point,
    pub h: f64,
    pub dims: usize,
    /// First lattice vertex `origin + offset`.
    pub base: Point,
    /// Lattice vertex counts per axis (1 on the unused axis in the plane).
    pub vertices: [usize; 3],
}

/// A 2-cell: the square at `vertex` spanned by the two axes other than `normal`
/// (in the plane `normal` is always 2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlaquetteId {
    pub normal: usize,
    pub vertex: [usize; 3],
}

impl SingularGrid {
    /// The grid `base + h z`, keeping only cells that fit inside the field box.
    pub fn new(u: &Field, h: f64, offset: Point) -> Result<SingularGrid> {
        if !(h > 0.0) {
            return Err(Error::Config("grid size must be positive".into()));
        }
        let mut base = u.origin;
        let top = u.extent();
        let mut vertices = [1usize; 3];
        for a in 0..u.dims {
            if !(offset[a] >= 0.0 && offset[a] < h) {
                return Err(Error::Config(format!(
                    "grid offset {} outside [0, h)",
                    offset[a]
                )));
            }
            base[a] += offset[a];
            let n = ((top[a] - base[a]) / h + 1e-9).floor() as usize + 1;
            if n < 2 {
                return Err(Error::Config("grid size exceeds the field box".into()));
            }
            vertices[a] = n;
        }
        Ok(SingularGrid {
            offset,
            h,
            dims: u.dims,
            base,
            vertices,
        })
    }

    pub fn vertex_position(&self, v: [usize; 3]) -> Point {
        let mut p = [0.0; 3];
        for a in 0..self.dims {
            p[a] = self.base[a] + self.h * v[a] as f64;
        }
        p
    }

    fn vertex_index(&self, v: [usize; 3]) -> usize {
        v[0] + self.vertices[0] * (v[1] + self.vertices[1] * v[2])
    }

    fn num_vertices(&self) -> usize {
        self.vertices[0] * self.vertices[1] * self.vertices[2]
    }

    fn vertex_of(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.vertices[0];
        let j = (idx / self.vertices[0]) % self.vertices[1];
        [i, j, idx / (self.vertices[0] * self.vertices[1])]
    }

    /// Edge from `v` along axis `a` exists in the grid.
    fn has_edge(&self, v: [usize; 3], a: usize) -> bool {
        a < self.dims && v[a] + 1 < self.vertices[a]
    }

    /// The two in-plane axes of a plaquette, in the order of its boundary loop.
    fn plaquette_axes(&self, normal: usize) -> (usize, usize) {
        if self.dims == 2 {
            (0, 1)
        } else {
            // clockwise as seen from +e_normal: the reverse of the cyclic order
            match normal {
                0 => (2, 1),
                1 => (0, 2),
                _ => (1, 0),
            }
        }
    }

    pub fn plaquettes(&self) -> Vec<PlaquetteId> {
        let normals: Vec<usize> = if self.dims == 2 {
            vec![2]
        } else {
            vec![0, 1, 2]
        };
        let mut out = Vec::new();
        for idx in 0..self.num_vertices() {
            let v = self.vertex_of(idx);
            for &n in &normals {
                let (b, c) = self.plaquette_axes(n);
                if self.has_edge(v, b) && self.has_edge(v, c) {
                    out.push(PlaquetteId {
                        normal: n,
                        vertex: v,
                    });
                }
            }
        }
        out
    }

    pub fn plaquette_center(&self, k: &PlaquetteId) -> Point {
        let (b, c) = self.plaquette_axes(k.normal);
        let mut p = self.vertex_position(k.vertex);
        p[b] += 0.5 * self.h;
        p[c] += 0.5 * self.h;
        p
    }

    /// Plaquette of the planar grid containing `p`, if any.
    pub fn plaquette_containing(&self, p: &Point) -> Option<PlaquetteId> {
        let mut v = [0usize; 3];
        for a in 0..self.dims {
            let t = (p[a] - self.base[a]) / self.h;
            if t < 0.0 || t >= (self.vertices[a] - 1) as f64 {
                return None;
            }
            v[a] = t.floor() as usize;
        }
        Some(PlaquetteId {
            normal: 2,
            vertex: v,
        })
    }
}

/// Default grid size `max(4 spacing, |log ε|⁻¹ · L / 8)` with `L` the largest box side.
pub fn default_grid_size(u: &Field, eps: f64) -> f64 {
    let e = u.extent();
    let size = (0..u.dims).map(|a| e[a] - u.origin[a]).fold(0.0, f64::max);
    (4.0 * u.spacing).max(size / (8.0 * eps.ln().abs()))
}

fn edge_point(g: &SingularGrid, v: [usize; 3], a: usize, t: f64) -> Point {
    let mut p = g.vertex_position(v);
    p[a] += t * g.h;
    p
}

/// Largest distance to N over the sampled 1-skeleton.
pub fn skeleton_check(u: &Field, g: &SingularGrid) -> f64 {
    let m = u.m();
    (0..g.num_vertices())
        .into_par_iter()
        .map(|idx| {
            let v = g.vertex_of(idx);
            let mut worst = 0.0f64;
            let mut val = vec![0.0; m];
            for a in 0..g.dims {
                if !g.has_edge(v, a) {
                    continue;
                }
                for s in 0..=EDGE_SAMPLES {
                    let p = edge_point(g, v, a, s as f64 / EDGE_SAMPLES as f64);
                    u.interpolate(&p, &mut val);
                    worst = worst.max(u.target.dist_to_manifold(&val));
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Picks among `trials` seeded random offsets the one minimising the energy
/// density met along the 1-skeleton plus `penalty` times the skeleton's
/// largest distance to N.
pub fn choose_grid(
    u: &Field,
    h: f64,
    trials: usize,
    eps: f64,
    seed: u64,
    penalty: f64,
) -> Result<SingularGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = energy::energy(u, eps).per_cell_density;
    let mut best: Option<(f64, SingularGrid)> = None;
    for _ in 0..trials.max(1) {
        let mut off = [0.0; 3];
        for a in 0..u.dims {
            off[a] = rng.gen_range(0.0..h);
        }
        let g = SingularGrid::new(u, h, off)?;
        let score = skeleton_energy(u, &g, &density) + penalty * skeleton_check(u, &g);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, g));
        }
    }
    Ok(best.unwrap().1)
}

fn skeleton_energy(u: &Field, g: &SingularGrid, density: &[f64]) -> f64 {
    let cs = [
        u.shape[0] - 1,
        u.shape[1] - 1,
        if u.dims == 3 { u.shape[2] - 1 } else { 1 },
    ];
    let ds = g.h / EDGE_SAMPLES as f64;
    (0..g.num_vertices())
        .map(|idx| {
            let v = g.vertex_of(idx);
            let mut acc = 0.0;
            for a in 0..g.dims {
                if !g.has_edge(v, a) {
                    continue;
                }
                for s in 0..EDGE_SAMPLES {
                    let p = edge_point(g, v, a, (s as f64 + 0.5) / EDGE_SAMPLES as f64);
                    let mut c = [0usize; 3];
                    for b in 0..u.dims {
                        c[b] = (((p[b] - u.origin[b]) / u.spacing).floor().max(0.0) as usize)
                            .min(cs[b] - 1);
                    }
                    acc += density[c[0] + cs[0] * (c[1] + cs[1] * c[2])] * ds;
                }
            }
            acc
        })
        .sum()
}

/// Class contribution of one grid edge, traversed in the `+e_a` direction.
fn edge_increment(
    u: &Field,
    g: &SingularGrid,
    v: [usize; 3],
    a: usize,
    y: &[f64],
) -> Result<ClassIncrement> {
    let mut w = v;
    w[a] += 1;
    segment_increment(u, &g.vertex_position(v), &g.vertex_position(w), y)
}

/// Class contribution of `ϱ(u - y)` along the segment `p -> q`, sampled
/// uniformly and refined until consecutive samples are close enough.
pub fn segment_increment(u: &Field, p: &Point, q: &Point, y: &[f64]) -> Result<ClassIncrement> {
    let tm = u.target;
    let m = u.m();
    let mut samples = EDGE_SAMPLES;
    loop {
        let mut vals = Vec::with_capacity(samples + 1);
        for s in 0..=samples {
            let t = s as f64 / samples as f64;
            let mut x = *p;
            for k in 0..3 {
                x[k] += t * (q[k] - p[k]);
            }
            let mut z = vec![0.0; m];
            u.interpolate(&x, &mut z);
            for k in 0..m {
                z[k] -= y[k];
            }
            let d = tm.dist_to_complex(&z);
            if d < COMPLEX_TOL {
                return Err(Error::OnComplex { distance: d });
            }
            vals.push(z);
        }
        let mut acc = [0.0f64; 2];
        let mut flips = false;
        let mut failed = None;
        for s in 0..samples {
            match tm.class_increment(&vals[s], &vals[s + 1]) {
                Ok(ClassIncrement::Phase([p, q])) => {
                    acc[0] += p;
                    acc[1] += q;
                }
                Ok(ClassIncrement::Flip(f)) => flips ^= f,
                Err(gap) => {
                    failed = Some((s, gap));
                    break;
                }
            }
        }
        match failed {
            None => {
                return Ok(if tm.kind == ManifoldKind::ProjectivePlane {
                    ClassIncrement::Flip(flips)
                } else {
                    ClassIncrement::Phase(acc)
                })
            }
            Some((index, gap)) => {
                if samples >= MAX_EDGE_SAMPLES {
                    return Err(Error::Undersampled { index, gap });
                }
                samples *= 2;
            }
        }
    }
}

/// Edge increments for every edge of the grid, indexed by axis then vertex.
fn all_edge_increments(
    u: &Field,
    g: &SingularGrid,
    y: &[f64],
) -> Result<Vec<Vec<Option<ClassIncrement>>>> {
    (0..g.dims)
        .map(|a| {
            (0..g.num_vertices())
                .into_par_iter()
                .map(|idx| {
                    let v = g.vertex_of(idx);
                    if g.has_edge(v, a) {
                        edge_increment(u, g, v, a, y).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn plaquette_from_edges(
    u: &Field,
    g: &SingularGrid,
    k: &PlaquetteId,
    edge: impl Fn([usize; 3], usize) -> Result<ClassIncrement>,
) -> Result<GroupElement> {
    let (b, c) = g.plaquette_axes(k.normal);
    let v = k.vertex;
    let mut vb = v;
    vb[b] += 1;
    let mut vc = v;
    vc[c] += 1;
    let mut acc = ClassAccumulator::default();
    // v -> v+e_b -> v+e_b+e_c -> v+e_c -> v
    acc.add(edge(v, b)?);
    acc.add(edge(vb, c)?);
    acc.add(edge(vc, b)?.reversed());
    acc.add(edge(v, c)?.reversed());
    Ok(acc.finish(u.target.kind))
}

/// Homotopy class of `ϱ(u - y)` on the boundary of the plaquette `k`.
pub fn plaquette_class(
    u: &Field,
    g: &SingularGrid,
    k: &PlaquetteId,
    y: &[f64],
) -> Result<GroupElement> {
    plaquette_from_edges(u, g, k, |v, a| edge_increment(u, g, v, a, y))
}

/// Admissibility threshold `dist(N, X) - δ*` for the skeleton distance.
pub fn skeleton_threshold(u: &Field) -> f64 {
    u.target.dist_manifold_complex() - u.target.delta_star
}

/// The dual chain `Σ γ(K) ⟦K'⟧` after checking the skeleton stays close to N.
pub fn extract_chain(u: &Field, g: &SingularGrid, y: &[f64]) -> Result<PolyChain> {
    let worst = skeleton_check(u, g);
    let threshold = skeleton_threshold(u);
    if !(worst < threshold) {
        return Err(Error::SkeletonTooClose {
            max_dist: worst,
            threshold,
        });
    }
    extract_chain_unchecked(u, g, y)
}

/// Dual chain without the skeleton admissibility check.
pub fn extract_chain_unchecked(u: &Field, g: &SingularGrid, y: &[f64]) -> Result<PolyChain> {
    let edges = all_edge_increments(u, g, y)?;
    let lookup = |v: [usize; 3], a: usize| -> Result<ClassIncrement> {
        Ok(edges[a][g.vertex_index(v)].expect("plaquette edge inside the grid"))
    };
    let group = u.target.group().kind;
    let mut cells = Vec::new();
    for k in g.plaquettes() {
        let class = plaquette_from_edges(u, g, &k, lookup)?;
        if class.is_zero() {
            continue;
        }
        let c = g.plaquette_center(&k);
        if g.dims == 2 {
            cells.push(ChainCell::point(c, class));
        } else {
            let mut lo = c;
            let mut hi = c;
            lo[k.normal] -= 0.5 * g.h;
            hi[k.normal] += 0.5 * g.h;
            cells.push(ChainCell::segment(lo, hi, class));
        }
    }
    let chain = PolyChain::new(g.dims - 2, g.dims, group, cells)?;
    if g.dims == 3 {
        assert_interior_cycle(&chain, g);
    }
    Ok(chain)
}

/// Boundary points of the dual chain must sit at centres of cubes that are
/// not entirely inside the grid.
fn assert_interior_cycle(chain: &PolyChain, g: &SingularGrid) {
    let bd = chain.boundary().expect("1-chain");
    for c in &bd.cells {
        let p = c.geom[0];
        let interior = (0..3).all(|a| {
            let t = (p[a] - g.base[a]) / g.h - 0.5;
            t > -0.25 && t < (g.vertices[a] - 1) as f64 - 0.75
        });
        assert!(
            !interior,
            "dual chain has boundary {:?} at interior point {:?}",
            c.mult, p
        );
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub offset: Point,
    pub skeleton_max_dist: f64,
    pub n_plaquettes: usize,
    pub n_nonzero: usize,
    pub mass: f64,
}

pub fn extract_report(u: &Field, g: &SingularGrid, chain: &PolyChain) -> ExtractReport {
    ExtractReport {
        offset: g.offset,
        skeleton_max_dist: skeleton_check(u, g),
        n_plaquettes: g.plaquettes().len(),
        n_nonzero: chain.cells.len(),
        mass: chain.mass(),
    }
}

/// Monte-Carlo average of the chain mass over shifts `y` uniform in the ball
/// of radius δ*, with the ratio to `∫|∇u|²`. Shifts that meet the complex are
/// redrawn.
pub fn sample_mass_bound(
    u: &Field,
    g: &SingularGrid,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let m = u.m();
    let r = u.target.delta_star;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirichlet = 2.0 * energy::energy(u, 1.0).dirichlet;
    let mut total = 0.0;
    let mut got = 0usize;
    let mut attempts = 0usize;
    while got < n_samples {
        attempts += 1;
        if attempts > 20 * n_samples.max(1) {
            return Err(Error::NotAdmissible(
                "too many shifts meet the singular complex".into(),
            ));
        }
        let y = loop {
            let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-r..r)).collect();
            if crate::manifolds::norm(&y) < r {
                break y;
            }
        };
        match extract_chain_unchecked(u, g, &y) {
            Ok(c) => {
                total += c.mass();
                got += 1;
            }
            Err(Error::OnComplex { .. }) | Err(Error::Undersampled { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    let avg = if n_samples > 0 {
        total / n_samples as f64
    } else {
        0.0
    };
    let ratio = if dirichlet > 0.0 {
        avg / dirichlet
    } else {
        0.0
    };
    Ok((avg, dirichlet, ratio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::DomainKind;
    use crate::manifolds::TargetManifold;

    fn vortex(n: usize, d: i64, center: [f64; 2]) -> Field {
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
            let th = (p[1] - center[1]).atan2(p[0] - center[0]);
            f.set_value(i, &[(d as f64 * th).cos(), (d as f64 * th).sin()]);
        }
        f
    }

    #[test]
    fn constant_field_gives_empty_chain() {
        let mut f = vortex(33, 0, [0.0, 0.0]);
        for i in 0..f.num_nodes() {
            f.set_value(i, &[1.0, 0.0]);
        }
        let g = SingularGrid::new(&f, 0.25, [0.01, 0.02, 0.0]).unwrap();
        assert_eq!(skeleton_check(&f, &g), 0.0);
        assert!(extract_chain(&f, &g, &[0.0, 0.0]).unwrap().is_empty());
    }

    #[test]
    fn zero_field_is_maximally_far() {
        let mut f = vortex(17, 0, [0.0, 0.0]);
        f.values.iter_mut().for_each(|v| *v = 0.0);
        let g = SingularGrid::new(&f, 0.25, [0.0; 3]).unwrap();
        assert_eq!(skeleton_check(&f, &g), 1.0);
    }

    #[test]
    fn single_vortex_is_one_point() {
        let f = vortex(65, 1, [0.013, -0.021]);
        let g = SingularGrid::new(&f, 0.125, [0.03, 0.05, 0.0]).unwrap();
        let c = extract_chain(&f, &g, &[0.0, 0.0]).unwrap();
        assert_eq!(c.cells.len(), 1);
        assert_eq!(c.cells[0].mult, GroupElement::Int(1));
        let k = g.plaquette_containing(&[0.013, -0.021, 0.0]).unwrap();
        assert_eq!(
            plaquette_class(&f, &g, &k, &[0.1, 0.05]).unwrap(),
            GroupElement::Int(1)
        );
    }
}
