//! Polyhedral 0- and 1-chains with coefficients in a [`CoefficientGroup`].
//!
//! Points are stored in R^3; planar chains use a zero third coordinate and
//! record `ambient_dim == 2`.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::assignment::{hungarian, min_cost_matching, MATCHING_LIMIT};
use crate::error::{Error, Result};
use crate::groups::{CoefficientGroup, GroupElement, GroupKind};

pub type Point = [f64; 3];

/// Resolution used to identify coincident vertices.
const VERTEX_QUANTUM: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ChainCell {
    /// One point for a 0-cell, the oriented endpoints for a 1-cell.
    pub geom: Vec<Point>,
    pub mult: GroupElement,
}

impl ChainCell {
    pub fn point(p: Point, mult: GroupElement) -> Self {
        ChainCell {
            geom: vec![p],
            mult,
        }
    }

    pub fn segment(a: Point, b: Point, mult: GroupElement) -> Self {
        ChainCell {
            geom: vec![a, b],
            mult,
        }
    }

    pub fn length(&self) -> f64 {
        if self.geom.len() == 2 {
            dist(&self.geom[0], &self.geom[1])
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolyChain {
    pub dim: usize,
    pub ambient_dim: usize,
    pub group: GroupKind,
    pub cells: Vec<ChainCell>,
}

/// Where a 0-chain may discard mass when measuring its flat norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlatDomain {
    FreeSpace,
    /// Axis-aligned box; mass may also escape through the boundary.
    Box {
        lo: Point,
        hi: Point,
    },
}

impl FlatDomain {
    pub fn escape_distance(&self, p: &Point, ambient_dim: usize) -> f64 {
        match self {
            FlatDomain::FreeSpace => f64::INFINITY,
            FlatDomain::Box { lo, hi } => (0..ambient_dim)
                .map(|i| (p[i] - lo[i]).min(hi[i] - p[i]).max(0.0))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Oriented flat disk used as the test surface for intersection indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Point,
    pub normal: Point,
    pub radius: f64,
}

fn key(p: &Point) -> [i64; 3] {
    [
        (p[0] / VERTEX_QUANTUM).round() as i64,
        (p[1] / VERTEX_QUANTUM).round() as i64,
        (p[2] / VERTEX_QUANTUM).round() as i64,
    ]
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(&ab, &ab);
    let t = if len2 > 0.0 {
        (dot(&sub(p, a), &ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    dist(p, &q)
}

impl PolyChain {
    /// Builds a chain, merging coincident cells (reversed segments count with
    /// the opposite sign) and dropping zero multiplicities.
    pub fn new(
        dim: usize,
        ambient_dim: usize,
        group: GroupKind,
        cells: Vec<ChainCell>,
    ) -> Result<Self> {
        if dim > 1 {
            return Err(Error::Dimension(format!(
                "chains of dimension {dim} are not supported"
            )));
        }
        if ambient_dim != 2 && ambient_dim != 3 {
            return Err(Error::Dimension(format!("ambient dimension {ambient_dim}")));
        }
        let mut order: Vec<Vec<[i64; 3]>> = Vec::new();
        let mut merged: HashMap<Vec<[i64; 3]>, ChainCell> = HashMap::new();
        for cell in cells {
            if cell.mult.kind() != group {
                return Err(Error::GroupMismatch {
                    kind: group,
                    element: cell.mult,
                });
            }
            if cell.geom.len() != dim + 1 {
                return Err(Error::Dimension(format!(
                    "{}-cell in a {dim}-chain",
                    cell.geom.len() - 1
                )));
            }
            let keys: Vec<[i64; 3]> = cell.geom.iter().map(key).collect();
            if dim == 1 && keys[0] == keys[1] {
                continue;
            }
            let (k, mult) = if dim == 1 && keys[1] < keys[0] {
                (vec![keys[1], keys[0]], cell.mult.neg())
            } else {
                (keys.clone(), cell.mult)
            };
            match merged.get_mut(&k) {
                Some(existing) => {
                    let same_way = key(&existing.geom[0]) == k[0];
                    let m = if same_way { mult } else { mult.neg() };
                    existing.mult = existing.mult.add(m);
                }
                None => {
                    let stored = if keys == k {
                        cell
                    } else {
                        ChainCell {
                            geom: vec![cell.geom[1], cell.geom[0]],
                            mult,
                        }
                    };
                    order.push(k.clone());
                    merged.insert(k, stored);
                }
            }
        }
        let cells = order
            .into_iter()
            .filter_map(|k| merged.remove(&k))
            .filter(|c| !c.mult.is_zero())
            .collect();
        Ok(PolyChain {
            dim,
            ambient_dim,
            group,
            cells,
        })
    }

    pub fn empty(dim: usize, ambient_dim: usize, group: GroupKind) -> Self {
        PolyChain {
            dim,
            ambient_dim,
            group,
            cells: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn group(&self) -> &'static CoefficientGroup {
        CoefficientGroup::get(self.group)
    }

    /// Sum of the multiplicities of all cells.
    pub fn total_class(&self) -> GroupElement {
        let g = self.group();
        self.cells.iter().fold(g.zero(), |acc, c| acc.add(c.mult))
    }

    pub fn neg(&self) -> PolyChain {
        PolyChain {
            cells: self
                .cells
                .iter()
                .map(|c| ChainCell {
                    geom: c.geom.clone(),
                    mult: c.mult.neg(),
                })
                .collect(),
            ..self.clone()
        }
    }

    pub fn add(&self, other: &PolyChain) -> Result<PolyChain> {
        if self.dim != other.dim || self.group != other.group {
            return Err(Error::Dimension("adding chains of different type".into()));
        }
        let cells = self
            .cells
            .iter()
            .chain(other.cells.iter())
            .cloned()
            .collect();
        PolyChain::new(
            self.dim,
            self.ambient_dim.max(other.ambient_dim),
            self.group,
            cells,
        )
    }

    pub fn sub(&self, other: &PolyChain) -> Result<PolyChain> {
        self.add(&other.neg())
    }

    /// Equality as chains: identical cells with identical multiplicities.
    pub fn same_as(&self, other: &PolyChain) -> bool {
        self.sub(other).map(|d| d.is_empty()).unwrap_or(false)
    }

    pub fn scale(&self, k: i64) -> Result<PolyChain> {
        let cells = self
            .cells
            .iter()
            .map(|c| ChainCell {
                geom: c.geom.clone(),
                mult: c.mult.scale(k),
            })
            .collect();
        PolyChain::new(self.dim, self.ambient_dim, self.group, cells)
    }

    pub fn boundary(&self) -> Result<PolyChain> {
        if self.dim != 1 {
            return Err(Error::Dimension("boundary of a 0-chain".into()));
        }
        let mut cells = Vec::with_capacity(2 * self.cells.len());
        for c in &self.cells {
            cells.push(ChainCell::point(c.geom[1], c.mult));
            cells.push(ChainCell::point(c.geom[0], c.mult.neg()));
        }
        PolyChain::new(0, self.ambient_dim, self.group, cells)
    }

    /// `Σ |σ_i|* · length_i` (length 1 for points).
    pub fn mass(&self) -> f64 {
        let g = self.group();
        self.cells
            .iter()
            .map(|c| g.norm(c.mult).unwrap() * c.length())
            .sum()
    }

    /// Restriction to an axis-aligned box; segments are clipped.
    pub fn restrict(&self, lo: &Point, hi: &Point) -> PolyChain {
        let d = self.ambient_dim;
        let inside = |p: &Point| (0..d).all(|i| p[i] >= lo[i] && p[i] <= hi[i]);
        let mut cells = Vec::new();
        for c in &self.cells {
            if self.dim == 0 {
                if inside(&c.geom[0]) {
                    cells.push(c.clone());
                }
                continue;
            }
            let (a, b) = (c.geom[0], c.geom[1]);
            let (mut t0, mut t1) = (0.0f64, 1.0f64);
            for i in 0..d {
                let dir = b[i] - a[i];
                if dir.abs() < 1e-300 {
                    if a[i] < lo[i] || a[i] > hi[i] {
                        t0 = 1.0;
                        t1 = 0.0;
                    }
                    continue;
                }
                let (mut s0, mut s1) = ((lo[i] - a[i]) / dir, (hi[i] - a[i]) / dir);
                if s0 > s1 {
                    std::mem::swap(&mut s0, &mut s1);
                }
                t0 = t0.max(s0);
                t1 = t1.min(s1);
            }
            if t1 > t0 {
                let at = |t: f64| {
                    [
                        a[0] + t * (b[0] - a[0]),
                        a[1] + t * (b[1] - a[1]),
                        a[2] + t * (b[2] - a[2]),
                    ]
                };
                cells.push(ChainCell::segment(at(t0), at(t1), c.mult));
            }
        }
        PolyChain {
            cells,
            ..self.clone()
        }
    }

    /// Flat norm of a 0-chain: pieces of opposite class are joined by segments,
    /// and any piece may instead be dropped (or, in a box, pushed out through
    /// the boundary). Solved exactly per generator coordinate.
    pub fn flat_norm_zero(&self, domain: FlatDomain) -> Result<f64> {
        if self.dim != 0 {
            return Err(Error::Dimension(
                "flat norm is implemented for 0-chains".into(),
            ));
        }
        let g = self.group();
        let pts: Vec<(Point, GroupElement)> =
            self.cells.iter().map(|c| (c.geom[0], c.mult)).collect();
        match self.group {
            GroupKind::Circle | GroupKind::Torus => {
                let mut total = 0.0;
                for coord in 0..self.group.rank() {
                    let unit = g.norm(unit_element(self.group, coord))?;
                    let escape = |p: &Point| 1f64.min(domain.escape_distance(p, self.ambient_dim));
                    total += unit * coordinate_transport(&pts, coord, Some(&escape)).0;
                }
                Ok(total)
            }
            GroupKind::Projective => {
                let odd: Vec<Point> = pts
                    .iter()
                    .filter(|(_, m)| !m.is_zero())
                    .map(|(p, _)| *p)
                    .collect();
                if odd.len() > MATCHING_LIMIT {
                    return Err(Error::TooManyPoints(odd.len()));
                }
                let unit = g.norm(GroupElement::Bit(1))?;
                let (c, _) = min_cost_matching(
                    odd.len(),
                    |i, j| dist(&odd[i], &odd[j]),
                    |i| 1f64.min(domain.escape_distance(&odd[i], self.ambient_dim)),
                );
                Ok(unit * c)
            }
        }
    }

    /// Straight-segment 1-chain `R` with `∂R = self` of least mass.
    pub fn minimal_connection(&self) -> Result<PolyChain> {
        if self.dim != 0 {
            return Err(Error::Dimension("minimal connection of a 1-chain".into()));
        }
        let total = self.total_class();
        if !total.is_zero() {
            return Err(Error::NonZeroTotalClass(total));
        }
        let pts: Vec<(Point, GroupElement)> =
            self.cells.iter().map(|c| (c.geom[0], c.mult)).collect();
        let mut cells = Vec::new();
        match self.group {
            GroupKind::Circle | GroupKind::Torus => {
                for coord in 0..self.group.rank() {
                    let unit = unit_element(self.group, coord);
                    for (from, to) in coordinate_transport(&pts, coord, None).1 {
                        cells.push(ChainCell::segment(from, to, unit));
                    }
                }
            }
            GroupKind::Projective => {
                let odd: Vec<Point> = pts.iter().map(|(p, _)| *p).collect();
                if odd.len() > MATCHING_LIMIT {
                    return Err(Error::TooManyPoints(odd.len()));
                }
                let (_, mate) =
                    min_cost_matching(odd.len(), |i, j| dist(&odd[i], &odd[j]), |_| f64::INFINITY);
                for (i, m) in mate.iter().enumerate() {
                    if let Some(j) = *m {
                        if i < j {
                            cells.push(ChainCell::segment(odd[i], odd[j], GroupElement::Bit(1)));
                        }
                    }
                }
            }
        }
        PolyChain::new(1, self.ambient_dim, self.group, cells)
    }

    /// Signed count of crossings of the 1-chain through `disk`, weighted by
    /// multiplicity. A vertex exactly on the disk plane counts as lying on the
    /// negative side, so subdividing segments never changes the result.
    pub fn intersection_index(&self, disk: &Disk) -> Result<GroupElement> {
        if self.dim != 1 {
            return Err(Error::Dimension(
                "intersection index needs a 1-chain".into(),
            ));
        }
        let nlen = dot(&disk.normal, &disk.normal).sqrt();
        let n = [
            disk.normal[0] / nlen,
            disk.normal[1] / nlen,
            disk.normal[2] / nlen,
        ];
        let mut acc = self.group().zero();
        for c in &self.cells {
            let (a, b) = (c.geom[0], c.geom[1]);
            let sa = dot(&sub(&a, &disk.center), &n);
            let sb = dot(&sub(&b, &disk.center), &n);
            if sa == 0.0 && sb == 0.0 {
                let ra = dist(&a, &disk.center);
                let rb = dist(&b, &disk.center);
                if ra <= disk.radius
                    || rb <= disk.radius
                    || point_segment_distance(&disk.center, &a, &b) <= disk.radius
                {
                    return Err(Error::Degenerate);
                }
                continue;
            }
            let (pa, pb) = (sa > 0.0, sb > 0.0);
            if pa == pb {
                continue;
            }
            let t = sa / (sa - sb);
            let p = [
                a[0] + t * (b[0] - a[0]),
                a[1] + t * (b[1] - a[1]),
                a[2] + t * (b[2] - a[2]),
            ];
            if dist(&p, &disk.center) <= disk.radius {
                acc = acc.add(if pb { c.mult } else { c.mult.neg() });
            }
        }
        Ok(acc)
    }

    /// Replaces every cell whose multiplicity is not a generator by parallel
    /// copies carrying the parts of an optimal decomposition, spread over at
    /// most `offset_scale` along a fixed normal direction.
    pub fn split_multiplicities(&self, offset_scale: f64) -> Result<PolyChain> {
        let g = self.group();
        let mut cells = Vec::new();
        for c in &self.cells {
            if g.is_generator(c.mult) {
                cells.push(c.clone());
                continue;
            }
            let parts = g.optimal_decomposition(c.mult)?;
            let k = parts.len();
            let normal = self.offset_direction(c);
            for (j, part) in parts.into_iter().enumerate() {
                let s = if k > 1 {
                    offset_scale * (2.0 * j as f64 / (k - 1) as f64 - 1.0)
                } else {
                    0.0
                };
                let geom = c
                    .geom
                    .iter()
                    .map(|p| {
                        [
                            p[0] + s * normal[0],
                            p[1] + s * normal[1],
                            p[2] + s * normal[2],
                        ]
                    })
                    .collect();
                cells.push(ChainCell { geom, mult: part });
            }
        }
        PolyChain::new(self.dim, self.ambient_dim, self.group, cells)
    }

    fn offset_direction(&self, c: &ChainCell) -> Point {
        if c.geom.len() < 2 {
            return [1.0, 0.0, 0.0];
        }
        let t = sub(&c.geom[1], &c.geom[0]);
        let n = if self.ambient_dim == 2 {
            [-t[1], t[0], 0.0]
        } else {
            // cross with the coordinate axis least aligned with the segment
            let axis = (0..3)
                .min_by(|&i, &j| t[i].abs().total_cmp(&t[j].abs()))
                .unwrap();
            let mut e = [0.0; 3];
            e[axis] = 1.0;
            cross(&t, &e)
        };
        let l = dot(&n, &n).sqrt();
        [n[0] / l, n[1] / l, n[2] / l]
    }

    /// Distance from `p` to the support of the chain.
    pub fn distance_to_support(&self, p: &Point) -> f64 {
        self.cells
            .iter()
            .map(|c| match c.geom.len() {
                1 => dist(p, &c.geom[0]),
                _ => point_segment_distance(p, &c.geom[0], &c.geom[1]),
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Mass-weighted mean distance from the support of `self` to the support
    /// of `other` (segments integrated by an 8-point midpoint rule).
    pub fn support_distance(&self, other: &PolyChain) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        if other.cells.is_empty() {
            return f64::INFINITY;
        }
        let g = self.group();
        let (mut num, mut den) = (0.0, 0.0);
        for c in &self.cells {
            let w = g.norm(c.mult).unwrap() * c.length();
            let mean = if c.geom.len() == 1 {
                other.distance_to_support(&c.geom[0])
            } else {
                let (a, b) = (c.geom[0], c.geom[1]);
                (0..8)
                    .map(|i| {
                        let t = (i as f64 + 0.5) / 8.0;
                        other.distance_to_support(&[
                            a[0] + t * (b[0] - a[0]),
                            a[1] + t * (b[1] - a[1]),
                            a[2] + t * (b[2] - a[2]),
                        ])
                    })
                    .sum::<f64>()
                    / 8.0
            };
            num += w * mean;
            den += w;
        }
        num / den
    }

    pub fn to_json(&self) -> ChainJson {
        ChainJson {
            dim: self.dim,
            group: self.group,
            ambient_dim: Some(self.ambient_dim),
            cells: self
                .cells
                .iter()
                .map(|c| CellJson {
                    geom: c
                        .geom
                        .iter()
                        .map(|p| p[..self.ambient_dim].to_vec())
                        .collect(),
                    mult: c.mult.to_ints(),
                })
                .collect(),
        }
    }

    pub fn from_json(j: &ChainJson) -> Result<PolyChain> {
        let ambient = j
            .ambient_dim
            .or_else(|| {
                j.cells
                    .first()
                    .and_then(|c| c.geom.first())
                    .map(|p| p.len())
            })
            .unwrap_or(2);
        let mut cells = Vec::with_capacity(j.cells.len());
        for c in &j.cells {
            let mut geom = Vec::with_capacity(c.geom.len());
            for p in &c.geom {
                if p.len() < 2 || p.len() > 3 {
                    return Err(Error::Dimension(format!(
                        "point with {} coordinates",
                        p.len()
                    )));
                }
                geom.push([p[0], p[1], p.get(2).copied().unwrap_or(0.0)]);
            }
            cells.push(ChainCell {
                geom,
                mult: GroupElement::from_ints(j.group, &c.mult)?,
            });
        }
        PolyChain::new(j.dim, ambient, j.group, cells)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<PolyChain> {
        let j: ChainJson = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        PolyChain::from_json(&j)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainJson {
    pub dim: usize,
    pub group: GroupKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient_dim: Option<usize>,
    pub cells: Vec<CellJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellJson {
    pub geom: Vec<Vec<f64>>,
    pub mult: Vec<i64>,
}

fn unit_element(kind: GroupKind, coord: usize) -> GroupElement {
    match (kind, coord) {
        (GroupKind::Circle, _) => GroupElement::Int(1),
        (GroupKind::Projective, _) => GroupElement::Bit(1),
        (GroupKind::Torus, 0) => GroupElement::IntPair(1, 0),
        (GroupKind::Torus, _) => GroupElement::IntPair(0, 1),
    }
}

/// Optimal transport of unit charges in one integer coordinate. Positive and
/// negative units are paired at their distance; with `drop` given, a unit may
/// instead be discarded at that cost. Returns the cost in units of the
/// coordinate generator's norm and the pairs as (negative, positive) points.
fn coordinate_transport(
    pts: &[(Point, GroupElement)],
    coord: usize,
    drop: Option<&dyn Fn(&Point) -> f64>,
) -> (f64, Vec<(Point, Point)>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (p, m) in pts {
        let v = m.coord(coord);
        for _ in 0..v.abs() {
            if v > 0 {
                pos.push(*p);
            } else {
                neg.push(*p);
            }
        }
    }
    let (np, nn) = (pos.len(), neg.len());
    let size = np + nn;
    if size == 0 {
        return (0.0, Vec::new());
    }
    // rows: positive units then ground slots for negatives;
    // columns: negative units then ground slots for positives
    let drop_cost = |p: &Point| drop.map_or(f64::INFINITY, |f| f(p));
    let mut cost = vec![vec![0.0; size]; size];
    for i in 0..size {
        for j in 0..size {
            cost[i][j] = match (i < np, j < nn) {
                (true, true) => dist(&pos[i], &neg[j]),
                (true, false) => drop_cost(&pos[i]),
                (false, true) => drop_cost(&neg[j]),
                (false, false) => 0.0,
            };
        }
    }
    let (total, col) = hungarian(&cost);
    let pairs = (0..np)
        .filter(|&i| col[i] < nn)
        .map(|i| (neg[col[i]], pos[i]))
        .collect();
    (total, pairs)
}
