//! Target manifolds `N ⊂ R^m` with their well potentials, nearest-point
//! projections, the shifted retraction off the singular complex and the
//! homotopy class of sampled loops.
//!
//! Three targets are supported: the unit circle in R^2, the product of two unit
//! circles in R^4 and the projective plane embedded in R^5 as unit uniaxial
//! Q-tensors. For each the singular complex `X` is explicit: the origin, the
//! union of the two coordinate 2-planes, and the tensors whose two leading
//! eigenvalues coincide.

pub mod qtensor;

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::groups::{CoefficientGroup, GroupElement, GroupKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Circle,
    Torus,
    ProjectivePlane,
}

impl ManifoldKind {
    pub fn ambient_dim(self) -> usize {
        match self {
            ManifoldKind::Circle => 2,
            ManifoldKind::Torus => 4,
            ManifoldKind::ProjectivePlane => 5,
        }
    }

    pub fn group_kind(self) -> GroupKind {
        match self {
            ManifoldKind::Circle => GroupKind::Circle,
            ManifoldKind::Torus => GroupKind::Torus,
            ManifoldKind::ProjectivePlane => GroupKind::Projective,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            ManifoldKind::Circle => 0,
            ManifoldKind::Torus => 1,
            ManifoldKind::ProjectivePlane => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ManifoldKind::Circle),
            1 => Some(ManifoldKind::Torus),
            2 => Some(ManifoldKind::ProjectivePlane),
            _ => None,
        }
    }
}

impl std::str::FromStr for ManifoldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(ManifoldKind::Circle),
            "torus" => Ok(ManifoldKind::Torus),
            "projective_plane" | "rp2" => Ok(ManifoldKind::ProjectivePlane),
            other => Err(Error::Config(format!("unknown target kind {other}"))),
        }
    }
}

/// Largest tolerated gap between consecutive loop samples: a phase gap for the
/// circle factors, an angle between director lines for the projective plane.
const CIRCLE_GAP: f64 = PI / 2.0;
const LINE_GAP: f64 = PI / 4.0;

/// Points closer than this to the singular complex are treated as lying on it.
pub const COMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetManifold {
    pub kind: ManifoldKind,
    /// Radius of the tubular neighbourhood on which the projection is used.
    pub theta0: f64,
    /// Radius of the ball of admissible shifts.
    pub delta_star: f64,
    /// Coercivity constant: `f(y) >= lambda0 dist(y, N)^2`.
    pub lambda0: f64,
}

impl TargetManifold {
    pub fn new(kind: ManifoldKind) -> Self {
        let (theta0, lambda0) = match kind {
            ManifoldKind::Circle => (0.5, 1.0),
            ManifoldKind::Torus => (0.5, 1.0),
            ManifoldKind::ProjectivePlane => (0.3, 0.3),
        };
        TargetManifold {
            kind,
            theta0,
            delta_star: theta0 / 2.0,
            lambda0,
        }
    }

    pub fn with_params(
        kind: ManifoldKind,
        theta0: Option<f64>,
        delta_star: Option<f64>,
    ) -> Result<Self> {
        let mut tm = Self::new(kind);
        if let Some(t) = theta0 {
            tm.theta0 = t;
            tm.delta_star = t / 2.0;
        }
        if let Some(d) = delta_star {
            tm.delta_star = d;
        }
        if !(tm.theta0 > 0.0 && tm.delta_star > 0.0 && tm.delta_star < tm.dist_manifold_complex()) {
            return Err(Error::Config(format!(
                "need theta0 > 0 and 0 < delta_star < {}",
                tm.dist_manifold_complex()
            )));
        }
        Ok(tm)
    }

    pub fn circle() -> Self {
        Self::new(ManifoldKind::Circle)
    }

    pub fn torus() -> Self {
        Self::new(ManifoldKind::Torus)
    }

    pub fn projective_plane() -> Self {
        Self::new(ManifoldKind::ProjectivePlane)
    }

    pub fn ambient_dim(&self) -> usize {
        self.kind.ambient_dim()
    }

    pub fn group(&self) -> &'static CoefficientGroup {
        CoefficientGroup::get(self.kind.group_kind())
    }

    /// `max |z|` over `z ∈ N`.
    pub fn embedding_radius(&self) -> f64 {
        match self.kind {
            ManifoldKind::Torus => 2f64.sqrt(),
            _ => 1.0,
        }
    }

    /// `dist(N, X)`.
    pub fn dist_manifold_complex(&self) -> f64 {
        match self.kind {
            ManifoldKind::ProjectivePlane => 3f64.sqrt() / 2.0,
            _ => 1.0,
        }
    }

    /// A base point of `N`.
    pub fn base_point(&self) -> Vec<f64> {
        match self.kind {
            ManifoldKind::Circle => vec![1.0, 0.0],
            ManifoldKind::Torus => vec![1.0, 0.0, 1.0, 0.0],
            ManifoldKind::ProjectivePlane => qtensor::embed_director(&[1.0, 0.0, 0.0]).to_vec(),
        }
    }

    pub fn dist_to_manifold(&self, y: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::Circle => (norm(y) - 1.0).abs(),
            ManifoldKind::Torus => {
                let a = norm(&y[..2]) - 1.0;
                let b = norm(&y[2..4]) - 1.0;
                (a * a + b * b).sqrt()
            }
            ManifoldKind::ProjectivePlane => qtensor::dist_to_rp2(y),
        }
    }

    /// Distance to the singular complex `X`.
    pub fn dist_to_complex(&self, z: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::Circle => norm(z),
            ManifoldKind::Torus => norm(&z[..2]).min(norm(&z[2..4])),
            ManifoldKind::ProjectivePlane => qtensor::dist_to_degenerate(z),
        }
    }

    /// Retraction of `R^m \ X` onto `N` (radial normalisation for the circle
    /// factors, the leading-eigenvector projection for Q-tensors).
    pub fn rho(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.dist_to_complex(z);
        if d < COMPLEX_TOL {
            return Err(Error::OnComplex { distance: d });
        }
        Ok(self.rho_unchecked(z))
    }

    fn rho_unchecked(&self, z: &[f64]) -> Vec<f64> {
        match self.kind {
            ManifoldKind::Circle => {
                let r = norm(z);
                vec![z[0] / r, z[1] / r]
            }
            ManifoldKind::Torus => {
                let a = norm(&z[..2]);
                let b = norm(&z[2..4]);
                vec![z[0] / a, z[1] / a, z[2] / b, z[3] / b]
            }
            ManifoldKind::ProjectivePlane => qtensor::project_rp2(z).to_vec(),
        }
    }

    pub fn project_to_manifold(&self, y: &[f64]) -> Result<Vec<f64>> {
        let d = self.dist_to_manifold(y);
        if !(d < self.theta0) {
            return Err(Error::TooFarFromManifold {
                distance: d,
                theta0: self.theta0,
            });
        }
        Ok(self.rho_unchecked(y))
    }

    pub fn potential(&self, y: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::Circle => {
                let s = y[0] * y[0] + y[1] * y[1] - 1.0;
                s * s
            }
            ManifoldKind::Torus => {
                let s = y[0] * y[0] + y[1] * y[1] - 1.0;
                let t = y[2] * y[2] + y[3] * y[3] - 1.0;
                s * s + t * t
            }
            ManifoldKind::ProjectivePlane => qtensor::potential(y),
        }
    }

    /// Writes `∇f(y)` into `out`.
    pub fn potential_grad_into(&self, y: &[f64], out: &mut [f64]) {
        match self.kind {
            ManifoldKind::Circle => {
                let s = y[0] * y[0] + y[1] * y[1] - 1.0;
                out[0] = 4.0 * s * y[0];
                out[1] = 4.0 * s * y[1];
            }
            ManifoldKind::Torus => {
                let s = y[0] * y[0] + y[1] * y[1] - 1.0;
                let t = y[2] * y[2] + y[3] * y[3] - 1.0;
                out[0] = 4.0 * s * y[0];
                out[1] = 4.0 * s * y[1];
                out[2] = 4.0 * t * y[2];
                out[3] = 4.0 * t * y[3];
            }
            ManifoldKind::ProjectivePlane => out[..5].copy_from_slice(&qtensor::potential_grad(y)),
        }
    }

    pub fn potential_grad(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.ambient_dim()];
        self.potential_grad_into(y, &mut g);
        g
    }

    /// `ψ(z) = min(dist(z, X) / dist(N, X), 1)`.
    pub fn cutoff_psi(&self, z: &[f64]) -> f64 {
        (self.dist_to_complex(z) / self.dist_manifold_complex()).min(1.0)
    }

    /// The shifted retraction `ϱ_y(z) = (ϱ̃_y|N)^{-1}(ϱ(z - y))` where
    /// `ϱ̃_y(p) = ϱ(p - y)`; the inverse is found by fixed-point iteration on `N`.
    pub fn retraction(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let m = self.ambient_dim();
        let shifted: Vec<f64> = (0..m).map(|i| z[i] - y[i]).collect();
        let target = self.rho(&shifted)?;
        if y.iter().all(|&v| v == 0.0) {
            return Ok(target);
        }
        let residual = |p: &[f64]| -> Vec<f64> {
            let ps: Vec<f64> = (0..m).map(|i| p[i] - y[i]).collect();
            let img = self.rho_unchecked(&ps);
            (0..m).map(|i| target[i] - img[i]).collect()
        };
        let mut p = target.clone();
        let mut r = residual(&p);
        let mut r_norm = norm(&r);
        let mut damping = 1.0;
        for _ in 0..50 {
            if r_norm < 1e-12 {
                break;
            }
            let trial_in: Vec<f64> = (0..m).map(|i| p[i] + damping * r[i]).collect();
            let trial = self.rho_unchecked(&trial_in);
            let tr = residual(&trial);
            let tr_norm = norm(&tr);
            if tr_norm < r_norm {
                p = trial;
                r = tr;
                r_norm = tr_norm;
                damping = (damping * 1.5).min(1.0);
            } else {
                damping *= 0.5;
                if damping < 1e-6 {
                    break;
                }
            }
        }
        Ok(p)
    }

    /// Per-edge contribution to the homotopy class of a loop through `p` then `q`.
    pub fn class_increment(
        &self,
        p: &[f64],
        q: &[f64],
    ) -> std::result::Result<ClassIncrement, f64> {
        match self.kind {
            ManifoldKind::Circle => {
                let d = phase_increment(p, q);
                if d.abs() < CIRCLE_GAP {
                    Ok(ClassIncrement::Phase([d, 0.0]))
                } else {
                    Err(d.abs())
                }
            }
            ManifoldKind::Torus => {
                let d1 = phase_increment(&p[..2], &q[..2]);
                let d2 = phase_increment(&p[2..4], &q[2..4]);
                let gap = d1.abs().max(d2.abs());
                if gap < CIRCLE_GAP {
                    Ok(ClassIncrement::Phase([d1, d2]))
                } else {
                    Err(gap)
                }
            }
            ManifoldKind::ProjectivePlane => {
                let np = qtensor::leading(p).vector;
                let nq = qtensor::leading(q).vector;
                let dot = np[0] * nq[0] + np[1] * nq[1] + np[2] * nq[2];
                let angle = dot.abs().min(1.0).acos();
                if angle < LINE_GAP {
                    Ok(ClassIncrement::Flip(dot < 0.0))
                } else {
                    Err(angle)
                }
            }
        }
    }

    /// Homotopy class of the loop through `samples`. With `closed` set the loop
    /// returns from the last sample to the first; otherwise the last sample is
    /// taken to coincide with the first.
    pub fn loop_class<P: AsRef<[f64]>>(&self, samples: &[P], closed: bool) -> Result<GroupElement> {
        let mut acc = ClassAccumulator::default();
        let n = samples.len();
        if n == 0 {
            return Ok(self.group().zero());
        }
        let edges = if closed { n } else { n - 1 };
        for i in 0..edges {
            let p = samples[i].as_ref();
            let q = samples[(i + 1) % n].as_ref();
            let inc = self
                .class_increment(p, q)
                .map_err(|gap| Error::Undersampled { index: i, gap })?;
            acc.add(inc);
        }
        Ok(acc.finish(self.kind))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassIncrement {
    Phase([f64; 2]),
    Flip(bool),
}

impl ClassIncrement {
    pub fn reversed(self) -> Self {
        match self {
            ClassIncrement::Phase([a, b]) => ClassIncrement::Phase([-a, -b]),
            flip => flip,
        }
    }
}

/// Running sum of edge increments along one or more closed contours.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClassAccumulator {
    phases: [f64; 2],
    flips: u32,
}

impl ClassAccumulator {
    pub fn add(&mut self, inc: ClassIncrement) {
        match inc {
            ClassIncrement::Phase([a, b]) => {
                self.phases[0] += a;
                self.phases[1] += b;
            }
            ClassIncrement::Flip(f) => self.flips += f as u32,
        }
    }

    pub fn finish(&self, kind: ManifoldKind) -> GroupElement {
        let wind = |x: f64| (x / (2.0 * PI)).round() as i64;
        match kind {
            ManifoldKind::Circle => GroupElement::Int(wind(self.phases[0])),
            ManifoldKind::Torus => {
                GroupElement::IntPair(wind(self.phases[0]), wind(self.phases[1]))
            }
            ManifoldKind::ProjectivePlane => GroupElement::Bit((self.flips % 2) as u8),
        }
    }
}

fn phase_increment(p: &[f64], q: &[f64]) -> f64 {
    let cross = p[0] * q[1] - p[1] * q[0];
    let dot = p[0] * q[0] + p[1] * q[1];
    cross.atan2(dot)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
