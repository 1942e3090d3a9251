//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use glchains::chains::{ChainCell, PolyChain};
use glchains::{CoefficientGroup, GroupElement, GroupKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Point = [f64; 3];

pub fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Cheapest decomposition cost by value iteration over a box of elements.
pub fn decomposition_oracle(kind: GroupKind, range: i64) -> Vec<(GroupElement, f64)> {
    let g = CoefficientGroup::get(kind);
    let reach = 2 * range;
    let elems = g.elements_within(reach);
    let parts: Vec<(GroupElement, f64)> = g
        .elements_within(range)
        .into_iter()
        .filter(|s| !s.is_zero())
        .map(|s| {
            (
                s,
                PI * s.to_ints().iter().map(|v| v * v).sum::<i64>() as f64,
            )
        })
        .collect();
    let inside = |s: &GroupElement| s.to_ints().iter().all(|v| v.abs() <= reach);
    let mut best: std::collections::HashMap<GroupElement, f64> = elems
        .iter()
        .map(|&s| (s, if s.is_zero() { 0.0 } else { f64::INFINITY }))
        .collect();
    loop {
        let mut changed = false;
        for &s in &elems {
            for &(p, c) in &parts {
                let rest = s.sub(p);
                if !inside(&rest) {
                    continue;
                }
                let cand = best[&rest] + c;
                if cand < best[&s] - 1e-12 {
                    best.insert(s, cand);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    g.elements_within(range)
        .into_iter()
        .map(|s| (s, best[&s]))
        .collect()
}

/// A unit of a 0-chain: position, coordinate and sign (0 for ℤ/2).
#[derive(Clone, Copy)]
pub struct Unit {
    pub at: Point,
    pub coord: usize,
    pub sign: i64,
}

pub fn units(chain: &PolyChain) -> Vec<Unit> {
    let mut out = Vec::new();
    for c in &chain.cells {
        match c.mult {
            GroupElement::Bit(b) => {
                if b % 2 == 1 {
                    out.push(Unit {
                        at: c.geom[0],
                        coord: 0,
                        sign: 0,
                    });
                }
            }
            m => {
                for (coord, v) in m.to_ints().into_iter().enumerate() {
                    for _ in 0..v.abs() {
                        out.push(Unit {
                            at: c.geom[0],
                            coord,
                            sign: v.signum(),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Exhaustive search over partial matchings; unmatched units pay `drop`.
pub fn matching_oracle(us: &[Unit], drop: &dyn Fn(&Point) -> f64) -> f64 {
    fn go(us: &[Unit], used: &mut Vec<bool>, drop: &dyn Fn(&Point) -> f64) -> f64 {
        let Some(i) = used.iter().position(|u| !u) else {
            return 0.0;
        };
        used[i] = true;
        let mut best = drop(&us[i].at) + go(us, used, drop);
        for j in i + 1..us.len() {
            let compatible = !used[j] && us[j].coord == us[i].coord && us[j].sign == -us[i].sign;
            if compatible {
                used[j] = true;
                best = best.min(dist(&us[i].at, &us[j].at) + go(us, used, drop));
                used[j] = false;
            }
        }
        used[i] = false;
        best
    }
    go(us, &mut vec![false; us.len()], drop)
}

/// Up to six random points in the unit cube with multiplicities of size at most 2.
pub fn random_zero_chain(rng: &mut ChaCha8Rng, kind: GroupKind, dim: usize) -> PolyChain {
    let n = rng.gen_range(1..=6);
    let cells = (0..n)
        .map(|_| {
            let mut p = [0.0; 3];
            for x in p.iter_mut().take(dim) {
                *x = rng.gen_range(0.0..1.0);
            }
            let mult = match kind {
                GroupKind::Circle => GroupElement::Int(rng.gen_range(-2..=2)),
                GroupKind::Torus => {
                    GroupElement::IntPair(rng.gen_range(-2..=2), rng.gen_range(-2..=2))
                }
                GroupKind::Projective => GroupElement::Bit(rng.gen_range(0..=1)),
            };
            ChainCell::point(p, mult)
        })
        .collect();
    PolyChain::new(0, dim.max(2), kind, cells).unwrap()
}

/// Uniform direction on the unit sphere.
pub fn sphere_point(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let p: Point = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let r = dist(&p, &[0.0; 3]);
        if r > 0.1 && r <= 1.0 {
            return [p[0] / r, p[1] / r, p[2] / r];
        }
    }
}
