//! Quadrature and FEM grids on the unit circle and the unit sphere, and
//! membership masks for spherical traces of ambient domains.

use crate::domain::{Classification, DomainPair};
use crate::error::{Error, Result};
use crate::geo::Point;
use std::collections::HashMap;
use std::fmt::Write as _;

const MAX_NODES: usize = 10_000_000;

/// Quadrature + FEM mesh on `S^1` (uniform angles) or `S^2` (icosphere).
#[derive(Debug, Clone)]
pub struct SphereGrid {
    /// Sphere dimension `n`, 1 or 2.
    pub dim: usize,
    pub nodes: Vec<Point>,
    /// Lumped quadrature weights; they sum to the total surface measure.
    pub weights: Vec<f64>,
    /// Neighbour lists (ring for `S^1`, one-ring for `S^2`).
    pub adjacency: Vec<Vec<u32>>,
    /// Edges with cotangent stiffness weights (`S^2`) or inverse arc
    /// lengths (`S^1`).
    pub edges: Vec<(u32, u32, f64)>,
    pub triangles: Vec<[u32; 3]>,
}

impl SphereGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Angle of node `i` for circle grids.
    pub fn angle(&self, i: usize) -> f64 {
        debug_assert_eq!(self.dim, 1);
        self.nodes[i].y.atan2(self.nodes[i].x)
    }

    /// Typical angular spacing between adjacent nodes.
    pub fn typical_spacing(&self) -> f64 {
        if self.dim == 1 {
            std::f64::consts::TAU / self.len() as f64
        } else {
            let p = self.nodes[0];
            let q = self.nodes[self.adjacency[0][0] as usize];
            (p - q).norm()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,x,y,z,weight\n");
        for (i, (p, w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", i, p.x, p.y, p.z, w);
        }
        out
    }
}

/// Build a sphere grid: `n = 1` gives `2^(level+6)` uniform angular nodes,
/// `n = 2` an icosphere with `level` subdivisions and lumped spherical-area
/// weights.
pub fn build_grid(n: usize, level: u32) -> Result<SphereGrid> {
    match n {
        1 => {
            let count = 1usize
                .checked_shl(level + 6)
                .ok_or_else(|| Error::Resource("circle grid level overflow".into()))?;
            if count > MAX_NODES {
                return Err(Error::Resource(format!("circle grid would need {count} nodes")));
            }
            let step = std::f64::consts::TAU / count as f64;
            let nodes: Vec<Point> = (0..count)
                .map(|k| {
                    let t = k as f64 * step;
                    Point::new(t.cos(), t.sin(), 0.0)
                })
                .collect();
            let weights = vec![step; count];
            let mut adjacency = vec![Vec::with_capacity(2); count];
            let mut edges = Vec::with_capacity(count);
            for i in 0..count {
                let j = (i + 1) % count;
                adjacency[i].push(j as u32);
                adjacency[j].push(i as u32);
                edges.push((i as u32, j as u32, 1.0 / step));
            }
            Ok(SphereGrid {
                dim: 1,
                nodes,
                weights,
                adjacency,
                edges,
                triangles: Vec::new(),
            })
        }
        2 => {
            let count = 10 * 4usize.pow(level) + 2;
            if count > MAX_NODES {
                return Err(Error::Resource(format!("icosphere would need {count} nodes")));
            }
            Ok(icosphere(level))
        }
        _ => Err(Error::Config(format!("sphere dimension {n} not supported"))),
    }
}

fn icosphere(level: u32) -> SphereGrid {
    // Pole-aligned icosahedron: poles at z = +-1 and two pentagonal rings at
    // z = +-1/sqrt(5). Every equator-crossing edge joins z = +c to z = -c,
    // so its midpoint lands exactly on z = 0; from the first subdivision on,
    // the equator is a separating ring of exact z = 0 nodes, which keeps
    // hemisphere-type Dirichlet problems free of boundary-interpolation bias.
    let c = 1.0 / 5.0f64.sqrt();
    let r = 2.0 / 5.0f64.sqrt();
    let mut nodes: Vec<Point> = Vec::with_capacity(12);
    nodes.push(Point::new(0.0, 0.0, 1.0));
    let fifth = std::f64::consts::TAU / 5.0;
    for k in 0..5 {
        let a = k as f64 * fifth;
        nodes.push(Point::new(r * a.cos(), r * a.sin(), c));
    }
    for k in 0..5 {
        let a = k as f64 * fifth + 0.5 * fifth;
        nodes.push(Point::new(r * a.cos(), r * a.sin(), -c));
    }
    nodes.push(Point::new(0.0, 0.0, -1.0));
    let top = |k: u32| 1 + k % 5;
    let bot = |k: u32| 6 + k % 5;
    let mut faces: Vec<[u32; 3]> = Vec::with_capacity(20);
    for k in 0..5 {
        faces.push([0, top(k), top(k + 1)]);
        faces.push([top(k), bot(k), top(k + 1)]);
        faces.push([top(k + 1), bot(k), bot(k + 1)]);
        faces.push([11, bot(k + 1), bot(k)]);
    }

    for _ in 0..level {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: u32, b: u32, nodes: &mut Vec<Point>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let p = (nodes[a as usize] + nodes[b as usize]).normalize();
                nodes.push(p);
                (nodes.len() - 1) as u32
            })
        };
        for f in &faces {
            let ab = mid(f[0], f[1], &mut nodes);
            let bc = mid(f[1], f[2], &mut nodes);
            let ca = mid(f[2], f[0], &mut nodes);
            next_faces.push([f[0], ab, ca]);
            next_faces.push([f[1], bc, ab]);
            next_faces.push([f[2], ca, bc]);
            next_faces.push([ab, bc, ca]);
        }
        faces = next_faces;
    }

    let count = nodes.len();
    let mut weights = vec![0.0; count];
    let mut edge_weights: HashMap<(u32, u32), f64> = HashMap::new();
    for f in &faces {
        let (a, b, c) = (nodes[f[0] as usize], nodes[f[1] as usize], nodes[f[2] as usize]);
        // Spherical triangle area (solid angle): exact tiling of 4*pi.
        let omega = spherical_area(&a, &b, &c);
        for &v in f {
            weights[v as usize] += omega / 3.0;
        }
        // Flat-triangle cotangent weights for the stiffness matrix.
        for k in 0..3 {
            let (i, j, o) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            let (pi, pj, po) = (nodes[i as usize], nodes[j as usize], nodes[o as usize]);
            let u = pi - po;
            let v = pj - po;
            let cot = u.dot(&v) / u.cross(&v).norm();
            let key = (i.min(j), i.max(j));
            *edge_weights.entry(key).or_insert(0.0) += 0.5 * cot;
        }
    }

    let mut edges: Vec<(u32, u32, f64)> = edge_weights
        .into_iter()
        .map(|((i, j), w)| (i, j, w))
        .collect();
    edges.sort_unstable_by_key(|&(i, j, _)| (i, j));
    let mut adjacency = vec![Vec::new(); count];
    for &(i, j, _) in &edges {
        adjacency[i as usize].push(j);
        adjacency[j as usize].push(i);
    }
    for nbrs in &mut adjacency {
        nbrs.sort_unstable();
    }

    SphereGrid {
        dim: 2,
        nodes,
        weights,
        adjacency,
        edges,
        triangles: faces,
    }
}

/// Solid angle of a spherical triangle with unit-vector vertices.
fn spherical_area(a: &Point, b: &Point, c: &Point) -> f64 {
    let num = a.dot(&b.cross(c)).abs();
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den)
}

/// Per-node membership of a spherical region, with fractional boundary
/// weights on cells that straddle the region boundary.
///
/// `member` records the node's own classification and drives Dirichlet
/// exclusion; `frac` is the subsampled cell fraction inside the region
/// (1 on interior cells, 0 on exterior cells, partial on the straddle band
/// regardless of which side the node center falls), which keeps the
/// quadrature of region measures unbiased.
#[derive(Debug, Clone)]
pub struct RegionMask {
    pub dim: usize,
    pub member: Vec<bool>,
    pub frac: Vec<f64>,
}

impl RegionMask {
    pub fn empty(grid: &SphereGrid) -> Self {
        Self {
            dim: grid.dim,
            member: vec![false; grid.len()],
            frac: vec![0.0; grid.len()],
        }
    }

    pub fn full(grid: &SphereGrid) -> Self {
        Self {
            dim: grid.dim,
            member: vec![true; grid.len()],
            frac: vec![1.0; grid.len()],
        }
    }

    /// Build from a predicate on unit vectors, resolving straddling cells by
    /// four-point midpoint subsampling.
    pub fn from_fn(grid: &SphereGrid, f: impl Fn(&Point) -> bool) -> Self {
        let member: Vec<bool> = grid.nodes.iter().map(|p| f(p)).collect();
        let mut frac: Vec<f64> = member.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        for i in 0..grid.len() {
            if grid.adjacency[i].iter().any(|&j| member[j as usize] != member[i]) {
                let hits = subsamples(grid, i).iter().filter(|p| f(p)).count();
                frac[i] = hits as f64 / 4.0;
            }
        }
        Self {
            dim: grid.dim,
            member,
            frac,
        }
    }

    pub fn interior_count(&self) -> usize {
        self.member.iter().filter(|&&m| m).count()
    }

    /// True where the node or one of its neighbours disagrees with it.
    pub fn straddles(&self, grid: &SphereGrid, i: usize) -> bool {
        grid.adjacency[i]
            .iter()
            .any(|&j| self.member[j as usize] != self.member[i])
    }
}

/// The four midpoint subsample directions of node `i`'s cell.
pub(crate) fn subsamples(grid: &SphereGrid, i: usize) -> [Point; 4] {
    let p = grid.nodes[i];
    if grid.dim == 1 {
        let step = std::f64::consts::TAU / grid.len() as f64;
        let t = p.y.atan2(p.x);
        let at = |o: f64| Point::new((t + o).cos(), (t + o).sin(), 0.0);
        [
            at(-0.375 * step),
            at(-0.125 * step),
            at(0.125 * step),
            at(0.375 * step),
        ]
    } else {
        // Four points on an orthonormal tangent cross, scaled to stay inside
        // the node's cell (neighbour distances set the cell size).
        let nbrs = &grid.adjacency[i];
        let mut min_edge = f64::INFINITY;
        for &j in nbrs {
            min_edge = min_edge.min((grid.nodes[j as usize] - p).norm());
        }
        let rho = 0.35 * min_edge;
        let axis = if p.x.abs() < 0.9 {
            Point::new(1.0, 0.0, 0.0)
        } else {
            Point::new(0.0, 1.0, 0.0)
        };
        let u = (axis - p * axis.dot(&p)).normalize();
        let v = p.cross(&u);
        // generic rotation keeps the cross off coordinate-aligned cuts
        let (s, c) = 0.4799f64.sin_cos();
        let t1 = u * c + v * s;
        let t2 = v * c - u * s;
        [
            (p + t1 * rho).normalize(),
            (p - t1 * rho).normalize(),
            (p + t2 * rho).normalize(),
            (p - t2 * rho).normalize(),
        ]
    }
}

/// Node classifications of the trace of a pair on `S(x, r)`.
pub fn trace_classes(
    pair: &DomainPair,
    x: &Point,
    r: f64,
    grid: &SphereGrid,
) -> Vec<Classification> {
    assert!(r > 0.0, "trace radius must be positive");
    grid.nodes
        .iter()
        .map(|w| pair.classify(&(x + w * r)))
        .collect()
}

/// Spherical traces of the two sides of a pair on `S(x, r)`, as masks over
/// the grid directions.
pub fn trace_region(
    pair: &DomainPair,
    x: &Point,
    r: f64,
    grid: &SphereGrid,
) -> (RegionMask, RegionMask) {
    let classes = trace_classes(pair, x, r, grid);
    masks_from_classes(pair, x, r, grid, &classes)
}

pub fn masks_from_classes(
    pair: &DomainPair,
    x: &Point,
    r: f64,
    grid: &SphereGrid,
    classes: &[Classification],
) -> (RegionMask, RegionMask) {
    let classify = |w: &Point| pair.classify(&(x + w * r));
    let mut masks = (RegionMask::empty(grid), RegionMask::empty(grid));
    for i in 0..grid.len() {
        match classes[i] {
            Classification::In1 => {
                masks.0.member[i] = true;
                masks.0.frac[i] = 1.0;
            }
            Classification::In2 => {
                masks.1.member[i] = true;
                masks.1.frac[i] = 1.0;
            }
            Classification::Neither => {}
        }
    }
    // Fractional weights wherever the classification changes across an edge;
    // both masks are resolved from the same subsample points, so the two
    // fractions and the leftover band tile each cell exactly.
    for i in 0..grid.len() {
        let straddling = grid.adjacency[i].iter().any(|&j| classes[j as usize] != classes[i]);
        if !straddling {
            continue;
        }
        let subs = subsamples(grid, i);
        let mut hits = [0usize; 2];
        for p in &subs {
            match classify(p) {
                Classification::In1 => hits[0] += 1,
                Classification::In2 => hits[1] += 1,
                Classification::Neither => {}
            }
        }
        masks.0.frac[i] = hits[0] as f64 / 4.0;
        masks.1.frac[i] = hits[1] as f64 / 4.0;
    }
    masks
}

/// Region measure `sum frac * weight`; the full mask gives the total
/// surface measure.
pub fn region_measure(grid: &SphereGrid, mask: &RegionMask) -> f64 {
    mask.frac
        .iter()
        .zip(&grid.weights)
        .map(|(f, w)| f * w)
        .sum()
}
