//! Stopping-time trees over the dyadic lattice, approximating Lipschitz
//! graphs, the graph subdomains on both sides, and the packed forest of
//! tree roots.

use crate::boundary::BoundarySample;
use crate::domain::{Classification, DomainPair};
use crate::error::{Error, Result};
use crate::flatness::{bbeta, beta, BetaValue};
use crate::geo::{PlaneParam, Point};
use crate::lattice::DyadicLattice;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy)]
pub struct CoronaParams {
    /// Dilation factor for the stopping-beta windows (`> 20`).
    pub k1: f64,
    /// Flatness threshold for stopping condition (b).
    pub epsilon: f64,
    /// Plane-angle threshold for stopping condition (c) and the subdomain
    /// graph offset.
    pub delta: f64,
    /// Multistarts for the bilateral beta optimizer.
    pub multistarts: usize,
    pub seed: u64,
}

impl Default for CoronaParams {
    fn default() -> Self {
        Self {
            k1: 24.0,
            epsilon: 0.01,
            delta: 0.1,
            multistarts: 8,
            seed: 17,
        }
    }
}

/// Why a cube entered the stopping family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// No member point inside the cylinder.
    OutsideCylinder,
    /// `bbeta(k1 P)` above epsilon.
    NotFlat,
    /// Best plane tilts more than delta against the root plane.
    Tilted,
}

#[derive(Debug, Clone)]
pub struct StopEntry {
    pub cube: u32,
    pub reason: StopReason,
}

/// Rotated frame of the root plane: heights along the normal, tangential
/// coordinates in the plane.
#[derive(Debug, Clone)]
pub struct Frame {
    pub origin: Point,
    pub tangents: (Point, Point),
    pub normal: Point,
    pub dim: usize,
}

impl Frame {
    pub fn tangential(&self, p: &Point) -> (f64, f64) {
        let d = p - self.origin;
        (d.dot(&self.tangents.0), d.dot(&self.tangents.1))
    }

    pub fn height(&self, p: &Point) -> f64 {
        (p - self.origin).dot(&self.normal)
    }

    pub fn lift(&self, s: (f64, f64), height: f64) -> Point {
        self.origin + self.tangents.0 * s.0 + self.tangents.1 * s.1 + self.normal * height
    }
}

/// Regular grid over the root-plane patch of the cylinder.
#[derive(Debug, Clone)]
pub struct PlaneGrid {
    pub step: f64,
    pub half: f64,
    pub n1: usize,
    pub n2: usize,
}

impl PlaneGrid {
    fn coord(&self, i: usize, j: usize) -> (f64, f64) {
        (
            -self.half + i as f64 * self.step,
            if self.n2 == 1 {
                0.0
            } else {
                -self.half + j as f64 * self.step
            },
        )
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n1 + i
    }

    fn nearest_node(&self, s: (f64, f64)) -> (usize, usize) {
        let i = (((s.0 + self.half) / self.step).round().max(0.0) as usize).min(self.n1 - 1);
        let j = if self.n2 == 1 {
            0
        } else {
            (((s.1 + self.half) / self.step).round().max(0.0) as usize).min(self.n2 - 1)
        };
        (i, j)
    }
}

/// A stopping-time tree at one root cube with its plane, tree distance
/// evaluators, approximating graph, and the defect set.
#[derive(Debug, Clone)]
pub struct TreeRecord {
    pub root: u32,
    pub plane: PlaneParam,
    pub bbeta_root: f64,
    pub stop: Vec<StopEntry>,
    pub tree: Vec<u32>,
    pub frame: Frame,
    pub cyl_half: f64,
    pub center_height: f64,
    pub grid: PlaneGrid,
    /// Fiber infimum of the tree distance, made 1-Lipschitz on the grid.
    pub d_fiber: Vec<f64>,
    /// Graph heights over the grid, slope-clamped.
    pub heights: Vec<f64>,
    /// Member indices with vanishing tree distance (up to resolution).
    pub z_set: Vec<u32>,
}

/// Best bilateral-flatness plane of the `k1`-window around a cube.
pub fn best_plane(
    lattice: &DyadicLattice,
    sample: &BoundarySample,
    cube: u32,
    params: &CoronaParams,
) -> Result<BetaValue> {
    let c = lattice.cube(cube);
    let xq = sample.points[c.center as usize];
    bbeta(sample, &xq, params.k1 * c.side(), params.multistarts)
}

/// True when every member of `inner` lies within `reach` of the member set
/// of `outer` (the dilated-cube containment test).
fn cube_within_dilation(
    lattice: &DyadicLattice,
    sample: &BoundarySample,
    outer: u32,
    inner: u32,
    reach: f64,
) -> bool {
    let ic = lattice.cube(inner);
    let xc = sample.points[ic.center as usize];
    let center_dist = lattice.distance_to_cube(sample, outer, &xc);
    if center_dist + ic.max_center_dist <= reach {
        return true;
    }
    if center_dist - ic.max_center_dist > reach {
        return false;
    }
    if ic.children.is_empty() {
        return lattice.points_of(inner).iter().all(|&p| {
            lattice.distance_to_cube(sample, outer, &sample.points[p as usize]) <= reach
        });
    }
    ic.children
        .iter()
        .all(|&ch| cube_within_dilation(lattice, sample, outer, ch, reach))
}

/// Maximal cubes contained in the dilated root window.
fn region_roots(
    lattice: &DyadicLattice,
    sample: &BoundarySample,
    root: u32,
    reach: f64,
) -> Vec<u32> {
    let mut out = Vec::new();
    let mut stack: Vec<u32> = lattice.generations[0].clone();
    while let Some(q) = stack.pop() {
        if cube_within_dilation(lattice, sample, root, q, reach) {
            out.push(q);
        } else {
            stack.extend_from_slice(&lattice.cube(q).children);
        }
    }
    out.sort_unstable();
    out
}

struct StopScan {
    stop: Vec<StopEntry>,
    tree: Vec<u32>,
}

/// Top-down scan: descend from the maximal cubes in the window, stopping at
/// the first cube that leaves the cylinder, loses flatness, or tilts.
fn stopping_scan(
    lattice: &DyadicLattice,
    sample: &BoundarySample,
    root: u32,
    root_plane: &PlaneParam,
    frame: &Frame,
    cyl_half: f64,
    center_height: f64,
    params: &CoronaParams,
) -> Result<StopScan> {
    let reach = (params.k1 - 1.0) * lattice.cube(root).side();
    let roots = region_roots(lattice, sample, root, reach);
    let in_cylinder = |p: &Point| -> bool {
        let (s1, s2) = frame.tangential(p);
        s1.abs() <= cyl_half
            && s2.abs() <= cyl_half
            && (frame.height(p) - center_height).abs() <= cyl_half
    };
    let mut stop = Vec::new();
    let mut tree = Vec::new();
    let mut stack = roots;
    while let Some(q) = stack.pop() {
        let c = lattice.cube(q);
        let meets_cylinder = lattice
            .points_of(q)
            .iter()
            .any(|&p| in_cylinder(&sample.points[p as usize]));
        if !meets_cylinder {
            stop.push(StopEntry {
                cube: q,
                reason: StopReason::OutsideCylinder,
            });
            continue;
        }
        let xq = sample.points[c.center as usize];
        let bb = bbeta(sample, &xq, params.k1 * c.side(), params.multistarts)?;
        if bb.value > params.epsilon {
            stop.push(StopEntry {
                cube: q,
                reason: StopReason::NotFlat,
            });
            continue;
        }
        if bb.plane.angle_to(root_plane) > params.delta {
            stop.push(StopEntry {
                cube: q,
                reason: StopReason::Tilted,
            });
            continue;
        }
        tree.push(q);
        stack.extend_from_slice(&c.children);
    }
    stop.sort_unstable_by_key(|e| e.cube);
    tree.sort_unstable();
    Ok(StopScan { stop, tree })
}

/// Tree distance: infimum over tree cubes of distance plus diameter.
pub fn d_q(record: &TreeRecord, lattice: &DyadicLattice, sample: &BoundarySample, x: &Point) -> f64 {
    let mut best = f64::INFINITY;
    for &q in &record.tree {
        let c = lattice.cube(q);
        let lb = c.bbox.distance(x);
        if lb >= best {
            continue;
        }
        let d = lattice.distance_to_cube(sample, q, x) + c.diam_bound();
        best = best.min(d);
    }
    best
}

/// Fiber projection of the tree distance, interpolated from the record's
/// 1-Lipschitz grid values.
pub fn d_q_projected(record: &TreeRecord, s: (f64, f64)) -> f64 {
    let g = &record.grid;
    let fi = ((s.0 + g.half) / g.step).clamp(0.0, (g.n1 - 1) as f64);
    let (i0, i1) = (fi.floor() as usize, (fi.ceil() as usize).min(g.n1 - 1));
    let tx = fi - fi.floor();
    if g.n2 == 1 {
        let a = record.d_fiber[g.idx(i0, 0)];
        let b = record.d_fiber[g.idx(i1, 0)];
        a * (1.0 - tx) + b * tx
    } else {
        let fj = ((s.1 + g.half) / g.step).clamp(0.0, (g.n2 - 1) as f64);
        let (j0, j1) = (fj.floor() as usize, (fj.ceil() as usize).min(g.n2 - 1));
        let ty = fj - fj.floor();
        let v00 = record.d_fiber[g.idx(i0, j0)];
        let v10 = record.d_fiber[g.idx(i1, j0)];
        let v01 = record.d_fiber[g.idx(i0, j1)];
        let v11 = record.d_fiber[g.idx(i1, j1)];
        (v00 * (1.0 - tx) + v10 * tx) * (1.0 - ty) + (v01 * (1.0 - tx) + v11 * tx) * ty
    }
}

/// Graph height at a tangential coordinate.
pub fn graph_height_at(record: &TreeRecord, s: (f64, f64)) -> f64 {
    let g = &record.grid;
    let (i, j) = g.nearest_node(s);
    record.heights[g.idx(i, j)]
}

/// Build the full record for a root cube: plane, stopping family, fiber
/// distances, approximating graph, and the vanishing set.
pub fn build_tree_record(
    lattice: &DyadicLattice,
    sample: &BoundarySample,
    root: u32,
    params: &CoronaParams,
) -> Result<TreeRecord> {
    let rc = lattice.cube(root);
    let xq = sample.points[rc.center as usize];
    let ell = rc.side();
    let root_beta = best_plane(lattice, sample, root, params)?;
    if root_beta.value > params.epsilon {
        return Err(Error::Decomposition(format!(
            "root window is not flat: bbeta {} > epsilon {}",
            root_beta.value, params.epsilon
        )));
    }
    let plane = root_beta.plane;
    let (t1, t2) = plane.tangent_basis(sample.dim);
    let origin = xq - plane.normal * plane.signed_distance(&xq);
    let frame = Frame {
        origin,
        tangents: (t1, t2),
        normal: plane.normal,
        dim: sample.dim,
    };
    let cyl_half = 10.0 * ell;
    let center_height = frame.height(&xq);

    let scan = stopping_scan(
        lattice,
        sample,
        root,
        &plane,
        &frame,
        cyl_half,
        center_height,
        params,
    )?;

    // grid over the plane patch
    let target = if sample.dim == 2 { 512 } else { 48 };
    let step = (2.0 * cyl_half / target as f64).max(2.0 * sample.mesh_scale);
    let n1 = (2.0 * cyl_half / step).round() as usize + 1;
    let n2 = if sample.dim == 2 { 1 } else { n1 };
    let grid = PlaneGrid {
        step,
        half: cyl_half,
        n1,
        n2,
    };

    let mut record = TreeRecord {
        root,
        plane,
        bbeta_root: root_beta.value,
        stop: scan.stop,
        tree: scan.tree,
        frame,
        cyl_half,
        center_height,
        grid,
        d_fiber: Vec::new(),
        heights: Vec::new(),
        z_set: Vec::new(),
    };

    // fiber infima of the tree distance over 21 heights, then in-grid
    // Lipschitz regularization by iterated neighbour relaxation
    let g = record.grid.clone();
    let mut d_fiber = vec![f64::INFINITY; g.n1 * g.n2];
    for j in 0..g.n2 {
        for i in 0..g.n1 {
            let s = g.coord(i, j);
            let mut best = f64::INFINITY;
            for k in 0..21 {
                let h = record.center_height - record.cyl_half
                    + (k as f64 + 0.5) / 21.0 * 2.0 * record.cyl_half;
                let p = record.frame.lift(s, h);
                best = best.min(d_q(&record, lattice, sample, &p));
            }
            d_fiber[g.idx(i, j)] = best;
        }
    }
    loop {
        let mut changed = false;
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                let mut v = d_fiber[g.idx(i, j)];
                let mut relax = |ni: usize, nj: usize, v: &mut f64| {
                    let w = d_fiber[g.idx(ni, nj)] + g.step;
                    if w < *v {
                        *v = w;
                    }
                };
                if i > 0 {
                    relax(i - 1, j, &mut v);
                }
                if i + 1 < g.n1 {
                    relax(i + 1, j, &mut v);
                }
                if j > 0 {
                    relax(i, j - 1, &mut v);
                }
                if j + 1 < g.n2 {
                    relax(i, j + 1, &mut v);
                }
                if v < d_fiber[g.idx(i, j)] {
                    d_fiber[g.idx(i, j)] = v;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    record.d_fiber = d_fiber;

    // approximating graph: weighted median of fiber-tube heights
    let near = sample
        .index()
        .indices_in_ball(&xq, 20.0 * ell);
    let mut heights = vec![f64::NAN; g.n1 * g.n2];
    for j in 0..g.n2 {
        for i in 0..g.n1 {
            let s = g.coord(i, j);
            let tube = (0.25 * record.d_fiber[g.idx(i, j)]).max(2.0 * sample.mesh_scale);
            let mut entries: Vec<(f64, f64)> = Vec::new();
            for &p in &near {
                let pt = sample.points[p];
                let (s1, s2) = record.frame.tangential(&pt);
                let dd = ((s1 - s.0).powi(2) + (s2 - s.1).powi(2)).sqrt();
                if dd <= tube {
                    entries.push((record.frame.height(&pt), sample.weights[p]));
                }
            }
            if entries.is_empty() {
                continue;
            }
            entries.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = entries.iter().map(|e| e.1).sum();
            let mut acc = 0.0;
            for (h, w) in &entries {
                acc += w;
                if acc >= total / 2.0 {
                    heights[g.idx(i, j)] = *h;
                    break;
                }
            }
        }
    }
    // fill empty fibers from the nearest defined node
    let defined: Vec<(usize, usize)> = (0..g.n2)
        .flat_map(|j| (0..g.n1).map(move |i| (i, j)))
        .filter(|&(i, j)| heights[g.idx(i, j)].is_finite())
        .collect();
    if defined.is_empty() {
        return Err(Error::Geometry("all graph fibers are empty".into()));
    }
    for j in 0..g.n2 {
        for i in 0..g.n1 {
            if heights[g.idx(i, j)].is_finite() {
                continue;
            }
            let mut best = (f64::INFINITY, 0.0);
            for &(di, dj) in &defined {
                let d2 = (di as f64 - i as f64).powi(2) + (dj as f64 - j as f64).powi(2);
                if d2 < best.0 {
                    best = (d2, heights[g.idx(di, dj)]);
                }
            }
            heights[g.idx(i, j)] = best.1;
        }
    }
    // slope clamp: iterated neighbour clipping to 2 delta per step
    let max_diff = 2.0 * params.delta * g.step;
    loop {
        let mut worst = 0.0f64;
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                let neighbours: [(isize, isize); 2] = [(1, 0), (0, 1)];
                for (di, dj) in neighbours {
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni >= g.n1 as isize || nj >= g.n2 as isize {
                        continue;
                    }
                    let a = heights[g.idx(i, j)];
                    let b = heights[g.idx(ni as usize, nj as usize)];
                    let excess = (a - b).abs() - max_diff;
                    if excess > 0.0 {
                        worst = worst.max(excess);
                        let shift = excess / 2.0 * (a - b).signum();
                        heights[g.idx(i, j)] = a - shift;
                        heights[g.idx(ni as usize, nj as usize)] = b + shift;
                    }
                }
            }
        }
        if worst <= 1e-14 {
            break;
        }
    }
    record.heights = heights;

    // vanishing set: members of the root whose tree distance reaches the
    // finest resolvable scale
    let floor = 2.0 * 2.0f64.powi(-lattice.j_max);
    let mut z_set = Vec::new();
    for &p in lattice.points_of(root) {
        let pt = sample.points[p as usize];
        if d_q(&record, lattice, sample, &pt) <= floor {
            z_set.push(p);
        }
    }
    record.z_set = z_set;
    Ok(record)
}

/// Sup-norm defect ratios `dist(p, graph) / d_Q(p)` over the sample points
/// near the root; the calibrated constant bounds these on flat inputs.
pub fn graph_defect_ratios(
    record: &TreeRecord,
    lattice: &DyadicLattice,
    sample: &BoundarySample,
) -> Vec<f64> {
    let rc = lattice.cube(record.root);
    let xq = sample.points[rc.center as usize];
    let mut out = Vec::new();
    sample
        .index()
        .for_each_in_ball(&xq, 20.0 * rc.side(), |p| {
            let pt = sample.points[p];
            let s = record.frame.tangential(&pt);
            let gh = graph_height_at(record, s);
            let dist = (record.frame.height(&pt) - gh).abs();
            let dq = d_q(record, lattice, sample, &pt).max(1e-12);
            out.push(dist / dq);
        });
    out.sort_by(f64::total_cmp);
    out
}

#[derive(Debug, Clone)]
pub struct SubdomainReport {
    /// Side label of the upper subdomain (above the graph).
    pub upper_is: Classification,
    /// Fraction of interior probes agreeing with the majority label,
    /// per side (upper, lower).
    pub purity: [f64; 2],
    /// Probes landing in the gap or on the wrong side.
    pub containment_violations: [usize; 2],
    /// Worst ratio `dist(probe, boundary sample) / (delta/2 D_Q)`; healthy
    /// separation keeps it at one or above.
    pub min_separation_ratio: f64,
    /// Largest inscribed ball radius found per side.
    pub inscribed: [f64; 2],
}

/// Sample the two graph subdomains, vote their side labels, and verify
/// containment and boundary separation.
pub fn subdomains(
    record: &TreeRecord,
    lattice: &DyadicLattice,
    sample: &BoundarySample,
    pair: &DomainPair,
    params: &CoronaParams,
) -> Result<SubdomainReport> {
    let rc = lattice.cube(record.root);
    let ell = rc.side();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let g = &record.grid;
    let probes_per_side = 1000;
    let mut votes = [[0usize; 3]; 2];
    let mut min_sep = f64::INFINITY;
    let mut inscribed = [0.0f64; 2];
    let mut probe_sets: [Vec<Point>; 2] = [Vec::new(), Vec::new()];
    for side in 0..2 {
        let sign = if side == 0 { 1.0 } else { -1.0 };
        let mut tries = 0;
        while probe_sets[side].len() < probes_per_side && tries < 100 * probes_per_side {
            tries += 1;
            let s = (
                rng.gen_range(-g.half..g.half),
                if g.n2 == 1 {
                    0.0
                } else {
                    rng.gen_range(-g.half..g.half)
                },
            );
            let a = graph_height_at(record, s);
            let dq = d_q_projected(record, s);
            let offset = params.delta * dq;
            let lo = a + sign * offset;
            let max_h = record.center_height + record.cyl_half;
            let min_h = record.center_height - record.cyl_half;
            let h = if side == 0 {
                if lo >= max_h {
                    continue;
                }
                rng.gen_range(lo..max_h)
            } else {
                if lo <= min_h {
                    continue;
                }
                rng.gen_range(min_h..lo)
            };
            let p = record.frame.lift(s, h);
            match pair.classify(&p) {
                Classification::In1 => votes[side][0] += 1,
                Classification::In2 => votes[side][1] += 1,
                Classification::Neither => votes[side][2] += 1,
            }
            // separation against the boundary sample
            let (_, dist) = sample.index().nearest(&p);
            let need = params.delta / 2.0 * dq;
            if need > 4.0 * sample.mesh_scale {
                min_sep = min_sep.min(dist / need);
            }
            // inscribed ball estimate: vertical clearance and walls
            let clearance = ((h - lo).abs() * 0.9)
                .min(g.half - s.0.abs())
                .min(record.cyl_half - (h - record.center_height).abs());
            inscribed[side] = inscribed[side].max(clearance);
            probe_sets[side].push(p);
        }
        if probe_sets[side].is_empty() {
            return Err(Error::Decomposition(format!(
                "no admissible probes on side {side}"
            )));
        }
    }
    let mut purity = [0.0f64; 2];
    let mut labels = [Classification::Neither; 2];
    for side in 0..2 {
        let total = votes[side][0] + votes[side][1] + votes[side][2];
        let (best_idx, &best) = votes[side]
            .iter()
            .enumerate()
            .max_by_key(|(_, &v)| v)
            .unwrap();
        purity[side] = best as f64 / total as f64;
        labels[side] = match best_idx {
            0 => Classification::In1,
            1 => Classification::In2,
            _ => Classification::Neither,
        };
        if purity[side] < 0.99 {
            return Err(Error::Decomposition(format!(
                "side {side} votes are mixed: purity {}",
                purity[side]
            )));
        }
    }
    let containment = [
        votes[0].iter().sum::<usize>() - votes[0][label_index(labels[0])],
        votes[1].iter().sum::<usize>() - votes[1][label_index(labels[1])],
    ];
    let _ = ell;
    Ok(SubdomainReport {
        upper_is: labels[0],
        purity,
        containment_violations: containment,
        min_separation_ratio: min_sep,
        inscribed,
    })
}

fn label_index(c: Classification) -> usize {
    match c {
        Classification::In1 => 0,
        Classification::In2 => 1,
        Classification::Neither => 2,
    }
}

/// The iterated stopping forest under one starting cube.
#[derive(Debug, Clone)]
pub struct CoronaForest {
    pub root: u32,
    /// Cube ids per forest level, level zero holding the root alone.
    pub top: Vec<Vec<u32>>,
    /// Mass of all forest cubes relative to the root mass.
    pub packing_ratio: f64,
    /// Cubes whose window flatness exceeded epsilon.
    pub bad_count: usize,
}

/// Iterate the stopping construction: flat cubes spawn the children of
/// their in-cube stop family, non-flat cubes spawn their own children.
pub fn build_top(
    lattice: &DyadicLattice,
    sample: &BoundarySample,
    root: u32,
    params: &CoronaParams,
    depth: usize,
) -> Result<CoronaForest> {
    let root_gen = lattice.cube(root).generation;
    if root_gen + depth as i32 > lattice.j_max {
        return Err(Error::Config(format!(
            "depth {depth} exceeds the lattice below generation {root_gen}"
        )));
    }
    let mut top = vec![vec![root]];
    let mut bad_count = 0usize;
    for _ in 0..depth {
        let mut next_level = Vec::new();
        for &q in top.last().unwrap() {
            let c = lattice.cube(q);
            let xq = sample.points[c.center as usize];
            let bb = bbeta(sample, &xq, params.k1 * c.side(), params.multistarts)?;
            if bb.value > params.epsilon {
                bad_count += 1;
                next_level.extend_from_slice(&c.children);
            } else {
                let (t1, t2) = bb.plane.tangent_basis(sample.dim);
                let origin = xq - bb.plane.normal * bb.plane.signed_distance(&xq);
                let frame = Frame {
                    origin,
                    tangents: (t1, t2),
                    normal: bb.plane.normal,
                    dim: sample.dim,
                };
                let scan = stopping_scan(
                    lattice,
                    sample,
                    q,
                    &bb.plane,
                    &frame,
                    10.0 * c.side(),
                    frame.height(&xq),
                    params,
                )?;
                for entry in &scan.stop {
                    // only stop cubes inside the root of this tree spawn
                    let sc = lattice.cube(entry.cube);
                    if sc.generation < c.generation {
                        continue;
                    }
                    let anc = lattice.cube_of_point_at(
                        lattice.points_of(entry.cube)[0] as usize,
                        c.generation,
                    );
                    if anc != q {
                        continue;
                    }
                    next_level.extend_from_slice(&sc.children);
                }
            }
        }
        next_level.sort_unstable();
        next_level.dedup();
        if next_level.is_empty() {
            break;
        }
        top.push(next_level);
    }
    let root_mass = lattice.cube(root).mass;
    let packing: f64 = top
        .iter()
        .flatten()
        .map(|&q| lattice.cube(q).mass)
        .sum::<f64>()
        / root_mass;
    Ok(CoronaForest {
        root,
        top,
        packing_ratio: packing,
        bad_count,
    })
}

#[derive(Debug, Clone)]
pub struct PackingTerms {
    pub sigma_root: f64,
    pub z_mass: f64,
    pub bad_stop_mass: f64,
    pub beta1_sum: f64,
    /// Smallest constant making `sigma(Q) <= 2 z + 2 bad + C3 sum` hold.
    pub implied_c3: f64,
}

/// Evaluate the mass-accounting inequality of one tree record.
pub fn lempack1_report(
    record: &TreeRecord,
    lattice: &DyadicLattice,
    sample: &BoundarySample,
    params: &CoronaParams,
) -> Result<PackingTerms> {
    let rc = lattice.cube(record.root);
    let sigma_root = rc.mass;
    let z_mass: f64 = record
        .z_set
        .iter()
        .map(|&p| sample.weights[p as usize])
        .sum();
    let mut bad_stop_mass = 0.0;
    for e in &record.stop {
        if e.reason == StopReason::NotFlat {
            bad_stop_mass += lattice.cube(e.cube).mass;
        }
    }
    let mut beta1_sum = 0.0;
    for &q in &record.tree {
        let c = lattice.cube(q);
        let xq = sample.points[c.center as usize];
        let b1 = beta(sample, &xq, params.k1 * c.side(), 1, false)?.value;
        beta1_sum += b1 * b1 * c.mass;
    }
    let residual = sigma_root - 2.0 * z_mass - 2.0 * bad_stop_mass;
    let implied_c3 = if residual <= 0.0 {
        0.0
    } else if beta1_sum > 0.0 {
        residual / beta1_sum
    } else {
        f64::INFINITY
    };
    Ok(PackingTerms {
        sigma_root,
        z_mass,
        bad_stop_mass,
        beta1_sum,
        implied_c3,
    })
}

pub fn corona_csv_header() -> &'static str {
    "cube,bbeta_k1,plane_angle,stop_count,tree_count,z_mass,packing_contribution\n"
}

pub fn corona_csv_row(
    out: &mut String,
    record: &TreeRecord,
    lattice: &DyadicLattice,
    sample: &BoundarySample,
    packing_contribution: f64,
) {
    let z_mass: f64 = record
        .z_set
        .iter()
        .map(|&p| sample.weights[p as usize])
        .sum();
    let angle = record.plane.normal.y.atan2(record.plane.normal.x);
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{}",
        record.root,
        record.bbeta_root,
        angle,
        record.stop.len(),
        record.tree.len(),
        z_mass,
        packing_contribution
    );
    let _ = lattice;
    let _ = sample;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::sample_boundary;
    use crate::domain::{make_builtin, Descriptor};
    use crate::lattice::build_lattice;

    fn line_pair() -> DomainPair {
        make_builtin(Descriptor::HalfSpace {
            dim: 2,
            normal: Point::new(0.0, 1.0, 0.0),
            anchor: Point::zeros(),
        })
        .unwrap()
    }

    fn mid_cube(lattice: &DyadicLattice, sample: &BoundarySample, gen_offset: usize) -> u32 {
        // a cube near the window center at the requested generation
        let gen = &lattice.generations[gen_offset];
        *gen.iter()
            .min_by(|&&a, &&b| {
                let pa = sample.points[lattice.cube(a).center as usize].norm();
                let pb = sample.points[lattice.cube(b).center as usize].norm();
                pa.total_cmp(&pb)
            })
            .unwrap()
    }

    #[test]
    fn line_stopping_only_at_the_cylinder() {
        let pair = line_pair();
        let s = sample_boundary(&pair, 0.004, 3).unwrap();
        let lattice = build_lattice(&s, 5).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 4);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        assert!(record.bbeta_root <= params.epsilon);
        for e in &record.stop {
            assert_eq!(e.reason, StopReason::OutsideCylinder, "cube {}", e.cube);
        }
        assert!(!record.tree.is_empty());
    }

    #[test]
    fn tree_stop_partition_is_exact() {
        // every cube in the window is in the tree xor below a stop cube
        let pair = line_pair();
        let s = sample_boundary(&pair, 0.008, 3).unwrap();
        let lattice = build_lattice(&s, 4).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 3);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        let reach = (params.k1 - 1.0) * lattice.cube(root).side();
        let in_tree: std::collections::HashSet<u32> = record.tree.iter().cloned().collect();
        let stops: std::collections::HashSet<u32> =
            record.stop.iter().map(|e| e.cube).collect();
        for c in &lattice.cubes {
            if !cube_within_dilation(&lattice, &s, root, c.id, reach) {
                continue;
            }
            // is some ancestor (or itself) a stop cube?
            let mut anc = Some(c.id);
            let mut below_stop = false;
            let mut strictly = false;
            while let Some(a) = anc {
                if stops.contains(&a) {
                    below_stop = true;
                    strictly = a != c.id;
                    break;
                }
                anc = lattice.cube(a).parent;
            }
            let in_t = in_tree.contains(&c.id);
            // cubes whose ancestors leave the window are neither
            if in_t {
                assert!(!strictly, "tree cube {} sits below a stop cube", c.id);
            }
            if below_stop && !strictly {
                assert!(!in_t, "stop cube {} double-booked in tree", c.id);
            }
        }
    }

    #[test]
    fn d_q_bounded_by_witness_cube() {
        let pair = line_pair();
        let s = sample_boundary(&pair, 0.004, 3).unwrap();
        let lattice = build_lattice(&s, 5).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 4);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        for &q in record.tree.iter().step_by(7) {
            let c = lattice.cube(q);
            for &p in lattice.points_of(q).iter().take(3) {
                let x = s.points[p as usize];
                let d = d_q(&record, &lattice, &s, &x);
                assert!(
                    d <= c.diam_bound() + 1e-12,
                    "d_Q {d} above witness diameter {}",
                    c.diam_bound()
                );
            }
        }
    }

    #[test]
    fn d_q_is_one_lipschitz() {
        let pair = line_pair();
        let s = sample_boundary(&pair, 0.008, 3).unwrap();
        let lattice = build_lattice(&s, 4).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 3);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let a = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
            let b = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
            let da = d_q(&record, &lattice, &s, &a);
            let db = d_q(&record, &lattice, &s, &b);
            assert!((da - db).abs() <= (a - b).norm() + 1e-9);
        }
    }

    #[test]
    fn line_d_q_tracks_distance_to_line() {
        let pair = line_pair();
        let s = sample_boundary(&pair, 0.004, 3).unwrap();
        let lattice = build_lattice(&s, 5).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 4);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        let finest = lattice
            .generations
            .last()
            .unwrap()
            .iter()
            .map(|&q| lattice.cube(q).diam_bound())
            .fold(0.0f64, f64::max);
        for &(x, y) in &[(0.0, 0.3), (0.1, -0.2), (-0.2, 0.05), (0.05, 0.0)] {
            let p = Point::new(x, y, 0.0);
            let d = d_q(&record, &lattice, &s, &p);
            let reference = y.abs() + finest;
            assert!(
                d <= 2.0 * reference && d >= y.abs() - 1e-9,
                "d_Q {d} vs dist {} + finest {finest}",
                y.abs()
            );
        }
    }

    #[test]
    fn d_fiber_sandwich_against_d_q() {
        let pair = line_pair();
        let s = sample_boundary(&pair, 0.004, 3).unwrap();
        let lattice = build_lattice(&s, 5).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 4);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        let rc = lattice.cube(root);
        let xq = s.points[rc.center as usize];
        let mut c2 = 0.0f64;
        let mut checked = 0;
        for &p in s.index().indices_in_ball(&xq, 10.0 * rc.side()).iter().step_by(3) {
            let pt = s.points[p];
            let dq = d_q(&record, &lattice, &s, &pt);
            let dproj = d_q_projected(&record, record.frame.tangential(&pt));
            assert!(
                dproj <= dq + record.grid.step + 1e-9,
                "projected {dproj} above pointwise {dq}"
            );
            if dproj > 1e-12 {
                c2 = c2.max(dq / dproj);
            }
            checked += 1;
        }
        assert!(checked > 100);
        assert!(c2.is_finite() && c2 >= 1.0);
    }

    #[test]
    fn graph_flat_on_line_and_recovers_gentle_graph() {
        let pair = line_pair();
        let h = 0.004;
        let s = sample_boundary(&pair, h, 3).unwrap();
        let lattice = build_lattice(&s, 5).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 4);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        for j in 0..record.grid.n2 {
            for i in 0..record.grid.n1 {
                let a = record.heights[record.grid.idx(i, j)];
                // heights are in the root frame; the line itself is flat
                assert!(
                    (a - record.center_height).abs() <= 2.0 * h + 2.0 * record.bbeta_root,
                    "graph height {a}"
                );
            }
        }

        let gentle = make_builtin(Descriptor::Graph {
            slope: 0.05,
            seed: 21,
            amps: vec![],
            freqs: vec![],
            phases: vec![],
        })
        .unwrap();
        let gs = sample_boundary(&gentle, h, 5).unwrap();
        let gl = build_lattice(&gs, 5).unwrap();
        let groot = mid_cube(&gl, &gs, 4);
        let grec = build_tree_record(&gl, &gs, groot, &params).unwrap();
        // compare the recovered graph against the sample heights on
        // occupied fibers
        let rc = gl.cube(groot);
        let xq = gs.points[rc.center as usize];
        let mut sup: f64 = 0.0;
        gs.index().for_each_in_ball(&xq, 5.0 * rc.side(), |p| {
            let pt = gs.points[p];
            let srec = grec.frame.tangential(&pt);
            let a = graph_height_at(&grec, srec);
            sup = sup.max((grec.frame.height(&pt) - a).abs());
        });
        assert!(sup <= 3.0 * h + 2.0 * grec.grid.step, "graph defect {sup}");
    }

    #[test]
    fn slope_clamp_enforced_exactly() {
        let pair = make_builtin(Descriptor::BumpLine {
            height: 0.05,
            width: 0.12,
            center: 0.0,
        })
        .unwrap();
        let s = sample_boundary(&pair, 0.004, 3).unwrap();
        let lattice = build_lattice(&s, 5).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 3);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        let bound = 2.0 * params.delta * record.grid.step + 1e-12;
        for i in 1..record.grid.n1 {
            let a = record.heights[record.grid.idx(i - 1, 0)];
            let b = record.heights[record.grid.idx(i, 0)];
            assert!((a - b).abs() <= bound, "slope violation at node {i}");
        }
    }

    #[test]
    fn bump_fires_stopping_at_its_scale() {
        // bump of height 0.3 * side at the scale of generation 4 cubes
        let side = 2.0f64.powi(-4);
        let pair = make_builtin(Descriptor::BumpLine {
            height: 0.3 * side,
            width: side,
            center: 0.3,
        })
        .unwrap();
        let s = sample_boundary(&pair, 0.002, 3).unwrap();
        let lattice = build_lattice(&s, 6).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 2);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        let flat_stops = record
            .stop
            .iter()
            .filter(|e| e.reason != StopReason::OutsideCylinder)
            .count();
        assert!(flat_stops > 0, "bump must trigger beta or tilt stops");
        // none of the flat/tilt stop cubes are far from the bump
        for e in &record.stop {
            if e.reason == StopReason::OutsideCylinder {
                continue;
            }
            let c = lattice.cube(e.cube);
            let span = params.k1 * c.side() + c.diam_bound();
            let xq = s.points[c.center as usize];
            assert!(
                (xq.x - 0.3).abs() <= span + side,
                "stop cube at {} too far from the bump",
                xq.x
            );
        }
    }

    #[test]
    fn subdomains_half_space_pure_and_separated() {
        let pair = line_pair();
        let s = sample_boundary(&pair, 0.004, 3).unwrap();
        let lattice = build_lattice(&s, 5).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 4);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        let rep = subdomains(&record, &lattice, &s, &pair, &params).unwrap();
        assert_eq!(rep.purity, [1.0, 1.0]);
        assert_eq!(rep.containment_violations, [0, 0]);
        assert!(rep.upper_is == Classification::In1 || rep.upper_is == Classification::In2);
        let ell = lattice.cube(root).side();
        for side in 0..2 {
            assert!(
                rep.inscribed[side] >= params.delta * ell / 4.0,
                "no corkscrew ball on side {side}: {}",
                rep.inscribed[side]
            );
        }
    }

    #[test]
    fn subdomains_graph_pair_zero_violations() {
        let pair = make_builtin(Descriptor::Graph {
            slope: 0.05,
            seed: 21,
            amps: vec![],
            freqs: vec![],
            phases: vec![],
        })
        .unwrap();
        let s = sample_boundary(&pair, 0.004, 5).unwrap();
        let lattice = build_lattice(&s, 5).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 4);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        let rep = subdomains(&record, &lattice, &s, &pair, &params).unwrap();
        assert_eq!(rep.containment_violations, [0, 0]);
        assert!(rep.min_separation_ratio >= 0.5, "sep {}", rep.min_separation_ratio);
    }

    #[test]
    fn top_forest_on_line_is_shallow() {
        let pair = line_pair();
        let s = sample_boundary(&pair, 0.002, 3).unwrap();
        let lattice = build_lattice(&s, 6).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 4);
        let depth = (lattice.j_max - lattice.cube(root).generation) as usize;
        let forest = build_top(&lattice, &s, root, &params, depth).unwrap();
        assert!(forest.packing_ratio <= 3.0, "packing {}", forest.packing_ratio);
        assert_eq!(forest.bad_count, 0);
    }

    #[test]
    fn top_forest_on_cantor_is_full() {
        let pair = make_builtin(Descriptor::Cantor { generation: 5 }).unwrap();
        let h = 0.25f64.powi(5);
        let s = sample_boundary(&pair, h, 3).unwrap();
        let lattice = build_lattice(&s, 6).unwrap();
        let params = CoronaParams::default();
        let root = lattice.generations[0][0];
        let depth = 4usize;
        let forest = build_top(&lattice, &s, root, &params, depth).unwrap();
        // every window stays rough, so each level is the full set of
        // descendants of the root
        for (k, level) in forest.top.iter().enumerate() {
            let gen = lattice.cube(root).generation + k as i32;
            let expect: Vec<u32> = lattice.generations[(gen - lattice.j0) as usize]
                .iter()
                .cloned()
                .filter(|&q| {
                    lattice.cube_of_point_at(
                        lattice.points_of(q)[0] as usize,
                        lattice.cube(root).generation,
                    ) == root
                })
                .collect();
            assert_eq!(level.len(), expect.len(), "level {k}");
        }
        assert!(forest.packing_ratio >= depth as f64 * 0.9);
    }

    #[test]
    fn lempack1_line_dominated_by_z() {
        let pair = line_pair();
        let s = sample_boundary(&pair, 0.004, 3).unwrap();
        let lattice = build_lattice(&s, 5).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 4);
        let record = build_tree_record(&lattice, &s, root, &params).unwrap();
        let terms = lempack1_report(&record, &lattice, &s, &params).unwrap();
        assert!(terms.z_mass >= 0.5 * terms.sigma_root, "z {}", terms.z_mass);
        assert_eq!(terms.bad_stop_mass, 0.0);
        assert!(2.0 * terms.z_mass + 2.0 * terms.bad_stop_mass + terms.implied_c3.min(1e9) * terms.beta1_sum >= terms.sigma_root * 0.999);
    }

    #[test]
    fn determinism_of_records() {
        let pair = line_pair();
        let s = sample_boundary(&pair, 0.008, 3).unwrap();
        let lattice = build_lattice(&s, 4).unwrap();
        let params = CoronaParams::default();
        let root = mid_cube(&lattice, &s, 3);
        let a = build_tree_record(&lattice, &s, root, &params).unwrap();
        let b = build_tree_record(&lattice, &s, root, &params).unwrap();
        assert_eq!(a.tree, b.tree);
        assert_eq!(a.heights, b.heights);
        assert_eq!(a.z_set, b.z_set);
    }
}
