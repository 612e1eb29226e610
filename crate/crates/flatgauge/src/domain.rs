//! Disjoint open pairs and their point classification oracles.
//!
//! The catalog covers the model geometries: the exact half-space pair, cone
//! and sector pairs (conical singularities), the strip pair (boundaries that
//! are not each other's), disk/complement, random Lipschitz graphs, and the
//! four-corner Cantor set with empty second side. Ingested polylines and
//! triangle meshes classify by ray parity.

use crate::error::{Error, Result};
use crate::geo::{Aabb, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    In1,
    In2,
    Neither,
}

/// Tagged analytic parameters for the built-in pairs.
#[derive(Debug, Clone)]
pub enum Descriptor {
    /// `O1 = {(y-anchor).n > 0}`, `O2 = {(y-anchor).n < 0}`.
    HalfSpace { dim: usize, normal: Point, anchor: Point },
    /// Planar pair `O1 = {y > |x| tan g}`, `O2 = {y < -|x| tan g}`.
    Cone { gamma: f64 },
    /// Planar angular sectors around the origin, `O_i = {phi in (a_i, b_i)}`.
    Sector { a1: f64, b1: f64, a2: f64, b2: f64 },
    /// `O1 = {y > 0}`, `O2 = {y < -w}`.
    Strip { width: f64 },
    /// Open disk of radius `r` and its exterior.
    Disk { radius: f64 },
    /// `O1` above and `O2` below a random Lipschitz graph `y = A(x)` with
    /// `sup |A'| <= slope` exactly (sine series with rescaled coefficients).
    Graph { slope: f64, seed: u64, amps: Vec<f64>, freqs: Vec<f64>, phases: Vec<f64> },
    /// Four-corner Cantor set `E_m`; `O1` is its complement, `O2` empty.
    Cantor { generation: u32 },
    /// Flat line with one triangular bump: `O1` above, `O2` below the graph
    /// `y = height * max(0, 1 - |x - center| / width)`.
    BumpLine { height: f64, width: f64, center: f64 },
    /// Half-space pair with a closed cone bitten out of the first side:
    /// `O1 = {p.n > 0} minus {angle(p, axis) <= aperture}`, `O2 = {p.n < 0}`.
    BittenHalfSpace { normal: Point, bite_axis: Point, bite_aperture: f64 },
    /// Closed planar polyline; inside (ray parity) is `O1`, outside `O2`.
    Polyline { vertices: Vec<Point> },
    /// Closed triangle mesh; inside (ray parity) is `O1`, outside `O2`.
    Mesh { vertices: Vec<Point>, faces: Vec<[usize; 3]> },
}

/// A pair of disjoint open sets with a deterministic classification oracle.
#[derive(Debug, Clone)]
pub struct DomainPair {
    pub ambient_dim: usize,
    pub bbox: Aabb,
    pub descriptor: Descriptor,
}

const GRAPH_MODES: usize = 4;

/// Build a catalog pair, validating parameter ranges.
pub fn make_builtin(descriptor: Descriptor) -> Result<DomainPair> {
    use Descriptor::*;
    let pair = match &descriptor {
        HalfSpace { dim, normal, .. } => {
            if !(*dim == 2 || *dim == 3) {
                return Err(Error::Config(format!("ambient dim must be 2 or 3, got {dim}")));
            }
            if normal.norm() == 0.0 || (*dim == 2 && normal.z != 0.0) {
                return Err(Error::Config("invalid half-space normal".into()));
            }
            let dim = *dim;
            DomainPair {
                ambient_dim: dim,
                bbox: cube_bbox(4.0, dim),
                descriptor,
            }
        }
        Cone { gamma } => {
            if !(*gamma > 0.0 && *gamma < std::f64::consts::FRAC_PI_2) {
                return Err(Error::Config(format!("cone half-gap {gamma} outside (0, pi/2)")));
            }
            DomainPair { ambient_dim: 2, bbox: cube_bbox(4.0, 2), descriptor }
        }
        Sector { a1, b1, a2, b2 } => {
            let tau = std::f64::consts::TAU;
            let ok = *a1 < *b1 && *a2 < *b2 && b1 - a1 < tau && b2 - a2 < tau;
            if !ok {
                return Err(Error::Config("sector angles must be nonempty proper ranges".into()));
            }
            DomainPair { ambient_dim: 2, bbox: cube_bbox(4.0, 2), descriptor }
        }
        Strip { width } => {
            if !(*width > 0.0) {
                return Err(Error::Config(format!("strip width {width} must be positive")));
            }
            DomainPair { ambient_dim: 2, bbox: cube_bbox(4.0, 2), descriptor }
        }
        Disk { radius } => {
            if !(*radius > 0.0) {
                return Err(Error::Config(format!("disk radius {radius} must be positive")));
            }
            let r = *radius;
            DomainPair { ambient_dim: 2, bbox: cube_bbox(2.0 * r, 2), descriptor }
        }
        Graph { slope, seed, .. } => {
            if !(*slope > 0.0 && *slope < 1.0) {
                return Err(Error::Config(format!("graph slope {slope} outside (0, 1)")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut amps = Vec::with_capacity(GRAPH_MODES);
            let mut freqs = Vec::with_capacity(GRAPH_MODES);
            let mut phases = Vec::with_capacity(GRAPH_MODES);
            for k in 0..GRAPH_MODES {
                amps.push(rng.gen_range(0.3..1.0));
                freqs.push((k as f64 + 1.0) * rng.gen_range(0.8..1.6));
                phases.push(rng.gen_range(0.0..std::f64::consts::TAU));
            }
            // Rescale so sup |A'| <= sum |a_k f_k| equals the requested slope.
            let deriv_bound: f64 = amps.iter().zip(&freqs).map(|(a, f)| a * f).sum();
            let scale = slope / deriv_bound;
            for a in &mut amps {
                *a *= scale;
            }
            DomainPair {
                ambient_dim: 2,
                bbox: cube_bbox(4.0, 2),
                descriptor: Graph {
                    slope: *slope,
                    seed: *seed,
                    amps,
                    freqs,
                    phases,
                },
            }
        }
        BumpLine { height, width, .. } => {
            if !(*width > 0.0) || height.abs() >= *width {
                return Err(Error::Config(
                    "bump needs positive width and |height| < width".into(),
                ));
            }
            DomainPair { ambient_dim: 2, bbox: cube_bbox(4.0, 2), descriptor }
        }
        BittenHalfSpace { normal, bite_axis, bite_aperture } => {
            if normal.norm() == 0.0 || bite_axis.norm() == 0.0 {
                return Err(Error::Config("invalid bitten half-space axes".into()));
            }
            if !(*bite_aperture > 0.0 && *bite_aperture < std::f64::consts::FRAC_PI_2) {
                return Err(Error::Config(format!(
                    "bite aperture {bite_aperture} outside (0, pi/2)"
                )));
            }
            DomainPair {
                ambient_dim: 3,
                bbox: cube_bbox(4.0, 3),
                descriptor: BittenHalfSpace {
                    normal: normal.normalize(),
                    bite_axis: bite_axis.normalize(),
                    bite_aperture: *bite_aperture,
                },
            }
        }
        Cantor { generation } => {
            if *generation > 10 {
                return Err(Error::Config(format!("cantor generation {generation} exceeds 10")));
            }
            DomainPair {
                ambient_dim: 2,
                bbox: Aabb {
                    min: Point::new(-0.5, -0.5, 0.0),
                    max: Point::new(1.5, 1.5, 0.0),
                },
                descriptor,
            }
        }
        Polyline { vertices } => {
            if vertices.len() < 3 {
                return Err(Error::Config("polyline needs at least 3 vertices".into()));
            }
            let bbox = inflate(Aabb::of_points(vertices.iter()), 0.5);
            DomainPair { ambient_dim: 2, bbox, descriptor }
        }
        Mesh { vertices, faces } => {
            if vertices.is_empty() || faces.is_empty() {
                return Err(Error::Config("mesh needs vertices and faces".into()));
            }
            for f in faces {
                if f.iter().any(|&i| i >= vertices.len()) {
                    return Err(Error::Config("mesh face index out of range".into()));
                }
            }
            let bbox = inflate(Aabb::of_points(vertices.iter()), 0.5);
            DomainPair { ambient_dim: 3, bbox, descriptor }
        }
    };
    Ok(pair)
}

fn cube_bbox(half: f64, dim: usize) -> Aabb {
    let z = if dim == 3 { half } else { 0.0 };
    Aabb {
        min: Point::new(-half, -half, -z),
        max: Point::new(half, half, z),
    }
}

fn inflate(mut b: Aabb, pad: f64) -> Aabb {
    let p = Point::new(pad, pad, pad);
    b.min -= p;
    b.max += p;
    b
}

impl DomainPair {
    /// Deterministic side oracle. Points exactly on a built-in boundary are
    /// `Neither` (the sets are open).
    pub fn classify(&self, p: &Point) -> Classification {
        use Classification::*;
        use Descriptor::*;
        match &self.descriptor {
            HalfSpace { normal, anchor, .. } => {
                let s = (p - anchor).dot(normal);
                if s > 0.0 {
                    In1
                } else if s < 0.0 {
                    In2
                } else {
                    Neither
                }
            }
            Cone { gamma } => {
                let t = p.x.abs() * gamma.tan();
                if p.y > t {
                    In1
                } else if p.y < -t {
                    In2
                } else {
                    Neither
                }
            }
            Sector { a1, b1, a2, b2 } => {
                if p.x == 0.0 && p.y == 0.0 {
                    return Neither;
                }
                let phi = p.y.atan2(p.x);
                if angle_in_open(phi, *a1, *b1) {
                    In1
                } else if angle_in_open(phi, *a2, *b2) {
                    In2
                } else {
                    Neither
                }
            }
            Strip { width } => {
                if p.y > 0.0 {
                    In1
                } else if p.y < -width {
                    In2
                } else {
                    Neither
                }
            }
            Disk { radius } => {
                let r = p.xy().norm();
                if r < *radius {
                    In1
                } else if r > *radius {
                    In2
                } else {
                    Neither
                }
            }
            Graph { .. } => {
                let a = self.graph_height(p.x);
                if p.y > a {
                    In1
                } else if p.y < a {
                    In2
                } else {
                    Neither
                }
            }
            Cantor { generation } => {
                if cantor_contains(p, *generation) {
                    Neither
                } else {
                    In1
                }
            }
            BumpLine { height, width, center } => {
                let f = height * (1.0 - (p.x - center).abs() / width).max(0.0);
                if p.y > f {
                    In1
                } else if p.y < f {
                    In2
                } else {
                    Neither
                }
            }
            BittenHalfSpace { normal, bite_axis, bite_aperture } => {
                let s = p.dot(normal);
                if s < 0.0 {
                    In2
                } else if s > 0.0 {
                    let n = p.norm();
                    if n > 0.0 && p.dot(bite_axis) >= n * bite_aperture.cos() {
                        Neither
                    } else {
                        In1
                    }
                } else {
                    Neither
                }
            }
            Polyline { vertices } => {
                match polyline_parity(p, vertices) {
                    Some(true) => In1,
                    Some(false) => In2,
                    None => Neither,
                }
            }
            Mesh { vertices, faces } => {
                match mesh_parity(p, vertices, faces) {
                    Some(true) => In1,
                    Some(false) => In2,
                    None => Neither,
                }
            }
        }
    }

    /// Height of the graph built-in at abscissa `x`. Panics for other kinds.
    pub fn graph_height(&self, x: f64) -> f64 {
        match &self.descriptor {
            Descriptor::Graph { amps, freqs, phases, .. } => amps
                .iter()
                .zip(freqs)
                .zip(phases)
                .map(|((a, f), ph)| a * (f * x + ph).sin())
                .sum(),
            _ => panic!("graph_height on non-graph descriptor"),
        }
    }
}

fn angle_in_open(phi: f64, a: f64, b: f64) -> bool {
    // Compare on the circle: lift phi by multiples of 2*pi into [a, a+2pi).
    let tau = std::f64::consts::TAU;
    let lifted = a + (phi - a).rem_euclid(tau);
    lifted > a && lifted < b
}

/// Membership in the closed generation-`m` four-corner Cantor set built on
/// the unit square: each level keeps the four corner squares of quarter side.
fn cantor_contains(p: &Point, generation: u32) -> bool {
    let (mut x, mut y) = (p.x, p.y);
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return false;
    }
    for _ in 0..generation {
        // Which corner square of the current unit cell, if any.
        let cx = if x <= 0.25 {
            0.0
        } else if x >= 0.75 {
            0.75
        } else {
            return false;
        };
        let cy = if y <= 0.25 {
            0.0
        } else if y >= 0.75 {
            0.75
        } else {
            return false;
        };
        x = (x - cx) * 4.0;
        y = (y - cy) * 4.0;
    }
    true
}

/// Ray-parity test against a closed polyline. Returns `None` within a tiny
/// tolerance of an edge.
fn polyline_parity(p: &Point, vertices: &[Point]) -> Option<bool> {
    let eps = 1e-12;
    let n = vertices.len();
    let mut crossings = 0usize;
    for i in 0..n {
        let a = &vertices[i];
        let b = &vertices[(i + 1) % n];
        // Distance to segment for the boundary tolerance.
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        if (p - (a + ab * t)).norm() < eps {
            return None;
        }
        // Horizontal ray toward +x, half-open rule on y.
        if (a.y > p.y) != (b.y > p.y) {
            let xi = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if xi > p.x {
                crossings += 1;
            }
        }
    }
    Some(crossings % 2 == 1)
}

fn mesh_parity(p: &Point, vertices: &[Point], faces: &[[usize; 3]]) -> Option<bool> {
    // Slightly irrational direction to dodge edge-on hits.
    let dir = Point::new(0.531_640_981, 0.316_227_766, 0.787_518_708).normalize();
    let mut crossings = 0usize;
    for f in faces {
        let (a, b, c) = (&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
        match ray_triangle(p, &dir, a, b, c) {
            RayHit::OnSurface => return None,
            RayHit::Cross => crossings += 1,
            RayHit::Miss => {}
        }
    }
    Some(crossings % 2 == 1)
}

enum RayHit {
    Miss,
    Cross,
    OnSurface,
}

fn ray_triangle(orig: &Point, dir: &Point, a: &Point, b: &Point, c: &Point) -> RayHit {
    let eps = 1e-12;
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < eps {
        return RayHit::Miss;
    }
    let inv = 1.0 / det;
    let s = orig - a;
    let u = s.dot(&h) * inv;
    if !(0.0..=1.0).contains(&u) {
        return RayHit::Miss;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return RayHit::Miss;
    }
    let t = e2.dot(&q) * inv;
    if t.abs() < eps {
        return RayHit::OnSurface;
    }
    if t > 0.0 {
        RayHit::Cross
    } else {
        RayHit::Miss
    }
}

/// Parse an ASCII polyline, one `x y` pair per line. Blank lines and `#`
/// comments are skipped.
pub fn parse_polyline(text: &str) -> Result<DomainPair> {
    let mut vertices = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(xs), Some(ys)) = (it.next(), it.next()) else {
            return Err(Error::Config(format!("polyline line {}: expected 'x y'", lineno + 1)));
        };
        let x: f64 = xs
            .parse()
            .map_err(|_| Error::Config(format!("polyline line {}: bad x", lineno + 1)))?;
        let y: f64 = ys
            .parse()
            .map_err(|_| Error::Config(format!("polyline line {}: bad y", lineno + 1)))?;
        vertices.push(Point::new(x, y, 0.0));
    }
    make_builtin(Descriptor::Polyline { vertices })
}

/// Parse the OBJ subset: `v x y z` and triangular `f i j k` (1-based).
pub fn parse_obj(text: &str) -> Result<DomainPair> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it.take(3).filter_map(|s| s.parse().ok()).collect();
                if coords.len() != 3 {
                    return Err(Error::Config(format!("obj line {}: bad vertex", lineno + 1)));
                }
                vertices.push(Point::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .take(3)
                    .filter_map(|s| s.split('/').next().and_then(|t| t.parse::<usize>().ok()))
                    .collect();
                if idx.len() != 3 || idx.iter().any(|&i| i == 0) {
                    return Err(Error::Config(format!("obj line {}: bad face", lineno + 1)));
                }
                faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    make_builtin(Descriptor::Mesh { vertices, faces })
}

/// Named seven-domain catalog used by the verification experiments.
pub fn catalog() -> Vec<(&'static str, DomainPair)> {
    vec![
        (
            "half-space",
            make_builtin(Descriptor::HalfSpace {
                dim: 2,
                normal: Point::new(0.0, 1.0, 0.0),
                anchor: Point::zeros(),
            })
            .unwrap(),
        ),
        ("cone-0.1", make_builtin(Descriptor::Cone { gamma: 0.1 }).unwrap()),
        ("cone-0.2", make_builtin(Descriptor::Cone { gamma: 0.2 }).unwrap()),
        ("strip-0.5", make_builtin(Descriptor::Strip { width: 0.5 }).unwrap()),
        ("disk", make_builtin(Descriptor::Disk { radius: 1.0 }).unwrap()),
        (
            "graph-0.3",
            make_builtin(Descriptor::Graph {
                slope: 0.3,
                seed: 11,
                amps: vec![],
                freqs: vec![],
                phases: vec![],
            })
            .unwrap(),
        ),
        ("cantor-4", make_builtin(Descriptor::Cantor { generation: 4 }).unwrap()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use Classification::*;

    fn half_space_2d() -> DomainPair {
        make_builtin(Descriptor::HalfSpace {
            dim: 2,
            normal: Point::new(0.0, 1.0, 0.0),
            anchor: Point::zeros(),
        })
        .unwrap()
    }

    #[test]
    fn half_space_classifies_defining_inequality() {
        let pair = half_space_2d();
        assert_eq!(pair.classify(&Point::new(0.0, 1.0, 0.0)), In1);
        assert_eq!(pair.classify(&Point::new(3.0, -0.1, 0.0)), In2);
        assert_eq!(pair.classify(&Point::new(0.5, 0.0, 0.0)), Neither);
    }

    #[test]
    fn strip_gap_is_neither() {
        let pair = make_builtin(Descriptor::Strip { width: 0.5 }).unwrap();
        assert_eq!(pair.classify(&Point::new(0.0, -0.25, 0.0)), Neither);
        assert_eq!(pair.classify(&Point::new(0.0, 0.25, 0.0)), In1);
        assert_eq!(pair.classify(&Point::new(0.0, -0.75, 0.0)), In2);
    }

    #[test]
    fn cone_axis_point_is_neither() {
        let pair = make_builtin(Descriptor::Cone { gamma: 0.2 }).unwrap();
        assert_eq!(pair.classify(&Point::new(1.0, 0.0, 0.0)), Neither);
        assert_eq!(pair.classify(&Point::new(0.0, 1.0, 0.0)), In1);
        assert_eq!(pair.classify(&Point::new(0.0, -1.0, 0.0)), In2);
    }

    #[test]
    fn cantor_second_side_is_empty_and_set_is_neither() {
        let pair = make_builtin(Descriptor::Cantor { generation: 3 }).unwrap();
        assert_eq!(pair.classify(&Point::new(0.01, 0.01, 0.0)), Neither);
        assert_eq!(pair.classify(&Point::new(0.5, 0.5, 0.0)), In1);
        // (0.2, 0.2) survives three corner refinements, (0.3, 0.1) does not
        assert_eq!(pair.classify(&Point::new(0.2, 0.2, 0.0)), Neither);
        assert_eq!(pair.classify(&Point::new(0.3, 0.1, 0.0)), In1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let p = Point::new(rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5), 0.0);
            assert_ne!(pair.classify(&p), In2);
        }
    }

    #[test]
    fn disjointness_over_random_bbox_points() {
        // classify returns a single label, so In1 and In2 cannot overlap;
        // here we additionally spot-check the analytic set formulas.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (_, pair) in catalog() {
            for _ in 0..20_000 {
                let p = Point::new(
                    rng.gen_range(pair.bbox.min.x..pair.bbox.max.x),
                    rng.gen_range(pair.bbox.min.y..pair.bbox.max.y),
                    0.0,
                );
                let c = pair.classify(&p);
                let again = pair.classify(&p);
                assert_eq!(c, again, "classification must be deterministic");
            }
        }
    }

    #[test]
    fn graph_slope_bound_is_exact() {
        let pair = make_builtin(Descriptor::Graph {
            slope: 0.3,
            seed: 4,
            amps: vec![],
            freqs: vec![],
            phases: vec![],
        })
        .unwrap();
        let mut max_slope: f64 = 0.0;
        let mut x = -4.0;
        while x < 4.0 {
            let d = (pair.graph_height(x + 5e-7) - pair.graph_height(x - 5e-7)) / 1e-6;
            max_slope = max_slope.max(d.abs());
            x += 1e-3;
        }
        assert!(max_slope <= 0.3 + 1e-6, "measured slope {max_slope}");
        assert!(max_slope > 0.05, "graph should not be flat");
    }

    #[test]
    fn polyline_square_parity() {
        let text = "0 0\n1 0\n1 1\n0 1\n";
        let pair = parse_polyline(text).unwrap();
        assert_eq!(pair.classify(&Point::new(0.5, 0.5, 0.0)), In1);
        assert_eq!(pair.classify(&Point::new(1.5, 0.5, 0.0)), In2);
        assert_eq!(pair.classify(&Point::new(0.5, 0.0, 0.0)), Neither);
    }

    #[test]
    fn obj_tetrahedron_parity() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\nf 1 2 4\nf 1 3 4\nf 2 3 4\n";
        let pair = parse_obj(text).unwrap();
        assert_eq!(pair.classify(&Point::new(0.1, 0.1, 0.1, )), In1);
        assert_eq!(pair.classify(&Point::new(2.0, 2.0, 2.0)), In2);
    }

    #[test]
    fn invalid_parameters_are_config_errors() {
        assert!(matches!(
            make_builtin(Descriptor::Cone { gamma: 2.0 }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_builtin(Descriptor::Strip { width: -1.0 }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_builtin(Descriptor::Cantor { generation: 11 }),
            Err(Error::Config(_))
        ));
    }
}
