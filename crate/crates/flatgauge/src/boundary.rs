//! Weighted point clouds approximating surface measure on the boundaries.

use crate::domain::{Descriptor, DomainPair};
use crate::error::{Error, Result};
use crate::geo::{Aabb, Point, PointIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Discrete surface measure: quasi-uniform points with patch weights.
#[derive(Debug, Clone)]
pub struct BoundarySample {
    pub dim: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub mesh_scale: f64,
    /// Estimated Ahlfors regularity envelope `(C_lower, C_upper)` of
    /// `mu(B(x,r)) / r^n` over probed locations and scales.
    pub adr: (f64, f64),
    index: PointIndex,
}

impl BoundarySample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn index(&self) -> &PointIndex {
        &self.index
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::of_points(self.points.iter())
    }

    pub fn mass_in_ball(&self, center: &Point, radius: f64) -> f64 {
        let mut m = 0.0;
        self.index
            .for_each_in_ball(center, radius, |i| m += self.weights[i]);
        m
    }

    pub fn from_parts(dim: usize, points: Vec<Point>, weights: Vec<f64>, h: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Geometry("empty boundary sample".into()));
        }
        let index = PointIndex::build(&points, (4.0 * h).max(1e-12));
        let mut s = Self {
            dim,
            points,
            weights,
            mesh_scale: h,
            adr: (0.0, 0.0),
            index,
        };
        s.adr = estimate_adr_constants(&s, 64);
        Ok(s)
    }
}

/// Sample `sigma` on the boundary of a pair at spacing `h`.
///
/// Curves are sampled by arc length, surfaces by area-weighted placement
/// with stratified jitter. Deterministic for a fixed seed.
pub fn sample_boundary(pair: &DomainPair, h: f64, seed: u64) -> Result<BoundarySample> {
    let diam = pair.bbox.diameter();
    if !(h > 0.0) || h >= diam / 10.0 {
        return Err(Error::Config(format!(
            "sampling scale h={h} outside (0, diam/10 = {})",
            diam / 10.0
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut weights = Vec::new();

    let add_segment = |a: Point, b: Point, rng: &mut ChaCha8Rng, points: &mut Vec<Point>, weights: &mut Vec<f64>| {
        let len = (b - a).norm();
        let count = (len / h).round().max(1.0) as usize;
        let w = len / count as f64;
        let dir = (b - a) / len;
        for k in 0..count {
            let jitter = rng.gen_range(-0.3..0.3);
            let t = (k as f64 + 0.5 + jitter) * w;
            points.push(a + dir * t);
            weights.push(w);
        }
    };

    match &pair.descriptor {
        Descriptor::HalfSpace { dim: 2, normal, anchor } => {
            let t = Point::new(-normal.y, normal.x, 0.0);
            add_segment(anchor - t * 4.0, anchor + t * 4.0, &mut rng, &mut points, &mut weights);
        }
        Descriptor::HalfSpace { dim: 3, normal, anchor } => {
            let seed_dir = if normal.x.abs() < 0.9 {
                Point::new(1.0, 0.0, 0.0)
            } else {
                Point::new(0.0, 1.0, 0.0)
            };
            let t1 = (seed_dir - normal * seed_dir.dot(normal)).normalize();
            let t2 = normal.cross(&t1);
            let half = 4.0;
            let count = (2.0 * half / h).round() as usize;
            let w = 2.0 * half / count as f64;
            for i in 0..count {
                for j in 0..count {
                    let u = -half + (i as f64 + 0.5 + rng.gen_range(-0.3..0.3)) * w;
                    let v = -half + (j as f64 + 0.5 + rng.gen_range(-0.3..0.3)) * w;
                    points.push(anchor + t1 * u + t2 * v);
                    weights.push(w * w);
                }
            }
        }
        Descriptor::HalfSpace { .. } => unreachable!("validated at construction"),
        Descriptor::BittenHalfSpace { normal, bite_axis, bite_aperture } => {
            // the bitten cone meets the separating plane only where the cone
            // does; sample the plane plus the cone surface inside the bbox
            let seed_dir = if normal.x.abs() < 0.9 {
                Point::new(1.0, 0.0, 0.0)
            } else {
                Point::new(0.0, 1.0, 0.0)
            };
            let t1 = (seed_dir - normal * seed_dir.dot(normal)).normalize();
            let t2 = normal.cross(&t1);
            let half = 4.0;
            let count = (2.0 * half / h).round() as usize;
            let w = 2.0 * half / count as f64;
            for i in 0..count {
                for j in 0..count {
                    let u = -half + (i as f64 + 0.5 + rng.gen_range(-0.3..0.3)) * w;
                    let v = -half + (j as f64 + 0.5 + rng.gen_range(-0.3..0.3)) * w;
                    let p = t1 * u + t2 * v;
                    // skip plane points swallowed by the bite cone
                    if p.norm() > 0.0
                        && p.dot(bite_axis) >= p.norm() * bite_aperture.cos()
                    {
                        continue;
                    }
                    points.push(p);
                    weights.push(w * w);
                }
            }
            // lateral cone surface out to the bbox radius
            let sin_a = bite_aperture.sin();
            let rings = ((half / h).round() as usize).max(1);
            for i in 0..rings {
                let rho = (i as f64 + 0.5) * half / rings as f64;
                let ring_r = rho * sin_a;
                let circ = std::f64::consts::TAU * ring_r;
                let m = ((circ / h).round() as usize).max(3);
                let dw = circ / m as f64 * (half / rings as f64);
                let a1 = (seed_dir - bite_axis * seed_dir.dot(bite_axis)).normalize();
                let a2 = bite_axis.cross(&a1);
                for k in 0..m {
                    let phi = (k as f64 + 0.5 + rng.gen_range(-0.3..0.3))
                        * std::f64::consts::TAU
                        / m as f64;
                    let p = bite_axis * (rho * bite_aperture.cos())
                        + (a1 * phi.cos() + a2 * phi.sin()) * ring_r;
                    if p.dot(normal) > 0.0 {
                        points.push(p);
                        weights.push(dw);
                    }
                }
            }
        }
        Descriptor::Cone { gamma } => {
            let l = 4.0 / gamma.cos();
            for ang in [*gamma, std::f64::consts::PI - gamma, -gamma, std::f64::consts::PI + gamma] {
                let dir = Point::new(ang.cos(), ang.sin(), 0.0);
                add_segment(Point::zeros(), dir * l, &mut rng, &mut points, &mut weights);
            }
        }
        Descriptor::Sector { a1, b1, a2, b2 } => {
            for ang in [*a1, *b1, *a2, *b2] {
                let dir = Point::new(ang.cos(), ang.sin(), 0.0);
                add_segment(Point::zeros(), dir * 4.0, &mut rng, &mut points, &mut weights);
            }
        }
        Descriptor::Strip { width } => {
            for y in [0.0, -width] {
                add_segment(
                    Point::new(-4.0, y, 0.0),
                    Point::new(4.0, y, 0.0),
                    &mut rng,
                    &mut points,
                    &mut weights,
                );
            }
        }
        Descriptor::Disk { radius } => {
            let circumference = std::f64::consts::TAU * radius;
            let count = (circumference / h).round().max(3.0) as usize;
            let w = circumference / count as f64;
            for k in 0..count {
                let jitter = rng.gen_range(-0.3..0.3);
                let phi = (k as f64 + 0.5 + jitter) * w / radius;
                points.push(Point::new(radius * phi.cos(), radius * phi.sin(), 0.0));
                weights.push(w);
            }
        }
        Descriptor::Graph { .. } | Descriptor::BumpLine { .. } => {
            // March the curve accumulating arc length; emit a point per h.
            let f = |x: f64| -> f64 {
                match &pair.descriptor {
                    Descriptor::Graph { .. } => pair.graph_height(x),
                    Descriptor::BumpLine { height, width, center } => {
                        height * (1.0 - (x - center).abs() / width).max(0.0)
                    }
                    _ => unreachable!(),
                }
            };
            let (x0, x1) = (-4.0f64, 4.0f64);
            let fine = h / 8.0;
            let steps = ((x1 - x0) / fine).ceil() as usize;
            let mut acc = 0.0;
            let mut x = x0;
            let mut prev = Point::new(x0, f(x0), 0.0);
            let mut due = h * (0.5 + rng.gen_range(-0.3..0.3));
            for _ in 0..steps {
                x += fine;
                let cur = Point::new(x, f(x), 0.0);
                acc += (cur - prev).norm();
                if acc >= due {
                    points.push(cur);
                    weights.push(h);
                    due += h;
                }
                prev = cur;
            }
        }
        Descriptor::Cantor { generation } => {
            // Perimeter points of each generation-m square, weights
            // normalized so each square carries its self-similar mass 4^-m.
            let m = *generation;
            let side = 0.25f64.powi(m as i32);
            let mass = 0.25f64.powi(m as i32);
            let corners = cantor_corners(m);
            let per_edge = ((side / h).round() as usize).max(1);
            let w = mass / (4 * per_edge) as f64;
            for c in &corners {
                for edge in 0..4 {
                    let (a, d) = match edge {
                        0 => (*c, Point::new(1.0, 0.0, 0.0)),
                        1 => (c + Point::new(side, 0.0, 0.0), Point::new(0.0, 1.0, 0.0)),
                        2 => (c + Point::new(side, side, 0.0), Point::new(-1.0, 0.0, 0.0)),
                        _ => (c + Point::new(0.0, side, 0.0), Point::new(0.0, -1.0, 0.0)),
                    };
                    for k in 0..per_edge {
                        let jitter = rng.gen_range(-0.3..0.3);
                        let t = (k as f64 + 0.5 + jitter) / per_edge as f64 * side;
                        points.push(a + d * t);
                        weights.push(w);
                    }
                }
            }
        }
        Descriptor::Polyline { vertices } => {
            let n = vertices.len();
            for i in 0..n {
                add_segment(vertices[i], vertices[(i + 1) % n], &mut rng, &mut points, &mut weights);
            }
        }
        Descriptor::Mesh { vertices, faces } => {
            for f in faces {
                let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
                let area = 0.5 * (b - a).cross(&(c - a)).norm();
                let count = ((area / (h * h)).round() as usize).max(1);
                let w = area / count as f64;
                for _ in 0..count {
                    let (mut u, mut v) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                    if u + v > 1.0 {
                        u = 1.0 - u;
                        v = 1.0 - v;
                    }
                    points.push(a + (b - a) * u + (c - a) * v);
                    weights.push(w);
                }
            }
        }
    }

    if points.is_empty() {
        return Err(Error::Geometry("descriptor produced an empty boundary".into()));
    }
    BoundarySample::from_parts(pair.ambient_dim, points, weights, h)
}

/// Lower-left corners of the generation-`m` squares of the four-corner
/// Cantor construction on the unit square.
fn cantor_corners(m: u32) -> Vec<Point> {
    let mut corners = vec![Point::zeros()];
    let mut side = 1.0;
    for _ in 0..m {
        let quarter = side * 0.25;
        let off = side * 0.75;
        let mut next = Vec::with_capacity(corners.len() * 4);
        for c in &corners {
            next.push(*c);
            next.push(c + Point::new(off, 0.0, 0.0));
            next.push(c + Point::new(0.0, off, 0.0));
            next.push(c + Point::new(off, off, 0.0));
        }
        corners = next;
        side = quarter;
    }
    corners
}

/// Probe `mu(B(x,r)) / r^n` across locations and scales `r in [4h, diam/4]`,
/// returning the observed (min, max). Probes are deterministic strides.
pub fn estimate_adr_constants(sample: &BoundarySample, probes: usize) -> (f64, f64) {
    let probes = probes.max(1);
    let n = (sample.dim - 1) as i32;
    let diam = sample.bbox().diameter();
    let r_lo = 4.0 * sample.mesh_scale;
    let r_hi = (diam / 4.0).max(r_lo * 1.0001);
    let radii = 6usize;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for k in 0..probes {
        let i = k * sample.len() / probes;
        let x = sample.points[i];
        for j in 0..radii {
            let t = (j as f64 + 0.5) / radii as f64;
            let r = r_lo * (r_hi / r_lo).powf(t);
            let ratio = sample.mass_in_ball(&x, r) / r.powi(n);
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    (lo, hi)
}
