//! Small geometric primitives shared by every module.
//!
//! Points live in `R^3`; planar domains set the third coordinate to zero and
//! carry `dim = 2` alongside. Keeping one concrete point type avoids
//! genericity noise in code that is already dimension-aware (eigenproblems,
//! tangent bases).

use nalgebra::Vector3;

pub type Point = Vector3<f64>;

/// Open affine half-space `{y : (y - anchor) . normal > 0}` with the anchor
/// on its boundary hyperplane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpaceParam {
    pub anchor: Point,
    pub normal: Point,
}

impl HalfSpaceParam {
    pub fn new(anchor: Point, normal: Point) -> Self {
        let n = normal.norm();
        assert!(n > 0.0, "half-space normal must be nonzero");
        Self {
            anchor,
            normal: normal / n,
        }
    }

    pub fn contains(&self, y: &Point) -> bool {
        (y - self.anchor).dot(&self.normal) > 0.0
    }
}

/// Hyperplane through `point` with unit `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneParam {
    pub point: Point,
    pub normal: Point,
}

impl PlaneParam {
    pub fn new(point: Point, normal: Point) -> Self {
        let n = normal.norm();
        assert!(n > 0.0, "plane normal must be nonzero");
        Self {
            point,
            normal: normal / n,
        }
    }

    pub fn signed_distance(&self, y: &Point) -> f64 {
        (y - self.point).dot(&self.normal)
    }

    pub fn distance(&self, y: &Point) -> f64 {
        self.signed_distance(y).abs()
    }

    /// Orthonormal tangent basis of the plane. For `dim = 2` the second
    /// tangent is the (unused) z axis.
    pub fn tangent_basis(&self, dim: usize) -> (Point, Point) {
        if dim == 2 {
            let t = Point::new(-self.normal.y, self.normal.x, 0.0);
            (t, Point::new(0.0, 0.0, 1.0))
        } else {
            let seed = if self.normal.x.abs() < 0.9 {
                Point::new(1.0, 0.0, 0.0)
            } else {
                Point::new(0.0, 1.0, 0.0)
            };
            let t1 = (seed - self.normal * seed.dot(&self.normal)).normalize();
            let t2 = self.normal.cross(&t1);
            (t1, t2)
        }
    }

    /// Angle between two hyperplanes, in `[0, pi/2]`.
    pub fn angle_to(&self, other: &PlaneParam) -> f64 {
        self.normal.dot(&other.normal).abs().clamp(0.0, 1.0).acos()
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn empty() -> Self {
        let inf = f64::INFINITY;
        Self {
            min: Point::new(inf, inf, inf),
            max: Point::new(-inf, -inf, -inf),
        }
    }

    pub fn of_points<'a>(pts: impl IntoIterator<Item = &'a Point>) -> Self {
        let mut b = Self::empty();
        for p in pts {
            b.insert(p);
        }
        b
    }

    pub fn insert(&mut self, p: &Point) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    pub fn diameter(&self) -> f64 {
        if self.min.x > self.max.x {
            0.0
        } else {
            (self.max - self.min).norm()
        }
    }

    pub fn center(&self) -> Point {
        (self.min + self.max) * 0.5
    }

    /// Distance from `p` to the box (zero inside).
    pub fn distance(&self, p: &Point) -> f64 {
        let d = Point::new(
            (self.min.x - p.x).max(0.0).max(p.x - self.max.x),
            (self.min.y - p.y).max(0.0).max(p.y - self.max.y),
            (self.min.z - p.z).max(0.0).max(p.z - self.max.z),
        );
        d.norm()
    }
}

/// Uniform grid hash over a point cloud for ball and nearest-neighbour
/// queries. Cell size is chosen by the caller, typically a few mesh scales.
#[derive(Debug, Clone)]
pub struct PointIndex {
    cell: f64,
    origin: Point,
    dims: [usize; 3],
    /// CSR-style layout: `starts[c]..starts[c+1]` indexes into `entries`.
    starts: Vec<usize>,
    entries: Vec<u32>,
    points: Vec<Point>,
    /// kd-tree over the same points for nearest queries: node `k` splits
    /// `order[lo..hi]` at its median along `axis[k]`.
    kd_order: Vec<u32>,
}

impl PointIndex {
    pub fn build(points: &[Point], cell: f64) -> Self {
        assert!(cell > 0.0 && !points.is_empty());
        let bb = Aabb::of_points(points.iter());
        let origin = bb.min;
        let extent = bb.max - bb.min;
        let dim_of = |e: f64| ((e / cell).floor() as usize + 1).max(1);
        let dims = [dim_of(extent.x), dim_of(extent.y), dim_of(extent.z)];
        let ncells = dims[0] * dims[1] * dims[2];
        let cell_of = |p: &Point| -> usize {
            let ix = (((p.x - origin.x) / cell).floor() as usize).min(dims[0] - 1);
            let iy = (((p.y - origin.y) / cell).floor() as usize).min(dims[1] - 1);
            let iz = (((p.z - origin.z) / cell).floor() as usize).min(dims[2] - 1);
            (iz * dims[1] + iy) * dims[0] + ix
        };
        let mut counts = vec![0usize; ncells + 1];
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for c in 0..ncells {
            counts[c + 1] += counts[c];
        }
        let starts = counts.clone();
        let mut cursor = counts;
        let mut entries = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p);
            entries[cursor[c]] = i as u32;
            cursor[c] += 1;
        }
        let mut kd_order: Vec<u32> = (0..points.len() as u32).collect();
        build_kd(points, &mut kd_order, 0);
        Self {
            cell,
            origin,
            dims,
            starts,
            entries,
            points: points.to_vec(),
            kd_order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn cell_range(&self, lo: f64, hi: f64, axis: usize) -> (usize, usize) {
        let o = self.origin[axis];
        let n = self.dims[axis];
        let a = (((lo - o) / self.cell).floor().max(0.0) as usize).min(n - 1);
        let b = (((hi - o) / self.cell).floor().max(0.0) as usize).min(n - 1);
        (a, b)
    }

    /// Visit the indices of all points within `radius` of `center`.
    pub fn for_each_in_ball(&self, center: &Point, radius: f64, mut f: impl FnMut(usize)) {
        let r2 = radius * radius;
        let (x0, x1) = self.cell_range(center.x - radius, center.x + radius, 0);
        let (y0, y1) = self.cell_range(center.y - radius, center.y + radius, 1);
        let (z0, z1) = self.cell_range(center.z - radius, center.z + radius, 2);
        for iz in z0..=z1 {
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    let c = (iz * self.dims[1] + iy) * self.dims[0] + ix;
                    for &e in &self.entries[self.starts[c]..self.starts[c + 1]] {
                        let i = e as usize;
                        if (self.points[i] - center).norm_squared() <= r2 {
                            f(i);
                        }
                    }
                }
            }
        }
    }

    pub fn indices_in_ball(&self, center: &Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_in_ball(center, radius, |i| out.push(i));
        out.sort_unstable();
        out
    }

    pub fn count_in_ball(&self, center: &Point, radius: f64) -> usize {
        let mut n = 0;
        self.for_each_in_ball(center, radius, |_| n += 1);
        n
    }

    /// Nearest point index and distance.
    pub fn nearest(&self, query: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        kd_nearest(&self.points, &self.kd_order, 0, query, &mut best);
        (best.0, best.1.sqrt())
    }
}

/// In-place median-split kd construction over `order`.
fn build_kd(points: &[Point], order: &mut [u32], depth: usize) {
    if order.len() <= 8 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis])
    });
    let (lo, rest) = order.split_at_mut(mid);
    build_kd(points, lo, depth + 1);
    build_kd(points, &mut rest[1..], depth + 1);
}

fn kd_nearest(points: &[Point], order: &[u32], depth: usize, q: &Point, best: &mut (usize, f64)) {
    if order.len() <= 8 {
        for &i in order {
            let d2 = (points[i as usize] - q).norm_squared();
            if d2 < best.1 {
                *best = (i as usize, d2);
            }
        }
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    let pivot = points[order[mid] as usize];
    let d2 = (pivot - q).norm_squared();
    if d2 < best.1 {
        *best = (order[mid] as usize, d2);
    }
    let delta = q[axis] - pivot[axis];
    let (near, far) = if delta < 0.0 {
        (&order[..mid], &order[mid + 1..])
    } else {
        (&order[mid + 1..], &order[..mid])
    };
    kd_nearest(points, near, depth + 1, q, best);
    if delta * delta < best.1 {
        kd_nearest(points, far, depth + 1, q, best);
    }
}

/// Log-spaced quadrature nodes and weights for `\int f(t) dt/t` over
/// `[a, b]`: midpoint rule in `log t`, `count` panels.
pub fn log_quadrature(a: f64, b: f64, count: usize) -> Vec<(f64, f64)> {
    assert!(a > 0.0 && b > a && count > 0);
    let la = a.ln();
    let step = (b.ln() - la) / count as f64;
    (0..count)
        .map(|k| ((la + (k as f64 + 0.5) * step).exp(), step))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_ball_query_matches_linear_scan() {
        let mut pts = Vec::new();
        let mut s = 1u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..500 {
            pts.push(Point::new(next(), next(), 0.0));
        }
        let idx = PointIndex::build(&pts, 0.07);
        let c = Point::new(0.4, 0.6, 0.0);
        for &r in &[0.01, 0.1, 0.35, 2.0] {
            let mut expect: Vec<usize> = (0..pts.len())
                .filter(|&i| (pts[i] - c).norm() <= r)
                .collect();
            expect.sort_unstable();
            assert_eq!(idx.indices_in_ball(&c, r), expect, "radius {r}");
        }
        let (i, d) = idx.nearest(&c);
        let (bi, bd) = (0..pts.len())
            .map(|i| (i, (pts[i] - c).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(i, bi);
        assert!((d - bd).abs() < 1e-15);
    }

    #[test]
    fn log_quadrature_integrates_dt_over_t() {
        // \int_a^b dt/t = ln(b/a) exactly for the midpoint-in-log rule.
        let nodes = log_quadrature(0.5, 2.0, 16);
        let total: f64 = nodes.iter().map(|&(_, w)| w).sum();
        assert!((total - (4.0f64).ln()).abs() < 1e-12);
        // smooth integrand sanity: \int t dt/t = b - a
        let val: f64 = nodes.iter().map(|&(t, w)| t * w).sum();
        assert!((val - 1.5).abs() < 2e-3);
    }

    #[test]
    fn plane_tangent_basis_is_orthonormal() {
        let pl = PlaneParam::new(Point::new(1.0, 2.0, 3.0), Point::new(0.3, -0.4, 0.87));
        let (t1, t2) = pl.tangent_basis(3);
        assert!(t1.dot(&pl.normal).abs() < 1e-12);
        assert!(t2.dot(&pl.normal).abs() < 1e-12);
        assert!(t1.dot(&t2).abs() < 1e-12);
        assert!((t1.norm() - 1.0).abs() < 1e-12);
        assert!((t2.norm() - 1.0).abs() < 1e-12);
    }
}
