//! Multiscale flatness gauges: the half-space mismatch coefficient, the
//! beta family over weighted samples, and their comparison diagnostics.

use crate::boundary::BoundarySample;
use crate::domain::DomainPair;
use crate::error::{Error, Result};
use crate::geo::{log_quadrature, HalfSpaceParam, PlaneParam, Point};
use crate::domain::Classification;
use crate::sphere::{
    build_grid, masks_from_classes, subsamples, trace_classes, RegionMask, SphereGrid,
};
use nalgebra::{Matrix2, Matrix3};

/// Half-space mismatch on the traced sphere `S(x, r)`, in angular units.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonValue {
    pub value: f64,
    /// Minimizing half-space normal.
    pub direction: Point,
    pub empty_trace: [bool; 2],
}

/// Angular mass on the `u`-positive half of the grid that is not in the
/// first region, plus the mass on the negative half not in the second.
pub fn half_space_mismatch(
    grid: &SphereGrid,
    masks: &(RegionMask, RegionMask),
    u: &Point,
) -> f64 {
    let mut total = 0.0;
    for i in 0..grid.len() {
        let side = grid.nodes[i].dot(u);
        if side > 0.0 {
            total += (1.0 - masks.0.frac[i]) * grid.weights[i];
        } else if side < 0.0 {
            total += (1.0 - masks.1.frac[i]) * grid.weights[i];
        }
    }
    total
}

/// Best half-space mismatch coefficient at `(x, r)`: exhaustive sweep over
/// grid directions, then `refine` rounds of local search (golden-section on
/// the circle, tangent pattern search on the sphere).
pub fn epsilon_n(
    pair: &DomainPair,
    x: &Point,
    r: f64,
    grid: &SphereGrid,
    refine: usize,
) -> EpsilonValue {
    assert!(r > 0.0);
    let classes = trace_classes(pair, x, r, grid);
    let masks = masks_from_classes(pair, x, r, grid, &classes);
    let empty_trace = [masks.0.interior_count() == 0, masks.1.interior_count() == 0];
    let (coarse, direction) = match grid.dim {
        1 => epsilon_circle(grid, &masks, refine),
        _ => epsilon_sphere(grid, &masks, refine),
    };
    // The sweep books whole cells by their node's side of the half-space;
    // the final value re-resolves cells near the dividing equator (and the
    // class-straddling band) by subsampling, which removes the half-cell
    // bias when the equator rides a node ring.
    let value = resolved_mismatch(pair, x, r, grid, &classes, &direction).min(coarse);
    EpsilonValue {
        value,
        direction,
        empty_trace,
    }
}

/// Cell-resolved mismatch for a fixed half-space direction: cells that
/// straddle the classification or sit within a cell of the `u`-equator are
/// booked by four-point subsampling, the rest sharply by their node.
pub fn resolved_mismatch(
    pair: &DomainPair,
    x: &Point,
    r: f64,
    grid: &SphereGrid,
    classes: &[Classification],
    u: &Point,
) -> f64 {
    one_sided_resolved(pair, x, r, grid, classes, u, Classification::In1)
        + one_sided_resolved(pair, x, r, grid, classes, &-u, Classification::In2)
}

/// Angular mass of `{w : w.u > 0} \ O_side` on the traced sphere.
pub fn one_sided_resolved(
    pair: &DomainPair,
    x: &Point,
    r: f64,
    grid: &SphereGrid,
    classes: &[Classification],
    u: &Point,
    side: Classification,
) -> f64 {
    let band = 1.5 * grid.typical_spacing();
    let mut total = 0.0;
    for i in 0..grid.len() {
        let s = grid.nodes[i].dot(u);
        let class_straddle = grid.adjacency[i]
            .iter()
            .any(|&j| classes[j as usize] != classes[i]);
        if !class_straddle && s.abs() > band {
            if s > 0.0 && classes[i] != side {
                total += grid.weights[i];
            }
            continue;
        }
        let mut hits = 0;
        for p in subsamples(grid, i) {
            if p.dot(u) > 0.0 && pair.classify(&(x + p * r)) != side {
                hits += 1;
            }
        }
        total += grid.weights[i] * hits as f64 / 4.0;
    }
    total
}

fn epsilon_circle(
    grid: &SphereGrid,
    masks: &(RegionMask, RegionMask),
    refine: usize,
) -> (f64, Point) {
    let n = grid.len();
    let quarter = n / 4;
    let d1: Vec<f64> = (0..n).map(|i| (1.0 - masks.0.frac[i]) * grid.weights[i]).collect();
    let d2: Vec<f64> = (0..n).map(|i| (1.0 - masks.1.frac[i]) * grid.weights[i]).collect();
    // circular prefix sums over a tripled array (windows reach 2.75 n)
    let prefix = |d: &[f64]| -> Vec<f64> {
        let mut p = vec![0.0; 3 * n + 1];
        for i in 0..3 * n {
            p[i + 1] = p[i] + d[i % n];
        }
        p
    };
    let (p1, p2) = (prefix(&d1), prefix(&d2));
    // window (k - quarter, k + quarter) exclusive for side 1, the antipodal
    // window for side 2; nodes at exactly +-pi/2 fall on neither side
    let mut best = (f64::INFINITY, 0usize);
    for k in 0..n {
        let m = p1[k + n + quarter] - p1[k + n - quarter + 1]
            + p2[k + n + 3 * quarter] - p2[k + n + quarter + 1];
        if m < best.0 {
            best = (m, k);
        }
    }
    let step = std::f64::consts::TAU / n as f64;
    let eval = |theta: f64| -> f64 {
        let u = Point::new(theta.cos(), theta.sin(), 0.0);
        half_space_mismatch(grid, masks, &u)
    };
    let mut lo = best.1 as f64 * step - step;
    let mut hi = best.1 as f64 * step + step;
    let mut fbest = best.0;
    let mut tbest = best.1 as f64 * step;
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    for _ in 0..(12 * refine.max(1)) {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        let (fa, fb) = (eval(a), eval(b));
        if fa < fb {
            hi = b;
        } else {
            lo = a;
        }
        let (t, f) = if fa < fb { (a, fa) } else { (b, fb) };
        if f < fbest {
            fbest = f;
            tbest = t;
        }
    }
    (fbest, Point::new(tbest.cos(), tbest.sin(), 0.0))
}

fn epsilon_sphere(
    grid: &SphereGrid,
    masks: &(RegionMask, RegionMask),
    refine: usize,
) -> (f64, Point) {
    // coarse exhaustive sweep over a level-3 direction set
    let dirs = build_grid(2, 3).expect("level-3 icosphere");
    let mut best = (f64::INFINITY, Point::new(0.0, 0.0, 1.0));
    for u in &dirs.nodes {
        let m = half_space_mismatch(grid, masks, u);
        if m < best.0 {
            best = (m, *u);
        }
    }
    // pattern search on the direction sphere
    let mut step = 0.25;
    let rounds = 10 + 6 * refine;
    for _ in 0..rounds {
        let u = best.1;
        let axis = if u.x.abs() < 0.9 {
            Point::new(1.0, 0.0, 0.0)
        } else {
            Point::new(0.0, 1.0, 0.0)
        };
        let t1 = (axis - u * axis.dot(&u)).normalize();
        let t2 = u.cross(&t1);
        let mut improved = false;
        for cand in [
            (u + t1 * step).normalize(),
            (u - t1 * step).normalize(),
            (u + t2 * step).normalize(),
            (u - t2 * step).normalize(),
        ] {
            let m = half_space_mismatch(grid, masks, &cand);
            if m < best.0 {
                best = (m, cand);
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-4 {
                break;
            }
        }
    }
    best
}

fn moment_eigen_min(dim: usize, pts: &[(Point, f64)], origin: &Point) -> (f64, Point) {
    if dim == 2 {
        let mut m = Matrix2::zeros();
        for (p, w) in pts {
            let d = p - origin;
            let v = nalgebra::Vector2::new(d.x, d.y);
            m += v * v.transpose() * *w;
        }
        let eig = nalgebra::SymmetricEigen::new(m);
        let (mut k, mut lam) = (0, eig.eigenvalues[0]);
        if eig.eigenvalues[1] < lam {
            k = 1;
            lam = eig.eigenvalues[1];
        }
        let v = eig.eigenvectors.column(k);
        (lam.max(0.0), Point::new(v[0], v[1], 0.0))
    } else {
        let mut m = Matrix3::zeros();
        for (p, w) in pts {
            let d = p - origin;
            m += d * d.transpose() * *w;
        }
        let eig = nalgebra::SymmetricEigen::new(m);
        let mut k = 0;
        for i in 1..3 {
            if eig.eigenvalues[i] < eig.eigenvalues[k] {
                k = i;
            }
        }
        let v = eig.eigenvectors.column(k);
        (eig.eigenvalues[k].max(0.0), Point::new(v[0], v[1], v[2]))
    }
}

/// Result of a beta computation: the coefficient and its optimal plane.
#[derive(Debug, Clone, Copy)]
pub struct BetaValue {
    pub value: f64,
    pub plane: PlaneParam,
}

/// `beta_p` coefficient of the sample on `B(x, r)`.
///
/// For `p = 2` the optimal plane is a second-moment eigenproblem in closed
/// form: the centered variant restricts to planes through `x`, the
/// uncentered one recenters at the weighted mean. For `p = 1` the plane is
/// fixed to the `p = 2` minimizer and the sum is evaluated directly.
pub fn beta(
    sample: &BoundarySample,
    x: &Point,
    r: f64,
    p: u8,
    centered: bool,
) -> Result<BetaValue> {
    if r <= 4.0 * sample.mesh_scale {
        return Err(Error::InsufficientData(format!(
            "radius {r} not above 4 mesh scales ({})",
            4.0 * sample.mesh_scale
        )));
    }
    let idx = sample.index().indices_in_ball(x, r);
    if idx.len() < sample.dim + 1 {
        return Err(Error::InsufficientData(format!(
            "{} sample points in B(x,{r}), need {}",
            idx.len(),
            sample.dim + 1
        )));
    }
    let pts: Vec<(Point, f64)> = idx
        .iter()
        .map(|&i| (sample.points[i], sample.weights[i]))
        .collect();
    let origin = if centered {
        *x
    } else {
        let wsum: f64 = pts.iter().map(|(_, w)| w).sum();
        pts.iter().map(|(p, w)| p * *w).sum::<Point>() / wsum
    };
    let (lam_min, normal) = moment_eigen_min(sample.dim, &pts, &origin);
    let n = (sample.dim - 1) as i32;
    let plane = PlaneParam::new(origin, normal);
    let value = match p {
        2 => (lam_min / r.powi(n + 2)).sqrt(),
        1 => {
            let sum: f64 = pts.iter().map(|(pt, w)| plane.distance(pt) * w).sum();
            sum / r.powi(n + 1)
        }
        _ => return Err(Error::Config(format!("beta exponent p={p} not in {{1,2}}"))),
    };
    Ok(BetaValue { value, plane })
}

/// Bilateral sup-distance flatness of the sample set on `B(x, r)`:
/// `sup_{y in E∩B} dist(y,L)/r + sup_{y in L∩B} dist(y,E)/r`, minimized by
/// multistart pattern search over planes seeded at the `p=2` minimizer.
pub fn bbeta(
    sample: &BoundarySample,
    x: &Point,
    r: f64,
    multistarts: usize,
) -> Result<BetaValue> {
    let seed = beta(sample, x, r, 2, false)?;
    let ball: Vec<usize> = sample.index().indices_in_ball(x, r);
    let objective = |plane: &PlaneParam| bbeta_for_plane(sample, &ball, x, r, plane);

    let base_angle = seed.plane.normal.y.atan2(seed.plane.normal.x);
    let dim = sample.dim;
    let mut best: Option<(f64, PlaneParam)> = None;
    let starts = multistarts.max(1);
    for s in 0..starts {
        // deterministic seed spread: rotations of the closed-form normal
        // plus a couple of offset kicks
        let mut ang_a = base_angle + 0.35 * s as f64;
        let mut ang_b = if dim == 2 {
            0.0
        } else {
            let n = seed.plane.normal;
            n.z.clamp(-1.0, 1.0).acos() + 0.17 * ((s % 3) as f64 - 1.0)
        };
        let mut off = if s % 2 == 1 {
            0.1 * r * ((s / 2 % 3) as f64 - 1.0)
        } else {
            0.0
        };
        let make_plane = |a: f64, b: f64, c: f64| -> PlaneParam {
            let normal = if dim == 2 {
                Point::new(a.cos(), a.sin(), 0.0)
            } else {
                Point::new(b.sin() * a.cos(), b.sin() * a.sin(), b.cos())
            };
            PlaneParam::new(x + normal * c, normal)
        };
        if dim == 3 && ang_b == 0.0 {
            ang_b = 1e-3;
        }
        let mut step_ang = 0.3;
        let mut step_off = 0.15 * r;
        let mut cur = objective(&make_plane(ang_a, ang_b, off));
        for _ in 0..60 {
            let mut improved = false;
            let mut candidates = vec![
                (ang_a + step_ang, ang_b, off),
                (ang_a - step_ang, ang_b, off),
                (ang_a, ang_b, off + step_off),
                (ang_a, ang_b, off - step_off),
            ];
            if dim == 3 {
                candidates.push((ang_a, ang_b + step_ang, off));
                candidates.push((ang_a, ang_b - step_ang, off));
            }
            for &(a, b, c) in &candidates {
                let val = objective(&make_plane(a, b, c));
                if val < cur {
                    cur = val;
                    ang_a = a;
                    ang_b = b;
                    off = c;
                    improved = true;
                }
            }
            if !improved {
                step_ang *= 0.5;
                step_off *= 0.5;
                if step_ang < 1e-4 {
                    break;
                }
            }
        }
        let plane = make_plane(ang_a, ang_b, off);
        if best.as_ref().map_or(true, |(v, _)| cur < *v) {
            best = Some((cur, plane));
        }
    }
    let (value, plane) = best.expect("at least one start");
    Ok(BetaValue { value, plane })
}

/// Evaluate the bilateral objective for one plane.
pub(crate) fn bbeta_for_plane(
    sample: &BoundarySample,
    ball: &[usize],
    x: &Point,
    r: f64,
    plane: &PlaneParam,
) -> f64 {
    let mut sup_set = 0.0f64;
    for &i in ball {
        sup_set = sup_set.max(plane.distance(&sample.points[i]));
    }
    // probes on L ∩ B at the sample's own resolution
    let c = plane.signed_distance(x);
    let radius2 = r * r - c * c;
    let mut sup_plane = 0.0f64;
    if radius2 > 0.0 {
        let radius = radius2.sqrt();
        let center = x - plane.normal * c;
        let h = sample.mesh_scale.max(radius / 512.0);
        let (t1, t2) = plane.tangent_basis(sample.dim);
        if sample.dim == 2 {
            let steps = (2.0 * radius / h).ceil() as usize;
            for k in 0..=steps {
                let t = -radius + 2.0 * radius * k as f64 / steps as f64;
                let probe = center + t1 * t;
                let (_, d) = sample.index().nearest(&probe);
                sup_plane = sup_plane.max(d);
            }
        } else {
            let steps = ((2.0 * radius / h).ceil() as usize).min(96);
            for i in 0..=steps {
                let a = -radius + 2.0 * radius * i as f64 / steps as f64;
                for j in 0..=steps {
                    let b = -radius + 2.0 * radius * j as f64 / steps as f64;
                    if a * a + b * b > radius2 {
                        continue;
                    }
                    let probe = center + t1 * a + t2 * b;
                    let (_, d) = sample.index().nearest(&probe);
                    sup_plane = sup_plane.max(d);
                }
            }
        }
    }
    (sup_set + sup_plane) / r
}

/// Both sides of the one-scale comparison between the mismatch coefficient
/// and the centered beta number.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonBetaBound {
    /// 16-node log quadrature of `eps(x,t)^2 dt/t` over `[r/2, r]`.
    pub lhs: f64,
    /// `beta2_centered(x, 1.5 r)^2`.
    pub rhs: f64,
    pub ratio: f64,
}

pub fn epsilon_beta_bound_check(
    pair: &DomainPair,
    sample: &BoundarySample,
    x: &Point,
    r: f64,
    grid: &SphereGrid,
) -> Result<EpsilonBetaBound> {
    let mut lhs = 0.0;
    for (t, w) in log_quadrature(r / 2.0, r, 16) {
        let e = epsilon_n(pair, x, t, grid, 2).value;
        lhs += e * e * w;
    }
    let rhs = beta(sample, x, 1.5 * r, 2, true)?.value.powi(2);
    Ok(EpsilonBetaBound {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { f64::INFINITY },
    })
}

/// Meridian-arc upper bound for the one-sided mismatch on `S(x, t)` in
/// ambient dimension three: integrates the missing arc length of the
/// pole-to-equator meridians over the equator of the given half-space.
/// Both returned quantities are normalized by `t^2` (angular units).
#[derive(Debug, Clone, Copy)]
pub struct ArcBound {
    pub meridian_integral: f64,
    pub eps_plus: f64,
}

pub fn arc_upper_bound(
    pair: &DomainPair,
    x: &Point,
    t: f64,
    half_space: &HalfSpaceParam,
    grid: &SphereGrid,
) -> Result<ArcBound> {
    if pair.ambient_dim != 3 || grid.dim != 2 {
        return Err(Error::Config(
            "meridian arc bound needs ambient dimension 3".into(),
        ));
    }
    let u = half_space.normal;
    let axis = if u.x.abs() < 0.9 {
        Point::new(1.0, 0.0, 0.0)
    } else {
        Point::new(0.0, 1.0, 0.0)
    };
    let e1 = (axis - u * axis.dot(&u)).normalize();
    let e2 = u.cross(&e1);
    let in_plus = |p: &Point| pair.classify(p) == crate::domain::Classification::In1;

    let m_equator = 512usize;
    let k_meridian = 512usize;
    let dphi = std::f64::consts::TAU / m_equator as f64;
    let dalpha = std::f64::consts::FRAC_PI_2 / k_meridian as f64;
    let mut integral = 0.0;
    for kphi in 0..m_equator {
        let phi = (kphi as f64 + 0.5) * dphi;
        let d = e1 * phi.cos() + e2 * phi.sin();
        let mut missing = 0.0;
        for ka in 0..k_meridian {
            let alpha = (ka as f64 + 0.5) * dalpha;
            let p = x + (d * alpha.sin() + u * alpha.cos()) * t;
            if !in_plus(&p) {
                missing += dalpha;
            }
        }
        // equator element t dphi, arc length t * missing, normalized by t^2
        integral += dphi * missing;
    }

    // hemispheric mismatch via the traced grid, angular units
    let classes = trace_classes(pair, x, t, grid);
    let eps_plus =
        one_sided_resolved(pair, x, t, grid, &classes, &u, crate::domain::Classification::In1);
    Ok(ArcBound {
        meridian_integral: integral,
        eps_plus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::sample_boundary;
    use crate::domain::{make_builtin, Descriptor};
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn half_space_2d() -> DomainPair {
        make_builtin(Descriptor::HalfSpace {
            dim: 2,
            normal: Point::new(0.0, 1.0, 0.0),
            anchor: Point::zeros(),
        })
        .unwrap()
    }

    #[test]
    fn epsilon_vanishes_on_half_space() {
        let pair = half_space_2d();
        let grid = build_grid(1, 6).unwrap();
        for xx in [-1.0, 0.0, 2.5] {
            let e = epsilon_n(&pair, &Point::new(xx, 0.0, 0.0), 1.0, &grid, 2);
            assert!(e.value <= 5e-3, "mismatch {}", e.value);
        }
    }

    #[test]
    fn epsilon_cone_matches_dense_sweep_oracle() {
        // analytic mismatch for the cone pair at the apex:
        // V1 = (g, pi-g), V2 = (pi+g, tau-g); interval overlaps are exact
        let gamma = 0.2;
        let overlap = |a: (f64, f64), b: (f64, f64)| -> f64 {
            (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
        };
        let mismatch = |theta: f64| -> f64 {
            let v1 = (gamma, PI - gamma);
            let v2 = (PI + gamma, TAU - gamma);
            let mut m = PI * 2.0;
            for s in [-TAU, 0.0, TAU] {
                let hp = (theta - FRAC_PI_2 + s, theta + FRAC_PI_2 + s);
                let hm = (theta + FRAC_PI_2 + s, theta + 3.0 * FRAC_PI_2 + s);
                m -= overlap(hp, v1) + overlap(hm, v2);
            }
            m
        };
        let oracle = (0..100_000)
            .map(|k| mismatch(k as f64 * TAU / 100_000.0))
            .fold(f64::INFINITY, f64::min);
        assert!((oracle - 4.0 * gamma).abs() < 1e-4, "oracle {oracle}");

        let pair = make_builtin(Descriptor::Cone { gamma }).unwrap();
        let grid = build_grid(1, 6).unwrap();
        for r in [0.5, 1.0, 3.0] {
            let e = epsilon_n(&pair, &Point::zeros(), r, &grid, 2);
            assert!(
                (e.value - oracle).abs() <= 0.02 * oracle,
                "eps {} vs oracle {oracle} at r={r}",
                e.value
            );
        }
    }

    #[test]
    fn epsilon_strip_below_gap_is_pi() {
        let pair = make_builtin(Descriptor::Strip { width: 0.5 }).unwrap();
        let grid = build_grid(1, 6).unwrap();
        let e = epsilon_n(&pair, &Point::new(0.3, 0.0, 0.0), 0.3, &grid, 2);
        assert!((e.value - PI).abs() <= 0.01 * PI, "eps {}", e.value);
        assert!(e.empty_trace[1]);
    }

    #[test]
    fn epsilon_rigid_motion_and_scale_invariance() {
        let grid = build_grid(1, 6).unwrap();
        let gamma = 0.25;
        let pair = make_builtin(Descriptor::Cone { gamma }).unwrap();
        let base = epsilon_n(&pair, &Point::zeros(), 1.0, &grid, 2).value;
        // rotated cone realized as a sector pair
        let rot = 0.83;
        let rotated = make_builtin(Descriptor::Sector {
            a1: gamma + rot,
            b1: PI - gamma + rot,
            a2: PI + gamma + rot,
            b2: TAU - gamma + rot,
        })
        .unwrap();
        let e_rot = epsilon_n(&rotated, &Point::zeros(), 1.0, &grid, 2).value;
        assert!((e_rot - base).abs() < 1e-3, "rotation: {base} vs {e_rot}");
        // dilation invariance: the cone is scale free
        let e_scaled = epsilon_n(&pair, &Point::zeros(), 7.0, &grid, 2).value;
        assert!((e_scaled - base).abs() < 1e-3, "scale: {base} vs {e_scaled}");
    }

    fn synthetic_sample(pts: Vec<Point>, ws: Vec<f64>, h: f64) -> BoundarySample {
        BoundarySample::from_parts(2, pts, ws, h).unwrap()
    }

    #[test]
    fn beta_collinear_is_zero() {
        let pts: Vec<Point> = (0..200)
            .map(|k| Point::new(k as f64 * 0.01 - 1.0, 0.0, 0.0))
            .collect();
        let ws = vec![0.01; 200];
        let s = synthetic_sample(pts, ws, 0.01);
        let b = beta(&s, &Point::zeros(), 0.5, 2, true).unwrap();
        assert!(b.value <= 1e-12, "collinear beta {}", b.value);
        let b1 = beta(&s, &Point::zeros(), 0.5, 1, true).unwrap();
        assert!(b1.value <= 1e-12);
    }

    #[test]
    fn beta_single_outlier_closed_form() {
        // line plus one outlier at height d0 with weight w0: the centered
        // second moment normal to the line is exactly w0 d0^2
        let mut pts: Vec<Point> = (0..400)
            .map(|k| Point::new(k as f64 * 0.005 - 1.0, 0.0, 0.0))
            .collect();
        let mut ws = vec![0.005; 400];
        let (d0, w0) = (0.02, 0.005);
        pts.push(Point::new(0.11, d0, 0.0));
        ws.push(w0);
        let s = synthetic_sample(pts, ws, 0.005);
        let r = 0.5;
        let b = beta(&s, &Point::zeros(), r, 2, true).unwrap();
        let expect = (w0 * d0 * d0 / r.powi(3)).sqrt();
        assert!(
            (b.value - expect).abs() <= 0.01 * expect,
            "beta {} vs {expect}",
            b.value
        );
    }

    #[test]
    fn beta_v_shape_matches_brute_force() {
        let slope = 0.3;
        let mut pts = Vec::new();
        let mut ws = Vec::new();
        let h = 0.004;
        let mut t = -1.0;
        while t < 1.0 {
            pts.push(Point::new(t, slope * t.abs(), 0.0));
            ws.push(h * (1.0 + slope * slope).sqrt());
            t += h;
        }
        let s = synthetic_sample(pts.clone(), ws.clone(), h);
        let r = 0.8;
        let b = beta(&s, &Point::zeros(), r, 2, true).unwrap();
        // brute-force sweep over plane angles through the vertex
        let mut best = f64::INFINITY;
        for k in 0..10_000 {
            let a = k as f64 * PI / 10_000.0;
            let normal = Point::new(-(a.sin()), a.cos(), 0.0);
            let mut sum = 0.0;
            for (p, w) in pts.iter().zip(&ws) {
                if p.norm() <= r {
                    let d = p.dot(&normal);
                    sum += w * d * d;
                }
            }
            best = best.min(sum / r.powi(3));
        }
        let oracle = best.sqrt();
        assert!(
            (b.value - oracle).abs() <= 0.005 * oracle,
            "beta {} vs sweep {oracle}",
            b.value
        );
    }

    #[test]
    fn beta_centered_dominates_uncentered() {
        let pair = make_builtin(Descriptor::Graph {
            slope: 0.3,
            seed: 11,
            amps: vec![],
            freqs: vec![],
            phases: vec![],
        })
        .unwrap();
        let s = sample_boundary(&pair, 0.01, 5).unwrap();
        for k in 0..20 {
            let i = k * s.len() / 20;
            let x = s.points[i];
            for r in [0.3, 0.6] {
                let bc = beta(&s, &x, r, 2, true).unwrap().value;
                let bu = beta(&s, &x, r, 2, false).unwrap().value;
                assert!(bc + 1e-15 >= bu, "centered {bc} < uncentered {bu}");
            }
        }
    }

    #[test]
    fn beta_insufficient_data_is_error() {
        let pts = vec![Point::zeros(), Point::new(1.0, 0.0, 0.0)];
        let s = synthetic_sample(pts, vec![1.0, 1.0], 0.01);
        assert!(matches!(
            beta(&s, &Point::zeros(), 0.5, 2, true),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn bbeta_collinear_is_discretization_floor() {
        let h = 0.005;
        let pts: Vec<Point> = (0..400)
            .map(|k| Point::new(k as f64 * h - 1.0, 0.0, 0.0))
            .collect();
        let ws = vec![h; 400];
        let s = synthetic_sample(pts, ws, h);
        let r = 0.5;
        let b = bbeta(&s, &Point::zeros(), r, 4).unwrap();
        assert!(b.value <= 2.0 * h / r, "bbeta {} floor {}", b.value, 2.0 * h / r);
    }

    #[test]
    fn bbeta_circle_curvature_gap() {
        let pair = make_builtin(Descriptor::Disk { radius: 1.0 }).unwrap();
        let s = sample_boundary(&pair, 0.002, 7).unwrap();
        let x = Point::new(1.0, 0.0, 0.0);
        let r = 0.2;
        let b = bbeta(&s, &x, r, 6).unwrap();
        // brute-force oracle over (angle, offset) grids
        let ball = s.index().indices_in_ball(&x, r);
        let mut oracle = f64::INFINITY;
        for ka in 0..180 {
            let a = ka as f64 * PI / 180.0;
            let normal = Point::new(-(a.sin()), a.cos(), 0.0);
            for kc in -40..=40 {
                let c = kc as f64 * 0.001;
                let plane = PlaneParam::new(x + normal * c, normal);
                oracle = oracle.min(bbeta_for_plane(&s, &ball, &x, r, &plane));
            }
        }
        assert!(
            b.value <= oracle * 1.05 + 1e-9,
            "bbeta {} vs oracle {oracle}",
            b.value
        );
        // relative curvature gap: the arc spans chord half-width ~r, so the
        // bilateral optimum splits a sagitta of r^2/2: value ~ r/2
        let sagitta_scale = r / 2.0;
        assert!(
            (b.value - sagitta_scale).abs() <= 0.2 * sagitta_scale + 2.0 * 0.002 / r,
            "bbeta {} vs sagitta scale {sagitta_scale}",
            b.value
        );
    }

    #[test]
    fn bbeta_cantor_far_from_flat() {
        let pair = make_builtin(Descriptor::Cantor { generation: 6 }).unwrap();
        let h = 0.25f64.powi(6);
        let s = sample_boundary(&pair, h, 7).unwrap();
        let r = 0.0625;
        for k in 0..5 {
            let i = k * s.len() / 5;
            let x = s.points[i];
            let b = bbeta(&s, &x, r, 6).unwrap();
            assert!(b.value >= 0.1, "cantor bbeta {} at {:?}", b.value, x);
        }
    }

    #[test]
    fn arc_bound_exact_half_space_vanishes() {
        let pair = make_builtin(Descriptor::HalfSpace {
            dim: 3,
            normal: Point::new(0.0, 0.0, 1.0),
            anchor: Point::zeros(),
        })
        .unwrap();
        let grid = build_grid(2, 4).unwrap();
        let hs = HalfSpaceParam::new(Point::zeros(), Point::new(0.0, 0.0, 1.0));
        let b = arc_upper_bound(&pair, &Point::zeros(), 1.0, &hs, &grid).unwrap();
        assert!(b.meridian_integral <= 1e-3, "integral {}", b.meridian_integral);
        assert!(b.eps_plus <= 1e-3);
    }

    #[test]
    fn arc_bound_rotated_half_space_ordering() {
        let phi = 0.1f64;
        let pair = make_builtin(Descriptor::HalfSpace {
            dim: 3,
            normal: Point::new(0.0, phi.sin(), phi.cos()),
            anchor: Point::zeros(),
        })
        .unwrap();
        let grid = build_grid(2, 5).unwrap();
        let hs = HalfSpaceParam::new(Point::zeros(), Point::new(0.0, 0.0, 1.0));
        let b = arc_upper_bound(&pair, &Point::zeros(), 1.0, &hs, &grid).unwrap();
        // mismatch is one spherical lune of dihedral angle phi: area 2 phi
        let lune = 2.0 * phi;
        assert!((b.eps_plus - lune).abs() <= 0.05 * lune, "eps+ {}", b.eps_plus);
        assert!(
            b.meridian_integral >= b.eps_plus - 1e-3,
            "claim ordering: {} < {}",
            b.meridian_integral,
            b.eps_plus
        );
    }

    #[test]
    fn arc_bound_polar_cap_ordering() {
        // upper half-space minus a polar cap of aperture 0.2: the mismatch
        // is the cap itself while every meridian misses a full cap arc
        let cap = 0.2f64;
        let pair = make_builtin(Descriptor::BittenHalfSpace {
            normal: Point::new(0.0, 0.0, 1.0),
            bite_axis: Point::new(0.0, 0.0, 1.0),
            bite_aperture: cap,
        })
        .unwrap();
        let grid = build_grid(2, 5).unwrap();
        let hs = HalfSpaceParam::new(Point::zeros(), Point::new(0.0, 0.0, 1.0));
        let b = arc_upper_bound(&pair, &Point::zeros(), 1.0, &hs, &grid).unwrap();
        let cap_area = TAU * (1.0 - cap.cos());
        assert!(
            (b.eps_plus - cap_area).abs() <= 0.01 * cap_area + 2e-3,
            "eps+ {} vs cap {cap_area}",
            b.eps_plus
        );
        // every meridian misses the cap arc of length 0.2
        assert!((b.meridian_integral - TAU * cap).abs() <= 0.01 * TAU * cap);
        assert!(b.meridian_integral >= b.eps_plus - 1e-3);
    }

    #[test]
    fn arc_bound_dimension_checked() {
        let pair = half_space_2d();
        let grid = build_grid(2, 3).unwrap();
        let hs = HalfSpaceParam::new(Point::zeros(), Point::new(0.0, 1.0, 0.0));
        assert!(matches!(
            arc_upper_bound(&pair, &Point::zeros(), 1.0, &hs, &grid),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn claim_ordering_on_random_perturbed_half_spaces() {
        // tilted half-spaces with a cone bitten out: the bite keeps the
        // bound strictly separated from the mismatch, so the ordering is
        // testable at tight slack (a pure tilt is the equality case of the
        // bound and sits below grid resolution)
        let grid = build_grid(2, 4).unwrap();
        let hs = HalfSpaceParam::new(Point::zeros(), Point::new(0.0, 0.0, 1.0));
        let mut violations = 0;
        for k in 0..50u32 {
            let tilt = 0.002 * k as f64;
            let swing = 0.9 * ((k * 7 % 11) as f64 / 11.0 - 0.5);
            let aperture = 0.15 + 0.007 * k as f64;
            let normal =
                Point::new(swing.sin() * tilt.sin(), swing.cos() * tilt.sin(), tilt.cos());
            let bite_axis = Point::new(
                (0.3 + 0.01 * k as f64) * swing.cos(),
                -(0.3 + 0.01 * k as f64) * swing.sin(),
                1.0,
            );
            let pair = make_builtin(Descriptor::BittenHalfSpace {
                normal,
                bite_axis,
                bite_aperture: aperture,
            })
            .unwrap();
            let bound = arc_upper_bound(&pair, &Point::zeros(), 1.0, &hs, &grid).unwrap();
            if bound.meridian_integral < bound.eps_plus - 1e-3 {
                violations += 1;
            }
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn epsilon_beta_bound_on_graph_is_finite() {
        let pair = make_builtin(Descriptor::Graph {
            slope: 0.3,
            seed: 3,
            amps: vec![],
            freqs: vec![],
            phases: vec![],
        })
        .unwrap();
        let s = sample_boundary(&pair, 0.005, 9).unwrap();
        let grid = build_grid(1, 6).unwrap();
        let i = s.len() / 3;
        let x = s.points[i];
        let chk = epsilon_beta_bound_check(&pair, &s, &x, 0.4, &grid).unwrap();
        assert!(chk.lhs.is_finite() && chk.rhs > 0.0 && chk.ratio.is_finite());
    }
}
