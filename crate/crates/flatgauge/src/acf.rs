//! The two-phase monotone product functional over analytic subharmonic
//! pair fields, with its log-derivative inequality and auxiliary bound.

use crate::error::{Error, Result};
use crate::geo::Point;
use crate::sphere::{RegionMask, SphereGrid};
use crate::spectra::lambda1_arcs;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

/// One positively-homogeneous harmonic wedge `amp * rho^alpha
/// sin(alpha (phi - lo))` supported on the angular interval `(lo, hi)`.
#[derive(Debug, Clone, Copy)]
pub struct ConeHarmonic {
    pub lo: f64,
    pub hi: f64,
    pub amp: f64,
}

impl ConeHarmonic {
    pub fn alpha(&self) -> f64 {
        PI / (self.hi - self.lo)
    }

    /// Lift `phi` into `[lo, lo + tau)` and return the local angle if the
    /// point is inside the wedge.
    fn local_angle(&self, phi: f64) -> Option<f64> {
        let t = (phi - self.lo).rem_euclid(TAU);
        if t > 0.0 && t < self.hi - self.lo {
            Some(t)
        } else {
            None
        }
    }

    pub fn value(&self, rho: f64, phi: f64) -> f64 {
        match self.local_angle(phi) {
            Some(t) => {
                let a = self.alpha();
                self.amp * rho.powf(a) * (a * t).sin()
            }
            None => 0.0,
        }
    }

    /// `|grad|^2` where the wedge is the active branch.
    pub fn grad_sq(&self, rho: f64) -> f64 {
        let a = self.alpha();
        (self.amp * a).powi(2) * rho.powf(2.0 * a - 2.0)
    }
}

/// A pair of nonnegative subharmonic functions with disjoint supports and a
/// common zero at the anchor: each side is a pointwise maximum of harmonic
/// wedges (max of subharmonics stays subharmonic).
#[derive(Debug, Clone)]
pub struct SubharmonicPairField {
    pub anchor: Point,
    pub comps: [Vec<ConeHarmonic>; 2],
    pub validity_radius: f64,
}

impl SubharmonicPairField {
    pub fn half_plane() -> Self {
        Self {
            anchor: Point::zeros(),
            comps: [
                vec![ConeHarmonic { lo: 0.0, hi: PI, amp: 1.0 }],
                vec![ConeHarmonic { lo: PI, hi: TAU, amp: 1.0 }],
            ],
            validity_radius: f64::INFINITY,
        }
    }

    /// Complementary wedges with half-gap `gamma` on each side.
    pub fn cone(gamma: f64) -> Self {
        Self {
            anchor: Point::zeros(),
            comps: [
                vec![ConeHarmonic { lo: gamma, hi: PI - gamma, amp: 1.0 }],
                vec![ConeHarmonic { lo: PI + gamma, hi: TAU - gamma, amp: 1.0 }],
            ],
            validity_radius: f64::INFINITY,
        }
    }

    /// First side replaced by a maximum of two overlapping wedges, which
    /// wobbles the active branch while staying subharmonic.
    pub fn perturbed(gamma: f64) -> Self {
        Self {
            anchor: Point::zeros(),
            comps: [
                vec![
                    ConeHarmonic { lo: gamma, hi: PI - gamma, amp: 1.0 },
                    ConeHarmonic { lo: gamma * 0.5, hi: PI - 1.7 * gamma, amp: 0.6 },
                ],
                vec![ConeHarmonic { lo: PI + gamma, hi: TAU - gamma, amp: 1.0 }],
            ],
            validity_radius: f64::INFINITY,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for side in &mut out.comps {
            for w in side.iter_mut() {
                w.amp *= c;
            }
        }
        out
    }

    pub fn value(&self, side: usize, p: &Point) -> f64 {
        let d = p - self.anchor;
        let rho = d.xy().norm();
        let phi = d.y.atan2(d.x);
        self.comps[side]
            .iter()
            .map(|w| w.value(rho, phi))
            .fold(0.0, f64::max)
    }

    /// Squared gradient magnitude of the active branch at `(rho, phi)`.
    fn grad_sq_polar(&self, side: usize, rho: f64, phi: f64) -> f64 {
        let mut best = (0.0f64, 0.0f64);
        for w in &self.comps[side] {
            let v = w.value(rho, phi);
            if v > best.0 {
                best = (v, w.grad_sq(rho));
            }
        }
        best.1
    }

    /// Supports are angular and scale free: the union of wedge intervals.
    pub fn support_contains(&self, side: usize, phi: f64) -> bool {
        self.comps[side].iter().any(|w| w.local_angle(phi).is_some())
    }

    fn breakpoints(&self, side: usize) -> Vec<f64> {
        let mut b: Vec<f64> = self.comps[side]
            .iter()
            .flat_map(|w| [w.lo.rem_euclid(TAU), w.hi.rem_euclid(TAU)])
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// Angular integral of `|grad u_side|^2` on the circle of radius `rho`:
    /// piecewise evaluation between wedge edges, subdivided against branch
    /// switches of the maximum.
    fn angular_energy(&self, side: usize, rho: f64) -> f64 {
        let breaks = self.breakpoints(side);
        if breaks.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        let pieces = breaks.len();
        for k in 0..pieces {
            let lo = breaks[k];
            let hi = if k + 1 < pieces { breaks[k + 1] } else { breaks[0] + TAU };
            if hi <= lo {
                continue;
            }
            let sub = 16;
            let dphi = (hi - lo) / sub as f64;
            for s in 0..sub {
                let phi = lo + (s as f64 + 0.5) * dphi;
                total += self.grad_sq_polar(side, rho, phi) * dphi;
            }
        }
        total
    }

    fn check_valid(&self, r: f64) -> Result<()> {
        if r >= self.validity_radius {
            return Err(Error::Config(format!(
                "radius {r} exceeds field validity {}",
                self.validity_radius
            )));
        }
        Ok(())
    }
}

/// One normalized weighted Dirichlet factor:
/// `(1/r^2) \int_{B(x,r)} |grad u|^2 / |y-x|^(n-1) dy` by polar quadrature
/// (the kernel cancels the Jacobian, leaving an integrand linear in `t`).
fn factor(field: &SubharmonicPairField, side: usize, r: f64, quad_level: u32) -> f64 {
    let panels = 1usize << quad_level;
    let dt = r / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let t = (k as f64 + 0.5) * dt;
        acc += t * field.angular_energy(side, t) * dt;
    }
    acc / (r * r)
}

/// The product functional `J(x, r)`.
pub fn acf_j(field: &SubharmonicPairField, x: &Point, r: f64, quad_level: u32) -> Result<f64> {
    field.check_valid(r)?;
    if (x - field.anchor).norm() > 0.0 {
        return Err(Error::Config("field anchor must coincide with the center".into()));
    }
    let f1 = factor(field, 0, r, quad_level);
    let f2 = factor(field, 1, r, quad_level);
    if !(f1.is_finite() && f2.is_finite()) || f1 < 0.0 || f2 < 0.0 {
        return Err(Error::Numerical("gradient quadrature produced a bad factor".into()));
    }
    Ok(f1 * f2)
}

#[derive(Debug, Clone, Copy)]
pub struct ShellRow {
    pub r: f64,
    pub j: f64,
    pub dlog_j_dr: f64,
    pub alpha_sum_minus_2: f64,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct MonotonicityReport {
    pub rows: Vec<ShellRow>,
    pub min_slack: f64,
    pub violations: usize,
}

impl MonotonicityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,J,dlogJ_dr,alpha_sum,slack\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                row.r, row.j, row.dlog_j_dr, row.alpha_sum_minus_2, row.slack
            );
        }
        out
    }
}

/// Check the log-derivative inequality of the functional against the
/// characteristic-constant sum of the traced supports, on a log-spaced
/// radius grid with centered differences. Violations are counted at the
/// tolerance `5% |rhs| + 1e-3`.
pub fn acf_monotonicity_check(
    field: &SubharmonicPairField,
    x: &Point,
    r_lo: f64,
    r_hi: f64,
    steps: usize,
    grid: &SphereGrid,
    quad_level: u32,
) -> Result<MonotonicityReport> {
    field.check_valid(r_hi)?;
    assert!(grid.dim == 1, "pair fields are planar");
    let count = steps.max(3);
    let ratio = (r_hi / r_lo).powf(1.0 / (count as f64 - 1.0));
    let radii: Vec<f64> = (0..count).map(|k| r_lo * ratio.powi(k as i32)).collect();
    let js: Vec<f64> = radii
        .iter()
        .map(|&r| acf_j(field, x, r, quad_level))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut min_slack = f64::INFINITY;
    let mut violations = 0;
    for k in 1..count - 1 {
        let r = radii[k];
        let dlog = (js[k + 1].ln() - js[k - 1].ln()) / (radii[k + 1].ln() - radii[k - 1].ln()) / r;
        // alpha sum over the traced supports at this shell
        let mut alphas = [0.0f64; 2];
        for side in 0..2 {
            let mask = RegionMask::from_fn(grid, |w| {
                field.support_contains(side, w.y.atan2(w.x))
            });
            let cc = lambda1_arcs(grid, &mask);
            alphas[side] = cc.alpha;
        }
        let rhs_core = alphas[0] + alphas[1] - 2.0;
        let rhs = 2.0 / r * rhs_core;
        let slack = dlog - rhs;
        let tol = 0.05 * rhs.abs() + 1e-3;
        if slack < -tol {
            violations += 1;
        }
        min_slack = min_slack.min(slack);
        rows.push(ShellRow {
            r,
            j: js[k],
            dlog_j_dr: dlog,
            alpha_sum_minus_2: rhs_core,
            slack,
        });
    }
    Ok(MonotonicityReport {
        rows,
        min_slack,
        violations,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct AuxBoundReport {
    /// Normalized weighted factor per side.
    pub lhs: [f64; 2],
    /// Plain Dirichlet energy over the doubled ball, scaled by `r^{-(n+1)}`.
    pub rhs: [f64; 2],
    pub ratio: [f64; 2],
    pub degenerate: [bool; 2],
}

/// Compare the weighted factor with the plain energy on the doubled ball.
pub fn acf_aux_bound_check(
    field: &SubharmonicPairField,
    x: &Point,
    r: f64,
    quad_level: u32,
) -> Result<AuxBoundReport> {
    field.check_valid(2.0 * r)?;
    if (x - field.anchor).norm() > 0.0 {
        return Err(Error::Config("field anchor must coincide with the center".into()));
    }
    let mut lhs = [0.0; 2];
    let mut rhs = [0.0; 2];
    let mut ratio = [0.0; 2];
    let mut degenerate = [false; 2];
    for side in 0..2 {
        degenerate[side] = field.comps[side].is_empty()
            || field.comps[side].iter().all(|w| w.amp == 0.0);
        lhs[side] = factor(field, side, r, quad_level);
        // plain energy on B(x, 2r): integrand t * |grad|^2 in polar form
        let panels = 1usize << quad_level;
        let dt = 2.0 * r / panels as f64;
        let mut energy = 0.0;
        for k in 0..panels {
            let t = (k as f64 + 0.5) * dt;
            energy += t * field.angular_energy(side, t) * dt;
        }
        rhs[side] = energy / (r * r);
        ratio[side] = if rhs[side] > 0.0 { lhs[side] / rhs[side] } else { 0.0 };
    }
    Ok(AuxBoundReport {
        lhs,
        rhs,
        ratio,
        degenerate,
    })
}
