//! First Dirichlet eigenvalues of spherical regions and the characteristic
//! constants that feed the `a(x, r)` coefficient.

use crate::domain::{Classification, DomainPair};
use crate::error::{Error, Result};
use crate::geo::Point;
use crate::sphere::{RegionMask, SphereGrid};
use std::fmt::Write as _;

/// Smallest Dirichlet eigenvalue of a spherical region plus its
/// characteristic constant `alpha`, where `lambda = alpha (n - 1 + alpha)`.
/// Empty regions carry infinite sentinels.
#[derive(Debug, Clone, Copy)]
pub struct CharacteristicConstant {
    pub lambda1: f64,
    pub alpha: f64,
    pub component_count: usize,
    pub empty: bool,
    /// Outer iterations spent by the FEM solve (0 on analytic paths).
    pub iterations: usize,
    pub residual: f64,
}

impl CharacteristicConstant {
    pub fn empty_region() -> Self {
        Self {
            lambda1: f64::INFINITY,
            alpha: f64::INFINITY,
            component_count: 0,
            empty: true,
            iterations: 0,
            residual: 0.0,
        }
    }

    fn from_lambda(lambda: f64, n: usize) -> Self {
        Self {
            lambda1: lambda,
            alpha: characteristic_constant(lambda, n),
            component_count: 1,
            empty: false,
            iterations: 0,
            residual: 0.0,
        }
    }
}

/// Positive root of `lambda = alpha (n - 1 + alpha)`.
pub fn characteristic_constant(lambda: f64, n: usize) -> f64 {
    assert!(lambda >= 0.0);
    let m = (n - 1) as f64;
    0.5 * (-m + (m * m + 4.0 * lambda).sqrt())
}

/// Eigenvalue of a circle mask: decompose into maximal open arcs; the first
/// eigenvalue of a disjoint union is attained on the longest arc, where it
/// equals `(pi / theta)^2`.
pub fn lambda1_arcs(grid: &SphereGrid, mask: &RegionMask) -> CharacteristicConstant {
    assert_eq!(grid.dim, 1);
    let arcs = mask_arcs(grid, mask);
    if arcs.is_empty() {
        return CharacteristicConstant::empty_region();
    }
    let theta_max = arcs.iter().cloned().fold(0.0f64, f64::max);
    let mut cc = CharacteristicConstant::from_lambda(
        (std::f64::consts::PI / theta_max).powi(2),
        1,
    );
    cc.component_count = arcs.len();
    cc
}

/// Arc lengths of the maximal member runs, extended by the fractional cells
/// at each end.
fn mask_arcs(grid: &SphereGrid, mask: &RegionMask) -> Vec<f64> {
    let n = grid.len();
    let step = std::f64::consts::TAU / n as f64;
    if mask.member.iter().all(|&m| m) {
        return vec![std::f64::consts::TAU];
    }
    let mut arcs = Vec::new();
    let mut i = 0;
    while i < n {
        if !mask.member[i] || mask.member[(i + n - 1) % n] {
            i += 1;
            continue;
        }
        // run start at i
        let mut len = 0usize;
        while len < n && mask.member[(i + len) % n] {
            len += 1;
        }
        let before = (i + n - 1) % n;
        let after = (i + len) % n;
        let theta = (len as f64 + mask.frac[before] + mask.frac[after]) * step;
        arcs.push(theta);
        i += len;
    }
    if arcs.is_empty() && mask.member.iter().any(|&m| m) {
        // single run starting at index 0 wrapped fully around
        arcs.push(mask.member.iter().filter(|&&m| m).count() as f64 * step);
    }
    arcs
}

/// Shooting oracle for the first Dirichlet eigenvalue of a polar cap of
/// aperture `theta0` on `S^2`: integrate `(sin t u')' + lambda sin t u = 0`
/// with a regular series start and bisect on the endpoint sign.
pub fn cap_lambda1_oracle(theta0: f64) -> Result<f64> {
    if !(theta0 > 0.0 && theta0 < std::f64::consts::PI + 1e-12) {
        return Err(Error::Config(format!("cap aperture {theta0} outside (0, pi)")));
    }
    let endpoint = |lambda: f64| -> f64 { shoot_cap(lambda, theta0) };
    // The endpoint value is positive for lambda below the first eigenvalue.
    let floor = 1e-9;
    if theta0 >= std::f64::consts::PI - 1e-6 {
        // Dirichlet data degenerates to a point of null capacity; the first
        // zero sits in an exponentially thin collar no integrator resolves.
        return Ok(floor);
    }
    let mut lo = floor;
    if endpoint(lo) <= 0.0 {
        return Ok(lo);
    }
    let mut hi = lo.max(2.0);
    let mut tries = 0;
    while endpoint(hi) > 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            // No sign change at any reachable lambda: the cap is essentially
            // the full sphere and the eigenvalue is below the floor.
            return Ok(floor);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if endpoint(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// RK4 integration of the polar ODE from the regular origin to `theta0`;
/// returns the endpoint value (sign is all the bisection needs).
fn shoot_cap(lambda: f64, theta0: f64) -> f64 {
    let t0 = 1e-3_f64.min(theta0 / 10.0);
    // series start: u = 1 - lambda t^2 / 4 + O(t^4)
    let mut u = 1.0 - lambda * t0 * t0 / 4.0;
    let mut v = -lambda * t0 / 2.0; // u'
    let steps = 20_000usize;
    let hmax = (theta0 - t0) / steps as f64;
    let f = |t: f64, u: f64, v: f64| -> (f64, f64) {
        // u'' = -cot(t) u' - lambda u
        (v, -t.tan().recip() * v - lambda * u)
    };
    let mut t = t0;
    for _ in 0..steps {
        let h = hmax.min(theta0 - t);
        if h <= 0.0 {
            break;
        }
        let (k1u, k1v) = f(t, u, v);
        let (k2u, k2v) = f(t + h / 2.0, u + h / 2.0 * k1u, v + h / 2.0 * k1v);
        let (k3u, k3v) = f(t + h / 2.0, u + h / 2.0 * k2u, v + h / 2.0 * k2v);
        let (k4u, k4v) = f(t + h, u + h * k3u, v + h * k3v);
        u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        t += h;
        if u < 0.0 {
            // already crossed: endpoint sign is determined
            return -1.0;
        }
    }
    u
}

/// Sparse symmetric operator stored per-dof as (column, value) rows.
struct DofSystem {
    rows: Vec<Vec<(u32, f64)>>,
    diag: Vec<f64>,
    mass: Vec<f64>,
}

impl DofSystem {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = self.diag[i] * x[i];
            for &(j, w) in row {
                acc += w * x[j as usize];
            }
            out[i] = acc;
        }
    }
}

/// First Dirichlet eigenpair of a sphere mask by lumped-mass cotangent FEM:
/// Dirichlet rows (non-member and straddling-fraction nodes) are excluded,
/// then `K v = lambda M v` is solved by inverse power iteration with
/// Jacobi-preconditioned conjugate-gradient inner solves.
pub fn lambda1_fem(grid: &SphereGrid, mask: &RegionMask) -> Result<CharacteristicConstant> {
    assert_eq!(grid.dim, 2);
    let dof_of: Vec<Option<u32>> = {
        let mut map = vec![None; grid.len()];
        let mut next = 0u32;
        for i in 0..grid.len() {
            if mask.member[i] && mask.frac[i] >= 1.0 {
                map[i] = Some(next);
                next += 1;
            }
        }
        map
    };
    let ndof = dof_of.iter().filter(|d| d.is_some()).count();
    if ndof < 10 {
        return Ok(CharacteristicConstant::empty_region());
    }
    if ndof == grid.len() {
        // No Dirichlet constraint anywhere: constants are admissible.
        let mut cc = CharacteristicConstant::from_lambda(0.0, 2);
        cc.component_count = 1;
        return Ok(cc);
    }

    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); ndof];
    let mut diag = vec![0.0; ndof];
    let mut mass = vec![0.0; ndof];
    for (i, d) in dof_of.iter().enumerate() {
        if let Some(d) = d {
            mass[*d as usize] = grid.weights[i];
        }
    }
    for &(i, j, w) in &grid.edges {
        match (dof_of[i as usize], dof_of[j as usize]) {
            (Some(di), Some(dj)) => {
                diag[di as usize] += w;
                diag[dj as usize] += w;
                rows[di as usize].push((dj, -w));
                rows[dj as usize].push((di, -w));
            }
            (Some(di), None) => diag[di as usize] += w,
            (None, Some(dj)) => diag[dj as usize] += w,
            (None, None) => {}
        }
    }
    let sys = DofSystem { rows, diag, mass };

    // Inverse power iteration on K v = lambda M v, shift zero.
    let mut v: Vec<f64> = vec![1.0; ndof];
    normalize_m(&sys, &mut v);
    let mut lambda_prev = f64::INFINITY;
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    let max_outer = 500;
    for outer in 1..=max_outer {
        let rhs: Vec<f64> = (0..ndof).map(|i| sys.mass[i] * v[i]).collect();
        let mut u = v.clone();
        cg_solve(&sys, &rhs, &mut u, 4000, 1e-13);
        normalize_m(&sys, &mut u);
        // Rayleigh quotient with M-normalized u: lambda = u^T K u.
        let mut ku = vec![0.0; ndof];
        sys.apply(&u, &mut ku);
        lambda = dot(&u, &ku);
        // residual ||K u - lambda M u||_2 relative to lambda
        let mut rn = 0.0;
        for i in 0..ndof {
            let r = ku[i] - lambda * sys.mass[i] * u[i];
            rn += r * r;
        }
        residual = rn.sqrt() / lambda.max(1e-300);
        v = u;
        if (lambda_prev - lambda).abs() <= 1e-12 * lambda.max(1e-12) {
            let mut cc = CharacteristicConstant::from_lambda(lambda, 2);
            cc.component_count = component_count(grid, mask);
            cc.iterations = outer;
            cc.residual = residual;
            return Ok(cc);
        }
        lambda_prev = lambda;
    }
    if residual < 1e-8 {
        let mut cc = CharacteristicConstant::from_lambda(lambda, 2);
        cc.component_count = component_count(grid, mask);
        cc.iterations = max_outer;
        cc.residual = residual;
        return Ok(cc);
    }
    Err(Error::NonConvergence {
        iterations: max_outer,
        residual,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize_m(sys: &DofSystem, v: &mut [f64]) {
    let norm: f64 = v
        .iter()
        .zip(&sys.mass)
        .map(|(x, m)| m * x * x)
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Jacobi-preconditioned CG for the SPD Dirichlet stiffness.
fn cg_solve(sys: &DofSystem, rhs: &[f64], x: &mut [f64], max_iter: usize, tol: f64) {
    let n = rhs.len();
    let mut ax = vec![0.0; n];
    sys.apply(x, &mut ax);
    let mut r: Vec<f64> = (0..n).map(|i| rhs[i] - ax[i]).collect();
    let minv: Vec<f64> = sys.diag.iter().map(|&d| 1.0 / d.max(1e-300)).collect();
    let mut z: Vec<f64> = (0..n).map(|i| minv[i] * r[i]).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let rhs_norm = dot(rhs, rhs).sqrt().max(1e-300);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol * rhs_norm {
            break;
        }
        sys.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap).max(1e-300);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = minv[i] * r[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz.max(1e-300);
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
}

fn component_count(grid: &SphereGrid, mask: &RegionMask) -> usize {
    let n = grid.len();
    let mut seen = vec![false; n];
    let mut comps = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if !mask.member[s] || seen[s] {
            continue;
        }
        comps += 1;
        seen[s] = true;
        stack.push(s);
        while let Some(i) = stack.pop() {
            for &j in &grid.adjacency[i] {
                let j = j as usize;
                if mask.member[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    comps
}

/// Value of `a(x, r)` together with its diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ACoefficient {
    pub value: f64,
    /// Raw deficit `alpha_1 + alpha_2 - 2` before clamping (infinite when a
    /// trace is empty).
    pub deficit: f64,
    pub empty_trace: [bool; 2],
    /// Set when the raw deficit dips below the discretization slack `-5e-3`.
    pub negative_flag: bool,
    pub alphas: [f64; 2],
}

/// `a(x, r) = min(1, alpha_1 + alpha_2 - 2)` over the spherical traces; an
/// empty trace pushes the sum past the clamp, so `a = 1` exactly.
pub fn a_coefficient(
    pair: &DomainPair,
    x: &Point,
    r: f64,
    grid: &SphereGrid,
) -> Result<ACoefficient> {
    let alphas = match grid.dim {
        1 => {
            let arcs1 = refined_arcs(pair, x, r, grid, Classification::In1);
            let arcs2 = refined_arcs(pair, x, r, grid, Classification::In2);
            [arcs_alpha(&arcs1), arcs_alpha(&arcs2)]
        }
        2 => {
            let (m1, m2) = crate::sphere::trace_region(pair, x, r, grid);
            let a1 = lambda1_fem(grid, &m1)?;
            let a2 = lambda1_fem(grid, &m2)?;
            [
                if a1.empty { f64::INFINITY } else { a1.alpha },
                if a2.empty { f64::INFINITY } else { a2.alpha },
            ]
        }
        d => return Err(Error::Config(format!("grid dimension {d}"))),
    };
    let empty = [alphas[0].is_infinite(), alphas[1].is_infinite()];
    let deficit = alphas[0] + alphas[1] - 2.0;
    let negative_flag = deficit < -5e-3;
    let value = if deficit.is_infinite() {
        1.0
    } else {
        deficit.clamp(0.0, 1.0)
    };
    Ok(ACoefficient {
        value,
        deficit,
        empty_trace: empty,
        negative_flag,
        alphas,
    })
}

fn arcs_alpha(arcs: &[f64]) -> f64 {
    if arcs.is_empty() {
        f64::INFINITY
    } else {
        let theta = arcs.iter().cloned().fold(0.0f64, f64::max);
        std::f64::consts::PI / theta
    }
}

/// Maximal open arcs of `{phi : classify(x + r w(phi)) = side}` with
/// endpoints refined by bisection on the oracle; this is the analytic
/// circle path, accurate far beyond the grid step.
pub fn refined_arcs(
    pair: &DomainPair,
    x: &Point,
    r: f64,
    grid: &SphereGrid,
    side: Classification,
) -> Vec<f64> {
    let n = grid.len();
    let tau = std::f64::consts::TAU;
    let step = tau / n as f64;
    let probe = |phi: f64| -> bool {
        pair.classify(&(x + Point::new(phi.cos(), phi.sin(), 0.0) * r)) == side
    };
    let base: Vec<bool> = (0..n).map(|i| probe(i as f64 * step)).collect();
    if base.iter().all(|&b| b) {
        return vec![tau];
    }
    if !base.iter().any(|&b| b) {
        return Vec::new();
    }
    let refine = |lo: f64, hi: f64, inside_at_lo: bool| -> f64 {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..40 {
            let m = 0.5 * (a + b);
            if probe(m) == inside_at_lo {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    let mut arcs = Vec::new();
    for i in 0..n {
        if !base[i] || base[(i + n - 1) % n] {
            continue;
        }
        let mut len = 0usize;
        while len < n && base[(i + len) % n] {
            len += 1;
        }
        let start_phi = i as f64 * step;
        let end_phi = (i + len - 1) as f64 * step;
        // entering edge lies in (start-step, start], leaving in [end, end+step)
        let enter = refine(start_phi, start_phi - step, true);
        let leave = refine(end_phi, end_phi + step, true);
        arcs.push(leave - enter + if leave < enter { tau } else { 0.0 });

    }
    arcs
}

/// One row of the spectra CSV export.
pub fn spectra_csv_header() -> &'static str {
    "mask,lambda1,alpha,components,iterations,residual\n"
}

pub fn spectra_csv_row(out: &mut String, label: &str, cc: &CharacteristicConstant) {
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        label, cc.lambda1, cc.alpha, cc.component_count, cc.iterations, cc.residual
    );
}
