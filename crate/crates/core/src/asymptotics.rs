//! Semiclassical checks built on top of the stability function: Laplace-type
//! integrals over complexified orbits and over the whole stable set, the
//! half-form norm correction, growth of the moments of monomial rays, and the
//! density of states of the lattice sections.
//!
//! Every experiment follows the same shape: evaluate a quantity on a grid of
//! semiclassical parameters, rescale by the predicted power, and fit the
//! leading constant together with a first (and sometimes second) correction.
//! The fit never hides its residual, and the raw measured values are kept in
//! the report next to the rescaled ones.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::conventions::{self, PI, TAU};
use crate::error::{Error, Result};
use crate::fmath;
use crate::geometry::{rat, rat_to_f64, DelzantPolytope, Rat, UpstairsPoint, WeightSystem};
use crate::sections::{self, gauss_legendre_unit, MonomialSection, QuadratureRule};
use num_complex::Complex;

// ---------------------------------------------------------------------------
// Series fitting.

/// Result of fitting a measured series c0 + c1/x (+ c2/x²) after rescaling by
/// the model power of the grid variable.
#[derive(Debug, Clone)]
pub struct AsymptoticFit {
    /// Grid of semiclassical parameters, strictly increasing, at least four.
    pub grid: Vec<f64>,
    /// Raw measured values, one per grid point.
    pub measured: Vec<f64>,
    /// Measured values divided by the model power of the grid variable.
    pub rescaled: Vec<f64>,
    /// The exponent the model predicts for the raw series.
    pub model_exponent: f64,
    /// Log-log slope of the measured series between the two largest grid
    /// points, fitted before any model power is imposed. NaN when a value is
    /// not positive.
    pub free_exponent: f64,
    /// Fitted constant term of the rescaled series.
    pub c0: f64,
    /// Fitted 1/x coefficient.
    pub c1: f64,
    /// Fitted 1/x² coefficient when a quadratic model was requested.
    pub c2: Option<f64>,
    /// Root-mean-square misfit of the rescaled series; never hidden.
    pub residual: f64,
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 4 {
        return Err(Error::InvalidInput(
            "asymptotic grids need at least four points".into(),
        ));
    }
    for (i, &x) in grid.iter().enumerate() {
        if !x.is_finite() || x <= 0.0 {
            return Err(Error::InvalidInput(
                "asymptotic grid points must be positive and finite".into(),
            ));
        }
        if i > 0 && x <= grid[i - 1] {
            return Err(Error::InvalidInput(
                "asymptotic grids must be strictly increasing".into(),
            ));
        }
    }
    Ok(())
}

/// Gaussian elimination with partial pivoting on a k×k system, in place.
fn solve_small(a: &mut [f64], b: &mut [f64], k: usize) -> Option<Vec<f64>> {
    for c in 0..k {
        let mut piv = c;
        let mut best = fmath::abs(a[c * k + c]);
        for r in (c + 1)..k {
            let v = fmath::abs(a[r * k + c]);
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return None;
        }
        if piv != c {
            for j in 0..k {
                a.swap(c * k + j, piv * k + j);
            }
            b.swap(c, piv);
        }
        for r in (c + 1)..k {
            let f = a[r * k + c] / a[c * k + c];
            if f != 0.0 {
                for j in c..k {
                    a[r * k + j] -= f * a[c * k + j];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; k];
    for c in (0..k).rev() {
        let mut v = b[c];
        for j in (c + 1)..k {
            v -= a[c * k + j] * x[j];
        }
        x[c] = v / a[c * k + c];
    }
    Some(x)
}

/// Determinant by partial-pivot elimination of a d×d row-major matrix.
fn det_in_place(a: &mut [f64], d: usize) -> f64 {
    let mut det = 1.0;
    for c in 0..d {
        let mut piv = c;
        let mut best = fmath::abs(a[c * d + c]);
        for r in (c + 1)..d {
            let v = fmath::abs(a[r * d + c]);
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != c {
            for j in 0..d {
                a.swap(c * d + j, piv * d + j);
            }
            det = -det;
        }
        let p = a[c * d + c];
        det *= p;
        for r in (c + 1)..d {
            let f = a[r * d + c] / p;
            if f != 0.0 {
                for j in c..d {
                    a[r * d + j] -= f * a[c * d + j];
                }
            }
        }
    }
    det
}

/// Fit the rescaled series by least squares against {1, 1/x} or
/// {1, 1/x, 1/x²} and record the free log-log exponent of the raw series.
pub fn fit_series(
    grid: &[f64],
    measured: &[f64],
    rescaled: &[f64],
    model_exponent: f64,
    quadratic: bool,
) -> Result<AsymptoticFit> {
    validate_grid(grid)?;
    if measured.len() != grid.len() || rescaled.len() != grid.len() {
        return Err(Error::InvalidInput(
            "measured series and grid lengths disagree".into(),
        ));
    }
    let np = grid.len();
    let last = measured[np - 1];
    let prev = measured[np - 2];
    let free_exponent = if last > 0.0 && prev > 0.0 {
        fmath::ln(last / prev) / fmath::ln(grid[np - 1] / grid[np - 2])
    } else {
        f64::NAN
    };
    let k = if quadratic { 3 } else { 2 };
    let mut ata = vec![0.0; k * k];
    let mut atb = vec![0.0; k];
    let mut basis = vec![0.0; k];
    for (i, &x) in grid.iter().enumerate() {
        basis[0] = 1.0;
        basis[1] = 1.0 / x;
        if quadratic {
            basis[2] = 1.0 / (x * x);
        }
        for r in 0..k {
            for c in 0..k {
                ata[r * k + c] += basis[r] * basis[c];
            }
            atb[r] += basis[r] * rescaled[i];
        }
    }
    let coef = solve_small(&mut ata, &mut atb, k)
        .ok_or_else(|| Error::Numerical("degenerate least-squares system".into()))?;
    let mut ss = 0.0;
    for (i, &x) in grid.iter().enumerate() {
        let mut model = coef[0] + coef[1] / x;
        if quadratic {
            model += coef[2] / (x * x);
        }
        let r = rescaled[i] - model;
        ss += r * r;
    }
    Ok(AsymptoticFit {
        grid: grid.to_vec(),
        measured: measured.to_vec(),
        rescaled: rescaled.to_vec(),
        model_exponent,
        free_exponent,
        c0: coef[0],
        c1: coef[1],
        c2: if quadratic { Some(coef[2]) } else { None },
        residual: fmath::sqrt(ss / np as f64),
    })
}

// ---------------------------------------------------------------------------
// The complexified orbit through a level-set point.

/// Moment-coordinate labels ρ_i(ξ) = q_i e^{2⟨α_i, ξ⟩} of the point reached
/// from labels q by flowing along the imaginary torus direction ξ.
pub fn orbit_labels(ws: &WeightSystem, q: &[f64], xi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; ws.d()];
    orbit_labels_into(ws, q, xi, &mut out);
    out
}

fn orbit_labels_into(ws: &WeightSystem, q: &[f64], xi: &[f64], out: &mut [f64]) {
    for i in 0..ws.d() {
        let mut s = 0.0;
        for (a, &x) in xi.iter().enumerate() {
            s += ws.weight(i)[a] as f64 * x;
        }
        out[i] = q[i] * fmath::exp(2.0 * s);
    }
}

/// The stability function along the complexified orbit through a level-set
/// point with labels q: ψ(e^{ξ}·p) = Σ q_i + 2⟨α, ξ⟩ − Σ q_i e^{2⟨α_i, ξ⟩}.
/// It vanishes at ξ = 0 and is strictly concave along every ray.
pub fn orbit_psi(ws: &WeightSystem, q: &[f64], xi: &[f64]) -> f64 {
    let mut v = 0.0;
    for (a, &x) in xi.iter().enumerate() {
        v += 2.0 * ws.level()[a] as f64 * x;
    }
    for i in 0..ws.d() {
        let mut s = 0.0;
        for (a, &x) in xi.iter().enumerate() {
            s += ws.weight(i)[a] as f64 * x;
        }
        v += q[i] * (1.0 - fmath::exp(2.0 * s));
    }
    v
}

/// The orbit point itself: coordinates e^{⟨α_i, ξ⟩} p_i.
pub fn orbit_point(ws: &WeightSystem, p: &UpstairsPoint, xi: &[f64]) -> UpstairsPoint {
    let mut out = p.clone();
    for i in 0..ws.d() {
        let mut s = 0.0;
        for (a, &x) in xi.iter().enumerate() {
            s += ws.weight(i)[a] as f64 * x;
        }
        out[i] *= Complex::new(fmath::exp(s), 0.0);
    }
    out
}

/// Probe directions covering the faces and corners of the box [−r, r]^m,
/// each normalized to unit sup norm.
fn box_directions(m: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for a in 0..m {
        for sgn in [1.0, -1.0] {
            let mut v = vec![0.0; m];
            v[a] = sgn;
            dirs.push(v);
        }
    }
    if m > 1 {
        for mask in 0..(1u32 << m) {
            let v: Vec<f64> = (0..m)
                .map(|a| if mask >> a & 1 == 1 { 1.0 } else { -1.0 })
                .collect();
            dirs.push(v);
        }
    }
    dirs
}

/// Smallest box half-width r such that λψ ≤ −depth at every probe direction
/// scaled to the box boundary; ψ is concave along rays, so the bound persists
/// beyond the boundary.
fn localization_radius(
    ws: &WeightSystem,
    q: &[f64],
    lambda: f64,
    dirs: &[Vec<f64>],
    depth: f64,
) -> Result<f64> {
    let m = ws.torus_rank();
    let mut xi = vec![0.0; m];
    let ok = |r: f64, xi: &mut [f64]| -> bool {
        dirs.iter().all(|v| {
            for a in 0..m {
                xi[a] = r * v[a];
            }
            lambda * orbit_psi(ws, q, xi) <= -depth
        })
    };
    let mut r = 1.0;
    if ok(r, &mut xi) {
        while r > 1e-3 && ok(r * core::f64::consts::FRAC_1_SQRT_2, &mut xi) {
            r *= core::f64::consts::FRAC_1_SQRT_2;
        }
    } else {
        loop {
            r *= core::f64::consts::SQRT_2;
            if r > 1e6 {
                return Err(Error::Numerical(
                    "the orbit integral fails to localize along the imaginary directions".into(),
                ));
            }
            if ok(r, &mut xi) {
                break;
            }
        }
    }
    Ok(r)
}

/// Composite Gauss–Legendre nodes and weights on [a, b].
fn composite_nodes(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (n1, w1) = gauss_legendre_unit(order);
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        for j in 0..order {
            nodes.push(lo + width * n1[j]);
            weights.push(width * w1[j]);
        }
    }
    (nodes, weights)
}

fn odometer_next(idx: &mut [usize], counts: &[usize]) -> bool {
    for c in 0..idx.len() {
        idx[c] += 1;
        if idx[c] < counts[c] {
            return true;
        }
        idx[c] = 0;
    }
    false
}

/// det Γ(ρ) with Γ_ab = Σ_i α_ia α_ib ρ_i, using a caller-provided m×m
/// scratch buffer.
fn gamma_det(ws: &WeightSystem, rho: &[f64], buf: &mut [f64]) -> f64 {
    let m = ws.torus_rank();
    for v in buf.iter_mut() {
        *v = 0.0;
    }
    for i in 0..ws.d() {
        let w = ws.weight(i);
        for a in 0..m {
            for b in 0..m {
                buf[a * m + b] += w[a] as f64 * w[b] as f64 * rho[i];
            }
        }
    }
    det_in_place(buf, m)
}

/// Laplace integral ∫ f e^{λψ} over the complexified-orbit slice through the
/// level-set point p, for each λ in the grid. The Riemannian volume of the
/// slice is 2^{m/2} √det Γ(ρ(ξ)) dξ. After multiplying by (λ/π)^{m/2} the
/// series tends to f(p) with a 1/λ correction.
pub fn laplace_orbit(
    ws: &WeightSystem,
    p: &UpstairsPoint,
    f: &dyn Fn(&UpstairsPoint) -> f64,
    lambdas: &[f64],
) -> Result<AsymptoticFit> {
    let d = ws.d();
    let m = ws.torus_rank();
    if p.len() != d {
        return Err(Error::InvalidInput("point has the wrong length".into()));
    }
    validate_grid(lambdas)?;
    let mom = ws.moment_map(p);
    let mut residual = 0.0;
    for a in 0..m {
        residual = fmath::max(residual, fmath::abs(mom[a]));
    }
    let mut scale = 1.0;
    for a in 0..m {
        scale = fmath::max(scale, fmath::abs(ws.level()[a] as f64));
    }
    let tol = 1e-8 * scale;
    if residual > tol {
        return Err(Error::OffLevelSet { residual, tol });
    }
    let q: Vec<f64> = (0..d).map(|i| p[i].norm_sqr()).collect();
    let dirs = box_directions(m);
    let (panels, order) = match m {
        1 => (12, 12),
        2 => (10, 10),
        _ => (6, 8),
    };
    let mut measured = Vec::with_capacity(lambdas.len());
    let mut rescaled = Vec::with_capacity(lambdas.len());
    let mut gbuf = vec![0.0; m * m];
    let mut labels = vec![0.0; d];
    let mut xi = vec![0.0; m];
    for &lam in lambdas {
        let r = localization_radius(ws, &q, lam, &dirs, 60.0)?;
        let (nodes, wts) = composite_nodes(-r, r, panels, order);
        let counts = vec![nodes.len(); m];
        let mut idx = vec![0usize; m];
        let mut acc = 0.0;
        loop {
            let mut w = 1.0;
            for a in 0..m {
                xi[a] = nodes[idx[a]];
                w *= wts[idx[a]];
            }
            let e = lam * orbit_psi(ws, &q, &xi);
            if e > -745.0 {
                orbit_labels_into(ws, &q, &xi, &mut labels);
                let det = gamma_det(ws, &labels, &mut gbuf);
                let x = orbit_point(ws, p, &xi);
                acc += w * f(&x) * fmath::exp(e) * fmath::sqrt(fmath::max(det, 0.0));
            }
            if !odometer_next(&mut idx, &counts) {
                break;
            }
        }
        let val = conventions::riemannian_orbit_factor(m) * acc;
        measured.push(val);
        rescaled.push(val * fmath::powf(lam / PI, m as f64 / 2.0));
    }
    fit_series(lambdas, &measured, &rescaled, -(m as f64) / 2.0, false)
}

// ---------------------------------------------------------------------------
// Laplace integral over the whole stable set.

/// Riemannian volume of the zero level set: 2^{m/2} (2π)^n ∫_Δ V dσ with
/// V the stored orbit-volume function.
pub fn level_set_volume(poly: &DelzantPolytope, rel_tol: f64) -> Result<f64> {
    let ws = poly.weight_system();
    let rule = QuadratureRule::new(poly, 1, rel_tol)?;
    let v = rule.integrate(&mut |q| sections::volume_function_unchecked(ws, q))?;
    Ok(conventions::riemannian_orbit_factor(ws.torus_rank())
        * conventions::reduced_measure_factor(ws.quotient_dim())
        * v.value)
}

/// Laplace integral over the stable set together with the independently
/// computed level-set volume its leading coefficient must reproduce.
#[derive(Debug, Clone)]
pub struct LaplaceTotal {
    pub fit: AsymptoticFit,
    pub level_volume: f64,
}

/// ∫_{M_st} e^{λψ} dμ for each λ, computed by splitting the stable set into
/// the level set (outer integral over the polytope) and the imaginary orbit
/// directions (inner integral with the exact change-of-variables Jacobian).
/// Rescaled by (λ/π)^{m/2} the series tends to the level-set volume.
pub fn laplace_total(poly: &DelzantPolytope, lambdas: &[f64]) -> Result<LaplaceTotal> {
    let ws = poly.weight_system();
    if ws.polarizer().is_none() {
        return Err(Error::UnpolarizedWeightSystem);
    }
    validate_grid(lambdas)?;
    let d = ws.d();
    let m = ws.torus_rank();
    let n = ws.quotient_dim();
    let chart = poly.base_chart()?;
    // Constant differential of the affine chart, one column per free
    // coordinate.
    let t0 = chart.ambient_from_chart(&vec![0.0; n], 1.0);
    let mut dmat = vec![0.0; d * n];
    for c in 0..n {
        let mut u = vec![0.0; n];
        u[c] = 1.0;
        let tc = chart.ambient_from_chart(&u, 1.0);
        for i in 0..d {
            dmat[i * n + c] = tc[i] - t0[i];
        }
    }
    let outer_tol = match n {
        0 | 1 => 1e-8,
        2 => 1e-6,
        _ => 1e-5,
    };
    let rule = QuadratureRule::new(poly, 1, outer_tol)?;
    let dirs = box_directions(m);
    let (panels, order) = match m {
        1 => (8, 10),
        2 => (10, 10),
        _ => (6, 8),
    };
    let mut measured = Vec::with_capacity(lambdas.len());
    let mut rescaled = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let mut inner_err: Option<Error> = None;
        let mut mbuf = vec![0.0; d * d];
        let mut xi = vec![0.0; m];
        let mut rho = vec![0.0; d];
        let mut ee = vec![0.0; d];
        let mut integrand = |q: &[f64]| -> f64 {
            let r = match localization_radius(ws, q, lam, &dirs, 50.0) {
                Ok(r) => r,
                Err(e) => {
                    if inner_err.is_none() {
                        inner_err = Some(e);
                    }
                    return 0.0;
                }
            };
            let (nodes, wts) = composite_nodes(-r, r, panels, order);
            let counts = vec![nodes.len(); m];
            let mut idx = vec![0usize; m];
            let mut acc = 0.0;
            loop {
                let mut w = 1.0;
                for a in 0..m {
                    xi[a] = nodes[idx[a]];
                    w *= wts[idx[a]];
                }
                let mut psi = 0.0;
                for a in 0..m {
                    psi += 2.0 * ws.level()[a] as f64 * xi[a];
                }
                for i in 0..d {
                    let mut s = 0.0;
                    for a in 0..m {
                        s += ws.weight(i)[a] as f64 * xi[a];
                    }
                    ee[i] = fmath::exp(2.0 * s);
                    rho[i] = q[i] * ee[i];
                    psi += q[i] - rho[i];
                }
                let e = lam * psi;
                if e > -745.0 {
                    for i in 0..d {
                        for c in 0..n {
                            mbuf[i * d + c] = ee[i] * dmat[i * n + c];
                        }
                        for a in 0..m {
                            mbuf[i * d + n + a] = 2.0 * rho[i] * ws.weight(i)[a] as f64;
                        }
                    }
                    let det = det_in_place(&mut mbuf, d);
                    acc += w * fmath::exp(e) * fmath::abs(det);
                }
                if !odometer_next(&mut idx, &counts) {
                    break;
                }
            }
            acc
        };
        let res = rule.integrate(&mut integrand)?;
        if let Some(e) = inner_err {
            return Err(e);
        }
        let val = fmath::powi(TAU, d as i32) * res.value;
        measured.push(val);
        rescaled.push(val * fmath::powf(lam / PI, m as f64 / 2.0));
    }
    let fit = fit_series(lambdas, &measured, &rescaled, -(m as f64) / 2.0, false)?;
    let vol_tol = match n {
        0 | 1 => 1e-10,
        2 => 1e-8,
        _ => 1e-7,
    };
    Ok(LaplaceTotal {
        fit,
        level_volume: level_set_volume(poly, vol_tol)?,
    })
}

// ---------------------------------------------------------------------------
// Half-form correction.

fn ray_exponents(ray: &[Rat], k: u32) -> Result<Vec<i64>> {
    let mut out = Vec::with_capacity(ray.len());
    for &b in ray {
        let v = b * rat(k as i128);
        if !v.is_integer() {
            return Err(Error::InvalidInput(format!(
                "the exponent ray misses the lattice at power {}",
                k
            )));
        }
        let t = v.to_integer();
        if t < 0 {
            return Err(Error::InvalidInput(
                "exponent rays must be nonnegative".into(),
            ));
        }
        out.push(t as i64);
    }
    Ok(out)
}

/// Ratio of the upstairs norm of the monomial ray section at power k to its
/// downstairs norm taken against the orbit-volume-weighted measure, with the
/// half-form rescaling (k/π-powers cancel exactly along the ray). The ratio
/// tends to 1 with a C/k correction; the fit reports C.
pub fn halfform_ratio(poly: &DelzantPolytope, ray: &[Rat], ks: &[u32]) -> Result<AsymptoticFit> {
    let ws = poly.weight_system();
    let d = ws.d();
    let m = ws.torus_rank();
    if ray.len() != d {
        return Err(Error::InvalidInput("ray has the wrong length".into()));
    }
    let grid: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    validate_grid(&grid)?;
    let mut ratios = Vec::with_capacity(ks.len());
    for &k in ks {
        let mexp = ray_exponents(ray, k)?;
        let sec = MonomialSection::new(ws, mexp.clone(), k)?;
        let rule = QuadratureRule::new(poly, k, 1e-10)?;
        let down = rule.integrate_log(&mut |q| {
            sections::log_pointwise_norm_downstairs(&sec, q)
                + fmath::ln(sections::volume_function_unchecked(ws, q))
        })?;
        let mut log_up = 0.0;
        for &mi in &mexp {
            log_up += fmath::ln(PI) + fmath::ln_factorial(mi as u64);
        }
        let log_ratio = log_up + 0.5 * m as f64 * fmath::ln(TAU) - d as f64 * fmath::ln(PI)
            - down.log_value;
        ratios.push(fmath::exp(log_ratio));
    }
    // The series starts at small k where the 1/k^2 term is visible, so the
    // fit carries it; the 1/k bound itself is checked by callers from the
    // measured values.
    fit_series(&grid, &ratios, &ratios, 0.0, true)
}

// ---------------------------------------------------------------------------
// Moments of a monomial ray.

/// Moment growth report: the rescaled l-th moments, their fitted limit, and
/// the empirical versus reference value of the per-ray constant.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub fit: AsymptoticFit,
    /// Predicted limit of the rescaled series: c_ref^{l−1} / l^{d/2}.
    pub limit: f64,
    /// Constant recovered from the fitted c0; NaN for l = 1.
    pub c_empirical: f64,
    /// Π_i (8π²β_i)^{−1/2} from the ray alone.
    pub c_reference: f64,
    /// Upstairs/downstairs transfer ratios per grid point when requested;
    /// they tend to 1.
    pub transfer: Option<Vec<f64>>,
}

/// l-th moments of the normalized monomial ray section m = Nβ at power N.
/// Upstairs they have a closed factorial form; rescaled by (N/π)^{d(l−1)/2}
/// they tend to c^{l−1}/l^{d/2}. With `with_transfer` the same moments are
/// recomputed downstairs against the orbit-volume-weighted measure and the
/// ratio of the two routes is reported per grid point.
pub fn moment_limits(
    poly: &DelzantPolytope,
    ray: &[Rat],
    l: u32,
    ns: &[u32],
    with_transfer: bool,
) -> Result<MomentReport> {
    if l == 0 {
        return Err(Error::InvalidInput("the moment order must be positive".into()));
    }
    let ws = poly.weight_system();
    let d = ws.d();
    let m = ws.torus_rank();
    if ray.len() != d {
        return Err(Error::InvalidInput("ray has the wrong length".into()));
    }
    for &b in ray {
        if b <= rat(0) {
            return Err(Error::InvalidInput(
                "moment rays must have strictly positive entries".into(),
            ));
        }
    }
    let grid: Vec<f64> = ns.iter().map(|&nn| nn as f64).collect();
    validate_grid(&grid)?;
    let lf = l as f64;
    let df = d as f64;
    let exponent = df * (lf - 1.0) / 2.0;
    let mut measured = Vec::with_capacity(ns.len());
    let mut rescaled = Vec::with_capacity(ns.len());
    let mut transfer = Vec::new();
    for &nn in ns {
        let mexp = ray_exponents(ray, nn)?;
        MonomialSection::new(ws, mexp.clone(), nn)?;
        let nf = nn as f64;
        let mut logm = (1.0 - lf) * df * fmath::ln(2.0);
        for &mi in &mexp {
            let lm = l as i64 * mi;
            logm += fmath::ln(PI) + fmath::ln_factorial(lm as u64)
                - (lm as f64 + 1.0) * fmath::ln(lf * nf);
            logm -= lf
                * (fmath::ln(PI) + fmath::ln_factorial(mi as u64)
                    - (mi as f64 + 1.0) * fmath::ln(nf));
        }
        measured.push(fmath::exp(logm));
        rescaled.push(fmath::exp(logm - exponent * (fmath::ln(nf) - fmath::ln(PI))));
        if with_transfer {
            let rule = QuadratureRule::new(poly, nn, 1e-8)?;
            let down = rule.integrate_log(&mut |q| {
                let mut v = fmath::ln(sections::volume_function_unchecked(ws, q));
                for i in 0..d {
                    if mexp[i] > 0 {
                        if q[i] <= 0.0 {
                            return f64::NEG_INFINITY;
                        }
                        v += lf * mexp[i] as f64 * fmath::ln(q[i]);
                    }
                    v -= lf * q[i];
                }
                v
            })?;
            let mut log_up = df * fmath::ln(2.0);
            for &mi in &mexp {
                let lm = l as i64 * mi;
                log_up += fmath::ln(PI) + fmath::ln_factorial(lm as u64)
                    - (lm as f64 + 1.0) * fmath::ln(lf);
            }
            let log_pred = df * (fmath::ln(2.0) + fmath::ln(PI))
                - 0.5 * m as f64 * fmath::ln(TAU * lf)
                + down.log_value;
            transfer.push(fmath::exp(log_up - log_pred));
        }
    }
    let fit = fit_series(&grid, &measured, &rescaled, exponent, false)?;
    let mut c_reference = 1.0;
    for &b in ray {
        c_reference *= fmath::powf(8.0 * PI * PI * rat_to_f64(b), -0.5);
    }
    let limit = fmath::powf(c_reference, lf - 1.0) / fmath::powf(lf, df / 2.0);
    let c_empirical = if l >= 2 {
        fmath::powf(fit.c0 * fmath::powf(lf, df / 2.0), 1.0 / (lf - 1.0))
    } else {
        f64::NAN
    };
    Ok(MomentReport {
        fit,
        limit,
        c_empirical,
        c_reference,
        transfer: if with_transfer { Some(transfer) } else { None },
    })
}

// ---------------------------------------------------------------------------
// Density of states.

/// Polynomial observable in the moment-coordinate labels of the reference
/// polytope (the level-1 dilate).
#[derive(Debug, Clone)]
pub struct MomentPolynomial {
    /// Terms (exponent vector over the d labels, coefficient).
    pub terms: Vec<(Vec<u32>, f64)>,
}

impl MomentPolynomial {
    pub fn constant(d: usize, c: f64) -> Self {
        MomentPolynomial {
            terms: vec![(vec![0; d], c)],
        }
    }

    /// The i-th label as an observable.
    pub fn coordinate(d: usize, i: usize) -> Self {
        let mut e = vec![0; d];
        e[i] = 1;
        MomentPolynomial {
            terms: vec![(e, 1.0)],
        }
    }

    /// The i-th label raised to a power.
    pub fn coordinate_power(d: usize, i: usize, p: u32) -> Self {
        let mut e = vec![0; d];
        e[i] = p;
        MomentPolynomial {
            terms: vec![(e, 1.0)],
        }
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        self.eval_scaled(q, 1.0)
    }

    /// Evaluate at the rescaled point (s·q_1, …, s·q_d) without allocating.
    pub fn eval_scaled(&self, q: &[f64], s: f64) -> f64 {
        let mut v = 0.0;
        for (e, c) in &self.terms {
            let mut t = *c;
            for (i, &p) in e.iter().enumerate() {
                for _ in 0..p {
                    t *= s * q[i];
                }
            }
            v += t;
        }
        v
    }
}

/// Density-of-states report: the measure of the observable per power N,
/// fitted two orders below the leading one, with the two trace routes whose
/// leading coefficients must agree.
#[derive(Debug, Clone)]
pub struct DosReport {
    /// μ_N(f) = Σ over lattice sections of the weighted average of f, fitted
    /// as a_n + a_{n−1}/N + a_{n−2}/N² after dividing by N^n.
    pub fit: AsymptoticFit,
    /// ∫_Δ f dσ computed by plain quadrature, independent of the sections;
    /// equals the fitted leading coefficient.
    pub independent_leading: f64,
    /// Upstairs trace route: Gaussian-orthonormal sections, exact factorial
    /// evaluation.
    pub g_trace_fit: AsymptoticFit,
    /// Reduced trace route against the orbit-volume-weighted measure.
    pub reduced_volume_fit: AsymptoticFit,
    /// Number of lattice sections per grid point.
    pub counts: Vec<usize>,
}

/// Density of states of the lattice sections at powers N against a
/// polynomial observable. All three routes are ratio-normalized, so no
/// overall measure constants enter.
pub fn density_of_states(
    poly: &DelzantPolytope,
    f: &MomentPolynomial,
    ns: &[u32],
) -> Result<DosReport> {
    let ws = poly.weight_system();
    let d = ws.d();
    let m = ws.torus_rank();
    let n = ws.quotient_dim();
    for (e, _) in &f.terms {
        if e.len() != d {
            return Err(Error::InvalidInput(
                "observable exponents have the wrong length".into(),
            ));
        }
    }
    let grid: Vec<f64> = ns.iter().map(|&nn| nn as f64).collect();
    validate_grid(&grid)?;
    let tol = if n <= 1 { 1e-9 } else { 1e-6 };
    let mut mu = Vec::with_capacity(ns.len());
    let mut g_trace = Vec::with_capacity(ns.len());
    let mut red_trace = Vec::with_capacity(ns.len());
    let mut counts = Vec::with_capacity(ns.len());
    let mut gbuf = vec![0.0; m * m];
    for &nn in ns {
        let lattice = poly.lattice_points(nn)?;
        counts.push(lattice.len());
        let rule = QuadratureRule::new(poly, nn, tol)?;
        let nf = nn as f64;
        let mut mu_sum = 0.0;
        let mut red_sum = 0.0;
        let mut g_sum = 0.0;
        for mvec in &lattice {
            let sec = MonomialSection::new(ws, mvec.clone(), nn)?;
            mu_sum += rule.weighted_mean(
                &mut |q| sections::log_pointwise_norm_downstairs(&sec, q),
                &mut |q| f.eval_scaled(q, 1.0 / nf),
            )?;
            red_sum += rule.weighted_mean(
                &mut |q| {
                    let lw = sections::log_pointwise_norm_downstairs(&sec, q);
                    if lw == f64::NEG_INFINITY {
                        lw
                    } else {
                        let det = gamma_det(ws, q, &mut gbuf);
                        if det <= 0.0 {
                            f64::NEG_INFINITY
                        } else {
                            lw + 0.5 * fmath::ln(det)
                        }
                    }
                },
                &mut |q| f.eval_scaled(q, 1.0 / nf),
            )?;
            let mut t = 0.0;
            for (e, c) in &f.terms {
                let mut term = *c;
                for i in 0..d {
                    for j in 0..e[i] {
                        term *= (mvec[i] as f64 + 1.0 + j as f64) / nf;
                    }
                }
                t += term;
            }
            g_sum += t;
        }
        mu.push(mu_sum);
        red_trace.push(red_sum);
        g_trace.push(g_sum);
    }
    let scale = |series: &[f64]| -> Vec<f64> {
        series
            .iter()
            .zip(ns.iter())
            .map(|(&v, &nn)| v / fmath::powi(nn as f64, n as i32))
            .collect()
    };
    let fit = fit_series(&grid, &mu, &scale(&mu), n as f64, true)?;
    let g_fit = fit_series(&grid, &g_trace, &scale(&g_trace), n as f64, true)?;
    let red_fit = fit_series(&grid, &red_trace, &scale(&red_trace), n as f64, true)?;
    let rule1 = QuadratureRule::new(poly, 1, if n <= 1 { 1e-10 } else { 1e-8 })?;
    let independent = rule1.integrate(&mut |q| f.eval(q))?.value;
    Ok(DosReport {
        fit,
        independent_leading: independent,
        g_trace_fit: g_fit,
        reduced_volume_fit: red_fit,
        counts,
    })
}

// ---------------------------------------------------------------------------
// Upstairs/downstairs transfer of the density of states.

/// Transfer report for the density of states: per-section and summed ratios
/// of the reduced-side integrals to the cutoff upstairs integrals, divided by
/// the measure constant so both series tend to 1.
#[derive(Debug, Clone)]
pub struct TransferReport {
    pub grid: Vec<f64>,
    /// π^{−m}: the constant the plain-measure ratio lands on; the reported
    /// ratios are already divided by it.
    pub measure_constant: f64,
    /// Ratio for the single ray section m = Nβ per grid point.
    pub section_ratios: Vec<f64>,
    /// Ratio for the sum over all lattice sections per grid point.
    pub summed_ratios: Vec<f64>,
    /// Moment-distance radius where the cutoff bump reaches zero.
    pub cutoff_radius: f64,
    /// Relative change of the largest-N upstairs integral when the cutoff
    /// radius is moved by half; decays exponentially in N.
    pub cutoff_sensitivity: f64,
}

/// Euclidean distance of the scaled moment of the labels from the level.
fn moment_distance(ws: &WeightSystem, rho: &[f64], scale: f64) -> f64 {
    let m = ws.torus_rank();
    let mut s2 = 0.0;
    for a in 0..m {
        let mut v = 0.0;
        for i in 0..ws.d() {
            v += rho[i] * ws.weight(i)[a] as f64;
        }
        let diff = v / scale - ws.level()[a] as f64;
        s2 += diff * diff;
    }
    fmath::sqrt(s2)
}

/// Quintic bump in the moment distance: 1 on [0, 0.75 r], 0 beyond r.
fn smooth_cutoff(x: f64, r: f64) -> f64 {
    let inner = 0.75 * r;
    if x <= inner {
        1.0
    } else if x >= r {
        0.0
    } else {
        let s = (r - x) / (r - inner);
        s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// Moment distance at which the orbit stability function first reaches −1,
/// probed along the torus axes from the polytope's barycentric label. The
/// cutoff bump is supported inside 1.5 times this radius, so the stability
/// function is below −1 outside the bump.
fn cutoff_radius(poly: &DelzantPolytope) -> Result<f64> {
    let ws = poly.weight_system();
    let m = ws.torus_rank();
    let verts = poly.vertices();
    let mut q = vec![0.0; ws.d()];
    for v in verts {
        let c = v.coords_f64();
        for i in 0..ws.d() {
            q[i] += c[i] / verts.len() as f64;
        }
    }
    let mut radius = f64::INFINITY;
    let mut xi = vec![0.0; m];
    for a in 0..m {
        for sgn in [1.0, -1.0] {
            for x in xi.iter_mut() {
                *x = 0.0;
            }
            let mut hi = 1.0;
            xi[a] = sgn * hi;
            while orbit_psi(ws, &q, &xi) > -1.0 {
                hi *= 2.0;
                xi[a] = sgn * hi;
                if hi > 1e6 {
                    return Err(Error::Numerical(
                        "the stability function does not reach -1 along a torus axis".into(),
                    ));
                }
            }
            let mut lo = 0.0;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                xi[a] = sgn * mid;
                if orbit_psi(ws, &q, &xi) > -1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            xi[a] = sgn * hi;
            let labels = orbit_labels(ws, &q, &xi);
            let dist = moment_distance(ws, &labels, 1.0);
            if dist < radius {
                radius = dist;
            }
        }
    }
    Ok(radius)
}

/// ln ∫ Π ρ_i^{m_i} e^{−Σρ} g(ρ) dρ over the positive orthant, by windowed
/// composite Gauss–Legendre quadrature with the factorial peak shifted out.
/// g must be nonnegative.
fn orthant_log_integral(mexp: &[i64], g: &mut dyn FnMut(&[f64]) -> f64) -> Result<f64> {
    let d = mexp.len();
    let mut nodes = Vec::with_capacity(d);
    let mut weights = Vec::with_capacity(d);
    for &mi in mexp {
        let mf = mi as f64;
        let half = 10.0 * fmath::sqrt(mf + 1.0) + 5.0;
        let lo = fmath::max(0.0, mf - half);
        let hi = mf + half;
        let (xs, ws) = composite_nodes(lo, hi, 6, 16);
        nodes.push(xs);
        weights.push(ws);
    }
    let mut shift = 0.0;
    for &mi in mexp {
        if mi > 0 {
            let mf = mi as f64;
            shift += mf * fmath::ln(mf) - mf;
        }
    }
    let counts: Vec<usize> = nodes.iter().map(|v| v.len()).collect();
    let mut idx = vec![0usize; d];
    let mut rho = vec![0.0; d];
    let mut acc = 0.0;
    loop {
        let mut w = 1.0;
        let mut logdens = -shift;
        for i in 0..d {
            let x = nodes[i][idx[i]];
            rho[i] = x;
            w *= weights[i][idx[i]];
            logdens -= x;
            if mexp[i] > 0 {
                if x <= 0.0 {
                    logdens = f64::NEG_INFINITY;
                } else {
                    logdens += mexp[i] as f64 * fmath::ln(x);
                }
            }
        }
        if logdens > -745.0 {
            let gv = g(&rho);
            if gv != 0.0 {
                acc += w * fmath::exp(logdens) * gv;
            }
        }
        if !odometer_next(&mut idx, &counts) {
            break;
        }
    }
    if acc <= 0.0 {
        return Err(Error::Numerical(
            "the cutoff upstairs integral is not positive".into(),
        ));
    }
    Ok(shift + fmath::ln(acc))
}

/// One section's transfer pair: (reduced-side weighted average of f,
/// rescaled cutoff upstairs integral normalized by the reduced norm). Their
/// ratio tends to the measure constant π^{−m}.
fn transfer_pair(
    ws: &WeightSystem,
    rule1: &QuadratureRule,
    f: &MomentPolynomial,
    mexp: &[i64],
    nn: u32,
    chi_radius: f64,
) -> Result<(f64, f64)> {
    let d = ws.d();
    let m = ws.torus_rank();
    let n = ws.quotient_dim();
    let nf = nn as f64;
    let fold = |mexp: &[i64], q: &[f64]| -> f64 {
        let mut v = 0.0;
        for i in 0..d {
            v -= nf * q[i];
            if mexp[i] > 0 {
                if q[i] <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                v += mexp[i] as f64 * fmath::ln(q[i]);
            }
        }
        v
    };
    let den = rule1.integrate_log(&mut |q| fold(mexp, q))?;
    let num = rule1.integrate_log(&mut |q| {
        let base = fold(mexp, q);
        if base == f64::NEG_INFINITY {
            return base;
        }
        let fv = f.eval(q);
        if fv <= 0.0 {
            f64::NEG_INFINITY
        } else {
            base + fmath::ln(fv)
        }
    })?;
    let a = fmath::exp(num.log_value - den.log_value);
    let mut gbuf = vec![0.0; m * m];
    let mut qbar = vec![0.0; d];
    let orbit_const =
        conventions::riemannian_orbit_factor(m) * conventions::orbit_volume_prefactor(m);
    let s_up = orthant_log_integral(mexp, &mut |rho| {
        for i in 0..d {
            qbar[i] = rho[i] / nf;
        }
        let x = moment_distance(ws, rho, nf);
        let chi = smooth_cutoff(x, chi_radius);
        if chi == 0.0 {
            return 0.0;
        }
        let det = gamma_det(ws, &qbar, &mut gbuf);
        if det <= 0.0 {
            return 0.0;
        }
        let fv = f.eval(&qbar);
        if fv <= 0.0 {
            return 0.0;
        }
        chi * fv / (orbit_const * fmath::sqrt(det))
    })?;
    let total_m: f64 = mexp.iter().map(|&mi| mi as f64).sum();
    let ln_b = 0.5 * m as f64 * (fmath::ln(PI) - fmath::ln(nf))
        + d as f64 * (fmath::ln(2.0) + fmath::ln(PI))
        + s_up
        - n as f64 * fmath::ln(TAU)
        - (n as f64 + total_m) * fmath::ln(nf)
        - den.log_value;
    Ok((a, fmath::exp(ln_b)))
}

/// Transfer of the density of states between the quotient and the stable
/// set: per-section and summed comparisons of the reduced-side averages with
/// the cutoff upstairs integrals, rescaled by (N/π)^{m/2}. The observable
/// must be positive on the interior of the polytope.
pub fn dos_transfer(
    poly: &DelzantPolytope,
    f: &MomentPolynomial,
    ray: &[Rat],
    ns: &[u32],
) -> Result<TransferReport> {
    let ws = poly.weight_system();
    let d = ws.d();
    let m = ws.torus_rank();
    if ray.len() != d {
        return Err(Error::InvalidInput("ray has the wrong length".into()));
    }
    let grid: Vec<f64> = ns.iter().map(|&nn| nn as f64).collect();
    validate_grid(&grid)?;
    let chi_radius = 1.5 * cutoff_radius(poly)?;
    let rule1 = QuadratureRule::new(poly, 1, 1e-9)?;
    let mconst = fmath::powi(PI, -(m as i32));
    let mut section_ratios = Vec::with_capacity(ns.len());
    let mut summed_ratios = Vec::with_capacity(ns.len());
    for &nn in ns {
        let mray = ray_exponents(ray, nn)?;
        MonomialSection::new(ws, mray.clone(), nn)?;
        let (a, b) = transfer_pair(ws, &rule1, f, &mray, nn, chi_radius)?;
        section_ratios.push(a / b / mconst);
        let lattice = poly.lattice_points(nn)?;
        let mut asum = 0.0;
        let mut bsum = 0.0;
        for mvec in &lattice {
            let (ai, bi) = transfer_pair(ws, &rule1, f, mvec, nn, chi_radius)?;
            asum += ai;
            bsum += bi;
        }
        summed_ratios.push(asum / bsum / mconst);
    }
    let nmax = *ns.last().unwrap();
    let mray = ray_exponents(ray, nmax)?;
    let (_, b_ref) = transfer_pair(ws, &rule1, f, &mray, nmax, chi_radius)?;
    let (_, b_alt) = transfer_pair(ws, &rule1, f, &mray, nmax, 1.5 * chi_radius)?;
    Ok(TransferReport {
        grid,
        measure_constant: mconst,
        section_ratios,
        summed_ratios,
        cutoff_radius: chi_radius,
        cutoff_sensitivity: fmath::abs(b_alt - b_ref) / b_ref,
    })
}
