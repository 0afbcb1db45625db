//! Stability functions: the logarithmic obstruction to a point lying on the
//! zero level of the shifted moment map, computed several independent ways.
//!
//! For a torus datum the value at a stable point z is F(ξ*) − F(0), where F
//! is the norm functional of the complexified action and ξ* its minimizer.
//! The same number admits a closed form through the solved group element, a
//! chart-aligned form on the canonical affine containing z, a monomial form
//! through any lattice point of the level polytope supported inside the
//! support of z, and an integral form along the projection flow. These
//! different arithmetic paths are kept separate on purpose: their agreement
//! is one of the main correctness checks of the crate.
//!
//! The matrix families (Grassmannians, chains, polygon stars) get a closed
//! form plus a definition path through invariant sections and the
//! multiplicative solvers.

use crate::error::{Error, Result};
use crate::fmath;
use crate::geometry::{rat, rat_to_f64, DelzantPolytope, Rat, UpstairsPoint, WeightSystem};
use crate::kempf_ness::{ode_psi, solve_abelian, solve_grassmannian, KempfNessSolution};
use crate::matrix_varieties::{
    composite_map, pd_logdet, polygon_pair_section_log_norm2, polygon_pairing, quiver_moment,
    solve_quiver, subsets, MatrixChainSpec, PairingScheme, PolygonLevels, QuiverSpec,
};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex;

type CMat = DMatrix<Complex<f64>>;

const SOLVE_TOL: f64 = 1e-12;
const SOLVE_ITERS: usize = 200;

/// Which arithmetic path produced a stability value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMethod {
    Definition,
    ToricClosedForm,
    AffineChart,
    Monomial,
    Ode,
    Matrix,
}

impl EvalMethod {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMethod::Definition => "definition",
            EvalMethod::ToricClosedForm => "toric-closed-form",
            EvalMethod::AffineChart => "affine-chart",
            EvalMethod::Monomial => "monomial",
            EvalMethod::Ode => "ode",
            EvalMethod::Matrix => "matrix",
        }
    }
}

impl core::fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// A stability value together with solver diagnostics.
#[derive(Debug, Clone)]
pub struct StabilityEvaluation {
    pub psi: f64,
    pub method: EvalMethod,
    /// Shifted-moment norm at the solved point backing the value.
    pub residual: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
    /// Value of the corresponding printed display where that display
    /// disagrees with the implemented one; reported, never returned as psi.
    pub printed_literal: Option<f64>,
}

fn q_vec(z: &UpstairsPoint) -> Vec<f64> {
    z.iter().map(|v| v.norm_sqr()).collect()
}

fn norm2(z: &UpstairsPoint) -> f64 {
    z.iter().map(|v| v.norm_sqr()).sum()
}

fn solved(ws: &WeightSystem, z: &UpstairsPoint) -> Result<KempfNessSolution> {
    let sol = solve_abelian(ws, z, SOLVE_TOL, SOLVE_ITERS)?;
    if !sol.converged {
        return Err(Error::UnstablePoint);
    }
    Ok(sol)
}

/// Particular rational solution ξ₀ of ⟨α_i, ξ₀⟩ = 1 for all i, if one
/// exists; free coordinates are set to zero. Existence of a real solution
/// is equivalent to existence of a rational one since the data is integer.
fn diagonal_direction(ws: &WeightSystem) -> Option<Vec<Rat>> {
    let d = ws.d();
    let m = ws.torus_rank();
    let mut rows: Vec<Vec<Rat>> = (0..d)
        .map(|i| {
            let mut r: Vec<Rat> = ws.weight(i).iter().map(|&w| rat(w as i128)).collect();
            r.push(rat(1));
            r
        })
        .collect();
    let mut pivot_cols = Vec::new();
    let mut row = 0;
    for col in 0..m {
        let Some(p) = (row..d).find(|&r| rows[r][col] != rat(0)) else {
            continue;
        };
        rows.swap(row, p);
        let inv = rows[row][col];
        for c in col..=m {
            rows[row][c] /= inv;
        }
        for r in 0..d {
            if r != row && rows[r][col] != rat(0) {
                let f = rows[r][col];
                for c in col..=m {
                    let sub = f * rows[row][c];
                    rows[r][c] -= sub;
                }
            }
        }
        pivot_cols.push(col);
        row += 1;
        if row == d {
            break;
        }
    }
    // Consistency: all non-pivot rows must have vanished entirely.
    for r in row..d {
        if rows[r][m] != rat(0) {
            return None;
        }
    }
    let mut xi = vec![rat(0); m];
    for (r, &c) in pivot_cols.iter().enumerate() {
        xi[c] = rows[r][m];
    }
    Some(xi)
}

/// Candidate vertices whose support sits inside the support of z, ordered
/// by how well-conditioned the restriction is (largest minimum modulus
/// among the supporting coordinates first).
fn admissible_vertices(polytope: &DelzantPolytope, q: &[f64]) -> Vec<usize> {
    let mut cands: Vec<(f64, usize)> = Vec::new();
    for (idx, v) in polytope.vertices().iter().enumerate() {
        if v.support.iter().all(|&i| q[i] > 0.0) {
            let score = v
                .support
                .iter()
                .map(|&i| q[i])
                .fold(f64::INFINITY, fmath::min);
            cands.push((score, idx));
        }
    }
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    cands.into_iter().map(|(_, i)| i).collect()
}

/// Stability function of a torus datum at z, by the requested method.
pub fn psi_toric(
    polytope: &DelzantPolytope,
    z: &UpstairsPoint,
    method: EvalMethod,
) -> Result<StabilityEvaluation> {
    let ws = polytope.weight_system();
    if z.len() != ws.d() {
        return Err(Error::InvalidInput("point has the wrong dimension".into()));
    }
    if !polytope.is_stable(z) {
        return Err(Error::UnstablePoint);
    }
    let q = q_vec(z);
    match method {
        EvalMethod::Definition => {
            let sol = solved(ws, z)?;
            Ok(StabilityEvaluation {
                psi: sol.f_delta,
                method,
                residual: sol.residual,
                iterations: sol.iterations,
                warnings: Vec::new(),
                printed_literal: None,
            })
        }
        EvalMethod::ToricClosedForm => {
            let sol = solved(ws, z)?;
            let level = ws.level_f64();
            let xi_pairing: f64 = level.iter().zip(sol.xi.iter()).map(|(a, x)| a * x).sum();
            let psi = if let Some(xi0) = diagonal_direction(ws) {
                // When some direction pairs to one with every weight, the
                // rescaled norm equals the level paired with it, exactly.
                let alpha_v: Rat = ws
                    .level()
                    .iter()
                    .zip(&xi0)
                    .map(|(&a, &x)| rat(a as i128) * x)
                    .sum();
                -norm2(z) + rat_to_f64(alpha_v) - 2.0 * xi_pairing
            } else {
                let rescaled: f64 = q
                    .iter()
                    .zip(&sol.scale_factors)
                    .map(|(qi, s)| qi * s * s)
                    .sum();
                -norm2(z) + rescaled - 2.0 * xi_pairing
            };
            Ok(StabilityEvaluation {
                psi,
                method,
                residual: sol.residual,
                iterations: sol.iterations,
                warnings: Vec::new(),
                printed_literal: None,
            })
        }
        EvalMethod::AffineChart => {
            let cands = admissible_vertices(polytope, &q);
            if cands.is_empty() {
                return Err(Error::UnstablePoint);
            }
            let mut chart_err = None;
            for idx in cands {
                match polytope.canonical_affine(idx) {
                    Ok(chart) => {
                        let m = ws.torus_rank();
                        // Weights of the ambient coordinates in the basis of
                        // the vertex's weights: e_s on the support, the
                        // expansion rows on the complement.
                        let mut new_weights = vec![vec![0i64; m]; ws.d()];
                        for (s, &i) in chart.support.iter().enumerate() {
                            new_weights[i][s] = 1;
                        }
                        for (f, &j) in chart.free.iter().enumerate() {
                            for s in 0..m {
                                new_weights[j][s] =
                                    i64::try_from(chart.expansion[f][s]).map_err(|_| {
                                        Error::Numerical("chart expansion overflow".into())
                                    })?;
                            }
                        }
                        let new_level: Vec<i64> = chart
                            .level_coeffs
                            .iter()
                            .map(|&a| i64::try_from(a))
                            .collect::<core::result::Result<_, _>>()
                            .map_err(|_| Error::Numerical("chart level overflow".into()))?;
                        let chart_ws = WeightSystem::new(new_weights, new_level.clone(), None)?;
                        let sol = solved(&chart_ws, z)?;
                        let rescaled: f64 = q
                            .iter()
                            .zip(&sol.scale_factors)
                            .map(|(qi, s)| qi * s * s)
                            .sum();
                        let pairing: f64 = new_level
                            .iter()
                            .zip(sol.xi.iter())
                            .map(|(&a, x)| a as f64 * x)
                            .sum();
                        let psi = -norm2(z) + rescaled - 2.0 * pairing;
                        return Ok(StabilityEvaluation {
                            psi,
                            method,
                            residual: sol.residual,
                            iterations: sol.iterations,
                            warnings: Vec::new(),
                            printed_literal: None,
                        });
                    }
                    Err(e) => chart_err = Some(e),
                }
            }
            Err(chart_err.unwrap_or(Error::UnstablePoint))
        }
        EvalMethod::Monomial => {
            let support: Vec<bool> = q.iter().map(|&qi| qi > 0.0).collect();
            let points = polytope.lattice_points(1)?;
            let admissible: Vec<&Vec<i64>> = points
                .iter()
                .filter(|m| m.iter().enumerate().all(|(i, &mi)| mi == 0 || support[i]))
                .collect();
            if admissible.is_empty() {
                let mut eval = psi_toric(polytope, z, EvalMethod::Definition)?;
                eval.method = EvalMethod::Monomial;
                eval.warnings
                    .push(String::from("no admissible monomial; fell back to the definition"));
                return Ok(eval);
            }
            // Prefer the monomial whose support sits on the largest
            // coordinates of z.
            let lattice = admissible
                .into_iter()
                .max_by(|a, b| {
                    let score = |m: &Vec<i64>| -> f64 {
                        m.iter()
                            .enumerate()
                            .filter(|(_, &mi)| mi > 0)
                            .map(|(i, _)| q[i])
                            .fold(f64::INFINITY, fmath::min)
                    };
                    score(a).partial_cmp(&score(b)).unwrap()
                })
                .unwrap()
                .clone();
            let sol = solved(ws, z)?;
            let mut psi = -norm2(z);
            for (i, (&qi, s)) in q.iter().zip(&sol.scale_factors).enumerate() {
                let q_star = qi * s * s;
                psi += q_star;
                let mi = lattice[i];
                if mi != 0 {
                    psi += mi as f64 * (fmath::ln(qi) - fmath::ln(q_star));
                }
            }
            Ok(StabilityEvaluation {
                psi,
                method,
                residual: sol.residual,
                iterations: sol.iterations,
                warnings: Vec::new(),
                printed_literal: None,
            })
        }
        EvalMethod::Ode => {
            let sol = solved(ws, z)?;
            let p = UpstairsPoint::from_fn(z.len(), |i, _| {
                z[i] * Complex::new(sol.scale_factors[i], 0.0)
            });
            let w: Vec<f64> = sol.xi.iter().map(|x| -x).collect();
            let traj = ode_psi(ws, &p, &w, 1.0, 64)?;
            Ok(StabilityEvaluation {
                psi: *traj.psis.last().unwrap(),
                method,
                residual: sol.residual,
                iterations: traj.steps,
                warnings: Vec::new(),
                printed_literal: None,
            })
        }
        EvalMethod::Matrix => Err(Error::InvalidInput(
            "matrix method applies to matrix families only".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Hirzebruch datum: weights (1,0), (0,1), (1,−n), (0,1) at level (a₁, a₂).

/// Stability value on the four-coordinate datum together with the solved
/// squared scales.
#[derive(Debug, Clone)]
pub struct HirzebruchEvaluation {
    pub psi: f64,
    pub r1_sq: f64,
    pub r2_sq: f64,
    /// Residual of the two moment equations at the solution.
    pub residual: f64,
    /// Value of the printed display evaluated on the printed system, when
    /// that system could be solved; it differs from psi for n ≥ 1.
    pub printed_literal: Option<f64>,
    pub warnings: Vec<String>,
}

/// Solve the two-scale system by elimination and bisection, then evaluate
/// the chart form. The first scale solves r₁²(q₁ + q₃ r₂^{−2n}) = a₁ in
/// closed form; the remaining equation in u = r₂² is strictly increasing,
/// so bisection in log u is safe.
pub fn psi_hirzebruch(
    n: i64,
    a1: i64,
    a2: i64,
    z: &UpstairsPoint,
) -> Result<HirzebruchEvaluation> {
    if n < 0 || a1 <= 0 || a2 <= 0 {
        return Err(Error::InvalidInput(
            "twist must be nonnegative and levels positive".into(),
        ));
    }
    if z.len() != 4 {
        return Err(Error::InvalidInput("point must have four coordinates".into()));
    }
    let ws = WeightSystem::hirzebruch_with_level(n, a1, a2);
    let polytope = DelzantPolytope::new(&ws)?;
    if !polytope.is_stable(z) {
        return Err(Error::UnstablePoint);
    }
    let q = q_vec(z);
    let (a1f, a2f, nf) = (a1 as f64, a2 as f64, n as f64);

    // g(u) = u (q₂ + q₄) − n a₁ q₃ / (q₁ uⁿ + q₃) − a₂, increasing in u.
    let g = |u: f64| -> f64 {
        let mut v = u * (q[1] + q[3]) - a2f;
        if q[2] > 0.0 {
            v -= nf * a1f * q[2] / (q[0] * fmath::powf(u, nf) + q[2]);
        }
        v
    };
    let mut lo = 1.0;
    let mut hi = 1.0;
    while g(lo) > 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::Numerical("scale bracket collapsed".into()));
        }
    }
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numerical("scale bracket diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = fmath::sqrt(lo * hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    let u = fmath::sqrt(lo * hi);
    let r2_sq = u;
    let denom = q[0] + q[2] * fmath::powf(u, -nf);
    let r1_sq = a1f / denom;

    let cross = nf * r1_sq * fmath::powf(u, -nf) * q[2];
    let psi = -norm2(z) + a1f + a2f + cross - a1f * fmath::ln(r1_sq) - a2f * fmath::ln(r2_sq);

    // Residual of the two moment equations.
    let e1 = r1_sq * (q[0] + q[2] * fmath::powf(u, -nf)) - a1f;
    let e2 = r2_sq * (q[1] + q[3]) - cross - a2f;
    let residual = fmath::hypot(e1, e2);

    let mut warnings = Vec::new();
    let printed_literal = match solve_printed_system(nf, a1f, a2f, &q) {
        Some((x, y)) => {
            let cross_lit = nf * fmath::exp(nf * x + y) * q[2];
            Some(
                -norm2(z) - a1f * (x / 2.0) - a2f * (y / 2.0) + a1f + a2f - cross_lit,
            )
        }
        None => {
            warnings.push(String::from(
                "printed system did not converge; literal display unavailable",
            ));
            None
        }
    };

    Ok(HirzebruchEvaluation {
        psi,
        r1_sq,
        r2_sq,
        residual,
        printed_literal,
        warnings,
    })
}

/// Damped Newton on the printed system in (x, y) = (log r₁², log r₂²):
/// eˣ q₁ + e^{nx+y} q₃ = a₁ and e^y q₂ − n e^{nx+y} q₃ + eˣ q₄ = a₂.
fn solve_printed_system(n: f64, a1: f64, a2: f64, q: &[f64]) -> Option<(f64, f64)> {
    let f = |x: f64, y: f64| -> (f64, f64) {
        let cross = fmath::exp(n * x + y) * q[2];
        (
            fmath::exp(x) * q[0] + cross - a1,
            fmath::exp(y) * q[1] - n * cross + fmath::exp(x) * q[3] - a2,
        )
    };
    let (mut x, mut y) = (0.0f64, 0.0f64);
    for _ in 0..120 {
        let (f1, f2) = f(x, y);
        let err = fmath::hypot(f1, f2);
        if err < 1e-12 {
            return Some((x, y));
        }
        let cross = fmath::exp(n * x + y) * q[2];
        // Jacobian entries.
        let j11 = fmath::exp(x) * q[0] + n * cross;
        let j12 = cross;
        let j21 = -n * n * cross + fmath::exp(x) * q[3];
        let j22 = fmath::exp(y) * q[1] - n * cross;
        let det = j11 * j22 - j12 * j21;
        if fmath::abs(det) < 1e-300 || !det.is_finite() {
            return None;
        }
        let dx = -(f1 * j22 - f2 * j12) / det;
        let dy = -(j11 * f2 - j21 * f1) / det;
        let mut lambda = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let (t1, t2) = f(x + lambda * dx, y + lambda * dy);
            if fmath::hypot(t1, t2) < err {
                x += lambda * dx;
                y += lambda * dy;
                moved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !moved {
            return None;
        }
        if !x.is_finite() || !y.is_finite() || fmath::abs(x) > 700.0 || fmath::abs(y) > 700.0 {
            return None;
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Torus-invariant Kähler potentials and their Legendre duals.

/// Smooth compactly supported radial perturbation.
#[derive(Debug, Clone)]
pub struct Bump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Bump {
    /// Mollifier profile exp(−1/(1−s)) on s ∈ [0,1), zero beyond.
    fn profile(s: f64) -> (f64, f64, f64) {
        if s >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let t = 1.0 - s;
        let b = fmath::exp(-1.0 / t);
        let bp = -b / (t * t);
        let bpp = b * (1.0 / (t * t * t * t) - 2.0 / (t * t * t));
        (b, bp, bpp)
    }
}

/// Strictly convex torus-invariant potential in logarithmic coordinates
/// x_i = log |z_i|²: the flat potential Σ exp(x_i), optionally perturbed by
/// a compactly supported bump.
#[derive(Debug, Clone)]
pub struct ToricMetric {
    d: usize,
    bump: Option<Bump>,
}

/// Legendre dual value with the dual point it was computed at.
#[derive(Debug, Clone)]
pub struct DualPoint {
    /// G(t) = ⟨x*, t⟩ − F(x*).
    pub value: f64,
    /// x* = ∇G(t), the preimage of t under ∇F.
    pub gradient: Vec<f64>,
    pub iterations: usize,
}

impl ToricMetric {
    pub fn flat(d: usize) -> Self {
        ToricMetric { d, bump: None }
    }

    pub fn with_bump(d: usize, amplitude: f64, center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.len() != d {
            return Err(Error::InvalidInput("bump center has the wrong length".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidInput("bump radius must be positive".into()));
        }
        Ok(ToricMetric {
            d,
            bump: Some(Bump {
                amplitude,
                center,
                radius,
            }),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> &'static str {
        if self.bump.is_none() {
            "flat"
        } else {
            "legendre"
        }
    }

    fn bump_s(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let b = self.bump.as_ref()?;
        let mut s = 0.0;
        let mut diff = Vec::with_capacity(self.d);
        for i in 0..self.d {
            let dd = x[i] - b.center[i];
            diff.push(dd);
            s += dd * dd;
        }
        Some((s / (b.radius * b.radius), diff))
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        let mut f: f64 = x.iter().map(|&xi| fmath::exp(xi)).sum();
        if let Some((s, _)) = self.bump_s(x) {
            let (b, _, _) = Bump::profile(s);
            f += self.bump.as_ref().unwrap().amplitude * b;
        }
        f
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = x.iter().map(|&xi| fmath::exp(xi)).collect();
        if let Some((s, diff)) = self.bump_s(x) {
            let bump = self.bump.as_ref().unwrap();
            let (_, bp, _) = Bump::profile(s);
            let r2 = bump.radius * bump.radius;
            for i in 0..self.d {
                g[i] += bump.amplitude * bp * 2.0 * diff[i] / r2;
            }
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.d, self.d);
        for i in 0..self.d {
            h[(i, i)] = fmath::exp(x[i]);
        }
        if let Some((s, diff)) = self.bump_s(x) {
            let bump = self.bump.as_ref().unwrap();
            let (_, bp, bpp) = Bump::profile(s);
            let r2 = bump.radius * bump.radius;
            for i in 0..self.d {
                for j in 0..self.d {
                    h[(i, j)] += bump.amplitude
                        * (bpp * 4.0 * diff[i] * diff[j] / (r2 * r2)
                            + if i == j { bp * 2.0 / r2 } else { 0.0 });
                }
            }
        }
        h
    }

    fn cholesky_at(&self, x: &[f64]) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        Cholesky::new(self.hessian(x)).ok_or(Error::MetricNotStrictlyConvex)
    }

    /// Legendre dual at t (componentwise positive): Newton inversion of the
    /// gradient map starting from the flat inverse log t.
    pub fn dual(&self, t: &[f64]) -> Result<DualPoint> {
        if t.len() != self.d {
            return Err(Error::InvalidInput("dual point has the wrong length".into()));
        }
        if t.iter().any(|&ti| !(ti > 0.0)) {
            return Err(Error::InvalidInput(
                "dual evaluation requires positive moment coordinates".into(),
            ));
        }
        let mut x: Vec<f64> = t.iter().map(|&ti| fmath::ln(ti)).collect();
        let scale = 1.0 + t.iter().fold(0.0f64, |a, &b| fmath::max(a, fmath::abs(b)));
        let mut iterations = 0;
        for _ in 0..80 {
            let g = self.gradient(&x);
            let mut err = 0.0f64;
            let rhs = DVector::from_fn(self.d, |i, _| {
                let e = t[i] - g[i];
                err = fmath::max(err, fmath::abs(e));
                e
            });
            if err <= 1e-12 * scale {
                let value: f64 =
                    x.iter().zip(t).map(|(xi, ti)| xi * ti).sum::<f64>() - self.potential(&x);
                return Ok(DualPoint {
                    value,
                    gradient: x,
                    iterations,
                });
            }
            let ch = self.cholesky_at(&x)?;
            let step = ch.solve(&rhs);
            let mut lambda = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let trial: Vec<f64> = (0..self.d).map(|i| x[i] + lambda * step[i]).collect();
                let gt = self.gradient(&trial);
                let trial_err = (0..self.d)
                    .map(|i| fmath::abs(t[i] - gt[i]))
                    .fold(0.0, fmath::max);
                if trial_err < err {
                    x = trial;
                    improved = true;
                    break;
                }
                lambda *= 0.5;
            }
            iterations += 1;
            if !improved {
                return Err(Error::Numerical(
                    "dual inversion stalled before reaching tolerance".into(),
                ));
            }
        }
        Err(Error::Numerical("dual inversion did not converge".into()))
    }
}

/// Stability value for a metric datum, together with the half log norm of
/// the chosen monomial section downstairs.
#[derive(Debug, Clone)]
pub struct LegendreEvaluation {
    pub psi: f64,
    /// (k − ℓ)·∇G(ℓ) + G(ℓ) at the moment image ℓ of the projected point.
    pub half_log_rho: f64,
    /// Moment image of the projected point in ambient coordinates.
    pub moment_image: Vec<f64>,
    pub xi: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Distance between the dual gradient at ℓ and the projected
    /// logarithmic coordinates; a roundtrip consistency measure.
    pub roundtrip_error: f64,
}

/// Minimize F(x + 2Aξ) − 2⟨α, ξ⟩ over ξ for the metric potential, then
/// evaluate the stability value and the downstairs half-log norm of z^k
/// through the Legendre dual at the moment image.
pub fn psi_legendre(
    metric: &ToricMetric,
    ws: &WeightSystem,
    z: &UpstairsPoint,
    k: &[i64],
) -> Result<LegendreEvaluation> {
    let d = ws.d();
    let m = ws.torus_rank();
    if metric.d() != d || z.len() != d || k.len() != d {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    if z.iter().any(|v| v.norm_sqr() == 0.0) {
        return Err(Error::InvalidInput(
            "metric evaluation requires all coordinates nonzero".into(),
        ));
    }
    // k must be a lattice point of the level polytope.
    for j in 0..m {
        let mut s = 0i64;
        for i in 0..d {
            if k[i] < 0 {
                return Err(Error::InvalidInput("lattice point must be nonnegative".into()));
            }
            s += k[i] * ws.weight(i)[j];
        }
        if s != ws.level()[j] {
            return Err(Error::InvalidInput(
                "exponent is not a lattice point of the level polytope".into(),
            ));
        }
    }
    let x0: Vec<f64> = z.iter().map(|v| fmath::ln(v.norm_sqr())).collect();
    let a = ws.weights_f64();
    let alpha = ws.level_f64();

    let shifted = |xi: &DVector<f64>| -> Vec<f64> {
        (0..d)
            .map(|i| {
                let mut v = x0[i];
                for j in 0..m {
                    v += 2.0 * a[(i, j)] * xi[j];
                }
                v
            })
            .collect()
    };
    let functional = |xi: &DVector<f64>| -> Result<f64> {
        let x = shifted(xi);
        let mut f = metric.potential(&x);
        for j in 0..m {
            f -= 2.0 * alpha[j] * xi[j];
        }
        Ok(f)
    };

    let mut xi = DVector::zeros(m);
    let f_start = functional(&xi)?;
    let mut f_curr = f_start;
    let mut iterations = 0;
    let mut residual;
    loop {
        let x = shifted(&xi);
        let g_full = metric.gradient(&x);
        let mut grad = DVector::zeros(m);
        for j in 0..m {
            let mut v = -2.0 * alpha[j];
            for i in 0..d {
                v += 2.0 * a[(i, j)] * g_full[i];
            }
            grad[j] = v;
        }
        residual = grad.norm() / 2.0;
        if residual <= SOLVE_TOL * (1.0 + alpha.norm()) {
            break;
        }
        if iterations >= SOLVE_ITERS {
            return Err(Error::Numerical(
                "metric minimization did not converge".into(),
            ));
        }
        let hf = metric.hessian(&x);
        let mut hess = DMatrix::zeros(m, m);
        for p in 0..m {
            for r in 0..m {
                let mut v = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        v += 4.0 * a[(i, p)] * hf[(i, j)] * a[(j, r)];
                    }
                }
                hess[(p, r)] = v;
            }
        }
        let ch = Cholesky::new(hess).ok_or(Error::MetricNotStrictlyConvex)?;
        let step = ch.solve(&(-&grad));
        let slope = grad.dot(&step);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &xi + &step * lambda;
            let f_trial = functional(&trial)?;
            if f_trial <= f_curr + 1e-4 * lambda * slope {
                xi = trial;
                f_curr = f_trial;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        iterations += 1;
        if !accepted {
            return Err(Error::Numerical("metric line search stalled".into()));
        }
        if xi.norm() > 1e3 {
            return Err(Error::UnstablePoint);
        }
    }

    let x_level = shifted(&xi);
    let ell = metric.gradient(&x_level);
    let dual = metric.dual(&ell)?;
    let half_log_rho: f64 = (0..d)
        .map(|i| (k[i] as f64 - ell[i]) * dual.gradient[i])
        .sum::<f64>()
        + dual.value;
    let roundtrip_error = (0..d)
        .map(|i| fmath::abs(dual.gradient[i] - x_level[i]))
        .fold(0.0, fmath::max);
    Ok(LegendreEvaluation {
        psi: f_curr - f_start,
        half_log_rho,
        moment_image: ell,
        xi: xi.iter().copied().collect(),
        residual,
        iterations,
        roundtrip_error,
    })
}

// ---------------------------------------------------------------------------
// Matrix families.

/// Choose the column set with the largest minor magnitude at `pick`, then
/// return log |det minor|² at `pick` and at `other` over that same set.
fn best_minor_log_pair(pick: &CMat, other: &CMat) -> Result<(f64, f64)> {
    let k = pick.nrows();
    let n = pick.ncols();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for cols in subsets(n, k) {
        let sub = CMat::from_fn(k, k, |r, c| pick[(r, cols[c])]);
        let mag = sub.determinant().norm_sqr();
        if best.as_ref().map_or(true, |(m, _)| mag > *m) {
            best = Some((mag, cols));
        }
    }
    let (mag, cols) = best.ok_or_else(|| Error::InvalidInput("no square minor exists".into()))?;
    if mag == 0.0 {
        return Err(Error::UnstableMatrixPoint);
    }
    let sub = CMat::from_fn(k, k, |r, c| other[(r, cols[c])]);
    let other_mag = sub.determinant().norm_sqr();
    if other_mag == 0.0 {
        return Err(Error::UnstableMatrixPoint);
    }
    Ok((fmath::ln(mag), fmath::ln(other_mag)))
}

fn frob2(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum()
}

/// Stability function of the k-plane datum at twist m: the closed form
/// km − tr(ZZ*) + m log det(ZZ*) − km log m, or the definition through the
/// level transport and an invariant minor section.
pub fn psi_grassmannian(
    z: &CMat,
    k: usize,
    m_twist: u32,
    method: EvalMethod,
) -> Result<StabilityEvaluation> {
    if z.nrows() != k {
        return Err(Error::InvalidInput("row count disagrees with k".into()));
    }
    if z.ncols() < k {
        return Err(Error::InvalidInput(
            "datum needs at least as many columns as rows".into(),
        ));
    }
    if m_twist == 0 {
        return Err(Error::InvalidInput("twist must be positive".into()));
    }
    let mf = m_twist as f64;
    let kf = k as f64;
    match method {
        EvalMethod::Matrix => {
            let gram = z * z.adjoint();
            let logdet = pd_logdet(&gram).map_err(|_| Error::UnstableMatrixPoint)?;
            let tr = frob2(z);
            let psi = kf * mf - tr + mf * logdet - kf * mf * fmath::ln(mf);
            let printed_literal = Some(kf * mf - tr + mf * mf * logdet);
            Ok(StabilityEvaluation {
                psi,
                method,
                residual: 0.0,
                iterations: 0,
                warnings: Vec::new(),
                printed_literal,
            })
        }
        EvalMethod::Definition => {
            let sol = solve_grassmannian(z, m_twist)?;
            let w = &sol.b[0] * z;
            let (log_w, log_z) = best_minor_log_pair(&w, z)?;
            let psi = (mf * log_z - frob2(z)) - (mf * log_w - frob2(&w));
            Ok(StabilityEvaluation {
                psi,
                method,
                residual: sol.residuals[0],
                iterations: 1,
                warnings: Vec::new(),
                printed_literal: None,
            })
        }
        _ => Err(Error::InvalidInput(
            "method not applicable to this family".into(),
        )),
    }
}

/// Stability function of a chain datum: closed form through the composite
/// blocks, or the definition through the multiplicative solver and the
/// composite minor sections.
pub fn psi_coadjoint(
    spec: &MatrixChainSpec,
    zs: &[CMat],
    method: EvalMethod,
) -> Result<StabilityEvaluation> {
    let links = spec.n() - 1;
    match method {
        EvalMethod::Matrix => {
            let mut psi = 0.0;
            let consts = spec.section_constants_log();
            for i in 0..links {
                psi += spec.level_block_trace(i) as f64 - frob2(&zs[i]);
                let pi = composite_map(zs, i);
                let gram = &pi * pi.adjoint();
                let logdet = pd_logdet(&gram).map_err(|_| Error::UnstableChainPoint)?;
                psi += spec.twists()[i] as f64 * (logdet - consts[i]);
            }
            // The printed final display: Σ i·m_i − Σ tr + Σ (m_i − m_{i−1})
            // (m₁+⋯+m_i) log det(Z_i Z_i*), with m₀ = 0.
            let mut literal = 0.0;
            let mut prefix = 0i64;
            for i in 0..links {
                let mi = spec.twists()[i] as i64;
                let prev = if i == 0 { 0 } else { spec.twists()[i - 1] as i64 };
                prefix += mi;
                literal += ((i + 1) as i64 * mi) as f64 - frob2(&zs[i]);
                let gram = &zs[i] * zs[i].adjoint();
                if let Ok(ld) = pd_logdet(&gram) {
                    literal += ((mi - prev) * prefix) as f64 * ld;
                }
            }
            Ok(StabilityEvaluation {
                psi,
                method,
                residual: 0.0,
                iterations: 0,
                warnings: Vec::new(),
                printed_literal: Some(literal),
            })
        }
        EvalMethod::Definition => {
            let q = QuiverSpec::chain(spec);
            let sol = solve_quiver(&q, zs, SOLVE_TOL, SOLVE_ITERS)?;
            if !sol.converged {
                return Err(Error::UnstableChainPoint);
            }
            let mut psi = 0.0;
            for i in 0..links {
                psi += frob2(&sol.transformed[i]) - frob2(&zs[i]);
                let pi_z = composite_map(zs, i);
                let pi_w = composite_map(&sol.transformed, i);
                let (log_w, log_z) = best_minor_log_pair(&pi_w, &pi_z)
                    .map_err(|_| Error::UnstableChainPoint)?;
                psi += spec.twists()[i] as f64 * (log_z - log_w);
            }
            Ok(StabilityEvaluation {
                psi,
                method,
                residual: sol.residual,
                iterations: sol.iterations,
                warnings: Vec::new(),
                printed_literal: None,
            })
        }
        _ => Err(Error::InvalidInput(
            "method not applicable to this family".into(),
        )),
    }
}

/// Stage-two reduction for polygon data: minimize Σ c_i log |g W_i|² over
/// positive unimodular central factors by multiplicative Newton on the
/// traceless Hermitian directions. Returns the accumulated factor.
fn polygon_central_factor(c: &[f64], rep: &[CMat], tol: f64) -> Result<(CMat, usize)> {
    let basis = [
        CMat::from_fn(2, 2, |r, s| {
            Complex::new(if r == 0 && s == 0 { 1.0 } else if r == 1 && s == 1 { -1.0 } else { 0.0 }, 0.0)
        }),
        CMat::from_fn(2, 2, |r, s| {
            Complex::new(if r != s { 1.0 } else { 0.0 }, 0.0)
        }),
        CMat::from_fn(2, 2, |r, s| {
            if r == 0 && s == 1 {
                Complex::new(0.0, 1.0)
            } else if r == 1 && s == 0 {
                Complex::new(0.0, -1.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        }),
    ];
    let mut g = CMat::identity(2, 2);
    let mut w: Vec<CMat> = rep.to_vec();
    let value = |w: &[CMat]| -> f64 {
        w.iter()
            .zip(c)
            .map(|(wi, &ci)| ci * fmath::ln(frob2(wi)))
            .sum()
    };
    let gradient = |w: &[CMat]| -> ([f64; 3], f64) {
        // 2·traceless(Σ c_i ŵ ŵ*) paired against the basis.
        let mut mu = CMat::zeros(2, 2);
        for (wi, &ci) in w.iter().zip(c) {
            mu += wi * wi.adjoint() * Complex::new(ci / frob2(wi), 0.0);
        }
        let tr_half = mu.trace().re / 2.0;
        mu[(0, 0)] -= Complex::new(tr_half, 0.0);
        mu[(1, 1)] -= Complex::new(tr_half, 0.0);
        let mut grad = [0.0f64; 3];
        for (a, b) in basis.iter().enumerate() {
            grad[a] = 2.0 * (b * &mu).trace().re;
        }
        let gn = fmath::sqrt(grad.iter().map(|v| v * v).sum());
        (grad, gn)
    };
    let mut f_curr = value(&w);
    let mut travelled = 0.0;
    for it in 0..SOLVE_ITERS {
        let (grad, gn) = gradient(&w);
        if gn <= tol {
            return Ok((g, it));
        }
        // Hessian of the value along e^{t h}: Σ c_i [4 ŵ*h²ŵ − 4(ŵ*hŵ)²].
        let mut hess: DMatrix<f64> = DMatrix::zeros(3, 3);
        for (wi, &ci) in w.iter().zip(c) {
            let n2 = frob2(wi);
            let mut pair = [0.0f64; 3];
            let mut quad: DMatrix<f64> = DMatrix::zeros(3, 3);
            for a in 0..3 {
                let ba_w = &basis[a] * wi;
                pair[a] = {
                    let mut t = Complex::new(0.0, 0.0);
                    for (u, v) in wi.iter().zip(ba_w.iter()) {
                        t += u.conj() * v;
                    }
                    t.re / n2
                };
                for b in a..3 {
                    let bb_w = &basis[b] * wi;
                    let mut t = Complex::new(0.0, 0.0);
                    for (u, v) in ba_w.iter().zip(bb_w.iter()) {
                        t += u.conj() * v;
                    }
                    quad[(a, b)] = t.re / n2;
                    quad[(b, a)] = quad[(a, b)];
                }
            }
            for a in 0..3 {
                for b in 0..3 {
                    hess[(a, b)] += ci * (4.0 * quad[(a, b)] - 4.0 * pair[a] * pair[b]);
                }
            }
        }
        let es = hess.symmetric_eigen();
        let cutoff = 1e-12
            * es.eigenvalues
                .iter()
                .fold(0.0f64, |acc, &v| fmath::max(acc, fmath::abs(v)))
                .max(1e-300);
        let mut step = [0.0f64; 3];
        for kk in 0..3 {
            if fmath::abs(es.eigenvalues[kk]) > cutoff {
                let mut proj = 0.0;
                for a in 0..3 {
                    proj += es.eigenvectors[(a, kk)] * grad[a];
                }
                let coef = -proj / es.eigenvalues[kk];
                for a in 0..3 {
                    step[a] += coef * es.eigenvectors[(a, kk)];
                }
            }
        }
        if step.iter().all(|&s| s == 0.0) {
            for a in 0..3 {
                step[a] = -grad[a];
            }
        }
        let slope: f64 = grad.iter().zip(&step).map(|(a, b)| a * b).sum();
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut h = CMat::zeros(2, 2);
            for a in 0..3 {
                h += &basis[a] * Complex::new(lambda * step[a], 0.0);
            }
            let eh = {
                let es = h.clone().symmetric_eigen();
                let mut dd = CMat::zeros(2, 2);
                for i in 0..2 {
                    dd[(i, i)] = Complex::new(fmath::exp(es.eigenvalues[i]), 0.0);
                }
                &es.eigenvectors * dd * es.eigenvectors.adjoint()
            };
            let trial: Vec<CMat> = w.iter().map(|wi| &eh * wi).collect();
            let f_trial = value(&trial);
            // Near the optimum the decrease sinks below rounding noise
            // before the gradient tolerance is met, so a halved gradient
            // norm also counts as progress.
            if f_trial <= f_curr + 1e-4 * lambda * slope || gradient(&trial).1 <= 0.5 * gn {
                w = trial;
                g = &eh * &g;
                f_curr = f_trial;
                travelled += lambda * fmath::sqrt(step.iter().map(|v| v * v).sum());
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted || travelled > 1e3 {
            return Err(Error::UnstableMatrixPoint);
        }
    }
    Err(Error::UnstableMatrixPoint)
}

/// Stability function of a polygon datum. The closed form runs the nested
/// reduction (analytic side scalings around a central unimodular factor);
/// the definition path runs the joint multiplicative solver and evaluates
/// the pair-determinant sections at both ends of the transport.
pub fn psi_polygon(
    levels: &PolygonLevels,
    rep: &[CMat],
    method: EvalMethod,
) -> Result<StabilityEvaluation> {
    let m = levels.sides();
    if rep.len() != m {
        return Err(Error::InvalidInput("one side vector per side required".into()));
    }
    for zi in rep {
        if zi.nrows() != 2 || zi.ncols() != 1 {
            return Err(Error::InvalidInput("side vectors must be 2×1".into()));
        }
        if frob2(zi) == 0.0 {
            return Err(Error::UnstableMatrixPoint);
        }
    }
    // Full-rank precondition: the sides must span the plane.
    let mut gram = CMat::zeros(2, 2);
    for zi in rep {
        gram += zi * zi.adjoint();
    }
    let eigs = gram.symmetric_eigen().eigenvalues;
    let (e_min, e_max) = (
        fmath::min(eigs[0], eigs[1]),
        fmath::max(eigs[0], eigs[1]),
    );
    if e_min <= 1e-12 * e_max {
        return Err(Error::UnstableMatrixPoint);
    }
    let c: Vec<f64> = (0..m).map(|i| -levels.lambdas[i] as f64).collect();
    let central = levels.central() as f64;
    let total2: f64 = rep.iter().map(frob2).sum();
    let stage1 = |w: &[CMat]| -> f64 {
        2.0 * central - total2
            + w.iter()
                .zip(&c)
                .map(|(wi, &ci)| ci * fmath::ln(frob2(wi) / ci))
                .sum::<f64>()
    };
    match method {
        EvalMethod::Matrix => {
            let (g, iterations) = polygon_central_factor(&c, rep, SOLVE_TOL)?;
            let moved: Vec<CMat> = rep.iter().map(|zi| &g * zi).collect();
            let psi = stage1(&moved);
            // Residual: distance of the weighted normalized frame from the
            // balanced one.
            let mut mu = CMat::zeros(2, 2);
            for (wi, &ci) in moved.iter().zip(&c) {
                mu += wi * wi.adjoint() * Complex::new(ci / frob2(wi), 0.0);
            }
            mu[(0, 0)] -= Complex::new(central, 0.0);
            mu[(1, 1)] -= Complex::new(central, 0.0);
            Ok(StabilityEvaluation {
                psi,
                method,
                residual: fmath::sqrt(frob2(&mu)),
                iterations,
                warnings: Vec::new(),
                printed_literal: Some(stage1(rep)),
            })
        }
        EvalMethod::Definition => {
            let spec = QuiverSpec::polygon(levels);
            let sol = solve_quiver(&spec, rep, SOLVE_TOL, SOLVE_ITERS)?;
            if !sol.converged {
                return Err(Error::UnstableMatrixPoint);
            }
            let scheme: PairingScheme = polygon_pairing(levels);
            let pack = |cols: &[CMat]| -> CMat {
                CMat::from_fn(2, m, |r, i| cols[i][(r, 0)])
            };
            let log_z = polygon_pair_section_log_norm2(&pack(rep), &scheme);
            let log_w = polygon_pair_section_log_norm2(&pack(&sol.transformed), &scheme);
            if !log_z.is_finite() || !log_w.is_finite() {
                return Err(Error::UnstableMatrixPoint);
            }
            let w_total: f64 = sol.transformed.iter().map(frob2).sum();
            let psi = (log_z - total2) - (log_w - w_total);
            let mus = quiver_moment(&spec, &sol.transformed)?;
            let residual = fmath::sqrt(mus.iter().map(frob2).sum::<f64>());
            Ok(StabilityEvaluation {
                psi,
                method,
                residual,
                iterations: sol.iterations,
                warnings: Vec::new(),
                printed_literal: None,
            })
        }
        _ => Err(Error::InvalidInput(
            "method not applicable to this family".into(),
        )),
    }
}
