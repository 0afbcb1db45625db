//! Solvers that move stable points onto the zero level of the shifted
//! moment map.
//!
//! For an abelian datum the problem is the strictly convex minimization of
//!
//!   F_z(ξ) = Σ |z_i|² e^{2 α_i·ξ} − 2 α·ξ,
//!
//! whose critical point is the unique torus-complexification parameter
//! carrying z onto the level set. The solver is a damped Newton iteration
//! with Armijo backtracking; divergence of ξ certifies that z is unstable.
//! Matrix data (one rectangular block, or a chain of them) admit direct
//! triangular factorizations instead of an iteration, and those are
//! implemented here too, together with an ODE integrator for the restriction
//! of the stability function to one-parameter orbits.

use crate::error::{Error, Result};
use crate::fmath;
use crate::geometry::{UpstairsPoint, WeightSystem};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex;

/// Result of the abelian minimization.
#[derive(Debug, Clone)]
pub struct KempfNessSolution {
    /// Minimizer ξ ∈ R^m (meaningful only when `converged`).
    pub xi: DVector<f64>,
    /// Per-coordinate scale factors e^{ξ·α_i}; the rescaled point is
    /// z_i · scale_factors[i].
    pub scale_factors: Vec<f64>,
    /// Norm of the shifted moment map at the rescaled point.
    pub residual: f64,
    /// Newton iterations performed.
    pub iterations: usize,
    pub converged: bool,
    /// Human-readable failure cause ("unstable point" on divergence).
    pub diagnostic: Option<String>,
    /// Whether the Hessian factorization succeeded at every iterate; the
    /// functional is strictly convex at stable points, so this holds there.
    pub hessian_spd: bool,
    /// Functional value at every accepted iterate, starting with F(0);
    /// strictly convex descent keeps this non-increasing.
    pub f_history: Vec<f64>,
    /// F(ξ) − F(0): the value of the stability function at z when z is a
    /// monomial-normalized stable point (section factors cancel).
    pub f_delta: f64,
}

/// One-block or chain factorization output.
#[derive(Debug, Clone)]
pub struct ChainSolution {
    /// The per-link transports B_i (lower triangular).
    pub b: Vec<DMatrix<Complex<f64>>>,
    /// det(B_i B_i*) per link.
    pub det_gram: Vec<f64>,
    /// Per-link residual of the level equation after transport.
    pub residuals: Vec<f64>,
}

fn functional(q: &[f64], weights: &DMatrix<f64>, level: &DVector<f64>, xi: &DVector<f64>) -> f64 {
    let d = q.len();
    let mut f = 0.0;
    for i in 0..d {
        if q[i] == 0.0 {
            continue;
        }
        let mut dot = 0.0;
        for a in 0..level.len() {
            dot += weights[(i, a)] * xi[a];
        }
        f += q[i] * fmath::exp(2.0 * dot);
    }
    f - 2.0 * level.dot(xi)
}

/// Shifted moment at the rescaled point: Σ q_i e^{2α_i·ξ} α_i − α.
fn shifted_moment(
    q: &[f64],
    weights: &DMatrix<f64>,
    level: &DVector<f64>,
    xi: &DVector<f64>,
) -> DVector<f64> {
    let m = level.len();
    let mut g = DVector::zeros(m);
    for i in 0..q.len() {
        if q[i] == 0.0 {
            continue;
        }
        let mut dot = 0.0;
        for a in 0..m {
            dot += weights[(i, a)] * xi[a];
        }
        let w = q[i] * fmath::exp(2.0 * dot);
        for a in 0..m {
            g[a] += w * weights[(i, a)];
        }
    }
    g - level
}

fn hessian(q: &[f64], weights: &DMatrix<f64>, xi: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(m, m);
    for i in 0..q.len() {
        if q[i] == 0.0 {
            continue;
        }
        let mut dot = 0.0;
        for a in 0..m {
            dot += weights[(i, a)] * xi[a];
        }
        let w = 4.0 * q[i] * fmath::exp(2.0 * dot);
        for a in 0..m {
            for b in 0..m {
                h[(a, b)] += w * weights[(i, a)] * weights[(i, b)];
            }
        }
    }
    h
}

/// Minimize F_z by damped Newton. `tol` bounds the norm of the shifted
/// moment at the rescaled point; defaults used across the crate are
/// tol = 1e−12, max_iter = 200.
pub fn solve_abelian(
    ws: &WeightSystem,
    z: &UpstairsPoint,
    tol: f64,
    max_iter: usize,
) -> Result<KempfNessSolution> {
    let d = ws.d();
    let m = ws.torus_rank();
    if z.len() != d {
        return Err(Error::InvalidInput("point has the wrong dimension".into()));
    }
    let q: Vec<f64> = (0..d).map(|i| z[i].norm_sqr()).collect();
    if q.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroVector);
    }
    let weights = ws.weights_f64();
    let level = ws.level_f64();

    let mut xi = DVector::zeros(m);
    let mut f = functional(&q, &weights, &level, &xi);
    let mut f_history = vec![f];
    let mut hessian_spd = true;
    let mut diagnostic = None;
    let mut converged = false;
    let mut iterations = 0;

    let mut grad2 = shifted_moment(&q, &weights, &level, &xi);
    let mut residual = grad2.norm();
    if residual <= tol {
        converged = true;
    }

    while !converged && iterations < max_iter {
        let h = hessian(&q, &weights, &xi, m);
        // Newton direction; a failed factorization means the effective
        // Hessian is not positive definite (possible only off the stable
        // locus), where a ridge fallback keeps the iteration moving.
        let step = match Cholesky::new(h.clone()) {
            Some(ch) => ch.solve(&(-2.0 * &grad2)),
            None => {
                hessian_spd = false;
                let mut ridge = h;
                let bump = 1e-8 * (ridge.trace() / m as f64).max(1e-12);
                for a in 0..m {
                    ridge[(a, a)] += bump;
                }
                match Cholesky::new(ridge) {
                    Some(ch) => ch.solve(&(-2.0 * &grad2)),
                    None => (-2.0 * &grad2).clone_owned(),
                }
            }
        };
        // Armijo backtracking; a trial point already meeting the residual
        // target is accepted outright, which matters near machine precision
        // where F differences are below round-off.
        let slope = 2.0 * grad2.dot(&step);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &xi + lambda * &step;
            let trial_grad2 = shifted_moment(&q, &weights, &level, &trial);
            let trial_res = trial_grad2.norm();
            let trial_f = functional(&q, &weights, &level, &trial);
            if trial_res <= tol || trial_f <= f + 1e-4 * lambda * slope {
                xi = trial;
                grad2 = trial_grad2;
                residual = trial_res;
                f = trial_f;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        iterations += 1;
        if !accepted {
            diagnostic = Some(String::from("line search stalled"));
            break;
        }
        f_history.push(f);
        if residual <= tol {
            converged = true;
            break;
        }
        if xi.norm() > 1e3 {
            diagnostic = Some(String::from("unstable point"));
            break;
        }
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(String::from("iteration limit reached"));
    }

    let scale_factors: Vec<f64> = (0..d)
        .map(|i| {
            let mut dot = 0.0;
            for a in 0..m {
                dot += weights[(i, a)] * xi[a];
            }
            fmath::exp(dot)
        })
        .collect();
    let f0 = f_history[0];
    Ok(KempfNessSolution {
        xi,
        scale_factors,
        residual,
        iterations,
        converged,
        diagnostic,
        hessian_spd,
        f_history,
        f_delta: f - f0,
    })
}

/// Carry a stable point onto the zero level of the shifted moment map.
pub fn project_to_level(ws: &WeightSystem, z: &UpstairsPoint) -> Result<UpstairsPoint> {
    let sol = solve_abelian(ws, z, 1e-12, 200)?;
    if !sol.converged {
        return Err(Error::UnstablePoint);
    }
    Ok(UpstairsPoint::from_iterator(
        z.len(),
        (0..z.len()).map(|i| z[i] * sol.scale_factors[i]),
    ))
}

fn frobenius(m: &DMatrix<Complex<f64>>) -> f64 {
    let mut s = 0.0;
    for v in m.iter() {
        s += v.norm_sqr();
    }
    fmath::sqrt(s)
}

fn det_bb_star(b: &DMatrix<Complex<f64>>) -> f64 {
    // The factorizations below produce triangular B, so the determinant is
    // the diagonal product.
    let mut d = Complex::new(1.0, 0.0);
    for i in 0..b.nrows() {
        d *= b[(i, i)];
    }
    d.norm_sqr()
}

/// Lower-triangular inverse applied on the right: returns R·C^{-1} where C
/// is lower triangular.
fn right_divide_lower(
    r: &DMatrix<Complex<f64>>,
    c: &DMatrix<Complex<f64>>,
) -> Result<DMatrix<Complex<f64>>> {
    // B C = R  ⇔  Cᵀ Bᵀ = Rᵀ with plain transposes, and Cᵀ is upper
    // triangular.
    let ct = c.transpose();
    let rt = r.transpose();
    let bt = ct
        .solve_upper_triangular(&rt)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(bt.transpose())
}

/// One-block factorization: B with B Z Z* B* = m·I, computed from the
/// Cholesky factor of ZZ*. Requires Z of full row rank.
pub fn solve_grassmannian(z: &DMatrix<Complex<f64>>, m_twist: u32) -> Result<ChainSolution> {
    let k = z.nrows();
    if k == 0 || z.ncols() < k {
        return Err(Error::InvalidInput(
            "matrix point must have at least as many columns as rows".into(),
        ));
    }
    let gram = z * z.adjoint();
    let chol = Cholesky::new(gram.clone()).ok_or(Error::UnstableMatrixPoint)?;
    let l = chol.l();
    // B = √m · L^{-1}.
    let mut id = DMatrix::identity(k, k);
    id *= Complex::new(fmath::sqrt(m_twist as f64), 0.0);
    let b = l
        .solve_lower_triangular(&id)
        .ok_or(Error::UnstableMatrixPoint)?;
    let level = &b * &gram * b.adjoint();
    let mut dev = level;
    for i in 0..k {
        dev[(i, i)] -= Complex::new(m_twist as f64, 0.0);
    }
    Ok(ChainSolution {
        det_gram: vec![det_bb_star(&b)],
        residuals: vec![frobenius(&dev)],
        b: vec![b],
    })
}

/// Chain factorization: given links Z_i (shape l_i × l_{i+1}) and positive
/// twists m_i, produce triangular B_i with the transported links V_i = B_iZ_i
/// satisfying V_i V_i* = m_i I + V_{i−1}* V_{i−1} exactly. The V_i solve the
/// linkwise level equations; the determinants det(B_iB_i*) are the
/// factorization's diagnostics.
pub fn solve_chain(zs: &[DMatrix<Complex<f64>>], twists: &[u32]) -> Result<ChainSolution> {
    if zs.is_empty() || zs.len() != twists.len() {
        return Err(Error::InvalidInput(
            "chain needs one twist per link".into(),
        ));
    }
    for w in zs.windows(2) {
        if w[0].ncols() != w[1].nrows() {
            return Err(Error::InvalidInput("chain link shapes do not compose".into()));
        }
    }
    if twists.iter().any(|&m| m == 0) {
        return Err(Error::InvalidInput("twists must be positive".into()));
    }
    let mut bs = Vec::with_capacity(zs.len());
    let mut det_gram = Vec::with_capacity(zs.len());
    let mut residuals = Vec::with_capacity(zs.len());
    let mut prev: Option<DMatrix<Complex<f64>>> = None;
    for (i, z) in zs.iter().enumerate() {
        let li = z.nrows();
        let mut rhs = DMatrix::from_diagonal_element(li, li, Complex::new(twists[i] as f64, 0.0));
        if let Some(v) = &prev {
            rhs += v.adjoint() * v;
        }
        let r = Cholesky::new(rhs.clone())
            .ok_or_else(|| Error::Numerical("chain right-hand side not positive".into()))?
            .l();
        let gram = z * z.adjoint();
        let c = Cholesky::new(gram).ok_or(Error::UnstableChainPoint)?.l();
        let b = right_divide_lower(&r, &c)?;
        let v = &b * z;
        let mut dev = &v * v.adjoint() - rhs;
        let devn = frobenius(&dev);
        dev.fill(Complex::new(0.0, 0.0));
        bs.push(b.clone());
        det_gram.push(det_bb_star(&b));
        residuals.push(devn);
        prev = Some(v);
    }
    Ok(ChainSolution {
        b: bs,
        det_gram,
        residuals,
    })
}

/// Sampled restriction of the stability function to a one-parameter orbit.
#[derive(Debug, Clone)]
pub struct OdeTrajectory {
    pub ts: Vec<f64>,
    pub psis: Vec<f64>,
    /// ⟨Φ(orbit point) − α, w⟩ at each sample.
    pub pairings: Vec<f64>,
    /// Number of subdivisions of the final, accepted run.
    pub steps: usize,
}

const LEVEL_SET_TOL: f64 = 1e-8;

/// Integrate ψ'(t) = −2⟨Φ(exp(√−1 t w)·p) − α, w⟩ from ψ(0) = 0 by RK4,
/// doubling the step count until the endpoint moves by less than 1e−9.
/// The base point must lie on the zero level of the shifted moment map.
pub fn ode_psi(
    ws: &WeightSystem,
    p: &UpstairsPoint,
    w: &[f64],
    t_end: f64,
    steps: usize,
) -> Result<OdeTrajectory> {
    let m = ws.torus_rank();
    if w.len() != m {
        return Err(Error::InvalidInput("direction has the wrong length".into()));
    }
    let res = ws.moment_map(p).norm();
    if res > LEVEL_SET_TOL {
        return Err(Error::OffLevelSet {
            residual: res,
            tol: LEVEL_SET_TOL,
        });
    }
    let d = ws.d();
    let q: Vec<f64> = (0..d).map(|i| p[i].norm_sqr()).collect();
    // α_i·w per coordinate and α·w once.
    let wdot: Vec<f64> = (0..d)
        .map(|i| {
            ws.weight(i)
                .iter()
                .zip(w)
                .map(|(&a, &b)| a as f64 * b)
                .sum()
        })
        .collect();
    let level_dot: f64 = ws.level().iter().zip(w).map(|(&a, &b)| a as f64 * b).sum();
    let pairing = |t: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            if q[i] != 0.0 {
                s += q[i] * fmath::exp(2.0 * t * wdot[i]) * wdot[i];
            }
        }
        s - level_dot
    };

    let run = |n: usize| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = t_end / n as f64;
        let mut ts = Vec::with_capacity(n + 1);
        let mut psis = Vec::with_capacity(n + 1);
        let mut pairs = Vec::with_capacity(n + 1);
        let mut psi = 0.0;
        ts.push(0.0);
        psis.push(0.0);
        pairs.push(pairing(0.0));
        for i in 0..n {
            let t = i as f64 * h;
            let k1 = -2.0 * pairing(t);
            let k2 = -2.0 * pairing(t + 0.5 * h);
            let k3 = k2;
            let k4 = -2.0 * pairing(t + h);
            psi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            ts.push(t + h);
            psis.push(psi);
            pairs.push(pairing(t + h));
        }
        (ts, psis, pairs)
    };

    let mut n = steps.max(4);
    let mut prev_end = run(n).1[n];
    loop {
        let n2 = n * 2;
        if n2 > (1 << 22) {
            return Err(Error::Numerical(
                "step halving did not settle below 1e-9".into(),
            ));
        }
        let (ts2, psis2, pairs2) = run(n2);
        let end = psis2[n2];
        let drift = fmath::abs(end - prev_end);
        n = n2;
        if drift < 1e-9 {
            return Ok(OdeTrajectory {
                ts: ts2,
                psis: psis2,
                pairings: pairs2,
                steps: n,
            });
        }
        prev_end = end;
    }
}
