//! Monomial quantum states and their norms: pointwise values downstairs,
//! closed-form upstairs L² norms, polytope quadrature for the downstairs
//! L² norms, Gram matrices over lattice points, and the orbit volume
//! function.
//!
//! The downstairs measure is Lebesgue measure in the free coordinates of a
//! unimodular vertex chart. Quadrature triangulates the chart image of the
//! polytope exactly (rational arithmetic), then integrates per simplex with
//! tensor Gauss–Legendre nodes pushed through the Duffy map, refining by
//! bisection where the two-order error estimate is worst. All weights stay
//! positive and the constant 1 integrates to the exact decomposition
//! volume, which is what the sharp-peak integrands here need; integrals of
//! very large monomials run in log space with a peak shift.

use crate::error::{Error, Result};
use crate::fmath;
use crate::geometry::{rat, rat_to_f64, DelzantPolytope, Rat, VertexChart, WeightSystem};
use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

/// A monomial section z^m of the k-th tensor power.
#[derive(Debug, Clone)]
pub struct MonomialSection {
    pub m: Vec<i64>,
    pub k: u32,
}

impl MonomialSection {
    /// Validate that m is a lattice point of kΔ: componentwise nonnegative
    /// with Σ m_i α_i = kα.
    pub fn new(ws: &WeightSystem, m: Vec<i64>, k: u32) -> Result<Self> {
        if m.len() != ws.d() {
            return Err(Error::InvalidInput("exponent has the wrong length".into()));
        }
        if m.iter().any(|&mi| mi < 0) {
            return Err(Error::InvalidInput("exponents must be nonnegative".into()));
        }
        for j in 0..ws.torus_rank() {
            let s: i64 = (0..ws.d()).map(|i| m[i] * ws.weight(i)[j]).sum();
            if s != k as i64 * ws.level()[j] {
                return Err(Error::InvalidInput(
                    "exponent is not a lattice point of the scaled polytope".into(),
                ));
            }
        }
        Ok(MonomialSection { m, k })
    }

    pub fn degree(&self) -> i64 {
        self.m.iter().sum()
    }
}

// ---------------------------------------------------------------------------
// Gauss–Legendre nodes on [0, 1].

/// Nodes and weights of the p-point Gauss–Legendre rule on [0, 1], by
/// Newton iteration on the Legendre recurrence.
pub fn gauss_legendre_unit(p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; p];
    let mut weights = vec![0.0; p];
    for i in 0..p {
        // Chebyshev-flavored initial guess on [-1, 1].
        let mut x = fmath::cos(core::f64::consts::PI * (i as f64 + 0.75) / (p as f64 + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_p(x) and its derivative by upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for n in 2..=p {
                let nf = n as f64;
                let p2 = ((2.0 * nf - 1.0) * x * p1 - (nf - 1.0) * p0) / nf;
                p0 = p1;
                p1 = p2;
            }
            dp = p as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if fmath::abs(dx) < 1e-15 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

// ---------------------------------------------------------------------------
// Simplicial decomposition of the chart polytope.

#[derive(Debug, Clone)]
struct Simplex {
    /// n+1 vertices in chart coordinates.
    verts: Vec<Vec<f64>>,
    volume: f64,
}

impl Simplex {
    fn longest_edge(&self) -> (usize, usize) {
        let mut best = (0usize, 1usize);
        let mut len = -1.0;
        for a in 0..self.verts.len() {
            for b in a + 1..self.verts.len() {
                let l: f64 = self.verts[a]
                    .iter()
                    .zip(&self.verts[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                if l > len {
                    len = l;
                    best = (a, b);
                }
            }
        }
        best
    }

    fn bisect(&self) -> (Simplex, Simplex) {
        let (a, b) = self.longest_edge();
        let mid: Vec<f64> = self.verts[a]
            .iter()
            .zip(&self.verts[b])
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        let mut left = self.verts.clone();
        left[b] = mid.clone();
        let mut right = self.verts.clone();
        right[a] = mid;
        (
            Simplex {
                verts: left,
                volume: 0.5 * self.volume,
            },
            Simplex {
                verts: right,
                volume: 0.5 * self.volume,
            },
        )
    }
}

/// Pulling triangulation of the chart polytope. Faces are tracked by their
/// sets of vanishing ambient coordinates, so no floating-point geometry is
/// involved; simplex volumes come out of exact determinants.
fn triangulate(
    poly: &DelzantPolytope,
    chart: &VertexChart,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<Rat>>, Rat)> {
    let verts_chart = poly.chart_vertices(chart);
    let n = chart.free.len();
    let d = chart.free.len() + chart.support.len();
    let all: Vec<usize> = (0..verts_chart.len()).collect();

    fn face_dim(members: &[usize], verts: &[Vec<Rat>]) -> usize {
        if members.len() <= 1 {
            return 0;
        }
        let base = &verts[members[0]];
        let diffs: Vec<Vec<Rat>> = members[1..]
            .iter()
            .map(|&i| {
                verts[i]
                    .iter()
                    .zip(base)
                    .map(|(a, b)| *a - *b)
                    .collect::<Vec<Rat>>()
            })
            .collect();
        crate::geometry::rational_rank(&diffs)
    }

    fn pull(
        members: &[usize],
        zero_set: &BTreeSet<usize>,
        dim: usize,
        poly: &DelzantPolytope,
        verts: &[Vec<Rat>],
        d: usize,
        out: &mut Vec<Vec<usize>>,
        partial: &mut Vec<usize>,
    ) -> Result<()> {
        if dim == 0 {
            if members.is_empty() {
                return Err(Error::Numerical("empty face in triangulation".into()));
            }
            let mut simplex = partial.clone();
            simplex.push(members[0]);
            out.push(simplex);
            return Ok(());
        }
        let v0 = members[0];
        partial.push(v0);
        let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
        for i in 0..d {
            if zero_set.contains(&i) {
                continue;
            }
            // The facet q_i = 0 must exclude the pulled vertex.
            if !poly.vertices()[v0].support.contains(&i) {
                continue;
            }
            let sub: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&v| !poly.vertices()[v].support.contains(&i))
                .collect();
            if sub.is_empty() || seen.contains(&sub) {
                continue;
            }
            if face_dim(&sub, verts) != dim - 1 {
                continue;
            }
            seen.insert(sub.clone());
            let mut z = zero_set.clone();
            z.insert(i);
            pull(&sub, &z, dim - 1, poly, verts, d, out, partial)?;
        }
        partial.pop();
        Ok(())
    }

    let mut out = Vec::new();
    if n == 0 {
        return Ok((vec![vec![0]], verts_chart, rat(1)));
    }
    let dim = face_dim(&all, &verts_chart);
    if dim != n {
        return Err(Error::Numerical(
            "polytope does not have full dimension in its chart".into(),
        ));
    }
    let mut partial = Vec::new();
    pull(
        &all,
        &BTreeSet::new(),
        n,
        poly,
        &verts_chart,
        d,
        &mut out,
        &mut partial,
    )?;
    // Exact volumes; drop degenerate simplices (they can arise when a pulled
    // vertex is affinely dependent on a sub-face).
    let mut kept = Vec::new();
    let mut total = rat(0);
    let mut factorial = rat(1);
    for j in 1..=n {
        factorial *= rat(j as i128);
    }
    for s in out {
        let base = &verts_chart[s[0]];
        let rows: Vec<Vec<Rat>> = s[1..]
            .iter()
            .map(|&i| {
                verts_chart[i]
                    .iter()
                    .zip(base)
                    .map(|(a, b)| *a - *b)
                    .collect()
            })
            .collect();
        let det = crate::geometry::det_square(&rows);
        let vol = if det < rat(0) { -det } else { det } / factorial;
        if vol != rat(0) {
            total += vol;
            kept.push(s);
        }
    }
    Ok((kept, verts_chart, total))
}

// ---------------------------------------------------------------------------
// Quadrature rule.

/// Integration result with the achieved error estimate.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    /// Absolute error estimate from the two-order comparison.
    pub error: f64,
    pub evaluations: usize,
    pub subdivisions: usize,
}

/// Log-domain integration result: the integral is exp(log_value), with a
/// relative error estimate.
#[derive(Debug, Clone, Copy)]
pub struct LogQuadResult {
    pub log_value: f64,
    pub rel_error: f64,
    pub evaluations: usize,
    pub subdivisions: usize,
}

struct HeapTask {
    error: f64,
    value: f64,
    simplex: Simplex,
}

impl PartialEq for HeapTask {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for HeapTask {}
impl PartialOrd for HeapTask {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapTask {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive quadrature over the k-th dilation of a polytope, parameterized
/// by the free coordinates of its canonical chart.
pub struct QuadratureRule {
    chart: VertexChart,
    k: f64,
    simplices: Vec<Simplex>,
    exact_volume: Rat,
    pub rel_tol: f64,
    orders: (usize, usize),
    max_subdivisions: usize,
}

impl QuadratureRule {
    pub fn new(poly: &DelzantPolytope, k: u32, rel_tol: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("tensor power must be positive".into()));
        }
        let chart = poly.base_chart()?;
        let n = chart.free.len();
        let (index_simplices, verts_chart, vol_unit) = triangulate(poly, &chart)?;
        let kf = k as f64;
        let scale = rat(k as i128);
        let simplices: Vec<Simplex> = index_simplices
            .iter()
            .map(|s| {
                let verts: Vec<Vec<f64>> = s
                    .iter()
                    .map(|&i| {
                        verts_chart[i]
                            .iter()
                            .map(|r| rat_to_f64(*r * scale))
                            .collect()
                    })
                    .collect();
                let mut volume = if n == 0 { 1.0 } else { rat_to_f64(vol_unit) };
                if n > 0 {
                    // Recompute per-simplex volume exactly at scale k.
                    let base = &verts_chart[s[0]];
                    let rows: Vec<Vec<Rat>> = s[1..]
                        .iter()
                        .map(|&i| {
                            verts_chart[i]
                                .iter()
                                .zip(base)
                                .map(|(a, b)| (*a - *b) * scale)
                                .collect()
                        })
                        .collect();
                    let det = crate::geometry::det_square(&rows);
                    let mut f = rat(1);
                    for j in 1..=n {
                        f *= rat(j as i128);
                    }
                    let v = if det < rat(0) { -det } else { det } / f;
                    volume = rat_to_f64(v);
                }
                Simplex { verts, volume }
            })
            .collect();
        let mut scaled_volume = vol_unit;
        for _ in 0..n {
            scaled_volume *= scale;
        }
        let orders = match n {
            0 | 1 => (16, 24),
            2 => (10, 14),
            _ => (6, 8),
        };
        Ok(QuadratureRule {
            chart,
            k: kf,
            simplices,
            exact_volume: if n == 0 { rat(1) } else { scaled_volume },
            rel_tol,
            orders,
            max_subdivisions: 40_000,
        })
    }

    pub fn free_dim(&self) -> usize {
        self.chart.free.len()
    }

    pub fn simplex_count(&self) -> usize {
        self.simplices.len()
    }

    /// Volume of the integration domain, exact from the decomposition.
    pub fn exact_volume(&self) -> Rat {
        self.exact_volume
    }

    pub fn volume(&self) -> f64 {
        rat_to_f64(self.exact_volume)
    }

    /// The base nodes and weights of one simplex at the given tensor order:
    /// Duffy-mapped Gauss–Legendre, all weights positive.
    fn simplex_nodes(
        &self,
        simplex: &Simplex,
        nodes1: &[f64],
        weights1: &[f64],
        out: &mut Vec<(Vec<f64>, f64)>,
    ) {
        let n = self.free_dim();
        out.clear();
        if n == 0 {
            out.push((Vec::new(), 1.0));
            return;
        }
        let p = nodes1.len();
        let mut idx = vec![0usize; n];
        let nfact: f64 = (1..=n).map(|j| j as f64).product();
        loop {
            // Duffy map: ξ_j = x_j Π_{i<j}(1 − x_i), Jacobian Π (1−x_j)^{n−1−j}.
            let mut w = simplex.volume * nfact;
            let mut prefix = 1.0;
            let mut xi = vec![0.0; n];
            for j in 0..n {
                let x = nodes1[idx[j]];
                w *= weights1[idx[j]];
                xi[j] = x * prefix;
                let power = (n - 1 - j) as i32;
                if power > 0 {
                    w *= fmath::powi(1.0 - x, power);
                }
                prefix *= 1.0 - x;
            }
            let mut u = simplex.verts[0].clone();
            for j in 0..n {
                for c in 0..n {
                    u[c] += xi[j] * (simplex.verts[j + 1][c] - simplex.verts[0][c]);
                }
            }
            out.push((u, w));
            let mut carry = 0;
            while carry < n {
                idx[carry] += 1;
                if idx[carry] < p {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
            }
            if carry == n {
                break;
            }
        }
    }

    fn eval_simplex(
        &self,
        simplex: &Simplex,
        f: &mut dyn FnMut(&[f64]) -> f64,
        lo: &(Vec<f64>, Vec<f64>),
        hi: &(Vec<f64>, Vec<f64>),
        scratch: &mut Vec<(Vec<f64>, f64)>,
        evals: &mut usize,
    ) -> (f64, f64) {
        let mut acc = [0.0f64; 2];
        for (which, rule) in [lo, hi].iter().enumerate() {
            self.simplex_nodes(simplex, &rule.0, &rule.1, scratch);
            let mut s = 0.0;
            for (u, w) in scratch.iter() {
                let q = self.chart.ambient_from_chart(u, self.k);
                s += w * f(&q);
                *evals += 1;
            }
            acc[which] = s;
        }
        (acc[1], fmath::abs(acc[1] - acc[0]))
    }

    /// Adaptive integral of f over the dilated polytope; f receives ambient
    /// moment coordinates (length d).
    pub fn integrate(&self, f: &mut dyn FnMut(&[f64]) -> f64) -> Result<QuadResult> {
        let lo = gauss_legendre_unit(self.orders.0);
        let hi = gauss_legendre_unit(self.orders.1);
        let mut scratch = Vec::new();
        let mut evals = 0usize;
        let mut heap: BinaryHeap<HeapTask> = BinaryHeap::new();
        let mut total = 0.0;
        let mut total_err = 0.0;
        for s in &self.simplices {
            let (v, e) = self.eval_simplex(s, f, &lo, &hi, &mut scratch, &mut evals);
            total += v;
            total_err += e;
            heap.push(HeapTask {
                error: e,
                value: v,
                simplex: s.clone(),
            });
        }
        let mut subdivisions = 0usize;
        if self.free_dim() > 0 {
            while total_err > self.rel_tol * fmath::abs(total) + 1e-300 {
                if subdivisions >= self.max_subdivisions {
                    return Err(Error::QuadratureBudget {
                        achieved: total_err / fmath::max(fmath::abs(total), 1e-300),
                        target: self.rel_tol,
                    });
                }
                let worst = heap.pop().expect("refinement heap never empties");
                total -= worst.value;
                total_err -= worst.error;
                let (a, b) = worst.simplex.bisect();
                for child in [a, b] {
                    let (v, e) = self.eval_simplex(&child, f, &lo, &hi, &mut scratch, &mut evals);
                    total += v;
                    total_err += e;
                    heap.push(HeapTask {
                        error: e,
                        value: v,
                        simplex: child,
                    });
                }
                subdivisions += 1;
            }
        }
        Ok(QuadResult {
            value: total,
            error: total_err,
            evaluations: evals,
            subdivisions,
        })
    }

    /// Adaptive integral of exp(log_f) with a peak shift: the maximum of
    /// log_f over the base nodes is subtracted before exponentiation, so
    /// integrands far outside the representable range still work. log_f may
    /// return -inf where the integrand vanishes.
    pub fn integrate_log(&self, log_f: &mut dyn FnMut(&[f64]) -> f64) -> Result<LogQuadResult> {
        // Peak scan over the base decomposition at the low order.
        let lo = gauss_legendre_unit(self.orders.0);
        let mut scratch = Vec::new();
        let mut peak = f64::NEG_INFINITY;
        for s in &self.simplices {
            self.simplex_nodes(s, &lo.0, &lo.1, &mut scratch);
            for (u, _) in scratch.iter() {
                let q = self.chart.ambient_from_chart(u, self.k);
                let v = log_f(&q);
                if v > peak {
                    peak = v;
                }
            }
        }
        if peak == f64::NEG_INFINITY {
            return Err(Error::Numerical(
                "integrand vanishes at every probe node".into(),
            ));
        }
        let mut f = |q: &[f64]| -> f64 {
            let v = log_f(q) - peak;
            if v == f64::NEG_INFINITY {
                0.0
            } else {
                fmath::exp(v)
            }
        };
        let shifted = self.integrate(&mut f)?;
        if shifted.value <= 0.0 {
            return Err(Error::Numerical("integral is not positive".into()));
        }
        Ok(LogQuadResult {
            log_value: peak + fmath::ln(shifted.value),
            rel_error: shifted.error / shifted.value,
            evaluations: shifted.evaluations,
            subdivisions: shifted.subdivisions,
        })
    }

    /// Mean of `g` against the positive density `exp(log_weight)`, computed as
    /// a ratio of two peak-shifted integrals so that densities whose maximum is
    /// far outside the representable range still divide out cleanly.
    pub fn weighted_mean(
        &self,
        log_weight: &mut dyn FnMut(&[f64]) -> f64,
        g: &mut dyn FnMut(&[f64]) -> f64,
    ) -> Result<f64> {
        let lo = gauss_legendre_unit(self.orders.0);
        let mut scratch = Vec::new();
        let mut peak = f64::NEG_INFINITY;
        for s in &self.simplices {
            self.simplex_nodes(s, &lo.0, &lo.1, &mut scratch);
            for (u, _) in scratch.iter() {
                let q = self.chart.ambient_from_chart(u, self.k);
                let v = log_weight(&q);
                if v > peak {
                    peak = v;
                }
            }
        }
        if peak == f64::NEG_INFINITY {
            return Err(Error::Numerical(
                "weight vanishes at every probe node".into(),
            ));
        }
        let mut den_f = |q: &[f64]| -> f64 {
            let v = log_weight(q) - peak;
            if v == f64::NEG_INFINITY {
                0.0
            } else {
                fmath::exp(v)
            }
        };
        let den = self.integrate(&mut den_f)?;
        if den.value <= 0.0 {
            return Err(Error::Numerical("weight integral is not positive".into()));
        }
        let mut num_f = |q: &[f64]| -> f64 {
            let v = log_weight(q) - peak;
            if v == f64::NEG_INFINITY {
                0.0
            } else {
                fmath::exp(v) * g(q)
            }
        };
        let num = self.integrate(&mut num_f)?;
        Ok(num.value / den.value)
    }
}

// ---------------------------------------------------------------------------
// Norms.

fn membership_check(ws: &WeightSystem, k: u32, q: &[f64]) -> Result<()> {
    if q.len() != ws.d() {
        return Err(Error::InvalidInput("point has the wrong length".into()));
    }
    if q.iter().any(|&qi| qi < -1e-9) {
        return Err(Error::OutsidePolytope);
    }
    let m = ws.torus_rank();
    let mut scale = 1.0;
    for j in 0..m {
        let target = k as f64 * ws.level()[j] as f64;
        scale = fmath::max(scale, fmath::abs(target));
    }
    for j in 0..m {
        let target = k as f64 * ws.level()[j] as f64;
        let s: f64 = (0..ws.d()).map(|i| q[i] * ws.weight(i)[j] as f64).sum();
        if fmath::abs(s - target) > 1e-6 * scale {
            return Err(Error::OutsidePolytope);
        }
    }
    Ok(())
}

/// log Π l_i(q)^{m_i} e^{−l(q)}; -inf where a needed coordinate vanishes.
pub fn log_pointwise_norm_downstairs(sec: &MonomialSection, q: &[f64]) -> f64 {
    let mut v = 0.0;
    for (i, &mi) in sec.m.iter().enumerate() {
        v -= q[i];
        if mi > 0 {
            if q[i] <= 0.0 {
                return f64::NEG_INFINITY;
            }
            v += mi as f64 * fmath::ln(q[i]);
        }
    }
    v
}

/// Pointwise squared norm of the reduced section at the moment-coordinate
/// label q of the dilated polytope.
pub fn pointwise_norm_downstairs(
    sec: &MonomialSection,
    poly: &DelzantPolytope,
    q: &[f64],
) -> Result<f64> {
    membership_check(poly.weight_system(), sec.k, q)?;
    let v = log_pointwise_norm_downstairs(sec, q);
    Ok(if v == f64::NEG_INFINITY {
        0.0
    } else {
        fmath::exp(v)
    })
}

/// log of the upstairs L² norm: Σ_i [log π + log m_i! − (m_i+1) log k].
pub fn log_l2_norm_upstairs(sec: &MonomialSection) -> f64 {
    let k = sec.k as f64;
    sec.m
        .iter()
        .map(|&mi| {
            fmath::ln(core::f64::consts::PI) + fmath::ln_factorial(mi as u64)
                - (mi + 1) as f64 * fmath::ln(k)
        })
        .sum()
}

/// Closed-form upstairs L² norm Π_i π · m_i! / k^{m_i+1}.
pub fn l2_norm_upstairs(sec: &MonomialSection) -> f64 {
    fmath::exp(log_l2_norm_upstairs(sec))
}

/// Downstairs L² norm with its achieved error estimate.
#[derive(Debug, Clone, Copy)]
pub struct NormEstimate {
    pub value: f64,
    pub log_value: f64,
    pub rel_error: f64,
}

/// Downstairs L² norm ∫ Π l^m e^{−l} dσ over the dilated polytope.
pub fn l2_norm_downstairs(
    sec: &MonomialSection,
    _poly: &DelzantPolytope,
    rule: &QuadratureRule,
) -> Result<NormEstimate> {
    let res = rule.integrate_log(&mut |q| log_pointwise_norm_downstairs(sec, q))?;
    Ok(NormEstimate {
        value: fmath::exp(res.log_value),
        log_value: res.log_value,
        rel_error: res.rel_error,
    })
}

/// Diagonal Gram matrix of all lattice sections at power k. Distinct
/// monomials are orthogonal for every torus-invariant downstairs volume
/// (they restrict to distinct characters of the residual torus), so the
/// off-diagonal entries are identically zero and only the diagonal is
/// computed.
pub struct GramMatrix {
    pub lattice: Vec<Vec<i64>>,
    pub log_diagonal: Vec<f64>,
    pub volume_weighted: bool,
}

impl GramMatrix {
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        if a == b {
            fmath::exp(self.log_diagonal[a])
        } else {
            0.0
        }
    }

    pub fn dim(&self) -> usize {
        self.lattice.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.dim(), |a, b| self.entry(a, b))
    }
}

/// Gram matrix over all lattice points of the dilated polytope, with the
/// plain reduced measure or the V-weighted one.
pub fn gram_matrix(
    poly: &DelzantPolytope,
    k: u32,
    rule: &QuadratureRule,
    volume_weighted: bool,
) -> Result<GramMatrix> {
    let ws = poly.weight_system();
    let lattice = poly.lattice_points(k)?;
    let mut log_diagonal = Vec::with_capacity(lattice.len());
    for m in &lattice {
        let sec = MonomialSection::new(ws, m.clone(), k)?;
        let res = rule.integrate_log(&mut |q| {
            let mut v = log_pointwise_norm_downstairs(&sec, q);
            if volume_weighted && v != f64::NEG_INFINITY {
                v += fmath::ln(volume_function_unchecked(ws, q));
            }
            v
        })?;
        log_diagonal.push(res.log_value);
    }
    Ok(GramMatrix {
        lattice,
        log_diagonal,
        volume_weighted,
    })
}

pub(crate) fn volume_function_unchecked(ws: &WeightSystem, q: &[f64]) -> f64 {
    let g = ws.gram_at(q);
    let det = g.determinant();
    let m = ws.torus_rank() as i32;
    fmath::powi(2.0 * core::f64::consts::PI, m) * fmath::sqrt(fmath::max(det, 0.0))
}

/// Riemannian volume of the compact-group orbit over the moment label q:
/// V(q) = (2π)^m √det Γ(q) with Γ_{ab} = Σ_i α_{ia} α_{ib} q_i.
pub fn volume_function(ws: &WeightSystem, q: &[f64]) -> Result<f64> {
    if q.len() != ws.d() {
        return Err(Error::InvalidInput("point has the wrong length".into()));
    }
    let g = ws.gram_at(q);
    let det = g.determinant();
    if !(det > 1e-12) {
        return Err(Error::InvalidInput(
            "orbit degenerates at the polytope boundary".into(),
        ));
    }
    Ok(volume_function_unchecked(ws, q))
}
