//! Non-abelian model families: rectangular matrix data, chains of them, and
//! framed quivers, together with their moment maps, level-set point
//! generators, invariant sections, and a general multiplicative solver.
//!
//! A chain of length n is a tuple (Z_1, …, Z_{n−1}) with Z_i of shape
//! i×(i+1); the gauge group U(1)×⋯×U(n−1) acts by Z_i ↦ g_i Z_i g_{i+1}^{-1}
//! (g_n = I), and the level equations are Z_iZ_i* − Z_{i−1}*Z_{i−1} = m_i I.
//! The eigenvalue ladder of the transported blocks is determined by the
//! twists alone, which is what makes chains a model for isospectral sets of
//! Hermitian matrices.
//!
//! Quivers generalize this: vertices carry dimensions and levels, oriented
//! edges carry matrices, and ungauged vertices model frames. The solver
//! minimizes the norm functional multiplicatively over the gauged factors;
//! its gradient is exactly the list of shifted vertex moments, and the
//! Hessian quadratic form is a sum of squares, so damped Newton steps with a
//! spectral pseudo-inverse handle the center degeneracy of closed quivers.

use crate::error::{Error, Result};
use crate::fmath;
use crate::rng::SeededRng;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex;

type CMat = DMatrix<Complex<f64>>;

fn frobenius2(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum()
}

fn hermitian_symmetrize(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex::new(0.5, 0.0)
}

/// log det of a positive definite Hermitian matrix via Cholesky.
fn logdet_pd(m: &CMat) -> Result<f64> {
    let ch = Cholesky::new(m.clone())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    let l = ch.l();
    let mut s = 0.0;
    for i in 0..m.nrows() {
        s += fmath::ln(l[(i, i)].norm_sqr());
    }
    Ok(s)
}

/// exp of a Hermitian matrix through its spectral decomposition.
fn herm_exp(h: &CMat) -> CMat {
    let n = h.nrows();
    let es = h.clone().symmetric_eigen();
    let mut d = CMat::zeros(n, n);
    for i in 0..n {
        d[(i, i)] = Complex::new(fmath::exp(es.eigenvalues[i]), 0.0);
    }
    &es.eigenvectors * d * es.eigenvectors.adjoint()
}

// ---------------------------------------------------------------------------
// Chains.

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixChainSpec {
    n: usize,
    twists: Vec<u32>,
    /// a_1, …, a_n: the twists followed by the trailing shift a_n.
    a: Vec<i64>,
    /// λ_i = Σ_{j≥i} a_j.
    lambdas: Vec<i64>,
}

impl MatrixChainSpec {
    /// Chain of length n = twists.len() + 1 with a trailing shift a_n ≥ 1
    /// completing the eigenvalue ladder λ_i = Σ_{j≥i} a_j.
    pub fn new(twists: Vec<u32>, a_n: u32) -> Result<Self> {
        if twists.is_empty() {
            return Err(Error::InvalidInput("chain needs at least one twist".into()));
        }
        if twists.iter().any(|&m| m == 0) || a_n == 0 {
            return Err(Error::InvalidInput("twists must be positive".into()));
        }
        let n = twists.len() + 1;
        let mut a: Vec<i64> = twists.iter().map(|&m| m as i64).collect();
        a.push(a_n as i64);
        let mut lambdas = vec![0i64; n];
        let mut acc = 0;
        for i in (0..n).rev() {
            acc += a[i];
            lambdas[i] = acc;
        }
        Ok(MatrixChainSpec {
            n,
            twists,
            a,
            lambdas,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn twists(&self) -> &[u32] {
        &self.twists
    }

    pub fn a(&self) -> &[i64] {
        &self.a
    }

    pub fn lambdas(&self) -> &[i64] {
        &self.lambdas
    }

    /// Link shapes: link i (0-based) is (i+1) × (i+2).
    pub fn link_dims(&self) -> Vec<(usize, usize)> {
        (0..self.n - 1).map(|i| (i + 1, i + 2)).collect()
    }

    fn check_dims(&self, zs: &[CMat]) -> Result<()> {
        if zs.len() != self.n - 1 {
            return Err(Error::InvalidInput("wrong number of chain links".into()));
        }
        for (i, z) in zs.iter().enumerate() {
            if z.nrows() != i + 1 || z.ncols() != i + 2 {
                return Err(Error::InvalidInput(alloc::format!(
                    "link {i} has shape {}x{}, expected {}x{}",
                    z.nrows(),
                    z.ncols(),
                    i + 1,
                    i + 2
                )));
            }
        }
        Ok(())
    }

    /// Eigenvalues of the transported block at link i (0-based) on the level
    /// set: the suffix sums m_j + ⋯ + m_{i+1}, j = 1..i+1 (1-based), sorted
    /// descending.
    pub fn level_block_eigenvalues(&self, i: usize) -> Vec<i64> {
        let upto = i + 1;
        let mut out = Vec::with_capacity(upto);
        for j in 0..upto {
            out.push(self.twists[j..upto].iter().map(|&m| m as i64).sum());
        }
        out
    }

    /// det of the transported block at link i on the level set: the product
    /// of the eigenvalue ladder.
    pub fn level_block_det(&self, i: usize) -> i64 {
        self.level_block_eigenvalues(i).iter().product()
    }

    /// trace of the transported block at link i on the level set.
    pub fn level_block_trace(&self, i: usize) -> i64 {
        self.level_block_eigenvalues(i).iter().sum()
    }

    /// Constants normalizing the composite-section determinants on the level
    /// set: with P_{n−2}(x) = x and P_i(x) = x · P_{i+1}(x + m_{i+2}) (0-based
    /// link indices), the k-th constant is Π P_k over the eigenvalue ladder
    /// of block k.
    pub fn section_constants_log(&self) -> Vec<f64> {
        let links = self.n - 1;
        let eval_p = |k: usize, x: f64| -> f64 {
            // P_k(x) evaluated by unrolling the recursion.
            let mut val = 1.0;
            let mut arg = x;
            for j in k..links {
                val *= arg;
                if j + 1 < links {
                    arg += self.twists[j + 1] as f64;
                }
            }
            val
        };
        (0..links)
            .map(|k| {
                let mut s = 0.0;
                for &lam in &self.level_block_eigenvalues(k) {
                    s += fmath::ln(eval_p(k, lam as f64));
                }
                s
            })
            .collect()
    }
}

/// Shifted per-vertex chain moments (Z_iZ_i* − Z_{i−1}*Z_{i−1} − m_i I),
/// Hermitian-symmetrized.
pub fn chain_moment(spec: &MatrixChainSpec, zs: &[CMat]) -> Result<Vec<CMat>> {
    spec.check_dims(zs)?;
    let mut out = Vec::with_capacity(zs.len());
    for i in 0..zs.len() {
        let mut mu = &zs[i] * zs[i].adjoint();
        if i > 0 {
            mu -= zs[i - 1].adjoint() * &zs[i - 1];
        }
        for a in 0..mu.nrows() {
            mu[(a, a)] -= Complex::new(spec.twists[i] as f64, 0.0);
        }
        out.push(hermitian_symmetrize(&mu));
    }
    Ok(out)
}

/// Deterministic level-set point: Z_i = [R_i | 0] · U_i with R_i the Cholesky
/// factor of Z_{i−1}*Z_{i−1} + m_i I and U_i a seeded Haar unitary.
pub fn generate_level_point(spec: &MatrixChainSpec, seed: u64) -> Vec<CMat> {
    let mut rng = SeededRng::new(seed);
    let mut zs: Vec<CMat> = Vec::with_capacity(spec.n - 1);
    for i in 0..spec.n - 1 {
        let li = i + 1;
        let mut rhs = CMat::from_diagonal_element(li, li, Complex::new(spec.twists[i] as f64, 0.0));
        if i > 0 {
            rhs += zs[i - 1].adjoint() * &zs[i - 1];
        }
        let r = Cholesky::new(rhs).expect("positive twists keep the recursion definite").l();
        let u = rng.haar_unitary(li + 1);
        let mut padded = CMat::zeros(li, li + 1);
        for a in 0..li {
            for b in 0..li {
                padded[(a, b)] = r[(a, b)];
            }
        }
        zs.push(padded * u);
    }
    zs
}

/// The n×n Hermitian matrix whose isospectral set the chain models:
/// Z_{n−1}*Z_{n−1} + a_n I_n.
pub fn chain_endpoint(spec: &MatrixChainSpec, zs: &[CMat]) -> Result<CMat> {
    spec.check_dims(zs)?;
    let last = &zs[zs.len() - 1];
    let mut psi = last.adjoint() * last;
    for a in 0..psi.nrows() {
        psi[(a, a)] += Complex::new(spec.a[spec.n - 1] as f64, 0.0);
    }
    Ok(hermitian_symmetrize(&psi))
}

/// Composite map π_k = Z_k Z_{k+1} ⋯ Z_{n−2} (0-based k), of shape (k+1)×n.
pub fn composite_map(zs: &[CMat], k: usize) -> CMat {
    let mut acc = zs[k].clone();
    for z in &zs[k + 1..] {
        acc = &acc * z;
    }
    acc
}

/// Gauge action Z_i ↦ g_i Z_i g_{i+1}^{-1} (g_n omitted ≡ I). The factors
/// must be invertible; unitary and positive factors both qualify.
pub fn chain_gauge_action(zs: &[CMat], gs: &[CMat]) -> Vec<CMat> {
    let mut out = Vec::with_capacity(zs.len());
    for i in 0..zs.len() {
        let mut w = &gs[i] * &zs[i];
        if i + 1 < zs.len() {
            let inv = gs[i + 1]
                .clone()
                .try_inverse()
                .expect("gauge factor must be invertible");
            w = w * inv;
        }
        out.push(w);
    }
    out
}

// ---------------------------------------------------------------------------
// Square-minor section values.

/// Lexicographic k-subsets of 0..n.
pub(crate) fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn column_minor(z: &CMat, cols: &[usize]) -> Complex<f64> {
    let k = z.nrows();
    let sub = CMat::from_fn(k, k, |r, c| z[(r, cols[c])]);
    sub.determinant()
}

/// Leading-columns square minor with lexicographic fallback: returns the
/// minor value and the chosen column set. A value of zero (all minors
/// negligible) is legitimate and reported as the leading minor's value.
pub fn leading_minor_with_fallback(z: &CMat) -> (Complex<f64>, Vec<usize>) {
    let k = z.nrows();
    let n = z.ncols();
    assert!(n >= k, "minor selection needs at least as many columns as rows");
    // Hadamard-style scale for the singularity threshold.
    let mut scale = 1.0f64;
    for c in 0..n.min(k) {
        let mut s = 0.0;
        for r in 0..k {
            s += z[(r, c)].norm_sqr();
        }
        scale *= fmath::sqrt(s).max(1e-30);
    }
    let threshold = 1e-10 * scale.max(1e-30);
    let lead: Vec<usize> = (0..k).collect();
    let lead_val = column_minor(z, &lead);
    if lead_val.norm() > threshold {
        return (lead_val, lead);
    }
    for cols in subsets(n, k) {
        let v = column_minor(z, &cols);
        if v.norm() > threshold {
            return (v, cols);
        }
    }
    (lead_val, lead)
}

/// Grassmannian section: the leading k×k column minor raised to the twist.
pub fn grassmannian_section_value(z: &CMat, m_twist: u32) -> Complex<f64> {
    let (v, _) = leading_minor_with_fallback(z);
    let mut acc = Complex::new(1.0, 0.0);
    for _ in 0..m_twist {
        acc *= v;
    }
    acc
}

/// Chain section: the product over links k of the leading minor of the
/// composite map π_k, raised to the k-th twist. Gauge-equivariant because
/// π_k(g·Z) = g_k π_k(Z).
pub fn chain_section_value(spec: &MatrixChainSpec, zs: &[CMat]) -> Result<Complex<f64>> {
    spec.check_dims(zs)?;
    let mut acc = Complex::new(1.0, 0.0);
    for k in 0..zs.len() {
        let pi = composite_map(zs, k);
        let (v, _) = leading_minor_with_fallback(&pi);
        for _ in 0..spec.twists[k] {
            acc *= v;
        }
    }
    Ok(acc)
}

/// log |s|² of the chain section, with per-factor minor values reported; a
/// vanishing factor yields −∞.
pub fn chain_section_log_norm2(spec: &MatrixChainSpec, zs: &[CMat]) -> Result<f64> {
    spec.check_dims(zs)?;
    let mut acc = 0.0;
    for k in 0..zs.len() {
        let pi = composite_map(zs, k);
        let (v, _) = leading_minor_with_fallback(&pi);
        let n2 = v.norm_sqr();
        if n2 == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        acc += spec.twists[k] as f64 * fmath::ln(n2);
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Polygon configurations: m vectors in C², levels λ_1..λ_m < 0 and a central
// λ_{m+1} > 0 with Σλ_i + 2λ_{m+1} = 0.

#[derive(Debug, Clone)]
pub struct PolygonLevels {
    pub lambdas: Vec<i64>,
}

impl PolygonLevels {
    pub fn new(lambdas: Vec<i64>) -> Result<Self> {
        if lambdas.len() < 4 {
            return Err(Error::InvalidInput(
                "polygon needs at least three sides and the central level".into(),
            ));
        }
        let m = lambdas.len() - 1;
        for (i, &l) in lambdas[..m].iter().enumerate() {
            if l >= 0 {
                return Err(Error::InvalidInput(alloc::format!(
                    "side level {i} must be negative"
                )));
            }
        }
        let central = lambdas[m];
        if central <= 0 {
            return Err(Error::InvalidInput("central level must be positive".into()));
        }
        let total: i64 = lambdas[..m].iter().sum();
        if total + 2 * central != 0 {
            return Err(Error::InvalidInput(
                "levels violate the center constraint (sum + 2·central ≠ 0)".into(),
            ));
        }
        // Level-set existence: no side may exceed the half-perimeter.
        let longest = lambdas[..m].iter().map(|&l| -l).max().unwrap();
        if longest > central {
            return Err(Error::InvalidInput(
                "longest side exceeds the half-perimeter: level set is empty".into(),
            ));
        }
        Ok(PolygonLevels { lambdas })
    }

    pub fn sides(&self) -> usize {
        self.lambdas.len() - 1
    }

    pub fn central(&self) -> i64 {
        self.lambdas[self.lambdas.len() - 1]
    }
}

/// Coordinate section Π x_i^{−λ_i} over the first components; vanishes when
/// any x_i = 0 (a legitimate value). This is the printed per-coordinate
/// recipe; the pair-determinant sections below are the gauge-equivariant
/// ones used by the identity checks.
pub fn polygon_coordinate_section(levels: &PolygonLevels, z: &CMat) -> Result<Complex<f64>> {
    let m = levels.sides();
    if z.nrows() != 2 || z.ncols() != m {
        return Err(Error::InvalidInput("polygon point must be 2×(sides)".into()));
    }
    let mut acc = Complex::new(1.0, 0.0);
    for i in 0..m {
        let x = z[(0, i)];
        for _ in 0..(-levels.lambdas[i]) {
            acc *= x;
        }
    }
    Ok(acc)
}

/// A pairing scheme: multiplicities ν on unordered side pairs with
/// Σ_{pairs ∋ i} ν = −λ_i; the associated section is Π det[Z_i|Z_j]^ν.
#[derive(Debug, Clone)]
pub struct PairingScheme {
    pub pairs: Vec<(usize, usize, i64)>,
}

/// Deterministic largest-degree-first pairing. Exists exactly when the
/// polygon inequalities hold, which `PolygonLevels::new` guarantees.
pub fn polygon_pairing(levels: &PolygonLevels) -> PairingScheme {
    let m = levels.sides();
    let mut deg: Vec<i64> = levels.lambdas[..m].iter().map(|&l| -l).collect();
    let mut mult: BTreeMap<(usize, usize), i64> = BTreeMap::new();
    loop {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
        if deg[order[0]] == 0 {
            break;
        }
        let (i, j) = (order[0], order[1]);
        debug_assert!(deg[j] > 0, "pairing ran out of partners");
        let key = (i.min(j), i.max(j));
        *mult.entry(key).or_insert(0) += 1;
        deg[i] -= 1;
        deg[j] -= 1;
    }
    PairingScheme {
        pairs: mult.into_iter().map(|((i, j), v)| (i, j, v)).collect(),
    }
}

/// log |s|² of the pair-determinant section for a pairing scheme; −∞ when a
/// selected determinant vanishes.
pub fn polygon_pair_section_log_norm2(z: &CMat, scheme: &PairingScheme) -> f64 {
    let mut acc = 0.0;
    for &(i, j, nu) in &scheme.pairs {
        let det = z[(0, i)] * z[(1, j)] - z[(1, i)] * z[(0, j)];
        let n2 = det.norm_sqr();
        if n2 == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += nu as f64 * fmath::ln(n2);
    }
    acc
}

// ---------------------------------------------------------------------------
// Quivers.

#[derive(Debug, Clone)]
pub struct QuiverSpec {
    /// Vertex dimensions l_κ.
    pub dims: Vec<usize>,
    /// Whether each vertex is gauged; ungauged vertices model frames.
    pub gauged: Vec<bool>,
    /// Oriented edges (from, to); the matrix on (i, j) has shape l_j × l_i.
    pub edges: Vec<(usize, usize)>,
    /// Per-vertex levels λ_κ (ignored at ungauged vertices).
    pub levels: Vec<i64>,
    /// Optional per-edge twists for determinant sections.
    pub edge_twists: Option<Vec<i64>>,
}

impl QuiverSpec {
    pub fn new(
        dims: Vec<usize>,
        gauged: Vec<bool>,
        edges: Vec<(usize, usize)>,
        levels: Vec<i64>,
    ) -> Result<Self> {
        let v = dims.len();
        if gauged.len() != v || levels.len() != v {
            return Err(Error::InvalidInput("vertex data lengths disagree".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput("vertex dimensions must be positive".into()));
        }
        for &(a, b) in &edges {
            if a >= v || b >= v || a == b {
                return Err(Error::InvalidInput("edge endpoints out of range".into()));
            }
        }
        // Acyclicity by Kahn's algorithm.
        let mut indeg = vec![0usize; v];
        for &(_, b) in &edges {
            indeg[b] += 1;
        }
        let mut queue: Vec<usize> = (0..v).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = queue.pop() {
            seen += 1;
            for &(a, b) in &edges {
                if a == i {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        queue.push(b);
                    }
                }
            }
        }
        if seen != v {
            return Err(Error::InvalidInput("quiver has a directed cycle".into()));
        }
        // When every edge endpoint is gauged the diagonal center acts
        // trivially and the level must kill it.
        let all_gauged_edges = edges.iter().all(|&(a, b)| gauged[a] && gauged[b]);
        if all_gauged_edges && !edges.is_empty() {
            let center: i64 = (0..v)
                .filter(|&i| gauged[i])
                .map(|i| dims[i] as i64 * levels[i])
                .sum();
            if center != 0 {
                return Err(Error::InvalidInput(
                    "levels do not annihilate the diagonal center".into(),
                ));
            }
        }
        Ok(QuiverSpec {
            dims,
            gauged,
            edges,
            levels,
            edge_twists: None,
        })
    }

    /// Attach per-edge determinant-section twists; the flow condition
    /// Σ ν_in − Σ ν_out = λ must hold at every gauged vertex.
    pub fn with_edge_twists(mut self, nu: Vec<i64>) -> Result<Self> {
        if nu.len() != self.edges.len() {
            return Err(Error::InvalidInput("one twist per edge required".into()));
        }
        for i in 0..self.dims.len() {
            if !self.gauged[i] {
                continue;
            }
            let mut flow = 0i64;
            for (e, &(a, b)) in self.edges.iter().enumerate() {
                if b == i {
                    flow += nu[e];
                }
                if a == i {
                    flow -= nu[e];
                }
            }
            if flow != self.levels[i] {
                return Err(Error::InvalidInput(alloc::format!(
                    "edge twists violate the flow condition at vertex {i}"
                )));
            }
        }
        self.edge_twists = Some(nu);
        Ok(self)
    }

    /// The chain as a quiver: vertices of dimensions 1..n, the last one an
    /// ungauged frame, and edges (i+1 → i) carrying the links in order.
    pub fn chain(spec: &MatrixChainSpec) -> Self {
        let n = spec.n();
        let dims: Vec<usize> = (1..=n).collect();
        let mut gauged = vec![true; n];
        gauged[n - 1] = false;
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i + 1, i)).collect();
        let mut levels: Vec<i64> = spec.twists().iter().map(|&m| m as i64).collect();
        levels.push(0);
        QuiverSpec {
            dims,
            gauged,
            edges,
            levels,
            edge_twists: None,
        }
    }

    /// The polygon star: side vertices of dimension 1 pointing into a
    /// central vertex of dimension 2, all gauged.
    pub fn polygon(levels: &PolygonLevels) -> Self {
        let m = levels.sides();
        let mut dims = vec![1usize; m];
        dims.push(2);
        let gauged = vec![true; m + 1];
        let edges: Vec<(usize, usize)> = (0..m).map(|i| (i, m)).collect();
        QuiverSpec {
            dims,
            gauged,
            edges,
            levels: levels.lambdas.clone(),
            edge_twists: None,
        }
    }

    /// One gauged vertex of dimension k against an ungauged frame of
    /// dimension n, level m·I at the gauged vertex.
    pub fn grassmannian(k: usize, n: usize, m_twist: u32) -> Self {
        QuiverSpec {
            dims: vec![k, n],
            gauged: vec![true, false],
            edges: vec![(1, 0)],
            levels: vec![m_twist as i64, 0],
            edge_twists: None,
        }
    }

    fn check_rep(&self, rep: &[CMat]) -> Result<()> {
        if rep.len() != self.edges.len() {
            return Err(Error::InvalidInput("one matrix per edge required".into()));
        }
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            if rep[e].nrows() != self.dims[b] || rep[e].ncols() != self.dims[a] {
                return Err(Error::InvalidInput(alloc::format!(
                    "edge {e} matrix has shape {}x{}, expected {}x{}",
                    rep[e].nrows(),
                    rep[e].ncols(),
                    self.dims[b],
                    self.dims[a]
                )));
            }
        }
        Ok(())
    }
}

/// Per-vertex shifted Hermitian moments Σ_in ZZ* − Σ_out Z*Z − λI,
/// Hermitian-symmetrized. Ungauged vertices are reported too (their entry is
/// informational; the solver ignores them).
pub fn quiver_moment(spec: &QuiverSpec, rep: &[CMat]) -> Result<Vec<CMat>> {
    spec.check_rep(rep)?;
    let v = spec.dims.len();
    let mut out: Vec<CMat> = (0..v).map(|i| CMat::zeros(spec.dims[i], spec.dims[i])).collect();
    for (e, &(a, b)) in spec.edges.iter().enumerate() {
        let z = &rep[e];
        out[b] += z * z.adjoint();
        out[a] -= z.adjoint() * z;
    }
    for i in 0..v {
        for a in 0..spec.dims[i] {
            out[i][(a, a)] -= Complex::new(spec.levels[i] as f64, 0.0);
        }
        out[i] = hermitian_symmetrize(&out[i]);
    }
    Ok(out)
}

/// Result of the multiplicative quiver minimization.
#[derive(Debug, Clone)]
pub struct QuiverSolution {
    /// Transformed representation on (or nearest to) the level set.
    pub transformed: Vec<CMat>,
    /// Accumulated positive gauge factors per vertex (identity at ungauged
    /// vertices).
    pub gauge: Vec<CMat>,
    /// Accumulated log-determinant traces tr(H_κ) of the gauge factors.
    pub trace_log: Vec<f64>,
    /// Root-sum-square of the gauged shifted moments at the final point.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostic: Option<String>,
    /// Functional drop F(end) − F(start); the stability function value when
    /// the input is a stable point.
    pub f_delta: f64,
}

/// Orthonormal real basis of Hermitian l×l matrices.
fn hermitian_basis(l: usize) -> Vec<CMat> {
    let mut out = Vec::with_capacity(l * l);
    for a in 0..l {
        let mut m = CMat::zeros(l, l);
        m[(a, a)] = Complex::new(1.0, 0.0);
        out.push(m);
    }
    let s = 1.0 / fmath::sqrt(2.0);
    for a in 0..l {
        for b in a + 1..l {
            let mut m = CMat::zeros(l, l);
            m[(a, b)] = Complex::new(s, 0.0);
            m[(b, a)] = Complex::new(s, 0.0);
            out.push(m);
            let mut m = CMat::zeros(l, l);
            m[(a, b)] = Complex::new(0.0, s);
            m[(b, a)] = Complex::new(0.0, -s);
            out.push(m);
        }
    }
    out
}

/// Minimize Σ_e ‖g·Z_e‖² − 2 Σ_κ λ_κ tr(H_κ) over the gauged positive
/// factors by multiplicative damped Newton. The gradient at each step is the
/// list of gauged shifted moments, and the Hessian quadratic form is the sum
/// of squares Σ_e ‖δ_to W_e − W_e δ_from‖², so a spectral pseudo-inverse
/// resolves the center degeneracy of closed quivers.
pub fn solve_quiver(
    spec: &QuiverSpec,
    rep: &[CMat],
    tol: f64,
    max_iter: usize,
) -> Result<QuiverSolution> {
    spec.check_rep(rep)?;
    let nv = spec.dims.len();
    let gauged_vertices: Vec<usize> = (0..nv).filter(|&i| spec.gauged[i]).collect();
    // Parameter layout: per gauged vertex, an orthonormal Hermitian basis.
    let bases: Vec<Vec<CMat>> = gauged_vertices
        .iter()
        .map(|&i| hermitian_basis(spec.dims[i]))
        .collect();
    let offsets: Vec<usize> = {
        let mut off = vec![0usize];
        for b in &bases {
            let last = *off.last().unwrap();
            off.push(last + b.len());
        }
        off
    };
    let nparams = *offsets.last().unwrap();

    let mut w: Vec<CMat> = rep.to_vec();
    let mut gauge: Vec<CMat> = (0..nv).map(|i| CMat::identity(spec.dims[i], spec.dims[i])).collect();
    let mut trace_log = vec![0.0; nv];
    let f0: f64 = w.iter().map(frobenius2).sum();
    let mut f = f0;
    let mut travelled = 0.0;
    let mut converged = false;
    let mut diagnostic = None;
    let mut iterations = 0;

    let resid = |mus: &[CMat]| -> f64 {
        let mut s = 0.0;
        for &i in &gauged_vertices {
            s += frobenius2(&mus[i]);
        }
        fmath::sqrt(s)
    };

    let mut mus = quiver_moment(spec, &w)?;
    let mut residual = resid(&mus);
    if residual <= tol {
        converged = true;
    }

    while !converged && iterations < max_iter {
        // Gradient in basis coordinates: 2 tr(B μ).
        let mut grad = DVector::zeros(nparams);
        for (gi, &i) in gauged_vertices.iter().enumerate() {
            for (x, b) in bases[gi].iter().enumerate() {
                grad[offsets[gi] + x] = 2.0 * (b * &mus[i]).trace().re;
            }
        }
        // Hessian from the per-edge derivative matrices D = B_to W − W B_from.
        let mut deriv: Vec<Vec<CMat>> = Vec::with_capacity(nparams);
        for (gi, &i) in gauged_vertices.iter().enumerate() {
            for b in &bases[gi] {
                let mut row: Vec<CMat> = Vec::with_capacity(spec.edges.len());
                for (e, &(a, t)) in spec.edges.iter().enumerate() {
                    let mut dmat = CMat::zeros(w[e].nrows(), w[e].ncols());
                    if t == i {
                        dmat += b * &w[e];
                    }
                    if a == i {
                        dmat -= &w[e] * b;
                    }
                    row.push(dmat);
                }
                deriv.push(row);
            }
        }
        let mut hess = DMatrix::zeros(nparams, nparams);
        for x in 0..nparams {
            for y in x..nparams {
                let mut s = 0.0;
                for e in 0..spec.edges.len() {
                    let dx = &deriv[x][e];
                    let dy = &deriv[y][e];
                    let mut t = Complex::new(0.0, 0.0);
                    for (u, vv) in dx.iter().zip(dy.iter()) {
                        t += u * vv.conj();
                    }
                    s += t.re;
                }
                hess[(x, y)] = 4.0 * s;
                hess[(y, x)] = 4.0 * s;
            }
        }
        // Spectral pseudo-inverse Newton step.
        let es = hess.symmetric_eigen();
        let cutoff = 1e-12 * es.eigenvalues.iter().fold(0.0f64, |a, &b| fmath::max(a, fmath::abs(b))).max(1e-300);
        let mut step = DVector::zeros(nparams);
        let projected = es.eigenvectors.transpose() * &grad;
        for k in 0..nparams {
            if fmath::abs(es.eigenvalues[k]) > cutoff {
                step += es.eigenvectors.column(k) * (-projected[k] / es.eigenvalues[k]);
            }
        }
        if step.norm() == 0.0 {
            step = -grad.clone();
        }

        let assemble = |coeffs: &DVector<f64>, scale: f64| -> Vec<CMat> {
            gauged_vertices
                .iter()
                .enumerate()
                .map(|(gi, &i)| {
                    let mut h = CMat::zeros(spec.dims[i], spec.dims[i]);
                    for (x, b) in bases[gi].iter().enumerate() {
                        h += b * Complex::new(scale * coeffs[offsets[gi] + x], 0.0);
                    }
                    h
                })
                .collect()
        };
        let apply = |w: &[CMat], exps: &[CMat]| -> Vec<CMat> {
            let mut out = Vec::with_capacity(w.len());
            for (e, &(a, t)) in spec.edges.iter().enumerate() {
                let mut m = w[e].clone();
                if spec.gauged[t] {
                    let gi = gauged_vertices.iter().position(|&x| x == t).unwrap();
                    m = &exps[gi] * m;
                }
                if spec.gauged[a] {
                    let gi = gauged_vertices.iter().position(|&x| x == a).unwrap();
                    // e^{-H} of a Hermitian H.
                    let mut neg = exps[gi].clone();
                    neg = neg.try_inverse().expect("positive matrix is invertible");
                    m = m * neg;
                }
                out.push(m);
            }
            out
        };

        let slope = grad.dot(&step);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let hs = assemble(&step, lambda);
            let exps: Vec<CMat> = hs.iter().map(herm_exp).collect();
            let trial = apply(&w, &exps);
            let trial_mus = quiver_moment(spec, &trial)?;
            let trial_res = resid(&trial_mus);
            let mut trial_f: f64 = trial.iter().map(frobenius2).sum();
            for (gi, &i) in gauged_vertices.iter().enumerate() {
                let tr_new = trace_log[i] + hs[gi].trace().re;
                trial_f -= 2.0 * spec.levels[i] as f64 * tr_new;
            }
            if trial_res <= tol || trial_f <= f + 1e-4 * lambda * slope {
                for (gi, &i) in gauged_vertices.iter().enumerate() {
                    trace_log[i] += hs[gi].trace().re;
                    gauge[i] = &exps[gi] * &gauge[i];
                    travelled += fmath::sqrt(frobenius2(&hs[gi]));
                }
                w = trial;
                mus = trial_mus;
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
        if residual <= tol {
            converged = true;
            break;
        }
        if travelled > 1e3 {
            diagnostic = Some(String::from("unstable point"));
            break;
        }
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(String::from("iteration limit reached"));
    }
    Ok(QuiverSolution {
        transformed: w,
        gauge,
        trace_log,
        residual,
        iterations,
        converged,
        diagnostic,
        f_delta: f - f0,
    })
}

/// Per-edge determinant section Π det((Z_e)_J)^{ν_e} with leading square
/// minors; requires edge twists satisfying the flow condition.
pub fn quiver_edge_section_value(spec: &QuiverSpec, rep: &[CMat]) -> Result<Complex<f64>> {
    let nu = spec
        .edge_twists
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("edge twists not set".into()))?;
    spec.check_rep(rep)?;
    let mut acc = Complex::new(1.0, 0.0);
    for (e, z) in rep.iter().enumerate() {
        let square = if z.nrows() <= z.ncols() {
            z.clone()
        } else {
            z.transpose()
        };
        let (v, _) = leading_minor_with_fallback(&square);
        let p = nu[e];
        if p < 0 {
            return Err(Error::InvalidInput("negative edge twist in section".into()));
        }
        for _ in 0..p {
            acc *= v;
        }
    }
    Ok(acc)
}

pub(crate) fn pd_logdet(m: &CMat) -> Result<f64> {
    logdet_pd(m)
}
