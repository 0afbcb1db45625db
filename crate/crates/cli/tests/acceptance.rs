//! Acceptance suite: one test per numbered criterion, each printing a single
//! pass/fail line (run with `--nocapture` to see them). The tests drive the
//! library end to end: identity checks on every quotient family, closed-form
//! agreement, decay and derivative laws, asymptotic rates, spectra, and
//! byte-level determinism of the command-line tool.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use std::time::Instant;

use stabfn_core::asymptotics::{
    density_of_states, halfform_ratio, laplace_orbit, laplace_total, moment_limits, orbit_point,
    orbit_psi, MomentPolynomial,
};
use stabfn_core::geometry::{rat, DelzantPolytope, Rat, UpstairsPoint, WeightSystem};
use stabfn_core::kempf_ness::{project_to_level, solve_abelian, solve_grassmannian};
use stabfn_core::matrix_varieties::{
    chain_endpoint, chain_gauge_action, chain_moment, composite_map, generate_level_point,
    polygon_pair_section_log_norm2, polygon_pairing, quiver_moment, solve_quiver, MatrixChainSpec,
    PolygonLevels, QuiverSpec,
};
use stabfn_core::rng::SeededRng;
use stabfn_core::sections::{log_pointwise_norm_downstairs, MonomialSection};
use stabfn_core::stability::{psi_coadjoint, psi_grassmannian, psi_polygon, psi_toric, EvalMethod};

type CMat = DMatrix<Complex<f64>>;

fn report(num: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {num:02} ({name}): {status} [{detail}]");
    assert!(pass, "criterion {num:02} ({name}): {detail}");
}

fn frob2(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum()
}

fn cmax(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn re_trace(m: &CMat) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

fn vec_norm2(z: &UpstairsPoint) -> f64 {
    z.iter().map(|v| v.norm_sqr()).sum()
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

fn random_stable(poly: &DelzantPolytope, rng: &mut SeededRng) -> UpstairsPoint {
    let d = poly.weight_system().d();
    loop {
        let z = rng.complex_vector(d);
        if poly.is_stable(&z) {
            return z;
        }
    }
}

fn unit_direction(rng: &mut SeededRng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn herm_random(rng: &mut SeededRng, n: usize) -> CMat {
    let a = rng.complex_matrix(n, n);
    (&a + a.adjoint()) * Complex::new(0.5, 0.0)
}

/// exp(h X) for Hermitian X through its eigendecomposition.
fn herm_exp(x: &CMat, h: f64) -> CMat {
    let se = x.clone().symmetric_eigen();
    let n = x.nrows();
    let mut d = CMat::zeros(n, n);
    for i in 0..n {
        d[(i, i)] = Complex::new((h * se.eigenvalues[i]).exp(), 0.0);
    }
    &se.eigenvectors * d * se.eigenvectors.adjoint()
}

/// log |det of the chosen k columns|^2, where k is the row count.
fn minor_log2(m: &CMat, cols: &[usize]) -> f64 {
    let k = m.nrows();
    let s = CMat::from_fn(k, k, |r, c| m[(r, cols[c])]);
    s.determinant().norm_sqr().ln()
}

fn pick_cols(rng: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = (i + (rng.uniform() * (n - i) as f64) as usize).min(n - 1);
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

fn pack_sides(cols: &[CMat]) -> CMat {
    CMat::from_fn(2, cols.len(), |r, i| cols[i][(r, 0)])
}

/// Relative gap in the pullback identity at one toric point: the upstairs
/// weighted norm of a monomial section must split as psi plus the reduced
/// norm at the image point. Psi comes from the closed form and the reduced
/// norm from an independent Kempf-Ness solve, so neither side feeds the
/// other.
fn toric_identity_gap(ws: &WeightSystem, k: u32, m: &[i64], z: &UpstairsPoint) -> f64 {
    let scaled_ws = ws.scaled_level(k as i64);
    let scaled = DelzantPolytope::new(&scaled_ws).unwrap();
    let sec = MonomialSection::new(ws, m.to_vec(), k).unwrap();
    let mut log_up = 0.0;
    for i in 0..ws.d() {
        let q = z[i].norm_sqr();
        if m[i] != 0 {
            log_up += m[i] as f64 * q.ln();
        }
        log_up -= q;
    }
    let eval = psi_toric(&scaled, z, EvalMethod::ToricClosedForm).unwrap();
    let sol = solve_abelian(&scaled_ws, z, 1e-12, 200).unwrap();
    let q_star: Vec<f64> = (0..ws.d())
        .map(|i| z[i].norm_sqr() * sol.scale_factors[i] * sol.scale_factors[i])
        .collect();
    let log_down = log_pointwise_norm_downstairs(&sec, &q_star);
    (log_up - (eval.psi + log_down)).abs() / f64::max(1.0, log_up.abs())
}

/// Same identity on a chain point, with determinant sections of the
/// composite maps over a random column subset and the level-set
/// representative found by an independent quiver solve.
fn chain_identity_gap(spec: &MatrixChainSpec, zs: &[CMat], rng: &mut SeededRng) -> Option<f64> {
    let psi = psi_coadjoint(spec, zs, EvalMethod::Matrix).ok()?.psi;
    let quiver = QuiverSpec::chain(spec);
    let sol = solve_quiver(&quiver, zs, 1e-12, 600).ok()?;
    if !sol.converged {
        return None;
    }
    let w = &sol.transformed;
    let mut log_z = -zs.iter().map(frob2).sum::<f64>();
    let mut log_w = -w.iter().map(frob2).sum::<f64>();
    for (k, &tw) in spec.twists().iter().enumerate() {
        let pz = composite_map(zs, k);
        let pw = composite_map(w, k);
        let cols = pick_cols(rng, pz.ncols(), pz.nrows());
        let lz = minor_log2(&pz, &cols);
        let lw = minor_log2(&pw, &cols);
        if !lz.is_finite() || !lw.is_finite() {
            return None;
        }
        log_z += tw as f64 * lz;
        log_w += tw as f64 * lw;
    }
    Some((log_z - (psi + log_w)).abs() / f64::max(1.0, log_z.abs()))
}

/// Polygon version with the pair-determinant sections, which are the
/// gauge-equivariant ones.
fn polygon_identity_gap(levels: &PolygonLevels, rep: &[CMat]) -> Option<f64> {
    let psi = psi_polygon(levels, rep, EvalMethod::Matrix).ok()?.psi;
    let quiver = QuiverSpec::polygon(levels);
    let sol = solve_quiver(&quiver, rep, 1e-12, 600).ok()?;
    if !sol.converged {
        return None;
    }
    let scheme = polygon_pairing(levels);
    let z = pack_sides(rep);
    let w = pack_sides(&sol.transformed);
    let log_z = polygon_pair_section_log_norm2(&z, &scheme) - frob2(&z);
    let log_w = polygon_pair_section_log_norm2(&w, &scheme) - frob2(&w);
    if !log_z.is_finite() || !log_w.is_finite() {
        return None;
    }
    Some((log_z - (psi + log_w)).abs() / f64::max(1.0, log_z.abs()))
}

#[test]
fn c01_pullback_identity() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut counted = 0usize;

    let toric = [
        WeightSystem::cp(1),
        WeightSystem::cp(2),
        WeightSystem::hirzebruch(1),
        WeightSystem::hirzebruch(2),
    ];
    for (fi, ws) in toric.iter().enumerate() {
        let poly = DelzantPolytope::new(ws).unwrap();
        let k = 2u32;
        let points = poly.lattice_points(k).unwrap();
        let mut rng = SeededRng::new(900 + fi as u64);
        for s in 0..200usize {
            let z = random_stable(&poly, &mut rng);
            let m = &points[(7 * s + 3) % points.len()];
            worst = worst.max(toric_identity_gap(ws, k, m, &z));
            counted += 1;
        }
    }

    // Gr(2,4) with determinant sections over a random column pair.
    let (gk, gn, gm) = (2usize, 4usize, 1u32);
    let mut rng = SeededRng::new(1400);
    let mut done = 0;
    let mut attempts = 0;
    while done < 200 && attempts < 5000 {
        attempts += 1;
        let z = rng.complex_matrix(gk, gn);
        let psi = match psi_grassmannian(&z, gk, gm, EvalMethod::Matrix) {
            Ok(e) => e.psi,
            Err(_) => continue,
        };
        let sol = match solve_grassmannian(&z, gm) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let w = &sol.b[0] * &z;
        let cols = pick_cols(&mut rng, gn, gk);
        let lz = minor_log2(&z, &cols);
        let lw = minor_log2(&w, &cols);
        if !lz.is_finite() || !lw.is_finite() {
            continue;
        }
        let log_z = gm as f64 * lz - frob2(&z);
        let log_w = gm as f64 * lw - frob2(&w);
        worst = worst.max((log_z - (psi + log_w)).abs() / f64::max(1.0, log_z.abs()));
        done += 1;
        counted += 1;
    }

    let spec = MatrixChainSpec::new(vec![1, 2], 2).unwrap();
    let dims = spec.link_dims();
    let mut rng = SeededRng::new(1500);
    let mut done = 0;
    let mut attempts = 0;
    while done < 200 && attempts < 5000 {
        attempts += 1;
        let zs: Vec<CMat> = dims.iter().map(|&(r, c)| rng.complex_matrix(r, c)).collect();
        if let Some(g) = chain_identity_gap(&spec, &zs, &mut rng) {
            worst = worst.max(g);
            done += 1;
            counted += 1;
        }
    }

    let levels = PolygonLevels::new(vec![-1, -1, -1, -1, 2]).unwrap();
    let mut rng = SeededRng::new(1600);
    let mut done = 0;
    let mut attempts = 0;
    while done < 200 && attempts < 5000 {
        attempts += 1;
        let rep: Vec<CMat> = (0..4).map(|_| rng.complex_matrix(2, 1)).collect();
        if let Some(g) = polygon_identity_gap(&levels, &rep) {
            worst = worst.max(g);
            done += 1;
            counted += 1;
        }
    }

    let secs = t0.elapsed().as_secs_f64();
    report(
        1,
        "pullback identity",
        counted == 1400 && worst <= 1e-8 && secs < 30.0,
        &format!("7 families x 200 points, worst relative gap {worst:.3e}, {secs:.1}s"),
    );
}

#[test]
fn c02_closed_form_cross_checks() {
    let mut worst_methods = 0.0f64;
    let mut worst_ode = 0.0f64;
    let mut worst_projective = 0.0f64;
    let mut worst_grassmannian = 0.0f64;

    let toric = [
        WeightSystem::cp(1),
        WeightSystem::cp(2),
        WeightSystem::cp(3),
        WeightSystem::hirzebruch(1),
        WeightSystem::hirzebruch(2),
    ];
    for (fi, ws) in toric.iter().enumerate() {
        let poly = DelzantPolytope::new(ws).unwrap();
        let mut rng = SeededRng::new(2100 + fi as u64);
        for _ in 0..40 {
            let z = random_stable(&poly, &mut rng);
            let def = psi_toric(&poly, &z, EvalMethod::Definition).unwrap().psi;
            for method in [
                EvalMethod::ToricClosedForm,
                EvalMethod::AffineChart,
                EvalMethod::Monomial,
            ] {
                let v = psi_toric(&poly, &z, method).unwrap().psi;
                worst_methods = worst_methods.max(rel_gap(def, v));
            }
            let ode = psi_toric(&poly, &z, EvalMethod::Ode).unwrap().psi;
            worst_ode = worst_ode.max(rel_gap(def, ode));
        }
    }

    // Projective space: psi has the explicit form 1 + log|z|^2 - |z|^2.
    for n in [1usize, 2, 3] {
        let ws = WeightSystem::cp(n);
        let poly = DelzantPolytope::new(&ws).unwrap();
        let mut rng = SeededRng::new(2200 + n as u64);
        for _ in 0..40 {
            let z = random_stable(&poly, &mut rng);
            let def = psi_toric(&poly, &z, EvalMethod::Definition).unwrap().psi;
            let n2 = vec_norm2(&z);
            let literal = 1.0 + n2.ln() - n2;
            worst_projective = worst_projective.max(rel_gap(def, literal));
        }
    }

    for (i, &(k, n, twist)) in [(1usize, 3usize, 1u32), (2, 4, 1), (2, 4, 2), (2, 5, 1)]
        .iter()
        .enumerate()
    {
        let mut rng = SeededRng::new(2300 + i as u64);
        let mut done = 0;
        while done < 100 {
            let z = rng.complex_matrix(k, n);
            let closed = match psi_grassmannian(&z, k, twist, EvalMethod::Matrix) {
                Ok(e) => e.psi,
                Err(_) => continue,
            };
            let def = match psi_grassmannian(&z, k, twist, EvalMethod::Definition) {
                Ok(e) => e.psi,
                Err(_) => continue,
            };
            worst_grassmannian = worst_grassmannian.max(rel_gap(closed, def));
            done += 1;
        }
    }

    let pass = worst_methods <= 1e-8
        && worst_projective <= 1e-10
        && worst_ode <= 1e-6
        && worst_grassmannian <= 1e-8;
    report(
        2,
        "closed-form cross-checks",
        pass,
        &format!(
            "toric spread {worst_methods:.2e}, projective {worst_projective:.2e}, \
             ode {worst_ode:.2e}, grassmannian {worst_grassmannian:.2e}"
        ),
    );
}

#[test]
fn c03_nonpositivity_and_ray_decay() {
    let mut max_psi = f64::NEG_INFINITY;
    let mut equivalence_ok = true;
    let mut vanishing_seen = 0usize;
    let mut negative_seen = 0usize;

    for (fi, ws) in [WeightSystem::cp(2), WeightSystem::hirzebruch(1)].iter().enumerate() {
        let poly = DelzantPolytope::new(ws).unwrap();
        let mut rng = SeededRng::new(3100 + fi as u64);
        for _ in 0..25 {
            let z = random_stable(&poly, &mut rng);
            let projected = project_to_level(ws, &z).unwrap();
            for point in [&z, &projected] {
                let psi = psi_toric(&poly, point, EvalMethod::ToricClosedForm).unwrap().psi;
                max_psi = max_psi.max(psi);
                let residual = ws.moment_map(point).amax();
                let vanishes = psi.abs() <= 1e-9;
                let on_level = residual <= 1e-6;
                if vanishes {
                    vanishing_seen += 1;
                } else {
                    negative_seen += 1;
                }
                equivalence_ok &= vanishes == on_level;
            }
        }
    }

    // Chain points, generic and on-level.
    let spec = MatrixChainSpec::new(vec![1, 2], 2).unwrap();
    let dims = spec.link_dims();
    let mut rng = SeededRng::new(3300);
    for s in 0..20u64 {
        let zs: Vec<CMat> = dims.iter().map(|&(r, c)| rng.complex_matrix(r, c)).collect();
        if let Ok(e) = psi_coadjoint(&spec, &zs, EvalMethod::Matrix) {
            max_psi = max_psi.max(e.psi);
            let residual = chain_moment(&spec, &zs)
                .unwrap()
                .iter()
                .map(cmax)
                .fold(0.0, f64::max);
            equivalence_ok &= (e.psi.abs() <= 1e-9) == (residual <= 1e-6);
            negative_seen += 1;
        }
        let level = generate_level_point(&spec, 7000 + s);
        let e = psi_coadjoint(&spec, &level, EvalMethod::Matrix).unwrap();
        max_psi = max_psi.max(e.psi);
        let residual = chain_moment(&spec, &level)
            .unwrap()
            .iter()
            .map(cmax)
            .fold(0.0, f64::max);
        equivalence_ok &= (e.psi.abs() <= 1e-9) == (residual <= 1e-6);
        vanishing_seen += 1;
    }

    // Grassmannian points; the polar normalization lands on the level set.
    let mut rng = SeededRng::new(3400);
    for _ in 0..20 {
        let z = rng.complex_matrix(2, 4);
        let gram = &z * z.adjoint();
        if let Ok(e) = psi_grassmannian(&z, 2, 1, EvalMethod::Matrix) {
            max_psi = max_psi.max(e.psi);
            let mut mu = gram.clone();
            for i in 0..2 {
                mu[(i, i)] -= Complex::new(1.0, 0.0);
            }
            equivalence_ok &= (e.psi.abs() <= 1e-9) == (cmax(&mu) <= 1e-6);
            negative_seen += 1;
        }
        let se = gram.symmetric_eigen();
        let mut dinv = CMat::zeros(2, 2);
        for i in 0..2 {
            dinv[(i, i)] = Complex::new(1.0 / se.eigenvalues[i].sqrt(), 0.0);
        }
        let zl = &se.eigenvectors * dinv * se.eigenvectors.adjoint() * &z;
        let e = psi_grassmannian(&zl, 2, 1, EvalMethod::Matrix).unwrap();
        max_psi = max_psi.max(e.psi);
        let mut mu = &zl * zl.adjoint();
        for i in 0..2 {
            mu[(i, i)] -= Complex::new(1.0, 0.0);
        }
        equivalence_ok &= (e.psi.abs() <= 1e-9) == (cmax(&mu) <= 1e-6);
        vanishing_seen += 1;
    }

    // Psi along 50 seeded rays out of level-set points: strictly decreasing
    // in |t| and, by concavity, below the tangent chord with negative slope.
    let mut rays_ok = true;
    let mut ray_count = 0usize;
    for (fi, ws) in [WeightSystem::cp(2), WeightSystem::hirzebruch(1)].iter().enumerate() {
        let poly = DelzantPolytope::new(ws).unwrap();
        let m = ws.torus_rank();
        let mut rng = SeededRng::new(3500 + fi as u64);
        for _ in 0..25 {
            let z = random_stable(&poly, &mut rng);
            let p = project_to_level(ws, &z).unwrap();
            let q: Vec<f64> = (0..ws.d()).map(|i| p[i].norm_sqr()).collect();
            let v = unit_direction(&mut rng, m);
            for sign in [1.0f64, -1.0] {
                let at = |t: f64| -> f64 {
                    let xi: Vec<f64> = v.iter().map(|x| sign * t * x).collect();
                    orbit_psi(ws, &q, &xi)
                };
                let ts: Vec<f64> = (1..=20).map(|i| 0.25 * i as f64).collect();
                let vals: Vec<f64> = ts.iter().map(|&t| at(t)).collect();
                let mut decreasing = vals[0] < 0.0;
                for i in 1..vals.len() {
                    decreasing &= vals[i] < vals[i - 1];
                }
                let slope = (vals[19] - vals[18]) / 0.25;
                let far = at(10.0);
                let linear = slope < 0.0 && far <= vals[19] + slope * 5.0 + 1e-9;
                rays_ok &= decreasing && linear;
            }
            ray_count += 1;
        }
    }

    let pass = max_psi <= 1e-9
        && equivalence_ok
        && rays_ok
        && vanishing_seen > 0
        && negative_seen > 0
        && ray_count == 50;
    report(
        3,
        "nonpositivity and decay",
        pass,
        &format!(
            "max psi {max_psi:.2e}, vanishing/level equivalence on {} points, 50 rays decreasing",
            vanishing_seen + negative_seen
        ),
    );
}

#[test]
fn c04_flow_derivative_pairing() {
    let h = 1e-4;
    let tol = 1e-5;
    let mut worst = 0.0f64;

    // Toric families: flow the point along imaginary torus directions.
    let toric = [
        WeightSystem::cp(1),
        WeightSystem::cp(2),
        WeightSystem::hirzebruch(1),
        WeightSystem::hirzebruch(2),
    ];
    for (fi, ws) in toric.iter().enumerate() {
        let poly = DelzantPolytope::new(ws).unwrap();
        let m = ws.torus_rank();
        let mut rng = SeededRng::new(4100 + fi as u64);
        for _ in 0..10 {
            let z = random_stable(&poly, &mut rng);
            let v = unit_direction(&mut rng, m);
            let step = |s: f64| -> Vec<f64> { v.iter().map(|x| s * x).collect() };
            let fp = psi_toric(&poly, &orbit_point(ws, &z, &step(h)), EvalMethod::ToricClosedForm)
                .unwrap()
                .psi;
            let fm = psi_toric(&poly, &orbit_point(ws, &z, &step(-h)), EvalMethod::ToricClosedForm)
                .unwrap()
                .psi;
            let fd = (fp - fm) / (2.0 * h);
            let mom = ws.moment_map(&z);
            let target: f64 = -2.0 * (0..m).map(|a| mom[a] * v[a]).sum::<f64>();
            worst = worst.max((fd - target).abs() / f64::max(1.0, target.abs()));
        }
    }

    // Grassmannian: flow by exp(h X) for Hermitian X.
    let mut rng = SeededRng::new(4200);
    let mut done = 0;
    while done < 10 {
        let z = rng.complex_matrix(2, 4);
        if psi_grassmannian(&z, 2, 1, EvalMethod::Matrix).is_err() {
            continue;
        }
        let x = herm_random(&mut rng, 2);
        let fp = psi_grassmannian(&(herm_exp(&x, h) * &z), 2, 1, EvalMethod::Matrix)
            .unwrap()
            .psi;
        let fm = psi_grassmannian(&(herm_exp(&x, -h) * &z), 2, 1, EvalMethod::Matrix)
            .unwrap()
            .psi;
        let fd = (fp - fm) / (2.0 * h);
        let mut mu = &z * z.adjoint();
        for i in 0..2 {
            mu[(i, i)] -= Complex::new(1.0, 0.0);
        }
        let target = -2.0 * re_trace(&(&mu * &x));
        worst = worst.max((fd - target).abs() / f64::max(1.0, target.abs()));
        done += 1;
    }

    // Length-four chain: flow every gauged vertex at once.
    let spec = MatrixChainSpec::new(vec![1, 1, 1], 2).unwrap();
    let quiver = QuiverSpec::chain(&spec);
    let dims = spec.link_dims();
    let mut rng = SeededRng::new(4300);
    let mut done = 0;
    while done < 10 {
        let zs: Vec<CMat> = dims.iter().map(|&(r, c)| rng.complex_matrix(r, c)).collect();
        if psi_coadjoint(&spec, &zs, EvalMethod::Matrix).is_err() {
            continue;
        }
        let xs: Vec<CMat> = (1..=3).map(|d| herm_random(&mut rng, d)).collect();
        let gs = |s: f64| -> Vec<CMat> { xs.iter().map(|x| herm_exp(x, s)).collect() };
        let fp = psi_coadjoint(&spec, &chain_gauge_action(&zs, &gs(h)), EvalMethod::Matrix)
            .unwrap()
            .psi;
        let fm = psi_coadjoint(&spec, &chain_gauge_action(&zs, &gs(-h)), EvalMethod::Matrix)
            .unwrap()
            .psi;
        let fd = (fp - fm) / (2.0 * h);
        let mus = quiver_moment(&quiver, &zs).unwrap();
        let target: f64 = (0..3).map(|v| -2.0 * re_trace(&(&mus[v] * &xs[v]))).sum();
        worst = worst.max((fd - target).abs() / f64::max(1.0, target.abs()));
        done += 1;
    }

    // Polygon: central flow and a single-side scalar flow.
    let levels = PolygonLevels::new(vec![-1, -1, -1, -1, 2]).unwrap();
    let quiver = QuiverSpec::polygon(&levels);
    let mut rng = SeededRng::new(4400);
    let mut done = 0;
    while done < 10 {
        let rep: Vec<CMat> = (0..4).map(|_| rng.complex_matrix(2, 1)).collect();
        if psi_polygon(&levels, &rep, EvalMethod::Matrix).is_err() {
            continue;
        }
        let mus = quiver_moment(&quiver, &rep).unwrap();

        let x = herm_random(&mut rng, 2);
        let central = |s: f64| -> Vec<CMat> {
            let g = herm_exp(&x, s);
            rep.iter().map(|z| &g * z).collect()
        };
        let fp = psi_polygon(&levels, &central(h), EvalMethod::Matrix).unwrap().psi;
        let fm = psi_polygon(&levels, &central(-h), EvalMethod::Matrix).unwrap().psi;
        let fd = (fp - fm) / (2.0 * h);
        let target = -2.0 * re_trace(&(&mus[4] * &x));
        worst = worst.max((fd - target).abs() / f64::max(1.0, target.abs()));

        let j = (rng.uniform() * 4.0) as usize % 4;
        let xs = rng.normal();
        let side = |s: f64| -> Vec<CMat> {
            rep.iter()
                .enumerate()
                .map(|(i, z)| {
                    if i == j {
                        z * Complex::new((-s * xs).exp(), 0.0)
                    } else {
                        z.clone()
                    }
                })
                .collect()
        };
        let fp = psi_polygon(&levels, &side(h), EvalMethod::Matrix).unwrap().psi;
        let fm = psi_polygon(&levels, &side(-h), EvalMethod::Matrix).unwrap().psi;
        let fd = (fp - fm) / (2.0 * h);
        let target = -2.0 * xs * mus[j][(0, 0)].re;
        worst = worst.max((fd - target).abs() / f64::max(1.0, target.abs()));
        done += 1;
    }

    report(
        4,
        "flow derivative pairing",
        worst <= tol,
        &format!("central differences at step {h:.0e}, worst relative error {worst:.2e}"),
    );
}

#[test]
fn c05_laplace_rates() {
    let lambdas = [25.0f64, 50.0, 100.0, 200.0];
    let mut pass = true;
    let mut notes: Vec<String> = Vec::new();

    for (fi, ws) in [WeightSystem::cp(1), WeightSystem::hirzebruch(1)].iter().enumerate() {
        let poly = DelzantPolytope::new(ws).unwrap();
        let m = ws.torus_rank();

        let total = laplace_total(&poly, &lambdas).unwrap();
        pass &= (total.fit.model_exponent + m as f64 / 2.0).abs() < 1e-12;
        let mut worst_total = 0.0f64;
        for (i, &lam) in lambdas.iter().enumerate() {
            let gap = (total.fit.rescaled[i] / total.level_volume - 1.0).abs();
            worst_total = worst_total.max(gap * lam);
            pass &= gap <= 3.0 / lam;
        }
        pass &= (total.fit.free_exponent - total.fit.model_exponent).abs()
            <= 0.02 * total.fit.model_exponent.abs();

        let mut rng = SeededRng::new(5100 + fi as u64);
        let z = random_stable(&poly, &mut rng);
        let p = project_to_level(ws, &z).unwrap();

        let one = |_: &UpstairsPoint| 1.0;
        let orbit = laplace_orbit(ws, &p, &one, &lambdas).unwrap();
        let mut worst_orbit = 0.0f64;
        for (i, &lam) in lambdas.iter().enumerate() {
            let gap = (orbit.rescaled[i] - 1.0).abs();
            worst_orbit = worst_orbit.max(gap * lam);
            pass &= gap <= 3.0 / lam;
        }
        pass &= (orbit.free_exponent - orbit.model_exponent).abs()
            <= 0.02 * orbit.model_exponent.abs();

        // Nonconstant observable: the rescaled series tends to its value at
        // the base point.
        let f = |z: &UpstairsPoint| 1.0 + z[0].norm_sqr();
        let fo = laplace_orbit(ws, &p, &f, &lambdas).unwrap();
        let fp = 1.0 + p[0].norm_sqr();
        for (i, &lam) in lambdas.iter().enumerate() {
            pass &= (fo.rescaled[i] - fp).abs() <= 3.0 / lam * f64::max(1.0, fp);
        }

        notes.push(format!(
            "family {fi}: lambda*gap total {worst_total:.2}, orbit {worst_orbit:.2}, \
             exponents {:.3}/{:.3}",
            total.fit.free_exponent, orbit.free_exponent
        ));
    }

    report(5, "laplace rates", pass, &notes.join("; "));
}

#[test]
fn c06_halfform_correction() {
    let t0 = Instant::now();
    let ks = [4u32, 8, 16, 32, 64];
    let mut pass = true;
    let mut notes: Vec<String> = Vec::new();

    let cp1 = WeightSystem::cp(1);
    let h1 = WeightSystem::hirzebruch(1);
    let half = rat(1) / rat(2);
    let cases: [(&str, &WeightSystem, Vec<Rat>); 2] = [
        ("cp1", &cp1, vec![half, half]),
        ("h1", &h1, vec![half, rat(2), half, half]),
    ];
    for (name, ws, ray) in cases {
        let poly = DelzantPolytope::new(ws).unwrap();
        let fit = halfform_ratio(&poly, &ray, &ks).unwrap();
        let first = ks[0] as f64 * (fit.measured[0] - 1.0).abs();
        let mut c_bound = 0.0f64;
        let mut bound_ok = true;
        for (i, &k) in ks.iter().enumerate() {
            let scaled = k as f64 * (fit.measured[i] - 1.0).abs();
            c_bound = c_bound.max(scaled);
            bound_ok &= scaled <= first + 1e-9;
        }
        pass &= (fit.c0 - 1.0).abs() <= 0.05
            && fit.residual <= 1e-3
            && fit.c1.is_finite()
            && bound_ok;
        notes.push(format!(
            "{name}: c0 {:.6}, residual {:.2e}, C {:.3}",
            fit.c0, fit.residual, c_bound
        ));
    }

    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    report(
        6,
        "half-form correction",
        pass,
        &format!("{}, {secs:.1}s", notes.join("; ")),
    );
}

#[test]
fn c07_moment_convergence() {
    let mut pass = true;
    let mut notes: Vec<String> = Vec::new();

    let segment = WeightSystem::new(vec![vec![1]], vec![1], Some(vec![1])).unwrap();
    let segment_poly = DelzantPolytope::new(&segment).unwrap();
    let sphere = DelzantPolytope::new(&WeightSystem::cp(1)).unwrap();
    let half = rat(1) / rat(2);
    let segment_ray = vec![rat(1)];
    let sphere_ray = vec![half, half];
    let segment_ns = [25u32, 50, 100, 200];
    let sphere_ns = [24u32, 48, 96, 192];

    let cases: [(&str, &DelzantPolytope, &[Rat], &[u32], bool); 2] = [
        ("point", &segment_poly, &segment_ray, &segment_ns, false),
        ("sphere", &sphere, &sphere_ray, &sphere_ns, true),
    ];
    for (name, poly, ray, ns, with_transfer) in cases {
        for l in [2u32, 3] {
            let out = moment_limits(poly, ray, l, ns, with_transfer).unwrap();
            let errors: Vec<f64> = out
                .fit
                .rescaled
                .iter()
                .map(|&r| (r - out.limit).abs())
                .collect();
            let mut ratios_ok = true;
            for i in 1..errors.len() {
                let ratio = errors[i] / errors[i - 1];
                ratios_ok &= (0.4..=0.6).contains(&ratio);
            }
            pass &= ratios_ok;
            let mut note = format!("{name} l={l} halving ok {ratios_ok}");
            if with_transfer {
                let tr = out.transfer.unwrap();
                let last = tr[ns.len() - 1];
                pass &= (last - 1.0).abs() <= 0.02;
                note.push_str(&format!(" transfer {last:.4}"));
            }
            notes.push(note);
        }
    }

    report(7, "moment convergence", pass, &notes.join("; "));
}

#[test]
fn c08_density_of_states() {
    let mut pass = true;
    let mut notes: Vec<String> = Vec::new();

    let sphere = DelzantPolytope::new(&WeightSystem::cp(1)).unwrap();
    let ns = [10u32, 20, 50, 100];
    let observables = [
        ("1", MomentPolynomial::constant(2, 1.0)),
        ("t", MomentPolynomial::coordinate(2, 0)),
        ("t^2", MomentPolynomial::coordinate_power(2, 0, 2)),
    ];
    for (name, f) in &observables {
        let out = density_of_states(&sphere, f, &ns).unwrap();
        let gap = (out.fit.c0 - out.independent_leading).abs();
        pass &= gap <= 1e-4;
        let trace_gap = (out.g_trace_fit.c0 - out.reduced_volume_fit.c0).abs();
        pass &= trace_gap <= 1e-3 * f64::max(1.0, out.g_trace_fit.c0.abs());
        notes.push(format!("sphere f={name} gap {gap:.1e} trace gap {trace_gap:.1e}"));
    }

    let h1 = DelzantPolytope::new(&WeightSystem::hirzebruch(1)).unwrap();
    let ns = [6u32, 8, 10, 12, 14];
    let out = density_of_states(&h1, &MomentPolynomial::coordinate(4, 0), &ns).unwrap();
    let gap = (out.fit.c0 - out.independent_leading).abs()
        / f64::max(1.0, out.independent_leading.abs());
    pass &= gap <= 1e-3;
    let trace_gap = (out.g_trace_fit.c0 - out.reduced_volume_fit.c0).abs();
    pass &= trace_gap <= 0.02 * f64::max(out.g_trace_fit.c0.abs(), 1e-12);
    notes.push(format!("h1 gap {gap:.1e} trace gap {trace_gap:.1e}"));

    report(8, "density of states", pass, &notes.join("; "));
}

#[test]
fn c09_chain_spectrum() {
    let specs = [
        MatrixChainSpec::new(vec![1, 1, 1], 2).unwrap(),
        MatrixChainSpec::new(vec![2, 1, 3], 1).unwrap(),
        MatrixChainSpec::new(vec![1, 2, 1], 3).unwrap(),
    ];
    let mut worst = 0.0f64;
    for (si, spec) in specs.iter().enumerate() {
        let expected: Vec<f64> = spec.lambdas().iter().map(|&l| l as f64).collect();
        for s in 0..50u64 {
            let zs = generate_level_point(spec, 9000 + 100 * si as u64 + s);
            let end = chain_endpoint(spec, &zs).unwrap();
            let mut eigen: Vec<f64> = end.symmetric_eigen().eigenvalues.iter().cloned().collect();
            eigen.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for i in 0..expected.len() {
                worst = worst.max((eigen[i] - expected[i]).abs());
            }
        }
    }
    report(
        9,
        "chain spectrum",
        worst <= 1e-10,
        &format!("3 ladders x 50 level points, worst eigenvalue gap {worst:.2e}"),
    );
}

#[test]
fn c10_argmax_moment() {
    // (1,1,1) is an interior lattice point of the triple simplex.
    let simplex = DelzantPolytope::new(&WeightSystem::cp(2)).unwrap();
    let points = simplex.lattice_points(3).unwrap();
    let interior = vec![1i64, 1, 1];
    let contains = points.iter().any(|p| *p == interior);

    // The coordinate torus at level (1,1,1): its Kempf-Ness minimizer along
    // a complexified orbit is the maximizer of |z^m|^2 e^{-|z|^2}, and its
    // unshifted moment must equal the lattice point itself.
    let ws = WeightSystem::new(
        vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]],
        vec![1, 1, 1],
        Some(vec![1, 1, 1]),
    )
    .unwrap();
    let log_weighted = |z: &UpstairsPoint| -> f64 {
        (0..3).map(|i| z[i].norm_sqr().ln() - z[i].norm_sqr()).sum()
    };
    let torus_poly = DelzantPolytope::new(&ws).unwrap();
    let mut worst = 0.0f64;
    let mut argmax_ok = true;
    let mut rng = SeededRng::new(10100);
    for _ in 0..20 {
        let z = random_stable(&torus_poly, &mut rng);
        let sol = solve_abelian(&ws, &z, 1e-12, 300).unwrap();
        let zstar = UpstairsPoint::from_iterator(
            3,
            (0..3).map(|i| z[i] * Complex::new(sol.scale_factors[i], 0.0)),
        );
        let moment: DVector<f64> = ws.moment_unshifted(&zstar);
        for a in 0..3 {
            worst = worst.max((moment[a] - 1.0).abs());
        }
        let peak = log_weighted(&zstar);
        for _ in 0..5 {
            let xi: Vec<f64> = (0..3).map(|_| rng.normal() * 0.1).collect();
            let moved = orbit_point(&ws, &zstar, &xi);
            argmax_ok &= log_weighted(&moved) <= peak + 1e-12;
        }
    }

    report(
        10,
        "argmax moment",
        contains && worst <= 1e-8 && argmax_ok,
        &format!("20 orbits, worst |moment - m| {worst:.2e}, local maximality confirmed"),
    );
}

#[test]
fn c11_byte_identical_reruns() {
    let bin = env!("CARGO_BIN_EXE_stabfn");
    let dir = std::env::temp_dir().join(format!("stabfn-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let csv_path = dir.join("run.csv");
    let json_path = dir.join("run.json");

    let configs: [(&str, Vec<&str>); 3] = [
        (
            "psi",
            vec![
                "psi",
                "--preset",
                "cp2",
                "--experiment",
                "psi-cross-check",
                "--samples",
                "40",
                "--seed",
                "7",
            ],
        ),
        (
            "chain-eigen",
            vec!["chain-eigen", "--samples", "10", "--seed", "3"],
        ),
        (
            "halfform",
            vec![
                "asymptotics",
                "--experiment",
                "halfform",
                "--preset",
                "cp1",
                "--k",
                "4:32:*2",
            ],
        ),
    ];

    let mut pass = true;
    let mut notes: Vec<String> = Vec::new();
    for (name, args) in &configs {
        let mut first: Option<(Vec<u8>, Vec<u8>)> = None;
        for run in 0..2 {
            let out = std::process::Command::new(bin)
                .args(args)
                .arg("--out-csv")
                .arg(&csv_path)
                .arg("--out-json")
                .arg(&json_path)
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "{name} run {run}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            let csv = std::fs::read(&csv_path).unwrap();
            let json = std::fs::read(&json_path).unwrap();
            match &first {
                None => first = Some((csv, json)),
                Some((c0, j0)) => {
                    let same = *c0 == csv && *j0 == json;
                    pass &= same;
                    notes.push(format!("{name}: identical {same} ({} bytes)", csv.len()));
                }
            }
        }
    }
    std::fs::remove_dir_all(&dir).ok();

    report(11, "byte-identical reruns", pass, &notes.join("; "));
}
