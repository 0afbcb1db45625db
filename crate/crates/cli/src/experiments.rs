//! Experiment drivers: each takes resolved inputs, runs the library, and
//! packs per-point CSV rows, a JSON payload, and pass/fail assertions.

use nalgebra::DMatrix;
use num_complex::Complex;
use rayon::prelude::*;
use serde_json::{json, Value};

use stabfn_core::asymptotics::{
    self, AsymptoticFit, MomentPolynomial,
};
use stabfn_core::geometry::{DelzantPolytope, Rat, UpstairsPoint};
use stabfn_core::kempf_ness::project_to_level;
use stabfn_core::matrix_varieties::{
    chain_endpoint, generate_level_point, MatrixChainSpec, PolygonLevels,
};
use stabfn_core::rng::SeededRng;
use stabfn_core::sections::{
    l2_norm_downstairs, l2_norm_upstairs, MonomialSection, QuadratureRule,
};
use stabfn_core::stability::{psi_coadjoint, psi_grassmannian, psi_polygon, psi_toric, EvalMethod};
use stabfn_core::Error;

use crate::config::MatrixSection;
use crate::output::{cell_f64, cell_int, running_c0, Assertion, Csv, ExperimentResult};
use crate::CliError;

type CMat = DMatrix<Complex<f64>>;

fn numerical(e: Error) -> CliError {
    CliError::Numerical(format!("{e}"))
}

fn fit_json(fit: &AsymptoticFit) -> Value {
    json!({
        "grid": fit.grid,
        "measured": fit.measured,
        "rescaled": fit.rescaled,
        "model_exponent": fit.model_exponent,
        "free_exponent": fit.free_exponent,
        "c0": fit.c0,
        "c1": fit.c1,
        "c2": fit.c2,
        "residual": fit.residual,
    })
}

/// Draw a stable point from the sample-indexed stream.
fn stable_point(poly: &DelzantPolytope, seed: u64, sample: u64) -> Result<UpstairsPoint, CliError> {
    let ws = poly.weight_system();
    let mut rng = SeededRng::new(seed.wrapping_add(sample));
    for _ in 0..100 {
        let z = rng.complex_vector(ws.d());
        if poly.is_stable(&z) {
            return Ok(z);
        }
    }
    Err(CliError::Numerical(
        "could not sample a stable point in 100 draws".into(),
    ))
}

// ---------------------------------------------------------------------------
// psi-grid and psi-cross-check.

struct PsiSample {
    z: UpstairsPoint,
    definition: f64,
    residual: f64,
    closed: f64,
    affine: Option<f64>,
    monomial: f64,
    ode: f64,
}

pub fn run_psi(
    poly: &DelzantPolytope,
    preset: Option<&str>,
    samples: u32,
    seed: u64,
    tol: f64,
    cross_check: bool,
) -> Result<ExperimentResult, CliError> {
    let d = poly.weight_system().d();
    let rows: Vec<PsiSample> = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<PsiSample, CliError> {
            let z = stable_point(poly, seed, i)?;
            let def = psi_toric(poly, &z, EvalMethod::Definition).map_err(numerical)?;
            let closed = psi_toric(poly, &z, EvalMethod::ToricClosedForm).map_err(numerical)?;
            let affine = match psi_toric(poly, &z, EvalMethod::AffineChart) {
                Ok(ev) => Some(ev.psi),
                Err(Error::NonUnimodularVertex) => None,
                Err(e) => return Err(numerical(e)),
            };
            let monomial = psi_toric(poly, &z, EvalMethod::Monomial).map_err(numerical)?;
            let ode = psi_toric(poly, &z, EvalMethod::Ode).map_err(numerical)?;
            Ok(PsiSample {
                z,
                definition: def.psi,
                residual: def.residual,
                closed: closed.psi,
                affine,
                monomial: monomial.psi,
                ode: ode.psi,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut header: Vec<String> = vec!["sample".into()];
    for i in 0..d {
        header.push(format!("z{i}_re"));
        header.push(format!("z{i}_im"));
    }
    for name in [
        "psi_definition",
        "psi_closed_form",
        "psi_affine_chart",
        "psi_monomial",
        "psi_ode",
        "residual",
    ] {
        header.push(name.into());
    }
    let mut csv = Csv {
        header,
        rows: Vec::new(),
    };
    let mut max_psi = f64::NEG_INFINITY;
    let mut max_spread = 0.0f64;
    let mut max_ode = 0.0f64;
    let mut max_projective = 0.0f64;
    let projective = preset.is_some_and(|p| p.starts_with("cp"));
    for (i, s) in rows.iter().enumerate() {
        let mut row = vec![cell_int(i as i64)];
        for c in 0..d {
            row.push(cell_f64(s.z[c].re));
            row.push(cell_f64(s.z[c].im));
        }
        row.push(cell_f64(s.definition));
        row.push(cell_f64(s.closed));
        row.push(s.affine.map(cell_f64).unwrap_or_default());
        row.push(cell_f64(s.monomial));
        row.push(cell_f64(s.ode));
        row.push(cell_f64(s.residual));
        csv.push(row);
        max_psi = max_psi.max(s.definition);
        max_spread = max_spread.max((s.closed - s.definition).abs());
        if let Some(a) = s.affine {
            max_spread = max_spread.max((a - s.definition).abs());
        }
        max_spread = max_spread.max((s.monomial - s.definition).abs());
        max_ode = max_ode.max((s.ode - s.definition).abs());
        if projective {
            let n2: f64 = s.z.iter().map(|v| v.norm_sqr()).sum();
            let literal = 1.0 + n2.ln() - n2;
            max_projective = max_projective.max((s.definition - literal).abs());
        }
    }

    let ode_tol = tol.max(1e-6);
    let mut assertions = vec![
        Assertion::check(
            "psi-nonpositive",
            max_psi <= 1e-9,
            format!("max psi {max_psi}, bound 1e-9"),
        ),
        Assertion::check(
            "methods-agree",
            max_spread <= tol,
            format!("max deviation from the definition {max_spread}, tolerance {tol}"),
        ),
        Assertion::check(
            "ode-agrees",
            max_ode <= ode_tol,
            format!("max ode deviation {max_ode}, tolerance {ode_tol}"),
        ),
    ];
    if cross_check && projective {
        assertions.push(Assertion::check(
            "projective-closed-form",
            max_projective <= 1e-10,
            format!("max gap to the projective closed form {max_projective}, bound 1e-10"),
        ));
    }
    let payload = json!({
        "samples": samples,
        "max_psi": max_psi,
        "max_method_spread": max_spread,
        "max_ode_gap": max_ode,
        "max_projective_gap": if projective { Some(max_projective) } else { None },
    });
    Ok(ExperimentResult {
        assertions,
        payload,
        csv,
    })
}

// ---------------------------------------------------------------------------
// norms.

pub fn run_norms(poly: &DelzantPolytope, k: u32, tol: f64) -> Result<ExperimentResult, CliError> {
    let ws = poly.weight_system();
    let m = ws.torus_rank() as f64;
    let lattice = poly.lattice_points(k).map_err(numerical)?;
    let rule = QuadratureRule::new(poly, k, tol).map_err(numerical)?;
    let scale = (k as f64 / core::f64::consts::PI).powf(m / 2.0);
    let mut csv = Csv::new(&["m", "upstairs", "downstairs", "ratio", "scaled_ratio"]);
    let mut points = Vec::with_capacity(lattice.len());
    let mut all_finite = true;
    for mv in &lattice {
        let sec = MonomialSection::new(ws, mv.clone(), k).map_err(numerical)?;
        let up = l2_norm_upstairs(&sec);
        let down = l2_norm_downstairs(&sec, poly, &rule).map_err(numerical)?;
        let ratio = up / down.value;
        let scaled = ratio * scale;
        all_finite &= up.is_finite() && down.value > 0.0 && ratio.is_finite();
        let label = mv
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(":");
        csv.push(vec![
            label,
            cell_f64(up),
            cell_f64(down.value),
            cell_f64(ratio),
            cell_f64(scaled),
        ]);
        points.push(json!({
            "m": mv,
            "upstairs": up,
            "downstairs": down.value,
            "ratio": ratio,
            "scaled_ratio": scaled,
        }));
    }
    let assertions = vec![Assertion::check(
        "norms-finite",
        all_finite,
        format!("{} lattice sections at power {k}", lattice.len()),
    )];
    Ok(ExperimentResult {
        assertions,
        payload: json!({ "k": k, "points": points }),
        csv,
    })
}

// ---------------------------------------------------------------------------
// halfform.

pub fn run_halfform(
    poly: &DelzantPolytope,
    ray: &[Rat],
    ks: &[u32],
    tol: f64,
) -> Result<ExperimentResult, CliError> {
    let fit = asymptotics::halfform_ratio(poly, ray, ks).map_err(numerical)?;
    let mut csv = Csv::new(&["k", "ratio", "k_times_gap", "running_c0"]);
    let mut bound_ok = true;
    let mut c_bound = 0.0f64;
    let first_gap = fit.grid[0] * (fit.measured[0] - 1.0).abs();
    for (i, &k) in ks.iter().enumerate() {
        let scaled_gap = fit.grid[i] * (fit.measured[i] - 1.0).abs();
        c_bound = c_bound.max(scaled_gap);
        // A slower-than-1/k decay makes k * |ratio - 1| grow along the grid.
        bound_ok &= scaled_gap <= first_gap + 1e-9;
        csv.push(vec![
            cell_int(k as i64),
            cell_f64(fit.measured[i]),
            cell_f64(scaled_gap),
            running_c0(&fit.grid, &fit.measured, i)
                .map(cell_f64)
                .unwrap_or_default(),
        ]);
    }
    let assertions = vec![
        Assertion::check(
            "fit-residual",
            fit.residual <= tol,
            format!("residual {} against tolerance {tol}", fit.residual),
        ),
        Assertion::check(
            "leading-constant",
            (fit.c0 - 1.0).abs() <= 0.05,
            format!("fitted constant {}", fit.c0),
        ),
        Assertion::check(
            "one-over-k-bound",
            bound_ok && c_bound.is_finite(),
            format!("k times |ratio - 1| stays within C = {c_bound}"),
        ),
        Assertion::check(
            "correction-finite",
            fit.c1.is_finite(),
            format!("fitted 1/k coefficient {}", fit.c1),
        ),
    ];
    Ok(ExperimentResult {
        assertions,
        payload: json!({ "fit": fit_json(&fit), "c_bound": c_bound }),
        csv,
    })
}

// ---------------------------------------------------------------------------
// laplace.

pub fn run_laplace(
    poly: &DelzantPolytope,
    lambdas: &[f64],
    seed: u64,
    tol: f64,
) -> Result<ExperimentResult, CliError> {
    let ws = poly.weight_system();
    let total = asymptotics::laplace_total(poly, lambdas).map_err(numerical)?;
    let z = stable_point(poly, seed, 0)?;
    let p = project_to_level(ws, &z).map_err(numerical)?;
    let orbit = asymptotics::laplace_orbit(ws, &p, &|_| 1.0, lambdas).map_err(numerical)?;

    let mut csv = Csv::new(&[
        "lambda",
        "total_measured",
        "total_rescaled",
        "total_running_c0",
        "orbit_measured",
        "orbit_rescaled",
    ]);
    let mut total_ok = true;
    let mut orbit_ok = true;
    let mut worst_total = 0.0f64;
    let mut worst_orbit = 0.0f64;
    for (i, &lam) in lambdas.iter().enumerate() {
        let t_gap = (total.fit.rescaled[i] / total.level_volume - 1.0).abs();
        let o_gap = (orbit.rescaled[i] - 1.0).abs();
        total_ok &= t_gap <= 3.0 / lam;
        orbit_ok &= o_gap <= 3.0 / lam;
        worst_total = worst_total.max(t_gap * lam / 3.0);
        worst_orbit = worst_orbit.max(o_gap * lam / 3.0);
        csv.push(vec![
            cell_f64(lam),
            cell_f64(total.fit.measured[i]),
            cell_f64(total.fit.rescaled[i]),
            running_c0(&total.fit.grid, &total.fit.rescaled, i)
                .map(cell_f64)
                .unwrap_or_default(),
            cell_f64(orbit.measured[i]),
            cell_f64(orbit.rescaled[i]),
        ]);
    }
    let exp_tol = 0.02 * total.fit.model_exponent.abs();
    let total_exp = (total.fit.free_exponent - total.fit.model_exponent).abs();
    let orbit_exp = (orbit.free_exponent - orbit.model_exponent).abs();
    let assertions = vec![
        Assertion::check(
            "total-within-3-over-lambda",
            total_ok,
            format!("worst gap at {worst_total} of the 3/lambda budget"),
        ),
        Assertion::check(
            "orbit-within-3-over-lambda",
            orbit_ok,
            format!("worst gap at {worst_orbit} of the 3/lambda budget"),
        ),
        Assertion::check(
            "total-exponent",
            total_exp <= exp_tol,
            format!(
                "free exponent {} against model {}",
                total.fit.free_exponent, total.fit.model_exponent
            ),
        ),
        Assertion::check(
            "orbit-exponent",
            orbit_exp <= exp_tol,
            format!(
                "free exponent {} against model {}",
                orbit.free_exponent, orbit.model_exponent
            ),
        ),
    ];
    let _ = tol;
    Ok(ExperimentResult {
        assertions,
        payload: json!({
            "total": fit_json(&total.fit),
            "level_volume": total.level_volume,
            "orbit": fit_json(&orbit),
        }),
        csv,
    })
}

// ---------------------------------------------------------------------------
// moments.

pub fn run_moments(
    poly: &DelzantPolytope,
    ray: &[Rat],
    l: u32,
    ns: &[u32],
    transfer: bool,
    tol: f64,
) -> Result<ExperimentResult, CliError> {
    let report = asymptotics::moment_limits(poly, ray, l, ns, transfer).map_err(numerical)?;
    let mut header = vec!["n", "measured", "rescaled", "running_c0"];
    if transfer {
        header.push("transfer_ratio");
    }
    let mut csv = Csv::new(&header);
    for (i, &n) in ns.iter().enumerate() {
        let mut row = vec![
            cell_int(n as i64),
            cell_f64(report.fit.measured[i]),
            cell_f64(report.fit.rescaled[i]),
            running_c0(&report.fit.grid, &report.fit.rescaled, i)
                .map(cell_f64)
                .unwrap_or_default(),
        ];
        if let Some(tr) = &report.transfer {
            row.push(cell_f64(tr[i]));
        }
        csv.push(row);
    }
    let mut assertions = Vec::new();
    let mut ratios = Vec::new();
    let mut window_ok = true;
    for i in 1..ns.len() {
        if ns[i] == 2 * ns[i - 1] {
            let e_prev = (report.fit.rescaled[i - 1] - report.limit).abs();
            let e_here = (report.fit.rescaled[i] - report.limit).abs();
            if e_prev > 0.0 {
                let r = e_here / e_prev;
                window_ok &= (0.4..=0.6).contains(&r);
                ratios.push(r);
            }
        }
    }
    assertions.push(if ratios.is_empty() {
        Assertion::check(
            "error-halving",
            true,
            "no doubling steps in the grid".into(),
        )
    } else {
        Assertion::check(
            "error-halving",
            window_ok,
            format!("error ratios per doubling {ratios:?} against [0.4, 0.6]"),
        )
    });
    if let Some(tr) = &report.transfer {
        let last = tr[tr.len() - 1];
        assertions.push(Assertion::check(
            "transfer-within-2-percent",
            (last - 1.0).abs() <= 0.02,
            format!("transfer ratio {last} at the largest power"),
        ));
    }
    let _ = tol;
    Ok(ExperimentResult {
        assertions,
        payload: json!({
            "fit": fit_json(&report.fit),
            "limit": report.limit,
            "c_empirical": report.c_empirical,
            "c_reference": report.c_reference,
            "transfer": report.transfer,
            "order": l,
        }),
        csv,
    })
}

// ---------------------------------------------------------------------------
// dos.

#[allow(clippy::too_many_arguments)]
pub fn run_dos(
    poly: &DelzantPolytope,
    f: &MomentPolynomial,
    ns: &[u32],
    ray: &[Rat],
    transfer: bool,
    tol: f64,
) -> Result<ExperimentResult, CliError> {
    let report = asymptotics::density_of_states(poly, f, ns).map_err(numerical)?;
    let mut csv = Csv::new(&[
        "n",
        "count",
        "measure",
        "measure_rescaled",
        "g_trace_rescaled",
        "reduced_trace_rescaled",
        "running_c0",
    ]);
    for (i, &n) in ns.iter().enumerate() {
        csv.push(vec![
            cell_int(n as i64),
            cell_int(report.counts[i] as i64),
            cell_f64(report.fit.measured[i]),
            cell_f64(report.fit.rescaled[i]),
            cell_f64(report.g_trace_fit.rescaled[i]),
            cell_f64(report.reduced_volume_fit.rescaled[i]),
            running_c0(&report.fit.grid, &report.fit.rescaled, i)
                .map(cell_f64)
                .unwrap_or_default(),
        ]);
    }
    let lead_gap = (report.fit.c0 - report.independent_leading).abs();
    let lead_tol = tol * report.independent_leading.abs().max(1.0);
    let trace_gap = (report.g_trace_fit.c0 - report.reduced_volume_fit.c0).abs();
    let trace_tol = 0.02 * report.g_trace_fit.c0.abs().max(1e-12);
    let mut assertions = vec![
        Assertion::check(
            "leading-matches-quadrature",
            lead_gap <= lead_tol,
            format!(
                "fitted {} against quadrature {}",
                report.fit.c0, report.independent_leading
            ),
        ),
        Assertion::check(
            "trace-leading-agree",
            trace_gap <= trace_tol,
            format!(
                "invariant trace {} against volume-weighted trace {}",
                report.g_trace_fit.c0, report.reduced_volume_fit.c0
            ),
        ),
    ];
    let mut transfer_payload = None;
    if transfer {
        let tr = asymptotics::dos_transfer(poly, f, ray, ns).map_err(numerical)?;
        let grid: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let section_fit =
            asymptotics::fit_series(&grid, &tr.section_ratios, &tr.section_ratios, 0.0, true)
                .map_err(numerical)?;
        let summed_fit =
            asymptotics::fit_series(&grid, &tr.summed_ratios, &tr.summed_ratios, 0.0, true)
                .map_err(numerical)?;
        assertions.push(Assertion::check(
            "transfer-limit-near-one",
            (section_fit.c0 - 1.0).abs() <= 0.03 && (summed_fit.c0 - 1.0).abs() <= 0.03,
            format!(
                "fitted section limit {}, fitted summed limit {}",
                section_fit.c0, summed_fit.c0
            ),
        ));
        transfer_payload = Some(json!({
            "measure_constant": tr.measure_constant,
            "section_ratios": tr.section_ratios,
            "summed_ratios": tr.summed_ratios,
            "section_limit": section_fit.c0,
            "summed_limit": summed_fit.c0,
            "cutoff_radius": tr.cutoff_radius,
            "cutoff_sensitivity": tr.cutoff_sensitivity,
        }));
    }
    Ok(ExperimentResult {
        assertions,
        payload: json!({
            "fit": fit_json(&report.fit),
            "independent_leading": report.independent_leading,
            "g_trace": fit_json(&report.g_trace_fit),
            "reduced_volume_trace": fit_json(&report.reduced_volume_fit),
            "counts": report.counts,
            "transfer": transfer_payload,
        }),
        csv,
    })
}

// ---------------------------------------------------------------------------
// matrix-psi.

enum MatrixFamily {
    Grassmannian { k: usize, n: usize, twist: u32 },
    Chain(MatrixChainSpec),
    Polygon(PolygonLevels),
}

fn resolve_family(section: &MatrixSection) -> Result<MatrixFamily, CliError> {
    match section.family.as_deref().unwrap_or("grassmannian") {
        "grassmannian" => {
            let k = section.k.unwrap_or(2);
            let n = section.n.unwrap_or(4);
            let twist = section.twist.unwrap_or(1);
            if k == 0 || n < k {
                return Err(CliError::Config(
                    "matrix.k: need 1 <= k <= n for a plane datum".into(),
                ));
            }
            Ok(MatrixFamily::Grassmannian { k, n, twist })
        }
        "chain" => {
            let twists = section.twists.clone().unwrap_or_else(|| vec![1, 1, 1]);
            let a_last = section.a_last.unwrap_or(2);
            let spec = MatrixChainSpec::new(twists, a_last)
                .map_err(|e| CliError::Config(format!("matrix.twists: {e}")))?;
            Ok(MatrixFamily::Chain(spec))
        }
        "polygon" => {
            let lambdas = section
                .lambdas
                .clone()
                .unwrap_or_else(|| vec![-1, -1, -1, -1, 2]);
            let levels = PolygonLevels::new(lambdas)
                .map_err(|e| CliError::Config(format!("matrix.lambdas: {e}")))?;
            Ok(MatrixFamily::Polygon(levels))
        }
        other => Err(CliError::Config(format!(
            "matrix.family: unknown family \"{other}\""
        ))),
    }
}

fn retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::UnstablePoint | Error::UnstableMatrixPoint | Error::UnstableChainPoint
    )
}

pub fn run_matrix_psi(
    section: &MatrixSection,
    samples: u32,
    seed: u64,
    tol: f64,
) -> Result<ExperimentResult, CliError> {
    let family = resolve_family(section)?;
    let rows: Vec<(f64, f64, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64, f64), CliError> {
            let mut rng = SeededRng::new(seed.wrapping_add(i));
            for _ in 0..100 {
                let pair = match &family {
                    MatrixFamily::Grassmannian { k, n, twist } => {
                        let z = rng.complex_matrix(*k, *n);
                        let closed = match psi_grassmannian(&z, *k, *twist, EvalMethod::Matrix) {
                            Ok(ev) => ev,
                            Err(e) if retryable(&e) => continue,
                            Err(e) => return Err(numerical(e)),
                        };
                        let def = match psi_grassmannian(&z, *k, *twist, EvalMethod::Definition) {
                            Ok(ev) => ev,
                            Err(e) if retryable(&e) => continue,
                            Err(e) => return Err(numerical(e)),
                        };
                        (closed.psi, def.psi, def.residual)
                    }
                    MatrixFamily::Chain(spec) => {
                        let zs: Vec<CMat> = spec
                            .link_dims()
                            .into_iter()
                            .map(|(r, c)| rng.complex_matrix(r, c))
                            .collect();
                        let closed = match psi_coadjoint(spec, &zs, EvalMethod::Matrix) {
                            Ok(ev) => ev,
                            Err(e) if retryable(&e) => continue,
                            Err(e) => return Err(numerical(e)),
                        };
                        let def = match psi_coadjoint(spec, &zs, EvalMethod::Definition) {
                            Ok(ev) => ev,
                            Err(e) if retryable(&e) => continue,
                            Err(e) => return Err(numerical(e)),
                        };
                        (closed.psi, def.psi, def.residual)
                    }
                    MatrixFamily::Polygon(levels) => {
                        let rep: Vec<CMat> = (0..levels.sides())
                            .map(|_| rng.complex_matrix(2, 1))
                            .collect();
                        let closed = match psi_polygon(levels, &rep, EvalMethod::Matrix) {
                            Ok(ev) => ev,
                            Err(e) if retryable(&e) => continue,
                            Err(e) => return Err(numerical(e)),
                        };
                        let def = match psi_polygon(levels, &rep, EvalMethod::Definition) {
                            Ok(ev) => ev,
                            Err(e) if retryable(&e) => continue,
                            Err(e) => return Err(numerical(e)),
                        };
                        (closed.psi, def.psi, def.residual)
                    }
                };
                return Ok(pair);
            }
            Err(CliError::Numerical(
                "could not sample a stable matrix point in 100 draws".into(),
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut csv = Csv::new(&["sample", "psi_closed_form", "psi_definition", "abs_diff", "residual"]);
    let mut max_diff = 0.0f64;
    let mut max_psi = f64::NEG_INFINITY;
    for (i, &(closed, def, residual)) in rows.iter().enumerate() {
        let diff = (closed - def).abs();
        max_diff = max_diff.max(diff);
        max_psi = max_psi.max(closed);
        csv.push(vec![
            cell_int(i as i64),
            cell_f64(closed),
            cell_f64(def),
            cell_f64(diff),
            cell_f64(residual),
        ]);
    }
    let assertions = vec![
        Assertion::check(
            "methods-agree",
            max_diff <= tol,
            format!("max closed-form vs definition gap {max_diff}, tolerance {tol}"),
        ),
        Assertion::check(
            "psi-nonpositive",
            max_psi <= 1e-9,
            format!("max psi {max_psi}, bound 1e-9"),
        ),
    ];
    Ok(ExperimentResult {
        assertions,
        payload: json!({
            "samples": samples,
            "max_method_gap": max_diff,
            "max_psi": max_psi,
        }),
        csv,
    })
}

// ---------------------------------------------------------------------------
// chain-eigen.

pub fn run_chain_eigen(
    section: &MatrixSection,
    samples: u32,
    seed: u64,
    tol: f64,
) -> Result<ExperimentResult, CliError> {
    let twists = section.twists.clone().unwrap_or_else(|| vec![1, 1, 1]);
    let a_last = section.a_last.unwrap_or(2);
    let spec = MatrixChainSpec::new(twists, a_last)
        .map_err(|e| CliError::Config(format!("matrix.twists: {e}")))?;
    let expected: Vec<f64> = spec.lambdas().iter().map(|&l| l as f64).collect();
    let n = spec.n();
    let per_sample: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>, CliError> {
            let zs = generate_level_point(&spec, seed.wrapping_add(i));
            let endpoint = chain_endpoint(&spec, &zs).map_err(numerical)?;
            let mut eigs: Vec<f64> = endpoint
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .collect();
            eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            Ok(eigs)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut csv = Csv::new(&["sample", "index", "eigenvalue", "expected", "abs_error"]);
    let mut max_err = 0.0f64;
    for (s, eigs) in per_sample.iter().enumerate() {
        for j in 0..n {
            let err = (eigs[j] - expected[j]).abs();
            max_err = max_err.max(err);
            csv.push(vec![
                cell_int(s as i64),
                cell_int(j as i64),
                cell_f64(eigs[j]),
                cell_f64(expected[j]),
                cell_f64(err),
            ]);
        }
    }
    let assertions = vec![Assertion::check(
        "spectrum-matches",
        max_err <= tol,
        format!("max eigenvalue error {max_err}, tolerance {tol}"),
    )];
    Ok(ExperimentResult {
        assertions,
        payload: json!({
            "samples": samples,
            "expected": expected,
            "max_error": max_err,
        }),
        csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use stabfn_core::geometry::WeightSystem;

    #[test]
    fn psi_experiment_passes_on_the_sphere() {
        let poly = DelzantPolytope::new(&WeightSystem::cp(1)).unwrap();
        let out = run_psi(&poly, Some("cp1"), 8, 7, 1e-8, true).unwrap();
        assert!(out.passed(), "{:?}", out.assertions);
        assert_eq!(out.csv.rows.len(), 8);
        assert!(out
            .assertions
            .iter()
            .any(|a| a.name == "projective-closed-form"));
    }

    #[test]
    fn chain_eigen_matches_the_ladder() {
        let section = MatrixSection::default();
        let out = run_chain_eigen(&section, 3, 11, 1e-10).unwrap();
        assert!(out.passed(), "{:?}", out.assertions);
        // n = 4 ladder from twists (1,1,1) and trailing shift 2.
        assert_eq!(out.csv.rows.len(), 12);
    }

    #[test]
    fn matrix_psi_grassmannian_agrees() {
        let section = MatrixSection::default();
        let out = run_matrix_psi(&section, 4, 3, 1e-8).unwrap();
        assert!(out.passed(), "{:?}", out.assertions);
    }

    #[test]
    fn norms_report_all_points() {
        let poly = DelzantPolytope::new(&WeightSystem::cp(1)).unwrap();
        let out = run_norms(&poly, 4, 1e-10).unwrap();
        assert!(out.passed());
        assert_eq!(out.csv.rows.len(), 5);
    }
}
