//! Configuration: compiled-in presets, the TOML config file, grid-spec
//! parsing, and the resolved config echoed into every JSON summary.

use serde::{Deserialize, Serialize};
use stabfn_core::geometry::{rat, DelzantPolytope, Rat, WeightSystem};

use crate::CliError;

/// Parse a preset name into its weight system. Supported families:
/// `cp{n}` (projective space, n ≥ 1) and `hirzebruch{n}` (twist n ≥ 0).
pub fn preset_weight_system(name: &str) -> Option<WeightSystem> {
    if let Some(rest) = name.strip_prefix("cp") {
        if let Ok(n) = rest.parse::<usize>() {
            if (1..=8).contains(&n) {
                return Some(WeightSystem::cp(n));
            }
        }
        return None;
    }
    if let Some(rest) = name.strip_prefix("hirzebruch") {
        if let Ok(n) = rest.parse::<i64>() {
            if (0..=8).contains(&n) {
                return Some(WeightSystem::hirzebruch(n));
            }
        }
        return None;
    }
    None
}

pub fn preset_listing() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "cp{n}",
            "projective space: n+1 unit weights at level 1 (cp1 .. cp8)",
        ),
        (
            "hirzebruch{n}",
            "Hirzebruch surface with twist n at level (1,2) (hirzebruch0 .. hirzebruch8)",
        ),
    ]
}

/// Parse a grid spec `start:stop:step` (arithmetic) or `start:stop:*factor`
/// (geometric). Both endpoints are inclusive when hit exactly.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::Config(format!("grid: {why} (got \"{spec}\")"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad("expected start:stop:step or start:stop:*factor"));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| bad("start is not a number"))?;
    let stop: f64 = parts[1].parse().map_err(|_| bad("stop is not a number"))?;
    if !(start.is_finite() && stop.is_finite()) || start <= 0.0 {
        return Err(bad("start must be positive and both ends finite"));
    }
    if stop < start {
        return Err(bad("stop is smaller than start"));
    }
    let mut grid = Vec::new();
    if let Some(fs) = parts[2].strip_prefix('*') {
        let factor: f64 = fs.parse().map_err(|_| bad("factor is not a number"))?;
        if !(factor > 1.0) || !factor.is_finite() {
            return Err(bad("factor must exceed 1"));
        }
        let mut v = start;
        while v <= stop * (1.0 + 1e-12) {
            grid.push(v);
            v *= factor;
            if grid.len() > 100_000 {
                return Err(bad("grid has more than 100000 points"));
            }
        }
    } else {
        let step: f64 = parts[2].parse().map_err(|_| bad("step is not a number"))?;
        if !(step > 0.0) || !step.is_finite() {
            return Err(bad("step must be positive"));
        }
        let mut i = 0u64;
        loop {
            let v = start + step * i as f64;
            if v > stop * (1.0 + 1e-12) {
                break;
            }
            grid.push(v);
            i += 1;
            if grid.len() > 100_000 {
                return Err(bad("grid has more than 100000 points"));
            }
        }
    }
    if grid.is_empty() {
        return Err(bad("grid is empty"));
    }
    Ok(grid)
}

/// A grid whose points must be positive integers (section powers).
pub fn integer_grid(grid: &[f64]) -> Result<Vec<u32>, CliError> {
    let mut out = Vec::with_capacity(grid.len());
    for &v in grid {
        let r = v.round();
        if (v - r).abs() > 1e-9 || r < 1.0 || r > u32::MAX as f64 {
            return Err(CliError::Config(format!(
                "grid: point {v} is not a positive integer"
            )));
        }
        out.push(r as u32);
    }
    Ok(out)
}

/// Parse one rational like `3`, `1/2`, `5/4`.
pub fn parse_rational(s: &str) -> Result<Rat, CliError> {
    let bad = || CliError::Config(format!("ray: \"{s}\" is not a rational number"));
    let mut it = s.split('/');
    let num: i128 = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    match it.next() {
        None => Ok(rat(num)),
        Some(d) => {
            let den: i128 = d.trim().parse().map_err(|_| bad())?;
            if den == 0 {
                return Err(bad());
            }
            if it.next().is_some() {
                return Err(bad());
            }
            Ok(rat(num) / rat(den))
        }
    }
}

/// Exact barycenter of the moment polytope: the default interior ray.
pub fn barycenter_ray(poly: &DelzantPolytope) -> Vec<Rat> {
    let verts = poly.vertices();
    let d = poly.weight_system().d();
    let count = rat(verts.len() as i128);
    let mut out = vec![rat(0); d];
    for v in verts {
        for i in 0..d {
            out[i] += v.coords[i] / count;
        }
    }
    out
}

/// Polynomial observable grammar: `1`, `t` (first label), `q<i>`, with an
/// optional `^<p>` power suffix.
pub fn parse_observable(
    s: &str,
    d: usize,
) -> Result<stabfn_core::asymptotics::MomentPolynomial, CliError> {
    use stabfn_core::asymptotics::MomentPolynomial;
    let bad = |why: &str| CliError::Config(format!("observable: {why} (got \"{s}\")"));
    let (base, power) = match s.split_once('^') {
        Some((b, p)) => {
            let pw: u32 = p
                .parse()
                .map_err(|_| bad("power is not a nonnegative integer"))?;
            (b, pw)
        }
        None => (s, 1),
    };
    if base == "1" {
        if s.contains('^') {
            return Err(bad("the constant takes no power"));
        }
        return Ok(MomentPolynomial::constant(d, 1.0));
    }
    let index = if base == "t" {
        0
    } else if let Some(rest) = base.strip_prefix('q') {
        rest.parse::<usize>()
            .map_err(|_| bad("expected 1, t, or q<i>"))?
    } else {
        return Err(bad("expected 1, t, or q<i>"));
    };
    if index >= d {
        return Err(bad("coordinate index out of range"));
    }
    Ok(MomentPolynomial::coordinate_power(d, index, power))
}

// ---------------------------------------------------------------------------
// The config file.

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<ModelSection>,
    pub experiment: Option<ExperimentSection>,
    pub matrix: Option<MatrixSection>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Default, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<i64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polarizer: Option<Vec<i64>>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: Option<String>,
    pub grid: Option<String>,
    pub samples: Option<u32>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    /// Section power for the norms experiment.
    pub k: Option<u32>,
    /// Moment order for the moments experiment.
    pub l: Option<u32>,
    pub ray: Option<Vec<String>>,
    pub observable: Option<String>,
    pub transfer: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Grassmannian plane dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Grassmannian ambient dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub twist: Option<u32>,
    /// Chain twists m_1 .. m_{n-1}.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub twists: Option<Vec<u32>>,
    /// Trailing chain shift a_n.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_last: Option<u32>,
    /// Polygon side levels followed by the central level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<i64>>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub csv: Option<String>,
    pub json: Option<String>,
}

pub fn load_file_config(path: &str) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("config: cannot read {path}: {e}")))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("config: {e}")))
}

/// Resolve the model: an explicit preset wins, then the file's model table
/// (preset or inline weights).
pub fn resolve_model(
    preset_flag: Option<&str>,
    file: &FileConfig,
) -> Result<(WeightSystem, ModelSection), CliError> {
    if let Some(name) = preset_flag {
        let ws = preset_weight_system(name)
            .ok_or_else(|| CliError::Config(format!("preset: unknown preset \"{name}\"")))?;
        return Ok((
            ws,
            ModelSection {
                preset: Some(name.to_string()),
                ..Default::default()
            },
        ));
    }
    let section = file
        .model
        .clone()
        .ok_or_else(|| CliError::Config("model: no preset or inline weights given".into()))?;
    if let Some(name) = &section.preset {
        let ws = preset_weight_system(name).ok_or_else(|| {
            CliError::Config(format!("model.preset: unknown preset \"{name}\""))
        })?;
        return Ok((ws, section));
    }
    let weights = section
        .weights
        .clone()
        .ok_or_else(|| CliError::Config("model.weights: missing".into()))?;
    let level = section
        .level
        .clone()
        .ok_or_else(|| CliError::Config("model.level: missing".into()))?;
    let ws = WeightSystem::new(weights, level, section.polarizer.clone())
        .map_err(|e| CliError::Config(format!("model: {e}")))?;
    Ok((ws, section))
}

/// Everything a run depends on, echoed verbatim into the JSON summary.
#[derive(Debug, Default, Clone, Serialize)]
pub struct ResolvedConfig {
    pub experiment: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ray: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observable: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_grids() {
        let g = parse_grid("25:200:25").unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 25.0);
        assert_eq!(g[7], 200.0);
    }

    #[test]
    fn geometric_grids() {
        let g = parse_grid("4:64:*2").unwrap();
        assert_eq!(g, vec![4.0, 8.0, 16.0, 32.0, 64.0]);
    }

    #[test]
    fn bad_grids_are_rejected_with_the_field_named() {
        for spec in ["4:64", "0:10:1", "10:4:1", "4:64:*1", "4:64:x", "1:2:0"] {
            match parse_grid(spec) {
                Err(CliError::Config(msg)) => assert!(msg.starts_with("grid:"), "{msg}"),
                other => panic!("{spec}: expected config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn integer_grids_reject_fractions() {
        assert!(integer_grid(&[4.0, 8.0]).is_ok());
        assert!(integer_grid(&[4.5, 8.0]).is_err());
    }

    #[test]
    fn presets_parse() {
        assert!(preset_weight_system("cp1").is_some());
        assert!(preset_weight_system("cp3").is_some());
        assert!(preset_weight_system("hirzebruch2").is_some());
        assert!(preset_weight_system("cp0").is_none());
        assert!(preset_weight_system("torus").is_none());
    }

    #[test]
    fn rationals_parse() {
        assert_eq!(parse_rational("3").unwrap(), rat(3));
        assert_eq!(parse_rational("1/2").unwrap(), rat(1) / rat(2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn barycenter_of_the_segment() {
        let poly = DelzantPolytope::new(&WeightSystem::cp(1)).unwrap();
        let ray = barycenter_ray(&poly);
        assert_eq!(ray, vec![rat(1) / rat(2), rat(1) / rat(2)]);
    }

    #[test]
    fn observables_parse() {
        let f = parse_observable("t^2", 2).unwrap();
        assert_eq!(f.eval(&[2.0, 0.5]), 4.0);
        let g = parse_observable("q1", 2).unwrap();
        assert_eq!(g.eval(&[2.0, 0.5]), 0.5);
        assert!(parse_observable("q7", 2).is_err());
        assert!(parse_observable("zz", 2).is_err());
    }

    #[test]
    fn inline_model_with_bad_level_names_the_field() {
        let cfg: FileConfig = toml::from_str(
            "[model]\nweights = [[1, 0], [0, 1]]\nlevel = [1]\n",
        )
        .unwrap();
        match resolve_model(None, &cfg) {
            Err(CliError::Config(msg)) => {
                assert!(msg.contains("level"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let out: Result<FileConfig, _> = toml::from_str("[model]\npresett = \"cp1\"\n");
        assert!(out.is_err());
    }
}
