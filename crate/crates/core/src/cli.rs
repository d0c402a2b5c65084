//! Run configuration files, scenario assembly, and file output.
//!
//! Config format: flat `key = value` lines under `[section]` headers, UTF-8,
//! full-line `#` comments. Unknown keys and sections are errors. Required
//! keys: `[domain] preset`, `[model] preset`, `[stepping] t_end`; everything
//! else has a default that `--dump-config` materializes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::diagnostics::DiagRecord;
use crate::error::{Error, Result};
use crate::mesh::{
    make_domain, triangulate, DomainPreset, Grading, Point, PolygonalDomain, TriMesh,
};
use crate::operator::ScalarField;
use crate::reactions::{const_fn1, CoefficientPair, Cutoff, Fn4, KineticParams, ReactionNetwork};
use crate::stepper::{AdaptMode, MonitorConfig, SimState, StepConfig, Stepper, StopReason};

#[derive(Clone, Debug, PartialEq)]
pub enum DomainSpec {
    UnitSquare,
    LShape,
    Custom(Vec<(f64, f64)>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelPreset {
    Full,
    Classical,
    Custom,
}

/// Reaction choices available to `model = custom` configs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RKind {
    Zero,
    USquared,
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldName {
    U,
    V,
    P,
    W,
}

#[derive(Clone, Debug, PartialEq)]
pub enum IcSpec {
    Constant(f64),
    Gaussian {
        cx: f64,
        cy: f64,
        width: f64,
        amplitude: f64,
        offset: f64,
    },
    File {
        path: String,
        field: Option<FieldName>,
    },
}

/// A fully resolved run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfigFile {
    // [domain]
    pub domain: DomainSpec,
    pub h: f64,
    pub grading_ratio: f64,
    pub require_nonobtuse: bool,
    // [model]
    pub model: ModelPreset,
    pub r1: f64,
    pub r_neg1: f64,
    pub r2: f64,
    pub chi: f64,
    pub c_f: f64,
    pub c_g: f64,
    pub c_k: f64,
    pub kappa: f64,
    pub kappa_floor: f64,
    pub r_custom: [RKind; 4],
    // [initial]
    pub u0: IcSpec,
    pub v0: IcSpec,
    pub p0: IcSpec,
    pub w0: IcSpec,
    // [stepping]
    pub tau0: f64,
    pub tau_min: f64,
    pub t_end: f64,
    pub picard_iters: usize,
    pub picard_tol: f64,
    pub blowup_linf: f64,
    pub k_v: f64,
    pub k_p: f64,
    pub k_w: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub lumped_mass: bool,
    pub adapt: AdaptMode,
    pub delta: f64,
    // [output]
    pub series: String,
    pub snapshot_prefix: Option<String>,
    pub snapshot_every: usize,
    pub corner_x: Option<f64>,
    pub corner_y: Option<f64>,
    pub corner_radius: f64,
}

impl RunConfigFile {
    /// Defaults for everything except the required keys.
    fn with_required(domain: DomainSpec, model: ModelPreset, t_end: f64) -> Self {
        RunConfigFile {
            domain,
            h: 0.1,
            grading_ratio: 1.0,
            require_nonobtuse: false,
            model,
            r1: 1.0,
            r_neg1: 1.0,
            r2: 1.0,
            chi: 1.0,
            c_f: 1.0,
            c_g: 1.0,
            c_k: 1.0,
            kappa: 1.0,
            kappa_floor: 1e-6,
            r_custom: [RKind::Zero; 4],
            u0: IcSpec::Constant(0.0),
            v0: IcSpec::Constant(0.0),
            p0: IcSpec::Constant(0.0),
            w0: IcSpec::Constant(0.0),
            tau0: 1e-3,
            tau_min: 1e-6,
            t_end,
            picard_iters: 0,
            picard_tol: 1e-8,
            blowup_linf: 1e6,
            k_v: 1.0,
            k_p: 1.0,
            k_w: 1.0,
            solver_tol: 1e-10,
            solver_max_iter: 20_000,
            lumped_mass: true,
            adapt: AdaptMode::HalvingOnFailure,
            delta: 1.0,
            series: "series.csv".to_string(),
            snapshot_prefix: None,
            snapshot_every: 0,
            corner_x: None,
            corner_y: None,
            corner_radius: 0.1,
        }
    }
}

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| cfg_err(line, format!("key `{key}`: expected a number, got `{v}`")))
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| {
        cfg_err(
            line,
            format!("key `{key}`: expected a nonnegative integer, got `{v}`"),
        )
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(cfg_err(
            line,
            format!("key `{key}`: expected true or false, got `{v}`"),
        )),
    }
}

fn parse_ic(line: usize, key: &str, v: &str) -> Result<IcSpec> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    match parts.as_slice() {
        ["constant", c] => Ok(IcSpec::Constant(parse_f64(line, key, c)?)),
        ["gaussian", cx, cy, w, a, b] => Ok(IcSpec::Gaussian {
            cx: parse_f64(line, key, cx)?,
            cy: parse_f64(line, key, cy)?,
            width: parse_f64(line, key, w)?,
            amplitude: parse_f64(line, key, a)?,
            offset: parse_f64(line, key, b)?,
        }),
        ["file", path] => Ok(IcSpec::File { path: path.to_string(), field: None }),
        ["file", path, field] => {
            let field = match *field {
                "u" => FieldName::U,
                "v" => FieldName::V,
                "p" => FieldName::P,
                "w" => FieldName::W,
                other => return Err(cfg_err(line, format!("key `{key}`: unknown field `{other}`"))),
            };
            Ok(IcSpec::File { path: path.to_string(), field: Some(field) })
        }
        _ => Err(cfg_err(
            line,
            format!("key `{key}`: expected `constant <c>`, `gaussian <cx> <cy> <width> <amp> <offset>`, or `file <path> [u|v|p|w]`"),
        )),
    }
}

fn parse_rkind(line: usize, key: &str, v: &str) -> Result<RKind> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    match parts.as_slice() {
        ["zero"] => Ok(RKind::Zero),
        ["u_squared"] => Ok(RKind::USquared),
        ["constant", c] => Ok(RKind::Constant(parse_f64(line, key, c)?)),
        _ => Err(cfg_err(
            line,
            format!("key `{key}`: expected `zero`, `u_squared`, or `constant <c>`"),
        )),
    }
}

/// Parse a config from text. Unknown keys, unknown sections, malformed values
/// and missing required keys are errors carrying the line number.
pub fn parse_config_str(text: &str) -> Result<RunConfigFile> {
    let mut domain: Option<DomainSpec> = None;
    let mut custom_vertices: Option<(usize, Vec<(f64, f64)>)> = None;
    let mut model: Option<ModelPreset> = None;
    let mut t_end: Option<f64> = None;
    // Deferred (key, section, line, value) assignments applied after the
    // required keys fix the defaults.
    let mut pending: Vec<(String, String, usize, String)> = Vec::new();

    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| cfg_err(ln, "unterminated section header"))?
                .trim();
            match name {
                "domain" | "model" | "initial" | "stepping" | "output" => {
                    section = name.to_string();
                }
                other => return Err(cfg_err(ln, format!("unknown section `[{other}]`"))),
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(ln, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        if section.is_empty() {
            return Err(cfg_err(
                ln,
                format!("key `{key}` appears before any [section]"),
            ));
        }
        match (section.as_str(), key) {
            ("domain", "preset") => {
                domain = Some(match value {
                    "unit_square" => DomainSpec::UnitSquare,
                    "l_shape" => DomainSpec::LShape,
                    "custom" => DomainSpec::Custom(Vec::new()),
                    other => return Err(cfg_err(ln, format!("unknown domain preset `{other}`"))),
                });
            }
            ("domain", "vertices") => {
                let nums: Vec<f64> = value
                    .split_whitespace()
                    .map(|s| parse_f64(ln, "vertices", s))
                    .collect::<Result<_>>()?;
                if nums.len() < 6 || !nums.len().is_multiple_of(2) {
                    return Err(cfg_err(
                        ln,
                        "vertices: need an even count of at least 6 numbers",
                    ));
                }
                custom_vertices = Some((ln, nums.chunks(2).map(|c| (c[0], c[1])).collect()));
            }
            ("model", "preset") => {
                model = Some(match value {
                    "full" => ModelPreset::Full,
                    "classical" => ModelPreset::Classical,
                    "custom" => ModelPreset::Custom,
                    other => return Err(cfg_err(ln, format!("unknown model preset `{other}`"))),
                });
            }
            ("stepping", "t_end") => t_end = Some(parse_f64(ln, "t_end", value)?),
            _ => pending.push((section.clone(), key.to_string(), ln, value.to_string())),
        }
    }

    let mut domain =
        domain.ok_or_else(|| cfg_err(0, "missing required key `preset` in [domain]"))?;
    if let Some((ln, verts)) = custom_vertices {
        match &mut domain {
            DomainSpec::Custom(v) => *v = verts,
            _ => {
                return Err(cfg_err(
                    ln,
                    "`vertices` is only valid with `preset = custom`",
                ))
            }
        }
    }
    if matches!(&domain, DomainSpec::Custom(v) if v.is_empty()) {
        return Err(cfg_err(
            0,
            "missing required key `vertices` for custom domain",
        ));
    }
    let model = model.ok_or_else(|| cfg_err(0, "missing required key `preset` in [model]"))?;
    let t_end = t_end.ok_or_else(|| cfg_err(0, "missing required key `t_end` in [stepping]"))?;
    let mut cfg = RunConfigFile::with_required(domain, model, t_end);

    for (section, key, ln, value) in pending {
        let v = value.as_str();
        let k = key.as_str();
        match (section.as_str(), k) {
            ("domain", "h") => cfg.h = parse_f64(ln, k, v)?,
            ("domain", "grading_ratio") => cfg.grading_ratio = parse_f64(ln, k, v)?,
            ("domain", "require_nonobtuse") => cfg.require_nonobtuse = parse_bool(ln, k, v)?,
            ("model", "r1") => cfg.r1 = parse_f64(ln, k, v)?,
            ("model", "r_neg1") => cfg.r_neg1 = parse_f64(ln, k, v)?,
            ("model", "r2") => cfg.r2 = parse_f64(ln, k, v)?,
            ("model", "chi") => cfg.chi = parse_f64(ln, k, v)?,
            ("model", "c_f") => cfg.c_f = parse_f64(ln, k, v)?,
            ("model", "c_g") => cfg.c_g = parse_f64(ln, k, v)?,
            ("model", "c_k") => cfg.c_k = parse_f64(ln, k, v)?,
            ("model", "kappa") => cfg.kappa = parse_f64(ln, k, v)?,
            ("model", "kappa_floor") => cfg.kappa_floor = parse_f64(ln, k, v)?,
            ("model", "R1") => cfg.r_custom[0] = parse_rkind(ln, k, v)?,
            ("model", "R2") => cfg.r_custom[1] = parse_rkind(ln, k, v)?,
            ("model", "R3") => cfg.r_custom[2] = parse_rkind(ln, k, v)?,
            ("model", "R4") => cfg.r_custom[3] = parse_rkind(ln, k, v)?,
            ("initial", "u0") => cfg.u0 = parse_ic(ln, k, v)?,
            ("initial", "v0") => cfg.v0 = parse_ic(ln, k, v)?,
            ("initial", "p0") => cfg.p0 = parse_ic(ln, k, v)?,
            ("initial", "w0") => cfg.w0 = parse_ic(ln, k, v)?,
            ("stepping", "tau0") => cfg.tau0 = parse_f64(ln, k, v)?,
            ("stepping", "tau_min") => cfg.tau_min = parse_f64(ln, k, v)?,
            ("stepping", "picard_iters") => cfg.picard_iters = parse_usize(ln, k, v)?,
            ("stepping", "picard_tol") => cfg.picard_tol = parse_f64(ln, k, v)?,
            ("stepping", "blowup_linf") => cfg.blowup_linf = parse_f64(ln, k, v)?,
            ("stepping", "k_v") => cfg.k_v = parse_f64(ln, k, v)?,
            ("stepping", "k_p") => cfg.k_p = parse_f64(ln, k, v)?,
            ("stepping", "k_w") => cfg.k_w = parse_f64(ln, k, v)?,
            ("stepping", "solver_tol") => cfg.solver_tol = parse_f64(ln, k, v)?,
            ("stepping", "solver_max_iter") => cfg.solver_max_iter = parse_usize(ln, k, v)?,
            ("stepping", "lumped_mass") => cfg.lumped_mass = parse_bool(ln, k, v)?,
            ("stepping", "adapt") => {
                cfg.adapt = match v {
                    "none" => AdaptMode::None,
                    "halving" => AdaptMode::HalvingOnFailure,
                    other => {
                        return Err(cfg_err(
                            ln,
                            format!("key `adapt`: expected none or halving, got `{other}`"),
                        ))
                    }
                }
            }
            ("stepping", "delta") => cfg.delta = parse_f64(ln, k, v)?,
            ("output", "series") => cfg.series = v.to_string(),
            ("output", "snapshot_prefix") => cfg.snapshot_prefix = Some(v.to_string()),
            ("output", "snapshot_every") => cfg.snapshot_every = parse_usize(ln, k, v)?,
            ("output", "corner_x") => cfg.corner_x = Some(parse_f64(ln, k, v)?),
            ("output", "corner_y") => cfg.corner_y = Some(parse_f64(ln, k, v)?),
            ("output", "corner_radius") => cfg.corner_radius = parse_f64(ln, k, v)?,
            (s, k) => return Err(cfg_err(ln, format!("unknown key `{k}` in section [{s}]"))),
        }
    }

    validate_config(&cfg)?;
    Ok(cfg)
}

fn validate_config(cfg: &RunConfigFile) -> Result<()> {
    if cfg.kappa_floor.is_nan() || cfg.kappa_floor <= 0.0 {
        return Err(cfg_err(
            0,
            format!(
                "kappa_floor must be strictly positive, got {}",
                cfg.kappa_floor
            ),
        ));
    }
    if cfg.kappa < cfg.kappa_floor {
        return Err(cfg_err(
            0,
            format!(
                "kappa = {} is below kappa_floor = {}",
                cfg.kappa, cfg.kappa_floor
            ),
        ));
    }
    if cfg.h.is_nan() || cfg.h <= 0.0 {
        return Err(cfg_err(0, format!("h must be positive, got {}", cfg.h)));
    }
    if cfg.grading_ratio.is_nan() || cfg.grading_ratio <= 0.0 || cfg.grading_ratio > 1.0 {
        return Err(cfg_err(
            0,
            format!(
                "grading_ratio must lie in (0, 1], got {}",
                cfg.grading_ratio
            ),
        ));
    }
    if cfg.delta.is_nan() || cfg.delta <= 0.0 {
        return Err(cfg_err(
            0,
            format!("delta must be positive, got {}", cfg.delta),
        ));
    }
    if cfg.corner_radius.is_nan() || cfg.corner_radius <= 0.0 {
        return Err(cfg_err(
            0,
            format!("corner_radius must be positive, got {}", cfg.corner_radius),
        ));
    }
    for (name, r) in [
        ("r1", cfg.r1),
        ("r_neg1", cfg.r_neg1),
        ("r2", cfg.r2),
        ("c_f", cfg.c_f),
        ("c_g", cfg.c_g),
        ("c_k", cfg.c_k),
    ] {
        if !r.is_finite() || r < 0.0 {
            return Err(cfg_err(
                0,
                format!("{name} must be finite and nonnegative, got {r}"),
            ));
        }
    }
    Ok(())
}

pub fn parse_config(path: &Path) -> Result<RunConfigFile> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

fn emit_ic(spec: &IcSpec) -> String {
    match spec {
        IcSpec::Constant(c) => format!("constant {c}"),
        IcSpec::Gaussian {
            cx,
            cy,
            width,
            amplitude,
            offset,
        } => {
            format!("gaussian {cx} {cy} {width} {amplitude} {offset}")
        }
        IcSpec::File { path, field } => match field {
            None => format!("file {path}"),
            Some(f) => format!(
                "file {path} {}",
                match f {
                    FieldName::U => "u",
                    FieldName::V => "v",
                    FieldName::P => "p",
                    FieldName::W => "w",
                }
            ),
        },
    }
}

fn emit_rkind(r: &RKind) -> String {
    match r {
        RKind::Zero => "zero".to_string(),
        RKind::USquared => "u_squared".to_string(),
        RKind::Constant(c) => format!("constant {c}"),
    }
}

/// Emit a config in the same format `parse_config_str` reads; parsing the
/// result reproduces the config exactly.
pub fn emit_config(cfg: &RunConfigFile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[domain]");
    match &cfg.domain {
        DomainSpec::UnitSquare => {
            let _ = writeln!(s, "preset = unit_square");
        }
        DomainSpec::LShape => {
            let _ = writeln!(s, "preset = l_shape");
        }
        DomainSpec::Custom(v) => {
            let _ = writeln!(s, "preset = custom");
            let verts: Vec<String> = v.iter().map(|(x, y)| format!("{x} {y}")).collect();
            let _ = writeln!(s, "vertices = {}", verts.join(" "));
        }
    }
    let _ = writeln!(s, "h = {}", cfg.h);
    let _ = writeln!(s, "grading_ratio = {}", cfg.grading_ratio);
    let _ = writeln!(s, "require_nonobtuse = {}", cfg.require_nonobtuse);
    let _ = writeln!(s, "\n[model]");
    let _ = writeln!(
        s,
        "preset = {}",
        match cfg.model {
            ModelPreset::Full => "full",
            ModelPreset::Classical => "classical",
            ModelPreset::Custom => "custom",
        }
    );
    let _ = writeln!(s, "r1 = {}", cfg.r1);
    let _ = writeln!(s, "r_neg1 = {}", cfg.r_neg1);
    let _ = writeln!(s, "r2 = {}", cfg.r2);
    let _ = writeln!(s, "chi = {}", cfg.chi);
    let _ = writeln!(s, "c_f = {}", cfg.c_f);
    let _ = writeln!(s, "c_g = {}", cfg.c_g);
    let _ = writeln!(s, "c_k = {}", cfg.c_k);
    let _ = writeln!(s, "kappa = {}", cfg.kappa);
    let _ = writeln!(s, "kappa_floor = {}", cfg.kappa_floor);
    for (i, r) in cfg.r_custom.iter().enumerate() {
        let _ = writeln!(s, "R{} = {}", i + 1, emit_rkind(r));
    }
    let _ = writeln!(s, "\n[initial]");
    let _ = writeln!(s, "u0 = {}", emit_ic(&cfg.u0));
    let _ = writeln!(s, "v0 = {}", emit_ic(&cfg.v0));
    let _ = writeln!(s, "p0 = {}", emit_ic(&cfg.p0));
    let _ = writeln!(s, "w0 = {}", emit_ic(&cfg.w0));
    let _ = writeln!(s, "\n[stepping]");
    let _ = writeln!(s, "t_end = {}", cfg.t_end);
    let _ = writeln!(s, "tau0 = {}", cfg.tau0);
    let _ = writeln!(s, "tau_min = {}", cfg.tau_min);
    let _ = writeln!(s, "picard_iters = {}", cfg.picard_iters);
    let _ = writeln!(s, "picard_tol = {}", cfg.picard_tol);
    let _ = writeln!(s, "blowup_linf = {}", cfg.blowup_linf);
    let _ = writeln!(s, "k_v = {}", cfg.k_v);
    let _ = writeln!(s, "k_p = {}", cfg.k_p);
    let _ = writeln!(s, "k_w = {}", cfg.k_w);
    let _ = writeln!(s, "solver_tol = {}", cfg.solver_tol);
    let _ = writeln!(s, "solver_max_iter = {}", cfg.solver_max_iter);
    let _ = writeln!(s, "lumped_mass = {}", cfg.lumped_mass);
    let _ = writeln!(
        s,
        "adapt = {}",
        match cfg.adapt {
            AdaptMode::None => "none",
            AdaptMode::HalvingOnFailure => "halving",
        }
    );
    let _ = writeln!(s, "delta = {}", cfg.delta);
    let _ = writeln!(s, "\n[output]");
    let _ = writeln!(s, "series = {}", cfg.series);
    if let Some(p) = &cfg.snapshot_prefix {
        let _ = writeln!(s, "snapshot_prefix = {p}");
    }
    let _ = writeln!(s, "snapshot_every = {}", cfg.snapshot_every);
    if let Some(x) = cfg.corner_x {
        let _ = writeln!(s, "corner_x = {x}");
    }
    if let Some(y) = cfg.corner_y {
        let _ = writeln!(s, "corner_y = {y}");
    }
    let _ = writeln!(s, "corner_radius = {}", cfg.corner_radius);
    s
}

/// Build a nodal field from an initial-condition spec.
/// `slot` selects the snapshot column when `file` omits the field name.
pub fn initial_condition(spec: &IcSpec, mesh: &TriMesh, slot: FieldName) -> Result<ScalarField> {
    match spec {
        IcSpec::Constant(c) => {
            if !c.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "constant initial value {c} not finite"
                )));
            }
            Ok(ScalarField::constant(mesh, *c))
        }
        IcSpec::Gaussian {
            cx,
            cy,
            width,
            amplitude,
            offset,
        } => {
            if width.is_nan() || *width <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "gaussian width must be positive, got {width}"
                )));
            }
            let (cx, cy, w, a, b) = (*cx, *cy, *width, *amplitude, *offset);
            Ok(ScalarField::from_fn(mesh, move |x, y| {
                b + a * (-(((x - cx).powi(2) + (y - cy).powi(2)) / (w * w))).exp()
            }))
        }
        IcSpec::File { path, field } => {
            let text = std::fs::read_to_string(path)?;
            let values = read_nodal_file(&text, field.unwrap_or(slot))?;
            if values.len() != mesh.node_count() {
                return Err(Error::Dimension {
                    expected: mesh.node_count(),
                    got: values.len(),
                });
            }
            ScalarField::from_values(mesh, values)
        }
    }
}

/// Read nodal values from either a snapshot file (header `t=...`, rows
/// `x y u v p w`) or a plain one-value-per-line file.
fn read_nodal_file(text: &str, field: FieldName) -> Result<Vec<f64>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let snapshot = matches!(lines.peek(), Some((_, l)) if l.starts_with("t="));
    if snapshot {
        lines.next();
    }
    let col = match field {
        FieldName::U => 2,
        FieldName::V => 3,
        FieldName::P => 4,
        FieldName::W => 5,
    };
    let mut out = Vec::new();
    for (ln, line) in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let token = if snapshot {
            *parts.get(col).ok_or_else(|| Error::Parse {
                line: ln,
                msg: format!("snapshot row needs 6 columns, got {}", parts.len()),
            })?
        } else {
            if parts.len() != 1 {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("expected one value per line, got {}", parts.len()),
                });
            }
            parts[0]
        };
        let v: f64 = token.parse().map_err(|_| Error::Parse {
            line: ln,
            msg: format!("bad number `{token}`"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Write a field snapshot: header `t=<time>`, then `x y u v p w` per node.
pub fn format_snapshot(state: &SimState, mesh: &TriMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "t={}", state.t);
    for (i, p) in mesh.nodes().iter().enumerate() {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            p.x,
            p.y,
            state.u.values()[i],
            state.v.values()[i],
            state.p.values()[i],
            state.w.values()[i]
        );
    }
    s
}

/// Everything needed to run a configured scenario.
pub struct Scenario {
    pub domain: PolygonalDomain,
    pub mesh: TriMesh,
    pub initial: SimState,
    pub net: ReactionNetwork,
    pub coefficients: CoefficientPair,
    pub step: StepConfig,
    pub monitor: MonitorConfig,
    pub cutoff: Cutoff,
}

fn rkind_fn(kind: RKind) -> Fn4 {
    match kind {
        RKind::Zero => Arc::new(|_, _, _, _| 0.0),
        RKind::USquared => Arc::new(|u, _, _, _| u * u),
        RKind::Constant(c) => Arc::new(move |_, _, _, _| c),
    }
}

pub fn build_scenario(cfg: &RunConfigFile) -> Result<Scenario> {
    let domain = match &cfg.domain {
        DomainSpec::UnitSquare => make_domain(DomainPreset::UnitSquare)?,
        DomainSpec::LShape => make_domain(DomainPreset::LShape)?,
        DomainSpec::Custom(v) => make_domain(DomainPreset::Custom(
            v.iter().map(|&(x, y)| Point::new(x, y)).collect(),
        ))?,
    };
    // Grading, when requested, refines toward the reentrant corners.
    let grading = if cfg.grading_ratio < 1.0 {
        let corners = domain.reentrant_corners();
        if corners.is_empty() {
            None
        } else {
            Some(Grading {
                corners,
                ratio: cfg.grading_ratio,
            })
        }
    } else {
        None
    };
    let mesh = triangulate(&domain, cfg.h, grading.as_ref(), cfg.require_nonobtuse)?;

    let u0 = initial_condition(&cfg.u0, &mesh, FieldName::U)?;
    let v0 = initial_condition(&cfg.v0, &mesh, FieldName::V)?;
    let p0 = initial_condition(&cfg.p0, &mesh, FieldName::P)?;
    let w0 = initial_condition(&cfg.w0, &mesh, FieldName::W)?;
    let cutoff = Cutoff::from_initial_sup_norms(cfg.delta, v0.linf(), p0.linf(), w0.linf())?;
    let initial = SimState::new(0.0, u0, v0, p0, w0)?;

    let net = match cfg.model {
        ModelPreset::Full => ReactionNetwork::full(KineticParams::with_constant_production(
            cfg.r1, cfg.r_neg1, cfg.r2, cfg.c_f, cfg.c_g,
        )?),
        ModelPreset::Classical => {
            ReactionNetwork::simplified(const_fn1(cfg.c_k), const_fn1(cfg.c_f))
        }
        ModelPreset::Custom => ReactionNetwork::custom([
            rkind_fn(cfg.r_custom[0]),
            rkind_fn(cfg.r_custom[1]),
            rkind_fn(cfg.r_custom[2]),
            rkind_fn(cfg.r_custom[3]),
        ]),
    }
    .with_cutoff(cutoff);

    let coefficients = CoefficientPair::constant_kappa(cfg.kappa, cfg.chi, cfg.kappa_floor)?;

    let step = StepConfig {
        tau0: cfg.tau0,
        tau_min: cfg.tau_min,
        t_end: cfg.t_end,
        picard_iters: cfg.picard_iters,
        picard_tol: cfg.picard_tol,
        blowup_linf: cfg.blowup_linf,
        k_v: cfg.k_v,
        k_p: cfg.k_p,
        k_w: cfg.k_w,
        solver_tol: cfg.solver_tol,
        solver_max_iter: cfg.solver_max_iter,
        lumped_mass: cfg.lumped_mass,
        adapt: cfg.adapt,
    };
    step.validate().map_err(|e| cfg_err(0, e.to_string()))?;

    let corner = match (cfg.corner_x, cfg.corner_y) {
        (Some(x), Some(y)) => Point::new(x, y),
        _ => {
            let verts = domain.vertices();
            let idx = domain.reentrant_corners().first().copied().unwrap_or(0);
            verts[idx]
        }
    };
    let monitor = MonitorConfig {
        corner,
        corner_radius: cfg.corner_radius,
    };

    Ok(Scenario {
        domain,
        mesh,
        initial,
        net,
        coefficients,
        step,
        monitor,
        cutoff,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSummary {
    pub reason: StopReason,
    pub final_t: f64,
    pub steps: usize,
    pub exit_code: i32,
}

pub fn exit_code_for_reason(reason: StopReason) -> i32 {
    match reason {
        StopReason::ReachedTEnd => 0,
        StopReason::BlowupDetected => 2,
        StopReason::StepUnderflow => 3,
        StopReason::SolverFailure => 4,
    }
}

/// Exit code for errors surfaced outside a run: 6 for I/O, 5 for anything
/// configuration-shaped.
pub fn exit_code_for_error(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 6,
        Error::SolverDiverged { .. } => 4,
        _ => 5,
    }
}

/// Execute a configured run: stream the time-series CSV (flushed per record),
/// write snapshots at the configured cadence plus the final state, and print
/// the one-line summary.
pub fn run_command(cfg: &RunConfigFile) -> Result<RunSummary> {
    let scenario = build_scenario(cfg)?;
    let stepper = Stepper::new(&scenario.mesh, scenario.step.clone())?;

    let file = std::fs::File::create(&cfg.series)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{}", DiagRecord::CSV_HEADER)?;

    let snapshot_prefix = cfg.snapshot_prefix.clone();
    let snapshot_every = cfg.snapshot_every;
    let mesh_ref = &scenario.mesh;
    let mut observer = |rec: &DiagRecord, state: &SimState| -> Result<()> {
        writeln!(out, "{}", rec.to_csv_row())?;
        out.flush()?;
        if let Some(prefix) = &snapshot_prefix {
            if snapshot_every > 0 && rec.step.is_multiple_of(snapshot_every) {
                let path = format!("{prefix}_{:06}.txt", rec.step);
                std::fs::write(path, format_snapshot(state, mesh_ref))?;
            }
        }
        Ok(())
    };

    let outcome = stepper.run_with_observer(
        scenario.initial,
        &scenario.coefficients,
        &scenario.net,
        &scenario.monitor,
        &mut observer,
    )?;

    if let Some(prefix) = &cfg.snapshot_prefix {
        let path = format!("{prefix}_final.txt");
        std::fs::write(path, format_snapshot(&outcome.final_state, &scenario.mesh))?;
    }

    let steps = outcome.series.len().saturating_sub(1);
    let reason_str = match outcome.reason {
        StopReason::ReachedTEnd => "reached_t_end",
        StopReason::BlowupDetected => "blowup_detected",
        StopReason::StepUnderflow => "step_underflow",
        StopReason::SolverFailure => "solver_failure",
    };
    println!(
        "reason={reason_str} t={} steps={steps}",
        outcome.final_state.t
    );

    Ok(RunSummary {
        reason: outcome.reason,
        final_t: outcome.final_state.t,
        steps,
        exit_code: exit_code_for_reason(outcome.reason),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[domain]\npreset = unit_square\n[model]\npreset = classical\nchi = 5\n[stepping]\nt_end = 0.1\n";

    #[test]
    fn minimal_classical_config_gets_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.model, ModelPreset::Classical);
        assert_eq!(cfg.chi, 5.0);
        assert_eq!(cfg.t_end, 0.1);
        assert_eq!(cfg.h, 0.1);
        assert_eq!(cfg.tau0, 1e-3);
        assert_eq!(cfg.u0, IcSpec::Constant(0.0));
        assert!(cfg.lumped_mass);
    }

    #[test]
    fn zero_kappa_floor_rejected() {
        let text = format!("{MINIMAL}[model]\nkappa_floor = 0\n");
        // Key order does not matter; re-opening a section is allowed.
        let wrong = parse_config_str(&text);
        assert!(matches!(wrong, Err(Error::Config { .. })), "{wrong:?}");
    }

    #[test]
    fn misspelled_key_is_named() {
        let text = "[domain]\npreset = unit_square\n[model]\npreset = classical\nch1 = 5\n[stepping]\nt_end = 0.1\n";
        match parse_config_str(text) {
            Err(Error::Config { line, msg }) => {
                assert_eq!(line, 5);
                assert!(msg.contains("ch1"), "message: {msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_required_key_is_reported() {
        let text = "[domain]\npreset = unit_square\n[model]\npreset = full\n";
        match parse_config_str(text) {
            Err(Error::Config { msg, .. }) => assert!(msg.contains("t_end")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn emit_parse_round_trip() {
        let mut cfg = parse_config_str(MINIMAL).unwrap();
        cfg.u0 = IcSpec::Gaussian {
            cx: 0.25,
            cy: 0.75,
            width: 0.1,
            amplitude: 2.0,
            offset: 0.5,
        };
        cfg.r_custom[0] = RKind::USquared;
        cfg.r_custom[3] = RKind::Constant(-0.125);
        cfg.snapshot_prefix = Some("snaps/run".into());
        cfg.corner_x = Some(0.5);
        cfg.corner_y = Some(0.5);
        cfg.adapt = AdaptMode::None;
        let text = emit_config(&cfg);
        let reparsed = parse_config_str(&text).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn custom_domain_requires_vertices() {
        let text = "[domain]\npreset = custom\n[model]\npreset = full\n[stepping]\nt_end = 0.1\n";
        assert!(parse_config_str(text).is_err());
        let text = "[domain]\npreset = custom\nvertices = 0 0 1 0 1 1 0 1\n[model]\npreset = full\n[stepping]\nt_end = 0.1\n";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(
            cfg.domain,
            DomainSpec::Custom(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
        );
    }

    #[test]
    fn gaussian_initial_condition_peaks_at_center_node() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let scenario = build_scenario(&cfg).unwrap();
        let spec = IcSpec::Gaussian {
            cx: 0.5,
            cy: 0.5,
            width: 0.2,
            amplitude: 3.0,
            offset: 0.0,
        };
        let f = initial_condition(&spec, &scenario.mesh, FieldName::U).unwrap();
        let peak = scenario
            .mesh
            .nodes()
            .iter()
            .position(|p| (p.x - 0.5).abs() < 1e-12 && (p.y - 0.5).abs() < 1e-12)
            .expect("center node");
        assert_eq!(f.values()[peak], 3.0);
        assert!((f.max() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_initial_condition() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let scenario = build_scenario(&cfg).unwrap();
        let f = initial_condition(&IcSpec::Constant(3.0), &scenario.mesh, FieldName::U).unwrap();
        assert!(f.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn snapshot_round_trips_as_initial_condition() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let scenario = build_scenario(&cfg).unwrap();
        let mesh = &scenario.mesh;
        let state = SimState::new(
            0.25,
            ScalarField::from_fn(mesh, |x, y| x + 2.0 * y),
            ScalarField::from_fn(mesh, |x, _| x * x),
            ScalarField::constant(mesh, 0.125),
            ScalarField::from_fn(mesh, |_, y| -y),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.txt");
        std::fs::write(&path, format_snapshot(&state, mesh)).unwrap();
        for (slot, reference) in [
            (FieldName::U, &state.u),
            (FieldName::V, &state.v),
            (FieldName::P, &state.p),
            (FieldName::W, &state.w),
        ] {
            let spec = IcSpec::File {
                path: path.to_string_lossy().into_owned(),
                field: None,
            };
            let loaded = initial_condition(&spec, mesh, slot).unwrap();
            for (a, b) in loaded.values().iter().zip(reference.values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn plain_value_file_and_length_mismatch() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let scenario = build_scenario(&cfg).unwrap();
        let n = scenario.mesh.node_count();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vals.txt");
        let text: String = (0..n).map(|i| format!("{}\n", i as f64 * 0.5)).collect();
        std::fs::write(&path, &text).unwrap();
        let spec = IcSpec::File {
            path: path.to_string_lossy().into_owned(),
            field: None,
        };
        let f = initial_condition(&spec, &scenario.mesh, FieldName::U).unwrap();
        assert_eq!(f.values()[2], 1.0);

        std::fs::write(&path, "1.0\n2.0\n").unwrap();
        assert!(matches!(
            initial_condition(&spec, &scenario.mesh, FieldName::U),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn scenario_monitor_defaults_to_reentrant_corner() {
        let text =
            "[domain]\npreset = l_shape\n[model]\npreset = classical\n[stepping]\nt_end = 0.1\n";
        let cfg = parse_config_str(text).unwrap();
        let scenario = build_scenario(&cfg).unwrap();
        assert_eq!(scenario.monitor.corner, Point::new(0.5, 0.5));
        // Clamp level from initial data: all-zero fields, delta = 1.
        assert_eq!(scenario.cutoff.level(), 1.0);
    }
}
