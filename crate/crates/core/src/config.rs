//! Run configuration: a strict plain-text format with named sections,
//! `key = value` entries, and `#` comments. Unknown sections or keys are
//! errors so that typos in physics parameters cannot pass silently.
//!
//! ```text
//! material {
//!     kinematics = full        # full | uniaxial
//!     bulk = 170833.333
//!     shear = 78846.1538
//!     split = none             # none | voldev
//!     n_y = 20
//!     sigma_p_first = 0.6
//!     sigma_p_last = 1.4
//!     ...
//! }
//! schedule { ... }
//! ```

use crate::constitutive::{DamageModel, Kinematics, MaterialSpec, Split, SurfaceParams};
use crate::load::Waveform;
use crate::matpoint::ControlKind;
use crate::solver::{FeSchedule, LinearSolver, SolverConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}` in section `{section}`")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: unknown section `{0}`", .section)]
    UnknownSection { line: usize, section: String },
    #[error("section `{section}`: missing mandatory key `{key}`")]
    MissingKey { section: String, key: String },
    #[error("missing mandatory section `{0}`")]
    MissingSection(String),
    #[error("line {line}: invalid value for `{key}`: {msg}")]
    BadValue {
        line: usize,
        key: String,
        msg: String,
    },
}

/// Mesh selection: an external file or a built-in generator.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    Path(String),
    RectHole {
        width: f64,
        height: f64,
        radius: f64,
        target_h: f64,
    },
    DoubleNotched {
        width: f64,
        height: f64,
        radius: f64,
        target_h: f64,
    },
    Rect {
        width: f64,
        height: f64,
        nx: usize,
        ny: usize,
    },
}

/// Material-point kinematic mode for `matpoint` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointMode {
    Uniaxial,
    FullTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: String,
    /// Write a VTK snapshot every `snapshot_stride` steps; 0 disables.
    pub snapshot_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            snapshot_stride: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub material: MaterialSpec,
    pub mesh: Option<MeshSource>,
    pub schedule: FeSchedule,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub point_mode: PointMode,
}

// ---------------------------------------------------------------------------
// Generic section tree
// ---------------------------------------------------------------------------

struct RawSection {
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

fn tokenize(text: &str) -> Result<Vec<RawSection>, ConfigError> {
    let mut sections: Vec<RawSection> = vec![];
    let mut open: Option<RawSection> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_suffix('{') {
            if open.is_some() {
                return Err(ConfigError::Syntax {
                    line,
                    msg: "nested sections are not allowed".into(),
                });
            }
            let name = name.trim();
            if name.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    msg: "section name missing before `{`".into(),
                });
            }
            open = Some(RawSection {
                name: name.to_string(),
                line,
                entries: vec![],
            });
        } else if body == "}" {
            match open.take() {
                Some(s) => sections.push(s),
                None => {
                    return Err(ConfigError::Syntax {
                        line,
                        msg: "unmatched `}`".into(),
                    })
                }
            }
        } else if let Some((k, v)) = body.split_once('=') {
            let sec = open.as_mut().ok_or(ConfigError::Syntax {
                line,
                msg: "key outside any section".into(),
            })?;
            sec.entries
                .push((k.trim().to_string(), v.trim().to_string(), line));
        } else {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("expected `name {{`, `}}`, or `key = value`, got `{body}`"),
            });
        }
    }
    if let Some(s) = open {
        return Err(ConfigError::Syntax {
            line: s.line,
            msg: format!("section `{}` never closed", s.name),
        });
    }
    Ok(sections)
}

/// Key-value view of one section with consumption tracking for strictness.
struct SectionView {
    name: String,
    map: BTreeMap<String, (String, usize)>,
}

impl SectionView {
    fn new(raw: RawSection) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (k, v, line) in raw.entries {
            if map.insert(k.clone(), (v, line)).is_some() {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("duplicate key `{k}`"),
                });
            }
        }
        Ok(SectionView {
            name: raw.name,
            map,
        })
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<(String, usize), ConfigError> {
        self.take(key).ok_or_else(|| ConfigError::MissingKey {
            section: self.name.clone(),
            key: key.to_string(),
        })
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some((key, (_, line))) = self.map.into_iter().next() {
            return Err(ConfigError::UnknownKey {
                line,
                section: self.name,
                key,
            });
        }
        Ok(())
    }
}

fn parse_f64(key: &str, v: &str, line: usize) -> Result<f64, ConfigError> {
    if v == "inf" {
        return Ok(f64::INFINITY);
    }
    v.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        msg: format!("`{v}` is not a number"),
    })
}

fn parse_usize(key: &str, v: &str, line: usize) -> Result<usize, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        msg: format!("`{v}` is not a non-negative integer"),
    })
}

fn parse_bool(key: &str, v: &str, line: usize) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            msg: format!("`{v}` is not `true`/`false`"),
        }),
    }
}

fn parse_list(key: &str, v: &str, line: usize) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .map(|t| parse_f64(key, t.trim(), line))
        .collect()
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// A per-surface parameter: an explicit list (`sigma_p = a, b, c`) or the
/// linear interpolation rule from `(first, last)` over `n_y` surfaces with
/// exact endpoints.
fn surface_values(sec: &mut SectionView, base: &str, n_y: usize) -> Result<Vec<f64>, ConfigError> {
    if let Some((v, line)) = sec.take(base) {
        let vals = parse_list(base, &v, line)?;
        if vals.len() != n_y {
            return Err(ConfigError::BadValue {
                line,
                key: base.to_string(),
                msg: format!("expected {n_y} values, got {}", vals.len()),
            });
        }
        // `first`/`last` keys must not also be present.
        for suffix in ["first", "last"] {
            if let Some((_, l2)) = sec.take(&format!("{base}_{suffix}")) {
                return Err(ConfigError::BadValue {
                    line: l2,
                    key: format!("{base}_{suffix}"),
                    msg: format!("conflicts with explicit list `{base}`"),
                });
            }
        }
        return Ok(vals);
    }
    let (fv, fline) = sec.require(&format!("{base}_first"))?;
    let first = parse_f64(&format!("{base}_first"), &fv, fline)?;
    if n_y == 1 {
        // Degenerate interpolation: a `last` value, if given, is ignored.
        sec.take(&format!("{base}_last"));
        return Ok(vec![first]);
    }
    let (lv, lline) = sec.require(&format!("{base}_last"))?;
    let last = parse_f64(&format!("{base}_last"), &lv, lline)?;
    let mut out = Vec::with_capacity(n_y);
    for s in 0..n_y {
        out.push(first + s as f64 * (last - first) / (n_y - 1) as f64);
    }
    out[0] = first;
    out[n_y - 1] = last;
    Ok(out)
}

fn parse_material(mut sec: SectionView) -> Result<MaterialSpec, ConfigError> {
    let (kin_v, kin_l) = sec.require("kinematics")?;
    let kinematics = match kin_v.as_str() {
        "full" => {
            let (b, bl) = sec.require("bulk")?;
            let (s, sl) = sec.require("shear")?;
            Kinematics::Full {
                bulk: parse_f64("bulk", &b, bl)?,
                shear: parse_f64("shear", &s, sl)?,
            }
        }
        "uniaxial" => {
            let (y, yl) = sec.require("youngs")?;
            Kinematics::Uniaxial {
                youngs: parse_f64("youngs", &y, yl)?,
            }
        }
        other => {
            return Err(ConfigError::BadValue {
                line: kin_l,
                key: "kinematics".into(),
                msg: format!("`{other}` is not `full` or `uniaxial`"),
            })
        }
    };
    let split = match sec.take("split") {
        None => Split::None,
        Some((v, l)) => match v.as_str() {
            "none" => Split::None,
            "voldev" => Split::VolDev,
            other => {
                return Err(ConfigError::BadValue {
                    line: l,
                    key: "split".into(),
                    msg: format!("`{other}` is not `none` or `voldev`"),
                })
            }
        },
    };
    let (ny_v, ny_l) = sec.require("n_y")?;
    let n_y = parse_usize("n_y", &ny_v, ny_l)?;
    if n_y == 0 {
        return Err(ConfigError::BadValue {
            line: ny_l,
            key: "n_y".into(),
            msg: "at least one yield surface is required".into(),
        });
    }
    let sigma_p = surface_values(&mut sec, "sigma_p", n_y)?;
    let h_kin = surface_values(&mut sec, "h_kin", n_y)?;
    let h_iso = surface_values(&mut sec, "h_iso", n_y)?;
    let surfaces = (0..n_y)
        .map(|s| SurfaceParams {
            sigma_p: sigma_p[s],
            h_kin: h_kin[s],
            h_iso: h_iso[s],
        })
        .collect();
    let mut f = |key: &str, default: f64| -> Result<f64, ConfigError> {
        match sec.take(key) {
            Some((v, l)) => parse_f64(key, &v, l),
            None => Ok(default),
        }
    };
    let beta = f("beta", 0.0)?;
    let eta_p = f("eta_p", 0.0)?;
    let eta_d = f("eta_d", 0.0)?;
    let (w0_v, w0_l) = sec.require("w0")?;
    let w0 = parse_f64("w0", &w0_v, w0_l)?;
    let damage_model = match sec.take("damage_model") {
        None => DamageModel::At1,
        Some((v, l)) => match v.as_str() {
            "at1" => DamageModel::At1,
            "at2" => DamageModel::At2,
            other => {
                return Err(ConfigError::BadValue {
                    line: l,
                    key: "damage_model".into(),
                    msg: format!("`{other}` is not `at1` or `at2`"),
                })
            }
        },
    };
    let gamma0 = match sec.take("gamma0") {
        Some((v, l)) => parse_f64("gamma0", &v, l)?,
        None => f64::INFINITY,
    };
    let fatigue_k = match sec.take("fatigue_k") {
        Some((v, l)) => parse_f64("fatigue_k", &v, l)?,
        None => 0.5,
    };
    let ratchet_correction = match sec.take("ratchet_correction") {
        Some((v, l)) => parse_bool("ratchet_correction", &v, l)?,
        None => true,
    };
    sec.finish()?;
    Ok(MaterialSpec {
        kinematics,
        split,
        surfaces,
        beta,
        eta_p,
        eta_d,
        w0,
        damage_model,
        gamma0,
        fatigue_k,
        ratchet_correction,
    })
}

fn parse_mesh(mut sec: SectionView) -> Result<MeshSource, ConfigError> {
    if let Some((p, _)) = sec.take("path") {
        sec.finish()?;
        return Ok(MeshSource::Path(p));
    }
    let (gen_v, gen_l) = sec.require("generator")?;
    let mut f = |key: &str| -> Result<f64, ConfigError> {
        let (v, l) = sec.require(key)?;
        parse_f64(key, &v, l)
    };
    let src = match gen_v.as_str() {
        "rect_hole" => MeshSource::RectHole {
            width: f("width")?,
            height: f("height")?,
            radius: f("radius")?,
            target_h: f("target_h")?,
        },
        "double_notched" => MeshSource::DoubleNotched {
            width: f("width")?,
            height: f("height")?,
            radius: f("radius")?,
            target_h: f("target_h")?,
        },
        "rect" => {
            let width = f("width")?;
            let height = f("height")?;
            let (nx_v, nx_l) = sec.require("nx")?;
            let (ny_v, ny_l) = sec.require("ny")?;
            MeshSource::Rect {
                width,
                height,
                nx: parse_usize("nx", &nx_v, nx_l)?,
                ny: parse_usize("ny", &ny_v, ny_l)?,
            }
        }
        other => {
            return Err(ConfigError::BadValue {
                line: gen_l,
                key: "generator".into(),
                msg: format!("`{other}` is not `rect_hole`, `double_notched`, or `rect`"),
            })
        }
    };
    sec.finish()?;
    Ok(src)
}

fn parse_schedule(mut sec: SectionView) -> Result<FeSchedule, ConfigError> {
    let (ctl_v, ctl_l) = sec.require("control")?;
    let control = match ctl_v.as_str() {
        "force" => ControlKind::Force,
        "displacement" => ControlKind::Displacement,
        other => {
            return Err(ConfigError::BadValue {
                line: ctl_l,
                key: "control".into(),
                msg: format!("`{other}` is not `force` or `displacement`"),
            })
        }
    };
    let waveform = if let Some((v, l)) = sec.take("values") {
        MeshlessGuard::check_absent(&mut sec, l)?;
        Waveform::Explicit(parse_list("values", &v, l)?)
    } else {
        let (min_v, min_l) = sec.require("min")?;
        let (max_v, max_l) = sec.require("max")?;
        let (cy_v, cy_l) = sec.require("cycles")?;
        let (spc_v, spc_l) = sec.require("steps_per_cycle")?;
        Waveform::Triangular {
            min: parse_f64("min", &min_v, min_l)?,
            max: parse_f64("max", &max_v, max_l)?,
            cycles: parse_usize("cycles", &cy_v, cy_l)?,
            steps_per_cycle: parse_usize("steps_per_cycle", &spc_v, spc_l)?,
        }
    };
    let target_set = match sec.take("target_set") {
        Some((v, _)) => v,
        None => String::new(),
    };
    let direction = match sec.take("direction") {
        None => 1,
        Some((v, l)) => match v.as_str() {
            "x" => 0,
            "y" => 1,
            other => {
                return Err(ConfigError::BadValue {
                    line: l,
                    key: "direction".into(),
                    msg: format!("`{other}` is not `x` or `y`"),
                })
            }
        },
    };
    let fixed = match sec.take("fixed") {
        None => vec![],
        Some((v, l)) => {
            let mut out = vec![];
            for item in v.split(',') {
                let item = item.trim();
                let (set, comps) = item.split_once(':').ok_or_else(|| ConfigError::BadValue {
                    line: l,
                    key: "fixed".into(),
                    msg: format!("`{item}` is not of the form `set:xy`"),
                })?;
                let (mut fx, mut fy) = (false, false);
                for c in comps.chars() {
                    match c {
                        'x' => fx = true,
                        'y' => fy = true,
                        other => {
                            return Err(ConfigError::BadValue {
                                line: l,
                                key: "fixed".into(),
                                msg: format!("`{other}` is not `x` or `y`"),
                            })
                        }
                    }
                }
                out.push((set.to_string(), fx, fy));
            }
            out
        }
    };
    sec.finish()?;
    Ok(FeSchedule {
        control,
        waveform,
        target_set,
        direction,
        fixed,
    })
}

/// Rejects triangular-waveform keys when an explicit value list is given.
struct MeshlessGuard;
impl MeshlessGuard {
    fn check_absent(sec: &mut SectionView, list_line: usize) -> Result<(), ConfigError> {
        for key in ["min", "max", "cycles", "steps_per_cycle"] {
            if sec.take(key).is_some() {
                return Err(ConfigError::BadValue {
                    line: list_line,
                    key: key.into(),
                    msg: "conflicts with explicit `values` list".into(),
                });
            }
        }
        Ok(())
    }
}

fn parse_solver(mut sec: SectionView) -> Result<SolverConfig, ConfigError> {
    let mut cfg = SolverConfig::default();
    let mut f = |key: &str, slot: &mut f64| -> Result<(), ConfigError> {
        if let Some((v, l)) = sec.take(key) {
            *slot = parse_f64(key, &v, l)?;
        }
        Ok(())
    };
    f("staggered_tol", &mut cfg.staggered_tol)?;
    f("newton_tol", &mut cfg.newton_tol)?;
    f("active_set_tol", &mut cfg.active_set_tol)?;
    f("cg_tol", &mut cfg.cg_tol)?;
    let mut u = |key: &str, slot: &mut usize| -> Result<(), ConfigError> {
        if let Some((v, l)) = sec.take(key) {
            *slot = parse_usize(key, &v, l)?;
        }
        Ok(())
    };
    u("max_staggered", &mut cfg.max_staggered)?;
    u("max_newton", &mut cfg.max_newton)?;
    u("max_active_set", &mut cfg.max_active_set)?;
    u("max_surface_sweeps", &mut cfg.max_surface_sweeps)?;
    u("cg_max_iters", &mut cfg.cg_max_iters)?;
    if let Some((v, l)) = sec.take("linear_solver") {
        cfg.linear_solver = match v.as_str() {
            "cg" => LinearSolver::Cg,
            "direct" => LinearSolver::Direct,
            other => {
                return Err(ConfigError::BadValue {
                    line: l,
                    key: "linear_solver".into(),
                    msg: format!("`{other}` is not `cg` or `direct`"),
                })
            }
        };
    }
    sec.finish()?;
    Ok(cfg)
}

fn parse_output(mut sec: SectionView) -> Result<OutputConfig, ConfigError> {
    let mut out = OutputConfig::default();
    if let Some((v, _)) = sec.take("dir") {
        out.dir = v;
    }
    if let Some((v, l)) = sec.take("snapshot_stride") {
        out.snapshot_stride = parse_usize("snapshot_stride", &v, l)?;
    }
    sec.finish()?;
    Ok(out)
}

fn parse_point(mut sec: SectionView) -> Result<PointMode, ConfigError> {
    let (v, l) = sec.require("mode")?;
    let mode = match v.as_str() {
        "uniaxial" => PointMode::Uniaxial,
        "full" => PointMode::FullTensor,
        other => {
            return Err(ConfigError::BadValue {
                line: l,
                key: "mode".into(),
                msg: format!("`{other}` is not `uniaxial` or `full`"),
            })
        }
    };
    sec.finish()?;
    Ok(mode)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let sections = tokenize(text)?;
    let mut material = None;
    let mut mesh = None;
    let mut schedule = None;
    let mut solver = None;
    let mut output = None;
    let mut point = None;
    for raw in sections {
        let line = raw.line;
        let name = raw.name.clone();
        let view = SectionView::new(raw)?;
        let dup = |l| ConfigError::Syntax {
            line: l,
            msg: format!("duplicate section `{name}`"),
        };
        match name.as_str() {
            "material" => {
                if material.replace(parse_material(view)?).is_some() {
                    return Err(dup(line));
                }
            }
            "mesh" => {
                if mesh.replace(parse_mesh(view)?).is_some() {
                    return Err(dup(line));
                }
            }
            "schedule" => {
                if schedule.replace(parse_schedule(view)?).is_some() {
                    return Err(dup(line));
                }
            }
            "solver" => {
                if solver.replace(parse_solver(view)?).is_some() {
                    return Err(dup(line));
                }
            }
            "output" => {
                if output.replace(parse_output(view)?).is_some() {
                    return Err(dup(line));
                }
            }
            "point" => {
                if point.replace(parse_point(view)?).is_some() {
                    return Err(dup(line));
                }
            }
            _ => {
                return Err(ConfigError::UnknownSection {
                    line,
                    section: name,
                })
            }
        }
    }
    let material = material.ok_or(ConfigError::MissingSection("material".into()))?;
    let schedule = schedule.ok_or(ConfigError::MissingSection("schedule".into()))?;
    let point_mode = point.unwrap_or(match material.kinematics {
        Kinematics::Uniaxial { .. } => PointMode::Uniaxial,
        Kinematics::Full { .. } => PointMode::FullTensor,
    });
    Ok(RunConfig {
        material,
        mesh,
        schedule,
        solver: solver.unwrap_or_default(),
        output: output.unwrap_or_default(),
        point_mode,
    })
}

// ---------------------------------------------------------------------------
// Canonical serialization
// ---------------------------------------------------------------------------

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn fmt_list(vs: impl Iterator<Item = f64>) -> String {
    vs.map(fmt_f64).collect::<Vec<_>>().join(", ")
}

/// Serialize to the canonical form: explicit surface lists, every key
/// written out. `parse_config(serialize_config(c)) == c` for all valid `c`.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let m = &cfg.material;
    s.push_str("material {\n");
    match m.kinematics {
        Kinematics::Full { bulk, shear } => {
            let _ = writeln!(s, "    kinematics = full");
            let _ = writeln!(s, "    bulk = {}", fmt_f64(bulk));
            let _ = writeln!(s, "    shear = {}", fmt_f64(shear));
        }
        Kinematics::Uniaxial { youngs } => {
            let _ = writeln!(s, "    kinematics = uniaxial");
            let _ = writeln!(s, "    youngs = {}", fmt_f64(youngs));
        }
    }
    let _ = writeln!(
        s,
        "    split = {}",
        match m.split {
            Split::None => "none",
            Split::VolDev => "voldev",
        }
    );
    let _ = writeln!(s, "    n_y = {}", m.surfaces.len());
    let _ = writeln!(
        s,
        "    sigma_p = {}",
        fmt_list(m.surfaces.iter().map(|p| p.sigma_p))
    );
    let _ = writeln!(
        s,
        "    h_kin = {}",
        fmt_list(m.surfaces.iter().map(|p| p.h_kin))
    );
    let _ = writeln!(
        s,
        "    h_iso = {}",
        fmt_list(m.surfaces.iter().map(|p| p.h_iso))
    );
    let _ = writeln!(s, "    beta = {}", fmt_f64(m.beta));
    let _ = writeln!(s, "    eta_p = {}", fmt_f64(m.eta_p));
    let _ = writeln!(s, "    eta_d = {}", fmt_f64(m.eta_d));
    let _ = writeln!(s, "    w0 = {}", fmt_f64(m.w0));
    let _ = writeln!(
        s,
        "    damage_model = {}",
        match m.damage_model {
            DamageModel::At1 => "at1",
            DamageModel::At2 => "at2",
        }
    );
    let _ = writeln!(s, "    gamma0 = {}", fmt_f64(m.gamma0));
    let _ = writeln!(s, "    fatigue_k = {}", fmt_f64(m.fatigue_k));
    let _ = writeln!(s, "    ratchet_correction = {}", m.ratchet_correction);
    s.push_str("}\n");
    if let Some(mesh) = &cfg.mesh {
        s.push_str("mesh {\n");
        match mesh {
            MeshSource::Path(p) => {
                let _ = writeln!(s, "    path = {p}");
            }
            MeshSource::RectHole {
                width,
                height,
                radius,
                target_h,
            } => {
                let _ = writeln!(s, "    generator = rect_hole");
                let _ = writeln!(s, "    width = {}", fmt_f64(*width));
                let _ = writeln!(s, "    height = {}", fmt_f64(*height));
                let _ = writeln!(s, "    radius = {}", fmt_f64(*radius));
                let _ = writeln!(s, "    target_h = {}", fmt_f64(*target_h));
            }
            MeshSource::DoubleNotched {
                width,
                height,
                radius,
                target_h,
            } => {
                let _ = writeln!(s, "    generator = double_notched");
                let _ = writeln!(s, "    width = {}", fmt_f64(*width));
                let _ = writeln!(s, "    height = {}", fmt_f64(*height));
                let _ = writeln!(s, "    radius = {}", fmt_f64(*radius));
                let _ = writeln!(s, "    target_h = {}", fmt_f64(*target_h));
            }
            MeshSource::Rect {
                width,
                height,
                nx,
                ny,
            } => {
                let _ = writeln!(s, "    generator = rect");
                let _ = writeln!(s, "    width = {}", fmt_f64(*width));
                let _ = writeln!(s, "    height = {}", fmt_f64(*height));
                let _ = writeln!(s, "    nx = {nx}");
                let _ = writeln!(s, "    ny = {ny}");
            }
        }
        s.push_str("}\n");
    }
    let sch = &cfg.schedule;
    s.push_str("schedule {\n");
    let _ = writeln!(
        s,
        "    control = {}",
        match sch.control {
            ControlKind::Force => "force",
            ControlKind::Displacement => "displacement",
        }
    );
    match &sch.waveform {
        Waveform::Triangular {
            min,
            max,
            cycles,
            steps_per_cycle,
        } => {
            let _ = writeln!(s, "    min = {}", fmt_f64(*min));
            let _ = writeln!(s, "    max = {}", fmt_f64(*max));
            let _ = writeln!(s, "    cycles = {cycles}");
            let _ = writeln!(s, "    steps_per_cycle = {steps_per_cycle}");
        }
        Waveform::Explicit(values) => {
            let _ = writeln!(s, "    values = {}", fmt_list(values.iter().copied()));
        }
    }
    if !sch.target_set.is_empty() {
        let _ = writeln!(s, "    target_set = {}", sch.target_set);
    }
    let _ = writeln!(
        s,
        "    direction = {}",
        if sch.direction == 0 { "x" } else { "y" }
    );
    if !sch.fixed.is_empty() {
        let items: Vec<String> = sch
            .fixed
            .iter()
            .map(|(set, fx, fy)| {
                let mut c = String::new();
                if *fx {
                    c.push('x');
                }
                if *fy {
                    c.push('y');
                }
                format!("{set}:{c}")
            })
            .collect();
        let _ = writeln!(s, "    fixed = {}", items.join(", "));
    }
    s.push_str("}\n");
    let sv = &cfg.solver;
    s.push_str("solver {\n");
    let _ = writeln!(s, "    staggered_tol = {}", fmt_f64(sv.staggered_tol));
    let _ = writeln!(s, "    max_staggered = {}", sv.max_staggered);
    let _ = writeln!(s, "    newton_tol = {}", fmt_f64(sv.newton_tol));
    let _ = writeln!(s, "    max_newton = {}", sv.max_newton);
    let _ = writeln!(s, "    active_set_tol = {}", fmt_f64(sv.active_set_tol));
    let _ = writeln!(s, "    max_active_set = {}", sv.max_active_set);
    let _ = writeln!(s, "    max_surface_sweeps = {}", sv.max_surface_sweeps);
    let _ = writeln!(
        s,
        "    linear_solver = {}",
        match sv.linear_solver {
            LinearSolver::Cg => "cg",
            LinearSolver::Direct => "direct",
        }
    );
    let _ = writeln!(s, "    cg_tol = {}", fmt_f64(sv.cg_tol));
    let _ = writeln!(s, "    cg_max_iters = {}", sv.cg_max_iters);
    s.push_str("}\n");
    s.push_str("output {\n");
    let _ = writeln!(s, "    dir = {}", cfg.output.dir);
    let _ = writeln!(s, "    snapshot_stride = {}", cfg.output.snapshot_stride);
    s.push_str("}\n");
    s.push_str("point {\n");
    let _ = writeln!(
        s,
        "    mode = {}",
        match cfg.point_mode {
            PointMode::Uniaxial => "uniaxial",
            PointMode::FullTensor => "full",
        }
    );
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "
# demo configuration
material {
    kinematics = uniaxial
    youngs = 205e3           # MPa
    n_y = 20
    sigma_p_first = 0.6
    sigma_p_last = 1.4
    h_kin_first = 125
    h_kin_last = 125
    h_iso_first = -0.08
    h_iso_last = -0.0073
    beta = 0.2
    w0 = 30
    gamma0 = 1
}
schedule {
    control = displacement
    min = -1
    max = 2
    cycles = 20
    steps_per_cycle = 40
}
";

    #[test]
    fn interpolation_matches_linear_rule_with_exact_endpoints() {
        let cfg = parse_config(BASE).unwrap();
        let s = &cfg.material.surfaces;
        assert_eq!(s.len(), 20);
        assert_eq!(s[0].sigma_p, 0.6);
        assert_eq!(s[19].sigma_p, 1.4);
        // Surface 10 (1-based) of the 0.6..1.4 ramp.
        let expect = 0.6 + 9.0 * (1.4 - 0.6) / 19.0;
        assert!((s[9].sigma_p - expect).abs() < 1e-15);
        assert_eq!(s[0].h_iso, -0.08);
        assert_eq!(s[19].h_iso, -0.0073);
    }

    #[test]
    fn single_surface_ignores_last_values() {
        let text = BASE.replace("n_y = 20", "n_y = 1");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.material.surfaces.len(), 1);
        assert_eq!(cfg.material.surfaces[0].sigma_p, 0.6);
    }

    #[test]
    fn gamma0_inf_disables_fatigue() {
        let text = BASE.replace("gamma0 = 1", "gamma0 = inf");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.material.gamma0, f64::INFINITY);
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let text = BASE.replace("beta = 0.2", "betta = 0.2");
        match parse_config(&text) {
            Err(ConfigError::UnknownKey { key, .. }) => assert_eq!(key, "betta"),
            other => panic!("expected unknown-key error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_section_is_rejected() {
        let text = format!("{BASE}\nextras {{\n    x = 1\n}}\n");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::UnknownSection { .. })
        ));
    }

    #[test]
    fn missing_mandatory_key_is_reported() {
        let text = BASE.replace("    w0 = 30\n", "");
        match parse_config(&text) {
            Err(ConfigError::MissingKey { key, .. }) => assert_eq!(key, "w0"),
            other => panic!("expected missing-key error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_carries_line_number() {
        let text = "material {\n    what is this\n}\n";
        match parse_config(text) {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn full_config_round_trips_through_canonical_form() {
        let text = format!(
            "{BASE}
mesh {{
    generator = rect_hole
    width = 10
    height = 10
    radius = 1
    target_h = 0.4
}}
solver {{
    staggered_tol = 1e-6
    linear_solver = direct
}}
output {{
    dir = results
    snapshot_stride = 5
}}
"
        );
        let cfg = parse_config(&text).unwrap();
        let canon = serialize_config(&cfg);
        let cfg2 = parse_config(&canon).unwrap();
        assert_eq!(cfg, cfg2);
        // The canonical form is a fixed point.
        assert_eq!(canon, serialize_config(&cfg2));
    }

    #[test]
    fn explicit_surface_list_and_values_waveform() {
        let text = "
material {
    kinematics = full
    bulk = 100
    shear = 60
    n_y = 3
    sigma_p = 0.5, 0.7, 0.9
    h_kin = 10, 10, 10
    h_iso = 0, 0, 0
    w0 = 1
}
schedule {
    control = force
    values = 0.5, 1.0, 0.25
    target_set = top
    direction = x
    fixed = bottom:xy, left:x
}
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.material.surfaces[1].sigma_p, 0.7);
        assert_eq!(
            cfg.schedule.waveform,
            Waveform::Explicit(vec![0.5, 1.0, 0.25])
        );
        assert_eq!(cfg.schedule.direction, 0);
        assert_eq!(
            cfg.schedule.fixed,
            vec![("bottom".into(), true, true), ("left".into(), true, false)]
        );
        let round = parse_config(&serialize_config(&cfg)).unwrap();
        assert_eq!(cfg, round);
    }

    #[test]
    fn surface_list_length_mismatch_is_rejected() {
        let text = BASE.replace(
            "    sigma_p_first = 0.6\n    sigma_p_last = 1.4\n",
            "    sigma_p = 0.6, 1.4\n",
        );
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::BadValue { .. })
        ));
    }

    mod round_trip {
        use super::*;
        use crate::solver::{LinearSolver, SolverConfig};
        use proptest::prelude::*;

        fn arb_waveform() -> impl Strategy<Value = Waveform> {
            prop_oneof![
                (-10.0f64..0.0, 0.01f64..10.0, 1usize..20, 2usize..8,).prop_map(
                    |(min, max, cycles, q)| Waveform::Triangular {
                        min,
                        max,
                        cycles,
                        steps_per_cycle: 4 * q,
                    }
                ),
                prop::collection::vec(-5.0f64..5.0, 1..12).prop_map(Waveform::Explicit),
            ]
        }

        fn arb_mesh() -> impl Strategy<Value = Option<MeshSource>> {
            prop_oneof![
                Just(None),
                Just(Some(MeshSource::Path("meshes/plate.txt".into()))),
                (1.0f64..20.0, 1.0f64..20.0, 0.1f64..0.9, 0.05f64..1.0).prop_map(|(w, h, r, t)| {
                    Some(MeshSource::DoubleNotched {
                        width: w,
                        height: h,
                        radius: w * r.min(0.4),
                        target_h: t,
                    })
                }),
                (1.0f64..20.0, 1.0f64..20.0, 1usize..30, 1usize..30).prop_map(|(w, h, nx, ny)| {
                    Some(MeshSource::Rect {
                        width: w,
                        height: h,
                        nx,
                        ny,
                    })
                }),
            ]
        }

        fn arb_material() -> impl Strategy<Value = MaterialSpec> {
            (
                prop_oneof![
                    (1.0f64..1e6).prop_map(|e| Kinematics::Uniaxial { youngs: e }),
                    (1.0f64..1e6, 1.0f64..1e6)
                        .prop_map(|(k, g)| Kinematics::Full { bulk: k, shear: g }),
                ],
                any::<bool>(),
                prop::collection::vec((1e-3f64..10.0, 0.0f64..1e4, -0.5f64..10.0), 1..6),
                (
                    0.0f64..1.0,
                    0.0f64..50.0,
                    0.0f64..50.0,
                    1e-3f64..1e3,
                    any::<bool>(),
                ),
                (
                    prop_oneof![Just(f64::INFINITY), (0.1f64..100.0).boxed()],
                    0.1f64..2.0,
                    any::<bool>(),
                ),
            )
                .prop_map(
                    |(kin, voldev, raw, (beta, eta_p, eta_d, w0, at1), (gamma0, fk, rc))| {
                        // yield radii must be non-decreasing across surfaces
                        let mut acc = 0.0;
                        let surfaces = raw
                            .into_iter()
                            .map(|(dsp, hk, hi)| {
                                acc += dsp;
                                SurfaceParams {
                                    sigma_p: acc,
                                    h_kin: hk,
                                    h_iso: hi,
                                }
                            })
                            .collect();
                        MaterialSpec {
                            kinematics: kin,
                            split: if voldev { Split::VolDev } else { Split::None },
                            surfaces,
                            beta,
                            eta_p,
                            eta_d,
                            w0,
                            damage_model: if at1 {
                                DamageModel::At1
                            } else {
                                DamageModel::At2
                            },
                            gamma0,
                            fatigue_k: fk,
                            ratchet_correction: rc,
                        }
                    },
                )
        }

        proptest! {
            /// parse(serialize(config)) = config for all valid configs.
            #[test]
            fn any_valid_config_round_trips(
                material in arb_material(),
                mesh in arb_mesh(),
                waveform in arb_waveform(),
                force in any::<bool>(),
                direction in 0usize..2,
                fix_left in any::<bool>(),
                stag in 1e-8f64..1e-4,
                direct in any::<bool>(),
                stride in 0usize..7,
                uniaxial_point in any::<bool>(),
            ) {
                let mut fixed = vec![("bottom".to_string(), true, true)];
                if fix_left {
                    fixed.push(("left".to_string(), true, false));
                }
                let cfg = RunConfig {
                    material,
                    mesh,
                    schedule: crate::solver::FeSchedule {
                        control: if force {
                            ControlKind::Force
                        } else {
                            ControlKind::Displacement
                        },
                        waveform,
                        target_set: "top".into(),
                        direction,
                        fixed,
                    },
                    solver: SolverConfig {
                        staggered_tol: stag,
                        linear_solver: if direct {
                            LinearSolver::Direct
                        } else {
                            LinearSolver::Cg
                        },
                        ..SolverConfig::default()
                    },
                    output: OutputConfig {
                        dir: "results".into(),
                        snapshot_stride: stride,
                    },
                    point_mode: if uniaxial_point {
                        PointMode::Uniaxial
                    } else {
                        PointMode::FullTensor
                    },
                };
                let round = parse_config(&serialize_config(&cfg)).unwrap();
                prop_assert_eq!(&cfg, &round);
                // and the canonical form is a fixed point
                prop_assert_eq!(serialize_config(&cfg), serialize_config(&round));
            }
        }
    }
}
