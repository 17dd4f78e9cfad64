//! Command-line front end: material-point runs, FE runs, energy-balance
//! verification of a trace, and standalone mesh generation.
//!
//! Exit codes: 0 success, 2 input error (config/mesh/CSV), 3 solver failure.

use crate::config::{parse_config, MeshSource, RunConfig};
use crate::fem::FeModel;
use crate::matpoint::{run_point, ControlMode};
use crate::mesh::{generate_double_notched, generate_rect, generate_rect_hole, Mesh};
use crate::solver::FeRunner;
use crate::vtk::write_vtk;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Parser)]
#[command(
    name = "fatpf",
    version,
    about = "Cyclic plasticity / phase-field fatigue solver"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress non-error console output.
    #[arg(long, short = 'q')]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Material-point run; writes point_trace.csv.
    Matpoint {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Finite-element run; writes trace.csv and VTK snapshots.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Snapshot stride in steps (overrides output.snapshot_stride).
        #[arg(long)]
        snapshots: Option<usize>,
        /// Worker threads; values above 1 are accepted but execution stays
        /// serial (the deterministic reference mode).
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Recheck the discrete power balance of an existing trace.csv.
    CheckEnergy {
        /// Path to trace.csv.
        trace: PathBuf,
        #[arg(long, short = 'q')]
        quiet: bool,
    },
    /// Generate the configured mesh and write it as mesh.txt.
    GenMesh {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn fail_input(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_INPUT
}

fn fail_solver(msg: impl std::fmt::Display) -> i32 {
    eprintln!("solver failure: {msg}");
    EXIT_SOLVER
}

fn load_config(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config `{}`: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn out_dir(cfg: &RunConfig, over: &Option<PathBuf>) -> PathBuf {
    over.clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

fn build_mesh(cfg: &RunConfig, config_path: &Path) -> Result<Mesh, String> {
    let src = cfg
        .mesh
        .as_ref()
        .ok_or("config has no `mesh` section".to_string())?;
    let mesh = match src {
        MeshSource::Path(p) => {
            // Relative mesh paths resolve against the config file.
            let path = config_path.parent().unwrap_or(Path::new(".")).join(p);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| format!("cannot read mesh `{}`: {e}", path.display()))?;
            Mesh::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        MeshSource::RectHole {
            width,
            height,
            radius,
            target_h,
        } => generate_rect_hole(*width, *height, *radius, *target_h),
        MeshSource::DoubleNotched {
            width,
            height,
            radius,
            target_h,
        } => generate_double_notched(*width, *height, *radius, *target_h),
        MeshSource::Rect {
            width,
            height,
            nx,
            ny,
        } => generate_rect(*width, *height, *nx, *ny),
    };
    mesh.validate().map_err(|e| format!("mesh: {e}"))?;
    Ok(mesh)
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create `{}`: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| format!("cannot write `{}`: {e}", path.display()))
}

fn cmd_matpoint(common: &CommonArgs) -> i32 {
    let cfg = match load_config(&common.config) {
        Ok(c) => c,
        Err(e) => return fail_input(e),
    };
    let control = ControlMode {
        kind: cfg.schedule.control,
        waveform: cfg.schedule.waveform.clone(),
    };
    let trace = match run_point(&control, &cfg.material) {
        Ok(t) => t,
        Err(e) => return fail_solver(e),
    };
    let dir = out_dir(&cfg, &common.out);
    if let Err(e) = write_file(&dir, "point_trace.csv", &trace.to_csv()) {
        return fail_input(e);
    }
    if !common.quiet {
        println!(
            "matpoint: {} steps, final alpha {:.6}, wrote {}",
            trace.rows.len() - 1,
            trace.final_state.alpha,
            dir.join("point_trace.csv").display()
        );
    }
    EXIT_OK
}

fn cmd_run(common: &CommonArgs, snapshots: Option<usize>, threads: usize) -> i32 {
    let cfg = match load_config(&common.config) {
        Ok(c) => c,
        Err(e) => return fail_input(e),
    };
    if threads > 1 && !common.quiet {
        eprintln!("note: --threads {threads} requested; running serial (deterministic mode)");
    }
    let mesh = match build_mesh(&cfg, &common.config) {
        Ok(m) => m,
        Err(e) => return fail_input(e),
    };
    let model = match FeModel::new(mesh, cfg.material.clone()) {
        Ok(m) => m,
        Err(e) => return fail_input(e),
    };
    let mut runner = match FeRunner::new(model, cfg.schedule.clone(), cfg.solver.clone()) {
        Ok(r) => r,
        Err(e) => return fail_input(e),
    };
    let dir = out_dir(&cfg, &common.out);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return fail_input(format!("cannot create `{}`: {e}", dir.display()));
    }
    let stride = snapshots.unwrap_or(cfg.output.snapshot_stride);
    let mut snap_err: Option<String> = None;
    let result = runner.run(|step, r| {
        if stride > 0 && step % stride == 0 && snap_err.is_none() {
            let text = write_vtk(&r.model.mesh, &r.snapshot_fields());
            let name = format!("snap_{step:06}.vtk");
            if let Err(e) = std::fs::write(dir.join(&name), text) {
                snap_err = Some(format!("cannot write `{name}`: {e}"));
            }
        }
    });
    if let Some(e) = snap_err {
        return fail_input(e);
    }
    // The trace up to the failure point is still written for diagnosis.
    let trace_written = write_file(&dir, "trace.csv", &runner.trace.to_csv());
    if let Err(e) = result {
        return fail_solver(e);
    }
    if let Err(e) = trace_written {
        return fail_input(e);
    }
    if !common.quiet {
        let last = runner.trace.rows.last();
        println!(
            "run: {} steps, alpha_max {:.6}, wrote {}",
            runner.trace.rows.len().saturating_sub(1),
            last.map(|r| r.alpha_max).unwrap_or(0.0),
            dir.join("trace.csv").display()
        );
    }
    EXIT_OK
}

/// Recompute per-step `dE + dD - dW` from the cumulative trace columns and
/// compare against the reporting threshold.
fn cmd_check_energy(trace_path: &Path, quiet: bool) -> i32 {
    let text = match std::fs::read_to_string(trace_path) {
        Ok(t) => t,
        Err(e) => return fail_input(format!("cannot read `{}`: {e}", trace_path.display())),
    };
    let mut lines = text.lines();
    let header: Vec<&str> = match lines.next() {
        Some(h) => h.split(',').collect(),
        None => return fail_input("empty trace"),
    };
    let col = |name: &str| header.iter().position(|&c| c == name);
    let (ie, id, iw) = match (col("E"), col("D_cum"), col("W_ext")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return fail_input("trace is missing E/D_cum/W_ext columns"),
    };
    let mut rows: Vec<(f64, f64, f64)> = vec![];
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64, String> {
            f.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or(format!("row {}: malformed numeric field", k + 1))
        };
        match (parse(ie), parse(id), parse(iw)) {
            (Ok(e), Ok(d), Ok(w)) => rows.push((e, d, w)),
            (Err(m), _, _) | (_, Err(m), _) | (_, _, Err(m)) => return fail_input(m),
        }
    }
    if rows.is_empty() {
        return fail_input("empty trace");
    }
    let scale = rows
        .iter()
        .map(|(e, d, w)| e.abs().max(d.abs()).max(w.abs()))
        .fold(1e-12, f64::max)
        .max(1.0);
    let mut worst = 0.0f64;
    let mut worst_step = 0usize;
    for i in 1..rows.len() {
        let de = rows[i].0 - rows[i - 1].0;
        let dd = rows[i].1 - rows[i - 1].1;
        let dw = rows[i].2 - rows[i - 1].2;
        let res = (de + dd - dw).abs();
        if res > worst {
            worst = res;
            worst_step = i;
        }
    }
    let pass = worst <= 1e-5 * scale;
    if !quiet || !pass {
        println!(
            "check-energy: max |dE + dD - dW| = {:.3e} at step {} (threshold {:.3e}): {}",
            worst,
            worst_step,
            1e-5 * scale,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if pass {
        EXIT_OK
    } else {
        EXIT_SOLVER
    }
}

fn cmd_gen_mesh(common: &CommonArgs) -> i32 {
    let cfg = match load_config(&common.config) {
        Ok(c) => c,
        Err(e) => return fail_input(e),
    };
    let mesh = match build_mesh(&cfg, &common.config) {
        Ok(m) => m,
        Err(e) => return fail_input(e),
    };
    let dir = out_dir(&cfg, &common.out);
    if let Err(e) = write_file(&dir, "mesh.txt", &mesh.to_text()) {
        return fail_input(e);
    }
    if !common.quiet {
        println!(
            "gen-mesh: {} nodes, {} elements, wrote {}",
            mesh.n_nodes(),
            mesh.n_elements(),
            dir.join("mesh.txt").display()
        );
    }
    EXIT_OK
}

/// Entry point used by `main`; parses argv and dispatches. Returns the
/// process exit code.
pub fn run(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are successes; bad flags are input errors.
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match &cli.cmd {
        Cmd::Matpoint { common } => cmd_matpoint(common),
        Cmd::Run {
            common,
            snapshots,
            threads,
        } => cmd_run(common, *snapshots, *threads),
        Cmd::CheckEnergy { trace, quiet } => cmd_check_energy(trace, *quiet),
        Cmd::GenMesh { common } => cmd_gen_mesh(common),
    }
}
