//! Mesh construction, runs, studies and their CSV artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use trefftz_dg::geometry::{apply_periodic_pairing, build_structured_mesh, build_time_partition, Axis, BoundarySpec, GeometryError, MaterialParams, Mesh, Side};
use trefftz_dg::slab_solver::{run, FieldState, RunOptions, RunResult, SolveError};
use trefftz_dg::verification::{line_spectrum, normalize_spectrum, observed_order, space_time_l2_error, AnalyticSolution, L2Error, VerificationError};
use trefftz_dg::Variant;

use crate::config::{BoundaryKind, ConfigError, InitialKind, RunConfig, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("mesh: {0}")]
    Mesh(#[from] GeometryError),
    #[error("solver: {0}")]
    Solve(#[from] SolveError),
    #[error("verification: {0}")]
    Verification(#[from] VerificationError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 1 for configuration problems, 2 for solver and output failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Mesh(_) => 1,
            _ => 2,
        }
    }
}

/// Builds the mesh of a configuration: materials, outer boundaries, periodicity, walls.
pub fn build_mesh(c: &RunConfig) -> Result<Mesh<f64>, CliError> {
    let mut mesh = build_structured_mesh(c.nx, c.ny, c.domain, |x, y| {
        c.materials
            .iter()
            .rev()
            .find(|m| m.rect.contains(x, y))
            .map_or(MaterialParams::vacuum(), |m| MaterialParams::new(m.eps, m.mu))
    })?;
    if c.boundary[0] == BoundaryKind::Periodic {
        mesh = apply_periodic_pairing(&mesh, Axis::X)?;
    }
    if c.boundary[2] == BoundaryKind::Periodic {
        mesh = apply_periodic_pairing(&mesh, Axis::Y)?;
    }
    for (side, kind) in [Side::XLo, Side::XHi, Side::YLo, Side::YHi].into_iter().zip(c.boundary) {
        let spec = match kind {
            BoundaryKind::Pec => BoundarySpec::Pec,
            BoundaryKind::Absorbing => BoundarySpec::Absorbing,
            BoundaryKind::Symmetry => BoundarySpec::Symmetry,
            BoundaryKind::Periodic => continue,
        };
        mesh.set_boundary(side, spec)?;
    }
    for w in &c.walls {
        mesh.insert_pec_wall(w.a, w.b)?;
    }
    Ok(mesh)
}

/// Closed-form reference of a configuration, if one is known.
pub fn exact_solution(c: &RunConfig) -> Option<AnalyticSolution<f64>> {
    match c.scenario {
        Scenario::Cavity | Scenario::PSweep => Some(AnalyticSolution::cavity(c.mode.0, c.mode.1)),
        Scenario::PlaneWave if c.boundary[0] == BoundaryKind::Periodic && (c.domain.width() - 20.0).abs() < 1e-12 => {
            Some(AnalyticSolution::pulse(c.pulse.0, c.pulse.1))
        }
        _ => None,
    }
}

fn initial_field(c: &RunConfig) -> AnalyticSolution<f64> {
    match c.initial {
        InitialKind::Cavity => AnalyticSolution::cavity(c.mode.0, c.mode.1),
        InitialKind::Pulse => AnalyticSolution::pulse(c.pulse.0, c.pulse.1),
        InitialKind::Zero => AnalyticSolution::custom(|_, _, _| [0.0; 6]),
    }
}

/// A finished run with its mesh and reference solution.
pub struct Simulation {
    pub mesh: Arc<Mesh<f64>>,
    pub result: RunResult<f64>,
    pub exact: Option<AnalyticSolution<f64>>,
}

impl Simulation {
    pub fn error(&self) -> Option<L2Error<f64>> {
        self.exact.as_ref().map(|e| space_time_l2_error(&self.result.states, e))
    }
}

pub fn simulate(c: &RunConfig) -> Result<Simulation, CliError> {
    let mesh = Arc::new(build_mesh(c)?);
    let partition = build_time_partition(c.t_end, c.n_steps)?;
    let init = initial_field(c);
    let opts = RunOptions { degree: c.p, variant: Variant::DivFreeTM2D, orthonormalize: c.orthonormalize };
    let result = run(mesh.clone(), &partition, opts, &init.initial())?;
    Ok(Simulation { mesh, result, exact: exact_solution(c) })
}

/// The state whose closed slab contains `t`, preferring the slab that ends at `t`.
pub fn state_at(states: &[FieldState<f64>], t: f64) -> Option<&FieldState<f64>> {
    let tol = 1e-12 * states.last().map_or(1.0, |s| s.t_hi().abs().max(1.0));
    states.iter().find(|s| t >= s.t_lo() - tol && t <= s.t_hi() + tol)
}

/// Exact basis evaluations of `E3, H1, H2` on `(p+1) x (p+1)` uniform points per element.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub t: f64,
    pub points: Vec<[f64; 5]>,
}

pub fn snapshot(state: &FieldState<f64>, t: f64) -> FieldSnapshot {
    let p = state.bases().degree;
    let ticks: Vec<f64> = if p == 0 { vec![0.0] } else { (0..=p).map(|k| -1.0 + 2.0 * k as f64 / p as f64).collect() };
    let t = t.clamp(state.t_lo(), state.t_hi());
    let mut points = Vec::with_capacity(state.mesh().n_elements() * ticks.len() * ticks.len());
    for e in 0..state.mesh().n_elements() {
        let el = state.mesh().element(e);
        for &yr in &ticks {
            for &xr in &ticks {
                let [x, y] = el.to_physical(xr, yr);
                let u = state.eval_in_element(e, x, y, t);
                points.push([x, y, u[2], u[3], u[4]]);
            }
        }
    }
    FieldSnapshot { t, points }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn write_snapshot(path: &Path, s: &FieldSnapshot) -> Result<(), CliError> {
    let mut w = create(path)?;
    let res: std::io::Result<()> = (|| {
        writeln!(w, "t,x,y,E3,H1,H2")?;
        for q in &s.points {
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", s.t, q[0], q[1], q[2], q[3], q[4])?;
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

/// One line of an error/convergence CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub study: String,
    pub parameter: f64,
    pub error: f64,
    pub order: Option<f64>,
}

pub fn write_errors(path: &Path, rows: &[ErrorRow]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let res: std::io::Result<()> = (|| {
        writeln!(w, "study,parameter,error,order")?;
        for r in rows {
            let order = r.order.map_or(String::new(), |o| format!("{o:.16e}"));
            writeln!(w, "{},{:.16e},{:.16e},{}", r.study, r.parameter, r.error, order)?;
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

/// Spectra at the configured times, normalized to the `t = 0` peak.
pub fn spectra(c: &RunConfig, states: &[FieldState<f64>]) -> Result<Vec<(f64, Vec<f64>)>, CliError> {
    if c.output.spectrum_times.is_empty() {
        return Ok(Vec::new());
    }
    let raw = |t: f64| -> Result<Vec<f64>, CliError> {
        let s = state_at(states, t).ok_or(VerificationError::TimeNotCovered(t))?;
        Ok(line_spectrum(s, c.output.spectrum_y, t, c.output.spectrum_samples)?)
    };
    let reference = raw(0.0)?;
    c.output.spectrum_times.iter().map(|&t| Ok((t, normalize_spectrum(&raw(t)?, &reference)))).collect()
}

pub fn write_spectra(path: &Path, spectra: &[(f64, Vec<f64>)]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let res: std::io::Result<()> = (|| {
        writeln!(w, "t,frequency_index,magnitude")?;
        for (t, s) in spectra {
            for (j, m) in s.iter().enumerate() {
                writeln!(w, "{t:.16e},{j},{m:.16e}")?;
            }
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

fn write_ledger(path: &Path, result: &RunResult<f64>) -> Result<(), CliError> {
    let mut w = create(path)?;
    result.ledger.write_csv(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Runs the configured scenario and writes its artifacts into `out`; returns the written files.
pub fn run_scenario(c: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let mut files = Vec::new();
    if c.scenario == Scenario::PSweep {
        let mut rows = Vec::new();
        for p in 1..=c.p_max {
            let sim = simulate(&RunConfig { p, ..c.clone() })?;
            let path = out.join(format!("ledger_p{p}.csv"));
            write_ledger(&path, &sim.result)?;
            files.push(path);
            let err = sim.error().expect("p_sweep has a reference solution");
            rows.push(ErrorRow { study: "p".into(), parameter: p as f64, error: err.relative, order: None });
        }
        let path = out.join("errors.csv");
        write_errors(&path, &rows)?;
        files.push(path);
        return Ok(files);
    }
    let sim = simulate(c)?;
    let path = out.join("ledger.csv");
    write_ledger(&path, &sim.result)?;
    files.push(path);
    if let Some(err) = sim.error() {
        let path = out.join("errors.csv");
        write_errors(&path, &[ErrorRow { study: c.scenario.name().into(), parameter: c.p as f64, error: err.relative, order: None }])?;
        files.push(path);
    }
    if !c.output.snapshot_times.is_empty() {
        let dir = out.join("snapshots");
        ensure_dir(&dir)?;
        for (k, &t) in c.output.snapshot_times.iter().enumerate() {
            let s = state_at(&sim.result.states, t).ok_or(VerificationError::TimeNotCovered(t))?;
            let path = dir.join(format!("snapshot_{k:05}.csv"));
            write_snapshot(&path, &snapshot(s, t))?;
            files.push(path);
        }
    }
    let spec = spectra(c, &sim.result.states)?;
    if !spec.is_empty() {
        let path = out.join("spectrum.csv");
        write_spectra(&path, &spec)?;
        files.push(path);
    }
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyAxis {
    H,
    Dt,
    P,
}

impl StudyAxis {
    pub fn name(self) -> &'static str {
        match self {
            StudyAxis::H => "h",
            StudyAxis::Dt => "dt",
            StudyAxis::P => "p",
        }
    }
}

/// Errors along one refinement axis with observed orders for `h` and `dt`.
pub fn convergence_study(c: &RunConfig, axis: StudyAxis) -> Result<Vec<ErrorRow>, CliError> {
    if exact_solution(c).is_none() {
        return Err(ConfigError::Rejected(format!("scenario {} has no reference solution for a convergence study", c.scenario.name())).into());
    }
    let values: Vec<f64> = c.study_values.clone().unwrap_or_else(|| match axis {
        StudyAxis::H => vec![10.0, 20.0, 40.0],
        StudyAxis::Dt => vec![50.0, 100.0, 200.0],
        StudyAxis::P => (1..=c.p_max).map(|p| p as f64).collect(),
    });
    if values.is_empty() || values.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
        return Err(ConfigError::Rejected("study values must be non-negative integers".into()).into());
    }
    let mut params = Vec::new();
    let mut errors = Vec::new();
    for v in values {
        let n = v as usize;
        let cfg = match axis {
            StudyAxis::H => RunConfig { nx: n, ny: ((n * c.ny) as f64 / c.nx as f64).round().max(1.0) as usize, ..c.clone() },
            StudyAxis::Dt => RunConfig { n_steps: n, ..c.clone() },
            StudyAxis::P => RunConfig { p: n, ..c.clone() },
        };
        if cfg.nx == 0 || cfg.n_steps == 0 {
            return Err(ConfigError::Rejected("study values must be positive".into()).into());
        }
        let sim = simulate(&cfg)?;
        params.push(match axis {
            StudyAxis::H => cfg.domain.width() / cfg.nx as f64,
            StudyAxis::Dt => cfg.t_end / cfg.n_steps as f64,
            StudyAxis::P => n as f64,
        });
        errors.push(sim.error().expect("checked above").relative);
    }
    let orders = if axis != StudyAxis::P && errors.len() >= 2 { observed_order(&errors, &params).ok() } else { None };
    Ok(params
        .iter()
        .zip(&errors)
        .enumerate()
        .map(|(i, (p, e))| ErrorRow {
            study: axis.name().into(),
            parameter: *p,
            error: *e,
            order: match (&orders, i) {
                (Some(o), i) if i > 0 => Some(o[i - 1]),
                _ => None,
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn mesh_from_double_slit_defaults() {
        let c = parse_config("scenario = \"double_slit\"\n").unwrap();
        let m = build_mesh(&c).unwrap();
        let dielectric = m.elements().iter().filter(|e| e.material.eps == 4.0).count();
        // 2 columns x (2 + 1 + 2) rows
        assert_eq!(dielectric, 10);
    }

    #[test]
    fn single_slit_wall_faces() {
        let c = parse_config("scenario = \"single_slit\"\n").unwrap();
        let plain = build_structured_mesh(c.nx, c.ny, c.domain, |_, _| MaterialParams::vacuum()).unwrap();
        let m = build_mesh(&c).unwrap();
        // four wall edges, each split into two boundary faces
        assert_eq!(m.faces().len(), plain.faces().len() + 4);
    }

    #[test]
    fn snapshot_layout() {
        let c = parse_config("scenario = \"cavity\"\np = 1\nnx = 2\nny = 2\nn_steps = 2\nT = 0.2\n").unwrap();
        let sim = simulate(&c).unwrap();
        let s = snapshot(state_at(&sim.result.states, 0.1).unwrap(), 0.1);
        assert_eq!(s.points.len(), 4 * 4);
        assert!(state_at(&sim.result.states, 0.1).unwrap().slab() == 1);
        assert!(state_at(&sim.result.states, 0.3).is_none());
    }
}
