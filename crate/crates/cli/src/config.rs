//! TOML run configuration: parsing, defaults per scenario and validation.

use std::f64::consts::PI;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;
use trefftz_dg::Rect;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("{0}")]
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Cavity,
    PSweep,
    PlaneWave,
    SingleSlit,
    DoubleSlit,
    Custom,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Cavity => "cavity",
            Scenario::PSweep => "p_sweep",
            Scenario::PlaneWave => "plane_wave",
            Scenario::SingleSlit => "single_slit",
            Scenario::DoubleSlit => "double_slit",
            Scenario::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Pec,
    Absorbing,
    Periodic,
    Symmetry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Cavity,
    Pulse,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialRegion {
    pub rect: Rect<f64>,
    pub eps: f64,
    pub mu: f64,
}

/// Interior PEC segment from `a` to `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub snapshot_times: Vec<f64>,
    pub spectrum_times: Vec<f64>,
    pub spectrum_samples: usize,
    pub spectrum_y: f64,
}

/// Validated configuration with scenario defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub p: usize,
    pub p_max: usize,
    pub nx: usize,
    pub ny: usize,
    pub t_end: f64,
    pub n_steps: usize,
    pub domain: Rect<f64>,
    /// Sides in the order x_lo, x_hi, y_lo, y_hi.
    pub boundary: [BoundaryKind; 4],
    pub materials: Vec<MaterialRegion>,
    pub walls: Vec<Segment>,
    pub pulse: (f64, f64),
    pub mode: (u32, u32),
    pub initial: InitialKind,
    pub orthonormalize: bool,
    pub study_values: Option<Vec<f64>>,
    pub output: OutputConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Scenario,
    p: Option<usize>,
    p_max: Option<usize>,
    nx: Option<usize>,
    ny: Option<usize>,
    #[serde(rename = "T", alias = "t_end")]
    t_end: Option<f64>,
    n_steps: Option<usize>,
    initial: Option<InitialKind>,
    orthonormalize: Option<bool>,
    domain: Option<Spanned<RawRect>>,
    boundary: Option<RawBoundary>,
    material: Option<Vec<Spanned<RawRegion>>>,
    wall: Option<Vec<Spanned<RawSegment>>>,
    pulse: Option<RawPulse>,
    cavity: Option<RawMode>,
    study: Option<RawStudy>,
    output: Option<RawOutput>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRect {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    x_lo: Option<BoundaryKind>,
    x_hi: Option<BoundaryKind>,
    y_lo: Option<BoundaryKind>,
    y_hi: Option<BoundaryKind>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
    eps: Option<f64>,
    mu: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    from: [f64; 2],
    to: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPulse {
    x0: Option<f64>,
    x1: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMode {
    m: Option<u32>,
    n: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStudy {
    values: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    snapshot_times: Option<Vec<f64>>,
    spectrum_times: Option<Vec<f64>>,
    spectrum_samples: Option<usize>,
    spectrum_y: Option<f64>,
}

fn line_of(src: &str, span: Range<usize>) -> usize {
    src[..span.start.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn rect(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Rect<f64> {
    Rect::new(x_lo, x_hi, y_lo, y_hi)
}

/// Defaults of one scenario before user overrides.
pub fn defaults(scenario: Scenario) -> RunConfig {
    use BoundaryKind::*;
    let base = RunConfig {
        scenario,
        p: 2,
        p_max: 5,
        nx: 10,
        ny: 10,
        t_end: 5.0 * 2f64.sqrt(),
        n_steps: 50,
        domain: rect(0.0, PI, 0.0, PI),
        boundary: [Pec; 4],
        materials: Vec::new(),
        walls: Vec::new(),
        pulse: (-2.5, 2.5),
        mode: (1, 1),
        initial: InitialKind::Cavity,
        orthonormalize: true,
        study_values: None,
        output: OutputConfig {
            dir: PathBuf::from("output"),
            snapshot_times: Vec::new(),
            spectrum_times: Vec::new(),
            spectrum_samples: 64,
            spectrum_y: 1.0,
        },
    };
    let slit = |height: f64| RunConfig {
        p: 2,
        nx: 20,
        ny: height as usize,
        t_end: 15.0,
        n_steps: 15,
        domain: rect(-10.0, 10.0, 0.0, height),
        boundary: [Absorbing, Absorbing, Symmetry, Symmetry],
        pulse: (-7.5, -2.5),
        initial: InitialKind::Pulse,
        ..base.clone()
    };
    match scenario {
        Scenario::Cavity | Scenario::PSweep => base,
        Scenario::PlaneWave => RunConfig {
            p: 3,
            nx: 20,
            ny: 3,
            t_end: 20.0,
            n_steps: 20,
            domain: rect(-10.0, 10.0, 0.0, 3.0),
            boundary: [Periodic, Periodic, Symmetry, Symmetry],
            initial: InitialKind::Pulse,
            ..base
        },
        Scenario::SingleSlit => RunConfig { walls: vec![Segment { a: [0.0, 0.0], b: [0.0, 2.0] }, Segment { a: [0.0, 3.0], b: [0.0, 5.0] }], ..slit(5.0) },
        Scenario::DoubleSlit => RunConfig {
            materials: [(0.0, 2.0), (3.0, 4.0), (5.0, 7.0)]
                .iter()
                .map(|&(y_lo, y_hi)| MaterialRegion { rect: rect(0.0, 2.0, y_lo, y_hi), eps: 4.0, mu: 1.0 })
                .collect(),
            ..slit(7.0)
        },
        Scenario::Custom => RunConfig {
            nx: 4,
            ny: 4,
            t_end: 1.0,
            n_steps: 10,
            domain: rect(0.0, 1.0, 0.0, 1.0),
            initial: InitialKind::Zero,
            ..base
        },
    }
}

pub fn parse_config_file(path: &Path) -> Result<RunConfig, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&src)
}

/// Parses and validates a configuration; errors carry source line numbers.
pub fn parse_config(src: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| {
        let line = e.span().map(|s| line_of(src, s));
        ConfigError::Parse(match line {
            Some(l) => format!("line {l}: {}", e.message()),
            None => e.message().to_string(),
        })
    })?;
    let mut c = defaults(raw.scenario);
    let invalid = |span: Range<usize>, message: String| ConfigError::Invalid { line: line_of(src, span), message };
    c.p = raw.p.unwrap_or(c.p);
    c.p_max = raw.p_max.unwrap_or(c.p_max);
    c.nx = raw.nx.unwrap_or(c.nx);
    c.ny = raw.ny.unwrap_or(c.ny);
    c.t_end = raw.t_end.unwrap_or(c.t_end);
    c.n_steps = raw.n_steps.unwrap_or(c.n_steps);
    c.initial = raw.initial.unwrap_or(c.initial);
    c.orthonormalize = raw.orthonormalize.unwrap_or(c.orthonormalize);
    if let Some(d) = &raw.domain {
        let r = d.get_ref();
        if !(r.x_hi > r.x_lo && r.y_hi > r.y_lo) {
            return Err(invalid(d.span(), "domain must have x_hi > x_lo and y_hi > y_lo".into()));
        }
        c.domain = rect(r.x_lo, r.x_hi, r.y_lo, r.y_hi);
    }
    if let Some(b) = raw.boundary {
        for (slot, v) in c.boundary.iter_mut().zip([b.x_lo, b.x_hi, b.y_lo, b.y_hi]) {
            if let Some(v) = v {
                *slot = v;
            }
        }
    }
    if let Some(pulse) = raw.pulse {
        c.pulse = (pulse.x0.unwrap_or(c.pulse.0), pulse.x1.unwrap_or(c.pulse.1));
    }
    if let Some(m) = raw.cavity {
        c.mode = (m.m.unwrap_or(c.mode.0), m.n.unwrap_or(c.mode.1));
    }
    if let Some(s) = raw.study {
        c.study_values = s.values;
    }
    if c.nx == 0 || c.ny == 0 {
        return Err(ConfigError::Rejected("nx and ny must be positive".into()));
    }
    if c.n_steps == 0 || !(c.t_end > 0.0) {
        return Err(ConfigError::Rejected("T and n_steps must be positive".into()));
    }
    if c.p > 10 || c.p_max > 10 {
        return Err(ConfigError::Rejected("polynomial degrees above 10 are not supported".into()));
    }
    for (lo, hi, axis) in [(0, 1, "x"), (2, 3, "y")] {
        if (c.boundary[lo] == BoundaryKind::Periodic) != (c.boundary[hi] == BoundaryKind::Periodic) {
            return Err(ConfigError::Rejected(format!("periodic boundary on only one {axis}-side")));
        }
    }
    let (hx, hy) = (c.domain.width() / c.nx as f64, c.domain.height() / c.ny as f64);
    let on_grid = |v: f64, lo: f64, h: f64, n: usize| {
        let k = ((v - lo) / h).round();
        (v - lo - k * h).abs() <= 1e-9 * h && k >= 0.0 && k <= n as f64
    };
    if let Some(regions) = raw.material {
        c.materials.clear();
        for r in regions {
            let span = r.span();
            let v = r.into_inner();
            let reg = MaterialRegion { rect: rect(v.x_lo, v.x_hi, v.y_lo, v.y_hi), eps: v.eps.unwrap_or(1.0), mu: v.mu.unwrap_or(1.0) };
            if !(reg.eps > 0.0 && reg.mu > 0.0) {
                return Err(invalid(span, "eps and mu must be positive".into()));
            }
            let d = &c.domain;
            let aligned = v.x_hi > v.x_lo
                && v.y_hi > v.y_lo
                && on_grid(v.x_lo, d.x_lo, hx, c.nx)
                && on_grid(v.x_hi, d.x_lo, hx, c.nx)
                && on_grid(v.y_lo, d.y_lo, hy, c.ny)
                && on_grid(v.y_hi, d.y_lo, hy, c.ny);
            if !aligned {
                return Err(invalid(span, "material region is not aligned with element boundaries".into()));
            }
            c.materials.push(reg);
        }
    }
    if let Some(walls) = raw.wall {
        c.walls.clear();
        for w in walls {
            let span = w.span();
            let v = w.into_inner();
            let d = &c.domain;
            let vertical = v.from[0] == v.to[0] && on_grid(v.from[0], d.x_lo, hx, c.nx) && on_grid(v.from[1], d.y_lo, hy, c.ny) && on_grid(v.to[1], d.y_lo, hy, c.ny);
            let horizontal = v.from[1] == v.to[1] && on_grid(v.from[1], d.y_lo, hy, c.ny) && on_grid(v.from[0], d.x_lo, hx, c.nx) && on_grid(v.to[0], d.x_lo, hx, c.nx);
            if v.from == v.to || !(vertical || horizontal) {
                return Err(invalid(span, "wall segment does not lie on mesh edges".into()));
            }
            c.walls.push(Segment { a: v.from, b: v.to });
        }
    }
    if let Some(o) = raw.output {
        if let Some(d) = o.dir {
            c.output.dir = d;
        }
        if let Some(t) = o.snapshot_times {
            c.output.snapshot_times = t;
        }
        if let Some(t) = o.spectrum_times {
            c.output.spectrum_times = t;
        }
        c.output.spectrum_samples = o.spectrum_samples.unwrap_or(c.output.spectrum_samples);
        c.output.spectrum_y = o.spectrum_y.unwrap_or(c.output.spectrum_y);
    }
    if !c.output.spectrum_samples.is_power_of_two() {
        return Err(ConfigError::Rejected("spectrum_samples must be a power of two".into()));
    }
    if let Some(t) = c.output.snapshot_times.iter().chain(&c.output.spectrum_times).find(|t| **t < 0.0 || **t > c.t_end * (1.0 + 1e-12)) {
        return Err(ConfigError::Rejected(format!("output time {t} lies outside [0, T]")));
    }
    if c.output.snapshot_times.is_empty() && matches!(c.scenario, Scenario::PlaneWave | Scenario::SingleSlit | Scenario::DoubleSlit) {
        c.output.snapshot_times = default_snapshot_times(c.t_end, c.n_steps);
    }
    if c.output.spectrum_times.is_empty() && c.scenario == Scenario::PlaneWave {
        c.output.spectrum_times = [0.0, 20.0, 200.0, 2000.0].into_iter().filter(|t| *t <= c.t_end * (1.0 + 1e-12)).collect();
    }
    Ok(c)
}

/// Every knot for short runs, else the schedule `0, 20, 200, 2000` within `[0, T]`.
fn default_snapshot_times(t_end: f64, n_steps: usize) -> Vec<f64> {
    if n_steps <= 100 {
        (0..=n_steps).map(|k| if k == n_steps { t_end } else { t_end * k as f64 / n_steps as f64 }).collect()
    } else {
        [0.0, 20.0, 200.0, 2000.0].into_iter().filter(|t| *t <= t_end).collect()
    }
}
