//! Run configuration: a flat key/value file with sections, expanded over a
//! compiled-in preset.
//!
//! ```text
//! preset = "fig3"
//! mode = "jumps"
//!
//! [params]
//! coupling = 0.05
//!
//! [run]
//! tau_end = 150.0
//! output = "out/fig3-jumps"
//! seed = 7
//! ```
//!
//! Sections: `params`, `drive`, `run`, `grid`, `integrator`, `collapse`,
//! `sweep`. Unknown keys are rejected.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classical::SpinMode;
use crate::collapse_mc::{CollapseSchedule, CollapseWindow, Lifetimes, DEFAULT_EDGE_CELLS};
use crate::drive::DriveProfile;
use crate::error::{Error, Result};
use crate::observables::SpatialGrid;
use crate::ode::{Method, Tolerances};
use crate::quantum::DownLineSign;

pub const PRESETS: [&str; 3] = ["fig2", "fig3", "fig4"];

/// Default `[collapse]` life-time mean, one drive period.
pub const DEFAULT_DECOHERENCE_TIME: f64 = TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Quantum,
    Classical,
    Jumps,
    Sweep,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Quantum => "quantum",
            Mode::Classical => "classical",
            Mode::Jumps => "jumps",
            Mode::Sweep => "sweep",
        }
    }
}

/// Model constants and initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub rabi: f64,
    pub coupling: f64,
    /// `ΔN`; only the classical engine uses it.
    pub spin_count: f64,
    pub basis_size: usize,
    pub mean_z: f64,
    pub mean_p: f64,
    /// Initial spin direction (polar angle from +z, azimuth).
    pub spin_theta: f64,
    pub spin_phi: f64,
    pub down_line: DownLineSign,
    pub spin_mode: SpinMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Rabi,
    Coupling,
    SpinCount,
    MeanZ,
    MeanP,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Rabi => "rabi",
            SweepParameter::Coupling => "coupling",
            SweepParameter::SpinCount => "spin_count",
            SweepParameter::MeanZ => "mean_z",
            SweepParameter::MeanP => "mean_p",
        }
    }

    pub fn apply(self, params: &mut ModelParams, value: f64) {
        match self {
            SweepParameter::Rabi => params.rabi = value,
            SweepParameter::Coupling => params.coupling = value,
            SweepParameter::SpinCount => params.spin_count = value,
            SweepParameter::MeanZ => params.mean_z = value,
            SweepParameter::MeanP => params.mean_p = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Mode of every child run.
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub preset: Option<String>,
    pub params: ModelParams,
    pub drive: DriveProfile,
    pub tau_end: f64,
    pub snapshot_stride: f64,
    /// Spacing of density files and stream records.
    pub output_stride: f64,
    pub grid: SpatialGrid,
    pub method: Method,
    pub tolerances: Tolerances,
    pub collapse: CollapseSchedule,
    pub window: CollapseWindow,
    pub members: usize,
    pub sweep: Option<SweepSpec>,
    pub output: PathBuf,
    /// Write the binary amplitude stream.
    pub stream: bool,
}

impl RunConfig {
    /// Compiled-in parameter set.
    pub fn preset(name: &str) -> Result<Self> {
        let quantum = |rabi: f64, coupling: f64, drive: DriveProfile| RunConfig {
            mode: Mode::Quantum,
            preset: Some(name.to_string()),
            params: ModelParams {
                rabi,
                coupling,
                spin_count: 1.0,
                basis_size: 2000,
                mean_z: -20.0,
                mean_p: 0.0,
                spin_theta: 0.0,
                spin_phi: 0.0,
                down_line: DownLineSign::default(),
                spin_mode: SpinMode::default(),
            },
            drive,
            tau_end: 100.0,
            snapshot_stride: 0.08,
            output_stride: 1.0,
            grid: SpatialGrid::default(),
            method: Method::default(),
            tolerances: Tolerances::default(),
            collapse: CollapseSchedule::default(),
            window: CollapseWindow::default(),
            members: 1,
            sweep: None,
            output: PathBuf::from(name),
            stream: true,
        };
        match name {
            "fig3" => Ok(quantum(40.0, 0.03, DriveProfile::fig3())),
            "fig4" => Ok(quantum(400.0, 0.3, DriveProfile::fig4())),
            "fig2" => {
                let mut c = quantum(37.0, 2.8e-7, DriveProfile::fig3());
                c.mode = Mode::Classical;
                c.params.spin_count = 2.9e9;
                c.params.mean_z = 6.7e4;
                c.params.mean_p = 6.7e4;
                c.tau_end = 500.0;
                c.stream = false;
                Ok(c)
            }
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if !(p.rabi.is_finite() && p.rabi >= 0.0) {
            return Err(Error::domain("rabi", "must be finite and >= 0"));
        }
        if !(p.coupling.is_finite() && p.coupling >= 0.0) {
            return Err(Error::domain("coupling", "must be finite and >= 0"));
        }
        if !(p.spin_count.is_finite() && p.spin_count > 0.0) {
            return Err(Error::domain("spin_count", "must be positive"));
        }
        if p.basis_size < 1 {
            return Err(Error::domain("basis_size", "must be at least 1"));
        }
        for (field, v) in [("mean_z", p.mean_z), ("mean_p", p.mean_p), ("spin_theta", p.spin_theta), ("spin_phi", p.spin_phi)] {
            if !v.is_finite() {
                return Err(Error::domain(field, "must be finite"));
            }
        }
        self.drive.validate()?;
        if !(self.tau_end.is_finite() && self.tau_end > 0.0) {
            return Err(Error::domain("tau_end", "must be positive"));
        }
        if !(self.snapshot_stride > 0.0 && self.snapshot_stride <= self.tau_end) {
            return Err(Error::domain("snapshot_stride", "must be positive and at most tau_end"));
        }
        if !(self.output_stride >= self.snapshot_stride) {
            return Err(Error::domain("output_stride", "must be at least snapshot_stride"));
        }
        self.grid.validate()?;
        let t = &self.tolerances;
        if !(t.rtol > 0.0 && t.atol > 0.0 && t.max_step > 0.0 && t.min_step > 0.0 && t.max_steps > 0) {
            return Err(Error::domain("integrator", "tolerances and step limits must be positive"));
        }
        self.collapse.validate()?;
        if self.members < 1 {
            return Err(Error::domain("members", "must be at least 1"));
        }
        match (&self.sweep, self.mode) {
            (None, Mode::Sweep) => return Err(Error::domain("sweep", "sweep mode needs a [sweep] section")),
            (Some(s), _) if s.values.is_empty() => return Err(Error::domain("values", "sweep needs at least one value")),
            (Some(s), _) if s.mode == Mode::Sweep => return Err(Error::domain("sweep.mode", "child runs cannot sweep")),
            _ => {}
        }
        Ok(())
    }

    /// Renders the config in the file format; loading the text gives the
    /// same config back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let d = &self.drive;
        let t = &self.tolerances;
        let w = |s: &mut String, k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(name) = &self.preset {
            w(&mut s, "preset", quoted(name));
        }
        w(&mut s, "mode", quoted(self.mode.name()));
        s.push_str("\n[params]\n");
        w(&mut s, "rabi", float(p.rabi));
        w(&mut s, "coupling", float(p.coupling));
        w(&mut s, "spin_count", float(p.spin_count));
        w(&mut s, "basis_size", p.basis_size.to_string());
        w(&mut s, "mean_z", float(p.mean_z));
        w(&mut s, "mean_p", float(p.mean_p));
        w(&mut s, "spin_theta", float(p.spin_theta));
        w(&mut s, "spin_phi", float(p.spin_phi));
        w(&mut s, "down_line", quoted(&enum_name(&p.down_line)));
        w(&mut s, "spin_mode", quoted(&enum_name(&p.spin_mode)));
        s.push_str("\n[drive]\n");
        w(&mut s, "ramp_offset", float(d.ramp_offset));
        w(&mut s, "ramp_slope", float(d.ramp_slope));
        w(&mut s, "ramp_end", float(d.ramp_end));
        w(&mut s, "modulation_amplitude", float(d.modulation_amplitude));
        w(&mut s, "modulation_phase_origin", float(d.modulation_phase_origin));
        s.push_str("\n[run]\n");
        w(&mut s, "tau_end", float(self.tau_end));
        w(&mut s, "snapshot_stride", float(self.snapshot_stride));
        w(&mut s, "output_stride", float(self.output_stride));
        w(&mut s, "output", quoted(&self.output.to_string_lossy()));
        w(&mut s, "seed", self.collapse.rng_seed.to_string());
        w(&mut s, "stream", self.stream.to_string());
        s.push_str("\n[grid]\n");
        w(&mut s, "z_min", float(self.grid.z_min));
        w(&mut s, "z_max", float(self.grid.z_max));
        w(&mut s, "points", self.grid.points.to_string());
        s.push_str("\n[integrator]\n");
        w(&mut s, "method", quoted(&enum_name(&self.method)));
        w(&mut s, "rtol", float(t.rtol));
        w(&mut s, "atol", float(t.atol));
        w(&mut s, "initial_step", float(t.initial_step));
        w(&mut s, "max_step", float(t.max_step));
        w(&mut s, "min_step", float(t.min_step));
        w(&mut s, "max_steps", t.max_steps.to_string());
        s.push_str("\n[collapse]\n");
        w(&mut s, "decoherence_time", float(self.collapse.decoherence_time));
        let lifetimes = match &self.collapse.lifetimes {
            Lifetimes::Constant => quoted("constant"),
            Lifetimes::Exponential => quoted("exponential"),
            Lifetimes::Explicit { values } => {
                format!("[{}]", values.iter().map(|v| float(*v)).collect::<Vec<_>>().join(", "))
            }
        };
        w(&mut s, "lifetimes", lifetimes);
        let (window, cells) = match self.window {
            CollapseWindow::Sharp => ("sharp", None),
            CollapseWindow::Taper { width_cells } => ("taper", Some(width_cells)),
            CollapseWindow::Erf { width_cells } => ("erf", Some(width_cells)),
        };
        w(&mut s, "window", quoted(window));
        if let Some(c) = cells {
            w(&mut s, "window_cells", float(c));
        }
        w(&mut s, "members", self.members.to_string());
        if let Some(sweep) = &self.sweep {
            s.push_str("\n[sweep]\n");
            w(&mut s, "parameter", quoted(sweep.parameter.name()));
            w(
                &mut s,
                "values",
                format!("[{}]", sweep.values.iter().map(|v| float(*v)).collect::<Vec<_>>().join(", ")),
            );
            w(&mut s, "mode", quoted(sweep.mode.name()));
        }
        s
    }
}

/// Basic string literal; JSON escapes are valid in this format too.
fn quoted(s: &str) -> String {
    serde_json::Value::String(s.to_string()).to_string()
}

fn float(v: f64) -> String {
    // Shortest round-trip form, always with a decimal point or exponent.
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'i', 'N']) {
        s
    } else {
        format!("{s}.0")
    }
}

/// Serialized name of a unit enum variant.
fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    mode: Option<Mode>,
    params: Option<RawParams>,
    drive: Option<RawDrive>,
    run: Option<RawRun>,
    grid: Option<RawGrid>,
    integrator: Option<RawIntegrator>,
    collapse: Option<RawCollapse>,
    sweep: Option<RawSweep>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    rabi: Option<f64>,
    coupling: Option<f64>,
    spin_count: Option<f64>,
    basis_size: Option<usize>,
    mean_z: Option<f64>,
    mean_p: Option<f64>,
    spin_theta: Option<f64>,
    spin_phi: Option<f64>,
    down_line: Option<DownLineSign>,
    spin_mode: Option<SpinMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrive {
    preset: Option<String>,
    ramp_offset: Option<f64>,
    ramp_slope: Option<f64>,
    ramp_end: Option<f64>,
    modulation_amplitude: Option<f64>,
    modulation_phase_origin: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    tau_end: Option<f64>,
    snapshot_stride: Option<f64>,
    output_stride: Option<f64>,
    output: Option<PathBuf>,
    seed: Option<u64>,
    stream: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    z_min: Option<f64>,
    z_max: Option<f64>,
    points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    method: Option<Method>,
    rtol: Option<f64>,
    atol: Option<f64>,
    initial_step: Option<f64>,
    max_step: Option<f64>,
    min_step: Option<f64>,
    max_steps: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawLifetimes {
    Kind(String),
    Values(Vec<f64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCollapse {
    decoherence_time: Option<f64>,
    lifetimes: Option<RawLifetimes>,
    window: Option<String>,
    window_cells: Option<f64>,
    members: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: SweepParameter,
    values: Vec<f64>,
    mode: Option<Mode>,
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Parses config text, expands the preset and validates the result.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map_or(0, |s| line_at(text, s.start)),
        reason: e.message().to_string(),
    })?;
    let located = |section: Option<&str>, key: &str, e: Error| Error::Config {
        line: line_of(text, section, key),
        reason: e.to_string(),
    };

    let mut c = match &raw.preset {
        Some(name) => RunConfig::preset(name)?,
        None => bare_config(&raw).map_err(|(section, key, e)| located(section, key, e))?,
    };
    if let Some(mode) = raw.mode {
        c.mode = mode;
    }

    let p = raw.params.unwrap_or_default();
    let m = &mut c.params;
    set(&mut m.rabi, p.rabi);
    set(&mut m.coupling, p.coupling);
    set(&mut m.spin_count, p.spin_count);
    set(&mut m.basis_size, p.basis_size);
    set(&mut m.mean_z, p.mean_z);
    set(&mut m.mean_p, p.mean_p);
    set(&mut m.spin_theta, p.spin_theta);
    set(&mut m.spin_phi, p.spin_phi);
    set(&mut m.down_line, p.down_line);
    set(&mut m.spin_mode, p.spin_mode);

    if let Some(d) = raw.drive {
        if let Some(name) = &d.preset {
            c.drive = DriveProfile::preset(name)
                .ok_or_else(|| located(Some("drive"), "preset", Error::UnknownPreset(name.clone())))?;
        }
        set(&mut c.drive.ramp_offset, d.ramp_offset);
        set(&mut c.drive.ramp_slope, d.ramp_slope);
        set(&mut c.drive.ramp_end, d.ramp_end);
        set(&mut c.drive.modulation_amplitude, d.modulation_amplitude);
        set(&mut c.drive.modulation_phase_origin, d.modulation_phase_origin);
    }

    let r = raw.run.unwrap_or_default();
    set(&mut c.tau_end, r.tau_end);
    set(&mut c.snapshot_stride, r.snapshot_stride);
    set(&mut c.output_stride, r.output_stride);
    set(&mut c.output, r.output);
    set(&mut c.collapse.rng_seed, r.seed);
    set(&mut c.stream, r.stream);

    let g = raw.grid.unwrap_or_default();
    set(&mut c.grid.z_min, g.z_min);
    set(&mut c.grid.z_max, g.z_max);
    set(&mut c.grid.points, g.points);

    let i = raw.integrator.unwrap_or_default();
    set(&mut c.method, i.method);
    set(&mut c.tolerances.rtol, i.rtol);
    set(&mut c.tolerances.atol, i.atol);
    set(&mut c.tolerances.initial_step, i.initial_step);
    set(&mut c.tolerances.max_step, i.max_step);
    set(&mut c.tolerances.min_step, i.min_step);
    set(&mut c.tolerances.max_steps, i.max_steps);

    let k = raw.collapse.unwrap_or_default();
    set(&mut c.collapse.decoherence_time, k.decoherence_time);
    set(&mut c.members, k.members);
    if let Some(l) = k.lifetimes {
        c.collapse.lifetimes = match l {
            RawLifetimes::Kind(s) if s == "constant" => Lifetimes::Constant,
            RawLifetimes::Kind(s) if s == "exponential" => Lifetimes::Exponential,
            RawLifetimes::Kind(s) => {
                return Err(located(
                    Some("collapse"),
                    "lifetimes",
                    Error::domain("lifetimes", format!("expected \"constant\", \"exponential\" or a list, got \"{s}\"")),
                ))
            }
            RawLifetimes::Values(values) => Lifetimes::Explicit { values },
        };
    }
    let cells = k.window_cells.unwrap_or(DEFAULT_EDGE_CELLS);
    c.window = match k.window.as_deref() {
        None => match c.window {
            CollapseWindow::Taper { .. } if k.window_cells.is_some() => CollapseWindow::Taper { width_cells: cells },
            CollapseWindow::Erf { .. } if k.window_cells.is_some() => CollapseWindow::Erf { width_cells: cells },
            w => w,
        },
        Some("sharp") => CollapseWindow::Sharp,
        Some("taper") => CollapseWindow::Taper { width_cells: cells },
        Some("erf") => CollapseWindow::Erf { width_cells: cells },
        Some(other) => {
            return Err(located(
                Some("collapse"),
                "window",
                Error::domain("window", format!("expected \"sharp\", \"taper\" or \"erf\", got \"{other}\"")),
            ))
        }
    };

    if let Some(s) = raw.sweep {
        c.sweep = Some(SweepSpec {
            parameter: s.parameter,
            values: s.values,
            mode: s.mode.unwrap_or(Mode::Quantum),
        });
    }

    c.validate().map_err(|e| {
        let (section, key) = match &e {
            Error::Domain { field, .. } => field_location(field),
            _ => (None, ""),
        };
        located(section, key, e)
    })?;
    Ok(c)
}

type Located = (Option<&'static str>, &'static str, Error);

/// Base for configs without a preset: model constants, drive and `tau_end`
/// are required.
fn bare_config(raw: &RawConfig) -> std::result::Result<RunConfig, Located> {
    let mut c = RunConfig::preset("fig3").expect("compiled-in preset");
    c.preset = None;
    c.params.mean_z = 0.0;
    c.output = PathBuf::from("run");
    let p = raw.params.as_ref();
    if p.and_then(|p| p.rabi).is_none() {
        return Err((Some("params"), "rabi", Error::domain("rabi", "required without a preset")));
    }
    if p.and_then(|p| p.coupling).is_none() {
        return Err((Some("params"), "coupling", Error::domain("coupling", "required without a preset")));
    }
    let d = raw.drive.as_ref();
    let complete = d.is_some_and(|d| {
        d.preset.is_some()
            || (d.ramp_offset.is_some()
                && d.ramp_slope.is_some()
                && d.ramp_end.is_some()
                && d.modulation_amplitude.is_some()
                && d.modulation_phase_origin.is_some())
    });
    if !complete {
        return Err((
            Some("drive"),
            "",
            Error::domain("drive", "required without a preset: give `preset` or all five coefficients"),
        ));
    }
    if raw.run.as_ref().and_then(|r| r.tau_end).is_none() {
        return Err((Some("run"), "tau_end", Error::domain("tau_end", "required without a preset")));
    }
    Ok(c)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn field_location(field: &str) -> (Option<&'static str>, &'static str) {
    const KEYS: [(&str, &str); 27] = [
        ("params", "rabi"),
        ("params", "coupling"),
        ("params", "spin_count"),
        ("params", "basis_size"),
        ("params", "mean_z"),
        ("params", "mean_p"),
        ("params", "spin_theta"),
        ("params", "spin_phi"),
        ("drive", "ramp_offset"),
        ("drive", "ramp_slope"),
        ("drive", "ramp_end"),
        ("drive", "modulation_amplitude"),
        ("drive", "modulation_phase_origin"),
        ("run", "tau_end"),
        ("run", "snapshot_stride"),
        ("run", "output_stride"),
        ("grid", "grid"),
        ("integrator", "integrator"),
        ("collapse", "decoherence_time"),
        ("collapse", "lifetimes"),
        ("collapse", "members"),
        ("collapse", "width_cells"),
        ("sweep", "sweep"),
        ("sweep", "values"),
        ("sweep", "sweep.mode"),
        ("", "mode"),
        ("", "preset"),
    ];
    for (section, key) in KEYS {
        if key == field {
            let key = match key {
                "width_cells" => "window_cells",
                "sweep.mode" => "mode",
                k => k,
            };
            return ((!section.is_empty()).then_some(section), key);
        }
    }
    (None, "")
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `section` (top level for `None`); falls back to the
/// section header, then to 0.
fn line_of(text: &str, section: Option<&str>, key: &str) -> usize {
    let mut current: Option<String> = None;
    let mut header = 0;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            if section == Some(name.trim()) {
                header = i + 1;
            }
            continue;
        }
        if current.as_deref() == section && !key.is_empty() {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return i + 1;
                }
            }
        }
    }
    header
}
