//! Executes a [`RunConfig`] and writes its artifacts, and replays stored
//! amplitude streams.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cat_analysis::{detect_peaks, splitting_series, CatReport, SplittingSeries, PROMINENCE_FLOOR};
use crate::classical::{evolve_classical, ClassicalControls, ClassicalParams, ClassicalState};
use crate::collapse_mc::{
    mean_z_trace, run_ensemble, run_with_jumps_observed, summarize, JumpControls, JumpRun, TrajectoryPoint,
};
use crate::error::{Error, Result};
use crate::io::config::{Mode, RunConfig};
use crate::io::output::{
    cat_row, classical_row, density_file_name, trajectory_row, write_density, write_ensemble_summary, write_json,
    write_plot_script, write_splits, CsvSink, MemberJumps, PlotFamily, CAT_SERIES, CLASSICAL, DENSITY_INDEX, MEAN_Z,
    SCHEMAS, SWEEP_SUMMARY, TRAJECTORY,
};
use crate::io::stream::{StreamReader, StreamWriter, FORMAT_VERSION};
use crate::observables::{correlations, density, hermite_basis, means, populations, HermiteBasis, SpatialGrid};
use crate::quantum::{coherent_state, CoherentInit, EvolveControls, Propagator, QuantumModel, Spinor, SpinorFockState};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const STREAM_FILE: &str = "amplitudes.bin";
pub const JUMPS_FILE: &str = "jumps.json";

/// Health metrics of a finished run; fields that do not apply to the mode
/// are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHealth {
    pub final_norm_drift: Option<f64>,
    pub max_norm_drift: Option<f64>,
    pub max_tail_mass: Option<f64>,
    pub spin_length_drift: Option<f64>,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
}

/// Headline numbers of a run, used by sweep summaries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_mean_z: f64,
    /// Largest `√(⟨z⟩² + ⟨p⟩²)` (or `√(z² + p²)` classically).
    pub max_amplitude: f64,
    pub first_split: Option<f64>,
    pub max_separation: Option<f64>,
    pub jumps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub code_version: String,
    pub stream_format_version: u32,
    pub started: String,
    pub finished: String,
    pub wall_seconds: f64,
    pub health: RunHealth,
    pub summary: RunSummary,
    /// CSV schema versions by file pattern.
    pub schemas: BTreeMap<String, u32>,
    /// Artifacts relative to the run directory.
    pub files: Vec<String>,
}

struct Outcome {
    health: RunHealth,
    summary: RunSummary,
    files: Vec<String>,
}

/// Runs `config` into `config.output` and writes the manifest last.
pub fn run(config: &RunConfig) -> Result<RunManifest> {
    config.validate()?;
    let dir = config.output.clone();
    fs::create_dir_all(&dir)?;
    let started = chrono::Utc::now();
    let clock = Instant::now();
    fs::write(dir.join(CONFIG_ECHO_FILE), config.to_text())?;
    let mut outcome = match config.mode {
        Mode::Quantum => run_quantum(config, &dir)?,
        Mode::Classical => run_classical(config, &dir)?,
        Mode::Jumps => run_jumps(config, &dir)?,
        Mode::Sweep => run_sweep(config, &dir)?,
    };
    outcome.files.insert(0, CONFIG_ECHO_FILE.to_string());
    outcome.files.push(MANIFEST_FILE.to_string());
    let manifest = RunManifest {
        config: config.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        stream_format_version: FORMAT_VERSION,
        started: started.to_rfc3339(),
        finished: chrono::Utc::now().to_rfc3339(),
        wall_seconds: clock.elapsed().as_secs_f64(),
        health: outcome.health,
        summary: outcome.summary,
        schemas: SCHEMAS.iter().map(|s| (s.file.to_string(), s.version)).collect(),
        files: outcome.files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
}

fn initial_state(config: &RunConfig) -> Result<SpinorFockState> {
    let p = &config.params;
    coherent_state(
        CoherentInit::from_means(p.mean_z, p.mean_p),
        Spinor::from_angles(p.spin_theta, p.spin_phi),
        p.basis_size,
    )
}

fn quantum_model(config: &RunConfig) -> QuantumModel {
    let mut m = QuantumModel::new(config.params.rabi, config.params.coupling, config.drive);
    m.down_line = config.params.down_line;
    m
}

fn evolve_controls(config: &RunConfig) -> EvolveControls {
    EvolveControls {
        tolerances: config.tolerances,
        method: config.method,
        snapshot_stride: config.snapshot_stride,
        ..EvolveControls::default()
    }
}

/// Writes density files and stream records at the output stride.
struct SnapshotOutput<'a> {
    dir: &'a Path,
    basis: &'a HermiteBasis,
    stride: f64,
    next: f64,
    written: usize,
    index: CsvSink,
    stream: Option<StreamWriter>,
}

impl<'a> SnapshotOutput<'a> {
    fn new(config: &RunConfig, dir: &'a Path, basis: &'a HermiteBasis, start: f64) -> Result<Self> {
        Ok(Self {
            dir,
            basis,
            stride: config.output_stride,
            next: start,
            written: 0,
            index: CsvSink::create(dir, DENSITY_INDEX.file, &DENSITY_INDEX)?,
            stream: if config.stream {
                Some(StreamWriter::create(&dir.join(STREAM_FILE))?)
            } else {
                None
            },
        })
    }

    /// Handles one snapshot; `snapshot` is reused when already computed.
    fn offer(&mut self, state: &SpinorFockState, snapshot: Option<&crate::observables::DensitySnapshot>) -> Result<()> {
        // Snapshot times carry rounding from `start + k·stride`.
        if state.tau + 1e-9 < self.next {
            return Ok(());
        }
        self.next += self.stride;
        let owned;
        let snap = match snapshot {
            Some(s) => s,
            None => {
                owned = density(state, self.basis)?;
                &owned
            }
        };
        let file = density_file_name(self.written);
        write_density(self.dir, &file, snap)?;
        self.index.row(&[file, crate::io::output::fmt17(state.tau)])?;
        if let Some(w) = self.stream.as_mut() {
            w.append(state)?;
        }
        self.written += 1;
        Ok(())
    }

    fn finish(self, files: &mut Vec<String>) -> Result<()> {
        self.index.finish()?;
        files.push(DENSITY_INDEX.file.to_string());
        files.extend((0..self.written).map(density_file_name));
        if let Some(w) = self.stream {
            w.finish()?;
            files.push(STREAM_FILE.to_string());
        }
        Ok(())
    }
}

fn run_quantum(config: &RunConfig, dir: &Path) -> Result<Outcome> {
    let init = initial_state(config)?;
    let basis = hermite_basis(config.grid, init.basis_size())?;
    let mut prop = Propagator::new(&init, quantum_model(config), evolve_controls(config))?;
    let mut traj = CsvSink::create(dir, TRAJECTORY.file, &TRAJECTORY)?;
    let mut cats = CsvSink::create(dir, CAT_SERIES.file, &CAT_SERIES)?;
    let mut out = SnapshotOutput::new(config, dir, &basis, init.tau)?;
    let mut reports: Vec<CatReport> = Vec::new();
    let mut summary = RunSummary::default();
    prop.run(config.tau_end, |s| {
        let m = means(s);
        traj.numbers(&trajectory_row(s.tau, &m, populations(s), &correlations(s)))?;
        summary.final_mean_z = m.z;
        summary.max_amplitude = summary.max_amplitude.max(m.amplitude());
        let snap = density(s, &basis)?;
        let report = detect_peaks(&snap, PROMINENCE_FLOOR)?;
        cats.row(&cat_row(&report))?;
        reports.push(report);
        out.offer(s, Some(&snap))?;
        Ok(true)
    })?;
    traj.finish()?;
    cats.finish()?;
    let mut files = vec![TRAJECTORY.file.to_string(), CAT_SERIES.file.to_string()];
    out.finish(&mut files)?;
    if reports.len() >= 2 {
        let series = splitting_series(&reports)?;
        apply_series(&mut summary, &series);
        write_splits(dir, &series)?;
        files.push(crate::io::output::SPLITS.file.to_string());
    }
    for family in [PlotFamily::DensityWaterfall, PlotFamily::Populations, PlotFamily::MeanZ] {
        write_plot_script(dir, family)?;
        files.push(family.file_name().to_string());
    }
    let h = prop.health();
    Ok(Outcome {
        health: RunHealth {
            final_norm_drift: Some((prop.norm_sqr() - init.norm_sqr()).abs()),
            max_norm_drift: Some(h.max_norm_drift),
            max_tail_mass: Some(h.max_tail_mass),
            spin_length_drift: None,
            accepted_steps: h.steps.accepted,
            rejected_steps: h.steps.rejected,
        },
        summary,
        files,
    })
}

fn apply_series(summary: &mut RunSummary, series: &SplittingSeries) {
    summary.first_split = series.first_split();
    summary.max_separation = series.max_separation().map(|(_, d)| d);
}

fn run_classical(config: &RunConfig, dir: &Path) -> Result<Outcome> {
    let p = &config.params;
    let mut params = ClassicalParams::new(p.rabi, p.coupling, p.spin_count, config.drive)?;
    params.spin_mode = p.spin_mode;
    let (st, ct) = p.spin_theta.sin_cos();
    let (sp, cp) = p.spin_phi.sin_cos();
    let init = ClassicalState {
        tau: 0.0,
        z: p.mean_z,
        p: p.mean_p,
        s: [0.5 * st * cp, 0.5 * st * sp, 0.5 * ct],
    };
    let controls = ClassicalControls {
        tolerances: config.tolerances,
        method: config.method,
        snapshot_stride: config.snapshot_stride,
    };
    let (trajectory, health) = evolve_classical(&init, &params, config.tau_end, &controls)?;
    let mut sink = CsvSink::create(dir, CLASSICAL.file, &CLASSICAL)?;
    let mut summary = RunSummary::default();
    for s in &trajectory {
        sink.numbers(&classical_row(s))?;
        summary.max_amplitude = summary.max_amplitude.max(s.z.hypot(s.p));
        summary.final_mean_z = s.z;
    }
    sink.finish()?;
    write_plot_script(dir, PlotFamily::Classical)?;
    Ok(Outcome {
        health: RunHealth {
            spin_length_drift: Some(health.max_spin_length_drift),
            accepted_steps: health.steps.accepted,
            rejected_steps: health.steps.rejected,
            ..RunHealth::default()
        },
        summary,
        files: vec![CLASSICAL.file.to_string(), PlotFamily::Classical.file_name().to_string()],
    })
}

fn write_trajectory(dir: &Path, points: &[TrajectoryPoint]) -> Result<()> {
    let mut sink = CsvSink::create(dir, TRAJECTORY.file, &TRAJECTORY)?;
    for t in points {
        sink.numbers(&trajectory_row(t.tau, &t.means, (t.p_up, t.p_down), &t.correlations))?;
    }
    sink.finish()
}

fn run_jumps(config: &RunConfig, dir: &Path) -> Result<Outcome> {
    let init = initial_state(config)?;
    let model = quantum_model(config);
    let controls = JumpControls {
        evolve: evolve_controls(config),
        grid: config.grid,
        prominence_floor: PROMINENCE_FLOOR,
        window: config.window,
    };
    let mut files = vec![TRAJECTORY.file.to_string(), JUMPS_FILE.to_string()];
    let runs: Vec<JumpRun> = if config.members == 1 {
        let basis = hermite_basis(config.grid, init.basis_size())?;
        let mut out = SnapshotOutput::new(config, dir, &basis, init.tau)?;
        let run = run_with_jumps_observed(&init, model, &config.collapse, 0, config.tau_end, &controls, |s| {
            out.offer(s, None)
        })?;
        out.finish(&mut files)?;
        write_plot_script(dir, PlotFamily::DensityWaterfall)?;
        files.push(PlotFamily::DensityWaterfall.file_name().to_string());
        vec![run]
    } else {
        let runs = run_ensemble(&init, model, &config.collapse, config.members, config.tau_end, &controls)?;
        write_ensemble_summary(dir, &summarize(&runs))?;
        let mut sink = CsvSink::create(dir, MEAN_Z.file, &MEAN_Z)?;
        for (tau, z) in mean_z_trace(&runs) {
            sink.numbers(&[tau, z])?;
        }
        sink.finish()?;
        files.extend(
            [
                crate::io::output::ENSEMBLE_SUMMARY.file,
                crate::io::output::AREA_HISTOGRAM.file,
                MEAN_Z.file,
            ]
            .map(String::from),
        );
        runs
    };
    write_trajectory(dir, &runs[0].trajectory)?;
    let jumps: Vec<MemberJumps> = runs
        .iter()
        .map(|r| MemberJumps {
            member: r.member,
            jumps: &r.jumps,
        })
        .collect();
    write_json(&dir.join(JUMPS_FILE), &jumps)?;
    for family in [PlotFamily::Populations, PlotFamily::MeanZ] {
        write_plot_script(dir, family)?;
        files.push(family.file_name().to_string());
    }
    let mut health = RunHealth::default();
    for r in &runs {
        let final_drift = (r.final_state.norm_sqr() - 1.0).abs();
        health.final_norm_drift = Some(health.final_norm_drift.unwrap_or(0.0).max(final_drift));
        health.max_norm_drift = Some(health.max_norm_drift.unwrap_or(0.0).max(r.health.max_norm_drift));
        health.max_tail_mass = Some(health.max_tail_mass.unwrap_or(0.0).max(r.health.max_tail_mass));
        health.accepted_steps += r.health.steps.accepted;
        health.rejected_steps += r.health.steps.rejected;
    }
    let first = &runs[0];
    let summary = RunSummary {
        final_mean_z: first.trajectory.last().map_or(0.0, |t| t.means.z),
        max_amplitude: first.trajectory.iter().map(|t| t.means.amplitude()).fold(0.0, f64::max),
        first_split: None,
        max_separation: None,
        jumps: Some(runs.iter().map(|r| r.jumps.len()).sum()),
    };
    Ok(Outcome { health, summary, files })
}

/// Child directory name for one sweep value.
pub fn sweep_child_name(parameter: &str, value: f64) -> String {
    format!("{parameter}_{value}")
}

fn run_sweep(config: &RunConfig, dir: &Path) -> Result<Outcome> {
    let spec = config.sweep.as_ref().ok_or_else(|| Error::domain("sweep", "missing [sweep] section"))?;
    let mut sink = CsvSink::create(dir, SWEEP_SUMMARY.file, &SWEEP_SUMMARY)?;
    let mut files = vec![SWEEP_SUMMARY.file.to_string()];
    let mut health = RunHealth::default();
    for &value in &spec.values {
        let name = sweep_child_name(spec.parameter.name(), value);
        let mut child = config.clone();
        child.mode = spec.mode;
        child.sweep = None;
        child.output = dir.join(&name);
        spec.parameter.apply(&mut child.params, value);
        let m = run(&child)?;
        let fmt = crate::io::output::fmt17;
        sink.row(&[
            spec.parameter.name().to_string(),
            fmt(value),
            name.clone(),
            fmt(m.summary.final_mean_z),
            fmt(m.summary.max_amplitude),
            m.health.max_norm_drift.map(fmt).unwrap_or_default(),
            m.summary.first_split.map(fmt).unwrap_or_default(),
            m.summary.max_separation.map(fmt).unwrap_or_default(),
        ])?;
        let worst = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => Some(x.max(y)),
            (x, y) => x.or(y),
        };
        health.max_norm_drift = worst(health.max_norm_drift, m.health.max_norm_drift);
        health.final_norm_drift = worst(health.final_norm_drift, m.health.final_norm_drift);
        health.max_tail_mass = worst(health.max_tail_mass, m.health.max_tail_mass);
        health.spin_length_drift = worst(health.spin_length_drift, m.health.spin_length_drift);
        health.accepted_steps += m.health.accepted_steps;
        health.rejected_steps += m.health.rejected_steps;
        files.push(format!("{name}/{MANIFEST_FILE}"));
    }
    sink.finish()?;
    Ok(Outcome {
        health,
        summary: RunSummary::default(),
        files,
    })
}

/// What a replay found in a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub records: usize,
    pub first_tau: Option<f64>,
    pub last_tau: Option<f64>,
    pub max_norm_deviation: f64,
    pub splits: Option<SplittingSeries>,
    pub files: Vec<PathBuf>,
}

/// Re-derives observables from a stored stream into `out`; with `analyze`
/// also the cat series and its split/merge cycles on `grid`.
pub fn replay(stream: &Path, grid: SpatialGrid, analyze: bool, out: &Path) -> Result<ReplayReport> {
    let reader = StreamReader::open(stream)?;
    fs::create_dir_all(out)?;
    let mut traj = CsvSink::create(out, TRAJECTORY.file, &TRAJECTORY)?;
    let mut cats = if analyze {
        Some(CsvSink::create(out, CAT_SERIES.file, &CAT_SERIES)?)
    } else {
        None
    };
    let mut basis: Option<HermiteBasis> = None;
    let mut reports = Vec::new();
    let mut report = ReplayReport {
        records: 0,
        first_tau: None,
        last_tau: None,
        max_norm_deviation: 0.0,
        splits: None,
        files: vec![out.join(TRAJECTORY.file)],
    };
    for state in reader {
        let s = state?;
        traj.numbers(&trajectory_row(s.tau, &means(&s), populations(&s), &correlations(&s)))?;
        report.records += 1;
        report.first_tau.get_or_insert(s.tau);
        report.last_tau = Some(s.tau);
        report.max_norm_deviation = report.max_norm_deviation.max((s.norm_sqr() - 1.0).abs());
        if let Some(sink) = cats.as_mut() {
            if basis.as_ref().is_none_or(|b| b.basis_size() < s.basis_size()) {
                basis = Some(hermite_basis(grid, s.basis_size())?);
            }
            let r = detect_peaks(&density(&s, basis.as_ref().expect("built above"))?, PROMINENCE_FLOOR)?;
            sink.row(&cat_row(&r))?;
            reports.push(r);
        }
    }
    traj.finish()?;
    if let Some(sink) = cats {
        sink.finish()?;
        report.files.push(out.join(CAT_SERIES.file));
        if reports.len() >= 2 {
            let series = splitting_series(&reports)?;
            write_splits(out, &series)?;
            report.files.push(out.join(crate::io::output::SPLITS.file));
            report.splits = Some(series);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drive::DriveProfile;

    fn small(mode: Mode, dir: &Path) -> RunConfig {
        let mut c = RunConfig::preset("fig3").unwrap();
        c.mode = mode;
        c.params.rabi = 2.0;
        c.params.coupling = 1.5;
        c.params.basis_size = 200;
        c.params.mean_z = -3.0;
        c.params.spin_theta = std::f64::consts::FRAC_PI_2;
        c.drive = DriveProfile::constant(0.0);
        c.tau_end = 4.0;
        c.snapshot_stride = 0.1;
        c.output_stride = 1.0;
        c.grid = SpatialGrid::new(-20.0, 20.0, 801).unwrap();
        c.collapse.decoherence_time = 1.0;
        c.output = dir.to_path_buf();
        c
    }

    #[test]
    fn quantum_run_writes_artifacts_and_replays() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("q");
        let m = run(&small(Mode::Quantum, &dir)).unwrap();
        for f in &m.files {
            assert!(dir.join(f).exists(), "{f}");
        }
        assert!(m.files.iter().any(|f| f == "density_00004.csv"));
        assert!(m.health.max_norm_drift.unwrap() < 1e-8);
        assert_eq!(read_manifest(&dir).unwrap(), m);

        let replayed = replay(&dir.join(STREAM_FILE), m.config.grid, true, &tmp.path().join("r")).unwrap();
        assert_eq!(replayed.records, 5);
        assert_eq!(replayed.first_tau, Some(0.0));
        assert!(replayed.max_norm_deviation < 1e-8);
    }

    #[test]
    fn jump_run_records_jumps() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("j");
        let m = run(&small(Mode::Jumps, &dir)).unwrap();
        assert!(dir.join(JUMPS_FILE).exists());
        assert!(m.summary.jumps.is_some());
        let mut c = small(Mode::Jumps, &tmp.path().join("e"));
        c.members = 3;
        let m = run(&c).unwrap();
        assert!(m.files.iter().any(|f| f == "ensemble_summary.csv"));
    }

    #[test]
    fn classical_and_sweep_runs() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = RunConfig::preset("fig2").unwrap();
        c.tau_end = 5.0;
        c.output = tmp.path().join("c");
        let m = run(&c).unwrap();
        assert!(m.health.spin_length_drift.unwrap() < 1e-8);

        let mut s = small(Mode::Sweep, &tmp.path().join("s"));
        s.sweep = Some(crate::io::config::SweepSpec {
            parameter: crate::io::config::SweepParameter::Coupling,
            values: vec![0.5, 1.0],
            mode: Mode::Quantum,
        });
        s.stream = false;
        run(&s).unwrap();
        assert!(tmp.path().join("s").join(sweep_child_name("coupling", 0.5)).join(MANIFEST_FILE).exists());
    }
}
