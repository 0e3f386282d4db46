//! CSV and JSON artifacts and the plotting scripts that read them.
//!
//! Every float is printed with 17 significant digits so values read back
//! bit-exactly. Column layouts are versioned in [`SCHEMAS`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::cat_analysis::{CatReport, Side, SplittingSeries};
use crate::classical::ClassicalState;
use crate::collapse_mc::{EnsembleSummary, JumpRecord, HISTOGRAM_BINS};
use crate::error::{Error, Result};
use crate::observables::{Correlations, DensitySnapshot, Means};

/// Schema of one CSV artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Schema {
    pub file: &'static str,
    pub version: u32,
    pub columns: &'static [&'static str],
}

pub const TRAJECTORY: Schema = Schema {
    file: "trajectory.csv",
    version: 1,
    columns: &["tau", "mean_z", "mean_p", "s_x", "s_y", "s_z", "p_up", "p_down", "r1", "r2", "norm"],
};

/// Per-snapshot density; files are named `density_00000.csv` onwards.
pub const DENSITY: Schema = Schema {
    file: "density_*.csv",
    version: 1,
    columns: &["z", "p_total", "p_up", "p_down"],
};

pub const DENSITY_INDEX: Schema = Schema {
    file: "density_index.csv",
    version: 1,
    columns: &["file", "tau"],
};

/// List cells hold `;`-separated values ordered by peak position.
pub const CAT_SERIES: Schema = Schema {
    file: "cat_series.csv",
    version: 1,
    columns: &[
        "tau",
        "n_peaks",
        "separation",
        "amplitude_ratio",
        "area_ratio",
        "minor_side",
        "positions",
        "areas",
        "up_areas",
        "down_areas",
    ],
};

pub const SPLITS: Schema = Schema {
    file: "splits.csv",
    version: 1,
    columns: &["split_tau", "merge_tau", "minor_side", "max_separation", "max_separation_tau"],
};

pub const CLASSICAL: Schema = Schema {
    file: "classical.csv",
    version: 1,
    columns: &["tau", "z", "p", "energy", "s_x", "s_y", "s_z"],
};

pub const MEAN_Z: Schema = Schema {
    file: "mean_z.csv",
    version: 1,
    columns: &["tau", "mean_z"],
};

pub const ENSEMBLE_SUMMARY: Schema = Schema {
    file: "ensemble_summary.csv",
    version: 1,
    columns: &[
        "members",
        "jumps",
        "minor_jumps",
        "expected_minor",
        "flips",
        "flips_on_minor",
        "flips_on_major",
        "minor_p_value",
    ],
};

pub const AREA_HISTOGRAM: Schema = Schema {
    file: "area_histogram.csv",
    version: 1,
    columns: &["minor_fraction_lo", "minor_fraction_hi", "count"],
};

pub const SWEEP_SUMMARY: Schema = Schema {
    file: "sweep_summary.csv",
    version: 1,
    columns: &[
        "parameter",
        "value",
        "directory",
        "final_mean_z",
        "max_amplitude",
        "max_norm_drift",
        "first_split",
        "max_separation",
    ],
};

pub const SCHEMAS: [Schema; 10] = [
    TRAJECTORY,
    DENSITY,
    DENSITY_INDEX,
    CAT_SERIES,
    SPLITS,
    CLASSICAL,
    MEAN_Z,
    ENSEMBLE_SUMMARY,
    AREA_HISTOGRAM,
    SWEEP_SUMMARY,
];

/// `x` with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt17).unwrap_or_default()
}

fn fmt_list(values: impl Iterator<Item = f64>) -> String {
    values.map(fmt17).collect::<Vec<_>>().join(";")
}

fn side_name(side: Option<Side>) -> &'static str {
    match side {
        Some(Side::Left) => "left",
        Some(Side::Right) => "right",
        None => "",
    }
}

/// CSV file with a fixed schema.
pub struct CsvSink {
    writer: csv::Writer<BufWriter<File>>,
    width: usize,
}

impl CsvSink {
    pub fn create(dir: &Path, file: &str, schema: &Schema) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(file))?));
        writer.write_record(schema.columns).map_err(csv_error)?;
        Ok(Self {
            writer,
            width: schema.columns.len(),
        })
    }

    pub fn row<S: AsRef<str>>(&mut self, cells: &[S]) -> Result<()> {
        if cells.len() != self.width {
            return Err(Error::Format(format!("row of {} cells for {} columns", cells.len(), self.width)));
        }
        self.writer
            .write_record(cells.iter().map(|c| c.as_ref()))
            .map_err(csv_error)
    }

    pub fn numbers(&mut self, values: &[f64]) -> Result<()> {
        let cells: Vec<String> = values.iter().map(|v| fmt17(*v)).collect();
        self.row(&cells)
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

pub fn trajectory_row(tau: f64, m: &Means, populations: (f64, f64), r: &Correlations) -> [f64; 11] {
    [
        tau,
        m.z,
        m.p,
        m.sx,
        m.sy,
        m.sz,
        populations.0,
        populations.1,
        r.r1,
        r.r2,
        populations.0 + populations.1,
    ]
}

pub fn cat_row(r: &CatReport) -> Vec<String> {
    vec![
        fmt17(r.tau),
        r.n_peaks().to_string(),
        fmt_opt(r.separation()),
        fmt_opt(r.amplitude_ratio()),
        fmt_opt(r.area_ratio()),
        side_name(r.minor_side()).to_string(),
        fmt_list(r.peaks.iter().map(|p| p.position)),
        fmt_list(r.peaks.iter().map(|p| p.area)),
        fmt_list(r.peaks.iter().map(|p| p.up_area)),
        fmt_list(r.peaks.iter().map(|p| p.down_area)),
    ]
}

pub fn classical_row(s: &ClassicalState) -> [f64; 7] {
    [s.tau, s.z, s.p, s.energy(), s.s[0], s.s[1], s.s[2]]
}

pub fn write_density(dir: &Path, file: &str, snapshot: &DensitySnapshot) -> Result<()> {
    let mut sink = CsvSink::create(dir, file, &DENSITY)?;
    for (i, z) in snapshot.grid.coordinates().into_iter().enumerate() {
        sink.numbers(&[z, snapshot.p_total[i], snapshot.p_up[i], snapshot.p_down[i]])?;
    }
    sink.finish()
}

pub fn density_file_name(k: usize) -> String {
    format!("density_{k:05}.csv")
}

pub fn write_splits(dir: &Path, series: &SplittingSeries) -> Result<()> {
    let mut sink = CsvSink::create(dir, SPLITS.file, &SPLITS)?;
    for c in &series.cycles {
        sink.row(&[
            fmt17(c.split_tau),
            fmt_opt(c.merge_tau),
            side_name(Some(c.minor_side)).to_string(),
            fmt17(c.max_separation),
            fmt17(c.max_separation_tau),
        ])?;
    }
    sink.finish()
}

pub fn write_ensemble_summary(dir: &Path, s: &EnsembleSummary) -> Result<()> {
    let mut sink = CsvSink::create(dir, ENSEMBLE_SUMMARY.file, &ENSEMBLE_SUMMARY)?;
    sink.row(&[
        s.members.to_string(),
        s.jumps.to_string(),
        s.minor_jumps.to_string(),
        fmt17(s.expected_minor),
        s.flips.to_string(),
        s.flips_on_minor.to_string(),
        s.flips_on_major.to_string(),
        fmt17(s.minor_p_value),
    ])?;
    sink.finish()?;
    let mut sink = CsvSink::create(dir, AREA_HISTOGRAM.file, &AREA_HISTOGRAM)?;
    let width = 0.5 / HISTOGRAM_BINS as f64;
    for (k, count) in s.minor_fraction_histogram.iter().enumerate() {
        sink.row(&[fmt17(k as f64 * width), fmt17((k + 1) as f64 * width), count.to_string()])?;
    }
    sink.finish()
}

/// Jump records of one ensemble member.
#[derive(Debug, Clone, Serialize)]
pub struct MemberJumps<'a> {
    pub member: usize,
    pub jumps: &'a [JumpRecord],
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Figure families that get a plotting script.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotFamily {
    /// `P(z, τ)` waterfall with up/down components.
    DensityWaterfall,
    /// `P₁₁(τ)` and `P₂₂(τ)`.
    Populations,
    /// `⟨z(τ)⟩`.
    MeanZ,
    /// Classical coordinate, momentum, energy and spin panels.
    Classical,
}

impl PlotFamily {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotFamily::DensityWaterfall => "plot_density.py",
            PlotFamily::Populations => "plot_populations.py",
            PlotFamily::MeanZ => "plot_mean_z.py",
            PlotFamily::Classical => "plot_classical.py",
        }
    }

    fn script(self) -> &'static str {
        match self {
            PlotFamily::DensityWaterfall => DENSITY_SCRIPT,
            PlotFamily::Populations => POPULATION_SCRIPT,
            PlotFamily::MeanZ => MEAN_Z_SCRIPT,
            PlotFamily::Classical => CLASSICAL_SCRIPT,
        }
    }
}

pub fn write_plot_script(dir: &Path, family: PlotFamily) -> Result<()> {
    fs::write(dir.join(family.file_name()), family.script())?;
    Ok(())
}

const DENSITY_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Waterfall of P(z, tau) with its spin-up and spin-down parts."""
import csv, sys, pathlib
import matplotlib.pyplot as plt

here = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else ".")
index = list(csv.DictReader(open(here / "density_index.csv")))
fig, axes = plt.subplots(1, 3, figsize=(15, 6), sharey=True)
offset = 0.0
for row in index:
    data = list(csv.DictReader(open(here / row["file"])))
    z = [float(r["z"]) for r in data]
    for ax, key in zip(axes, ["p_total", "p_up", "p_down"]):
        ax.plot(z, [offset + float(r[key]) for r in data], lw=0.6, color="k")
    offset += 0.2
for ax, title in zip(axes, ["P(z)", "P1(z)", "P2(z)"]):
    ax.set_title(title)
    ax.set_xlabel("z")
axes[0].set_ylabel("P, shifted by tau")
fig.tight_layout()
fig.savefig(here / "density.png", dpi=150)
"#;

const POPULATION_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Spin populations P11(tau) and P22(tau)."""
import csv, sys, pathlib
import matplotlib.pyplot as plt

here = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else ".")
rows = list(csv.DictReader(open(here / "trajectory.csv")))
tau = [float(r["tau"]) for r in rows]
plt.plot(tau, [float(r["p_up"]) for r in rows], label="P11")
plt.plot(tau, [float(r["p_down"]) for r in rows], label="P22")
plt.xlabel("tau")
plt.legend()
plt.savefig(here / "populations.png", dpi=150)
"#;

const MEAN_Z_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Mean cantilever coordinate <z(tau)>."""
import csv, sys, pathlib
import matplotlib.pyplot as plt

here = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else ".")
source = here / "mean_z.csv"
if not source.exists():
    source = here / "trajectory.csv"
rows = list(csv.DictReader(open(source)))
plt.plot([float(r["tau"]) for r in rows], [float(r["mean_z"]) for r in rows], lw=0.6)
plt.xlabel("tau")
plt.ylabel("<z>")
plt.savefig(here / "mean_z.png", dpi=150)
"#;

const CLASSICAL_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Classical run: z, p, E0 and the three spin components against tau."""
import csv, sys, pathlib
import matplotlib.pyplot as plt

here = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else ".")
rows = list(csv.DictReader(open(here / "classical.csv")))
tau = [float(r["tau"]) for r in rows]
fig, axes = plt.subplots(3, 2, figsize=(10, 9), sharex=True)
for ax, key in zip(axes.flat, ["z", "p", "energy", "s_x", "s_y", "s_z"]):
    ax.plot(tau, [float(r[key]) for r in rows], lw=0.5)
    ax.set_ylabel(key)
for ax in axes[-1]:
    ax.set_xlabel("tau")
fig.tight_layout()
fig.savefig(here / "classical.png", dpi=150)
"#;
