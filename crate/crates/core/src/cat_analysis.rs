//! Schrödinger-cat structure in density snapshots: peak detection with
//! basins, the separation `d`, per-peak spin content and split/merge cycles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::{DensitySnapshot, SpatialGrid};

/// Default relative prominence a local maximum needs to count as a peak.
pub const PROMINENCE_FLOOR: f64 = 1e-4;

/// Consecutive two-peak snapshots needed before a split is reported.
pub const SPLIT_PERSISTENCE: usize = 3;

/// One accepted peak of `P(z)` and the basin it owns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Grid index of the maximum.
    pub index: usize,
    pub position: f64,
    pub amplitude: f64,
    pub prominence: f64,
    /// Basin as an inclusive grid-index range; neighbours share their
    /// boundary point.
    pub basin: (usize, usize),
    /// Integral of `p_total` over the basin.
    pub area: f64,
    /// Integral of `p_up` over the basin.
    pub up_area: f64,
    /// Integral of `p_down` over the basin.
    pub down_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatReport {
    pub tau: f64,
    /// Peaks ordered by position.
    pub peaks: Vec<Peak>,
}

impl CatReport {
    pub fn n_peaks(&self) -> usize {
        self.peaks.len()
    }

    pub fn peak_positions(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.position).collect()
    }

    pub fn peak_amplitudes(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.amplitude).collect()
    }

    pub fn peak_areas(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.area).collect()
    }

    /// `(up, down)` area of every basin.
    pub fn per_peak_spin(&self) -> Vec<(f64, f64)> {
        self.peaks.iter().map(|p| (p.up_area, p.down_area)).collect()
    }

    /// Index of the tallest peak.
    pub fn major(&self) -> Option<usize> {
        self.dominant_pair().map(|(major, _)| major)
    }

    /// Indices of the two tallest peaks, tallest first.
    pub fn dominant_pair(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.peaks.len()).collect();
        order.sort_by(|&a, &b| self.peaks[b].amplitude.total_cmp(&self.peaks[a].amplitude));
        match order.as_slice() {
            [] => None,
            [only] => Some((*only, *only)),
            [a, b, ..] => Some((*a, *b)),
        }
    }

    /// Distance between the two tallest peaks; `None` below two peaks.
    pub fn separation(&self) -> Option<f64> {
        if self.peaks.len() < 2 {
            return None;
        }
        let (a, b) = self.dominant_pair()?;
        Some((self.peaks[a].position - self.peaks[b].position).abs())
    }

    /// Major-to-minor amplitude ratio of the dominant pair.
    pub fn amplitude_ratio(&self) -> Option<f64> {
        if self.peaks.len() < 2 {
            return None;
        }
        let (a, b) = self.dominant_pair()?;
        Some(self.peaks[a].amplitude / self.peaks[b].amplitude)
    }

    /// Major-to-minor area ratio of the dominant pair.
    pub fn area_ratio(&self) -> Option<f64> {
        if self.peaks.len() < 2 {
            return None;
        }
        let (a, b) = self.dominant_pair()?;
        Some(self.peaks[a].area / self.peaks[b].area)
    }

    /// Side of the minor peak relative to the major one.
    pub fn minor_side(&self) -> Option<Side> {
        if self.peaks.len() < 2 {
            return None;
        }
        let (a, b) = self.dominant_pair()?;
        Some(if self.peaks[b].position < self.peaks[a].position {
            Side::Left
        } else {
            Side::Right
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Finds the peaks of `P(z)` whose prominence is at least
/// `prominence_floor · max P`, and partitions the grid into their basins.
pub fn detect_peaks(snapshot: &DensitySnapshot, prominence_floor: f64) -> Result<CatReport> {
    let p = &snapshot.p_total;
    let top = p.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::domain("density", "all-zero density has no peaks"));
    }
    if !(prominence_floor >= 0.0) {
        return Err(Error::domain("prominence_floor", "must be non-negative"));
    }
    let threshold = prominence_floor * top;
    let maxima: Vec<(usize, f64)> = local_maxima(p)
        .into_iter()
        .map(|i| (i, prominence(p, i)))
        .filter(|&(_, prom)| prom >= threshold)
        .collect();

    let last = p.len() - 1;
    let mut bounds = Vec::with_capacity(maxima.len() + 1);
    bounds.push(0);
    for w in maxima.windows(2) {
        let (l, r) = (w[0].0, w[1].0);
        bounds.push(argmin(&p[l..=r]) + l);
    }
    bounds.push(last);

    let dz = snapshot.grid.spacing();
    let peaks = maxima
        .iter()
        .enumerate()
        .map(|(k, &(index, prom))| {
            let basin = (bounds[k], bounds[k + 1]);
            let area_of = |v: &[f64]| segment_integral(v, basin, dz);
            Peak {
                index,
                position: snapshot.grid.z(index),
                amplitude: p[index],
                prominence: prom,
                basin,
                area: area_of(p),
                up_area: area_of(&snapshot.p_up),
                down_area: area_of(&snapshot.p_down),
            }
        })
        .collect();
    Ok(CatReport {
        tau: snapshot.tau,
        peaks,
    })
}

/// Local maxima; a plateau counts once, at its left end.
fn local_maxima(p: &[f64]) -> Vec<usize> {
    let n = p.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && p[j + 1] == p[i] {
            j += 1;
        }
        let left_lower = i == 0 || p[i - 1] < p[i];
        let right_lower = j == n - 1 || p[j + 1] < p[j];
        if left_lower && right_lower && p[i] > 0.0 {
            out.push(i);
        }
        i = j + 1;
    }
    out
}

/// Topographic prominence of the maximum at `i`: its height above the higher
/// of the two lowest points reached before climbing above it on each side.
fn prominence(p: &[f64], i: usize) -> f64 {
    let h = p[i];
    let mut left_min = h;
    for &v in p[..i].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &p[i + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    // A side that runs into the grid edge is bounded by the edge value.
    h - left_min.max(right_min)
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Trapezoid integral over an inclusive index range; adjacent ranges sharing
/// an endpoint sum to the full-grid trapezoid integral.
fn segment_integral(v: &[f64], (a, b): (usize, usize), dz: f64) -> f64 {
    crate::observables::trapezoid(&v[a..=b], dz)
}

/// Fraction of each basin's probability carried by spin up and spin down.
pub fn per_peak_spin_content(report: &CatReport) -> Vec<(f64, f64)> {
    report
        .peaks
        .iter()
        .map(|p| {
            let total = p.up_area + p.down_area;
            if total > 0.0 {
                (p.up_area / total, p.down_area / total)
            } else {
                (0.0, 0.0)
            }
        })
        .collect()
}

/// One interval during which the density has two or more peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCycle {
    pub split_tau: f64,
    /// First snapshot back at one peak; `None` if the series ends split.
    pub merge_tau: Option<f64>,
    /// Side of the minor peak at the split.
    pub minor_side: Side,
    /// Largest separation reached during the cycle.
    pub max_separation: f64,
    /// `τ` at which that separation occurred.
    pub max_separation_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingSeries {
    pub cycles: Vec<SplitCycle>,
    /// `(τ, d)` with `d = None` while single-peaked.
    pub separation: Vec<(f64, Option<f64>)>,
}

impl SplittingSeries {
    pub fn first_split(&self) -> Option<f64> {
        self.cycles.first().map(|c| c.split_tau)
    }

    /// Mean interval between successive splits.
    pub fn split_interval(&self) -> Option<f64> {
        mean_gap(self.cycles.iter().map(|c| c.split_tau))
    }

    /// Mean interval between successive splits with the minor peak on the
    /// same side, i.e. the recurrence period of the full left/right cycle.
    pub fn period(&self) -> Option<f64> {
        let gaps: Vec<f64> = [Side::Left, Side::Right]
            .iter()
            .flat_map(|&side| {
                let taus: Vec<f64> = self.cycles.iter().filter(|c| c.minor_side == side).map(|c| c.split_tau).collect();
                taus.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>()
            })
            .collect();
        if gaps.is_empty() {
            None
        } else {
            Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
        }
    }

    /// Largest separation over the whole series.
    pub fn max_separation(&self) -> Option<(f64, f64)> {
        self.cycles
            .iter()
            .map(|c| (c.max_separation_tau, c.max_separation))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn mean_gap(taus: impl Iterator<Item = f64>) -> Option<f64> {
    let taus: Vec<f64> = taus.collect();
    if taus.len() < 2 {
        return None;
    }
    Some((taus[taus.len() - 1] - taus[0]) / (taus.len() - 1) as f64)
}

/// Folds a time-ordered report series into split/merge cycles. A split is
/// counted only when at least [`SPLIT_PERSISTENCE`] consecutive snapshots
/// show two or more peaks.
pub fn splitting_series(reports: &[CatReport]) -> Result<SplittingSeries> {
    if reports.len() < 2 {
        return Err(Error::domain("reports", "need at least two snapshots"));
    }
    if reports.windows(2).any(|w| !(w[1].tau > w[0].tau)) {
        return Err(Error::domain("reports", "snapshots must be strictly time-ordered"));
    }
    let separation = reports.iter().map(|r| (r.tau, r.separation())).collect();
    let mut cycles = Vec::new();
    let mut i = 0;
    while i < reports.len() {
        if reports[i].n_peaks() < 2 {
            i += 1;
            continue;
        }
        let start = i;
        while i < reports.len() && reports[i].n_peaks() >= 2 {
            i += 1;
        }
        if i - start < SPLIT_PERSISTENCE {
            continue;
        }
        let (max_separation_tau, max_separation) = reports[start..i]
            .iter()
            .filter_map(|r| r.separation().map(|d| (r.tau, d)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((reports[start].tau, 0.0));
        cycles.push(SplitCycle {
            split_tau: reports[start].tau,
            merge_tau: reports.get(i).map(|r| r.tau),
            minor_side: reports[start].minor_side().unwrap_or(Side::Left),
            max_separation,
            max_separation_tau,
        });
    }
    Ok(SplittingSeries { cycles, separation })
}

/// Basin-weighted sanity helper: `Σ up_area` over all peaks, which equals
/// `P₁₁` up to grid quadrature error.
pub fn total_up_area(report: &CatReport) -> f64 {
    report.peaks.iter().map(|p| p.up_area).sum()
}

/// Density of a Gaussian mixture, used for synthetic inputs.
pub fn gaussian_mixture(grid: SpatialGrid, tau: f64, parts: &[(f64, f64, f64)]) -> Result<DensitySnapshot> {
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let density = |z: f64| -> f64 {
        parts
            .iter()
            .map(|&(w, mu, sigma)| w * norm / sigma * (-0.5 * ((z - mu) / sigma).powi(2)).exp())
            .sum()
    };
    let up: Vec<f64> = grid.coordinates().into_iter().map(density).collect();
    let down = vec![0.0; grid.points];
    DensitySnapshot::from_components(tau, grid, up, down)
}
