//! Schrödinger evolution interrupted by collapses of the cat state onto one
//! of its peaks.
//!
//! A collapse is scheduled after each segment life-time but only fires once
//! the density actually shows two or more peaks. The peak is drawn with
//! probability proportional to its integrated area. The chosen basin is cut
//! out of both spinor components alike, so the spin is never projected onto
//! an eigenstate.
//!
//! Ensemble members that have made identical choices so far carry
//! bit-identical states, so they share one propagator and only split when
//! their draws diverge. The result is the same as running every member on
//! its own.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::sync::{Condvar, Mutex};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cat_analysis::{detect_peaks, CatReport, PROMINENCE_FLOOR};
use crate::error::{Error, Result};
use crate::observables::{
    correlations, density, hermite_basis, means, populations, Correlations, HermiteBasis, Means, SpatialGrid,
};
use crate::quantum::{EvolveControls, Propagator, QuantumHealth, QuantumModel, SpinorFockState};

/// Re-expanded coefficients with `|c|²` below this are quadrature noise and
/// are dropped so the propagator's active window stays tight.
pub const FLUSH_LEVEL: f64 = 1e-24;

const LIFETIME_STREAM: u64 = 0;
const CHOICE_STREAM: u64 = 1;

/// Counter-based generator: every draw is a pure function of
/// `(seed, stream, counter)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&self, stream: u64, counter: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.set_word_pos(u128::from(counter) * 2);
        rng.random::<f64>()
    }

    /// Stream owned by ensemble member `member` for draws of kind `purpose`.
    fn stream(member: usize, purpose: u64) -> u64 {
        (member as u64) << 1 | purpose
    }
}

/// How the segment life-times `τ_dk` are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lifetimes {
    /// Every segment lasts `decoherence_time`.
    Constant,
    /// Exponentially distributed with mean `decoherence_time`.
    Exponential,
    /// Given sequence; collapses stop once it is exhausted.
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseSchedule {
    pub decoherence_time: f64,
    pub lifetimes: Lifetimes,
    pub rng_seed: u64,
}

impl Default for CollapseSchedule {
    fn default() -> Self {
        Self {
            decoherence_time: TAU,
            lifetimes: Lifetimes::Constant,
            rng_seed: 0,
        }
    }
}

impl CollapseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.decoherence_time > 0.0 && self.decoherence_time.is_finite()) {
            return Err(Error::domain("decoherence_time", "must be positive and finite"));
        }
        if let Lifetimes::Explicit { values } = &self.lifetimes {
            if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::domain("lifetimes", "all life-times must be positive and finite"));
            }
        }
        Ok(())
    }

    /// Life-time of segment `k` for ensemble member `member`.
    pub fn lifetime(&self, member: usize, k: u64) -> Option<f64> {
        match &self.lifetimes {
            Lifetimes::Constant => Some(self.decoherence_time),
            Lifetimes::Exponential => {
                let u = CounterRng::new(self.rng_seed).uniform(CounterRng::stream(member, LIFETIME_STREAM), k);
                Some(-self.decoherence_time * (1.0 - u).ln())
            }
            Lifetimes::Explicit { values } => usize::try_from(k).ok().and_then(|k| values.get(k).copied()),
        }
    }

    /// Uniform draw deciding the peak of jump `k` of member `member`.
    pub fn choice_draw(&self, member: usize, k: u64) -> f64 {
        CounterRng::new(self.rng_seed).uniform(CounterRng::stream(member, CHOICE_STREAM), k)
    }
}

/// Spatial window cut around the chosen basin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CollapseWindow {
    /// Weight one on the inclusive basin, zero elsewhere.
    Sharp,
    /// Cosine ramp `width_cells` grid cells wide centred on each basin boundary.
    Taper { width_cells: f64 },
    /// Error-function edge of standard width `width_cells` grid cells.
    Erf { width_cells: f64 },
}

/// Default edge width of the erf window. A cosine ramp is only C¹, so its
/// Fock re-expansion decays algebraically and reaches the top of the basis.
pub const DEFAULT_EDGE_CELLS: f64 = 10.0;

impl Default for CollapseWindow {
    fn default() -> Self {
        CollapseWindow::Erf {
            width_cells: DEFAULT_EDGE_CELLS,
        }
    }
}

impl CollapseWindow {
    /// Window weights over a grid of `points` points for the inclusive
    /// basin `(a, b)`. Basins touching the grid edge are open on that side.
    pub fn weights(&self, points: usize, basin: (usize, usize)) -> Vec<f64> {
        let (a, b) = basin;
        let last = points - 1;
        (0..points)
            .map(|i| {
                let left = if a == 0 { f64::INFINITY } else { i as f64 - a as f64 };
                let right = if b == last { f64::INFINITY } else { b as f64 - i as f64 };
                let s = left.min(right);
                match *self {
                    CollapseWindow::Sharp => {
                        if s >= 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    CollapseWindow::Taper { width_cells } => {
                        let half = 0.5 * width_cells;
                        if s >= half {
                            1.0
                        } else if s <= -half {
                            0.0
                        } else {
                            0.5 * (1.0 + (PI * s / width_cells).sin())
                        }
                    }
                    CollapseWindow::Erf { width_cells } => 0.5 * (1.0 + libm::erf(s / width_cells)),
                }
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CollapseWindow::Sharp => Ok(()),
            CollapseWindow::Taper { width_cells } | CollapseWindow::Erf { width_cells }
                if width_cells > 0.0 && width_cells.is_finite() =>
            {
                Ok(())
            }
            _ => Err(Error::domain("width_cells", "must be positive and finite")),
        }
    }
}

/// Projects both spinor components onto the basin of peak `choice`, re-expands
/// in the Fock basis and renormalizes.
pub fn collapse(
    state: &SpinorFockState,
    report: &CatReport,
    choice: usize,
    basis: &HermiteBasis,
    window: CollapseWindow,
) -> Result<SpinorFockState> {
    if report.n_peaks() < 2 {
        return Err(Error::Precondition(format!(
            "collapse needs at least two peaks, report at tau = {} has {}",
            report.tau,
            report.n_peaks()
        )));
    }
    let Some(peak) = report.peaks.get(choice) else {
        return Err(Error::Precondition(format!(
            "peak {choice} out of range for {} peaks",
            report.n_peaks()
        )));
    };
    let n = state.basis_size();
    let points = basis.grid().points;
    if basis.basis_size() < n {
        return Err(Error::Precondition(format!(
            "hermite basis holds {} functions, state needs {n}",
            basis.basis_size()
        )));
    }
    if peak.basin.0 > peak.basin.1 || peak.basin.1 >= points {
        return Err(Error::Precondition(format!(
            "basin {:?} does not fit a grid of {points} points",
            peak.basin
        )));
    }
    window.validate()?;
    let weights = window.weights(points, peak.basin);
    let cut = |coeffs: Vec<Complex64>| -> Vec<Complex64> {
        let mut f = basis.synthesize(&coeffs);
        for (v, w) in f.iter_mut().zip(&weights) {
            *v *= w;
        }
        let mut c = basis.project(&f);
        c.truncate(n);
        for x in c.iter_mut() {
            if x.norm_sqr() < FLUSH_LEVEL {
                *x = Complex64::new(0.0, 0.0);
            }
        }
        c
    };
    let up = cut(state.up_amplitudes());
    let down = cut(state.down_amplitudes());
    let mut out = SpinorFockState::new(&up, &down, state.tau)?;
    if !(out.norm_sqr() > 0.0) {
        return Err(Error::Precondition(format!("basin of peak {choice} carries no weight")));
    }
    out.normalize();
    Ok(out)
}

/// Area-weighted categorical draw from a uniform `u ∈ [0, 1)`.
pub fn sample_peak(report: &CatReport, u: f64) -> Result<usize> {
    if report.n_peaks() < 2 {
        return Err(Error::Precondition(format!(
            "sampling needs at least two peaks, report has {}",
            report.n_peaks()
        )));
    }
    let areas = report.peak_areas();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Precondition("peak areas sum to zero".into()));
    }
    let target = u * total;
    let mut acc = 0.0;
    for (k, a) in areas.iter().enumerate() {
        acc += a;
        if target < acc {
            return Ok(k);
        }
    }
    Ok(areas.len() - 1)
}

/// Index of the peak with the largest area.
pub fn largest_area(report: &CatReport) -> Option<usize> {
    (0..report.n_peaks()).max_by(|&a, &b| report.peaks[a].area.total_cmp(&report.peaks[b].area))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakKind {
    Major,
    Minor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub tau: f64,
    pub chosen: usize,
    pub kind: PeakKind,
    pub position: f64,
    /// `(P₁₁, P₂₂)` just before the collapse.
    pub pre: (f64, f64),
    /// `(P₁₁, P₂₂)` just after the collapse.
    pub post: (f64, f64),
    pub areas: Vec<f64>,
    pub post_norm: f64,
}

impl JumpRecord {
    /// True when the ordering of `P₁₁` and `P₂₂` reversed.
    pub fn flipped(&self) -> bool {
        (self.pre.0 > self.pre.1) != (self.post.0 > self.post.1)
    }

    /// Probability the draw had of landing on a minor peak.
    pub fn minor_probability(&self) -> f64 {
        let total: f64 = self.areas.iter().sum();
        let major = self.areas.iter().copied().fold(0.0, f64::max);
        if total > 0.0 {
            1.0 - major / total
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub tau: f64,
    pub means: Means,
    pub correlations: Correlations,
    pub p_up: f64,
    pub p_down: f64,
}

impl TrajectoryPoint {
    fn of(state: &SpinorFockState) -> Self {
        let (p_up, p_down) = populations(state);
        Self {
            tau: state.tau,
            means: means(state),
            correlations: correlations(state),
            p_up,
            p_down,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRun {
    pub member: usize,
    pub jumps: Vec<JumpRecord>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_state: SpinorFockState,
    pub health: QuantumHealth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpControls {
    pub evolve: EvolveControls,
    pub grid: SpatialGrid,
    pub prominence_floor: f64,
    pub window: CollapseWindow,
}

impl Default for JumpControls {
    fn default() -> Self {
        Self {
            evolve: EvolveControls::default(),
            grid: SpatialGrid::default(),
            prominence_floor: PROMINENCE_FLOOR,
            window: CollapseWindow::default(),
        }
    }
}

#[derive(Debug, Clone)]
struct Member {
    id: usize,
    jumps: Vec<JumpRecord>,
    segment: u64,
    deadline: Option<f64>,
}

/// Members sharing one state history.
#[derive(Debug, Clone)]
struct Branch {
    prop: Propagator,
    step: u64,
    members: Vec<Member>,
    trajectory: Vec<TrajectoryPoint>,
}

struct Context<'a> {
    schedule: &'a CollapseSchedule,
    controls: &'a JumpControls,
    basis: &'a HermiteBasis,
    start: f64,
    tau_end: f64,
}

enum Outcome {
    Finished(Vec<JumpRun>),
    Split(Vec<Branch>),
}

impl Context<'_> {
    fn target(&self, step: u64) -> f64 {
        (self.start + self.controls.evolve.snapshot_stride * step as f64).min(self.tau_end)
    }

    /// Advances `branch` until it either reaches the end or its members
    /// choose different peaks.
    fn advance(&self, mut branch: Branch, on_snapshot: &mut dyn FnMut(&SpinorFockState) -> Result<()>) -> Result<Outcome> {
        loop {
            let target = self.target(branch.step);
            branch.prop.advance_to(target)?;
            branch.step += 1;
            let state = branch.prop.state();
            let due = branch.members.iter().any(|m| m.deadline.is_some_and(|d| d <= state.tau));
            let report = if due {
                let r = detect_peaks(&density(&state, self.basis)?, self.controls.prominence_floor)?;
                (r.n_peaks() >= 2).then_some(r)
            } else {
                None
            };
            let Some(report) = report else {
                on_snapshot(&state)?;
                branch.trajectory.push(TrajectoryPoint::of(&state));
                if target >= self.tau_end {
                    return Ok(Outcome::Finished(finish(branch, state)));
                }
                continue;
            };

            // Bucket members by what happens to them: `None` keeps the
            // current state, `Some(k)` collapses onto peak `k`.
            let mut buckets: BTreeMap<Option<usize>, Vec<Member>> = BTreeMap::new();
            for m in std::mem::take(&mut branch.members) {
                let fires = m.deadline.is_some_and(|d| d <= state.tau);
                let key = if fires {
                    Some(sample_peak(&report, self.schedule.choice_draw(m.id, m.jumps.len() as u64))?)
                } else {
                    None
                };
                buckets.entry(key).or_default().push(m);
            }
            let pre = populations(&state);
            let major = largest_area(&report);
            let mut children = Vec::with_capacity(buckets.len());
            let single = buckets.len() == 1;
            for (key, mut members) in buckets {
                let mut child = Branch {
                    prop: branch.prop.clone(),
                    step: branch.step,
                    members: Vec::new(),
                    trajectory: if single {
                        std::mem::take(&mut branch.trajectory)
                    } else {
                        branch.trajectory.clone()
                    },
                };
                let current = match key {
                    None => state.clone(),
                    Some(choice) => {
                        let post_state = collapse(&state, &report, choice, self.basis, self.controls.window)?;
                        child.prop.replace_state(&post_state)?;
                        let record = JumpRecord {
                            tau: state.tau,
                            chosen: choice,
                            kind: if Some(choice) == major {
                                PeakKind::Major
                            } else {
                                PeakKind::Minor
                            },
                            position: report.peaks[choice].position,
                            pre,
                            post: populations(&post_state),
                            areas: report.peak_areas(),
                            post_norm: post_state.norm_sqr(),
                        };
                        for m in members.iter_mut() {
                            m.jumps.push(record.clone());
                            m.segment += 1;
                            m.deadline = self.schedule.lifetime(m.id, m.segment).map(|l| state.tau + l);
                        }
                        post_state
                    }
                };
                child.members = members;
                child.trajectory.push(TrajectoryPoint::of(&current));
                if single {
                    on_snapshot(&current)?;
                }
                children.push((child, current));
            }
            if single {
                let (child, current) = children.pop().expect("one bucket");
                branch = child;
                if target >= self.tau_end {
                    return Ok(Outcome::Finished(finish(branch, current)));
                }
                continue;
            }
            if target >= self.tau_end {
                return Ok(Outcome::Finished(
                    children.into_iter().flat_map(|(c, s)| finish(c, s)).collect(),
                ));
            }
            return Ok(Outcome::Split(children.into_iter().map(|(c, _)| c).collect()));
        }
    }
}

fn finish(branch: Branch, state: SpinorFockState) -> Vec<JumpRun> {
    let health = branch.prop.health();
    branch
        .members
        .into_iter()
        .map(|m| JumpRun {
            member: m.id,
            jumps: m.jumps,
            trajectory: branch.trajectory.clone(),
            final_state: state.clone(),
            health,
        })
        .collect()
}

fn root_branch(
    init: &SpinorFockState,
    model: QuantumModel,
    schedule: &CollapseSchedule,
    members: &[usize],
    tau_end: f64,
    controls: &JumpControls,
) -> Result<Branch> {
    schedule.validate()?;
    controls.window.validate()?;
    if !(tau_end > init.tau) {
        return Err(Error::domain("tau_end", format!("must exceed {}", init.tau)));
    }
    if members.is_empty() {
        return Err(Error::domain("members", "ensemble needs at least one member"));
    }
    let prop = Propagator::new(init, model, controls.evolve)?;
    Ok(Branch {
        prop,
        step: 1,
        members: members
            .iter()
            .map(|&id| Member {
                id,
                jumps: Vec::new(),
                segment: 0,
                deadline: schedule.lifetime(id, 0).map(|l| init.tau + l),
            })
            .collect(),
        trajectory: vec![TrajectoryPoint::of(init)],
    })
}

/// Single jump trajectory drawing from the streams of ensemble member
/// `member`. `on_snapshot` sees every snapshot after any collapse at that
/// time, starting with the initial state.
pub fn run_with_jumps_observed<F>(
    init: &SpinorFockState,
    model: QuantumModel,
    schedule: &CollapseSchedule,
    member: usize,
    tau_end: f64,
    controls: &JumpControls,
    mut on_snapshot: F,
) -> Result<JumpRun>
where
    F: FnMut(&SpinorFockState) -> Result<()>,
{
    let root = root_branch(init, model, schedule, &[member], tau_end, controls)?;
    let basis = hermite_basis(controls.grid, init.basis_size())?;
    let ctx = Context {
        schedule,
        controls,
        basis: &basis,
        start: init.tau,
        tau_end,
    };
    on_snapshot(init)?;
    match ctx.advance(root, &mut on_snapshot)? {
        Outcome::Finished(mut runs) => Ok(runs.remove(0)),
        Outcome::Split(_) => unreachable!("a single member never splits"),
    }
}

/// Single jump trajectory on the streams of member 0.
pub fn run_with_jumps(
    init: &SpinorFockState,
    model: QuantumModel,
    schedule: &CollapseSchedule,
    tau_end: f64,
    controls: &JumpControls,
) -> Result<JumpRun> {
    run_with_jumps_observed(init, model, schedule, 0, tau_end, controls, |_| Ok(()))
}

/// Runs `members` jump trajectories with independent random streams. The
/// result is ordered by member index and does not depend on thread count.
pub fn run_ensemble(
    init: &SpinorFockState,
    model: QuantumModel,
    schedule: &CollapseSchedule,
    members: usize,
    tau_end: f64,
    controls: &JumpControls,
) -> Result<Vec<JumpRun>> {
    let ids: Vec<usize> = (0..members).collect();
    let root = root_branch(init, model, schedule, &ids, tau_end, controls)?;
    let basis = hermite_basis(controls.grid, init.basis_size())?;
    let ctx = Context {
        schedule,
        controls,
        basis: &basis,
        start: init.tau,
        tau_end,
    };

    struct Shared {
        queue: Vec<Branch>,
        active: usize,
        runs: Vec<JumpRun>,
        errors: Vec<(usize, Error)>,
    }
    let shared = Mutex::new(Shared {
        queue: vec![root],
        active: 0,
        runs: Vec::with_capacity(members),
        errors: Vec::new(),
    });
    let wake = Condvar::new();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(members);

    let work = || loop {
        let branch = {
            let mut s = shared.lock().expect("ensemble lock");
            loop {
                if !s.errors.is_empty() {
                    return;
                }
                if let Some(b) = s.queue.pop() {
                    s.active += 1;
                    break b;
                }
                if s.active == 0 {
                    return;
                }
                s = wake.wait(s).expect("ensemble lock");
            }
        };
        let first_member = branch.members.iter().map(|m| m.id).min().unwrap_or(0);
        let outcome = ctx.advance(branch, &mut |_| Ok(()));
        let mut s = shared.lock().expect("ensemble lock");
        s.active -= 1;
        match outcome {
            Ok(Outcome::Finished(runs)) => s.runs.extend(runs),
            Ok(Outcome::Split(children)) => s.queue.extend(children),
            Err(e) => s.errors.push((first_member, e)),
        }
        wake.notify_all();
    };
    std::thread::scope(|scope| {
        for _ in 1..workers {
            scope.spawn(work);
        }
        work();
    });

    let mut s = shared.into_inner().expect("ensemble lock");
    if !s.errors.is_empty() {
        s.errors.sort_by_key(|(m, _)| *m);
        return Err(s.errors.remove(0).1);
    }
    s.runs.sort_by_key(|r| r.member);
    Ok(s.runs)
}

/// Jump and flip counts over an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub members: usize,
    pub jumps: usize,
    pub minor_jumps: usize,
    /// Expected number of minor jumps given the areas at each jump.
    pub expected_minor: f64,
    pub flips: usize,
    pub flips_on_minor: usize,
    pub flips_on_major: usize,
    /// Histogram of the minor-area fraction at jump times over
    /// `[0, 0.5]` in equal bins.
    pub minor_fraction_histogram: Vec<usize>,
    /// Two-sided probability of a minor-jump count at least this unusual.
    pub minor_p_value: f64,
}

pub const HISTOGRAM_BINS: usize = 10;

pub fn summarize(runs: &[JumpRun]) -> EnsembleSummary {
    let records: Vec<&JumpRecord> = runs.iter().flat_map(|r| &r.jumps).collect();
    let mut histogram = vec![0; HISTOGRAM_BINS];
    for r in &records {
        let bin = ((r.minor_probability() / 0.5) * HISTOGRAM_BINS as f64) as usize;
        histogram[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }
    let minor = records.iter().filter(|r| r.kind == PeakKind::Minor).count();
    let probabilities: Vec<f64> = records.iter().map(|r| r.minor_probability()).collect();
    let flips_on = |kind| records.iter().filter(|r| r.kind == kind && r.flipped()).count();
    EnsembleSummary {
        members: runs.len(),
        jumps: records.len(),
        minor_jumps: minor,
        expected_minor: probabilities.iter().sum(),
        flips: records.iter().filter(|r| r.flipped()).count(),
        flips_on_minor: flips_on(PeakKind::Minor),
        flips_on_major: flips_on(PeakKind::Major),
        minor_fraction_histogram: histogram,
        minor_p_value: poisson_binomial_p_value(&probabilities, minor),
    }
}

/// Two-sided p-value of observing `k` successes among independent trials
/// with the given success probabilities: the total probability of all
/// counts no more likely than `k`.
pub fn poisson_binomial_p_value(probabilities: &[f64], k: usize) -> f64 {
    let mut pmf = vec![1.0];
    for &p in probabilities {
        let mut next = vec![0.0; pmf.len() + 1];
        for (j, &w) in pmf.iter().enumerate() {
            next[j] += w * (1.0 - p);
            next[j + 1] += w * p;
        }
        pmf = next;
    }
    let Some(&observed) = pmf.get(k) else {
        return 0.0;
    };
    let slack = observed * (1.0 + 1e-9);
    pmf.iter().filter(|&&w| w <= slack).sum::<f64>().min(1.0)
}

/// Ensemble average of `⟨z⟩` at each snapshot time.
pub fn mean_z_trace(runs: &[JumpRun]) -> Vec<(f64, f64)> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    (0..first.trajectory.len())
        .map(|i| {
            let tau = first.trajectory[i].tau;
            let sum: f64 = runs.iter().filter_map(|r| r.trajectory.get(i)).map(|p| p.means.z).sum();
            (tau, sum / runs.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drive::DriveProfile;
    use crate::quantum::{coherent_state, evolve, CoherentInit, Spinor};

    const N: usize = 400;

    fn grid() -> SpatialGrid {
        SpatialGrid::new(-20.0, 20.0, 801).unwrap()
    }

    fn controls() -> JumpControls {
        JumpControls {
            evolve: EvolveControls {
                snapshot_stride: 0.1,
                ..EvolveControls::default()
            },
            grid: grid(),
            ..JumpControls::default()
        }
    }

    /// Coherent peaks at `z = ∓6` with spin amplitudes `(up, down)` each.
    fn two_peak_state(left: (f64, f64), right: (f64, f64)) -> SpinorFockState {
        let l = coherent_state(CoherentInit::from_means(-6.0, 0.0), Spinor::UP, N).unwrap();
        let r = coherent_state(CoherentInit::from_means(6.0, 0.0), Spinor::UP, N).unwrap();
        let (lu, ru) = (l.up_amplitudes(), r.up_amplitudes());
        let up: Vec<Complex64> = lu.iter().zip(&ru).map(|(a, b)| a * left.0 + b * right.0).collect();
        let down: Vec<Complex64> = lu.iter().zip(&ru).map(|(a, b)| a * left.1 + b * right.1).collect();
        let mut s = SpinorFockState::new(&up, &down, 0.0).unwrap();
        s.normalize();
        s
    }

    fn report_of(state: &SpinorFockState, basis: &HermiteBasis) -> CatReport {
        detect_peaks(&density(state, basis).unwrap(), PROMINENCE_FLOOR).unwrap()
    }

    fn two_peak_report(areas: &[f64]) -> CatReport {
        let parts: Vec<(f64, f64, f64)> = areas
            .iter()
            .enumerate()
            .map(|(k, &w)| (w, -10.0 + 20.0 * k as f64, 1.0))
            .collect();
        let snap = crate::cat_analysis::gaussian_mixture(grid(), 0.0, &parts).unwrap();
        detect_peaks(&snap, PROMINENCE_FLOOR).unwrap()
    }

    #[test]
    fn counter_rng_is_a_pure_function() {
        let rng = CounterRng::new(42);
        let forward: Vec<f64> = (0..16).map(|c| rng.uniform(3, c)).collect();
        let backward: Vec<f64> = (0..16).rev().map(|c| rng.uniform(3, c)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
        assert_ne!(rng.uniform(3, 0), rng.uniform(4, 0));
        assert_ne!(rng.uniform(3, 0), CounterRng::new(43).uniform(3, 0));
        assert!(forward.iter().all(|u| (0.0..1.0).contains(u)));
    }

    #[test]
    fn sample_peak_minor_frequency() {
        let report = two_peak_report(&[0.99, 0.01]);
        let areas = report.peak_areas();
        let minor = if areas[0] < areas[1] { 0 } else { 1 };
        let rng = CounterRng::new(7);
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|&c| sample_peak(&report, rng.uniform(0, c)).unwrap() == minor)
            .count();
        let f = hits as f64 / draws as f64;
        assert!((f - 0.01).abs() < 0.003, "{f}");
    }

    #[test]
    fn sample_peak_symmetric_areas() {
        let report = two_peak_report(&[0.5, 0.5]);
        let rng = CounterRng::new(11);
        let draws = 100_000;
        let left = (0..draws)
            .filter(|&c| sample_peak(&report, rng.uniform(0, c)).unwrap() == 0)
            .count();
        let f = left as f64 / draws as f64;
        assert!((f - 0.5).abs() < 0.005, "{f}");
    }

    #[test]
    fn sampling_and_collapse_need_two_peaks() {
        let report = two_peak_report(&[1.0]);
        assert_eq!(report.n_peaks(), 1);
        assert!(matches!(sample_peak(&report, 0.3), Err(Error::Precondition(_))));
        let state = coherent_state(CoherentInit::from_means(0.0, 0.0), Spinor::UP, N).unwrap();
        let basis = hermite_basis(grid(), N).unwrap();
        assert!(matches!(
            collapse(&state, &report, 0, &basis, CollapseWindow::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn window_weights() {
        let sharp = CollapseWindow::Sharp.weights(10, (3, 6));
        assert_eq!(sharp, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let taper = CollapseWindow::Taper { width_cells: 1.0 }.weights(10, (3, 6));
        assert_eq!(taper[3], 0.5);
        assert_eq!(taper[6], 0.5);
        assert_eq!(taper[4], 1.0);
        assert_eq!(taper[2], 0.0);
        let wide = CollapseWindow::Taper { width_cells: 4.0 }.weights(10, (3, 6));
        assert!((wide[2] - 0.5 * (1.0 - (PI / 4.0).sin())).abs() < 1e-15);
        let edge = CollapseWindow::Sharp.weights(10, (0, 4));
        assert_eq!(edge[0], 1.0);
        let erf = CollapseWindow::Erf { width_cells: 2.0 }.weights(10, (3, 6));
        assert_eq!(erf[3], 0.5);
        assert!(erf[4] > 0.5 && erf[4] < 1.0 && erf[2] < 0.5);
        assert!((erf[2] + erf[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collapse_keeps_the_chosen_peak_and_both_spins() {
        let state = two_peak_state((0.8, 0.3), (0.2, 0.45));
        let basis = hermite_basis(grid(), N).unwrap();
        let report = report_of(&state, &basis);
        assert_eq!(report.n_peaks(), 2);
        for (choice, (u, d)) in [(0, (0.8f64, 0.3f64)), (1, (0.2, 0.45))] {
            let post = collapse(&state, &report, choice, &basis, CollapseWindow::default()).unwrap();
            assert!((post.norm_sqr() - 1.0).abs() < 1e-10);
            let (p_up, p_down) = populations(&post);
            let expected = u * u / (u * u + d * d);
            assert!((p_up - expected).abs() < 1e-6, "{p_up} vs {expected}");
            assert!(p_down > 0.1);
            let after = report_of(&post, &basis);
            assert_eq!(after.n_peaks(), 1);
            assert!((after.peaks[0].position - report.peaks[choice].position).abs() < 0.1);
        }
    }

    #[test]
    fn major_collapse_keeps_population_ordering() {
        // Major peak on the left, mostly down; overall P₂₂ > P₁₁.
        let state = two_peak_state((0.3, 0.9), (0.25, 0.1));
        let (u, d) = populations(&state);
        assert!(u < d);
        let basis = hermite_basis(grid(), N).unwrap();
        let report = report_of(&state, &basis);
        let major = largest_area(&report).unwrap();
        let post = collapse(&state, &report, major, &basis, CollapseWindow::Sharp).unwrap();
        let (u, d) = populations(&post);
        assert!(u < d && u > 0.0);
        let minor = 1 - major;
        let post = collapse(&state, &report, minor, &basis, CollapseWindow::Sharp).unwrap();
        let (u, d) = populations(&post);
        assert!(u > d, "the minor peak reverses the ordering here");
    }

    /// Spin-dependent displacement with a weak transverse field: the up and
    /// down parts oscillate about `z = ±η` and keep re-forming cats.
    fn cat_model() -> QuantumModel {
        QuantumModel::new(0.3, 3.0, DriveProfile::constant(0.0))
    }

    fn cat_init() -> SpinorFockState {
        coherent_state(CoherentInit::from_means(0.0, 0.0), Spinor::from_angles(PI / 2.0, 0.0), N).unwrap()
    }

    #[test]
    fn exhausted_schedule_matches_plain_evolution() {
        let schedule = CollapseSchedule {
            lifetimes: Lifetimes::Explicit { values: Vec::new() },
            ..CollapseSchedule::default()
        };
        let c = controls();
        let run = run_with_jumps(&cat_init(), cat_model(), &schedule, 6.0, &c).unwrap();
        let (states, _) = evolve(&cat_init(), cat_model(), 6.0, c.evolve).unwrap();
        assert!(run.jumps.is_empty());
        assert_eq!(run.trajectory.len(), states.len());
        assert_eq!(run.final_state, *states.last().unwrap());
    }

    #[test]
    fn collapses_fire_after_the_deadline_on_a_cat() {
        let schedule = CollapseSchedule {
            decoherence_time: 1.0,
            lifetimes: Lifetimes::Constant,
            rng_seed: 5,
        };
        let c = controls();
        let run = run_with_jumps(&cat_init(), cat_model(), &schedule, 12.0, &c).unwrap();
        assert!(!run.jumps.is_empty());
        let mut segment_start = 0.0;
        for j in &run.jumps {
            assert!(j.tau >= segment_start + 1.0 - 1e-12);
            assert!(j.areas.len() >= 2);
            assert!((j.post_norm - 1.0).abs() < 1e-10);
            assert!((j.post.0 + j.post.1 - 1.0).abs() < 1e-10);
            segment_start = j.tau;
        }
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let schedule = CollapseSchedule {
            decoherence_time: 1.0,
            lifetimes: Lifetimes::Exponential,
            rng_seed: 99,
        };
        let c = controls();
        let a = run_with_jumps(&cat_init(), cat_model(), &schedule, 10.0, &c).unwrap();
        let b = run_with_jumps(&cat_init(), cat_model(), &schedule, 10.0, &c).unwrap();
        assert_eq!(a.jumps, b.jumps);
        assert_eq!(a.final_state.checksum(), b.final_state.checksum());
    }

    #[test]
    fn ensemble_matches_independent_members() {
        let schedule = CollapseSchedule {
            decoherence_time: 1.0,
            lifetimes: Lifetimes::Exponential,
            rng_seed: 3,
        };
        let c = controls();
        let members = 5;
        let runs = run_ensemble(&cat_init(), cat_model(), &schedule, members, 8.0, &c).unwrap();
        assert_eq!(runs.len(), members);
        let mut histories = std::collections::BTreeSet::new();
        for (m, run) in runs.iter().enumerate() {
            assert_eq!(run.member, m);
            let alone = run_with_jumps_observed(&cat_init(), cat_model(), &schedule, m, 8.0, &c, |_| Ok(())).unwrap();
            assert_eq!(run.jumps, alone.jumps);
            assert_eq!(run.final_state.checksum(), alone.final_state.checksum());
            assert_eq!(run.trajectory, alone.trajectory);
            histories.insert(run.final_state.checksum());
        }
        assert!(histories.len() > 1, "members should not all share one history");
        let summary = summarize(&runs);
        assert_eq!(summary.jumps, runs.iter().map(|r| r.jumps.len()).sum::<usize>());
        assert_eq!(summary.flips, summary.flips_on_major + summary.flips_on_minor);
        assert_eq!(summary.minor_fraction_histogram.iter().sum::<usize>(), summary.jumps);
    }

    #[test]
    fn poisson_binomial_tails() {
        let p = [0.5, 0.5];
        assert!((poisson_binomial_p_value(&p, 1) - 1.0).abs() < 1e-15);
        assert!((poisson_binomial_p_value(&p, 0) - 0.5).abs() < 1e-15);
        assert_eq!(poisson_binomial_p_value(&p, 3), 0.0);
        let rare = [0.01; 100];
        assert!(poisson_binomial_p_value(&rare, 1) > 0.5);
        assert!(poisson_binomial_p_value(&rare, 8) < 1e-4);
    }

    #[test]
    fn invalid_schedules() {
        let mut s = CollapseSchedule::default();
        s.decoherence_time = 0.0;
        assert!(s.validate().is_err());
        let s = CollapseSchedule {
            lifetimes: Lifetimes::Explicit { values: vec![1.0, -2.0] },
            ..CollapseSchedule::default()
        };
        assert!(s.validate().is_err());
        assert_eq!(CollapseSchedule::default().lifetime(0, 7), Some(TAU));
    }
}
