//! Spinor Fock-basis state of the spin-cantilever system and its propagation.
//!
//! The wavefunction is `Ψ = (Σ A_n |n⟩, Σ B_n |n⟩)` with `A` the spin-up and
//! `B` the spin-down component. In units of `ħω_c` the rotating-frame
//! Hamiltonian is
//!
//! ```text
//! H = (p² + z²)/2 + φ̇ S_z − ε S_x − 2η z S_z
//! ```
//!
//! which acts on the amplitudes as
//!
//! ```text
//! (HΨ)_A,n = (n + ½ + φ̇/2) A_n − (η/√2)(√n A_{n−1} + √(n+1) A_{n+1}) − (ε/2) B_n
//! (HΨ)_B,n = (n + ½ − φ̇/2) B_n + (η/√2)(√n B_{n−1} + √(n+1) B_{n+1}) − (ε/2) A_n
//! ```
//!
//! The Hamiltonian is only ever applied in this tridiagonal form.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::drive::DriveProfile;
use crate::error::{Error, Result};
use crate::ode::{AdaptiveRk, Method, StepStats, Tolerances};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Default health threshold on `|A_{N−1}|² + |B_{N−1}|²`.
pub const TAIL_MASS_LIMIT: f64 = 1e-10;

/// Largest norm loss accepted when truncating a coherent state.
pub const TRUNCATION_LOSS_LIMIT: f64 = 1e-10;

/// Spinor amplitudes in the Fock basis, interleaved as `[A_0, B_0, A_1, B_1, …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorFockState {
    amplitudes: Vec<Complex64>,
    pub tau: f64,
}

impl SpinorFockState {
    /// Builds a state from separate up and down amplitude arrays.
    pub fn new(up: &[Complex64], down: &[Complex64], tau: f64) -> Result<Self> {
        if up.len() != down.len() {
            return Err(Error::Precondition(format!(
                "spin components differ in length ({} vs {})",
                up.len(),
                down.len()
            )));
        }
        if up.len() < 2 {
            return Err(Error::domain("basis_size", "must be at least 2"));
        }
        let amplitudes = up.iter().zip(down).flat_map(|(a, b)| [*a, *b]).collect();
        Ok(Self { amplitudes, tau })
    }

    /// Wraps an interleaved `[A_0, B_0, …]` buffer of even length.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>, tau: f64) -> Result<Self> {
        if amplitudes.len() % 2 != 0 || amplitudes.len() < 4 {
            return Err(Error::Precondition(format!(
                "amplitude buffer of length {} is not a spinor",
                amplitudes.len()
            )));
        }
        Ok(Self { amplitudes, tau })
    }

    /// `|n⟩ ⊗ (up, down)` for a single Fock state `n`.
    pub fn fock(n: usize, up: Complex64, down: Complex64, basis_size: usize) -> Result<Self> {
        if n >= basis_size {
            return Err(Error::domain("n", format!("{n} outside basis of {basis_size}")));
        }
        let mut a = vec![ZERO; basis_size];
        let mut b = vec![ZERO; basis_size];
        a[n] = up;
        b[n] = down;
        Self::new(&a, &b, 0.0)
    }

    pub fn basis_size(&self) -> usize {
        self.amplitudes.len() / 2
    }

    /// `A_n`.
    pub fn up(&self, n: usize) -> Complex64 {
        self.amplitudes[2 * n]
    }

    /// `B_n`.
    pub fn down(&self, n: usize) -> Complex64 {
        self.amplitudes[2 * n + 1]
    }

    /// Spin-up amplitudes `A_0 … A_{N−1}`.
    pub fn up_amplitudes(&self) -> Vec<Complex64> {
        self.amplitudes.iter().step_by(2).copied().collect()
    }

    /// Spin-down amplitudes `B_0 … B_{N−1}`.
    pub fn down_amplitudes(&self) -> Vec<Complex64> {
        self.amplitudes.iter().skip(1).step_by(2).copied().collect()
    }

    /// `(A_n, B_n)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (Complex64, Complex64)> + '_ {
        self.amplitudes.chunks_exact(2).map(|c| (c[0], c[1]))
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Probability in the highest retained Fock state.
    pub fn tail_mass(&self) -> f64 {
        let n = self.basis_size();
        self.up(n - 1).norm_sqr() + self.down(n - 1).norm_sqr()
    }

    pub fn normalize(&mut self) {
        let s = self.norm_sqr().sqrt();
        if s > 0.0 {
            for c in &mut self.amplitudes {
                *c /= s;
            }
        }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Order-sensitive FNV-1a digest of the raw amplitude bits and `τ`.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.tau.to_bits());
        for c in &self.amplitudes {
            feed(c.re.to_bits());
            feed(c.im.to_bits());
        }
        h
    }
}

/// Coherent oscillator state `|α⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentInit {
    pub alpha: Complex64,
}

impl CoherentInit {
    /// `α = (⟨z⟩ + i⟨p_z⟩)/√2`.
    pub fn from_means(mean_z: f64, mean_p: f64) -> Self {
        Self {
            alpha: Complex64::new(mean_z, mean_p) / std::f64::consts::SQRT_2,
        }
    }

    /// `⟨z⟩ = (α* + α)/√2`.
    pub fn mean_z(&self) -> f64 {
        ((self.alpha.conj() + self.alpha) / std::f64::consts::SQRT_2).re
    }

    /// `⟨p_z⟩ = i(α* − α)/√2`.
    pub fn mean_p(&self) -> f64 {
        (I * (self.alpha.conj() - self.alpha) / std::f64::consts::SQRT_2).re
    }

    /// Smallest basis keeping all but [`TRUNCATION_LOSS_LIMIT`] of the norm.
    pub fn required_basis(&self) -> usize {
        let amps = coherent_amplitudes(self.alpha, usize::MAX);
        let mut kept = 0.0;
        for (n, a) in amps.enumerate() {
            kept += a.norm_sqr();
            if 1.0 - kept < TRUNCATION_LOSS_LIMIT {
                return n + 1;
            }
        }
        unreachable!("coherent amplitudes are an infinite sequence")
    }
}

/// Normalized spin direction of the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spinor {
    pub up: Complex64,
    pub down: Complex64,
}

impl Spinor {
    pub const UP: Spinor = Spinor {
        up: Complex64 { re: 1.0, im: 0.0 },
        down: ZERO,
    };
    pub const DOWN: Spinor = Spinor {
        up: ZERO,
        down: Complex64 { re: 1.0, im: 0.0 },
    };

    /// Direction on the Bloch sphere (polar angle from +z, azimuth from +x).
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        Self {
            up: Complex64::new((theta / 2.0).cos(), 0.0),
            down: Complex64::from_polar((theta / 2.0).sin(), phi),
        }
    }

    fn normalized(self) -> Result<Self> {
        let n = (self.up.norm_sqr() + self.down.norm_sqr()).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::domain("spin", "initial spinor has zero norm"));
        }
        Ok(Self {
            up: self.up / n,
            down: self.down / n,
        })
    }
}

/// Coherent amplitudes `αⁿ e^{−|α|²/2}/√(n!)`, computed in log-magnitude form
/// so large `|α|` neither overflows nor underflows prematurely.
fn coherent_amplitudes(alpha: Complex64, count: usize) -> impl Iterator<Item = Complex64> {
    let r = alpha.norm();
    let theta = alpha.arg();
    let ln_r = r.ln();
    let mut log_mag = -0.5 * r * r;
    (0..count).map(move |n| {
        if n > 0 {
            if r == 0.0 {
                return ZERO;
            }
            log_mag += ln_r - 0.5 * (n as f64).ln();
        }
        Complex64::from_polar(log_mag.exp(), theta * n as f64)
    })
}

/// `|α⟩ ⊗ spin`, truncated to `basis_size` states and renormalized.
pub fn coherent_state(init: CoherentInit, spin: Spinor, basis_size: usize) -> Result<SpinorFockState> {
    if basis_size < 2 {
        return Err(Error::domain("basis_size", "must be at least 2"));
    }
    let spin = spin.normalized()?;
    let osc: Vec<Complex64> = coherent_amplitudes(init.alpha, basis_size).collect();
    let kept: f64 = osc.iter().map(|c| c.norm_sqr()).sum();
    if 1.0 - kept > TRUNCATION_LOSS_LIMIT {
        return Err(Error::BasisTooSmall {
            basis_size,
            kept,
            required: init.required_basis(),
        });
    }
    let a: Vec<Complex64> = osc.iter().map(|c| c * spin.up).collect();
    let b: Vec<Complex64> = osc.iter().map(|c| c * spin.down).collect();
    let mut state = SpinorFockState::new(&a, &b, 0.0)?;
    state.normalize();
    Ok(state)
}

/// Sign convention for the `φ̇/2` diagonal term of the spin-down line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownLineSign {
    /// `−φ̇/2`, from the `φ̇ S_z` term of the Hamiltonian.
    #[default]
    Hamiltonian,
    /// `+φ̇/2` on both lines. This makes `φ̇` a global phase and is kept only
    /// for comparison runs.
    Verbatim,
}

/// Dimensionless model constants and drive of a quantum run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumModel {
    /// `ε`.
    pub rabi: f64,
    /// `η`.
    pub coupling: f64,
    pub drive: DriveProfile,
    #[serde(default)]
    pub down_line: DownLineSign,
}

impl QuantumModel {
    pub fn new(rabi: f64, coupling: f64, drive: DriveProfile) -> Self {
        Self {
            rabi,
            coupling,
            drive,
            down_line: DownLineSign::Hamiltonian,
        }
    }

    fn down_phi_factor(&self) -> f64 {
        match self.down_line {
            DownLineSign::Hamiltonian => -0.5,
            DownLineSign::Verbatim => 0.5,
        }
    }
}

/// Square roots `√0 .. √N` reused by every Hamiltonian application.
#[derive(Debug, Clone)]
struct SqrtTable(Vec<f64>);

impl SqrtTable {
    fn new(basis_size: usize) -> Self {
        Self((0..=basis_size).map(|n| (n as f64).sqrt()).collect())
    }
}

const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Writes `H ψ` into `out` (Schrödinger picture, constant `φ̇`).
pub fn apply_hamiltonian(psi: &[Complex64], phi_dot: f64, model: &QuantumModel, out: &mut [Complex64]) {
    let n = psi.len() / 2;
    let roots = SqrtTable::new(n);
    hamiltonian_into(psi, 0, Frame::schrodinger(phi_dot, model), model, &roots.0, out);
    for (k, (o, p)) in out.chunks_exact_mut(2).zip(psi.chunks_exact(2)).enumerate() {
        let d = k as f64 + 0.5;
        o[0] += p[0] * d;
        o[1] += p[1] * d;
    }
}

/// Spin and coupling part of the Hamiltonian with the oscillator diagonal
/// removed, acting on the interleaved block of Fock states starting at
/// `offset`. States outside the block count as zero.
///
/// `shift` is `e^{iτ}` in the interaction picture (the phase carried by the
/// lowering partner `n−1`) and `1` in the Schrödinger picture.
#[inline]
fn hamiltonian_into(psi: &[Complex64], offset: usize, frame: Frame, model: &QuantumModel, roots: &[f64], out: &mut [Complex64]) {
    let len = psi.len() / 2;
    let g = model.coupling / std::f64::consts::SQRT_2;
    let Frame {
        up_diag,
        down_diag,
        shift,
    } = frame;
    let half_eps = 0.5 * model.rabi;
    let lower = shift * g;
    let raise = shift.conj() * g;
    for k in 0..len {
        let a = psi[2 * k];
        let b = psi[2 * k + 1];
        let mut ladder_a = ZERO;
        let mut ladder_b = ZERO;
        if k > 0 {
            let w = lower * roots[offset + k];
            ladder_a += psi[2 * k - 2] * w;
            ladder_b += psi[2 * k - 1] * w;
        }
        if k + 1 < len {
            let w = raise * roots[offset + k + 1];
            ladder_a += psi[2 * k + 2] * w;
            ladder_b += psi[2 * k + 3] * w;
        }
        out[2 * k] = a * up_diag - ladder_a - b * half_eps;
        out[2 * k + 1] = b * down_diag + ladder_b - a * half_eps;
    }
}

/// Picture-dependent coefficients of [`hamiltonian_into`].
#[derive(Debug, Clone, Copy)]
struct Frame {
    up_diag: f64,
    down_diag: f64,
    shift: Complex64,
}

impl Frame {
    fn schrodinger(phi_dot: f64, model: &QuantumModel) -> Self {
        Self {
            up_diag: 0.5 * phi_dot,
            down_diag: model.down_phi_factor() * phi_dot,
            shift: ONE,
        }
    }

    fn interaction(tau: f64, phi_dot: f64, model: &QuantumModel) -> Self {
        Self {
            shift: Complex64::cis(tau),
            ..Self::schrodinger(phi_dot, model)
        }
    }
}

/// Time derivative `−i H ψ` of the Schrödinger-picture amplitudes.
pub fn rhs(state: &SpinorFockState, phi_dot: f64, model: &QuantumModel) -> Vec<Complex64> {
    let mut out = vec![ZERO; state.amplitudes.len()];
    apply_hamiltonian(&state.amplitudes, phi_dot, model, &mut out);
    for c in &mut out {
        *c *= -I;
    }
    out
}

/// `⟨ψ|H|ψ⟩` at fixed `φ̇`.
pub fn energy(state: &SpinorFockState, phi_dot: f64, model: &QuantumModel) -> f64 {
    let mut out = vec![ZERO; state.amplitudes.len()];
    apply_hamiltonian(&state.amplitudes, phi_dot, model, &mut out);
    state
        .amplitudes
        .iter()
        .zip(&out)
        .map(|(p, h)| (p.conj() * h).re)
        .sum()
}

/// How amplitudes are carried through the integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// Integrate `A_n, B_n` directly.
    Raw,
    /// Integrate `e^{i(n+½)τ} A_n`, removing the oscillator phases.
    #[default]
    InteractionPicture,
}

/// Amplitudes with `|c|²` below this are treated as exactly zero when
/// choosing the active Fock window.
pub const WINDOW_FLOOR: f64 = 1e-60;

/// Extra Fock states kept on each side of the occupied range.
pub const WINDOW_MARGIN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveControls {
    pub tolerances: Tolerances,
    pub method: Method,
    pub snapshot_stride: f64,
    pub tail_limit: f64,
    pub propagation: Propagation,
    /// Integrate only the occupied Fock range plus [`WINDOW_MARGIN`].
    pub windowed: bool,
}

impl Default for EvolveControls {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            method: Method::Dop853,
            snapshot_stride: 0.08,
            tail_limit: TAIL_MASS_LIMIT,
            propagation: Propagation::InteractionPicture,
            windowed: true,
        }
    }
}

/// Health summary of a propagation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantumHealth {
    pub max_norm_drift: f64,
    pub max_tail_mass: f64,
    pub steps: StepStats,
}

/// Incremental propagator. The integrator state lives in whichever picture
/// [`Propagation`] selects; [`Propagator::state`] always returns
/// Schrödinger-picture amplitudes.
#[derive(Debug, Clone)]
pub struct Propagator {
    model: QuantumModel,
    controls: EvolveControls,
    solver: AdaptiveRk<Complex64>,
    roots: SqrtTable,
    work: Vec<Complex64>,
    /// Active Fock range `[lo, hi)`.
    window: (usize, usize),
    tau: f64,
    reference_norm: f64,
    health: QuantumHealth,
}

impl Propagator {
    pub fn new(state: &SpinorFockState, model: QuantumModel, controls: EvolveControls) -> Result<Self> {
        model.drive.validate()?;
        if !(controls.snapshot_stride > 0.0) {
            return Err(Error::domain("snapshot_stride", "must be positive"));
        }
        let n = state.basis_size();
        let mut p = Self {
            model,
            controls,
            solver: AdaptiveRk::new(controls.method, 2 * n, controls.tolerances),
            roots: SqrtTable::new(n),
            work: Vec::new(),
            window: (0, n),
            tau: state.tau,
            reference_norm: 1.0,
            health: QuantumHealth::default(),
        };
        p.replace_state(state)?;
        Ok(p)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn model(&self) -> &QuantumModel {
        &self.model
    }

    pub fn controls(&self) -> &EvolveControls {
        &self.controls
    }

    /// Active Fock range `[lo, hi)`.
    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn basis_size(&self) -> usize {
        self.work.len() / 2
    }

    pub fn health(&self) -> QuantumHealth {
        QuantumHealth {
            steps: self.solver.stats(),
            ..self.health
        }
    }

    /// Replaces the propagated state, e.g. after a collapse. The basis size
    /// must not change.
    pub fn replace_state(&mut self, state: &SpinorFockState) -> Result<()> {
        let n = self.roots.0.len() - 1;
        if state.basis_size() != n {
            return Err(Error::Precondition(format!(
                "replacement state has {} Fock states, propagator has {n}",
                state.basis_size()
            )));
        }
        self.tau = state.tau;
        self.work = state.amplitudes.clone();
        if self.controls.propagation == Propagation::InteractionPicture {
            rotate(&mut self.work, self.tau, 1.0);
        }
        self.reference_norm = state.norm_sqr();
        self.window = if self.controls.windowed {
            occupied_window(&self.work)
        } else {
            (0, n)
        };
        self.solver.reset();
        Ok(())
    }

    /// Schrödinger-picture state at the current time.
    pub fn state(&self) -> SpinorFockState {
        let mut amplitudes = self.work.clone();
        if self.controls.propagation == Propagation::InteractionPicture {
            rotate(&mut amplitudes, self.tau, -1.0);
        }
        SpinorFockState {
            amplitudes,
            tau: self.tau,
        }
    }

    /// Norm of the propagated state (picture independent).
    pub fn norm_sqr(&self) -> f64 {
        self.work.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Propagates to `tau_target` and checks the health invariants there.
    pub fn advance_to(&mut self, tau_target: f64) -> Result<()> {
        let model = self.model;
        let roots = &self.roots.0;
        let (lo, hi) = self.window;
        let y = &mut self.work[2 * lo..2 * hi];
        match self.controls.propagation {
            Propagation::Raw => {
                self.solver.integrate(
                    |t, y, dy| {
                        let frame = Frame::schrodinger(model.drive.phi_dot_unchecked(t), &model);
                        hamiltonian_into(y, lo, frame, &model, roots, dy);
                        for (k, (o, p)) in dy.chunks_exact_mut(2).zip(y.chunks_exact(2)).enumerate() {
                            let d = (lo + k) as f64 + 0.5;
                            o[0] = -I * (o[0] + p[0] * d);
                            o[1] = -I * (o[1] + p[1] * d);
                        }
                    },
                    &mut self.tau,
                    y,
                    tau_target,
                )?;
            }
            Propagation::InteractionPicture => {
                self.solver.integrate(
                    |t, y, dy| {
                        let frame = Frame::interaction(t, model.drive.phi_dot_unchecked(t), &model);
                        hamiltonian_into(y, lo, frame, &model, roots, dy);
                        for c in dy.iter_mut() {
                            *c = Complex64::new(c.im, -c.re);
                        }
                    },
                    &mut self.tau,
                    y,
                    tau_target,
                )?;
            }
        }
        let n = self.basis_size();
        let tail = self.work[2 * n - 2].norm_sqr() + self.work[2 * n - 1].norm_sqr();
        let drift = (self.norm_sqr() - self.reference_norm).abs();
        self.health.max_tail_mass = self.health.max_tail_mass.max(tail);
        self.health.max_norm_drift = self.health.max_norm_drift.max(drift);
        if tail >= self.controls.tail_limit {
            return Err(Error::Truncation {
                tau: self.tau,
                tail_mass: tail,
                threshold: self.controls.tail_limit,
            });
        }
        if self.controls.windowed {
            self.regrow_window();
        }
        Ok(())
    }

    /// Widens the window when amplitude reaches the inner half of a margin.
    fn regrow_window(&mut self) {
        let (lo, hi) = self.window;
        let Some((first, last)) = occupied_range(&self.work[2 * lo..2 * hi]) else {
            return;
        };
        let half = WINDOW_MARGIN / 2;
        let n = self.basis_size();
        // The solver resizes itself on the next call.
        if lo > 0 && first < half {
            self.window.0 = lo.saturating_sub(WINDOW_MARGIN);
        }
        if hi < n && hi - lo - 1 - last < half {
            self.window.1 = (hi + WINDOW_MARGIN).min(n);
        }
    }

    /// Propagates to `tau_end`, calling `on_snapshot` at every stride point
    /// (and at the start). Returning `false` from the callback stops early.
    pub fn run<F>(&mut self, tau_end: f64, mut on_snapshot: F) -> Result<()>
    where
        F: FnMut(&SpinorFockState) -> Result<bool>,
    {
        if !(tau_end > self.tau) {
            return Err(Error::domain("tau_end", format!("must exceed {}", self.tau)));
        }
        if !on_snapshot(&self.state())? {
            return Ok(());
        }
        let start = self.tau;
        let stride = self.controls.snapshot_stride;
        let mut k = 1u64;
        loop {
            let target = (start + stride * k as f64).min(tau_end);
            self.advance_to(target)?;
            if !on_snapshot(&self.state())? || target >= tau_end {
                return Ok(());
            }
            k += 1;
        }
    }
}

/// First and last Fock index with `|A_n|² + |B_n|²` above [`WINDOW_FLOOR`].
fn occupied_range(amplitudes: &[Complex64]) -> Option<(usize, usize)> {
    let occupied = |k: &usize| amplitudes[2 * k].norm_sqr() + amplitudes[2 * k + 1].norm_sqr() > WINDOW_FLOOR;
    let n = amplitudes.len() / 2;
    let first = (0..n).find(occupied)?;
    let last = (0..n).rev().find(occupied)?;
    Some((first, last))
}

/// Occupied range widened by [`WINDOW_MARGIN`] and clipped to the basis.
fn occupied_window(amplitudes: &[Complex64]) -> (usize, usize) {
    let n = amplitudes.len() / 2;
    match occupied_range(amplitudes) {
        Some((first, last)) => (first.saturating_sub(WINDOW_MARGIN), (last + 1 + WINDOW_MARGIN).min(n)),
        None => (0, n.min(WINDOW_MARGIN)),
    }
}

/// Multiplies amplitude `n` by `e^{i·sign·(n+½)τ}` in both spin components.
fn rotate(amplitudes: &mut [Complex64], tau: f64, sign: f64) {
    for (k, pair) in amplitudes.chunks_exact_mut(2).enumerate() {
        let phase = Complex64::cis(sign * (k as f64 + 0.5) * tau);
        pair[0] *= phase;
        pair[1] *= phase;
    }
}

/// Propagates `state` to `tau_end` and returns the snapshots taken every
/// `controls.snapshot_stride` (including the initial state).
pub fn evolve(
    state: &SpinorFockState,
    model: QuantumModel,
    tau_end: f64,
    controls: EvolveControls,
) -> Result<(Vec<SpinorFockState>, QuantumHealth)> {
    let mut prop = Propagator::new(state, model, controls)?;
    let mut out = Vec::new();
    prop.run(tau_end, |s| {
        out.push(s.clone());
        Ok(true)
    })?;
    Ok((out, prop.health()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::observables::{means, populations};

    fn model(rabi: f64, coupling: f64, phi_dot: f64) -> QuantumModel {
        QuantumModel::new(rabi, coupling, DriveProfile::constant(phi_dot))
    }

    #[test]
    fn vacuum_coherent_state() {
        let s = coherent_state(CoherentInit::from_means(0.0, 0.0), Spinor::UP, 8).unwrap();
        assert!((s.up(0) - ONE).norm() < 1e-15);
        assert!(s.up_amplitudes()[1..].iter().all(|c| c.norm() == 0.0));
        assert!(s.down_amplitudes().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn coherent_mean_occupation() {
        let init = CoherentInit::from_means(-20.0, 0.0);
        assert!((init.alpha.norm_sqr() - 200.0).abs() < 1e-12);
        assert!((init.mean_z() + 20.0).abs() < 1e-12);
        assert!(init.mean_p().abs() < 1e-12);
        let s = coherent_state(init, Spinor::UP, 2000).unwrap();
        let mean_n: f64 = s.up_amplitudes().iter().enumerate().map(|(n, c)| n as f64 * c.norm_sqr()).sum();
        assert!((mean_n - 200.0).abs() < 1e-6, "{mean_n}");
        let m = means(&s);
        assert!((m.z + 20.0).abs() < 1e-8);
        assert!(m.p.abs() < 1e-8);
    }

    #[test]
    fn basis_too_small_reports_requirement() {
        let init = CoherentInit::from_means(-20.0, 0.0);
        match coherent_state(init, Spinor::UP, 250) {
            Err(Error::BasisTooSmall { required, .. }) => {
                assert!(required > 250 && required < 400, "{required}");
                assert!(coherent_state(init, Spinor::UP, required).is_ok());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn verbatim_sign_makes_drive_a_global_phase() {
        let mut m = model(3.0, 0.2, 0.0);
        m.down_line = DownLineSign::Verbatim;
        let s = coherent_state(CoherentInit::from_means(1.0, 0.5), Spinor::from_angles(1.0, 0.3), 40).unwrap();
        let base = rhs(&s, 0.0, &m);
        let shifted = rhs(&s, 8.0, &m);
        for ((x, y), psi) in base.iter().zip(&shifted).zip(s.amplitudes()) {
            assert!((y - x - (-I * 4.0 * psi)).norm() < 1e-12);
        }
    }

    fn random_state(seed: &[f64], n: usize) -> SpinorFockState {
        let amps: Vec<Complex64> = (0..2 * n)
            .map(|k| Complex64::new(seed[(2 * k) % seed.len()] * (k as f64 + 1.3).sin(), seed[(2 * k + 1) % seed.len()] * (k as f64 * 0.7).cos()))
            .collect();
        SpinorFockState::from_amplitudes(amps, 0.0).unwrap()
    }

    proptest! {
        #[test]
        fn hamiltonian_is_hermitian(
            seed_u in prop::collection::vec(-1.0f64..1.0, 8),
            seed_v in prop::collection::vec(-1.0f64..1.0, 8),
            eps in 0.1f64..50.0, eta in 0.0f64..1.0, phi in -100.0f64..100.0,
        ) {
            let n = 24;
            let m = model(eps, eta, phi);
            let u = random_state(&seed_u, n);
            let v = random_state(&seed_v, n);
            let mut hu = vec![ZERO; 2 * n];
            let mut hv = vec![ZERO; 2 * n];
            apply_hamiltonian(u.amplitudes(), phi, &m, &mut hu);
            apply_hamiltonian(v.amplitudes(), phi, &m, &mut hv);
            let u_hv: Complex64 = u.amplitudes().iter().zip(&hv).map(|(a, b)| a.conj() * b).sum();
            let v_hu: Complex64 = v.amplitudes().iter().zip(&hu).map(|(a, b)| a.conj() * b).sum();
            let scale = 1.0 + u_hv.norm();
            prop_assert!((u_hv - v_hu.conj()).norm() < 1e-12 * scale);
        }
    }

    #[test]
    fn rabi_flop_between_spin_states() {
        let eps = 5.0;
        let s = SpinorFockState::fock(0, ONE, ZERO, 6).unwrap();
        let controls = EvolveControls {
            snapshot_stride: 0.05,
            ..EvolveControls::default()
        };
        let (traj, _) = evolve(&s, model(eps, 0.0, 0.0), 3.0, controls).unwrap();
        for snap in &traj {
            let (p11, _) = populations(snap);
            let exact = (eps * snap.tau / 2.0).cos().powi(2);
            assert!((p11 - exact).abs() < 1e-8, "tau {} {p11} {exact}", snap.tau);
        }
    }

    #[test]
    fn spin_up_stays_up_without_transverse_field() {
        // With ε = 0 the down component has no source.
        let mut m = model(1.0, 0.3, 2.0);
        m.rabi = 0.0;
        let s = coherent_state(CoherentInit::from_means(3.0, 0.0), Spinor::UP, 80).unwrap();
        let (traj, _) = evolve(&s, m, 6.0, EvolveControls::default()).unwrap();
        for snap in &traj {
            assert!(snap.down_amplitudes().iter().all(|c| c.norm() == 0.0));
        }
        // Displaced oscillator: equilibrium shifts to z = 2η⟨S_z⟩ = η.
        let last = traj.last().unwrap();
        let exact = 0.3 + (3.0 - 0.3) * last.tau.cos();
        assert!((means(last).z - exact).abs() < 1e-7);
    }

    #[test]
    fn raw_and_interaction_picture_agree() {
        let s = coherent_state(CoherentInit::from_means(-4.0, 1.0), Spinor::UP, 120).unwrap();
        let m = QuantumModel::new(6.0, 0.2, DriveProfile::new(-30.0, 3.0, 10.0, 10.0, 10.0).unwrap());
        let raw = EvolveControls {
            propagation: Propagation::Raw,
            ..EvolveControls::default()
        };
        let (a, _) = evolve(&s, m, 12.0, raw).unwrap();
        let (b, _) = evolve(&s, m, 12.0, EvolveControls::default()).unwrap();
        assert_eq!(a.len(), b.len());
        let (x, y) = (a.last().unwrap(), b.last().unwrap());
        let diff: f64 = x.amplitudes().iter().zip(y.amplitudes()).map(|(p, q)| (p - q).norm_sqr()).sum();
        assert!(diff.sqrt() < 1e-7, "{}", diff.sqrt());
    }

    #[test]
    fn windowed_matches_full_basis() {
        let s = coherent_state(CoherentInit::from_means(-12.0, 0.0), Spinor::UP, 400).unwrap();
        let m = QuantumModel::new(8.0, 0.3, DriveProfile::new(-60.0, 6.0, 10.0, 20.0, 10.0).unwrap());
        let full = EvolveControls {
            windowed: false,
            ..EvolveControls::default()
        };
        let mut prop = Propagator::new(&s, m, EvolveControls::default()).unwrap();
        assert!(prop.window().1 < 400);
        prop.run(15.0, |_| Ok(true)).unwrap();
        let (b, _) = evolve(&s, m, 15.0, full).unwrap();
        let x = prop.state();
        let diff: f64 = x.amplitudes().iter().zip(b.last().unwrap().amplitudes()).map(|(p, q)| (p - q).norm_sqr()).sum();
        assert!(diff.sqrt() < 1e-8, "{}", diff.sqrt());
    }

    #[test]
    fn energy_conserved_for_constant_drive() {
        let m = model(4.0, 0.3, 1.5);
        let s = coherent_state(CoherentInit::from_means(-5.0, 2.0), Spinor::from_angles(0.4, 0.0), 150).unwrap();
        let e0 = energy(&s, 1.5, &m);
        let (traj, health) = evolve(&s, m, 20.0, EvolveControls::default()).unwrap();
        let e1 = energy(traj.last().unwrap(), 1.5, &m);
        assert!((e1 - e0).abs() < 1e-7 * e0.abs(), "{e0} {e1}");
        assert!(health.max_norm_drift < 1e-9);
    }

    #[test]
    fn truncation_breach_aborts() {
        let s = coherent_state(CoherentInit::from_means(-4.0, 0.0), Spinor::UP, 40).unwrap();
        let m = model(2.0, 2.0, 0.0);
        let err = evolve(&s, m, 30.0, EvolveControls::default()).unwrap_err();
        assert!(matches!(err, Error::Truncation { .. }), "{err}");
    }

    #[test]
    fn checksum_is_bit_sensitive() {
        let s = coherent_state(CoherentInit::from_means(1.0, 0.0), Spinor::UP, 20).unwrap();
        let mut t = s.clone();
        assert_eq!(s.checksum(), t.checksum());
        t.amplitudes_mut()[3].re = f64::from_bits(t.amplitudes()[3].re.to_bits() ^ 1);
        assert_ne!(s.checksum(), t.checksum());
    }
}
