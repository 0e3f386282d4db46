//! Classical many-spin limit: a cantilever driven by a precessing magnetic
//! moment of `ΔN` spins,
//!
//! ```text
//! ż = p,   ṗ = −z + 2ηΔN S_z,   Ṡ = S × b,   b = (ε, 0, −φ̇ + 2ηz)
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::drive::DriveProfile;
use crate::error::{Error, Result};
use crate::ode::{AdaptiveRk, Method, StepStats, Tolerances};
use crate::params::{reduce, PhysicalParams, HBAR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalState {
    pub tau: f64,
    pub z: f64,
    pub p: f64,
    /// `(S_x, S_y, S_z)`, of length ½ for a fully polarized moment.
    pub s: [f64; 3],
}

impl ClassicalState {
    /// Cantilever energy `E₀ = (p² + z²)/2`.
    pub fn energy(&self) -> f64 {
        0.5 * (self.p * self.p + self.z * self.z)
    }

    pub fn spin_length(&self) -> f64 {
        let [x, y, z] = self.s;
        (x * x + y * y + z * z).sqrt()
    }

    fn pack(&self) -> [f64; 5] {
        [self.z, self.p, self.s[0], self.s[1], self.s[2]]
    }

    fn unpack(tau: f64, y: &[f64]) -> Self {
        Self {
            tau,
            z: y[0],
            p: y[1],
            s: [y[2], y[3], y[4]],
        }
    }
}

/// How the spin enters the cantilever force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinMode {
    /// The spin precesses about the effective field.
    #[default]
    Dynamic,
    /// `S = (0, 0, ½ cos τ)` is imposed, an ideal resonant drive.
    PinnedCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalParams {
    /// `ε`.
    pub rabi: f64,
    /// `η`.
    pub coupling: f64,
    /// `ΔN`.
    pub spin_count: f64,
    pub drive: DriveProfile,
    #[serde(default)]
    pub spin_mode: SpinMode,
}

impl ClassicalParams {
    pub fn new(rabi: f64, coupling: f64, spin_count: f64, drive: DriveProfile) -> Result<Self> {
        let p = Self {
            rabi,
            coupling,
            spin_count,
            drive,
            spin_mode: SpinMode::Dynamic,
        };
        p.validate()?;
        Ok(p)
    }

    /// `ε = 37`, `η = 2.8e−7`, `ΔN = 2.9e9` with the slow inversion profile.
    pub fn fig2() -> Self {
        Self {
            rabi: 37.0,
            coupling: 2.8e-7,
            spin_count: 2.9e9,
            drive: DriveProfile::fig3(),
            spin_mode: SpinMode::Dynamic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rabi >= 0.0 && self.rabi.is_finite()) {
            return Err(Error::domain("rabi", format!("must be non-negative, got {}", self.rabi)));
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(Error::domain("coupling", format!("must be non-negative, got {}", self.coupling)));
        }
        if !(self.spin_count >= 1.0 && self.spin_count.is_finite()) {
            return Err(Error::domain("spin_count", format!("must be at least 1, got {}", self.spin_count)));
        }
        self.drive.validate()
    }
}

/// Initial state of the `fig2` preset: `z = p = 6.7e4`, spin up.
pub fn fig2_initial_state() -> ClassicalState {
    ClassicalState {
        tau: 0.0,
        z: 6.7e4,
        p: 6.7e4,
        s: [0.0, 0.0, 0.5],
    }
}

/// Time derivative `(ż, ṗ, Ṡ_x, Ṡ_y, Ṡ_z)`.
pub fn classical_rhs(state: &ClassicalState, params: &ClassicalParams, tau: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    rhs_into(tau, &state.pack(), params, &mut out);
    out
}

#[inline]
fn rhs_into(tau: f64, y: &[f64], params: &ClassicalParams, dy: &mut [f64]) {
    let (z, p) = (y[0], y[1]);
    let force_scale = 2.0 * params.coupling * params.spin_count;
    match params.spin_mode {
        SpinMode::Dynamic => {
            let (sx, sy, sz) = (y[2], y[3], y[4]);
            let bx = params.rabi;
            let bz = -params.drive.phi_dot_unchecked(tau) + 2.0 * params.coupling * z;
            // S × b with b_y = 0.
            dy[2] = sy * bz;
            dy[3] = sz * bx - sx * bz;
            dy[4] = -sy * bx;
            dy[1] = -z + force_scale * sz;
        }
        SpinMode::PinnedCosine => {
            dy[2] = 0.0;
            dy[3] = 0.0;
            dy[4] = 0.0;
            dy[1] = -z + force_scale * 0.5 * tau.cos();
        }
    }
    dy[0] = p;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalControls {
    pub tolerances: Tolerances,
    pub method: Method,
    pub snapshot_stride: f64,
}

impl Default for ClassicalControls {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            method: Method::Dop853,
            snapshot_stride: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassicalHealth {
    pub max_spin_length_drift: f64,
    pub steps: StepStats,
}

/// Integrates the classical equations to `tau_end`, returning snapshots every
/// `controls.snapshot_stride` (the initial state included).
pub fn evolve_classical(
    state: &ClassicalState,
    params: &ClassicalParams,
    tau_end: f64,
    controls: &ClassicalControls,
) -> Result<(Vec<ClassicalState>, ClassicalHealth)> {
    params.validate()?;
    if !(tau_end > state.tau) {
        return Err(Error::domain("tau_end", format!("must exceed {}", state.tau)));
    }
    if !(controls.snapshot_stride > 0.0) {
        return Err(Error::domain("snapshot_stride", "must be positive"));
    }
    let mut solver = AdaptiveRk::<f64>::new(controls.method, 5, controls.tolerances);
    let mut y = state.pack();
    let mut tau = state.tau;
    let length0 = state.spin_length();
    let mut health = ClassicalHealth::default();
    let mut out = vec![*state];
    let mut k = 1u64;
    loop {
        let target = (state.tau + controls.snapshot_stride * k as f64).min(tau_end);
        solver.integrate(|t, y, dy| rhs_into(t, y, params, dy), &mut tau, &mut y, target)?;
        let snap = ClassicalState::unpack(tau, &y);
        health.max_spin_length_drift = health.max_spin_length_drift.max((snap.spin_length() - length0).abs());
        out.push(snap);
        if target >= tau_end {
            break;
        }
        k += 1;
    }
    health.steps = solver.stats();
    Ok((out, health))
}

/// Envelope `½ΔNητ` of the resonant response `z = ½ΔNητ sin τ` to
/// `S_z = ½ cos τ`.
pub fn resonant_envelope(spin_count: f64, coupling: f64, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::domain("tau", format!("must be >= 0, got {tau}")));
    }
    Ok(0.5 * spin_count * coupling * tau)
}

/// Stationary amplitude `ΔNηQ_c` of the damped cantilever under the same
/// drive (force amplitude `ΔNη` times the quality factor).
pub fn stationary_amplitude(spin_count: f64, coupling: f64, quality_factor: f64) -> f64 {
    spin_count * coupling * quality_factor
}

/// `2η|z|/ε`, the size of the position-dependent field relative to the
/// transverse one.
pub fn nonlinearity_ratio(z_amplitude: f64, coupling: f64, rabi: f64) -> Result<f64> {
    if !(rabi > 0.0) {
        return Err(Error::domain("rabi", format!("must be positive, got {rabi}")));
    }
    Ok(2.0 * coupling * z_amplitude.abs() / rabi)
}

/// Per-cycle maxima of `f` over windows `[τ₀ + 2πk, τ₀ + 2π(k+1))`; only full
/// windows are reported.
pub fn cycle_maxima<F>(trajectory: &[ClassicalState], tau0: f64, f: F) -> Vec<f64>
where
    F: Fn(&ClassicalState) -> f64,
{
    let Some(last) = trajectory.last() else {
        return Vec::new();
    };
    let full = ((last.tau - tau0) / (2.0 * PI)).floor().max(0.0) as usize;
    let mut out = vec![f64::NEG_INFINITY; full];
    for s in trajectory.iter().filter(|s| s.tau >= tau0) {
        let k = ((s.tau - tau0) / (2.0 * PI)) as usize;
        if k < full {
            out[k] = out[k].max(f(s));
        }
    }
    out
}

/// Laboratory-unit classical state: position (m), momentum (kg·m/s) and the
/// magnetic moment `𝓜 = γħΔN S` (J/T); time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionalState {
    pub t: f64,
    pub position: f64,
    pub momentum: f64,
    pub moment: [f64; 3],
}

/// Integrates the laboratory-unit equations by reducing to dimensionless
/// form, running [`evolve_classical`] and converting back.
pub fn evolve_dimensional(
    state: &DimensionalState,
    physical: &PhysicalParams,
    drive: DriveProfile,
    t_end: f64,
    controls: &ClassicalControls,
) -> Result<Vec<DimensionalState>> {
    let (q, d) = reduce(physical)?;
    let omega = physical.omega_c();
    let moment_unit = physical.gamma() * HBAR * physical.effective_spin_count;
    let params = ClassicalParams::new(d.rabi, d.coupling, physical.effective_spin_count, drive)?;
    let init = ClassicalState {
        tau: state.t * omega,
        z: state.position / q.length_quantum,
        p: state.momentum / q.momentum_quantum,
        s: state.moment.map(|m| m / moment_unit),
    };
    let (traj, _) = evolve_classical(&init, &params, t_end * omega, controls)?;
    Ok(traj
        .into_iter()
        .map(|s| DimensionalState {
            t: s.tau / omega,
            position: s.z * q.length_quantum,
            momentum: s.p * q.momentum_quantum,
            moment: s.s.map(|x| x * moment_unit),
        })
        .collect())
}
