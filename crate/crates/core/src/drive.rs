//! Frequency-modulation profiles `φ̇(τ)` for cyclic adiabatic inversion.
//!
//! A profile is a linear ramp up to `ramp_end` followed by a sinusoid
//! `amplitude · sin(τ − phase_origin)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the jump of `φ̇` at the ramp joint.
pub const CONTINUITY_TOLERANCE: f64 = 1e-9;

/// Caller-side threshold on [`DriveProfile::adiabaticity_margin`].
pub const ADIABATICITY_WARNING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveProfile {
    pub ramp_offset: f64,
    pub ramp_slope: f64,
    pub ramp_end: f64,
    pub modulation_amplitude: f64,
    pub modulation_phase_origin: f64,
}

impl DriveProfile {
    /// Builds a profile and checks continuity at the joint.
    pub fn new(
        ramp_offset: f64,
        ramp_slope: f64,
        ramp_end: f64,
        modulation_amplitude: f64,
        modulation_phase_origin: f64,
    ) -> Result<Self> {
        let p = Self {
            ramp_offset,
            ramp_slope,
            ramp_end,
            modulation_amplitude,
            modulation_phase_origin,
        };
        p.validate()?;
        Ok(p)
    }

    /// `−600 + 30τ` up to `τ = 20`, then `100 sin(τ − 20)`.
    pub fn fig3() -> Self {
        Self {
            ramp_offset: -600.0,
            ramp_slope: 30.0,
            ramp_end: 20.0,
            modulation_amplitude: 100.0,
            modulation_phase_origin: 20.0,
        }
    }

    /// `−6000 + 300τ` up to `τ = 20`, then `1000 sin(τ − 20)`.
    pub fn fig4() -> Self {
        Self {
            ramp_offset: -6000.0,
            ramp_slope: 300.0,
            ramp_end: 20.0,
            modulation_amplitude: 1000.0,
            modulation_phase_origin: 20.0,
        }
    }

    /// Constant `φ̇`; the sinusoid has zero amplitude and the ramp is flat.
    pub fn constant(value: f64) -> Self {
        Self {
            ramp_offset: value,
            ramp_slope: 0.0,
            ramp_end: f64::MAX,
            modulation_amplitude: 0.0,
            modulation_phase_origin: 0.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "fig2" | "fig3" => Some(Self::fig3()),
            "fig4" => Some(Self::fig4()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("ramp_offset", self.ramp_offset),
            ("ramp_slope", self.ramp_slope),
            ("modulation_amplitude", self.modulation_amplitude),
            ("modulation_phase_origin", self.modulation_phase_origin),
        ];
        for (field, v) in fields {
            if !v.is_finite() {
                return Err(Error::domain(field, format!("must be finite, got {v}")));
            }
        }
        if self.ramp_end.is_nan() || self.ramp_end < 0.0 {
            return Err(Error::domain("ramp_end", format!("must be >= 0, got {}", self.ramp_end)));
        }
        let jump = self.joint_discontinuity();
        if jump >= CONTINUITY_TOLERANCE {
            return Err(Error::domain(
                "ramp_end",
                format!("phi_dot jumps by {jump:.3e} at the ramp joint"),
            ));
        }
        Ok(())
    }

    /// `|φ̇(ramp_end⁻) − φ̇(ramp_end⁺)|`; zero when the ramp never ends
    /// (`ramp_end == f64::MAX`).
    pub fn joint_discontinuity(&self) -> f64 {
        if self.ramp_end >= f64::MAX {
            return 0.0;
        }
        let left = self.ramp_offset + self.ramp_slope * self.ramp_end;
        let right = self.modulation_amplitude * (self.ramp_end - self.modulation_phase_origin).sin();
        (left - right).abs()
    }

    /// `φ̇(τ)` without the domain check, for the integrator hot path.
    #[inline]
    pub fn phi_dot_unchecked(&self, tau: f64) -> f64 {
        if tau <= self.ramp_end {
            self.ramp_offset + self.ramp_slope * tau
        } else {
            self.modulation_amplitude * (tau - self.modulation_phase_origin).sin()
        }
    }

    pub fn phi_dot(&self, tau: f64) -> Result<f64> {
        if !(tau >= 0.0) {
            return Err(Error::domain("tau", format!("must be >= 0, got {tau}")));
        }
        Ok(self.phi_dot_unchecked(tau))
    }

    /// `φ̈(τ)`; at the joint the right-hand limit is returned.
    pub fn phi_ddot(&self, tau: f64) -> f64 {
        if tau < self.ramp_end {
            self.ramp_slope
        } else {
            self.modulation_amplitude * (tau - self.modulation_phase_origin).cos()
        }
    }

    /// `max |φ̈| / ε²` over `[from, to]`, evaluated analytically.
    pub fn adiabaticity_margin(&self, rabi: f64, from: f64, to: f64) -> Result<f64> {
        if !(rabi > 0.0) {
            return Err(Error::domain("rabi", format!("must be positive, got {rabi}")));
        }
        if !(to > from) {
            return Err(Error::domain("tau_range", format!("empty range [{from}, {to}]")));
        }
        let mut max_ddot: f64 = 0.0;
        if from < self.ramp_end {
            max_ddot = max_ddot.max(self.ramp_slope.abs());
        }
        if to >= self.ramp_end {
            let lo = from.max(self.ramp_end) - self.modulation_phase_origin;
            let hi = to - self.modulation_phase_origin;
            max_ddot = max_ddot.max(self.modulation_amplitude.abs() * max_abs_cos(lo, hi));
        }
        Ok(max_ddot / (rabi * rabi))
    }
}

/// `max |cos x|` over `[lo, hi]`.
fn max_abs_cos(lo: f64, hi: f64) -> f64 {
    // |cos| peaks at integer multiples of π.
    let k = (lo / std::f64::consts::PI).ceil();
    if k * std::f64::consts::PI <= hi {
        return 1.0;
    }
    lo.cos().abs().max(hi.cos().abs())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn fig3_values() {
        let p = DriveProfile::fig3();
        assert_eq!(p.phi_dot(0.0).unwrap(), -600.0);
        assert!(p.phi_dot(20.0).unwrap().abs() < 1e-12);
        assert!(p.phi_dot(-1.0).is_err());
        assert_eq!(p.phi_ddot(10.0), 30.0);
        assert!(p.phi_ddot(20.0 + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn fig4_values() {
        let p = DriveProfile::fig4();
        assert!((p.phi_dot(20.0 + PI / 2.0).unwrap() - 1000.0).abs() < 1e-9);
        assert_eq!(p.phi_ddot(20.0), 1000.0);
    }

    #[test]
    fn presets_are_continuous() {
        assert!(DriveProfile::fig3().joint_discontinuity() < CONTINUITY_TOLERANCE);
        assert!(DriveProfile::fig4().joint_discontinuity() < CONTINUITY_TOLERANCE);
        assert!(DriveProfile::new(-600.0, 30.0, 20.0, 100.0, 20.0).is_ok());
        assert!(DriveProfile::new(-600.0, 31.0, 20.0, 100.0, 20.0).is_err());
    }

    #[test]
    fn modulation_is_two_pi_periodic() {
        let p = DriveProfile::fig3();
        for i in 0..50 {
            let tau = 20.5 + 0.37 * i as f64;
            let a = p.phi_dot(tau).unwrap();
            let b = p.phi_dot(tau + 2.0 * PI).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn adiabaticity_margins() {
        let a = DriveProfile::fig3().adiabaticity_margin(40.0, 0.0, 200.0).unwrap();
        assert!((a - 0.0625).abs() < 1e-15);
        let b = DriveProfile::fig4().adiabaticity_margin(400.0, 0.0, 200.0).unwrap();
        assert!((b - 0.00625).abs() < 1e-15);
        // Ramp only.
        let r = DriveProfile::fig3().adiabaticity_margin(40.0, 0.0, 10.0).unwrap();
        assert!((r - 30.0 / 1600.0).abs() < 1e-15);
        let flat = DriveProfile::new(0.0, 0.0, 20.0, 0.0, 0.0).unwrap();
        assert_eq!(flat.adiabaticity_margin(3.0, 21.0, 100.0).unwrap(), 0.0);
        assert!(flat.adiabaticity_margin(3.0, 5.0, 5.0).is_err());
        assert!(flat.adiabaticity_margin(0.0, 0.0, 5.0).is_err());
    }

    #[test]
    fn margin_on_short_window_uses_endpoints() {
        // cos over [0.2, 0.5] (relative to the phase origin) peaks at 0.2.
        let p = DriveProfile::fig3();
        let m = p.adiabaticity_margin(40.0, 20.2, 20.5).unwrap();
        assert!((m - 100.0 * 0.2f64.cos() / 1600.0).abs() < 1e-15);
    }

    #[test]
    fn constant_profile() {
        let p = DriveProfile::constant(3.5);
        assert_eq!(p.phi_dot(1e6).unwrap(), 3.5);
        assert_eq!(p.phi_ddot(7.0), 0.0);
    }
}
