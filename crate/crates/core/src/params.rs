//! Laboratory parameters of the spin-cantilever system and their reduction to
//! the dimensionless units used by the engines.
//!
//! Energies are measured in cantilever quanta `ħω_c`, lengths in `Z_c`,
//! momenta in `P_c` and time in `τ = ω_c t`. Exact resonance of the rf
//! carrier with the Larmor frequency is assumed throughout.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant (CODATA 2018, exact), J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Laboratory-scale description of the cantilever, the rf field and the spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// `ω_c / 2π` in Hz.
    pub cantilever_frequency: f64,
    /// `k_c` in N/m.
    pub force_constant: f64,
    /// `B₁` in T.
    pub rf_field: f64,
    /// `∂B_z/∂Z` in T/m.
    pub field_gradient: f64,
    /// `γ / 2π` in Hz/T.
    pub gyromagnetic_ratio: f64,
    /// `Q_c`.
    pub quality_factor: f64,
    /// Effective number of polarized spins `ΔN`.
    pub effective_spin_count: f64,
}

impl PhysicalParams {
    /// Proton MRFM measurement in ammonium nitrate, including `ΔN = 2.9e9`
    /// and `Q_c = 1e3`.
    pub fn ammonium_nitrate() -> Self {
        Self {
            cantilever_frequency: 1.4e3,
            force_constant: 1e-3,
            rf_field: 1.2e-3,
            field_gradient: 600.0,
            gyromagnetic_ratio: 4.3e7,
            quality_factor: 1e3,
            effective_spin_count: 2.9e9,
        }
    }

    /// Angular cantilever frequency `ω_c` in rad/s.
    pub fn omega_c(&self) -> f64 {
        2.0 * PI * self.cantilever_frequency
    }

    /// Angular gyromagnetic ratio `γ` in rad/(s·T).
    pub fn gamma(&self) -> f64 {
        2.0 * PI * self.gyromagnetic_ratio
    }

    /// Checks the strict positivity invariants. A zero field gradient is
    /// accepted: it describes a decoupled spin.
    pub fn validate(&self) -> Result<()> {
        let strictly_positive = [
            ("cantilever_frequency", self.cantilever_frequency),
            ("force_constant", self.force_constant),
            ("rf_field", self.rf_field),
            ("gyromagnetic_ratio", self.gyromagnetic_ratio),
            ("quality_factor", self.quality_factor),
        ];
        for (field, value) in strictly_positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::domain(field, format!("must be positive and finite, got {value}")));
            }
        }
        if !(self.field_gradient >= 0.0 && self.field_gradient.is_finite()) {
            return Err(Error::domain(
                "field_gradient",
                format!("must be non-negative and finite, got {}", self.field_gradient),
            ));
        }
        if !(self.effective_spin_count >= 1.0 && self.effective_spin_count.is_finite()) {
            return Err(Error::domain(
                "effective_spin_count",
                format!("must be at least 1, got {}", self.effective_spin_count),
            ));
        }
        Ok(())
    }
}

/// Oscillator quanta of energy, force, length and momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorQuanta {
    /// `E_c = ħω_c`, J.
    pub energy_quantum: f64,
    /// `F_c = √(k_c E_c)`, N.
    pub force_quantum: f64,
    /// `Z_c = √(E_c / k_c)`, m.
    pub length_quantum: f64,
    /// `P_c = ħ / Z_c`, kg·m/s.
    pub momentum_quantum: f64,
}

/// Dimensionless model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessParams {
    /// `ε = ω₁ / ω_c`.
    pub rabi: f64,
    /// `η = gμ (∂B_z/∂Z) / 2F_c`.
    pub coupling: f64,
    /// Number of retained Fock states `N`.
    pub basis_size: usize,
}

impl DimensionlessParams {
    pub fn new(rabi: f64, coupling: f64, basis_size: usize) -> Result<Self> {
        let p = Self {
            rabi,
            coupling,
            basis_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rabi > 0.0 && self.rabi.is_finite()) {
            return Err(Error::domain("rabi", format!("must be positive, got {}", self.rabi)));
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(Error::domain(
                "coupling",
                format!("must be non-negative, got {}", self.coupling),
            ));
        }
        if self.basis_size < 2 {
            return Err(Error::domain(
                "basis_size",
                format!("must be at least 2, got {}", self.basis_size),
            ));
        }
        Ok(())
    }
}

/// Computes the oscillator quanta and the reduced Rabi frequency and coupling.
///
/// The returned `basis_size` is a placeholder of 2; the Fock truncation is a
/// numerical choice, not a physical one.
pub fn reduce(p: &PhysicalParams) -> Result<(OscillatorQuanta, DimensionlessParams)> {
    p.validate()?;
    let omega_c = p.omega_c();
    let energy_quantum = HBAR * omega_c;
    let force_quantum = (p.force_constant * energy_quantum).sqrt();
    let length_quantum = (energy_quantum / p.force_constant).sqrt();
    let momentum_quantum = HBAR / length_quantum;

    let quanta = OscillatorQuanta {
        energy_quantum,
        force_quantum,
        length_quantum,
        momentum_quantum,
    };
    // gμ = ħγ for the spin magnetic moment.
    let rabi = p.gamma() * p.rf_field / omega_c;
    let coupling = HBAR * p.gamma() * p.field_gradient / (2.0 * force_quantum);
    Ok((
        quanta,
        DimensionlessParams {
            rabi,
            coupling,
            basis_size: 2,
        },
    ))
}

/// `τ = ω_c t`.
pub fn time_to_dimensionless(t: f64, p: &PhysicalParams) -> f64 {
    p.omega_c() * t
}

/// Inverse of [`time_to_dimensionless`].
pub fn time_to_seconds(tau: f64, p: &PhysicalParams) -> f64 {
    tau / p.omega_c()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn ammonium_nitrate_reduction_matches_quoted_values() {
        let (q, d) = reduce(&PhysicalParams::ammonium_nitrate()).unwrap();
        assert!(rel(q.energy_quantum, 9.2e-31) < 0.05);
        assert!(rel(q.force_quantum, 3e-17) < 0.05);
        assert!(rel(q.length_quantum, 3e-14) < 0.05);
        assert!(rel(q.momentum_quantum, 3.5e-21) < 0.05);
        assert!(rel(d.rabi, 37.0) < 0.05);
        assert!(rel(d.coupling, 2.8e-7) < 0.05);
    }

    #[test]
    fn quanta_identities_hold() {
        let p = PhysicalParams::ammonium_nitrate();
        let (q, _) = reduce(&p).unwrap();
        assert!(rel(q.energy_quantum, HBAR * p.omega_c()) < 1e-12);
        assert!(rel(q.force_quantum, (p.force_constant * q.energy_quantum).sqrt()) < 1e-12);
        assert!(rel(q.length_quantum, (q.energy_quantum / p.force_constant).sqrt()) < 1e-12);
        assert!(rel(q.momentum_quantum, HBAR / q.length_quantum) < 1e-12);
        // F_c Z_c = E_c follows from the definitions.
        assert!(rel(q.force_quantum * q.length_quantum, q.energy_quantum) < 1e-12);
    }

    #[test]
    fn unit_rabi_when_rf_matches_cantilever() {
        let mut p = PhysicalParams::ammonium_nitrate();
        p.rf_field = p.omega_c() / p.gamma();
        let (_, d) = reduce(&p).unwrap();
        assert!((d.rabi - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_gradient_decouples() {
        let mut p = PhysicalParams::ammonium_nitrate();
        p.field_gradient = 0.0;
        assert_eq!(reduce(&p).unwrap().1.coupling, 0.0);
    }

    #[test]
    fn non_positive_input_names_field() {
        let mut p = PhysicalParams::ammonium_nitrate();
        p.force_constant = -1.0;
        match reduce(&p) {
            Err(Error::Domain { field, .. }) => assert_eq!(field, "force_constant"),
            other => panic!("unexpected {other:?}"),
        }
        let mut p = PhysicalParams::ammonium_nitrate();
        p.effective_spin_count = 0.5;
        assert!(matches!(
            reduce(&p),
            Err(Error::Domain {
                field: "effective_spin_count",
                ..
            })
        ));
    }

    #[test]
    fn time_conversion() {
        let p = PhysicalParams::ammonium_nitrate();
        let period = 2.0 * PI / p.omega_c();
        assert!((time_to_dimensionless(period, &p) - 2.0 * PI).abs() < 1e-12);
        let t_c = p.quality_factor / p.omega_c();
        assert!(rel(time_to_dimensionless(t_c, &p), p.quality_factor) < 1e-12);
        assert_eq!(time_to_dimensionless(0.0, &p), 0.0);
        assert!(rel(time_to_seconds(2.0 * PI, &p), period) < 1e-12);
    }

    #[test]
    fn stationary_amplitude_in_nanometres() {
        let (q, _) = reduce(&PhysicalParams::ammonium_nitrate()).unwrap();
        let metres = 8.1e5 * q.length_quantum;
        assert!(rel(metres, 24e-9) < 0.05, "{metres}");
    }

    #[test]
    fn dimensionless_invariants() {
        assert!(DimensionlessParams::new(40.0, 0.03, 2000).is_ok());
        assert!(DimensionlessParams::new(0.0, 0.03, 2000).is_err());
        assert!(DimensionlessParams::new(40.0, -0.1, 2000).is_err());
        assert!(DimensionlessParams::new(40.0, 0.0, 1).is_err());
    }
}
