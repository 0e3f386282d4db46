//! Measurable quantities of a [`SpinorFockState`]: spatial densities, spin
//! populations, first moments and the spin–position correlations `R₁`, `R₂`.
//!
//! Spin operators are `S = σ/2` with the standard Pauli matrices, so
//! `⟨S_x⟩ = Σ Re(A_n* B_n)` and `⟨S_y⟩ = Σ Im(A_n* B_n)`. These conventions
//! make the Ehrenfest relations of the rotating-frame Hamiltonian hold.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::SpinorFockState;

/// Boundary density above which a grid is reported as too narrow.
pub const COVERAGE_LIMIT: f64 = 1e-12;

/// Uniform grid on `[z_min, z_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub points: usize,
}

impl Default for SpatialGrid {
    /// `[−60, 60]` with 2400 points.
    fn default() -> Self {
        Self {
            z_min: -60.0,
            z_max: 60.0,
            points: 2400,
        }
    }
}

impl SpatialGrid {
    pub fn new(z_min: f64, z_max: f64, points: usize) -> Result<Self> {
        let g = Self { z_min, z_max, points };
        g.validate()?;
        Ok(g)
    }

    /// Symmetric grid covering `±(√2|α| + 6)`.
    pub fn covering(alpha_abs: f64, points: usize) -> Result<Self> {
        let half = SQRT_2 * alpha_abs + 6.0;
        Self::new(-half, half, points)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_min < self.z_max) {
            return Err(Error::domain("grid", format!("need z_min < z_max, got [{}, {}]", self.z_min, self.z_max)));
        }
        if self.points < 2 {
            return Err(Error::domain("grid", "need at least 2 points"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.z_max - self.z_min) / (self.points - 1) as f64
    }

    pub fn z(&self, i: usize) -> f64 {
        self.z_min + self.spacing() * i as f64
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.z(i)).collect()
    }

    /// Trapezoid integral of `values` sampled on this grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        trapezoid(values, self.spacing())
    }
}

pub(crate) fn trapezoid(values: &[f64], dz: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dz * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

/// Oscillator eigenfunctions `h_n(z)` sampled on a grid, row-major by `n`.
#[derive(Debug, Clone)]
pub struct HermiteBasis {
    grid: SpatialGrid,
    basis_size: usize,
    values: Vec<f64>,
}

impl HermiteBasis {
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn basis_size(&self) -> usize {
        self.basis_size
    }

    /// `h_n` on the grid.
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.grid.points..(n + 1) * self.grid.points]
    }

    /// `Σ_n c_n h_n(z)` on the grid, for `c` no longer than the basis.
    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid.points];
        for (n, c) in coeffs.iter().enumerate().take(self.basis_size) {
            if c.re == 0.0 && c.im == 0.0 {
                continue;
            }
            for (o, h) in out.iter_mut().zip(self.row(n)) {
                *o += c * h;
            }
        }
        out
    }

    /// `c_n = ∫ h_n(z) f(z) dz` by the trapezoid rule.
    pub fn project(&self, f: &[Complex64]) -> Vec<Complex64> {
        let dz = self.grid.spacing();
        let last = self.grid.points - 1;
        (0..self.basis_size)
            .map(|n| {
                let row = self.row(n);
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, (h, v)) in row.iter().zip(f).enumerate() {
                    let w = if i == 0 || i == last { 0.5 } else { 1.0 };
                    acc += v * (h * w);
                }
                acc * dz
            })
            .collect()
    }
}

/// Orthonormal oscillator eigenfunctions via the normalized three-term
/// recurrence `h_{n+1} = z √(2/(n+1)) h_n − √(n/(n+1)) h_{n−1}`, with a running
/// exponent so `e^{−z²/2}` never underflows before the polynomial grows.
pub fn hermite_basis(grid: SpatialGrid, basis_size: usize) -> Result<HermiteBasis> {
    grid.validate()?;
    if basis_size < 1 {
        return Err(Error::domain("basis_size", "must be at least 1"));
    }
    const RESCALE: f64 = 1e150;
    let ln_rescale = RESCALE.ln();
    let points = grid.points;
    let mut values = vec![0.0; basis_size * points];
    let coef_a: Vec<f64> = (0..basis_size).map(|n| (2.0 / (n + 1) as f64).sqrt()).collect();
    let coef_b: Vec<f64> = (0..basis_size).map(|n| (n as f64 / (n + 1) as f64).sqrt()).collect();
    let norm0 = PI.powf(-0.25);
    for i in 0..points {
        let z = grid.z(i);
        // h_n = mantissa · exp(log_scale)
        let mut log_scale = -0.5 * z * z;
        let mut prev = 0.0;
        let mut cur = norm0;
        for n in 0..basis_size {
            values[n * points + i] = if log_scale < -745.0 { 0.0 } else { cur * log_scale.exp() };
            let next = z * coef_a[n] * cur - coef_b[n] * prev;
            prev = cur;
            cur = next;
            if cur.abs() > RESCALE {
                cur /= RESCALE;
                prev /= RESCALE;
                log_scale += ln_rescale;
            }
        }
    }
    Ok(HermiteBasis {
        grid,
        basis_size,
        values,
    })
}

/// `P(z)`, `|Ψ₁(z)|²` and `|Ψ₂(z)|²` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySnapshot {
    pub tau: f64,
    pub grid: SpatialGrid,
    pub p_total: Vec<f64>,
    pub p_up: Vec<f64>,
    pub p_down: Vec<f64>,
}

impl DensitySnapshot {
    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.p_total)
    }

    /// Largest density at either grid edge.
    pub fn boundary_density(&self) -> f64 {
        let n = self.p_total.len();
        self.p_total[0].max(self.p_total[n - 1])
    }

    pub fn covers(&self) -> bool {
        self.boundary_density() <= COVERAGE_LIMIT
    }

    /// Builds a snapshot from sampled densities; `p_total` is their sum.
    pub fn from_components(tau: f64, grid: SpatialGrid, p_up: Vec<f64>, p_down: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if p_up.len() != grid.points || p_down.len() != grid.points {
            return Err(Error::Precondition("density length differs from grid".into()));
        }
        let p_total = p_up.iter().zip(&p_down).map(|(u, d)| u + d).collect();
        Ok(Self {
            tau,
            grid,
            p_total,
            p_up,
            p_down,
        })
    }
}

/// Spatial density of a state. A narrow grid is not an error; check
/// [`DensitySnapshot::covers`].
pub fn density(state: &SpinorFockState, basis: &HermiteBasis) -> Result<DensitySnapshot> {
    if state.basis_size() > basis.basis_size() {
        return Err(Error::Precondition(format!(
            "hermite basis holds {} functions, state needs {}",
            basis.basis_size(),
            state.basis_size()
        )));
    }
    let up = basis.synthesize(&state.up_amplitudes());
    let down = basis.synthesize(&state.down_amplitudes());
    DensitySnapshot::from_components(
        state.tau,
        basis.grid,
        up.iter().map(|c| c.norm_sqr()).collect(),
        down.iter().map(|c| c.norm_sqr()).collect(),
    )
}

/// `(P₁₁, P₂₂) = (Σ|A_n|², Σ|B_n|²)`.
pub fn populations(state: &SpinorFockState) -> (f64, f64) {
    state
        .pairs()
        .fold((0.0, 0.0), |(u, d), (a, b)| (u + a.norm_sqr(), d + b.norm_sqr()))
}

/// First moments of position, momentum and spin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub z: f64,
    pub p: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Means {
    /// Phase-space radius `√(⟨z⟩² + ⟨p_z⟩²)`, the oscillation amplitude.
    pub fn amplitude(&self) -> f64 {
        self.z.hypot(self.p)
    }

    pub fn spin_length(&self) -> f64 {
        (self.sx * self.sx + self.sy * self.sy + self.sz * self.sz).sqrt()
    }
}

/// Ladder contractions of an interleaved spinor, each `Σ √(n+1) x_n* y_{n+1}`:
/// `(AA + BB, AB, BA)`.
fn raise_contractions(amps: &[Complex64]) -> (Complex64, Complex64, Complex64) {
    let zero = Complex64::new(0.0, 0.0);
    let (mut diag, mut ab, mut ba) = (zero, zero, zero);
    for (n, w) in amps.windows(4).step_by(2).enumerate() {
        let r = ((n + 1) as f64).sqrt();
        let (a0, b0, a1, b1) = (w[0].conj(), w[1].conj(), w[2], w[3]);
        diag += (a0 * a1 + b0 * b1) * r;
        ab += a0 * b1 * r;
        ba += b0 * a1 * r;
    }
    (diag, ab, ba)
}

pub fn means(state: &SpinorFockState) -> Means {
    let (ladder, _, _) = raise_contractions(state.amplitudes());
    let (p11, p22) = populations(state);
    let cross: Complex64 = state.pairs().map(|(x, y)| x.conj() * y).sum();
    Means {
        z: SQRT_2 * ladder.re,
        p: SQRT_2 * ladder.im,
        sx: cross.re,
        sy: cross.im,
        sz: 0.5 * (p11 - p22),
    }
}

/// Quantum correlation functions `R₁ = ⟨zS_y⟩ − ⟨z⟩⟨S_y⟩`, `R₂ = ⟨zS_x⟩ − ⟨z⟩⟨S_x⟩`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub r1: f64,
    pub r2: f64,
}

impl Correlations {
    pub fn max_abs(&self) -> f64 {
        self.r1.abs().max(self.r2.abs())
    }
}

pub fn correlations(state: &SpinorFockState) -> Correlations {
    // ⟨ψ|z ⊗ (σ/2)|ψ⟩ with z = (a + a†)/√2.
    let (_, ab, ba) = raise_contractions(state.amplitudes());
    let mixed = (ab + ba.conj()) / SQRT_2;
    let z_sx = mixed.re;
    let z_sy = mixed.im;
    let m = means(state);
    Correlations {
        r1: z_sy - m.z * m.sy,
        r2: z_sx - m.z * m.sx,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{coherent_state, CoherentInit, Spinor};

    const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
    const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

    #[test]
    fn ground_state_peak() {
        let grid = SpatialGrid::new(-1.0, 1.0, 3).unwrap();
        let b = hermite_basis(grid, 1).unwrap();
        assert!((b.row(0)[1] - PI.powf(-0.25)).abs() < 1e-15);
        assert!((b.row(0)[1] - 0.7511).abs() < 1e-4);
    }

    #[test]
    fn orthonormal_to_fifty() {
        let grid = SpatialGrid::new(-15.0, 15.0, 3001).unwrap();
        let b = hermite_basis(grid, 51).unwrap();
        for n in 0..=50 {
            for m in n..=50 {
                let prod: Vec<f64> = b.row(n).iter().zip(b.row(m)).map(|(x, y)| x * y).collect();
                let s = grid.integrate(&prod);
                let expected = if n == m { 1.0 } else { 0.0 };
                assert!((s - expected).abs() < 1e-8, "n={n} m={m} {s}");
            }
        }
    }

    #[test]
    fn matches_explicit_low_order_functions() {
        let grid = SpatialGrid::new(-4.0, 4.0, 17).unwrap();
        let b = hermite_basis(grid, 3).unwrap();
        let c = PI.powf(-0.25);
        for i in 0..grid.points {
            let z = grid.z(i);
            let g = (-0.5 * z * z).exp();
            assert!((b.row(1)[i] - c * SQRT_2 * z * g).abs() < 1e-14);
            assert!((b.row(2)[i] - c * (2.0 * z * z - 1.0) / SQRT_2 * g).abs() < 1e-14);
        }
    }

    #[test]
    fn deep_tail_survives_rescaling() {
        // At z = 60 the Gaussian factor alone underflows, but h_1999 is sizable.
        let grid = SpatialGrid::new(60.0, 61.0, 2).unwrap();
        let b = hermite_basis(grid, 2000).unwrap();
        assert_eq!(b.row(0)[0], 0.0);
        let h = b.row(1999)[0].abs();
        assert!(h > 1e-3 && h < 1.0, "{h}");
    }

    #[test]
    fn coherent_wavefunction_is_gaussian() {
        let init = CoherentInit::from_means(-20.0, 0.0);
        let state = coherent_state(init, Spinor::UP, 2000).unwrap();
        let grid = SpatialGrid::default();
        let basis = hermite_basis(grid, 2000).unwrap();
        let psi = basis.synthesize(&state.up_amplitudes());
        let x0 = SQRT_2 * init.alpha.re;
        let mut worst: f64 = 0.0;
        for (i, v) in psi.iter().enumerate() {
            let z = grid.z(i);
            // α real: ψ(z) = π^{-1/4} exp(−(z − √2α)²/2).
            let exact = PI.powf(-0.25) * (-0.5 * (z - x0) * (z - x0)).exp();
            worst = worst.max((v - exact).norm());
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn density_of_vacuum_up() {
        let s = SpinorFockState::fock(0, ONE, ZERO, 4).unwrap();
        let grid = SpatialGrid::new(-10.0, 10.0, 801).unwrap();
        let basis = hermite_basis(grid, 4).unwrap();
        let d = density(&s, &basis).unwrap();
        for (i, p) in d.p_total.iter().enumerate() {
            assert!((p - basis.row(0)[i].powi(2)).abs() < 1e-15);
        }
        assert!(d.p_down.iter().all(|&p| p == 0.0));
        assert!((d.integral() - 1.0).abs() < 1e-6);
        assert!(d.covers());
    }

    #[test]
    fn narrow_grid_is_flagged() {
        let s = coherent_state(CoherentInit::from_means(3.0, 0.0), Spinor::UP, 60).unwrap();
        let basis = hermite_basis(SpatialGrid::new(-2.0, 2.0, 101).unwrap(), 60).unwrap();
        assert!(!density(&s, &basis).unwrap().covers());
    }

    #[test]
    fn parseval_against_populations() {
        let s = coherent_state(CoherentInit::from_means(5.0, -3.0), Spinor::from_angles(2.0, 0.5), 120).unwrap();
        let basis = hermite_basis(SpatialGrid::new(-20.0, 20.0, 1601).unwrap(), 120).unwrap();
        let d = density(&s, &basis).unwrap();
        let (p11, p22) = populations(&s);
        assert!((d.grid.integrate(&d.p_up) - p11).abs() < 1e-6);
        assert!((d.grid.integrate(&d.p_down) - p22).abs() < 1e-6);
        assert!((p11 + p22 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn projection_inverts_synthesis() {
        let s = coherent_state(CoherentInit::from_means(2.0, 1.0), Spinor::UP, 40).unwrap();
        let basis = hermite_basis(SpatialGrid::new(-15.0, 15.0, 1201).unwrap(), 40).unwrap();
        let up = s.up_amplitudes();
        let back = basis.project(&basis.synthesize(&up));
        for (x, y) in back.iter().zip(&up) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn vacuum_means() {
        let s = SpinorFockState::fock(0, ONE, ZERO, 4).unwrap();
        let m = means(&s);
        assert_eq!((m.z, m.p, m.sx, m.sy, m.sz), (0.0, 0.0, 0.0, 0.0, 0.5));
    }

    #[test]
    fn product_states_have_no_correlations() {
        for (theta, phi) in [(0.0, 0.0), (1.1, 0.3), (2.5, -2.0)] {
            let s = coherent_state(CoherentInit::from_means(-7.0, 4.0), Spinor::from_angles(theta, phi), 200).unwrap();
            let c = correlations(&s);
            assert!(c.max_abs() < 1e-12, "{c:?}");
            let m = means(&s);
            assert!((m.spin_length() - 0.5).abs() < 1e-12);
            assert!((m.sx - 0.5 * theta.sin() * phi.cos()).abs() < 1e-12);
            assert!((m.sy - 0.5 * theta.sin() * phi.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn entangled_state_correlations() {
        // (|0,↑⟩ + |1,↓⟩)/√2: ⟨z S_x⟩ = 1/(2√2), all first moments vanish.
        let h = 1.0 / SQRT_2;
        let a = [Complex64::new(h, 0.0), ZERO, ZERO];
        let b = [ZERO, Complex64::new(h, 0.0), ZERO];
        let s = SpinorFockState::new(&a, &b, 0.0).unwrap();
        let c = correlations(&s);
        assert!((c.r2 - 0.5 / SQRT_2).abs() < 1e-15);
        assert!(c.r1.abs() < 1e-15);
        let b_i = [ZERO, Complex64::new(0.0, h), ZERO];
        let c = correlations(&SpinorFockState::new(&a, &b_i, 0.0).unwrap());
        assert!((c.r1 - 0.5 / SQRT_2).abs() < 1e-15);
    }
}
