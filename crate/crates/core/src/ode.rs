//! Adaptive embedded Runge–Kutta integrators over flat slices.
//!
//! Both engines share this stepper so that quantum and classical runs are
//! integrated with the same method and tolerances. The state is a slice of
//! [`Element`]s (real or complex); step-size control follows the reference
//! `dopri5`/`dop853` codes.

use std::ops::{Add, Mul};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type the integrator can carry.
pub trait Element: Copy + Default + Add<Output = Self> + Mul<f64, Output = Self> {
    fn modulus(self) -> f64;
}

impl Element for f64 {
    #[inline]
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Element for Complex64 {
    #[inline]
    fn modulus(self) -> f64 {
        self.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; `0` picks one from the right-hand side.
    pub initial_step: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: u64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-13,
            atol: 1e-13,
            initial_step: 0.0,
            max_step: 0.1,
            min_step: 1e-13,
            max_steps: 500_000_000,
        }
    }
}

/// Counters reported for health metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub evaluations: u64,
}

const DOPRI5_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DOPRI5_A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DOPRI5_B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DOPRI5_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

// Dormand–Prince 8(5,3), coefficients of the reference `dop853` code.
const DOP853_C: [f64; 12] = [0.0, 0.05260015195876773, 0.0789002279381516, 0.1183503419072274, 0.2816496580927726, 0.3333333333333333, 0.25, 0.3076923076923077, 0.6512820512820513, 0.6, 0.8571428571428571, 1.0];
const DOP853_A: [&[f64]; 12] = [
    &[],
    &[0.05260015195876773],
    &[0.0197250569845379, 0.0591751709536137],
    &[0.02958758547680685, 0.0, 0.08876275643042054],
    &[0.2413651341592667, 0.0, -0.8845494793282861, 0.924834003261792],
    &[0.037037037037037035, 0.0, 0.0, 0.17082860872947386, 0.12546768756682242],
    &[0.037109375, 0.0, 0.0, 0.17025221101954405, 0.06021653898045596, -0.017578125],
    &[0.03709200011850479, 0.0, 0.0, 0.17038392571223998, 0.10726203044637328, -0.015319437748624402, 0.008273789163814023],
    &[0.6241109587160757, 0.0, 0.0, -3.3608926294469414, -0.868219346841726, 27.59209969944671, 20.154067550477894, -43.48988418106996],
    &[0.47766253643826434, 0.0, 0.0, -2.4881146199716677, -0.590290826836843, 21.230051448181193, 15.279233632882423, -33.28821096898486, -0.020331201708508627],
    &[-0.9371424300859873, 0.0, 0.0, 5.186372428844064, 1.0914373489967295, -8.149787010746927, -18.52006565999696, 22.739487099350505, 2.4936055526796523, -3.0467644718982196],
    &[2.273310147516538, 0.0, 0.0, -10.53449546673725, -2.0008720582248625, -17.9589318631188, 27.94888452941996, -2.8589982771350235, -8.87285693353063, 12.360567175794303, 0.6433927460157636],
];
const DOP853_B: [f64; 12] = [0.054293734116568765, 0.0, 0.0, 0.0, 0.0, 4.450312892752409, 1.8915178993145003, -5.801203960010585, 0.3111643669578199, -0.1521609496625161, 0.20136540080403034, 0.04471061572777259];
const DOP853_E3: [f64; 12] = [-0.18980075407240762, 0.0, 0.0, 0.0, 0.0, 4.450312892752409, 1.8915178993145003, -5.801203960010585, -0.4226823213237919, -0.1521609496625161, 0.20136540080403034, 0.02265179219836082];
const DOP853_E5: [f64; 12] = [0.01312004499419488, 0.0, 0.0, 0.0, 0.0, -1.2251564463762044, -0.4957589496572502, 1.6643771824549864, -0.35032884874997366, 0.3341791187130175, 0.08192320648511571, -0.022355307863886294];

/// Embedded explicit Runge–Kutta pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Dormand–Prince 5(4), first-same-as-last.
    Dopri5,
    /// Dormand–Prince 8(5,3).
    #[default]
    Dop853,
}

impl Method {
    fn c(self) -> &'static [f64] {
        match self {
            Method::Dopri5 => &DOPRI5_C,
            Method::Dop853 => &DOP853_C,
        }
    }

    fn a(self) -> &'static [&'static [f64]] {
        match self {
            Method::Dopri5 => &DOPRI5_A,
            Method::Dop853 => &DOP853_A,
        }
    }

    fn b(self) -> &'static [f64] {
        match self {
            Method::Dopri5 => &DOPRI5_B,
            Method::Dop853 => &DOP853_B,
        }
    }

    /// The last stage is evaluated at the new point and doubles as the
    /// next step's first stage.
    fn fsal(self) -> bool {
        matches!(self, Method::Dopri5)
    }

    /// Controller exponent `1/(q+1) − 0.75β` and PI weight `β`.
    fn controller(self) -> (f64, f64) {
        match self {
            Method::Dopri5 => (0.2 - 0.75 * 0.04, 0.04),
            Method::Dop853 => (1.0 / 8.0, 0.0),
        }
    }

    fn stages(self) -> usize {
        self.c().len()
    }
}

const SAFETY: f64 = 0.9;

/// Reusable stepper. Keeps the last accepted step size and the first stage
/// between calls to [`AdaptiveRk::integrate`], so a run split into snapshot
/// segments follows the same step sequence as an uninterrupted run apart
/// from the final shortened step of each segment.
#[derive(Debug, Clone)]
pub struct AdaptiveRk<T: Element> {
    method: Method,
    tol: Tolerances,
    k: Vec<Vec<T>>,
    y_stage: Vec<T>,
    y_new: Vec<T>,
    h: f64,
    fac_old: f64,
    first_stage_valid: bool,
    stats: StepStats,
}

impl<T: Element> AdaptiveRk<T> {
    pub fn new(method: Method, dim: usize, tol: Tolerances) -> Self {
        Self {
            method,
            tol,
            k: vec![vec![T::default(); dim]; method.stages()],
            y_stage: vec![T::default(); dim],
            y_new: vec![T::default(); dim],
            h: tol.initial_step,
            fac_old: 1e-4,
            first_stage_valid: false,
            stats: StepStats::default(),
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    /// Last proposed step size.
    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.y_new.len()
    }

    /// Invalidates the cached first stage; call after editing the state
    /// outside the integrator.
    pub fn reset(&mut self) {
        self.first_stage_valid = false;
    }

    /// Resizes the workspace, keeping step size and counters.
    pub fn resize(&mut self, dim: usize) {
        for k in &mut self.k {
            k.resize(dim, T::default());
        }
        self.y_stage.resize(dim, T::default());
        self.y_new.resize(dim, T::default());
        self.first_stage_valid = false;
    }

    fn initial_step<F>(&mut self, f: &mut F, t: f64, y: &[T], span: f64) -> f64
    where
        F: FnMut(f64, &[T], &mut [T]),
    {
        // Hairer–Nørsett–Wanner starting step heuristic.
        let (k1, rest) = self.k.split_first_mut().expect("at least one stage");
        let k2 = &mut rest[0];
        let (mut d0, mut d1) = (0.0, 0.0);
        for (yi, fi) in y.iter().zip(k1.iter()) {
            let sc = self.tol.atol + self.tol.rtol * yi.modulus();
            d0 += (yi.modulus() / sc).powi(2);
            d1 += (fi.modulus() / sc).powi(2);
        }
        let n = y.len().max(1) as f64;
        d0 = (d0 / n).sqrt();
        d1 = (d1 / n).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        for (ys, (yi, fi)) in self.y_stage.iter_mut().zip(y.iter().zip(k1.iter())) {
            *ys = *yi + *fi * h0;
        }
        f(t + h0, &self.y_stage, k2);
        self.stats.evaluations += 1;
        let mut d2 = 0.0;
        for ((yi, f1), f2) in y.iter().zip(k1.iter()).zip(k2.iter()) {
            let sc = self.tol.atol + self.tol.rtol * yi.modulus();
            d2 += ((*f2 + *f1 * -1.0).modulus() / sc).powi(2);
        }
        d2 = (d2 / n).sqrt() / h0;
        let order = match self.method {
            Method::Dopri5 => 5.0,
            Method::Dop853 => 8.0,
        };
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / order)
        };
        (100.0 * h0).min(h1).min(span).min(self.tol.max_step)
    }

    /// Advances `y` from `*t` to exactly `t_end`.
    pub fn integrate<F>(&mut self, mut f: F, t: &mut f64, y: &mut [T], t_end: f64) -> Result<()>
    where
        F: FnMut(f64, &[T], &mut [T]),
    {
        if t_end <= *t {
            return Ok(());
        }
        if y.len() != self.dim() {
            self.resize(y.len());
        }
        if !self.first_stage_valid {
            f(*t, y, &mut self.k[0]);
            self.stats.evaluations += 1;
            self.first_stage_valid = true;
        }
        if !(self.h > 0.0) {
            self.h = self.initial_step(&mut f, *t, y, t_end - *t);
        }
        let (expo, beta) = self.method.controller();
        let (fac_min, fac_max) = match self.method {
            Method::Dopri5 => (0.2, 10.0),
            Method::Dop853 => (0.333, 6.0),
        };
        let mut last = false;
        while !last {
            if self.stats.accepted + self.stats.rejected >= self.tol.max_steps {
                return Err(Error::StepBudget {
                    tau: *t,
                    max_steps: self.tol.max_steps,
                });
            }
            let mut h = self.h.min(self.tol.max_step);
            if *t + h * 1.000_000_1 >= t_end {
                h = t_end - *t;
                last = true;
            }
            if h < self.tol.min_step && !last {
                return Err(Error::StepUnderflow { tau: *t, step: h });
            }
            let err = self.attempt(&mut f, *t, y, h);
            let fac11 = err.powf(expo);
            if err <= 1.0 {
                let fac = (fac11 / self.fac_old.powf(beta) / SAFETY).clamp(1.0 / fac_max, 1.0 / fac_min);
                self.fac_old = err.max(1e-4);
                self.stats.accepted += 1;
                let t_new = if last { t_end } else { *t + h };
                y.copy_from_slice(&self.y_new);
                if self.method.fsal() {
                    let s = self.k.len();
                    self.k.swap(0, s - 1);
                } else {
                    f(t_new, y, &mut self.k[0]);
                    self.stats.evaluations += 1;
                }
                *t = t_new;
                let h_new = h / fac;
                // A shortened final step says nothing about the natural step size.
                if !last || h_new > self.h {
                    self.h = h_new;
                }
            } else {
                self.h = h / (fac11 / SAFETY).min(1.0 / fac_min);
                self.stats.rejected += 1;
                last = false;
            }
        }
        Ok(())
    }

    /// One trial step; fills `y_new` and returns the scaled error.
    fn attempt<F>(&mut self, f: &mut F, t: f64, y: &[T], h: f64) -> f64
    where
        F: FnMut(f64, &[T], &mut [T]),
    {
        let method = self.method;
        let (c, a, b) = (method.c(), method.a(), method.b());
        let dim = y.len();
        for s in 1..c.len() {
            let row = a[s];
            let (done, todo) = self.k.split_at_mut(s);
            let ys = &mut self.y_stage;
            for i in 0..dim {
                let mut acc = T::default();
                for (j, &aij) in row.iter().enumerate() {
                    if aij != 0.0 {
                        acc = acc + done[j][i] * aij;
                    }
                }
                ys[i] = y[i] + acc * h;
            }
            f(t + c[s] * h, ys, &mut todo[0]);
        }
        self.stats.evaluations += (c.len() - 1) as u64;
        for i in 0..dim {
            let mut acc = T::default();
            for (j, &bj) in b.iter().enumerate() {
                if bj != 0.0 {
                    acc = acc + self.k[j][i] * bj;
                }
            }
            self.y_new[i] = y[i] + acc * h;
        }

        let scale = |i: usize, y_new: &[T]| self.tol.atol + self.tol.rtol * y[i].modulus().max(y_new[i].modulus());
        let combine = |coef: &[f64], i: usize| {
            let mut acc = T::default();
            for (j, &e) in coef.iter().enumerate() {
                if e != 0.0 {
                    acc = acc + self.k[j][i] * e;
                }
            }
            acc
        };
        let err = match method {
            Method::Dopri5 => {
                let mut acc = 0.0;
                for i in 0..dim {
                    let r = (combine(&DOPRI5_E, i) * h).modulus() / scale(i, &self.y_new);
                    acc += r * r;
                }
                (acc / dim.max(1) as f64).sqrt()
            }
            Method::Dop853 => {
                let (mut s5, mut s3) = (0.0, 0.0);
                for i in 0..dim {
                    let sc = scale(i, &self.y_new);
                    let e5 = combine(&DOP853_E5, i).modulus() / sc;
                    let e3 = combine(&DOP853_E3, i).modulus() / sc;
                    s5 += e5 * e5;
                    s3 += e3 * e3;
                }
                let denom = s5 + 0.01 * s3;
                if denom > 0.0 {
                    h.abs() * s5 / (denom * dim.max(1) as f64).sqrt()
                } else {
                    0.0
                }
            }
        };
        if err.is_finite() {
            err
        } else {
            f64::MAX
        }
    }
}
