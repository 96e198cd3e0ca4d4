//! Multi-trajectory Ehrenfest (MTEF) dynamics.
//!
//! Each trajectory carries the atomic density matrix ρ and classical field
//! coordinates (Q, P) drawn from the vacuum Wigner function. They evolve
//! self-consistently under
//!
//! ```text
//! dρ/dt   = −i [H_A + F μ, ρ],        F = Σ_α ω_α λ_α Q_α
//! dQ_α/dt = P_α
//! dP_α/dt = −ω_α² Q_α − ω_α λ_α Tr(ρ μ)
//! ```
//!
//! which conserve Tr(ρ H_A) + ½ Σ (P² + ω² Q²) + F Tr(ρ μ).
//!
//! The joint system is integrated with classical RK4. Because the field
//! equations are linear, the RK4 stage values of the field only enter
//! through a handful of moments (Σ cQ, Σ cP, Σ cω²Q, Σ cω²P with c = ωλ), so
//! a step costs one fused pass over the coupled modes. The result is the
//! same RK4 map as the textbook stage-by-stage evaluation. Modes with zero
//! coupling are rotated analytically, and with no coupled modes at all the
//! atom evolves analytically too.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{AtomModel, CavityModel};
use crate::observables::{
    mask_threshold, EstimatorOptions, FieldEvaluator, FieldSnapshot, G2Grid, IntensityVariant,
    RunObservables, SeriesPoint,
};
use crate::sampling::{sample_vacuum, EnsembleSpec, PhasePoint};
use crate::stats::{CrossMoments, Estimate, Moments, WeightTotals};
use crate::Complex64;

pub const DEFAULT_DT: f64 = 0.02;
pub const DEFAULT_T_FINAL: f64 = 2100.0;
pub const DEFAULT_SNAPSHOTS: [f64; 4] = [100.0, 600.0, 1200.0, 2100.0];
pub const DEFAULT_SERIES_INTERVAL: f64 = 10.0;
pub const DEFAULT_GRID_POINTS: usize = 1024;
pub const DEFAULT_G2_POINTS: usize = 256;

/// Trajectories per reduction block. Blocks are accumulated sequentially and
/// merged in block order, so results do not depend on the worker count.
pub const BLOCK_SIZE: usize = 32;

/// Fraction of divergent trajectories above which a warning is logged.
pub const DIVERGENT_WARN_FRACTION: f64 = 1e-3;
/// Fraction of divergent trajectories above which the run fails.
pub const DIVERGENT_ERROR_FRACTION: f64 = 1e-2;

const STATE_TOL: f64 = 1e-10;
const HEALTH_TRACE_TOL: f64 = 1e-6;

/// Atomic density matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomState {
    levels: usize,
    rho: Vec<Complex64>,
}

impl AtomState {
    /// |level⟩⟨level| with 0-based `level`.
    pub fn pure(levels: usize, level: usize) -> Result<Self> {
        if levels < 2 || level >= levels {
            return Err(Error::Domain(format!("level {level} invalid for a {levels}-level atom")));
        }
        let mut rho = vec![Complex64::new(0.0, 0.0); levels * levels];
        rho[level * levels + level] = Complex64::new(1.0, 0.0);
        Ok(Self { levels, rho })
    }

    /// Atom in its highest level.
    pub fn excited(atom: &AtomModel) -> Self {
        Self::pure(atom.levels(), atom.top_level()).expect("top level exists")
    }

    /// Validated density matrix: Hermitian, unit trace, positive semidefinite.
    pub fn from_matrix(levels: usize, rho: Vec<Complex64>) -> Result<Self> {
        if levels < 2 || rho.len() != levels * levels {
            return Err(Error::Domain(format!(
                "density matrix needs {} entries for {levels} levels, got {}",
                levels * levels,
                rho.len()
            )));
        }
        let state = Self { levels, rho };
        if state.rho.iter().any(|z| !z.is_finite()) {
            return Err(Error::Domain("density matrix has non-finite entries".into()));
        }
        if state.hermiticity_error() > STATE_TOL {
            return Err(Error::Domain("density matrix is not Hermitian".into()));
        }
        if (state.trace() - 1.0).norm() > STATE_TOL {
            return Err(Error::Domain(format!("density matrix trace is {}", state.trace())));
        }
        if state.min_eigenvalue() < -STATE_TOL {
            return Err(Error::Domain("density matrix has a negative eigenvalue".into()));
        }
        Ok(state)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn rho(&self) -> &[Complex64] {
        &self.rho
    }

    pub fn get(&self, k: usize, l: usize) -> Complex64 {
        self.rho[k * self.levels + l]
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.levels).map(|k| self.get(k, k).re).collect()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.levels).map(|k| self.get(k, k)).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let m = self.levels;
        let mut err: f64 = 0.0;
        for k in 0..m {
            for l in 0..m {
                err = err.max((self.get(k, l) - self.get(l, k).conj()).norm());
            }
        }
        err
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.levels;
        let mat = DMatrix::from_fn(m, m, |k, l| {
            // average with the adjoint so round-off asymmetry cannot matter
            0.5 * (self.get(k, l) + self.get(l, k).conj())
        });
        mat.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Tr(ρ μ), real for Hermitian ρ.
pub fn mean_dipole(state: &AtomState, atom: &AtomModel) -> f64 {
    dipole_expectation(state.levels, atom.dipole_matrix(), &state.rho)
}

#[inline]
fn dipole_expectation(m: usize, mu: &[f64], rho: &[Complex64]) -> f64 {
    let mut d = 0.0;
    for k in 0..m {
        for l in 0..m {
            d += rho[k * m + l].re * mu[l * m + k];
        }
    }
    d
}

/// Atom and field of one trajectory at time `time`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryState {
    pub atom: AtomState,
    pub field: PhasePoint,
    pub time: f64,
}

impl TrajectoryState {
    /// Excited atom with the given field at t = 0.
    pub fn initial(atom: &AtomModel, field: PhasePoint) -> Self {
        Self {
            atom: AtomState::excited(atom),
            field,
            time: 0.0,
        }
    }
}

/// Ehrenfest energy Tr(ρH_A) + ½Σ(P² + ω²Q²) + F Tr(ρμ), zero-point included.
pub fn trajectory_energy(state: &TrajectoryState, atom: &AtomModel, cavity: &CavityModel) -> f64 {
    let e = atom.energies();
    let atomic: f64 = (0..e.len()).map(|k| e[k] * state.atom.get(k, k).re).sum();
    let field: f64 = cavity
        .modes()
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let (q, p) = (state.field.q[k], state.field.p[k]);
            0.5 * (p * p + m.frequency * m.frequency * q * q)
        })
        .sum();
    atomic + field + cavity.field_at_atom(&state.field.q) * mean_dipole(&state.atom, atom)
}

/// Time stepping, output times and observation grids of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPlan {
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_times: Vec<f64>,
    /// spacing of the population / photon-number series
    pub series_interval: f64,
    /// positions for intensity profiles
    pub r_grid: Vec<f64>,
    /// coarser positions for g²
    pub g2_grid: Vec<f64>,
    pub estimators: EstimatorOptions,
}

/// Event steps derived from a [`RunPlan`]: (step index, time label).
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub dt: f64,
    pub n_steps: u64,
    pub series: Vec<(u64, f64)>,
    pub snapshots: Vec<(u64, f64)>,
}

fn whole_steps(name: &str, t: f64, dt: f64) -> Result<u64> {
    let n = (t / dt).round();
    if !(n >= 0.0) || (n * dt - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(Error::Config(format!(
            "{name} = {t} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok(n as u64)
}

impl RunPlan {
    pub fn paper_default(cavity: &CavityModel) -> Self {
        Self {
            dt: DEFAULT_DT,
            t_final: DEFAULT_T_FINAL,
            snapshot_times: DEFAULT_SNAPSHOTS.to_vec(),
            series_interval: DEFAULT_SERIES_INTERVAL,
            r_grid: cavity.uniform_grid(DEFAULT_GRID_POINTS),
            g2_grid: cavity.uniform_grid(DEFAULT_G2_POINTS),
            estimators: EstimatorOptions::default(),
        }
    }

    pub fn validate(&self, cavity: &CavityModel) -> Result<()> {
        self.schedule(cavity).map(|_| ())
    }

    pub fn schedule(&self, cavity: &CavityModel) -> Result<Schedule> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!("t_final must be positive, got {}", self.t_final)));
        }
        if !(self.series_interval > 0.0 && self.series_interval.is_finite()) {
            return Err(Error::Config(format!(
                "series_interval must be positive, got {}",
                self.series_interval
            )));
        }
        if !(self.estimators.mask_fraction >= 0.0 && self.estimators.mask_fraction.is_finite()) {
            return Err(Error::Config("mask_fraction must be nonnegative".into()));
        }
        if self.r_grid.is_empty() {
            return Err(Error::Config("r_grid must not be empty".into()));
        }
        for &r in self.r_grid.iter().chain(&self.g2_grid) {
            if !(0.0..=cavity.length()).contains(&r) {
                return Err(Error::Config(format!("grid position {r} outside [0, L]")));
            }
        }
        let n_steps = whole_steps("t_final", self.t_final, self.dt)?;
        let interval = whole_steps("series_interval", self.series_interval, self.dt)?;
        if interval == 0 {
            return Err(Error::Config("series_interval must be at least dt".into()));
        }

        let mut snapshots = Vec::new();
        for &t in &self.snapshot_times {
            if !(0.0..=self.t_final).contains(&t) {
                return Err(Error::Config(format!(
                    "snapshot time {t} outside [0, {}]",
                    self.t_final
                )));
            }
            snapshots.push((whole_steps("snapshot time", t, self.dt)?, t));
        }
        snapshots.sort_by_key(|s| s.0);
        if snapshots.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("duplicate snapshot times".into()));
        }

        let mut series: BTreeMap<u64, f64> = BTreeMap::new();
        let mut k = 0u64;
        while k * interval <= n_steps {
            series.insert(k * interval, k as f64 * self.series_interval);
            k += 1;
        }
        series
            .entry(n_steps)
            .or_insert(self.t_final);
        for &(step, t) in &snapshots {
            series.insert(step, t);
        }
        Ok(Schedule {
            dt: self.dt,
            n_steps,
            series: series.into_iter().collect(),
            snapshots,
        })
    }
}

/// Grids and vacuum tables shared by all trajectories of a run.
#[derive(Clone, Debug)]
pub(crate) struct ObservableContext {
    fine: FieldEvaluator,
    coarse: FieldEvaluator,
    cross: Vec<f64>,
    options: EstimatorOptions,
}

impl ObservableContext {
    pub(crate) fn new(cavity: &CavityModel, plan: &RunPlan) -> Result<Self> {
        let coarse = FieldEvaluator::new(cavity, &plan.g2_grid)?;
        Ok(Self {
            fine: FieldEvaluator::new(cavity, &plan.r_grid)?,
            cross: coarse.packed_cross(),
            coarse,
            options: plan.estimators,
        })
    }

    fn snapshot(&self, state: TrajectoryState) -> SnapshotSample {
        let q = &state.field.q;
        let mut intensity = vec![0.0; self.fine.len()];
        self.fine.intensity(q, self.options.intensity, &mut intensity);

        let n = self.coarse.len();
        let mut field = vec![0.0; n];
        self.coarse.field(q, &mut field);
        let g2_intensity = match self.options.intensity {
            IntensityVariant::Full => field
                .iter()
                .zip(self.coarse.vacuum())
                .map(|(e, c)| e * e - c)
                .collect(),
            variant => {
                let mut out = vec![0.0; n];
                self.coarse.intensity(q, variant, &mut out);
                out
            }
        };
        let mut g2_numerator = vec![0.0; n * (n + 1) / 2];
        self.coarse
            .g2_numerators(q, self.options.g2, &field, &self.cross, &mut g2_numerator);
        SnapshotSample {
            state,
            intensity,
            g2_intensity,
            g2_numerator,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSample {
    pub time: f64,
    pub populations: Vec<f64>,
    pub photon_number: f64,
    pub energy: f64,
}

/// Per-trajectory contributions at one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSample {
    pub state: TrajectoryState,
    /// intensity estimator on the plan's `r_grid`
    pub intensity: Vec<f64>,
    /// intensity estimator on the `g2_grid`
    pub g2_intensity: Vec<f64>,
    /// G² estimator on the `g2_grid` upper triangle (i ≤ j, row-major)
    pub g2_numerator: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub series: Vec<SeriesSample>,
    pub snapshots: Vec<SnapshotSample>,
    /// max over series times of |E(t) − E(0)| / |E(0)|
    pub max_energy_drift: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct Lanes([f64; 4]);

/// Per-mode coefficients of the one-step RK4 field map, four modes per lane.
#[derive(Clone, Copy, Debug, Default)]
struct FieldCoef {
    /// diagonal of the free propagator
    a: Lanes,
    /// Q ← P coupling of the free propagator
    s: Lanes,
    /// P ← Q coupling, −ω² s
    ms: Lanes,
    /// c = ωλ
    c: Lanes,
    /// c ω²
    cw2: Lanes,
    w: Lanes,
}

/// Reusable single-trajectory integrator.
///
/// The atom is propagated in the interaction frame of H_A,
/// ρ̃(t) = e^{iH_A t} ρ e^{−iH_A t}, so RK4 only has to resolve the
/// field-induced dynamics dρ̃/dt = −iF [μ̃(t), ρ̃] with
/// μ̃_kl(t) = μ_kl e^{i(ε_k − ε_l)t}. This keeps the density matrix positive
/// to round-off over long runs.
struct Engine {
    m: usize,
    energies: Vec<f64>,
    dipole: Vec<f64>,
    h: f64,
    coupled: Vec<usize>,
    uncoupled: Vec<usize>,
    frequencies: Vec<f64>,
    coef: Vec<FieldCoef>,
    /// Σ c²
    c_sq: f64,
    q: Vec<Lanes>,
    p: Vec<Lanes>,
    /// Σ cQ, Σ cP, Σ cω²Q, Σ cω²P
    moments: [f64; 4],
    /// ε_k − ε_l
    gaps: Vec<f64>,
    /// e^{i(ε_k − ε_l)t} at the current step and its half-step increment
    phase: Vec<Complex64>,
    half: Vec<Complex64>,
    /// μ̃ at t, t + h/2 and t + h
    mu_t: [Vec<Complex64>; 3],
    /// interaction-frame density matrix
    rho: Vec<Complex64>,
    stage: Vec<Complex64>,
    acc: Vec<Complex64>,
    k: Vec<Complex64>,
    field0: PhasePoint,
    steps_taken: u64,
    /// photon number and energy of the uncoupled modes (time independent)
    uncoupled_photons: f64,
    uncoupled_energy: f64,
}

/// −iF [μ̃, ρ̃]
#[inline]
fn interaction_derivative(m: usize, mu: &[Complex64], rho: &[Complex64], f: f64, out: &mut [Complex64]) {
    // constant level counts let the compiler unroll the small loops
    match m {
        2 => commutator(2, mu, rho, f, out),
        3 => commutator(3, mu, rho, f, out),
        _ => commutator(m, mu, rho, f, out),
    }
}

#[inline(always)]
fn commutator(m: usize, mu: &[Complex64], rho: &[Complex64], f: f64, out: &mut [Complex64]) {
    for k in 0..m {
        for l in 0..m {
            let mut comm = Complex64::new(0.0, 0.0);
            for j in 0..m {
                comm += mu[k * m + j] * rho[j * m + l] - rho[k * m + j] * mu[j * m + l];
            }
            out[k * m + l] = Complex64::new(comm.im * f, -comm.re * f);
        }
    }
}

/// Re Tr(ρ̃ μ̃)
#[inline]
fn rotated_dipole(m: usize, mu: &[Complex64], rho: &[Complex64]) -> f64 {
    match m {
        2 => trace_product(2, mu, rho),
        3 => trace_product(3, mu, rho),
        _ => trace_product(m, mu, rho),
    }
}

#[inline(always)]
fn trace_product(m: usize, mu: &[Complex64], rho: &[Complex64]) -> f64 {
    let mut d = 0.0;
    for k in 0..m {
        for l in 0..m {
            let (r, u) = (rho[k * m + l], mu[l * m + k]);
            d += r.re * u.re - r.im * u.im;
        }
    }
    d
}

impl Engine {
    fn new(atom: &AtomModel, cavity: &CavityModel, dt: f64) -> Self {
        let m = atom.levels();
        let coupled = cavity.coupled_modes();
        let uncoupled = (0..cavity.n_modes())
            .filter(|k| !coupled.contains(k))
            .collect();
        let h = dt;
        let mut coef = vec![FieldCoef::default(); coupled.len().div_ceil(4)];
        let mut c_sq = 0.0;
        for (j, &k) in coupled.iter().enumerate() {
            let mode = &cavity.modes()[k];
            let w = mode.frequency;
            let x = h * h * w * w;
            let c = w * mode.coupling;
            let s = h - h * x / 6.0;
            let lane = &mut coef[j / 4];
            let l = j % 4;
            lane.a.0[l] = 1.0 - x / 2.0 + x * x / 24.0;
            lane.s.0[l] = s;
            lane.ms.0[l] = -w * w * s;
            lane.c.0[l] = c;
            lane.cw2.0[l] = c * w * w;
            lane.w.0[l] = w;
            c_sq += c * c;
        }
        let n_lanes = coef.len();
        let e = atom.energies();
        let gaps: Vec<f64> = (0..m * m).map(|i| e[i / m] - e[i % m]).collect();
        let half = gaps.iter().map(|g| Complex64::from_polar(1.0, g * 0.5 * h)).collect();
        let zeros = vec![Complex64::new(0.0, 0.0); m * m];
        Self {
            m,
            energies: e.to_vec(),
            dipole: atom.dipole_matrix().to_vec(),
            h,
            coupled,
            uncoupled,
            frequencies: cavity.frequencies().collect(),
            coef,
            c_sq,
            q: vec![Lanes::default(); n_lanes],
            p: vec![Lanes::default(); n_lanes],
            moments: [0.0; 4],
            gaps,
            phase: vec![Complex64::new(1.0, 0.0); m * m],
            half,
            mu_t: [zeros.clone(), zeros.clone(), zeros.clone()],
            rho: zeros.clone(),
            stage: zeros.clone(),
            acc: zeros.clone(),
            k: zeros,
            field0: PhasePoint::zeros(cavity.n_modes()),
            steps_taken: 0,
            uncoupled_photons: 0.0,
            uncoupled_energy: 0.0,
        }
    }

    fn load(&mut self, state: &TrajectoryState) -> Result<()> {
        if state.atom.levels != self.m {
            return Err(Error::Domain(format!(
                "atom state has {} levels, model has {}",
                state.atom.levels, self.m
            )));
        }
        if state.field.q.len() != self.frequencies.len() || state.field.p.len() != self.frequencies.len() {
            return Err(Error::Domain(format!(
                "field has {} coordinates, cavity has {} modes",
                state.field.q.len(),
                self.frequencies.len()
            )));
        }
        self.rho.copy_from_slice(&state.atom.rho);
        self.field0.clone_from(&state.field);
        for lane in self.q.iter_mut().chain(self.p.iter_mut()) {
            *lane = Lanes::default();
        }
        for (j, &k) in self.coupled.iter().enumerate() {
            self.q[j / 4].0[j % 4] = state.field.q[k];
            self.p[j / 4].0[j % 4] = state.field.p[k];
        }
        self.refresh_moments();
        self.uncoupled_photons = 0.0;
        self.uncoupled_energy = 0.0;
        for &k in &self.uncoupled {
            let (w, q, p) = (self.frequencies[k], state.field.q[k], state.field.p[k]);
            self.uncoupled_photons += 0.5 * (p * p / w + w * q * q - 1.0);
            self.uncoupled_energy += 0.5 * (p * p + w * w * q * q);
        }
        self.steps_taken = 0;
        self.phase.fill(Complex64::new(1.0, 0.0));
        Ok(())
    }

    fn refresh_moments(&mut self) {
        let mut mo = [0.0; 4];
        for ((c, q), p) in self.coef.iter().zip(&self.q).zip(&self.p) {
            for l in 0..4 {
                mo[0] += c.c.0[l] * q.0[l];
                mo[1] += c.c.0[l] * p.0[l];
                mo[2] += c.cw2.0[l] * q.0[l];
                mo[3] += c.cw2.0[l] * p.0[l];
            }
        }
        self.moments = mo;
    }

    fn elapsed(&self) -> f64 {
        self.steps_taken as f64 * self.h
    }

    fn advance(&mut self, steps: u64) {
        if !self.coupled.is_empty() {
            for _ in 0..steps {
                self.rk4_step();
            }
        }
        // without coupled modes ρ̃ is constant
        self.steps_taken += steps;
        // drop the round-off accumulated by the phase recurrence
        let t = self.elapsed();
        for (ph, g) in self.phase.iter_mut().zip(&self.gaps) {
            *ph = Complex64::from_polar(1.0, g * t);
        }
    }

    #[inline]
    fn atom_stage(&mut self, which: usize, f: f64, weight: f64, next: f64) {
        let m = self.m;
        interaction_derivative(m, &self.mu_t[which], &self.stage, f, &mut self.k);
        for i in 0..m * m {
            if weight == 1.0 {
                self.acc[i] = self.k[i];
            } else {
                self.acc[i] += self.k[i] * weight;
            }
            self.stage[i] = self.rho[i] + self.k[i] * next;
        }
    }

    fn rk4_step(&mut self) {
        let h = self.h;
        let m = self.m;
        let [x, y, z, w] = self.moments;
        let s = self.c_sq;

        for i in 0..m * m {
            let p0 = self.phase[i];
            let p1 = p0 * self.half[i];
            let p2 = p1 * self.half[i];
            self.mu_t[0][i] = p0 * self.dipole[i];
            self.mu_t[1][i] = p1 * self.dipole[i];
            self.mu_t[2][i] = p2 * self.dipole[i];
            self.phase[i] = p2;
        }

        self.stage.copy_from_slice(&self.rho);
        let d1 = rotated_dipole(m, &self.mu_t[0], &self.stage);
        self.atom_stage(0, x, 1.0, 0.5 * h);

        let d2 = rotated_dipole(m, &self.mu_t[1], &self.stage);
        self.atom_stage(1, x + 0.5 * h * y, 2.0, 0.5 * h);

        let d3 = rotated_dipole(m, &self.mu_t[1], &self.stage);
        let f3 = x + 0.5 * h * y - 0.25 * h * h * (z + s * d1);
        self.atom_stage(1, f3, 2.0, h);

        let d4 = rotated_dipole(m, &self.mu_t[2], &self.stage);
        let f4 = x + h * y - 0.5 * h * h * z - 0.25 * h * h * h * w - 0.5 * h * h * s * d2;
        interaction_derivative(m, &self.mu_t[2], &self.stage, f4, &mut self.k);
        for i in 0..m * m {
            self.rho[i] += (self.acc[i] + self.k[i]) * (h / 6.0);
        }

        let u1 = -h * h / 6.0 * (d1 + d2 + d3);
        let u2 = h * h * h * h / 24.0 * d1;
        let v1 = -h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
        let v2 = h * h * h / 12.0 * (d1 + d2);
        let mut mx = [0.0; 4];
        let mut my = [0.0; 4];
        let mut mz = [0.0; 4];
        let mut mw = [0.0; 4];
        for ((c, q), p) in self.coef.iter().zip(self.q.iter_mut()).zip(self.p.iter_mut()) {
            for l in 0..4 {
                let (q0, p0) = (q.0[l], p.0[l]);
                let qn = c.a.0[l] * q0 + c.s.0[l] * p0 + c.c.0[l] * u1 + c.cw2.0[l] * u2;
                let pn = c.ms.0[l] * q0 + c.a.0[l] * p0 + c.c.0[l] * v1 + c.cw2.0[l] * v2;
                q.0[l] = qn;
                p.0[l] = pn;
                mx[l] += c.c.0[l] * qn;
                my[l] += c.c.0[l] * pn;
                mz[l] += c.cw2.0[l] * qn;
                mw[l] += c.cw2.0[l] * pn;
            }
        }
        let sum = |a: [f64; 4]| (a[0] + a[1]) + (a[2] + a[3]);
        self.moments = [sum(mx), sum(my), sum(mz), sum(mw)];
    }

    fn healthy(&self) -> bool {
        let trace: Complex64 = (0..self.m).map(|k| self.rho[k * self.m + k]).sum();
        self.rho.iter().all(|z| z.is_finite())
            && self.moments.iter().all(|v| v.is_finite())
            && (trace - 1.0).norm() < HEALTH_TRACE_TOL
    }

    /// Schrödinger-picture density matrix at the current step.
    fn physical_rho(&self) -> Vec<Complex64> {
        self.rho
            .iter()
            .zip(&self.phase)
            .map(|(r, ph)| r * ph.conj())
            .collect()
    }

    fn populations(&self) -> Vec<f64> {
        (0..self.m).map(|k| self.rho[k * self.m + k].re).collect()
    }

    fn photon_number(&self) -> f64 {
        let mut n = 0.0;
        for j in 0..self.coupled.len() {
            let (w, q, p) = (self.coef[j / 4].w.0[j % 4], self.q[j / 4].0[j % 4], self.p[j / 4].0[j % 4]);
            n += 0.5 * (p * p / w + w * q * q - 1.0);
        }
        n + self.uncoupled_photons
    }

    fn energy(&self) -> f64 {
        let m = self.m;
        let atomic: f64 = (0..m).map(|k| self.energies[k] * self.rho[k * m + k].re).sum();
        let mut field = self.uncoupled_energy;
        for j in 0..self.coupled.len() {
            let (w, q, p) = (self.coef[j / 4].w.0[j % 4], self.q[j / 4].0[j % 4], self.p[j / 4].0[j % 4]);
            field += 0.5 * (p * p + w * w * q * q);
        }
        atomic + field + self.moments[0] * dipole_expectation(m, &self.dipole, &self.physical_rho())
    }

    fn state(&self, time: f64) -> TrajectoryState {
        let mut field = self.field0.clone();
        let t = self.elapsed();
        for &k in &self.uncoupled {
            let w = self.frequencies[k];
            let (sn, cs) = (w * t).sin_cos();
            let (q0, p0) = (self.field0.q[k], self.field0.p[k]);
            field.q[k] = q0 * cs + p0 / w * sn;
            field.p[k] = -q0 * w * sn + p0 * cs;
        }
        for (j, &k) in self.coupled.iter().enumerate() {
            field.q[k] = self.q[j / 4].0[j % 4];
            field.p[k] = self.p[j / 4].0[j % 4];
        }
        TrajectoryState {
            atom: AtomState {
                levels: self.m,
                rho: self.physical_rho(),
            },
            field,
            time,
        }
    }

    fn run(
        &mut self,
        initial: &TrajectoryState,
        schedule: &Schedule,
        ctx: &ObservableContext,
    ) -> Result<TrajectoryRecord> {
        if initial.time != 0.0 {
            return Err(Error::Domain("trajectory runs start at t = 0".into()));
        }
        self.load(initial)?;
        let e0 = self.energy();
        let mut record = TrajectoryRecord {
            series: Vec::with_capacity(schedule.series.len()),
            snapshots: Vec::with_capacity(schedule.snapshots.len()),
            max_energy_drift: 0.0,
        };
        let mut snaps = schedule.snapshots.iter().peekable();
        for &(step, time) in &schedule.series {
            self.advance(step - self.steps_taken);
            if !self.healthy() {
                return Err(Error::Propagation {
                    time,
                    reason: "non-finite state or trace drift".into(),
                });
            }
            let energy = self.energy();
            record.max_energy_drift = record
                .max_energy_drift
                .max((energy - e0).abs() / e0.abs().max(f64::MIN_POSITIVE));
            record.series.push(SeriesSample {
                time,
                populations: self.populations(),
                photon_number: self.photon_number(),
                energy,
            });
            if let Some(&&(s, t)) = snaps.peek() {
                if s == step {
                    record.snapshots.push(ctx.snapshot(self.state(t)));
                    snaps.next();
                }
            }
        }
        Ok(record)
    }
}

/// Advance one trajectory state by a single RK4 step of size `dt`.
pub fn step(
    state: &TrajectoryState,
    atom: &AtomModel,
    cavity: &CavityModel,
    dt: f64,
) -> Result<TrajectoryState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    let mut engine = Engine::new(atom, cavity, dt);
    engine.load(state)?;
    engine.advance(1);
    if !engine.healthy() {
        return Err(Error::Propagation {
            time: state.time + dt,
            reason: "non-finite state or trace drift".into(),
        });
    }
    Ok(engine.state(state.time + dt))
}

/// Propagate one trajectory and record its observable contributions.
pub fn run_trajectory(
    initial: &TrajectoryState,
    plan: &RunPlan,
    atom: &AtomModel,
    cavity: &CavityModel,
) -> Result<TrajectoryRecord> {
    let schedule = plan.schedule(cavity)?;
    let ctx = ObservableContext::new(cavity, plan)?;
    Engine::new(atom, cavity, plan.dt).run(initial, &schedule, &ctx)
}

#[derive(Clone, Debug)]
struct SnapshotMoments {
    intensity: Moments,
    coarse: Moments,
    numerator: Moments,
    /// G · I at the lower / higher index, and I_lo · I_hi
    num_lo: CrossMoments,
    num_hi: CrossMoments,
    lo_hi: CrossMoments,
}

/// Streaming weighted sums of every observable over a set of trajectories.
#[derive(Clone, Debug)]
pub struct EnsembleAccumulator {
    levels: usize,
    series_times: Vec<f64>,
    snapshot_times: Vec<f64>,
    r_grid: Vec<f64>,
    g2_grid: Vec<f64>,
    options: EstimatorOptions,
    totals: WeightTotals,
    series: Vec<Moments>,
    snapshots: Vec<SnapshotMoments>,
    flagged: usize,
    attempted: usize,
    max_energy_drift: f64,
}

impl EnsembleAccumulator {
    pub fn new(levels: usize, plan: &RunPlan, schedule: &Schedule) -> Self {
        let n = plan.g2_grid.len();
        let tri = n * (n + 1) / 2;
        Self {
            levels,
            series_times: schedule.series.iter().map(|s| s.1).collect(),
            snapshot_times: schedule.snapshots.iter().map(|s| s.1).collect(),
            r_grid: plan.r_grid.clone(),
            g2_grid: plan.g2_grid.clone(),
            options: plan.estimators,
            totals: WeightTotals::default(),
            series: vec![Moments::new(levels + 1); schedule.series.len()],
            snapshots: vec![
                SnapshotMoments {
                    intensity: Moments::new(plan.r_grid.len()),
                    coarse: Moments::new(n),
                    numerator: Moments::new(tri),
                    num_lo: CrossMoments::new(tri),
                    num_hi: CrossMoments::new(tri),
                    lo_hi: CrossMoments::new(tri),
                };
                schedule.snapshots.len()
            ],
            flagged: 0,
            attempted: 0,
            max_energy_drift: 0.0,
        }
    }

    pub fn add(&mut self, weight: f64, record: &TrajectoryRecord) {
        self.attempted += 1;
        self.totals.add(weight);
        self.max_energy_drift = self.max_energy_drift.max(record.max_energy_drift);
        for (acc, s) in self.series.iter_mut().zip(&record.series) {
            for (k, &p) in s.populations.iter().enumerate() {
                acc.add_one(k, weight, p);
            }
            acc.add_one(self.levels, weight, s.photon_number);
        }
        let n = self.g2_grid.len();
        for (acc, s) in self.snapshots.iter_mut().zip(&record.snapshots) {
            acc.intensity.add(weight, &s.intensity);
            acc.coarse.add(weight, &s.g2_intensity);
            acc.numerator.add(weight, &s.g2_numerator);
            let mut k = 0;
            for i in 0..n {
                let ii = s.g2_intensity[i];
                for j in i..n {
                    let g = s.g2_numerator[k];
                    let ij = s.g2_intensity[j];
                    acc.num_lo.add_one(k, weight, g, ii);
                    acc.num_hi.add_one(k, weight, g, ij);
                    acc.lo_hi.add_one(k, weight, ii, ij);
                    k += 1;
                }
            }
        }
    }

    /// Count a trajectory that was excluded after diverging.
    pub fn flag(&mut self) {
        self.attempted += 1;
        self.flagged += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.totals.merge(&other.totals);
        self.flagged += other.flagged;
        self.attempted += other.attempted;
        self.max_energy_drift = self.max_energy_drift.max(other.max_energy_drift);
        for (a, b) in self.series.iter_mut().zip(&other.series) {
            a.merge(b);
        }
        for (a, b) in self.snapshots.iter_mut().zip(&other.snapshots) {
            a.intensity.merge(&b.intensity);
            a.coarse.merge(&b.coarse);
            a.numerator.merge(&b.numerator);
            a.num_lo.merge(&b.num_lo);
            a.num_hi.merge(&b.num_hi);
            a.lo_hi.merge(&b.lo_hi);
        }
    }

    pub fn flagged(&self) -> usize {
        self.flagged
    }

    pub fn accepted(&self) -> usize {
        self.totals.count
    }

    pub fn attempted(&self) -> usize {
        self.attempted
    }

    /// Largest relative energy drift over the accepted trajectories.
    pub fn max_energy_drift(&self) -> f64 {
        self.max_energy_drift
    }

    /// Apply the divergence policy: warn above 0.1 %, fail above 1 %.
    pub fn check_divergence(&self) -> Result<()> {
        if self.attempted == 0 {
            return Ok(());
        }
        let fraction = self.flagged as f64 / self.attempted as f64;
        if fraction > DIVERGENT_ERROR_FRACTION {
            return Err(Error::TooManyDivergent {
                flagged: self.flagged,
                total: self.attempted,
                limit_percent: 100.0 * DIVERGENT_ERROR_FRACTION,
            });
        }
        if fraction > DIVERGENT_WARN_FRACTION {
            log::warn!(
                "{} of {} trajectories diverged and were excluded",
                self.flagged,
                self.attempted
            );
        }
        Ok(())
    }

    /// Ensemble means and standard errors.
    pub fn observables(&self) -> Result<RunObservables> {
        if self.totals.count == 0 {
            return Err(Error::Domain("no accepted trajectories".into()));
        }
        let t = &self.totals;
        let series = self
            .series
            .iter()
            .zip(&self.series_times)
            .map(|(m, &time)| {
                let est = m.estimates(t);
                SeriesPoint {
                    time,
                    populations: est[..self.levels].to_vec(),
                    photon_number: est[self.levels],
                }
            })
            .collect();
        let snapshots = self
            .snapshots
            .iter()
            .zip(&self.snapshot_times)
            .map(|(s, &time)| self.finish_snapshot(s, time))
            .collect();
        Ok(RunObservables {
            series,
            snapshots,
            flagged: self.flagged,
            accepted: self.totals.count,
        })
    }

    fn finish_snapshot(&self, s: &SnapshotMoments, time: f64) -> FieldSnapshot {
        let t = &self.totals;
        let intensity = s.intensity.estimates(t);
        let coarse = s.coarse.estimates(t);
        let threshold = mask_threshold(
            if intensity.is_empty() { &coarse } else { &intensity },
            self.options.mask_fraction,
        );
        let n = self.g2_grid.len();
        let mut numerator = vec![Estimate::default(); n * n];
        let mut values = vec![None; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                let g = s.numerator.estimate(k, t);
                numerator[i * n + j] = g;
                numerator[j * n + i] = g;
                let (ii, ij) = (coarse[i].mean, coarse[j].mean);
                if let Some(value) = crate::observables::g2(g.mean, ii, ij, threshold) {
                    // delta method for G / (I_i I_j)
                    let d = [1.0 / (ii * ij), -value / ii, -value / ij];
                    let var_g = g.stderr * g.stderr;
                    let var_i = coarse[i].stderr * coarse[i].stderr;
                    let var_j = coarse[j].stderr * coarse[j].stderr;
                    let c_gi = s.num_lo.covariance(k, &s.numerator, k, &s.coarse, i, t);
                    let c_gj = s.num_hi.covariance(k, &s.numerator, k, &s.coarse, j, t);
                    let c_ij = s.lo_hi.covariance(k, &s.coarse, i, &s.coarse, j, t);
                    let var = d[0] * d[0] * var_g
                        + d[1] * d[1] * var_i
                        + d[2] * d[2] * var_j
                        + 2.0 * (d[0] * d[1] * c_gi + d[0] * d[2] * c_gj + d[1] * d[2] * c_ij);
                    let stderr = if var.is_nan() { var } else { var.max(0.0).sqrt() };
                    let e = Estimate { mean: value, stderr };
                    values[i * n + j] = Some(e);
                    values[j * n + i] = Some(e);
                }
                k += 1;
            }
        }
        FieldSnapshot {
            time,
            r: self.r_grid.clone(),
            intensity,
            g2: G2Grid {
                r: self.g2_grid.clone(),
                numerator,
                intensity: coarse,
                values,
                threshold,
            },
        }
    }
}

/// Run the full ensemble. See [`run_ensemble_prefixes`].
pub fn run_ensemble(
    atom: &AtomModel,
    cavity: &CavityModel,
    spec: &EnsembleSpec,
    plan: &RunPlan,
) -> Result<EnsembleAccumulator> {
    let mut out = run_ensemble_prefixes(atom, cavity, spec, plan, &[spec.n_traj()])?;
    Ok(out.pop().expect("one prefix requested"))
}

/// Run the ensemble once and return the accumulated sums over each of the
/// requested leading subsets of trajectories (ascending, last one ≤ n_traj).
///
/// Trajectories are grouped into fixed blocks that are propagated in
/// parallel and merged in block order, so every output is independent of
/// the number of worker threads.
pub fn run_ensemble_prefixes(
    atom: &AtomModel,
    cavity: &CavityModel,
    spec: &EnsembleSpec,
    plan: &RunPlan,
    prefixes: &[usize],
) -> Result<Vec<EnsembleAccumulator>> {
    let n = spec.n_traj();
    if prefixes.is_empty()
        || prefixes.windows(2).any(|w| w[0] >= w[1])
        || prefixes[0] == 0
        || *prefixes.last().unwrap() > n
    {
        return Err(Error::Config(format!(
            "trajectory prefixes {prefixes:?} must be ascending within 1..={n}"
        )));
    }
    let schedule = plan.schedule(cavity)?;
    let ctx = ObservableContext::new(cavity, plan)?;
    let last = *prefixes.last().unwrap();

    let mut cuts: Vec<usize> = (0..last).step_by(BLOCK_SIZE).chain(prefixes.iter().copied()).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let blocks: Vec<(usize, usize)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();

    let run_block = |&(start, end): &(usize, usize)| -> Result<EnsembleAccumulator> {
        let mut acc = EnsembleAccumulator::new(atom.levels(), plan, &schedule);
        let mut engine = Engine::new(atom, cavity, plan.dt);
        for j in start..end {
            let field = sample_vacuum(cavity, spec, j)?;
            let initial = TrajectoryState::initial(atom, field);
            match engine.run(&initial, &schedule, &ctx) {
                Ok(record) => acc.add(spec.weight(j), &record),
                Err(err @ Error::Propagation { .. }) => {
                    log::debug!("trajectory {j} excluded: {err}");
                    acc.flag();
                }
                Err(err) => return Err(err),
            }
        }
        Ok(acc)
    };

    let mut total = EnsembleAccumulator::new(atom.levels(), plan, &schedule);
    let mut out = Vec::with_capacity(prefixes.len());
    let mut next_prefix = prefixes.iter().peekable();
    let wave = rayon::current_num_threads().max(1);
    for chunk in blocks.chunks(wave) {
        let results: Vec<Result<EnsembleAccumulator>> = chunk.par_iter().map(run_block).collect();
        for block in results {
            total.merge(&block?);
            if next_prefix.peek() == Some(&&total.attempted) {
                total.check_divergence()?;
                out.push(total.clone());
                next_prefix.next();
            }
        }
        log::debug!("{} / {} trajectories done", total.attempted, last);
    }
    Ok(out)
}
