//! Exact truncated-CI benchmark.
//!
//! The atom and the coupled cavity modes are expanded in an atom ⊗ Fock
//! basis with a per-mode and a total photon cap, the Hamiltonian is stored
//! as a sparse real-symmetric matrix and the state is propagated with
//! Lanczos steps. Modes with zero coupling stay in the vacuum and are left
//! out of the basis.

mod basis;
mod hamiltonian;
mod krylov;
mod observables;

pub use basis::{basis_dimension, enumerate_basis, CIBasis, Occupation, DEFAULT_MEMORY_BUDGET};
pub use hamiltonian::{build_hamiltonian, SparseHamiltonian};
pub use krylov::{
    dense_propagate, propagate, CIState, KrylovOptions, KrylovStats, Propagator, DENSE_ORACLE_LIMIT,
};
pub use observables::{
    exact_observables, photon_number, populations, top_shell_population, ExactEvaluator,
};

use log::{debug, info};

use crate::error::{Error, Result};
use crate::model::{AtomModel, CavityModel};
use crate::mtef::RunPlan;
use crate::observables::{RunObservables, SeriesPoint};
use crate::stats::Estimate;

/// Truncation and propagation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactConfig {
    pub per_mode_cap: u32,
    pub total_cap: u32,
    pub krylov: KrylovOptions,
    /// refuse bases with more states than this
    pub memory_budget: usize,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            per_mode_cap: 2,
            total_cap: 2,
            krylov: KrylovOptions::default(),
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// Basis dimension a run with `config` would need.
pub fn estimate_dimension(atom: &AtomModel, cavity: &CavityModel, config: &ExactConfig) -> u128 {
    basis_dimension(
        atom.levels(),
        cavity.coupled_modes().len(),
        config.per_mode_cap,
        config.total_cap,
    )
}

/// Observables plus conservation and truncation diagnostics of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactRun {
    pub observables: RunObservables,
    pub dimension: usize,
    /// Σ ω/2 over the basis modes, excluded from `energies`
    pub zero_point: f64,
    /// (time, ⟨H⟩) at every series time
    pub energies: Vec<(f64, f64)>,
    /// max |⟨H⟩(t) − ⟨H⟩(0)| / |⟨H⟩(0)|
    pub max_energy_drift: f64,
    pub max_norm_error: f64,
    /// largest weight found in the top excitation shell
    pub max_top_shell_population: f64,
    pub krylov: KrylovStats,
}

/// Propagate the atom from its top level with the field in the vacuum and
/// record observables on the schedule of `plan`.
pub fn run_exact(
    atom: &AtomModel,
    cavity: &CavityModel,
    plan: &RunPlan,
    config: &ExactConfig,
) -> Result<ExactRun> {
    let schedule = plan.schedule(cavity)?;
    config.krylov.validate()?;
    let basis = enumerate_basis(
        atom.levels(),
        cavity.coupled_modes().len(),
        config.per_mode_cap,
        config.total_cap,
        config.memory_budget,
    )?;
    let h = build_hamiltonian(atom, cavity, &basis)?;
    info!(
        "exact basis: {} states, {} nonzeros, {} modes",
        basis.dim(),
        h.nnz(),
        basis.n_modes()
    );
    let eval = ExactEvaluator::new(
        &basis,
        cavity,
        &plan.r_grid,
        &plan.g2_grid,
        plan.estimators.mask_fraction,
    )?;

    let mut state = CIState::excited(&basis, atom.top_level())?;
    let e0 = h.expectation(&state.amplitudes);
    let mut prop = Propagator::new(&h, config.krylov)?;
    let mut series = Vec::with_capacity(schedule.series.len());
    let mut snapshots = Vec::with_capacity(schedule.snapshots.len());
    let mut energies = Vec::with_capacity(schedule.series.len());
    let (mut drift, mut norm_error, mut top) = (0.0f64, 0.0f64, 0.0f64);
    let mut next_snapshot = schedule.snapshots.iter().peekable();

    for &(step, time) in &schedule.series {
        prop.advance(&mut state, time)?;
        let psi = &state.amplitudes;
        let energy = h.expectation(psi);
        if !energy.is_finite() {
            return Err(Error::Propagation {
                time,
                reason: "non-finite energy".into(),
            });
        }
        drift = drift.max((energy - e0).abs() / e0.abs().max(f64::MIN_POSITIVE));
        norm_error = norm_error.max((state.norm() - 1.0).abs());
        top = top.max(top_shell_population(psi, &basis));
        energies.push((time, energy));
        series.push(SeriesPoint {
            time,
            populations: populations(psi, &basis).into_iter().map(Estimate::exact).collect(),
            photon_number: Estimate::exact(photon_number(psi, &basis)),
        });
        if next_snapshot.peek().is_some_and(|s| s.0 == step) {
            next_snapshot.next();
            debug!("exact snapshot at t = {time}");
            snapshots.push(eval.snapshot(psi, time)?);
        }
    }

    Ok(ExactRun {
        observables: RunObservables {
            series,
            snapshots,
            flagged: 0,
            accepted: 1,
        },
        dimension: basis.dim(),
        zero_point: h.zero_point_offset(),
        energies,
        max_energy_drift: drift,
        max_norm_error: norm_error,
        max_top_shell_population: top,
        krylov: prop.stats(),
    })
}
