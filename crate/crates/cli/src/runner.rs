//! Solver dispatch and serialization of run results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use mtef_core::exact::{estimate_dimension, run_exact, ExactRun};
use mtef_core::mtef::run_ensemble;
use mtef_core::observables::{g2_diagonal_cuts, RunObservables};
use mtef_core::stats::Estimate;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Mtef,
    Exact,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mtef => "mtef",
            Self::Exact => "exact",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    #[default]
    Mtef,
    Exact,
    Both,
}

impl Mode {
    pub fn solvers(self) -> &'static [Solver] {
        match self {
            Self::Mtef => &[Solver::Mtef],
            Self::Exact => &[Solver::Exact],
            Self::Both => &[Solver::Mtef, Solver::Exact],
        }
    }
}

/// Solver-specific numbers recorded next to the observables.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Diagnostics {
    Mtef {
        n_traj: usize,
        accepted_trajectories: usize,
        flagged_trajectories: usize,
        max_energy_drift: f64,
    },
    Exact {
        dimension: usize,
        zero_point_energy: f64,
        max_energy_drift: f64,
        max_norm_error: f64,
        max_top_shell_population: f64,
        krylov_steps: usize,
        krylov_matvecs: usize,
    },
}

/// Observables of one solver together with its diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverRun {
    pub solver: Solver,
    pub observables: RunObservables,
    pub diagnostics: Diagnostics,
    pub wall_time: f64,
}

impl SolverRun {
    pub fn flagged(&self) -> usize {
        self.observables.flagged
    }
}

impl From<ExactRun> for Diagnostics {
    fn from(run: ExactRun) -> Self {
        Diagnostics::Exact {
            dimension: run.dimension,
            zero_point_energy: run.zero_point,
            max_energy_drift: run.max_energy_drift,
            max_norm_error: run.max_norm_error,
            max_top_shell_population: run.max_top_shell_population,
            krylov_steps: run.krylov.steps,
            krylov_matvecs: run.krylov.matvecs,
        }
    }
}

/// Run one solver on a validated configuration.
pub fn simulate(config: &RunConfig, solver: Solver) -> Result<SolverRun> {
    let atom = config.atom()?;
    let cavity = config.cavity()?;
    let plan = config.plan(&cavity);
    let start = Instant::now();
    let (observables, diagnostics) = match solver {
        Solver::Mtef => {
            let spec = config.ensemble()?;
            info!("MTEF: {} trajectories, {} modes", spec.n_traj(), cavity.n_modes());
            let acc = run_ensemble(&atom, &cavity, &spec, &plan)?;
            let diagnostics = Diagnostics::Mtef {
                n_traj: spec.n_traj(),
                accepted_trajectories: acc.accepted(),
                flagged_trajectories: acc.flagged(),
                max_energy_drift: acc.max_energy_drift(),
            };
            (acc.observables()?, diagnostics)
        }
        Solver::Exact => {
            let exact = config.exact_config();
            info!(
                "exact: basis dimension {}",
                estimate_dimension(&atom, &cavity, &exact)
            );
            let run = run_exact(&atom, &cavity, &plan, &exact)?;
            (run.observables.clone(), run.into())
        }
    };
    Ok(SolverRun {
        solver,
        observables,
        diagnostics,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Seventeen significant digits: every f64 survives a text round trip.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<Estimate>) -> (String, String) {
    match x {
        Some(e) => (num(e.mean), num(e.stderr)),
        None => (String::new(), String::new()),
    }
}

/// Label used in snapshot file names: `100`, `2100`, `12.5`.
pub fn time_label(t: f64) -> String {
    format!("{t}")
}

struct Csv {
    text: String,
}

impl Csv {
    fn new(what: &str, solver: Solver, config: &RunConfig) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "# {what}");
        let _ = writeln!(
            text,
            "# solver {}; atomic units throughout (lengths in bohr, times in ħ/E_h)",
            solver.as_str()
        );
        let _ = writeln!(
            text,
            "# estimators: intensity {}, g2 {}; mask fraction {}",
            config.estimators.intensity, config.estimators.g2, config.estimators.mask_fraction
        );
        Self { text }
    }

    fn row<S: AsRef<str>>(&mut self, cells: &[S]) {
        let cells: Vec<&str> = cells.iter().map(|c| c.as_ref()).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).with_context(|| format!("cannot write {}", path.display()))
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    solver: &'static str,
    code_version: &'static str,
    seed: u64,
    wall_time_seconds: f64,
    threads: usize,
    flagged_trajectories: usize,
    diagnostics: &'a Diagnostics,
    config: &'a RunConfig,
}

/// Write every observable file of `run` into `dir` and return the paths.
pub fn write_outputs(dir: &Path, config: &RunConfig, run: &SolverRun) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let obs = &run.observables;
    let solver = run.solver;
    let mut written = Vec::new();

    let levels = obs.series.first().map_or(0, |s| s.populations.len());
    let mut pops = Csv::new("atomic populations P_k(t), level 1 = ground state", solver, config);
    let mut header = vec!["t".to_string()];
    header.extend((1..=levels).map(|k| format!("P_{k}")));
    header.extend((1..=levels).map(|k| format!("stderr_P_{k}")));
    pops.row(&header);
    let mut photons = Csv::new("normal-ordered photon number <:N:>(t)", solver, config);
    photons.row(&["t", "N", "stderr_N"]);
    for s in &obs.series {
        let mut row = vec![num(s.time)];
        row.extend(s.populations.iter().map(|e| num(e.mean)));
        row.extend(s.populations.iter().map(|e| num(e.stderr)));
        pops.row(&row);
        photons.row(&[num(s.time), num(s.photon_number.mean), num(s.photon_number.stderr)]);
    }
    for (name, csv) in [("populations.csv", &pops), ("photon_number.csv", &photons)] {
        let path = dir.join(name);
        csv.write(&path)?;
        written.push(path);
    }

    for snap in &obs.snapshots {
        let label = time_label(snap.time);
        let mut intensity = Csv::new(
            &format!("normal-ordered intensity <:I(r):> at t = {label}"),
            solver,
            config,
        );
        intensity.row(&["r", "I", "stderr_I"]);
        for (r, e) in snap.r.iter().zip(&snap.intensity) {
            intensity.row(&[num(*r), num(e.mean), num(e.stderr)]);
        }
        let path = dir.join(format!("intensity_t{label}.csv"));
        intensity.write(&path)?;
        written.push(path);

        let grid = &snap.g2;
        let mut g2 = Csv::new(
            &format!(
                "g2(r1, r2) at t = {label}; empty cells are masked (intensity below {:e})",
                grid.threshold
            ),
            solver,
            config,
        );
        g2.row(&["r1", "r2", "g2", "stderr_g2"]);
        let n = grid.n();
        for i in 0..n {
            for j in 0..n {
                let (m, s) = opt(grid.get(i, j));
                g2.row(&[num(grid.r[i]), num(grid.r[j]), m, s]);
            }
        }
        let path = dir.join(format!("g2_t{label}.csv"));
        g2.write(&path)?;
        written.push(path);

        let cuts = g2_diagonal_cuts(grid)?;
        let mut diag = Csv::new(
            &format!(
                "g2 along r+ (r1 = r2) and r- (r1 + r2 = L) through the cavity center at t = {label}; \
                 s is the signed distance from the center"
            ),
            solver,
            config,
        );
        diag.row(&["s", "g2_plus", "stderr_g2_plus", "g2_minus", "stderr_g2_minus"]);
        for ((s, p), m) in cuts.s.iter().zip(&cuts.plus).zip(&cuts.minus) {
            let (pm, ps) = opt(*p);
            let (mm, ms) = opt(*m);
            diag.row(&[num(*s), pm, ps, mm, ms]);
        }
        let path = dir.join(format!("g2_diag_t{label}.csv"));
        diag.write(&path)?;
        written.push(path);
    }

    let meta = Meta {
        solver: solver.as_str(),
        code_version: env!("CARGO_PKG_VERSION"),
        seed: config.mtef.seed,
        wall_time_seconds: run.wall_time,
        threads: rayon::current_num_threads(),
        flagged_trajectories: run.flagged(),
        diagnostics: &run.diagnostics,
        config,
    };
    let path = dir.join("run_meta.json");
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&path, json + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    written.push(path);
    Ok(written)
}

/// Read the resolved configuration back from a `run_meta.json`.
pub fn read_meta_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let config = value
        .get("config")
        .context("run_meta.json has no `config` entry")?
        .clone();
    Ok(serde_json::from_value(config)?)
}

/// Run the solvers selected by `mode` and write their outputs. With
/// [`Mode::Both`] each solver writes into its own subdirectory.
pub fn run(config: &RunConfig, mode: Mode, out: &Path) -> Result<Vec<SolverRun>> {
    let mut runs = Vec::new();
    for &solver in mode.solvers() {
        let dir = if mode == Mode::Both {
            out.join(solver.as_str())
        } else {
            out.to_path_buf()
        };
        let run = simulate(config, solver)?;
        info!("{} finished in {:.1} s", solver.as_str(), run.wall_time);
        write_outputs(&dir, config, &run)?;
        runs.push(run);
    }
    Ok(runs)
}

/// What a run would cost, without running it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub modes: usize,
    pub coupled_modes: usize,
    pub time_steps: u64,
    pub trajectories: usize,
    pub trajectory_steps: u128,
    pub exact_dimension: u128,
    pub exact_memory_budget: usize,
    pub exact_within_budget: bool,
}

pub fn estimate_cost(config: &RunConfig) -> Result<CostEstimate> {
    let atom = config.atom()?;
    let cavity = config.cavity()?;
    let schedule = config.plan(&cavity).schedule(&cavity)?;
    let exact = config.exact_config();
    let dimension = estimate_dimension(&atom, &cavity, &exact);
    Ok(CostEstimate {
        modes: cavity.n_modes(),
        coupled_modes: cavity.coupled_modes().len(),
        time_steps: schedule.n_steps,
        trajectories: config.mtef.n_traj,
        trajectory_steps: config.mtef.n_traj as u128 * schedule.n_steps as u128,
        exact_dimension: dimension,
        exact_memory_budget: exact.memory_budget,
        exact_within_budget: dimension <= exact.memory_budget as u128,
    })
}
