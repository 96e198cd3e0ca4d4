//! Atom, cavity and coupling parameters of the total Hamiltonian
//!
//! ```text
//! H = Σ_k ε_k |k⟩⟨k| + ½ Σ_α (P_α² + ω_α² Q_α²) + Σ_α Σ_kl μ_kl ω_α λ_α Q_α |k⟩⟨l|
//! ```
//!
//! The quadratic dipole self-energy is not part of the model.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default cavity length (bohr).
pub const DEFAULT_LENGTH: f64 = 2.362e5;
/// Default number of cavity modes 2N.
pub const DEFAULT_MODES: usize = 400;
/// Coupling amplitude λ of the modes with an antinode at the atom.
pub const DEFAULT_COUPLING: f64 = 0.0103;

/// Physical constants in atomic units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub hbar: f64,
    pub c: f64,
    pub eps0: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            c: 137.035999,
            eps0: 1.0 / (4.0 * PI),
        }
    }
}

impl Constants {
    pub fn new(c: f64, eps0: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("speed of light must be positive, got {c}")));
        }
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(Error::Config(format!("eps0 must be positive, got {eps0}")));
        }
        Ok(Self { hbar: 1.0, c, eps0 })
    }
}

/// An m-level atom: energies ε_k and a real symmetric dipole matrix μ_kl.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomModel {
    energies: Vec<f64>,
    /// row-major m×m
    dipole: Vec<f64>,
}

impl AtomModel {
    pub fn new(energies: Vec<f64>, dipole: Vec<Vec<f64>>) -> Result<Self> {
        let m = energies.len();
        if m < 2 {
            return Err(Error::Config(format!("atom needs at least 2 levels, got {m}")));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config("atomic energies must be finite".into()));
        }
        if energies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("atomic energies must be strictly increasing".into()));
        }
        if dipole.len() != m || dipole.iter().any(|row| row.len() != m) {
            return Err(Error::Config(format!("dipole matrix must be {m}x{m}")));
        }
        let flat: Vec<f64> = dipole.into_iter().flatten().collect();
        if flat.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("dipole matrix entries must be finite".into()));
        }
        for k in 0..m {
            for l in 0..k {
                if flat[k * m + l] != flat[l * m + k] {
                    return Err(Error::Config(format!(
                        "dipole matrix must be symmetric (entries ({},{}) and ({},{}) differ)",
                        k + 1,
                        l + 1,
                        l + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(Self { energies, dipole: flat })
    }

    /// The 1D soft-Coulomb hydrogen parameterization with 2 or 3 levels.
    pub fn paper_default(levels: usize) -> Result<Self> {
        match levels {
            2 => Self::new(
                vec![-0.6738, -0.2798],
                vec![vec![0.0, 1.034], vec![1.034, 0.0]],
            ),
            3 => Self::new(
                vec![-0.6738, -0.2798, -0.1547],
                vec![
                    vec![0.0, 1.034, 0.0],
                    vec![1.034, 0.0, -2.536],
                    vec![0.0, -2.536, 0.0],
                ],
            ),
            other => Err(Error::Config(format!(
                "no default atom with {other} levels (supported: 2, 3)"
            ))),
        }
    }

    pub fn levels(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn dipole(&self, k: usize, l: usize) -> f64 {
        self.dipole[k * self.levels() + l]
    }

    /// Row-major dipole matrix.
    pub fn dipole_matrix(&self) -> &[f64] {
        &self.dipole
    }

    /// Index of the highest level, the initial state of the emission runs.
    pub fn top_level(&self) -> usize {
        self.levels() - 1
    }
}

/// A single cavity mode. `index` is α, which fixes the spatial profile
/// sin(απr/L); `frequency` and `coupling` are ω_α and λ_α(r_A).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub index: usize,
    pub frequency: f64,
    pub coupling: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CavityModel {
    length: f64,
    atom_position: f64,
    modes: Vec<Mode>,
    constants: Constants,
}

/// sin(πx), exactly zero for integer x.
pub(crate) fn sin_pi(x: f64) -> f64 {
    if x.fract() == 0.0 {
        0.0
    } else {
        (PI * x).sin()
    }
}

impl CavityModel {
    /// Standard cavity: ω_α = 2πcα/L and λ_α = λ₀ sin(απ r_A/L) for α = 1..n_modes.
    pub fn build(
        n_modes: usize,
        length: f64,
        atom_position: f64,
        coupling: f64,
        constants: Constants,
    ) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Config("cavity needs at least one mode".into()));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Config(format!("cavity length must be positive, got {length}")));
        }
        if !coupling.is_finite() {
            return Err(Error::Config("coupling must be finite".into()));
        }
        let shape = atom_position / length;
        let modes = (1..=n_modes)
            .map(|alpha| Mode {
                index: alpha,
                frequency: 2.0 * PI * constants.hbar * constants.c * alpha as f64 / length,
                coupling: coupling * sin_pi(alpha as f64 * shape),
            })
            .collect();
        Self::from_modes(length, atom_position, modes, constants)
    }

    /// Paper-default cavity: 400 modes, L = 2.362e5, atom at L/2.
    pub fn paper_default() -> Self {
        Self::build(
            DEFAULT_MODES,
            DEFAULT_LENGTH,
            DEFAULT_LENGTH / 2.0,
            DEFAULT_COUPLING,
            Constants::default(),
        )
        .expect("default cavity is valid")
    }

    /// Cavity with an explicit mode list, e.g. a single resonant mode.
    pub fn from_modes(
        length: f64,
        atom_position: f64,
        modes: Vec<Mode>,
        constants: Constants,
    ) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Config(format!("cavity length must be positive, got {length}")));
        }
        if !(atom_position > 0.0 && atom_position < length) {
            return Err(Error::Config(format!(
                "atom position must lie strictly inside (0, {length}), got {atom_position}"
            )));
        }
        if modes.is_empty() {
            return Err(Error::Config("cavity needs at least one mode".into()));
        }
        for m in &modes {
            if !(m.frequency > 0.0 && m.frequency.is_finite()) {
                return Err(Error::Config(format!(
                    "mode {} has non-positive frequency {}",
                    m.index, m.frequency
                )));
            }
            if !m.coupling.is_finite() {
                return Err(Error::Config(format!("mode {} has non-finite coupling", m.index)));
            }
        }
        Ok(Self {
            length,
            atom_position,
            modes,
            constants,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn atom_position(&self) -> f64 {
        self.atom_position
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.frequency)
    }

    /// Positions (into `modes()`) of the modes with nonzero coupling.
    pub fn coupled_modes(&self) -> Vec<usize> {
        (0..self.modes.len())
            .filter(|&k| self.modes[k].coupling != 0.0)
            .collect()
    }

    /// Same cavity with every coupling set to zero.
    pub fn decoupled(&self) -> Self {
        let mut out = self.clone();
        for m in &mut out.modes {
            m.coupling = 0.0;
        }
        out
    }

    /// Same cavity with every mode function multiplied by `k` (through ε₀ → ε₀/k²).
    pub fn with_eps0(&self, eps0: f64) -> Result<Self> {
        let mut out = self.clone();
        out.constants = Constants::new(self.constants.c, eps0)?;
        Ok(out)
    }

    pub(crate) fn zeta(&self, mode: &Mode, r: f64) -> f64 {
        let amp = (self.constants.hbar * mode.frequency / (self.constants.eps0 * self.length)).sqrt();
        amp * sin_pi(mode.index as f64 * r / self.length)
    }

    /// Mode function ζ_α(r) = √(ħω_α/(ε₀L)) sin(απr/L); `alpha` is 1-based
    /// position in the mode list.
    pub fn mode_function(&self, alpha: usize, r: f64) -> Result<f64> {
        if alpha == 0 || alpha > self.modes.len() {
            return Err(Error::Domain(format!(
                "mode {alpha} out of range 1..={}",
                self.modes.len()
            )));
        }
        self.check_position(r)?;
        Ok(self.zeta(&self.modes[alpha - 1], r))
    }

    pub(crate) fn check_position(&self, r: f64) -> Result<()> {
        if !(0.0..=self.length).contains(&r) {
            return Err(Error::Domain(format!(
                "position {r} outside the cavity [0, {}]",
                self.length
            )));
        }
        Ok(())
    }

    /// Scalar field seen by the atom, Σ_α ω_α λ_α Q_α.
    pub fn field_at_atom(&self, q: &[f64]) -> f64 {
        self.modes
            .iter()
            .zip(q)
            .map(|(m, q)| m.frequency * m.coupling * q)
            .sum()
    }

    /// Uniform grid of `points` positions covering [0, L] including the walls.
    pub fn uniform_grid(&self, points: usize) -> Vec<f64> {
        match points {
            0 => Vec::new(),
            1 => vec![self.length / 2.0],
            n => (0..n)
                .map(|i| self.length * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

/// Wigner-transformed coupling Σ_α ω_α λ_α Q_α μ at a phase point (row-major m×m).
pub fn interaction_matrix(atom: &AtomModel, cavity: &CavityModel, q: &[f64]) -> Result<Vec<f64>> {
    if q.len() != cavity.n_modes() {
        return Err(Error::Domain(format!(
            "expected {} field coordinates, got {}",
            cavity.n_modes(),
            q.len()
        )));
    }
    let field = cavity.field_at_atom(q);
    Ok(atom.dipole_matrix().iter().map(|mu| field * mu).collect())
}
