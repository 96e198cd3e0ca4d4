//! Monte Carlo sampling of the zero-temperature vacuum Wigner function
//!
//! ```text
//! ρ_W(Q, P) = Π_α (1/π) exp(−P_α²/ω_α − ω_α Q_α²)
//! ```
//!
//! so Q_α ~ N(0, 1/(2ω_α)) and P_α ~ N(0, ω_α/2). Every (trajectory, mode)
//! pair owns its own ChaCha substream of the master seed, which makes the
//! samples independent of evaluation order and worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::CavityModel;

/// A point (Q, P) in the classical phase space of the field.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn zeros(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            p: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Trajectory count, master seed and per-trajectory weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    n_traj: usize,
    seed: u64,
    weights: Option<Vec<f64>>,
}

impl EnsembleSpec {
    /// Uniform weights 1/n_traj.
    pub fn uniform(n_traj: usize, seed: u64) -> Result<Self> {
        if n_traj == 0 {
            return Err(Error::Config("n_traj must be at least 1".into()));
        }
        Ok(Self {
            n_traj,
            seed,
            weights: None,
        })
    }

    /// Explicit importance weights; they must be nonnegative and sum to 1.
    pub fn weighted(weights: Vec<f64>, seed: u64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("weights must not be empty".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights must sum to 1, got {total}")));
        }
        Ok(Self {
            n_traj: weights.len(),
            seed,
            weights: Some(weights),
        })
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weight(&self, j: usize) -> f64 {
        match &self.weights {
            Some(w) => w[j],
            None => 1.0 / self.n_traj as f64,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Random stream dedicated to one (trajectory, mode) pair.
pub fn mode_stream(seed: u64, trajectory: usize, mode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trajectory as u64);
    // 2^24 words per mode is far more than the two normals drawn from it.
    rng.set_word_pos((mode as u128) << 24);
    rng
}

/// Initial field coordinates of trajectory `index`.
pub fn sample_vacuum(cavity: &CavityModel, spec: &EnsembleSpec, index: usize) -> Result<PhasePoint> {
    if index >= spec.n_traj() {
        return Err(Error::Domain(format!(
            "trajectory index {index} out of range (n_traj = {})",
            spec.n_traj()
        )));
    }
    let mut point = PhasePoint::zeros(cavity.n_modes());
    for (k, mode) in cavity.modes().iter().enumerate() {
        let mut rng = mode_stream(spec.seed(), index, k);
        let zq: f64 = StandardNormal.sample(&mut rng);
        let zp: f64 = StandardNormal.sample(&mut rng);
        point.q[k] = zq * (0.5 / mode.frequency).sqrt();
        point.p[k] = zp * (0.5 * mode.frequency).sqrt();
    }
    Ok(point)
}
